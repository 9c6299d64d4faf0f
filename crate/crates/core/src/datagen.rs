//! Synthetic capture: rendering backbone and anchor LDR frames from linear
//! HDR windows, training-sample assembly with joint crop and rotation,
//! procedural HDR scenes, and frame-directory ingestion.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{simulate_exposure, CameraResponse, ExposureSet, LdrFrame, LinearHdrFrame, NoiseLevels};
use crate::io::{read_frame, FrameFormat};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptureMode {
    /// Medium-exposure backbone plus sparse low/high anchors.
    FixedReference,
    /// Low, mid, high exposures cycling frame by frame.
    Alternating,
}

impl FromStr for CaptureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_reference" => Ok(Self::FixedReference),
            "alternating" => Ok(Self::Alternating),
            other => Err(Error::Argument(format!(
                "unknown capture mode {other:?} (expected fixed_reference or alternating)"
            ))),
        }
    }
}

impl fmt::Display for CaptureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FixedReference => "fixed_reference",
            Self::Alternating => "alternating",
        })
    }
}

/// A run of consecutive backbone frames sharing one anchor pair.
/// Indices are absolute frame positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub anchor: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSchedule {
    pub mode: CaptureMode,
    /// Backbone window length `T`.
    pub frames: usize,
    pub anchors_per_window: usize,
    /// 1-based position of the anchor pair inside the window.
    pub anchor_timestamp: usize,
    pub exposures: ExposureSet,
}

impl CaptureSchedule {
    /// `anchor_timestamp = None` selects the centre frame.
    pub fn new(
        mode: CaptureMode,
        frames: usize,
        anchors_per_window: usize,
        anchor_timestamp: Option<usize>,
        exposures: ExposureSet,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Argument("window length must be at least 1".into()));
        }
        if anchors_per_window == 0 || anchors_per_window > frames {
            return Err(Error::Argument(format!(
                "anchors per window must be in 1..={frames}, got {anchors_per_window}"
            )));
        }
        let anchor_timestamp = anchor_timestamp.unwrap_or(frames.div_ceil(2));
        if anchor_timestamp == 0 || anchor_timestamp > frames {
            return Err(Error::Argument(format!(
                "anchor timestamp must be in 1..={frames}, got {anchor_timestamp}"
            )));
        }
        exposures.validate()?;
        Ok(Self {
            mode,
            frames,
            anchors_per_window,
            anchor_timestamp,
            exposures,
        })
    }

    /// Exposure of frame `t` (0-based) in alternating mode.
    pub fn alternating_exposure(&self, t: usize) -> f64 {
        match t % 3 {
            0 => self.exposures.low,
            1 => self.exposures.mid,
            _ => self.exposures.high,
        }
    }

    /// Split `total` frames into windows of `T` (the last may be shorter),
    /// each divided into anchor segments.
    pub fn plan_windows(&self, total: usize) -> Vec<Vec<Segment>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < total {
            let len = self.frames.min(total - start);
            out.push(self.window_segments(start, len));
            start += len;
        }
        out
    }

    fn window_segments(&self, start: usize, len: usize) -> Vec<Segment> {
        let n = self.anchors_per_window.min(len);
        if n == 1 {
            let anchor = start + (self.anchor_timestamp - 1).min(len - 1);
            return vec![Segment { start, len, anchor }];
        }
        let base = len / n;
        let extra = len % n;
        let mut segs = Vec::with_capacity(n);
        let mut s = start;
        for i in 0..n {
            let l = base + usize::from(i < extra);
            segs.push(Segment {
                start: s,
                len: l,
                anchor: s + (l - 1) / 2,
            });
            s += l;
        }
        segs
    }
}

impl Default for CaptureSchedule {
    fn default() -> Self {
        Self::new(CaptureMode::FixedReference, 5, 1, None, ExposureSet::default()).expect("defaults are valid")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPair {
    pub low: LdrFrame,
    pub high: LdrFrame,
}

/// Backbone and one anchor pair rendered from a ground-truth window.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedWindow {
    pub backbone: Vec<LdrFrame>,
    pub anchors: AnchorPair,
    pub ground_truth: Vec<LinearHdrFrame>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub backbone: Vec<LdrFrame>,
    pub pair_a: AnchorPair,
    pub pair_b: AnchorPair,
    pub ground_truth: Vec<LinearHdrFrame>,
    /// Window start, crop origin `(y, x)` and quarter turns applied.
    pub start: usize,
    pub crop: (usize, usize),
    pub rotation: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderConfig {
    pub noise: NoiseLevels,
    pub response: CameraResponse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub render: RenderConfig,
    /// Square crop side; `None` keeps the full frame.
    pub patch: Option<usize>,
    pub rotate: bool,
    /// 1-based timestamp of the second anchor pair.
    pub pair_b_timestamp: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            patch: Some(64),
            rotate: true,
            pair_b_timestamp: 1,
        }
    }
}

const STREAM_BACKBONE: u64 = 1;
const STREAM_LOW: u64 = 2;
const STREAM_HIGH: u64 = 3;
const STREAM_ALTERNATING: u64 = 4;

/// Independent noise seed per (run seed, stream, frame index).
fn frame_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.random()
}

/// Low and high exposures of `gt`; `index` is the frame's 0-based position
/// and selects the noise stream.
pub fn render_anchor_pair(
    gt: &LinearHdrFrame,
    index: usize,
    sched: &CaptureSchedule,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<AnchorPair> {
    let e = &sched.exposures;
    Ok(AnchorPair {
        low: simulate_exposure(gt, e.low, &cfg.response, cfg.noise.low, frame_seed(seed, STREAM_LOW, index))?,
        high: simulate_exposure(gt, e.high, &cfg.response, cfg.noise.high, frame_seed(seed, STREAM_HIGH, index))?,
    })
}

/// Render the mid-exposure backbone for every frame and the anchor pair at
/// the schedule's anchor timestamp.
pub fn render_ldr_sequence(
    gt: &[LinearHdrFrame],
    sched: &CaptureSchedule,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderedWindow> {
    if gt.len() != sched.frames {
        return Err(Error::Argument(format!(
            "window has {} frames, schedule expects {}",
            gt.len(),
            sched.frames
        )));
    }
    let backbone = gt
        .iter()
        .enumerate()
        .map(|(t, h)| {
            simulate_exposure(
                h,
                sched.exposures.mid,
                &cfg.response,
                cfg.noise.mid,
                frame_seed(seed, STREAM_BACKBONE, t),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let ts = sched.anchor_timestamp;
    let anchors = render_anchor_pair(&gt[ts - 1], ts - 1, sched, cfg, seed)?;
    Ok(RenderedWindow {
        backbone,
        anchors,
        ground_truth: gt.to_vec(),
    })
}

/// A fixed-reference capture of an arbitrary-length sequence, split into
/// model windows with one anchor pair per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturedSequence {
    pub backbone: Vec<LdrFrame>,
    pub windows: Vec<Vec<Segment>>,
    /// `anchors[w][s]` belongs to `windows[w][s]`.
    pub anchors: Vec<Vec<AnchorPair>>,
}

pub fn capture_sequence(
    gt: &[LinearHdrFrame],
    sched: &CaptureSchedule,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<CapturedSequence> {
    let backbone = gt
        .iter()
        .enumerate()
        .map(|(t, h)| {
            simulate_exposure(
                h,
                sched.exposures.mid,
                &cfg.response,
                cfg.noise.mid,
                frame_seed(seed, STREAM_BACKBONE, t),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let windows = sched.plan_windows(gt.len());
    let anchors = windows
        .iter()
        .map(|w| {
            w.iter()
                .map(|s| render_anchor_pair(&gt[s.anchor], s.anchor, sched, cfg, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CapturedSequence {
        backbone,
        windows,
        anchors,
    })
}

/// Alternating low/mid/high capture of an arbitrary-length sequence.
pub fn render_alternating(
    gt: &[LinearHdrFrame],
    sched: &CaptureSchedule,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Vec<LdrFrame>> {
    gt.iter()
        .enumerate()
        .map(|(t, h)| {
            let sigma = match t % 3 {
                0 => cfg.noise.low,
                1 => cfg.noise.mid,
                _ => cfg.noise.high,
            };
            simulate_exposure(
                h,
                sched.alternating_exposure(t),
                &cfg.response,
                sigma,
                frame_seed(seed, STREAM_ALTERNATING, t),
            )
        })
        .collect()
}

/// Crop `[c, h, w]` to `[c, ph, pw]` at `(y0, x0)`.
pub fn crop(x: &Tensor, y0: usize, x0: usize, ph: usize, pw: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if y0 + ph > h || x0 + pw > w {
        return Err(Error::Shape(format!(
            "crop {ph}x{pw} at ({y0}, {x0}) exceeds frame {h}x{w}"
        )));
    }
    let mut data = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        let plane = x.channel(ch);
        for y in y0..y0 + ph {
            data.extend_from_slice(&plane[y * w + x0..y * w + x0 + pw]);
        }
    }
    Tensor::from_vec(&[c, ph, pw], data)
}

/// Rotate counter-clockwise by `quarter_turns * 90` degrees.
pub fn rotate(x: &Tensor, quarter_turns: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let k = quarter_turns % 4;
    let (oh, ow) = if k % 2 == 0 { (h, w) } else { (w, h) };
    let mut data = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let (sy, sx) = rotated_source(y, xx, h, w, k);
                dst[y * ow + xx] = src[sy * w + sx];
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], data)
}

/// Source coordinate in an `h x w` image of output pixel `(y, x)` after `k` turns.
fn rotated_source(y: usize, x: usize, h: usize, w: usize, k: usize) -> (usize, usize) {
    match k {
        0 => (y, x),
        1 => (x, w - 1 - y),
        2 => (h - 1 - y, w - 1 - x),
        _ => (h - 1 - x, y),
    }
}

/// Where source pixel `(y, x)` of an `h x w` image lands after `k` turns.
pub fn rotated_position(y: usize, x: usize, h: usize, w: usize, quarter_turns: usize) -> (usize, usize) {
    match quarter_turns % 4 {
        0 => (y, x),
        1 => (w - 1 - x, y),
        2 => (h - 1 - y, w - 1 - x),
        _ => (x, h - 1 - y),
    }
}

fn transform_ldr(y: &LdrFrame, f: &impl Fn(&Tensor) -> Result<Tensor>) -> Result<LdrFrame> {
    LdrFrame::new(f(y.pixels())?, y.exposure())
}

/// Assemble a training sample: pick a `T`-frame sub-window, crop and rotate
/// jointly, render the backbone and anchor pair (a) at the schedule's
/// timestamp and pair (b) at `cfg.pair_b_timestamp`.
pub fn make_training_sample(
    window: &[LinearHdrFrame],
    sched: &CaptureSchedule,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<TrainingSample> {
    let t = sched.frames;
    if window.len() < t {
        return Err(Error::Argument(format!(
            "window has {} frames, need at least {t}",
            window.len()
        )));
    }
    if cfg.pair_b_timestamp == 0 || cfg.pair_b_timestamp > t {
        return Err(Error::Argument(format!(
            "second anchor timestamp must be in 1..={t}, got {}",
            cfg.pair_b_timestamp
        )));
    }
    let (h, w) = (window[0].height(), window[0].width());
    if window.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(Error::Shape("window frames have mixed resolutions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=window.len() - t);
    let (ph, pw) = match cfg.patch {
        Some(p) if p > h || p > w => {
            return Err(Error::Shape(format!("crop {p} does not fit frames of {h}x{w}")));
        }
        Some(p) => (p, p),
        None => (h, w),
    };
    let y0 = rng.random_range(0..=h - ph);
    let x0 = rng.random_range(0..=w - pw);
    let rotation = if cfg.rotate { rng.random_range(0..4) } else { 0 };
    let render_seed: u64 = rng.random();

    let geometry = |x: &Tensor| rotate(&crop(x, y0, x0, ph, pw)?, rotation);
    let gt = window[start..start + t]
        .iter()
        .map(|f| LinearHdrFrame::new(geometry(f.pixels())?))
        .collect::<Result<Vec<_>>>()?;
    let rendered = render_ldr_sequence(&gt, sched, &cfg.render, render_seed)?;
    let tb = cfg.pair_b_timestamp;
    let pair_b = render_anchor_pair(&gt[tb - 1], tb - 1, sched, &cfg.render, render_seed)?;
    Ok(TrainingSample {
        backbone: rendered.backbone,
        pair_a: rendered.anchors,
        pair_b,
        ground_truth: gt,
        start,
        crop: (y0, x0),
        rotation,
    })
}

/// Crop and rotate an already rendered LDR frame with the sample geometry.
pub fn apply_geometry(y: &LdrFrame, origin: (usize, usize), size: (usize, usize), rotation: usize) -> Result<LdrFrame> {
    transform_ldr(y, &|x| rotate(&crop(x, origin.0, origin.1, size.0, size.1)?, rotation))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Object speed in pixels per frame; zero gives a static scene.
    pub motion: f64,
    pub objects: usize,
    /// Peak radiance of the brightest highlight.
    pub peak: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 5,
            motion: 1.5,
            objects: 4,
            peak: 12.0,
        }
    }
}

struct Disc {
    cy: f64,
    cx: f64,
    vy: f64,
    vx: f64,
    radius: f64,
    colour: [f64; 3],
}

/// Procedural linear HDR sequence: a textured, slowly panning background
/// with a deep shadow band and a bright highlight, plus moving discs.
pub fn synthetic_scene(cfg: &SceneConfig, seed: u64) -> Result<Vec<LinearHdrFrame>> {
    if cfg.height == 0 || cfg.width == 0 || cfg.frames == 0 {
        return Err(Error::Argument("scene dimensions must be positive".into()));
    }
    if !(cfg.motion >= 0.0 && cfg.peak > 0.0) {
        return Err(Error::Argument("scene motion must be >= 0 and peak > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let freq: [f64; 2] = [rng.random_range(0.15..0.4), rng.random_range(0.15..0.4)];
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let pan: (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let light = (rng.random_range(0.15 * h..0.4 * h), rng.random_range(0.2 * w..0.8 * w), 0.12 * h.min(w));
    let discs: Vec<Disc> = (0..cfg.objects)
        .map(|i| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let speed = cfg.motion * rng.random_range(0.5..1.0);
            let bright = if i == 0 { cfg.peak * 0.5 } else { rng.random_range(0.1..2.0) };
            Disc {
                cy: rng.random_range(0.0..h),
                cx: rng.random_range(0.0..w),
                vy: speed * angle.sin(),
                vx: speed * angle.cos(),
                radius: rng.random_range(0.08..0.2) * h.min(w),
                colour: std::array::from_fn(|_| bright * rng.random_range(0.4..1.0)),
            }
        })
        .collect();

    let n = cfg.height * cfg.width;
    (0..cfg.frames)
        .map(|t| {
            let tf = t as f64;
            let (oy, ox) = (pan.0 * cfg.motion * tf, pan.1 * cfg.motion * tf);
            let mut data = vec![0.0; 3 * n];
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let (sy, sx) = (y as f64 + oy, x as f64 + ox);
                    let ramp = 0.15 + 0.6 * sx / w;
                    let texture = 1.0 + 0.35 * (freq[0] * sx + phase).sin() * (freq[1] * sy).cos();
                    let shadow = if sy > 0.75 * h { 0.04 } else { 1.0 };
                    let d2 = ((sy - light.0).powi(2) + (sx - light.1).powi(2)) / (light.2 * light.2);
                    let glow = cfg.peak * (-d2).exp();
                    let mut px: [f64; 3] = std::array::from_fn(|c| tint[c] * ramp * texture * shadow + glow);
                    for d in &discs {
                        let (cy, cx) = (d.cy + d.vy * tf, d.cx + d.vx * tf);
                        if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= d.radius * d.radius {
                            px = d.colour;
                        }
                    }
                    for c in 0..3 {
                        data[c * n + y * cfg.width + x] = px[c].max(0.0);
                    }
                }
            }
            LinearHdrFrame::new(Tensor::from_vec(&[3, cfg.height, cfg.width], data)?)
        })
        .collect()
}

/// Supported frame files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && FrameFormat::from_path(&path).is_some() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Decode a linear frame: PNG is inverse-gamma'd, `.hdr`/raw are read as is.
pub fn load_linear_frame(path: &Path, response: &CameraResponse) -> Result<LinearHdrFrame> {
    let x = read_frame(path)?;
    let x = if FrameFormat::from_path(path) == Some(FrameFormat::Png) {
        x.map(|v| response.decode(v))
    } else {
        x
    };
    LinearHdrFrame::new(x).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load the frames of a directory (optionally a sub-range of the sorted list).
pub fn load_video_frames(
    dir: &Path,
    range: Option<Range<usize>>,
    response: &CameraResponse,
) -> Result<Vec<LinearHdrFrame>> {
    let files = list_frames(dir)?;
    let selected = match range {
        Some(r) if r.end > files.len() || r.start > r.end => {
            return Err(Error::Argument(format!(
                "frame range {r:?} out of bounds for {} files in {}",
                files.len(),
                dir.display()
            )));
        }
        Some(r) => &files[r],
        None => &files[..],
    };
    let frames = selected
        .iter()
        .map(|p| load_linear_frame(p, response))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = frames.first() {
        let shape = first.pixels().shape();
        if let Some((i, _)) = frames.iter().enumerate().find(|(_, f)| f.pixels().shape() != shape) {
            return Err(Error::Shape(format!(
                "mixed resolutions in {}: {} differs from {:?}",
                dir.display(),
                selected[i].display(),
                shape
            )));
        }
    }
    Ok(frames)
}

/// Window directories listed one per line; blank lines and `#` comments are
/// skipped and relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}
