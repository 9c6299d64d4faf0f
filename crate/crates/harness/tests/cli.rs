use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdrfuse::checkpoint::Checkpoint;
use hdrfuse::infer::preview;
use hdrfuse_core::io::{read_image, read_raw};
use hdrfuse_core::metrics::{parse_table, REPORT_COLUMNS};

const TINY: &str = "\
model.c = 4
model.c_prime = 4
model.k = 1
optim.max_steps = 3
optim.batch_size = 1
optim.log_every = 1
data.patch = 16
data.synthetic.windows = 2
data.synthetic.height = 16
data.synthetic.width = 16
data.synthetic.frames = 5
data.synthetic.motion = 1
paths.checkpoint_dir = ckpt
";

fn hdrfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdrfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.conf");
        std::fs::write(&config, TINY).unwrap();
        Self { _dir: dir, root, config }
    }

    fn gen_data(&self) -> PathBuf {
        let out = self.root.join("data");
        let printed = ok(hdrfuse(&["gen-data", "--config", s(&self.config), "--out", s(&out)]));
        PathBuf::from(printed.trim())
    }

    fn train(&self) -> PathBuf {
        let printed = ok(hdrfuse(&["train", "--config", s(&self.config), "--seed", "4"]));
        PathBuf::from(printed.trim())
    }
}

fn sorted_names(dir: &Path, prefix: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(prefix))
        .collect();
    v.sort();
    v
}

#[test]
fn train_eval_infer_plot_round_trip() {
    let ws = Workspace::new();
    let manifest = ws.gen_data();
    assert!(manifest.is_file());
    let inputs = ws.root.join("data/window_000/inputs");
    assert_eq!(sorted_names(&inputs, "mid_").len(), 5);
    assert_eq!(sorted_names(&inputs, "low_"), vec!["low_0002.png"]);

    let ckpt = ws.train();
    assert!(ckpt.is_file());
    let log = std::fs::read_to_string(ws.root.join("ckpt/train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    // eval: fixed header, one row per window plus the mean row
    let report_dir = ws.root.join("report");
    ok(hdrfuse(&["eval", "--ckpt", s(&ckpt), "--data", s(&manifest), "--out", s(&report_dir)]));
    let text = std::fs::read_to_string(report_dir.join("report.tsv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join("\t"));
    let rows = parse_table(&text).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].sequence, "mean");
    assert!(rows[..2].iter().all(|r| r.psnr_trace.len() == 5));
    assert!(rows.iter().all(|r| r.psnr_t.is_finite()));
    assert!(report_dir.join("summary.txt").is_file());

    // infer: index-matched outputs, previews within one 8-bit step of tau(output)
    let out = ws.root.join("infer");
    ok(hdrfuse(&["infer", "--ckpt", s(&ckpt), "--frames", s(&inputs), "--out", s(&out), "--format", "lcat"]));
    let hdrs = sorted_names(&out, "hdr_");
    let previews = sorted_names(&out, "preview_");
    let expected: Vec<String> = (0..5).map(|i| format!("hdr_{i:04}.lcat")).collect();
    assert_eq!(hdrs, expected);
    assert_eq!(previews.len(), 5);
    let ck = Checkpoint::load(&ckpt).unwrap();
    for (h, p) in hdrs.iter().zip(&previews) {
        let x = read_raw(&out.join(h)).unwrap();
        let want = preview(&x, &ck);
        let got = read_image(&out.join(p)).unwrap();
        let err = want.max_abs_diff(&got);
        assert!(err <= 1.0 / 255.0, "{p}: preview off by {err}");
    }

    // deterministic for a fixed checkpoint
    let again = ws.root.join("infer2");
    ok(hdrfuse(&["infer", "--ckpt", s(&ckpt), "--frames", s(&inputs), "--out", s(&again), "--format", "lcat"]));
    for h in &hdrs {
        assert_eq!(std::fs::read(out.join(h)).unwrap(), std::fs::read(again.join(h)).unwrap());
    }

    // plot: one point per report, traces of length T
    let plots = ws.root.join("plots");
    let pattern = format!("{}/*/report.tsv", ws.root.display());
    ok(hdrfuse(&["plot", "--reports", &pattern, "--out", s(&plots)]));
    assert!(std::fs::metadata(plots.join("scatter.png")).unwrap().len() > 0);
    assert!(std::fs::metadata(plots.join("trace.png")).unwrap().len() > 0);
    let scatter = std::fs::read_to_string(plots.join("scatter.tsv")).unwrap();
    assert_eq!(scatter.lines().count(), 2);
    let trace = std::fs::read_to_string(plots.join("trace.tsv")).unwrap();
    let window0 = trace.lines().filter(|l| l.starts_with("window_000\t")).count();
    assert_eq!(window0, 5);
}

#[test]
fn hdr_output_is_the_default() {
    let ws = Workspace::new();
    ws.gen_data();
    let ckpt = ws.train();
    let out = ws.root.join("infer");
    let inputs = ws.root.join("data/window_001/inputs");
    ok(hdrfuse(&["infer", "--ckpt", s(&ckpt), "--frames", s(&inputs), "--out", s(&out)]));
    assert_eq!(sorted_names(&out, "hdr_").len(), 5);
    assert!(sorted_names(&out, "hdr_").iter().all(|n| n.ends_with(".hdr")));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let ws = Workspace::new();
    let missing = ws.root.join("nothing.ckpt");
    let out = hdrfuse(&["infer", "--ckpt", s(&missing), "--frames", s(&ws.root), "--out", s(&ws.root)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing.ckpt"));

    let out = hdrfuse(&["plot", "--reports", &format!("{}/none/*.tsv", ws.root.display()), "--out", s(&ws.root)]);
    assert!(!out.status.success());

    let out = hdrfuse(&["train", "--config", s(&ws.config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("optim.seed"));

    ws.gen_data();
    let ckpt = ws.train();
    let empty = ws.root.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = hdrfuse(&["infer", "--ckpt", s(&ckpt), "--frames", s(&empty), "--out", s(&ws.root.join("o"))]);
    assert!(!out.status.success());
}
