use std::path::{Path, PathBuf};

use alignseg::cli::{main_with_args, read_segmented, RunConfig};
use alignseg::corpus::UnitSplitter;
use alignseg::evaluation::{parse_report, random_segmentation, MetricsReport};

struct Files {
    dir: tempfile::TempDir,
}

impl Files {
    fn new() -> Self {
        Files {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["alignseg"];
    v.extend_from_slice(args);
    main_with_args(v)
}

const SMALL: [&str; 12] = [
    "--set", "embedding_dim=12",
    "--set", "encoder_hidden=12",
    "--set", "decoder_hidden=12",
    "--set", "attention_hidden=12",
    "--set", "batch_size=16",
    "--set", "wait=10",
];

fn synth(f: &Files) {
    let code = run(&[
        "synth", "--sentences", "60", "--vocab", "8", "--seed", "3", "--max-words", "4",
        "--source-out", &f.arg("src"), "--gold-out", &f.arg("gold"), "--target-out", &f.arg("tgt"),
    ]);
    assert_eq!(code, 0);
}

fn train(f: &Files, mode: &str, epochs: &str, model: &str, extra: &[&str]) -> i32 {
    let (src, gold, m) = (f.arg("src"), f.arg("gold"), f.arg(model));
    let mut args = vec!["train", "--source", &src, "--target", &gold, "--gold", "--mode", mode, "--epochs", epochs, "--model", &m];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn train_segment_evaluate() {
    let f = Files::new();
    synth(&f);
    let echo = f.arg("echo.cfg");
    assert_eq!(train(&f, "base", "200", "m1", &["--echo", &echo]), 0);
    assert_eq!(train(&f, "base", "200", "m2", &[]), 0);
    assert_eq!(read(&f.path("m1")), read(&f.path("m2")));
    assert_eq!(read(&f.path("m1.log")), read(&f.path("m2.log")));

    let log = read(&f.path("m1.log"));
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "epoch\tnll\taux\tlambda\ttotal");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split('\t').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[3] == 0.0));
    assert!(rows[199][1] < rows[0][1]);

    // the echo reloads to the run's settings
    let cfg = RunConfig::load(Path::new(&echo)).unwrap();
    assert_eq!(cfg.hp.epochs, 200);
    assert_eq!(cfg.hp.embedding_dim, 12);
    assert!(cfg.gold);
    assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);

    // segmenting the unsegmented or the gold target gives the same output
    for (target, out) in [("tgt", "seg1"), ("gold", "seg2")] {
        let (src, tgt, m, o, d) = (f.arg("src"), f.arg(target), f.arg("m1"), f.arg(out), f.arg(&format!("{out}.att")));
        let mut args = vec!["segment", "--source", &src, "--target", &tgt, "--model", &m, "--output", &o, "--attention-dump", &d];
        if target == "gold" {
            args.push("--gold");
        }
        assert_eq!(run(&args), 0);
    }
    assert_eq!(read(&f.path("seg1")), read(&f.path("seg2")));
    assert_eq!(read(&f.path("seg1.att")), read(&f.path("seg2.att")));

    let (seg, gold, rep, att, src) = (f.arg("seg1"), f.arg("gold"), f.arg("report"), f.arg("seg1.att"), f.arg("src"));
    assert_eq!(
        run(&["evaluate", "--pred", &seg, "--gold", &gold, "--report", &rep, "--attention", &att, "--source", &src]),
        0
    );
    let report = parse_report(&read(&f.path("report"))).unwrap();
    assert!(report.contains_key("correlation"));

    // a trained model beats coin-flip boundaries on the same corpus
    let g = read_segmented(&f.path("gold"), &UnitSplitter::Chars).unwrap();
    let units: Vec<Vec<String>> = g.iter().map(|s| s.units.clone()).collect();
    let random = MetricsReport::compute(&random_segmentation(&units, 5), &g).unwrap();
    assert!(report["BF"] > 100.0 * random.boundary.f, "{} vs {}", report["BF"], random.boundary.f);

    assert_eq!(run(&["stats", &seg]), 0);
}

#[test]
fn aux_ratio_logs_its_ratio() {
    let f = Files::new();
    synth(&f);
    assert_eq!(train(&f, "aux_ratio", "12", "m", &[]), 0);
    let log = read(&f.path("m.log"));
    let first = log.lines().next().unwrap();
    let r: f64 = first.strip_prefix("# ratio\t").unwrap().parse().unwrap();
    // synthetic gold has one target token per source word
    assert_eq!(r, 1.0);
    let last: Vec<f64> = log.lines().last().unwrap().split('\t').map(|x| x.parse().unwrap()).collect();
    assert!(last[3] > 0.0);
    assert!((last[4] - (last[1] + last[3] * last[2])).abs() < 1e-9);

    // without gold the ratio needs to be given
    let (src, tgt, m) = (f.arg("src"), f.arg("tgt"), f.arg("m2"));
    let code = run(&["train", "--source", &src, "--target", &tgt, "--mode", "aux_ratio", "--epochs", "12", "--model", &m]);
    assert_eq!(code, 1);
    let mut args = vec!["train", "--source", &src, "--target", &tgt, "--mode", "aux_ratio", "--epochs", "12", "--model", &m,
        "--set", "ratio_source=explicit", "--set", "ratio=0.8"];
    args.extend_from_slice(&SMALL);
    assert_eq!(run(&args), 0);
    assert!(read(&f.path("m2.log")).starts_with("# ratio\t0.8\n"));
}

#[test]
fn multirun_writes_every_seed() {
    let f = Files::new();
    synth(&f);
    let (src, gold, out) = (f.arg("src"), f.arg("gold"), f.arg("runs"));
    let mut args = vec!["multirun", "--source", &src, "--target", &gold, "--gold", "--epochs", "12", "--runs", "2",
        "--seed", "7", "--out-dir", &out];
    args.extend_from_slice(&SMALL);
    assert_eq!(run(&args), 0);
    for s in [7, 8] {
        let d = f.path("runs").join(format!("seed_{s}"));
        for name in ["model.txt", "loss.log", "segmented.txt", "report.tsv"] {
            assert!(d.join(name).is_file(), "{name}");
        }
    }
    let summary = read(&f.path("runs").join("summary.tsv"));
    assert!(summary.starts_with("metric\tmean\tstd\n"));
    assert!(summary.lines().any(|l| l.starts_with("BF\t")));
}

#[test]
fn error_statuses() {
    let f = Files::new();
    synth(&f);
    std::fs::write(f.path("short"), "abc\n").unwrap();
    let (src, short, m) = (f.arg("src"), f.arg("short"), f.arg("m"));
    // line-count mismatch is a data error
    assert_eq!(run(&["train", "--source", &src, "--target", &short, "--epochs", "1", "--set", "wait=0", "--model", &m]), 2);
    // a missing input is a usage error
    assert_eq!(run(&["train", "--source", "/nonexistent", "--target", &short, "--model", &m]), 1);
    assert_eq!(run(&["train", "--source", &src, "--target", &short, "--set", "dropout_rate=2"]), 1);
    assert_eq!(run(&["evaluate", "--pred", &short, "--gold", &src]), 2);
    assert_eq!(run(&["--help"]), 0);
}
