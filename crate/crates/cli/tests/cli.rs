use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rsan::cosine_classifier::gzsl_metrics;
use rsan::evaluate::Predictions;
use rsan::tensor_ops::cosine;
use rsan::{Checkpoint64, ClassId, ConfigEcho, Dataset64, Split};

const TINY: &str = "\
C=8
H=5
W=5
K=6
num_seen=5
num_unseen=2
samples_per_class=10
active_per_class=2
epochs=3
batches_per_epoch=4
episode_m=3
";

fn rsan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsan"))
        .args(args)
        .output()
        .expect("run rsan")
}

fn ok(args: &[&str]) -> String {
    let out = rsan(args);
    assert!(
        out.status.success(),
        "rsan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Writes `text` to `dir/name` and returns the path as a string.
fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the tiny benchmark and trains on it; returns (data dir, run dir).
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let (data, run) = (dir.join("data"), dir.join("run"));
    let gen = config(dir, "gen.cfg", TINY);
    ok(&["generate", "--config", &gen, "--out", s(&data)]);
    let train = config(
        dir,
        "train.cfg",
        &format!("{TINY}dataset=data/dataset.feat\nwords=data/words.txt\n"),
    );
    ok(&["train", "--config", &train, "--out", s(&run)]);
    (data, run)
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "expected a single error line, got {err:?}");
    err.trim_end().to_string()
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "gen.cfg", TINY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["generate", "--config", &cfg, "--out", s(&a)]);
    ok(&["generate", "--config", &cfg, "--out", s(&b)]);
    ok(&["generate", "--config", &cfg, "--seed", "9", "--out", s(&c)]);
    for f in ["dataset.feat", "words.txt", "generate.echo"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        fs::read(a.join("dataset.feat")).unwrap(),
        fs::read(c.join("dataset.feat")).unwrap()
    );
    let echo = fs::read_to_string(c.join("generate.echo")).unwrap();
    assert!(echo.contains("bench_seed=9"));
}

#[test]
fn unknown_config_key_is_a_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad.cfg", "learning_rate=0.1\n");
    let out = rsan(&["train", "--config", &cfg, "--out", s(dir.path())]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error kind=config "), "{line}");
    assert!(line.contains("learning_rate"), "{line}");
}

#[test]
fn malformed_dataset_reports_offset_and_expectation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.feat"), b"NOTAFILE\0\0\0\0").unwrap();
    let cfg = config(dir.path(), "t.cfg", "dataset=junk.feat\n");
    let out = rsan(&["train", "--config", &cfg, "--out", s(dir.path())]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error kind=format offset=0 expected=\""), "{line}");
}

#[test]
fn bad_arguments_are_a_usage_error() {
    let out = rsan(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error kind=usage "));
}

#[test]
fn train_writes_artifacts_stamped_with_seed_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let (_, run) = trained(dir.path());
    let echo_text = fs::read_to_string(run.join("train.echo")).unwrap();
    let echo = ConfigEcho::parse(&echo_text).unwrap();
    assert!(echo_text.starts_with(&format!("# config_hash={}\n", echo.hash())));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(
        log.lines().next().unwrap(),
        format!("# seed=0 config_hash={}", echo.hash())
    );
    assert_eq!(log.lines().count(), 2 + 3);
    let best = Checkpoint64::load(&run.join("checkpoint.ckpt")).unwrap();
    let last = Checkpoint64::load(&run.join("last.ckpt")).unwrap();
    assert_eq!(best.config_hash, echo.hash_u64());
    assert_eq!(last.epoch, 3);
    assert_eq!(best.echo, echo);
}

#[test]
fn eval_is_read_only_and_zero_gamma_is_plain_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = trained(dir.path());
    let inputs = [data.join("dataset.feat"), run.join("checkpoint.ckpt")];
    let before: Vec<Vec<u8>> = inputs.iter().map(|p| fs::read(p).unwrap()).collect();
    let cfg = config(
        dir.path(),
        "eval.cfg",
        "dataset=data/dataset.feat\ncheckpoint=run/checkpoint.ckpt\nmode=gzsl\ngamma=0\n",
    );
    let out_dir = dir.path().join("eval");
    let first = ok(&["eval", "--config", &cfg, "--out", s(&out_dir)]);
    ok(&["eval", "--config", &cfg, "--out", s(&out_dir)]);
    let after: Vec<Vec<u8>> = inputs.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);

    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 3, "header once, one row per run");
    assert_eq!(lines[1], lines[2]);
    assert_eq!(first.lines().nth(1).unwrap(), lines[1]);

    // Independent recomputation: cosine argmax over every class, first wins.
    let dataset = Dataset64::load(&inputs[0]).unwrap();
    let ckpt = Checkpoint64::load(&inputs[1]).unwrap();
    let p = Predictions::compute(&ckpt.model, &dataset, dataset.indices_in(Split::Test)).unwrap();
    let n = dataset.table.num_classes();
    let preds: Vec<ClassId> = p
        .a_hat
        .iter()
        .map(|a| {
            let scores: Vec<f64> = (0..n)
                .map(|y| cosine(a, &dataset.table.row(ClassId(y))).unwrap())
                .collect();
            let best = (0..n).fold(0, |b, y| if scores[y] > scores[b] { y } else { b });
            ClassId(best)
        })
        .collect();
    let m = gzsl_metrics(&preds, &p.truths, &dataset.table).unwrap();
    let fields: Vec<&str> = lines[1].split(',').collect();
    for (i, want) in [(2, m.t1), (3, m.s), (4, m.u), (5, m.h)] {
        assert_eq!(fields[i], format!("{want:.6}"), "column {i}");
    }
    assert_eq!(fields[6], "0");
}

#[test]
fn ablation_rows_differ_by_exactly_one_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "ablate.cfg", TINY);
    let out = dir.path().join("ablate");
    ok(&["ablate", "--config", &cfg, "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0][2..7].iter().all(|&f| f == "0"));
    assert!(rows[5][2..7].iter().all(|&f| f == "1"));
    for pair in rows.windows(2) {
        let changed = (2..7).filter(|&i| pair[0][i] != pair[1][i]).count();
        assert_eq!(changed, 1, "{:?} -> {:?}", pair[0][1], pair[1][1]);
    }
    let echoes: Vec<BTreeSet<(String, String)>> = (0..6)
        .map(|i| {
            let text = fs::read_to_string(out.join(format!("ablation_row{i}.echo"))).unwrap();
            ConfigEcho::parse(&text).unwrap().entries().iter().cloned().collect()
        })
        .collect();
    for (i, pair) in echoes.windows(2).enumerate() {
        let diff: Vec<_> = pair[0].symmetric_difference(&pair[1]).map(|(k, _)| k.as_str()).collect();
        assert_eq!(diff.len(), 2, "rows {i}/{}: {diff:?}", i + 1);
        assert_eq!(diff[0], diff[1]);
        assert!(diff[0].starts_with("use_"), "{diff:?}");
    }
}

#[test]
fn gamma_sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sweep.cfg", &format!("{TINY}axis=gamma\nvalues=0,0.5,2\n"));
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", &cfg, "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("sweep_gamma.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# seed=0 config_hash="));
    assert_eq!(lines[1], rsan::experiment::SweepPoint::HEADER);
    let values: Vec<&str> = lines[2..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["0", "0.5", "2"]);
}

#[test]
fn visualize_exports_csv_and_pgm_per_sample_and_attribute() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let cfg = config(
        dir.path(),
        "vis.cfg",
        "dataset=data/dataset.feat\ncheckpoint=run/checkpoint.ckpt\nsamples=1,4\nattributes=0,5\n",
    );
    let out = dir.path().join("vis");
    ok(&["visualize", "--config", &cfg, "--out", s(&out)]);
    for sample in [1, 4] {
        for attr in [0, 5] {
            let stem = out.join(format!("saliency_s{sample}_a{attr}"));
            let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
            assert!(csv.starts_with("# seed=0\n# config_hash="));
            let grid: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
            assert_eq!(grid.len(), 5);
            assert!(grid.iter().all(|r| r.split(',').count() == 5));
            let pgm = fs::read(stem.with_extension("pgm")).unwrap();
            assert!(pgm.starts_with(b"P5\n"));
            let body = pgm.len() - 25;
            assert!(pgm[..body].ends_with(b"\n5 5\n255\n"));
            assert_eq!(pgm[body..].iter().max(), Some(&255));
        }
    }
    let bad = config(dir.path(), "bad.cfg", "dataset=data/dataset.feat\ncheckpoint=run/checkpoint.ckpt\nattributes=6\n");
    let res = rsan(&["visualize", "--config", &bad, "--out", s(&out)]);
    assert!(stderr_line(&res).starts_with("error kind=config "));
}
