use std::path::Path;
use std::process::{Command, Output};

fn lcmt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcmt")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn lines(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split_whitespace().map(String::from).collect()).collect()
}

const SMALL_MODEL: [&str; 14] = [
    "--d-model", "16", "--d-ff", "32", "--heads", "2", "--layers", "1", "--warmup", "10", "--save-every", "10", "--max-tokens", "256",
];

/// Generates a corpus and trains a small decoder-embedding model in `dir`.
fn trained(dir: &Path, steps: &str) {
    ok(&lcmt(&["-q", "gen-data", "--out", "data", "--train", "400", "--valid", "40", "--test", "500"], dir));
    let mut args = vec!["-q", "train", "--data", "data", "--mode", "decoder_embedding", "--out", "model", "--steps", steps];
    args.extend(SMALL_MODEL);
    ok(&lcmt(&args, dir));
}

#[test]
fn hard_constraint_meets_every_target_length_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, "20");
    ok(&lcmt(&["-q", "translate", "--model", "model", "--input", "data/test.L1-E.src", "--constraint", "hard:0.8", "--out", "h.txt"], d));
    let src = lines(&d.join("data/test.L1-E.src"));
    let hyp = lines(&d.join("h.txt"));
    assert_eq!(src.len(), 500);
    assert_eq!(hyp.len(), 500);
    for (s, h) in src.iter().zip(&hyp) {
        let j = ((0.8 * s.len() as f64 + 0.5).floor() as usize).max(1);
        assert_eq!(h.len(), j, "source {s:?} gave {h:?}");
    }
    let eval = lcmt(
        &["-q", "evaluate", "--hyps", "h.txt", "--src", "data/test.L1-E.src", "--constraint", "hard:0.8", "--metrics", "length"],
        d,
    );
    ok(&eval);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("len_dist\t0\n"));
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        trained(d, "12");
        ok(&lcmt(&["-q", "translate", "--model", "model", "--input", "data/test.L1-E.src", "--constraint", "soft:0.5", "--out", "h.txt"], d));
    }
    for f in ["data/train.L1-E.tgt", "model/model.ckpt", "model/vocab.txt", "model/train_log.tsv", "h.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn resumed_training_writes_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&lcmt(&["-q", "gen-data", "--out", "data", "--train", "300", "--valid", "30", "--test", "10"], d));
    let run = |out: &str, steps: &str, resume: bool| {
        let mut args = vec!["-q", "train", "--data", "data", "--out", out, "--steps", steps];
        args.extend(SMALL_MODEL);
        if resume {
            args.push("--resume");
        }
        ok(&lcmt(&args, d));
    };
    run("split", "10", false);
    run("split", "20", true);
    run("whole", "20", false);
    assert_eq!(std::fs::read(d.join("split/model.ckpt")).unwrap(), std::fs::read(d.join("whole/model.ckpt")).unwrap());
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.conf"), "# data\ntrain = 30\nvalid = 3\ntest = 7\n").unwrap();
    ok(&lcmt(&["-q", "--config", "run.conf", "gen-data", "--out", "data", "--test", "5"], d));
    assert_eq!(lines(&d.join("data/train.L1-E.src")).len(), 30);
    assert_eq!(lines(&d.join("data/test.L1-E.src")).len(), 5);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(lcmt(&["no-such-command"], d).status.code(), Some(2));
    assert_eq!(lcmt(&["-q", "gen-data", "--out", "x", "--langs", "L1-Q"], d).status.code(), Some(2));
    assert_eq!(lcmt(&["-q", "train", "--data", "missing", "--out", "m"], d).status.code(), Some(3));
    trained(d, "2");
    let translate = |extra: &[&str]| {
        let mut args = vec!["-q", "translate", "--model", "model", "--input", "data/test.L1-E.src"];
        args.extend(extra);
        lcmt(&args, d).status.code()
    };
    assert_eq!(translate(&["--constraint", "oracle"]), Some(2));
    assert_eq!(translate(&["--constraint", "sideways:1"]), Some(2));
    // decoder_embedding cannot run without a target length
    assert_eq!(translate(&["--constraint", "none"]), Some(4));
    // J beyond the maximum sequence length
    assert_eq!(translate(&["--constraint", "hard:9"]), Some(4));
    std::fs::write(d.join("model/model.ckpt"), b"LCMT").unwrap();
    assert_eq!(translate(&["--constraint", "hard:0.8"]), Some(3));
}

#[test]
fn bpe_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let text = "the lower newest widest\nlow lower lowest\n";
    std::fs::write(d.join("in.txt"), text).unwrap();
    ok(&lcmt(&["-q", "bpe", "--learn", "--merges", "8", "--input", "in.txt", "--codes", "codes.txt"], d));
    ok(&lcmt(&["-q", "bpe", "--apply", "--codes", "codes.txt", "--input", "in.txt", "--out", "seg.txt"], d));
    ok(&lcmt(&["-q", "bpe", "--undo", "--input", "seg.txt", "--out", "back.txt"], d));
    assert!(std::fs::read_to_string(d.join("seg.txt")).unwrap().contains("@@"));
    assert_eq!(std::fs::read_to_string(d.join("back.txt")).unwrap(), text);
}

#[test]
fn smoke_experiment_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = lcmt(&["-q", "experiment", "--table", "quality", "--scale", "smoke", "--out", "tables"], d);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Decoder Pos @0.8"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("tables/quality.json")).unwrap()).unwrap();
    assert!(json.get("Baseline_@0.8/len_dist").is_some());
}
