use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn knnmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knnmt"))
        .args(args)
        .output()
        .expect("failed to run knnmt")
}

fn ok(args: &[&str]) -> String {
    let out = knnmt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = knnmt(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 4] = ["--vocab", "64", "--seed", "3"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = args.to_vec();
    v.extend(SMALL);
    v
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&with_small(&[
            "gen-data", "--out", p(&data), "--domains", "2", "--train", "300", "--valid", "12", "--test", "12",
        ]));
        let ds = root.join("ds.bin");
        ok(&with_small(&["build", "--corpus", p(&data.join("domain-0/train.tsv")), "--out", p(&ds)]));
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn split(&self, name: &str) -> PathBuf {
        self.root.join("data/domain-0").join(name)
    }
}

#[test]
fn gen_data_writes_domains_deterministically() {
    let w = Workspace::new();
    for d in ["domain-0", "domain-1"] {
        for s in ["train.tsv", "valid.tsv", "test.tsv"] {
            assert!(w.path("data").join(d).join(s).is_file());
        }
    }
    let again = w.path("nested/again");
    ok(&with_small(&[
        "gen-data", "--out", p(&again), "--domains", "2", "--train", "300", "--valid", "12", "--test", "12",
    ]));
    let a = fs::read(w.split("train.tsv")).unwrap();
    let b = fs::read(again.join("domain-0/train.tsv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 300);
}

#[test]
fn build_prune_and_pca() {
    let w = Workspace::new();
    let ds = w.path("ds.bin");
    let rebuilt = w.path("again.bin");
    let out = ok(&with_small(&["build", "--corpus", p(&w.split("train.tsv")), "--out", p(&rebuilt)]));
    assert!(out.contains("dim 64"), "{out}");
    assert_eq!(fs::read(&ds).unwrap(), fs::read(&rebuilt).unwrap());

    let mut sizes = Vec::new();
    for k in ["1", "2", "5"] {
        let pruned = w.path(&format!("pruned{k}.bin"));
        let out = ok(&["prune", "--input", p(&ds), "--out", p(&pruned), "--prune-k", k]);
        let size: usize = out.split(" -> ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
        sizes.push(size);
    }
    assert!(sizes[2] <= sizes[1] && sizes[1] <= sizes[0], "{sizes:?}");
    fails(&["prune", "--input", p(&ds), "--out", p(&w.path("x")), "--prune-k", "100000"]);

    let out = ok(&["pca", "--input", p(&ds), "--model", p(&w.path("pca.bin")), "--out", p(&w.path("ds8.bin")), "--dim", "8"]);
    assert!(out.contains("64 -> 8"), "{out}");
    fails(&["pca", "--input", p(&ds), "--model", p(&w.path("p")), "--out", p(&w.path("o")), "--dim", "65"]);
}

#[test]
fn translate_variants() {
    let w = Workspace::new();
    let test = w.split("test.tsv");
    let base = ok(&with_small(&["translate", "--input", p(&test), "--beam", "2"]));
    assert_eq!(base.lines().count(), 12);
    let lambda0 = ok(&with_small(&[
        "translate", "--input", p(&test), "--beam", "2", "--datastore", p(&w.path("ds.bin")), "--lambda", "0",
    ]));
    assert_eq!(base, lambda0);

    let ds = w.path("ds.bin");
    let knn_args = with_small(&["translate", "--input", p(&test), "--beam", "2", "--datastore", p(&ds)]);
    let knn = ok(&knn_args);
    assert_eq!(knn, ok(&knn_args));
    let mut cached = knn_args.clone();
    cached.extend(["--cache", "--tau", "0"]);
    assert_eq!(knn, ok(&cached));

    ok(&["pca", "--input", p(&w.path("ds.bin")), "--model", p(&w.path("pca.bin")), "--out", p(&w.path("ds16.bin")), "--dim", "16"]);
    let out_file = w.path("hyp.txt");
    ok(&with_small(&[
        "translate", "--input", p(&test), "--datastore", p(&w.path("ds16.bin")), "--pca", p(&w.path("pca.bin")),
        "--cache", "--out", p(&out_file),
    ]));
    assert_eq!(fs::read_to_string(&out_file).unwrap().lines().count(), 12);

    fails(&with_small(&["translate", "--input", p(&test), "--pca", p(&w.path("pca.bin"))]));
    fails(&with_small(&["translate", "--input", p(&test), "--datastore", p(&w.path("ds16.bin"))]));
    fails(&with_small(&["translate", "--input", p(&w.path("missing.tsv"))]));
}

#[test]
fn sweep_tables() {
    let w = Workspace::new();
    let ds = w.path("ds.bin");
    let valid = w.split("valid.tsv");
    let grid = ok(&with_small(&[
        "sweep", "--datastore", p(&ds), "--valid", p(&valid), "--k-grid", "4,8", "--lambda-grid", "0.5,0.6,0.7",
        "--beam", "2",
    ]));
    let mut lines = grid.lines();
    assert_eq!(lines.next(), Some("k,lambda,bleu"));
    assert_eq!(lines.count(), 6);
    let single = ok(&with_small(&[
        "sweep", "--datastore", p(&ds), "--valid", p(&valid), "--k-grid", "8", "--lambda-grid", "0.7", "--format",
        "json", "--beam", "2",
    ]));
    assert!(single.contains("\"best\""), "{single}");

    let taus = ok(&with_small(&[
        "sweep", "--datastore", p(&ds), "--valid", p(&valid), "--tau-grid", "0,2,4", "--beam", "2",
    ]));
    assert_eq!(taus.lines().next(), Some("tau,bleu,search_fraction"));
    let fractions: Vec<f64> = taus.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(fractions.len(), 3);
    assert!(fractions.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn gate_and_bench() {
    let w = Workspace::new();
    let ds = w.path("ds.bin");
    let gate = w.path("gate.bin");
    let out = ok(&with_small(&[
        "train-gate", "--datastore", p(&ds), "--valid", p(&w.split("valid.tsv")), "--out", p(&gate), "--hidden", "8",
        "--epochs", "3",
    ]));
    assert!(out.contains("objective"), "{out}");

    let report = w.path("report.json");
    ok(&with_small(&[
        "bench", "--datastore", p(&ds), "--input", p(&w.split("test.tsv")), "--methods", "base,knn,adaptive,pca+cache",
        "--batches", "1,4", "--gate", p(&gate), "--dim", "16", "--beam", "2", "--limit", "6", "--format", "json",
        "--out", p(&report),
    ]));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.matches("\"method\"").count(), 8);

    let csv = ok(&with_small(&[
        "bench", "--datastore", p(&ds), "--input", p(&w.split("test.tsv")), "--methods", "knn", "--batches", "2",
        "--beam", "2", "--limit", "4",
    ]));
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("method,batch_size,tokens_per_second"));

    let err = fails(&with_small(&[
        "bench", "--datastore", p(&ds), "--input", p(&w.split("test.tsv")), "--methods", "knn,turbo",
    ]));
    assert!(err.contains("turbo") && err.contains("pca+cache+pruning"), "{err}");
    fails(&with_small(&[
        "bench", "--datastore", p(&ds), "--input", p(&w.split("test.tsv")), "--methods", "adaptive",
    ]));
}

#[test]
fn config_file_precedence() {
    let w = Workspace::new();
    let cfg = w.path("run.conf");
    fs::write(&cfg, "# small run\nbeam = 2\nlambda = 0   # no retrieval\nformat = json\n").unwrap();
    let test = w.split("test.tsv");
    let ds = w.path("ds.bin");
    let from_file = ok(&with_small(&["translate", "--input", p(&test), "--datastore", p(&ds), "--config", p(&cfg)]));
    let base = ok(&with_small(&["translate", "--input", p(&test), "--beam", "2"]));
    assert_eq!(from_file, base);
    let flag_wins = ok(&with_small(&[
        "translate", "--input", p(&test), "--datastore", p(&ds), "--config", p(&cfg), "--lambda", "0.7",
    ]));
    let knn = ok(&with_small(&["translate", "--input", p(&test), "--datastore", p(&ds), "--beam", "2"]));
    assert_eq!(flag_wins, knn);

    fs::write(&cfg, "beam = 2\nspeed = 11\n").unwrap();
    let err = fails(&with_small(&["translate", "--input", p(&test), "--config", p(&cfg)]));
    assert!(err.contains("speed") && err.contains("line 2"), "{err}");
}

#[test]
fn bad_arguments_fail_cleanly() {
    fails(&["translate"]);
    fails(&["no-such-command"]);
    fails(&["gen-data", "--out", "x", "--k", "many"]);
    fails(&["gen-data", "--out", "x", "--format", "xml"]);
    assert!(knnmt(&["--help"]).status.success());
}
