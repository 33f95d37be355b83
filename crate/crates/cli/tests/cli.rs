use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[data]
seed = 4
classes = 3
dims = [3, 2, 4]
lengths = [{ min = 2, max = 6 }, { min = 1, max = 4 }, { min = 2, max = 5 }]

[model]
d = 8
heads = 2
d_k = 4
layers = 1
classes = 3
feature_dims = [3, 2, 4]
max_lens = [6, 4, 5]

[train]
seed = 1
lr = 3e-3
batch_size = 8
max_epochs = 2

[eval]
mask_seeds = [0, 1]
rates = [0.0, 0.3, 0.6]
"#;

fn mcthfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcthfr")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn gen(&self, name: &str, n: usize, start: u64) -> Output {
        mcthfr(&["gen-data", "--config", p(&self.path("cfg.toml")), "--out", p(&self.path(name)), "--n", &n.to_string(), "--start", &start.to_string()])
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (cfg, data, out) = (self.path("cfg.toml"), self.path("train.mmt"), self.path(out));
        let mut args = vec!["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)];
        args.extend_from_slice(extra);
        mcthfr(&args)
    }
}

#[test]
fn gen_data_is_deterministic() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.gen("a.mmt", 30, 0)), 0);
    assert_eq!(code(&ws.gen("b.mmt", 30, 0)), 0);
    assert_eq!(std::fs::read(ws.path("a.mmt")).unwrap(), std::fs::read(ws.path("b.mmt")).unwrap());
    let out = ws.gen("c.mmt", 30, 0);
    assert!(stdout(&out).contains("samples=30"));
    assert!(stdout(&out).contains("class_0=10"));
    assert_eq!(code(&ws.gen("d.mmt", 30, 5)), 0);
    assert_ne!(std::fs::read(ws.path("a.mmt")).unwrap(), std::fs::read(ws.path("d.mmt")).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.gen("a.mmt", 0, 0)), 2);
    assert_eq!(code(&mcthfr(&["gen-data", "--n", "3"])), 2);
    assert_eq!(code(&mcthfr(&["no-such-command"])), 2);
    std::fs::write(ws.path("bad.toml"), CONFIG.replace("[eval]", "[eval]\nfrobnicate = 1")).unwrap();
    let out = mcthfr(&["gen-data", "--config", p(&ws.path("bad.toml")), "--out", p(&ws.path("x.mmt")), "--n", "3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval.frobnicate"));
}

#[test]
fn train_and_sweep_round_trip() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.gen("train.mmt", 40, 0)), 0);
    assert_eq!(code(&ws.gen("test.mmt", 20, 40)), 0);
    let a = ws.train("run_a", &[]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    for f in ["model.mctp", "train_log.jsonl", "summary.json", "config.toml"] {
        assert!(ws.path("run_a").join(f).exists(), "{f}");
    }
    assert!(stdout(&a).contains("best_epoch="));
    assert_eq!(code(&ws.train("run_b", &[])), 0);
    let ckpt = |run: &str| std::fs::read(ws.path(run).join("model.mctp")).unwrap();
    assert_eq!(ckpt("run_a"), ckpt("run_b"));
    let steps = |run: &str| {
        std::fs::read_to_string(ws.path(run).join("train_log.jsonl"))
            .unwrap()
            .lines()
            .filter(|l| l.contains("\"step\""))
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    assert_eq!(steps("run_a"), steps("run_b"));
    assert_eq!(steps("run_a").len(), 2 * 5);

    let sweep = |out: &str| {
        mcthfr(&[
            "sweep",
            "--checkpoint",
            p(&ws.path("run_a").join("model.mctp")),
            "--data",
            p(&ws.path("test.mmt")),
            "--config",
            p(&ws.path("cfg.toml")),
            "--out",
            p(&ws.path(out)),
        ])
    };
    assert_eq!(code(&sweep("sw_a")), 0);
    assert_eq!(code(&sweep("sw_b")), 0);
    let csv = std::fs::read_to_string(ws.path("sw_a").join("sweep.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(ws.path("sw_b").join("sweep.csv")).unwrap());
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ws.path("sw_a").join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);

    let single = mcthfr(&[
        "sweep",
        "--checkpoint",
        p(&ws.path("run_a").join("model.mctp")),
        "--data",
        p(&ws.path("test.mmt")),
        "--rates",
        "0.0",
        "--mask-seeds",
        "0",
        "--out",
        p(&ws.path("sw_c")),
    ]);
    assert_eq!(code(&single), 0);
    assert!(stdout(&single).contains("auilc=absent"));
}

#[test]
fn train_flags_are_honoured() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.gen("train.mmt", 30, 0)), 0);
    assert_eq!(code(&ws.train("bad", &["--strategy", "complete", "--miss-rate", "0.5"])), 2);
    assert_eq!(code(&ws.train("bad", &["--strategy", "sometimes"])), 2);
    assert_eq!(code(&ws.train("bad", &["--alpha", "-1"])), 2);
    let out = ws.train("plain", &["--no-hfr", "--epochs", "1", "--strategy", "one-to-one"]);
    assert_eq!(code(&out), 0);
    let log = std::fs::read_to_string(ws.path("plain").join("train_log.jsonl")).unwrap();
    for line in log.lines().filter(|l| l.contains("\"step\"")) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["record"]["loss"]["gfa"], 0.0);
        assert_eq!(v["record"]["loss"]["lfi"], 0.0);
        assert_eq!(v["record"]["incomplete"], v["record"]["batch"]);
    }
    let resolved = std::fs::read_to_string(ws.path("plain").join("config.toml")).unwrap();
    assert!(resolved.contains("use_hfr = false"));
    assert!(resolved.contains("max_epochs = 1"));
}

#[test]
fn sweep_rejects_foreign_data() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.gen("train.mmt", 20, 0)), 0);
    assert_eq!(code(&ws.train("run", &["--epochs", "1"])), 0);
    let other = mcthfr(&["gen-data", "--out", p(&ws.path("other.mmt")), "--n", "5", "--seed", "0"]);
    assert_eq!(code(&other), 0);
    let out = mcthfr(&[
        "sweep",
        "--checkpoint",
        p(&ws.path("run").join("model.mctp")),
        "--data",
        p(&ws.path("other.mmt")),
        "--out",
        p(&ws.path("sw")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn params_prints_key_value_lines() {
    let out = mcthfr(&["params"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut map = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').expect("key=value");
        assert!(k.chars().all(|c| c.is_ascii_lowercase() || c == '.' || c == '_'), "{k}");
        assert!(v.chars().all(|c| c.is_ascii_digit() || c == ','), "{v}");
        map.insert(k.to_owned(), v.to_owned());
    }
    assert_eq!(map["layer.mrau.params"], "397440");
    assert_eq!(map["layer.pairwise_reference.params"], "794880");
    assert_eq!(map["model.training.params"], map["enumerated.training.params"]);
    assert_eq!(map["model.inference.params"], map["enumerated.inference.params"]);
    let short = mcthfr(&["params", "--lens", "40,4,5"]);
    assert_eq!(code(&mcthfr(&["params", "--lens", "40,4"])), 2);
    assert!(stdout(&short).starts_with("lens=40,4,5\n"));
}

#[test]
fn gradcheck_fault_exits_one() {
    let out = mcthfr(&["gradcheck", "--inject-fault", "cls"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cls"));
    assert!(stdout(&out).contains("FAIL"));
}
