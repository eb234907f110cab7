use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sharp_core::graph::{save_graph, PlantedPartition};
use tempfile::TempDir;

const TINY: &str = r#"
dataset = "toy"
hidden_dim = 8
projector_dim = 8
heads = 1
epochs = 3
patience = 2
unlabelled_fraction = 0.3
use_published_split = false
snapshot_epochs = [0, 2]
probe_max_iter = 50
"#;

fn sharp(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sharp"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    tmp: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let graph = PlantedPartition { nodes: 40, classes: 2, features: 6, p_in: 0.25, p_out: 0.03, signal: 1.5 }
            .generate(3)
            .unwrap();
        save_graph(&graph, &tmp.path().join("data"), None).unwrap();
        fs::write(tmp.path().join("config.toml"), TINY).unwrap();
        Fixture { tmp }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn train(&self, out: &str) -> Output {
        sharp(&[&"train", &"--data", &self.path("data"), &"--config", &self.path("config.toml"), &"--out", &self.path(out)])
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn train_writes_run_directory() {
    let f = Fixture::new();
    let o = f.train("run");
    assert!(o.status.success(), "{}", stderr(&o));
    let global = read(&f.path("run/reports/global.csv"));
    assert_eq!(global.lines().count(), 2, "{global}");
    assert!(global.lines().nth(1).unwrap().starts_with("sharp,toy,gcn,0.3,0,"));
    assert!(read(&f.path("run/reports/degree.csv")).starts_with("degree,count,f1,delta_pct\n"));
    for file in ["model.ckpt", "config.toml", "split.json", "runrecord.json", "snapshots/epoch_0.ckpt", "snapshots/epoch_2.ckpt"] {
        assert!(f.path("run").join(file).is_file(), "{file}");
    }
    let record: serde_json::Value = serde_json::from_str(&read(&f.path("run/runrecord.json"))).unwrap();
    assert_eq!(record["pretrain_losses"].as_array().unwrap().len(), 3);
}

#[test]
fn rerun_is_byte_identical_and_seed_flag_overrides() {
    let f = Fixture::new();
    assert!(f.train("a").status.success());
    assert!(f.train("b").status.success());
    for file in ["model.ckpt", "reports/global.csv", "reports/degree.csv", "config.toml"] {
        assert_eq!(fs::read(f.path("a").join(file)).unwrap(), fs::read(f.path("b").join(file)).unwrap(), "{file}");
    }
    let o = sharp(&[&"train", &"--data", &f.path("data"), &"--config", &f.path("config.toml"), &"--out", &f.path("c"), &"--seed", &"7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(&f.path("c/config.toml")).contains("seed = 7"));
}

#[test]
fn config_error_exits_1() {
    let f = Fixture::new();
    fs::write(f.path("config.toml"), format!("{TINY}alpha = 1.5\n")).unwrap();
    let o = f.train("run");
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:") && err.contains("alpha out of (0,1]"), "{err}");
    assert!(!f.path("run").exists());
}

#[test]
fn missing_features_exit_2() {
    let f = Fixture::new();
    fs::remove_file(f.path("data/features.bin")).unwrap();
    let o = f.train("run");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[data]:"));
}

#[test]
fn evaluate_regenerates_train_reports() {
    let f = Fixture::new();
    assert!(f.train("run").status.success());
    let before_global = read(&f.path("run/reports/global.csv"));
    let before_degree = read(&f.path("run/reports/degree.csv"));
    for out in ["run", "eval"] {
        let o = sharp(&[&"evaluate", &"--checkpoint", &f.path("run/model.ckpt"), &"--data", &f.path("data"), &"--out", &f.path(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(read(&f.path(out).join("reports/global.csv")), before_global);
        assert_eq!(read(&f.path(out).join("reports/degree.csv")), before_degree);
    }
    let o = sharp(&[
        &"evaluate", &"--checkpoint", &f.path("run/model.ckpt"), &"--data", &f.path("data"), &"--out", &f.path("ref"),
        &"--reference", &f.path("run/reports/degree.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let with_ref = read(&f.path("ref/reports/degree.csv"));
    for line in with_ref.lines().skip(1).filter(|l| !l.ends_with(",,")) {
        assert!(line.ends_with(",0"), "{line}");
    }
}

#[test]
fn corrupted_checkpoint_exit_2() {
    let f = Fixture::new();
    assert!(f.train("run").status.success());
    let ckpt = f.path("run/model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] ^= 0xFF;
    fs::write(&ckpt, bytes).unwrap();
    let o = sharp(&[&"evaluate", &"--checkpoint", &ckpt, &"--data", &f.path("data"), &"--out", &f.path("eval")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_runs_product_and_aggregates() {
    let f = Fixture::new();
    fs::write(f.path("grid.toml"), "r = [0.0, 0.3]\nalpha = [0.5, 1.0]\n").unwrap();
    let run_sweep = |out: &str, parallel: bool| {
        let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = Vec::new();
        let (data, grid, cfg, out) = (f.path("data"), f.path("grid.toml"), f.path("config.toml"), f.path(out));
        args.extend([&"sweep" as &dyn AsRef<_>, &"--data", &data, &"--grid", &grid, &"--out", &out, &"--seeds", &"2", &"--config", &cfg]);
        if parallel {
            args.extend([&"--parallel" as &dyn AsRef<_>, &"--jobs", &"3"]);
        }
        sharp(&args)
    };
    let o = run_sweep("seq", false);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = read(&f.path("seq/runs.csv"));
    assert_eq!(runs.lines().count(), 1 + 8, "{runs}");
    assert!(runs.lines().skip(1).all(|l| l.contains(",ok,")), "{runs}");
    let agg = read(&f.path("seq/sweep.csv"));
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "alpha,r,mean_f1,std_f1");
    assert_eq!(lines.len(), 1 + 4);

    let o = run_sweep("par", true);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&f.path("par/sweep.csv")), agg);
}

#[test]
fn sweep_records_failed_cells() {
    let f = Fixture::new();
    fs::write(f.path("grid.toml"), "alpha = [0.5, 1.5]\n").unwrap();
    let o = sharp(&[
        &"sweep", &"--data", &f.path("data"), &"--grid", &f.path("grid.toml"), &"--out", &f.path("s"), &"--seeds", &"1",
        &"--config", &f.path("config.toml"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = read(&f.path("s/runs.csv"));
    assert!(runs.contains(",failed,") && runs.contains("alpha out of (0,1]"), "{runs}");
    let agg = read(&f.path("s/sweep.csv"));
    assert!(agg.lines().nth(2).unwrap().ends_with("1.5,,"), "{agg}");
}

#[test]
fn empty_sweep_is_a_config_error() {
    let f = Fixture::new();
    fs::write(f.path("grid.toml"), "").unwrap();
    let o = sharp(&[&"sweep", &"--data", &f.path("data"), &"--grid", &f.path("grid.toml"), &"--out", &f.path("s"), &"--seeds", &"2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty sweep"));
}

#[test]
fn exports() {
    let f = Fixture::new();
    assert!(f.train("run").status.success());
    let o = sharp(&[&"export-embeddings", &"--checkpoint", &f.path("run/model.ckpt"), &"--data", &f.path("data"), &"--out", &f.path("emb")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let emb = read(&f.path("emb/embeddings.csv"));
    assert_eq!(emb.lines().count(), 41);
    assert!(emb.starts_with("node_id,label,degree,e_0,"));

    let o = sharp(&[&"export-hard-negatives", &"--run", &f.path("run"), &"--data", &f.path("data"), &"--epochs", &"0,2", &"--k", &"3", &"--out", &f.path("hn")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hn = read(&f.path("hn/hard_negatives.csv"));
    assert!(hn.starts_with("anchor_node,rank,negative_node,negative_degree,similarity,epoch,baseline_degree\n"));
    assert_eq!(hn.lines().count(), 1 + 2 * 40 * 3);

    let o = sharp(&[&"export-hard-negatives", &"--run", &f.path("run"), &"--data", &f.path("data"), &"--epochs", &"1", &"--out", &f.path("hn2")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing epoch checkpoint"));
}

#[test]
fn prepare_splits_matches_train() {
    let f = Fixture::new();
    let o = sharp(&[&"prepare-splits", &"--data", &f.path("data"), &"--config", &f.path("config.toml"), &"--out", &f.path("sp")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(f.train("run").status.success());
    assert_eq!(read(&f.path("sp/split.json")), read(&f.path("run/split.json")));
}

#[test]
fn bad_arguments_exit_1() {
    let o = sharp(&[&"train", &"--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[config]:"));
}
