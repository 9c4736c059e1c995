use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use deepwarp::dataset::read_dataset;
use deepwarp::net::{init_weights, load_network, save_network, MlpSpec, Network, Standardization};

const TINY: &str = "\
mesh.box = 4,1,1
mesh.size = 2,0.5,0.5
data.n_alpha = 2
data.n_beta = 2
data.circular = false
ramp.factor = 2
ramp.cap = 0.5
train.batch = 64
split.val = 0.1
split.test = 0.1
sim.dt = 0.02
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepwarp"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

/// A directory holding `tiny.cfg`, a generated dataset and a trained network.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        std::fs::write(dir.join("tiny.cfg"), TINY).unwrap();
        assert!(run(&dir, &["--config", "tiny.cfg", "--quiet", "gen-data", "--out", "d.dwtp"]).status.success());
        assert!(run(&dir, &["--config", "tiny.cfg", "--quiet", "train", "--data", "d.dwtp", "--out", "n.dwnn"]).status.success());
        dir
    })
}

#[test]
fn gen_data_round_trip_and_report() {
    let dir = fixture();
    let records = read_dataset(std::fs::File::open(dir.join("d.dwtp")).unwrap()).unwrap();
    let report = std::fs::read_to_string(dir.join("d.dwtp.report.txt")).unwrap();
    assert!(report.contains(&format!("records = {}\n", records.len())));
    assert!(report.contains("# mesh.box = 4,1,1\n"));
    let field = |k: &str| -> usize { report.lines().find_map(|l| l.strip_prefix(&format!("{k} = "))).unwrap().parse().unwrap() };
    assert_eq!(field("poses_kept") + field("poses_dropped"), field("poses_attempted"));
    assert!(!dir.join("d.dwtp.partial").exists());
}

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = fixture();
    assert!(run(dir, &["--config", "tiny.cfg", "--quiet", "--seed", "0", "gen-data", "--out", "again.dwtp"]).status.success());
    assert_eq!(std::fs::read(dir.join("d.dwtp")).unwrap(), std::fs::read(dir.join("again.dwtp")).unwrap());
}

#[test]
fn train_writes_loss_history() {
    let dir = fixture();
    let rows = data_rows(&dir.join("n.dwnn.loss.csv"));
    assert_eq!(rows[0], "epoch,train_mse,val_mse");
    assert_eq!(rows.len() - 1, 11);
    let val = |r: &str| r.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!(val(&rows[11]) < val(&rows[1]));
    let net = load_network(std::fs::File::open(dir.join("n.dwnn")).unwrap()).unwrap();
    assert_eq!(net.mlp.spec().layer_sizes, vec![7, 16, 16, 3]);
}

#[test]
fn simulate_row_accounting() {
    let dir = fixture();
    let out = run(dir, &["--config", "tiny.cfg", "--quiet", "simulate", "--method", "deepwarp", "--net", "n.dwnn", "--steps", "100", "--track", "3,5,9", "--out", "t.csv"]);
    assert!(out.status.success());
    let rows = data_rows(&dir.join("t.csv"));
    assert_eq!(rows[0], "t,node,ux,uy,uz");
    assert_eq!(rows.len() - 1, 300);
}

#[test]
fn linear_method_ignores_network_with_warning() {
    let dir = fixture();
    let out = run(dir, &["--config", "tiny.cfg", "simulate", "--method", "linear", "--net", "n.dwnn", "--steps", "5", "--out", "lin.csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ignored"));
}

#[test]
fn mismatched_network_fails_before_stepping() {
    let dir = fixture();
    let mut spec = MlpSpec::tanh(2, 16);
    spec.feature_order.swap(0, 1);
    let net = Network { mlp: init_weights(&spec, 0), standardization: Standardization::identity() };
    save_network(std::fs::File::create(dir.join("bad.dwnn")).unwrap(), &net).unwrap();
    let out = run(dir, &["--config", "tiny.cfg", "simulate", "--method", "deepwarp", "--net", "bad.dwnn", "--out", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.join("bad.csv").exists() && !dir.join("bad.csv.partial").exists());
}

#[test]
fn compare_summary_and_linear_frequency() {
    let dir = fixture();
    let steps = 200;
    let args = [
        "--config", "tiny.cfg", "--quiet", "compare", "--net", "n.dwnn", "--steps", "200", "--methods", "groundtruth,deepwarp,rsw", "--set",
        "material.model=linear", "--set", "load.magnitude=0.2", "--out", "c.csv",
    ];
    let out = run(dir, &args);
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&dir.join("c.csv"));
    assert_eq!(rows[0], "method,step,rel_l2_error");
    assert_eq!(rows.len() - 1, 3 * steps);
    let summary = data_rows(&dir.join("c.csv.summary.txt"));
    let methods: Vec<&str> = summary[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["groundtruth", "deepwarp", "rsw"]);
    let freq = |m: &str| -> f64 { summary.iter().find(|l| l.starts_with(&format!("{m},"))).unwrap().split(',').nth(3).unwrap().parse().unwrap() };
    let bin = 1.0 / (steps as f64 * 0.02);
    assert!((freq("groundtruth") - freq("deepwarp")).abs() <= bin);
}

#[test]
fn features_csv() {
    let dir = fixture();
    assert!(run(dir, &["--config", "tiny.cfg", "--quiet", "features", "--out", "f.csv"]).status.success());
    let rows = data_rows(&dir.join("f.csv"));
    assert_eq!(rows[0], "node,g,p,d");
    assert_eq!(rows.len() - 1, 5 * 2 * 2);
}

#[test]
fn partition_graph_isomorphism() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["partition-graph", "--set", "mesh.shape=t", "--other-mesh", "shape:arrow"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("domains: 3") && text.contains("isomorphic: yes") && text.contains("map 0 -> 0"));
    let out = run(dir.path(), &["partition-graph", "--set", "mesh.shape=y", "--other-mesh", "shape:cross"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("isomorphic: no"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--config", "missing.cfg", "info"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["--set", "sim.stepz=1", "info"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["train", "--data", "missing.dwtp"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["--set", "material.poisson=0.7", "simulate", "--method", "linear"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["info"]).status.code(), Some(0));
}

#[test]
fn reference_config_scale() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/reference.cfg");
    let out = run(Path::new("."), &["--config", cfg.to_str().unwrap(), "info"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let tets: usize = text.split(" tets").next().unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((2500..=2800).contains(&tets), "{tets}");
    let body = std::fs::read_to_string(cfg).unwrap();
    assert!(body.contains("ramp.cap = 2\n") && body.contains("train.epochs = 10\n"));
}
