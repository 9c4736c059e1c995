//! `deepwarp` command-line driver.

mod commands;
mod config;
mod failure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use failure::Failure;

type Job = fn(&RunConfig, &Path) -> Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "deepwarp", version, about = "Learned nonlinear warping of linear FEM")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Override any configuration key, e.g. `--set sim.dt=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct MeshFlags {
    /// Mesh prefix; reads `<prefix>.node` and `<prefix>.ele`.
    #[arg(long)]
    mesh: Option<String>,
    /// Anchor file, one node index per line.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Material model: linear, corotational, stvk, neohookean.
    #[arg(long)]
    material: Option<String>,
}

#[derive(Args, Debug, Default)]
struct SimFlags {
    /// Trained network file.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Comma-separated node indices, or `auto`.
    #[arg(long)]
    track: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print mesh, network and dataset summaries.
    Info {
        #[command(flatten)]
        mesh: MeshFlags,
        #[arg(long)]
        net: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Generate registered training records.
    GenData {
        #[command(flatten)]
        mesh: MeshFlags,
        #[arg(long)]
        n_alpha: Option<usize>,
        #[arg(long)]
        n_beta: Option<usize>,
        #[arg(long)]
        ramp_factor: Option<f64>,
    },
    /// Train a network on a dataset file.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run one method and write the tracked-node trajectory.
    Simulate {
        #[command(flatten)]
        mesh: MeshFlags,
        #[command(flatten)]
        sim: SimFlags,
        /// linear, mw, rsw, deepwarp or groundtruth.
        #[arg(long)]
        method: Option<String>,
    },
    /// Score methods against the nonlinear ground truth.
    Compare {
        #[command(flatten)]
        mesh: MeshFlags,
        #[command(flatten)]
        sim: SimFlags,
        /// Comma-separated method list.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Dump per-node static features as CSV.
    Features {
        #[command(flatten)]
        mesh: MeshFlags,
    },
    /// Print a partition's domain graph and optionally test isomorphism.
    PartitionGraph {
        #[command(flatten)]
        mesh: MeshFlags,
        /// One domain label per tet line.
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Second partition to compare against.
        #[arg(long)]
        other: Option<PathBuf>,
        /// Mesh prefix of the second partition, or `shape:<t|y|arrow|cross|box>`.
        #[arg(long)]
        other_mesh: Option<String>,
    },
}

fn set(cfg: &mut RunConfig, key: &str, value: Option<String>) -> Result<(), Failure> {
    match value {
        Some(v) => cfg.set(key, &v).map_err(Failure::Validation),
        None => Ok(()),
    }
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

fn apply_mesh(cfg: &mut RunConfig, m: MeshFlags) -> Result<(), Failure> {
    if let Some(prefix) = &m.mesh {
        set(cfg, "mesh.nodes", Some(format!("{prefix}.node")))?;
        set(cfg, "mesh.tets", Some(format!("{prefix}.ele")))?;
    }
    if m.anchors.is_some() {
        set(cfg, "mesh.anchor", Some("file".into()))?;
    }
    set(cfg, "mesh.anchors", path_str(m.anchors))?;
    set(cfg, "material.model", m.material)
}

fn apply_sim(cfg: &mut RunConfig, s: SimFlags) -> Result<(), Failure> {
    set(cfg, "sim.net", path_str(s.net))?;
    set(cfg, "sim.steps", s.steps.map(|v| v.to_string()))?;
    set(cfg, "sim.dt", s.dt.map(|v| v.to_string()))?;
    set(cfg, "sim.track", s.track)
}

fn default_out(command: &Command) -> &'static str {
    match command {
        Command::GenData { .. } => "dataset.dwtp",
        Command::Train { .. } => "network.dwnn",
        Command::Simulate { .. } => "trajectory.csv",
        Command::Compare { .. } => "compare.csv",
        Command::Features { .. } => "features.csv",
        Command::Info { .. } | Command::PartitionGraph { .. } => "",
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    // flags override file values; explicit --set wins over both
    set(&mut cfg, "seed", cli.common.seed.map(|s| s.to_string()))?;
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from(default_out(&cli.command)));
    let job: Job = match cli.command {
        Command::Info { mesh, net, data } => {
            apply_mesh(&mut cfg, mesh)?;
            set(&mut cfg, "sim.net", path_str(net))?;
            set(&mut cfg, "data.path", path_str(data))?;
            |c, _| commands::info(c)
        }
        Command::GenData { mesh, n_alpha, n_beta, ramp_factor } => {
            apply_mesh(&mut cfg, mesh)?;
            set(&mut cfg, "data.n_alpha", n_alpha.map(|v| v.to_string()))?;
            set(&mut cfg, "data.n_beta", n_beta.map(|v| v.to_string()))?;
            set(&mut cfg, "ramp.factor", ramp_factor.map(|v| v.to_string()))?;
            commands::gen_data
        }
        Command::Train { data, epochs } => {
            set(&mut cfg, "data.path", path_str(data))?;
            set(&mut cfg, "train.epochs", epochs.map(|v| v.to_string()))?;
            commands::train_cmd
        }
        Command::Simulate { mesh, sim, method } => {
            apply_mesh(&mut cfg, mesh)?;
            apply_sim(&mut cfg, sim)?;
            set(&mut cfg, "sim.method", method)?;
            commands::simulate
        }
        Command::Compare { mesh, sim, methods } => {
            apply_mesh(&mut cfg, mesh)?;
            apply_sim(&mut cfg, sim)?;
            set(&mut cfg, "compare.methods", methods)?;
            commands::compare
        }
        Command::Features { mesh } => {
            apply_mesh(&mut cfg, mesh)?;
            commands::features
        }
        Command::PartitionGraph { mesh, partition, other, other_mesh } => {
            apply_mesh(&mut cfg, mesh)?;
            set(&mut cfg, "partition.file", path_str(partition))?;
            set(&mut cfg, "partition.other", path_str(other))?;
            set(&mut cfg, "partition.other_mesh", other_mesh)?;
            |c, _| commands::partition_graph(c)
        }
    };
    for pair in &cli.common.overrides {
        cfg.set_pair(pair)?;
    }
    job(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
