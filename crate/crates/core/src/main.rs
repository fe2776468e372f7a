use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pathnorm::data::SyntheticSpec;
use pathnorm::graph::parse_architecture;
use pathnorm::harness::{compare_report, run_training, DatasetSpec, ExperimentConfig, Seeds, ValidationSpec};
use pathnorm::init::{init_balanced, InitSpec};
use pathnorm::optim::OptimizerKind;
use pathnorm::pathnorms::{group_norm, max_norm, path_norm_dp, GroupNormParams};
use pathnorm::rescale::{unbalance, LogNormalParams};
use pathnorm::{NetworkGraph, Result, WeightVector};

#[derive(Parser)]
#[command(name = "pathnorm", version, about = "Path-SGD, SGD and AdaGrad on RELU DAG networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write a run directory.
    Train(TrainArgs),
    /// Print group norms and the path norm of a weight vector as JSON.
    Norms(NormsArgs),
    /// Join the learning curves of several run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for comparison.csv and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the graph file of a layered network.
    Graph {
        #[arg(long)]
        arch: String,
    },
    /// Print initial weights for a graph.
    Init(InitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OptArg {
    Sgd,
    Adagrad,
    Pathsgd,
}

impl From<OptArg> for OptimizerKind {
    fn from(o: OptArg) -> Self {
        match o {
            OptArg::Sgd => OptimizerKind::Sgd,
            OptArg::Adagrad => OptimizerKind::AdaGrad,
            OptArg::Pathsgd => OptimizerKind::PathSgd,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Balanced,
    Unbalanced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataArg {
    Mnist,
    Synthetic,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layer sizes, e.g. 784x128x128x10.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_enum)]
    opt: Option<OptArg>,
    /// Step size 10^-α; omit to search the α grid on a validation holdout.
    #[arg(long = "lr-exp", value_parser = clap::value_parser!(u32).range(0..=10))]
    lr_exp: Option<u32>,
    /// Comma-separated α grid for the search.
    #[arg(long = "lr-grid", value_delimiter = ',')]
    lr_grid: Option<Vec<u32>>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Number of random unit rescalings applied to the balanced weights.
    #[arg(long = "init-unbalance")]
    init_unbalance: Option<usize>,
    #[arg(long = "unbalance-seed")]
    unbalance_seed: Option<u64>,
    /// Retain probability of hidden units.
    #[arg(long)]
    dropout: Option<f64>,
    /// Seed for the initial weights, batch order, dropout and split.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    data: Option<DataArg>,
    #[arg(long = "mnist-dir")]
    mnist_dir: Option<PathBuf>,
    /// Keep only the first N training examples.
    #[arg(long = "train-limit")]
    train_limit: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zeros in the wall_s column.
    #[arg(long = "no-wall-time")]
    no_wall_time: bool,
}

#[derive(Args)]
struct GraphSource {
    /// Graph file.
    #[arg(long, conflicts_with = "arch")]
    graph: Option<PathBuf>,
    /// Layered shorthand instead of a graph file.
    #[arg(long)]
    arch: Option<String>,
}

impl GraphSource {
    fn load(&self) -> Result<NetworkGraph> {
        match (&self.graph, &self.arch) {
            (Some(path), _) => NetworkGraph::from_file(path),
            (None, Some(arch)) => NetworkGraph::layered(&parse_architecture(arch)?),
            (None, None) => Err(pathnorm::Error::Config("pass --graph or --arch".into())),
        }
    }
}

#[derive(Args)]
struct NormsArgs {
    #[command(flatten)]
    source: GraphSource,
    /// Weight file; defaults to a balanced draw from --init-seed.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long = "init-seed", default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    source: GraphSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    unbalance: Option<usize>,
    #[arg(long = "unbalance-seed", default_value_t = 0)]
    unbalance_seed: u64,
}

fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        architecture: vec![784, 128, 128, 10],
        dataset: DatasetSpec::Mnist {
            dir: PathBuf::from("data/mnist-subset"),
            train_limit: None,
        },
        optimizer: OptimizerKind::PathSgd,
        alpha: None,
        alpha_grid: (0..=10).collect(),
        p: 2.0,
        init: InitSpec::Balanced { seed: 0 },
        dropout: None,
        epochs: 30,
        batch_size: 100,
        seeds: Seeds::default(),
        validation: ValidationSpec::default(),
        output_dir: Some(PathBuf::from("runs/latest")),
        record_wall_time: true,
    }
}

fn init_seed(init: &InitSpec) -> u64 {
    match *init {
        InitSpec::Balanced { seed } | InitSpec::Unbalanced { seed, .. } => seed,
    }
}

fn build_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => default_config(),
    };
    if let Some(arch) = &a.arch {
        cfg.architecture = parse_architecture(arch)?;
    }
    if let Some(o) = a.opt {
        cfg.optimizer = o.into();
    }
    if let Some(alpha) = a.lr_exp {
        cfg.alpha = Some(alpha);
    }
    if let Some(grid) = &a.lr_grid {
        cfg.alpha = None;
        cfg.alpha_grid = grid.clone();
    }
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(r) = a.dropout {
        cfg.dropout = Some(r);
    }
    if let Some(seed) = a.seed {
        cfg.seeds = Seeds {
            shuffle: seed,
            dropout: seed,
            split: seed,
        };
        cfg.init = match cfg.init {
            InitSpec::Balanced { .. } => InitSpec::Balanced { seed },
            InitSpec::Unbalanced {
                k,
                unbalance_seed,
                lognormal,
                ..
            } => InitSpec::Unbalanced {
                seed,
                k,
                unbalance_seed,
                lognormal,
            },
        };
    }
    let wants_unbalanced = a.init == Some(InitArg::Unbalanced) || a.init_unbalance.is_some();
    if a.init == Some(InitArg::Balanced) {
        cfg.init = InitSpec::Balanced {
            seed: init_seed(&cfg.init),
        };
    } else if wants_unbalanced {
        let hidden: usize = cfg.architecture[1..cfg.architecture.len() - 1].iter().sum();
        let (k0, u0, ln0) = match cfg.init {
            InitSpec::Unbalanced {
                k,
                unbalance_seed,
                lognormal,
                ..
            } => (k, unbalance_seed, lognormal),
            InitSpec::Balanced { .. } => (hidden / 2, 0, LogNormalParams::default()),
        };
        cfg.init = InitSpec::Unbalanced {
            seed: init_seed(&cfg.init),
            k: a.init_unbalance.unwrap_or(k0),
            unbalance_seed: a.unbalance_seed.unwrap_or(u0),
            lognormal: ln0,
        };
    }
    match a.data {
        Some(DataArg::Mnist) if !matches!(cfg.dataset, DatasetSpec::Mnist { .. }) => {
            cfg.dataset = default_config().dataset;
        }
        Some(DataArg::Synthetic) if !matches!(cfg.dataset, DatasetSpec::Synthetic { .. }) => {
            cfg.dataset = DatasetSpec::Synthetic {
                teacher: SyntheticSpec {
                    teacher: cfg.architecture.clone(),
                    noise: 0.0,
                },
                train: 5000,
                test: 1000,
                seed: a.seed.unwrap_or(0),
            };
        }
        _ => {}
    }
    if let DatasetSpec::Mnist { dir, train_limit } = &mut cfg.dataset {
        if let Some(d) = &a.mnist_dir {
            *dir = d.clone();
        }
        if let Some(n) = a.train_limit {
            *train_limit = Some(n);
        }
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(out) = &a.out {
        cfg.output_dir = Some(out.clone());
    }
    if a.no_wall_time {
        cfg.record_wall_time = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_metric(x: f64) -> String {
    if x.is_nan() {
        "-".to_owned()
    } else {
        format!("{x:.6}")
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = build_config(&args)?;
            let outcome = run_training(&cfg)?;
            println!("optimizer {} alpha {}", cfg.optimizer, outcome.alpha);
            println!("epoch  ce_train  err_train  err_test");
            for r in &outcome.records {
                println!(
                    "{:>5}  {}  {}  {}",
                    r.epoch,
                    fmt_metric(r.ce_train),
                    fmt_metric(r.err_train),
                    fmt_metric(r.err_test)
                );
            }
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
        }
        Command::Norms(args) => {
            let g = args.source.load()?;
            let w = match &args.weights {
                Some(path) => WeightVector::from_file(path)?,
                None => init_balanced(&g, args.init_seed),
            };
            let p = args.p;
            let out = json!({
                "p": p,
                "depth": g.depth(),
                "mu_p_p": group_norm(&g, &w, GroupNormParams::new(p, p)?)?,
                "mu_p_inf": max_norm(&g, &w, p)?,
                "phi_p": path_norm_dp(&g, &w, p)?,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Compare { runs, out } => {
            let report = compare_report(&runs)?;
            print!("epoch");
            for l in &report.labels {
                print!("\t{l}.ce_train\t{l}.err_train");
            }
            println!();
            for (e, row) in report.epochs.iter().zip(&report.rows) {
                print!("{e}");
                for r in row {
                    print!("\t{}\t{}", fmt_metric(r.ce_train), fmt_metric(r.err_train));
                }
                println!();
            }
            if let Some(dir) = out {
                report.write(&dir)?;
            }
        }
        Command::Graph { arch } => {
            print!("{}", NetworkGraph::layered(&parse_architecture(&arch)?)?.to_text());
        }
        Command::Init(args) => {
            let g = args.source.load()?;
            let mut w = init_balanced(&g, args.seed);
            if let Some(k) = args.unbalance {
                w = unbalance(&g, &w, k, args.unbalance_seed, LogNormalParams::default())?;
            }
            print!("{}", w.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
