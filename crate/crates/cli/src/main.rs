use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use geotkg::diagnostics::{diagnose, tree_distortion_bench, write_bench_csv, DiagnoseConfig};
use geotkg::graphstore::{load_bin_widths, load_tsv, load_tsv_with, TemporalKG};
use geotkg::synthetic::{generate_planted, PlantedConfig};
use geotkg::trainer::{
    evaluate_ranking, load_checkpoint, random_chance_mrr, save_checkpoint, temporal_split, train, TrainConfig,
    TrainTrace, TrainingData,
};

const CONFIG_ECHO: &str = "config.json";
const MODEL_FILE: &str = "model.json";

#[derive(Parser)]
#[command(name = "geotkg", version, about = "Mixture-of-geometries temporal knowledge graph toolkit")]
#[command(after_help = "Set RUST_LOG=debug for per-iteration training logs.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; unspecified fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a planted dataset (events.tsv, bins.json, truth.json).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_bins: Option<usize>,
    },
    /// Train on the leading bins of a dataset; writes a checkpoint and trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory holding events.tsv and optionally bins.json.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        test_frac: Option<f64>,
    },
    /// Filtered MRR and Hits@{1,3,10} on the held-out bins.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test_frac: Option<f64>,
    },
    /// Constants, audits and instability flags for a trained model.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test_frac: Option<f64>,
    },
    /// Tree embedding distortion, hyperbolic versus Euclidean.
    BenchGeometry {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        /// Comma-separated embedding dimensions.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchConfig {
    depth: usize,
    dims: Vec<usize>,
    seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { depth: 7, dims: vec![2], seed: 0 }
    }
}

/// Everything a run depends on. The resolved copy is echoed next to the
/// outputs and can be passed back through `--config` to reproduce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    command: Option<String>,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    /// Fraction of final bins held out.
    test_frac: f64,
    generate: PlantedConfig,
    train: TrainConfig,
    diagnose: DiagnoseConfig,
    bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            data: None,
            model: None,
            out: None,
            test_frac: 0.2,
            generate: PlantedConfig::default(),
            train: TrainConfig::default(),
            diagnose: DiagnoseConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    fn resolve(command: &str, common: &Common) -> Result<Self> {
        let mut cfg: RunConfig = match &common.config {
            Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg.command = Some(command.to_string());
        if let Some(seed) = common.seed {
            cfg.generate.seed = seed;
            cfg.train.seed = seed;
            cfg.diagnose.seed = seed;
            cfg.bench.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.out.clone().context("--out is required")?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().context("--data is required")
    }

    fn model_path(&self) -> Result<PathBuf> {
        Ok(self.model.as_deref().context("--model is required")?.join(MODEL_FILE))
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(CONFIG_ECHO), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

fn load_dataset(dir: &Path) -> Result<TemporalKG> {
    let kg = load_tsv(dir.join("events.tsv"))?;
    let bins = dir.join("bins.json");
    if bins.exists() {
        let widths = load_bin_widths(&bins, kg.n_bins())?;
        return Ok(kg.with_bin_widths(widths)?);
    }
    Ok(kg)
}

/// Reloads a dataset against a checkpoint's entity and relation universe.
fn load_dataset_for(dir: &Path, n_entities: usize, n_relations: usize) -> Result<TemporalKG> {
    let sized = load_dataset(dir)?;
    Ok(load_tsv_with(dir.join("events.tsv"), n_entities, n_relations, sized.bin_widths().to_vec())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, n_bins } => {
            let mut cfg = RunConfig::resolve("generate", &common)?;
            if let Some(n) = n_bins {
                cfg.generate.n_bins = n;
            }
            let out = cfg.out_dir()?;
            let data = generate_planted(&cfg.generate)?;
            data.save(&out)?;
            cfg.echo(&out)?;
            log::info!("wrote {} events over {} entities to {}", data.kg.len(), data.kg.n_entities(), out.display());
        }
        Command::Train { common, data, epochs, learning_rate, test_frac } => {
            let mut cfg = RunConfig::resolve("train", &common)?;
            cfg.data = data.or(cfg.data);
            cfg.test_frac = test_frac.unwrap_or(cfg.test_frac);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            let out = cfg.out_dir()?;
            let kg = load_dataset(cfg.data_dir()?)?;
            let (train_kg, _, cut) = temporal_split(&kg, cfg.test_frac)?;
            log::info!("training on bins 0..{cut} ({} events)", train_kg.len());
            let (params, trace) = train(&train_kg, &cfg.train)?;
            save_checkpoint(&params, &cfg.train, out.join(MODEL_FILE))?;
            trace.write_csv(out.join("trace.csv"))?;
            trace.write_json(BufWriter::new(fs::File::create(out.join("trace.json"))?))?;
            cfg.echo(&out)?;
            let last = trace.records.last();
            println!(
                "iterations {} converged {} J {:.6}",
                trace.records.len(),
                trace.converged,
                last.map_or(f64::NAN, |r| r.j_end)
            );
        }
        Command::Eval { common, data, model, test_frac } => {
            let mut cfg = RunConfig::resolve("eval", &common)?;
            cfg.data = data.or(cfg.data);
            cfg.model = model.or(cfg.model);
            cfg.test_frac = test_frac.unwrap_or(cfg.test_frac);
            let out = cfg.out_dir()?;
            let (params, train_cfg) = load_checkpoint(cfg.model_path()?)?;
            let kg = load_dataset_for(cfg.data_dir()?, params.n_entities(), params.n_relations())?;
            let (_, test_kg, _) = temporal_split(&kg, cfg.test_frac)?;
            let metrics = evaluate_ranking(&params, &kg, test_kg.quadruples(), train_cfg.features)?;
            let chance = random_chance_mrr(params.n_entities());
            write_json(&out.join("metrics.json"), &serde_json::json!({ "metrics": metrics, "random_chance_mrr": chance }))?;
            cfg.echo(&out)?;
            println!(
                "MRR {:.4} Hits@1 {:.4} Hits@3 {:.4} Hits@10 {:.4} queries {} (chance MRR {:.4})",
                metrics.mrr, metrics.hits1, metrics.hits3, metrics.hits10, metrics.n_queries, chance
            );
        }
        Command::Diagnose { common, data, model, test_frac } => {
            let mut cfg = RunConfig::resolve("diagnose", &common)?;
            cfg.data = data.or(cfg.data);
            cfg.model = model.or(cfg.model);
            cfg.test_frac = test_frac.unwrap_or(cfg.test_frac);
            let out = cfg.out_dir()?;
            let (params, train_cfg) = load_checkpoint(cfg.model_path()?)?;
            let kg = load_dataset_for(cfg.data_dir()?, params.n_entities(), params.n_relations())?;
            let (train_kg, _, _) = temporal_split(&kg, cfg.test_frac)?;
            let training = TrainingData::build(&train_kg, &train_cfg)?;
            let trace_path = cfg.model.as_deref().map(|m| m.join("trace.json"));
            let trace: Option<TrainTrace> = match trace_path.filter(|p| p.exists()) {
                Some(p) => Some(serde_json::from_slice(&fs::read(&p)?)?),
                None => None,
            };
            let report = diagnose(&params, &training, trace.as_ref(), train_cfg.features.s_max, &cfg.diagnose)?;
            write_json(&out.join("diagnostics.json"), &report)?;
            cfg.echo(&out)?;
            match &report.flags {
                Some(f) => println!("instability flags raised: {}", f.any()),
                None => println!("no trace found; instability monitor skipped"),
            }
        }
        Command::BenchGeometry { common, depth, dims } => {
            let mut cfg = RunConfig::resolve("bench-geometry", &common)?;
            if let Some(d) = depth {
                cfg.bench.depth = d;
            }
            if let Some(d) = dims {
                cfg.bench.dims = d;
            }
            let out = cfg.out_dir()?;
            let rows = tree_distortion_bench(cfg.bench.depth, &cfg.bench.dims, cfg.bench.seed)?;
            write_bench_csv(&rows, BufWriter::new(fs::File::create(out.join("bench.csv"))?))?;
            cfg.echo(&out)?;
            for r in &rows {
                println!("{:>2} {:>3} {:<2} worst {:.4}", r.depth, r.dim, r.geometry.short_name(), r.worst_distortion);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let code = err.chain().find_map(|e| e.downcast_ref::<geotkg::Error>()).map_or(1, |e| e.category_code());
    u8::try_from(code).unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

