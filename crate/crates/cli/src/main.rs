use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use satnc::coding::Redundancy;
use satnc::simulator::SimConfig;
use satnc_cli::optimize::optimize_generation_size;
use satnc_cli::spec::{self, ExperimentSpec, OptimizeOptions, Origin, Preset, SpecError};
use satnc_cli::sweep::worker_pool;
use satnc_cli::{execute, write_outputs, CliError};

#[derive(Parser)]
#[command(name = "satnc", version, about = "Coded transport over bursty satellite links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset figure or a TOML experiment file.
    Run {
        #[arg(long, conflicts_with = "config")]
        preset: Option<Preset>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; the manifest goes to <out>.manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        stream_len: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Search the generation size minimising mean delay at one operating point.
    OptimizeK {
        #[arg(long, default_value = "1.25")]
        r: String,
        #[arg(long, default_value_t = 1.0)]
        mean_burst: f64,
        #[arg(long, default_value_t = 100_000)]
        stream_len: u64,
        #[arg(long, default_value_t = 10)]
        reps: u32,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64,128")]
        grid: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        refine: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Three-link tandem comparison of end-to-end and hop-by-hop coding.
    Tandem {
        /// Three comma-separated link erasure probabilities.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        stream_len: Option<u64>,
        /// 0 codes the whole stream as one block.
        #[arg(long)]
        block_size: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn override_with<T>(spec: &mut ExperimentSpec, key: &str, v: Option<T>, set: impl FnOnce(&mut ExperimentSpec, T)) {
    if let Some(v) = v {
        set(spec, v);
        spec.origins.insert(key.to_string(), Origin::User);
    }
}

fn finish(spec: &ExperimentSpec, out: Option<PathBuf>) -> Result<(), CliError> {
    let (csv, manifest) = execute(spec)?;
    match out.or_else(|| spec.out.clone()) {
        Some(path) => {
            write_outputs(&path, &csv, &manifest)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            preset,
            config,
            out,
            seed,
            reps,
            stream_len,
            workers,
        } => {
            let mut s = match (preset, config) {
                (Some(p), _) => spec::preset(p),
                (None, Some(path)) => spec::load_config(&path)?,
                (None, None) => return Err(SpecError::new("preset", "give --preset or --config").into()),
            };
            override_with(&mut s, "seed", seed, |s, v| s.master_seed = v);
            override_with(&mut s, "replications", reps, |s, v| s.replications = v);
            override_with(&mut s, "workers", workers, |s, v| s.workers = v);
            override_with(&mut s, "stream_len", stream_len, |s, v| {
                s.base.stream_len = v;
                if let Some(t) = s.tandem.as_mut() {
                    t.stream_len = v;
                }
            });
            finish(&s, out)
        }
        Command::OptimizeK {
            r,
            mean_burst,
            stream_len,
            reps,
            grid,
            seed,
            refine,
            workers,
        } => {
            let redundancy: Redundancy = r
                .parse()
                .map_err(|e: satnc::coding::CodingError| SpecError::new("r", e.to_string()))?;
            let base = SimConfig {
                redundancy,
                mean_burst,
                stream_len,
                ..spec::preset(Preset::Fig3).base
            };
            let options = OptimizeOptions {
                grid,
                replications: reps,
                refine,
            };
            if options.grid.is_empty() || options.grid.contains(&0) || reps == 0 {
                return Err(SpecError::new("grid", "needs positive sizes and reps >= 1").into());
            }
            let pool = worker_pool(workers)?;
            let sel = optimize_generation_size(&base, &options, seed, &pool).map_err(|source| {
                satnc_cli::sweep::SweepError::Run {
                    point: format!("R={redundancy} E[L]={mean_burst}"),
                    source,
                }
            })?;
            println!("{}", serde_json::to_string_pretty(&sel).expect("selection serialises"));
            Ok(())
        }
        Command::Tandem {
            eps,
            stream_len,
            block_size,
            reps,
            seed,
            out,
            workers,
        } => {
            let mut s = spec::preset(Preset::Fig7);
            let t = s.tandem.as_mut().expect("tandem preset");
            if let Some(e) = &eps {
                t.erasures = e
                    .as_slice()
                    .try_into()
                    .map_err(|_| SpecError::new("eps", "needs exactly three values"))?;
            }
            if let Some(n) = stream_len {
                t.stream_len = n;
            }
            if let Some(b) = block_size {
                t.block_size = (b > 0).then_some(b);
            }
            for (key, given) in [
                ("erasures", eps.is_some()),
                ("stream_len", stream_len.is_some()),
                ("block_size", block_size.is_some()),
            ] {
                if given {
                    s.origins.insert(key.into(), Origin::User);
                }
            }
            override_with(&mut s, "replications", reps, |s, v| s.replications = v);
            override_with(&mut s, "seed", seed, |s, v| s.master_seed = v);
            override_with(&mut s, "workers", workers, |s, v| s.workers = v);
            finish(&s, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
