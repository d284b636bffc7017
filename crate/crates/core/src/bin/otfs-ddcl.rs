use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otfs_ddcl::channel::DdChannel;
use otfs_ddcl::constellation::make_constellation;
use otfs_ddcl::harness::{
    gen_dataset, read_csv, read_pair, render_svg, run_sweep, write_csv, ExperimentConfig,
};
use otfs_ddcl::link::{fer_theory, noise_variance_from_snr_db, Precoder};
use otfs_ddcl::net::{
    read_checkpoint, train, write_checkpoint, Checkpoint, CheckpointMeta, LossConfig, NetShape,
    TrainingSet,
};
use otfs_ddcl::{Error, Result};

/// Worker-thread count for the parallel parts; results do not depend on it.
const THREADS_ENV: &str = "OTFS_DDCL_THREADS";

#[derive(Parser)]
#[command(
    name = "otfs-ddcl",
    version,
    about = "OTFS predictive precoding experiments"
)]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate channel tracks and write a training set.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the precoder network on a training set.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of the cost history.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// FER-versus-SNR sweep over held-out channels.
    Sweep {
        /// Trained checkpoint; needed for the ddcl schemes.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form FER of a stored channel/precoder pair.
    EvalTheory {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, conflicts_with = "snr_db", required_unless_present = "snr_db")]
        sigma2: Option<f64>,
        #[arg(long)]
        snr_db: Option<f64>,
        /// QAM order; defaults to the configured one.
        #[arg(long)]
        order: Option<usize>,
    },
    /// Render a sweep CSV as an SVG chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.cmd {
        Cmd::GenData { out } => {
            let ts = gen_dataset(&cfg, cfg.seed)?;
            let mut w = create(&out)?;
            ts.write(&mut w)?;
            w.flush()?;
            eprintln!("wrote {} examples to {}", ts.len(), out.display());
        }
        Cmd::Train { data, out, log } => {
            let ts = TrainingSet::<f64>::read(&mut open(&data)?)?;
            if ts.grid().mn() != cfg.grid.mn() || ts.tau() != cfg.link.tau {
                return Err(Error::Config(format!(
                    "{} does not match the configured grid or tau",
                    data.display()
                )));
            }
            let c = cfg.constellation();
            let loss = LossConfig {
                sigma2: cfg.train_sigma2(),
                power_budget: cfg.power_budget(),
                constellation: &c,
            };
            let shape = NetShape::new(cfg.grid.m, cfg.grid.n, cfg.link.streams, cfg.link.tau)?;
            let outcome = train(&ts, shape, &cfg.train, &loss, cfg.seed)?;
            let ckpt = Checkpoint {
                params: outcome.params,
                meta: CheckpointMeta {
                    power_budget: cfg.power_budget(),
                    order: cfg.link.order,
                    seed: cfg.seed,
                    iterations: outcome.iterations as u64,
                },
            };
            let mut w = create(&out)?;
            write_checkpoint(&mut w, &ckpt)?;
            w.flush()?;
            if let Some(log) = log {
                let mut w = create(&log)?;
                writeln!(w, "iteration,train_cost,val_cost")?;
                for r in &outcome.history {
                    let val = r.val_cost.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{}", r.iteration, r.train_cost, val)?;
                }
                w.flush()?;
            }
            eprintln!(
                "validation cost {:.6} -> {:.6} (best at iteration {} of {})",
                outcome.initial_val_cost,
                outcome.best_val_cost,
                outcome.best_iteration,
                outcome.iterations
            );
        }
        Cmd::Sweep { model, out } => {
            let params = match &model {
                Some(p) => {
                    let ck = read_checkpoint::<f64>(&mut open(p)?)?;
                    if ck.meta.power_budget != cfg.power_budget() || ck.meta.order != cfg.link.order
                    {
                        return Err(Error::Config(format!(
                            "{} was trained for a different power budget or constellation",
                            p.display()
                        )));
                    }
                    Some(ck.params)
                }
                None => None,
            };
            let rows = run_sweep(&cfg, params.as_ref(), cfg.seed)?;
            let mut w = create(&out)?;
            write_csv(&mut w, &rows)?;
            w.flush()?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Cmd::EvalTheory {
            pair,
            sigma2,
            snr_db,
            order,
        } => {
            let (h, p) = read_pair(&mut open(&pair)?)?;
            if h.rows() != cfg.grid.mn() {
                return Err(Error::Config(format!(
                    "{} holds a {}-point channel, the configured grid has MN = {}",
                    pair.display(),
                    h.rows(),
                    cfg.grid.mn()
                )));
            }
            let sigma2 = match (sigma2, snr_db) {
                (Some(s), _) => s,
                (None, Some(db)) => noise_variance_from_snr_db(db),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let c = make_constellation(order.unwrap_or(cfg.link.order))?
                .with_ser_model(cfg.link.ser_model);
            let power = p.frobenius_norm_sqr();
            let fer = fer_theory(
                &DdChannel::new(cfg.grid, h)?,
                None,
                &Precoder::new(p, power)?,
                sigma2,
                &c,
            )?;
            println!("{fer:.17e}");
        }
        Cmd::Plot { csv, out } => {
            let rows = read_csv(open(&csv)?)?;
            let svg = render_svg(&rows)?;
            let mut w = create(&out)?;
            w.write_all(svg.as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("otfs-ddcl: {e}");
            ExitCode::FAILURE
        }
    }
}
