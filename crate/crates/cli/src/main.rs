use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cddlab::datagen::{generate_corpus, save_corpus};
use cddlab::harness::{
    default_run_root, emit_plots, evaluate_checkpoint, execute_run, metrics_file_text, run_sweep,
    runs_table, Axis, DataSource, PlotOptions, RunConfig, RunRecord, SweepSpec, CONFIG_FILE,
    RECORD_FILE,
};

#[derive(Parser)]
#[command(
    name = "cddlab",
    version,
    about = "Distillation-based anomaly detection under noisy training data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it to disk.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run and evaluate it.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Root for run directories; defaults to $CDDLAB_RUN_ROOT or ./runs.
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Evaluate a finished run directory, or a config plus checkpoint.
    Eval {
        /// Run directory.
        run: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to evaluate; defaults to the run's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a grid of configurations with replicates.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training noise ratios, comma separated.
        #[arg(long)]
        rnoise: Option<String>,
        /// Algorithms, comma separated (rd, cdd).
        #[arg(long)]
        algo: Option<String>,
        /// Extra axis `key=v1,v2` (use `;` between values that contain commas).
        #[arg(long = "axis")]
        axes: Vec<String>,
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw figures and tables for run directories or sweep directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Test sample id to draw an overlay for; repeatable.
        #[arg(long = "overlay")]
        overlays: Vec<String>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none() && self.sets.is_empty()
    }

    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_text(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        for s in &self.sets {
            let Some((k, v)) = s.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{s}`");
            };
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train { config, root } => train(&config, root),
        Command::Eval {
            run,
            config,
            checkpoint,
        } => eval(run.as_deref(), &config, checkpoint),
        Command::Sweep {
            config,
            rnoise,
            algo,
            axes,
            replicates,
            out,
        } => sweep(&config, rnoise, algo, &axes, replicates, &out),
        Command::Report {
            dirs,
            out,
            overlays,
            bins,
        } => report(&dirs, &out, overlays, bins),
    }
}

fn gen_data(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = args.load()?;
    if cfg.source != DataSource::Synthetic {
        bail!("gen-data only generates synthetic corpora");
    }
    let corpus = generate_corpus(&cfg.gen_spec())?;
    save_corpus(&corpus, out)?;
    println!(
        "wrote {} train normals, {} test normals, {} anomalies to {}",
        corpus.train_normals.len(),
        corpus.test_normals.len(),
        corpus.anomalies.len(),
        out.display()
    );
    Ok(())
}

fn train(args: &ConfigArgs, root: Option<PathBuf>) -> Result<()> {
    let cfg = args.load()?;
    let root = root.unwrap_or_else(default_run_root);
    let outcome = execute_run(&cfg, &root)?;
    let rec = &outcome.record;
    if outcome.reused {
        println!("reused {}", rec.dir.display());
    } else {
        println!("run {} ({:.1} s)", rec.dir.display(), rec.wall_clock_secs);
    }
    print!("{}", metrics_file_text(&rec.reports));
    Ok(())
}

fn eval(run: Option<&Path>, args: &ConfigArgs, checkpoint: Option<PathBuf>) -> Result<()> {
    let (cfg, ckpt) = match run {
        Some(dir) => {
            if !args.is_empty() {
                bail!("give either a run directory or --config/--set, not both");
            }
            let text = fs::read_to_string(dir.join(CONFIG_FILE))
                .with_context(|| format!("{} is not a run directory", dir.display()))?;
            let cfg = RunConfig::from_text(&text)?;
            let ckpt = checkpoint.unwrap_or_else(|| dir.join(cddlab::harness::FINAL_CHECKPOINT));
            (cfg, ckpt)
        }
        None => {
            let Some(ckpt) = checkpoint else {
                bail!("without a run directory, --checkpoint is required");
            };
            (args.load()?, ckpt)
        }
    };
    let evals = evaluate_checkpoint(&cfg, &ckpt)?;
    let reports: Vec<_> = evals.into_iter().map(|e| e.report).collect();
    print!("{}", metrics_file_text(&reports));
    Ok(())
}

fn sweep(
    args: &ConfigArgs,
    rnoise: Option<String>,
    algo: Option<String>,
    extra: &[String],
    replicates: usize,
    out: &Path,
) -> Result<()> {
    let base = args.load()?;
    let mut axes = Vec::new();
    if let Some(r) = rnoise {
        axes.push(Axis::parse(&format!("split.r_noise={r}"))?);
    }
    if let Some(a) = algo {
        axes.push(Axis::parse(&format!("train.algorithm={a}"))?);
    }
    for a in extra {
        axes.push(Axis::parse(a)?);
    }
    let spec = SweepSpec {
        base,
        axes,
        replicates,
    };
    let result = run_sweep(&spec, out, &mut |r| match (&r.record, &r.error) {
        (Some(rec), _) => eprintln!(
            "{} {} ({:.1} s)",
            if r.reused { "reused" } else { "done" },
            r.run_id,
            rec.wall_clock_secs
        ),
        (None, Some(e)) => eprintln!("failed {}: {e}", r.run_id),
        (None, None) => {}
    })?;
    print!("{}", fs::read_to_string(out.join("results.txt"))?);
    let failed: usize = result.cells.iter().map(|c| c.n_failed()).sum();
    if failed > 0 {
        eprintln!(
            "{failed} run(s) failed; see {}",
            out.join("runs.csv").display()
        );
    }
    Ok(())
}

/// Run directories under `dir`: itself, its children (a run root), or `dir/runs` (a sweep).
fn collect_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(RECORD_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    for parent in [dir.join("runs"), dir.to_path_buf()] {
        if !parent.is_dir() {
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(&parent)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(RECORD_FILE).exists())
            .collect();
        if !found.is_empty() {
            found.sort();
            return Ok(found);
        }
    }
    bail!("no finished runs in {}", dir.display())
}

fn report(dirs: &[PathBuf], out: &Path, overlay_ids: Vec<String>, bins: usize) -> Result<()> {
    let mut records = Vec::new();
    for d in dirs {
        for run in collect_runs(d)? {
            records
                .push(RunRecord::load(&run).with_context(|| format!("loading {}", run.display()))?);
        }
    }
    let options = PlotOptions {
        n_bins: bins,
        overlay_ids,
        ..PlotOptions::default()
    };
    let written = emit_plots(&records, out, &options)?;
    fs::write(out.join("runs.csv"), runs_table(&records))?;
    println!(
        "{} runs, {} files in {}",
        records.len(),
        written.len() + 1,
        out.display()
    );
    Ok(())
}
