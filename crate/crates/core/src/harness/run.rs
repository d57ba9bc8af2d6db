use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, DataSource, RunConfig};
use crate::cdd::{run_cdd, EpochTelemetry};
use crate::datagen::{
    build_fuad_split, generate_corpus, load_corpus, load_mvtec_layout, Corpus, FuadSplit, Setting,
};
use crate::distill::{extract_features, train_rd_features_with};
use crate::metrics::{evaluate, Evaluation, MetricsReport};
use crate::models::{save_student_params, Params, StudentArch, TeacherNet};
use crate::{Error, Result};

/// Overrides the default run root (`runs`).
pub const RUN_ROOT_ENV: &str = "CDDLAB_RUN_ROOT";

pub const CONFIG_FILE: &str = "config.cfg";
pub const TELEMETRY_FILE: &str = "telemetry.log";
pub const METRICS_FILE: &str = "metrics.txt";
pub const RECORD_FILE: &str = "record.txt";
pub const FAILED_FILE: &str = "failed.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SCORES_DIR: &str = "scores";
pub const PLOTS_DIR: &str = "plots";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.ckpt";

pub fn default_run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `rd-<digest prefix>` or `cdd-<digest prefix>`.
pub fn run_id(config: &RunConfig) -> String {
    format!("{}-{}", config.algorithm.as_str(), &config.digest()[..16])
}

/// One line of `telemetry.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum TelemetryLine {
    Rd(RdEpoch),
    Cdd(EpochTelemetry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub step_losses: Vec<f64>,
}

impl TelemetryLine {
    pub fn epoch(&self) -> usize {
        match self {
            TelemetryLine::Rd(r) => r.epoch,
            TelemetryLine::Cdd(c) => c.epoch,
        }
    }

    /// Mean step loss over every phase of the epoch.
    pub fn mean_loss(&self) -> f64 {
        match self {
            TelemetryLine::Rd(r) => r.loss,
            TelemetryLine::Cdd(c) => {
                let all: Vec<f64> = c
                    .domain_step_losses
                    .iter()
                    .flatten()
                    .chain(&c.cross_step_losses)
                    .chain(&c.hc_step_losses)
                    .copied()
                    .collect();
                if all.is_empty() {
                    0.0
                } else {
                    all.iter().sum::<f64>() / all.len() as f64
                }
            }
        }
    }
}

pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryLine>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Outcome of a finished run, persisted as `record.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub config_digest: String,
    /// Relative to `dir`.
    pub telemetry: PathBuf,
    /// Relative to `dir`; the final checkpoint comes last.
    pub checkpoints: Vec<PathBuf>,
    pub reports: Vec<MetricsReport>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn report(&self, setting: Setting) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.setting == setting)
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join(FINAL_CHECKPOINT)
    }

    fn record_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run_id={}", self.run_id);
        let _ = writeln!(s, "config_digest={}", self.config_digest);
        let _ = writeln!(s, "algorithm={}", self.config.algorithm.as_str());
        let _ = writeln!(s, "telemetry={}", self.telemetry.display());
        for c in &self.checkpoints {
            let _ = writeln!(s, "checkpoint={}", c.display());
        }
        let _ = writeln!(s, "metrics={METRICS_FILE}");
        let _ = writeln!(s, "wall_clock_secs={:.3}", self.wall_clock_secs);
        s
    }

    /// Loads a finalized run directory, checking the stored digest against the stored config.
    pub fn load(dir: &Path) -> Result<Self> {
        let name = dir.display().to_string();
        let report_err = |message: String| Error::Report {
            run: name.clone(),
            message,
        };
        let record = fs::read_to_string(dir.join(RECORD_FILE))
            .map_err(|e| report_err(format!("cannot read {RECORD_FILE}: {e}")))?;
        let config_text = fs::read_to_string(dir.join(CONFIG_FILE))
            .map_err(|e| report_err(format!("cannot read {CONFIG_FILE}: {e}")))?;
        let config = RunConfig::from_text(&config_text)?;
        let mut run_id = None;
        let mut digest = None;
        let mut telemetry = None;
        let mut checkpoints = Vec::new();
        let mut wall = 0.0;
        for line in record.lines() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            match k {
                "run_id" => run_id = Some(v.to_string()),
                "config_digest" => digest = Some(v.to_string()),
                "telemetry" => telemetry = Some(PathBuf::from(v)),
                "checkpoint" => checkpoints.push(PathBuf::from(v)),
                "wall_clock_secs" => {
                    wall = v.parse().map_err(|_| report_err("bad wall clock".into()))?
                }
                _ => {}
            }
        }
        let config_digest =
            digest.ok_or_else(|| report_err("record lacks a config digest".into()))?;
        if config_digest != config.digest() {
            return Err(report_err(format!(
                "stored digest {config_digest} does not match config.cfg ({})",
                config.digest()
            )));
        }
        let metrics = fs::read_to_string(dir.join(METRICS_FILE))
            .map_err(|e| report_err(format!("cannot read {METRICS_FILE}: {e}")))?;
        Ok(Self {
            run_id: run_id.ok_or_else(|| report_err("record lacks a run id".into()))?,
            dir: dir.to_path_buf(),
            config,
            config_digest,
            telemetry: telemetry
                .ok_or_else(|| report_err("record lacks a telemetry path".into()))?,
            checkpoints,
            reports: parse_metrics_file(&metrics)?,
            wall_clock_secs: wall,
        })
    }

    pub fn telemetry_lines(&self) -> Result<Vec<TelemetryLine>> {
        let path = self.dir.join(&self.telemetry);
        read_telemetry(&path).map_err(|e| Error::Report {
            run: self.run_id.clone(),
            message: format!("telemetry unavailable at {}: {e}", path.display()),
        })
    }
}

/// `metrics.txt` holds one report block per evaluated setting, separated by a blank line.
pub fn metrics_file_text(reports: &[MetricsReport]) -> String {
    reports
        .iter()
        .map(|r| r.to_text())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_metrics_file(text: &str) -> Result<Vec<MetricsReport>> {
    text.split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(MetricsReport::from_text)
        .collect()
}

/// Normal train images, normal test images and the anomaly pool of a run.
pub fn load_corpus_for(config: &RunConfig) -> Result<Corpus> {
    match config.source {
        DataSource::Synthetic => generate_corpus(&config.gen_spec()),
        DataSource::Corpus => load_corpus(&config.data_path),
        DataSource::Mvtec => {
            let (train_normals, test) =
                load_mvtec_layout(&config.data_path, config.gen.image_size)?;
            let (anomalies, test_normals) =
                test.into_iter().partition(|s| s.label().is_anomalous());
            Ok(Corpus {
                train_normals,
                test_normals,
                anomalies,
            })
        }
    }
}

pub fn build_split(config: &RunConfig, corpus: &Corpus, setting: Setting) -> Result<FuadSplit> {
    build_fuad_split(
        &corpus.train_normals,
        &corpus.test_normals,
        &corpus.anomalies,
        config.r_noise,
        setting,
        config.seeds.split,
    )
}

/// Trained model of a run, before evaluation.
pub struct Trained {
    pub teacher: TeacherNet,
    pub arch: StudentArch,
    pub params: Params,
    pub telemetry: Vec<TelemetryLine>,
}

/// Trains the configured algorithm on `split`'s label-free view.
///
/// `on_epoch` sees each telemetry line and the parameters after that epoch.
pub fn train_model(
    config: &RunConfig,
    split: &FuadSplit,
    on_epoch: &mut dyn FnMut(&TelemetryLine, &Params) -> Result<()>,
) -> Result<Trained> {
    config.validate()?;
    let teacher = TeacherNet::build(&config.model, config.seeds.model)?;
    let arch = StudentArch::new(&config.model)?;
    let mut params = arch.init_params(config.seeds.model);
    let mut telemetry = Vec::with_capacity(config.epochs);
    match config.algorithm {
        Algorithm::Rd => {
            let view = split.train_view();
            let features = extract_features(&teacher, view.iter().map(|s| s.pixels()))?;
            train_rd_features_with(
                &features,
                &arch,
                &mut params,
                &config.train_settings(),
                &mut |epoch, losses, p| {
                    let line = TelemetryLine::Rd(RdEpoch {
                        epoch,
                        loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
                        step_losses: losses.to_vec(),
                    });
                    on_epoch(&line, p)?;
                    telemetry.push(line);
                    Ok(())
                },
            )?;
        }
        Algorithm::Cdd => {
            let mut schedules = config.schedules.clone();
            schedules.epochs = config.epochs;
            let outcome = run_cdd(
                split,
                &teacher,
                &arch,
                &params,
                &schedules,
                &config.cdd_options(),
                &mut |t, p| {
                    let line = TelemetryLine::Cdd(t.clone());
                    on_epoch(&line, p)?;
                    telemetry.push(line);
                    Ok(())
                },
            )?;
            params = outcome.params;
        }
    }
    Ok(Trained {
        teacher,
        arch,
        params,
        telemetry,
    })
}

fn write_scores(
    dir: &Path,
    setting: Setting,
    split: &FuadSplit,
    eval: &Evaluation,
    write_train: bool,
) -> Result<()> {
    let scores_dir = dir.join(SCORES_DIR);
    fs::create_dir_all(&scores_dir)?;
    let mut test = String::from("id,label,score\n");
    for (s, m) in split.test().iter().zip(&eval.test_maps) {
        let _ = writeln!(
            test,
            "{},{},{}",
            s.id(),
            s.label().as_str(),
            m.image_score()
        );
    }
    fs::write(
        scores_dir.join(format!("test_{}.csv", setting.as_str())),
        test,
    )?;
    if write_train {
        let mut train = String::from("id,label,score\n");
        for (s, v) in split.train_eval_only().iter().zip(&eval.train_scores) {
            let _ = writeln!(train, "{},{},{}", s.id(), s.label().as_str(), v);
        }
        fs::write(scores_dir.join("train.csv"), train)?;
    }
    Ok(())
}

/// Result of [`execute_run`]: the record and whether it was reused from disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub reused: bool,
}

/// Trains, evaluates and persists one run under `root/<run id>`.
///
/// A finalized directory with the same config digest is reused as is. Any
/// other content is replaced. On failure `failed.txt` holds the error.
pub fn execute_run(config: &RunConfig, root: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let id = run_id(config);
    let dir = root.join(&id);
    if dir.join(RECORD_FILE).exists() {
        if let Ok(record) = RunRecord::load(&dir) {
            if record.config_digest == config.digest() {
                return Ok(RunOutcome {
                    record,
                    reused: true,
                });
            }
        }
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    fs::write(dir.join(CONFIG_FILE), config.canonical())?;
    match run_into(config, &id, &dir) {
        Ok(record) => Ok(RunOutcome {
            record,
            reused: false,
        }),
        Err(e) => {
            let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_into(config: &RunConfig, id: &str, dir: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    let corpus = load_corpus_for(config)?;
    let splits: Vec<FuadSplit> = config
        .settings
        .iter()
        .map(|&s| build_split(config, &corpus, s))
        .collect::<Result<_>>()?;
    drop(corpus);

    let mut log = fs::File::create(dir.join(TELEMETRY_FILE))?;
    let mut checkpoints = Vec::new();
    let arch = StudentArch::new(&config.model)?;
    let trained = train_model(config, &splits[0], &mut |line, params| {
        writeln!(log, "{}", serde_json::to_string(line)?)?;
        let epoch = line.epoch() + 1;
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            let rel = PathBuf::from(CHECKPOINT_DIR).join(format!("epoch-{epoch:04}.ckpt"));
            save_student_params(&dir.join(&rel), &arch, params, config.seeds.model)?;
            checkpoints.push(rel);
        }
        Ok(())
    })?;
    save_student_params(
        &dir.join(FINAL_CHECKPOINT),
        &trained.arch,
        &trained.params,
        config.seeds.model,
    )?;
    checkpoints.push(PathBuf::from(FINAL_CHECKPOINT));

    let mut reports = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let eval = evaluate(
            split,
            &trained.teacher,
            &trained.arch,
            &trained.params,
            &config.eval,
        )?;
        write_scores(dir, split.setting(), split, &eval, i == 0)?;
        reports.push(eval.report);
    }
    fs::write(dir.join(METRICS_FILE), metrics_file_text(&reports))?;

    let record = RunRecord {
        run_id: id.to_string(),
        dir: dir.to_path_buf(),
        config: config.clone(),
        config_digest: config.digest(),
        telemetry: PathBuf::from(TELEMETRY_FILE),
        checkpoints,
        reports,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    fs::write(dir.join(RECORD_FILE), record.record_text())?;
    Ok(record)
}

/// Evaluates a checkpoint on the run config's data, without training.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Path) -> Result<Vec<Evaluation>> {
    config.validate()?;
    let corpus = load_corpus_for(config)?;
    let teacher = TeacherNet::build(&config.model, config.seeds.model)?;
    let arch = StudentArch::new(&config.model)?;
    let params = crate::models::load_student_params(checkpoint, &arch)?;
    config
        .settings
        .iter()
        .map(|&s| {
            evaluate(
                &build_split(config, &corpus, s)?,
                &teacher,
                &arch,
                &params,
                &config.eval,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("data.n_train_normal", "12"),
            ("data.n_test_normal", "4"),
            ("data.n_anomalous_pool", "6"),
            ("model.channels", "4,6,8"),
            ("model.bottleneck", "4"),
            ("train.epochs", "2"),
            ("train.batch_size", "4"),
            ("cdd.domain_passes", "1"),
            ("cdd.hc_passes", "1"),
            ("eval.n_thresholds", "20"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn telemetry_lines_round_trip() {
        let line = TelemetryLine::Rd(RdEpoch {
            epoch: 3,
            loss: 0.25,
            step_losses: vec![0.5, 0.0],
        });
        let text = serde_json::to_string(&line).unwrap();
        assert!(text.starts_with(r#"{"algorithm":"rd","epoch":3"#));
        assert_eq!(serde_json::from_str::<TelemetryLine>(&text).unwrap(), line);
        assert_eq!(line.mean_loss(), 0.25);
    }

    #[test]
    fn run_directory_layout_and_reuse() {
        let root = tempfile::tempdir().unwrap();
        for algo in ["rd", "cdd"] {
            let mut cfg = tiny_config();
            cfg.set("train.algorithm", algo).unwrap();
            let out = execute_run(&cfg, root.path()).unwrap();
            assert!(!out.reused);
            let dir = &out.record.dir;
            for f in [
                CONFIG_FILE,
                TELEMETRY_FILE,
                METRICS_FILE,
                RECORD_FILE,
                FINAL_CHECKPOINT,
            ] {
                assert!(dir.join(f).exists(), "{algo}: {f}");
            }
            assert!(dir.join("scores/train.csv").exists());
            assert!(dir.join("scores/test_overlap.csv").exists());
            assert!(dir.join("scores/test_no_overlap.csv").exists());
            assert_eq!(out.record.checkpoints.len(), 3);
            assert_eq!(out.record.telemetry_lines().unwrap().len(), 2);
            assert_eq!(out.record.reports.len(), 2);
            let loaded = RunRecord::load(dir).unwrap();
            assert_eq!(loaded.reports, out.record.reports);
            assert_eq!(loaded.config, cfg);

            let metrics = fs::read(dir.join(METRICS_FILE)).unwrap();
            let again = execute_run(&cfg, root.path()).unwrap();
            assert!(again.reused);
            fs::remove_file(dir.join(RECORD_FILE)).unwrap();
            let rerun = execute_run(&cfg, root.path()).unwrap();
            assert!(!rerun.reused);
            assert_eq!(fs::read(dir.join(METRICS_FILE)).unwrap(), metrics);
        }
    }

    #[test]
    fn settings_share_the_training_set() {
        let cfg = tiny_config();
        let corpus = load_corpus_for(&cfg).unwrap();
        let a = build_split(&cfg, &corpus, Setting::Overlap).unwrap();
        let b = build_split(&cfg, &corpus, Setting::NoOverlap).unwrap();
        assert_eq!(a.train_eval_only(), b.train_eval_only());
        assert!(a.test().len() > b.test().len());
    }

    #[test]
    fn tampered_config_is_detected() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.set("train.algorithm", "rd").unwrap();
        cfg.set("train.epochs", "1").unwrap();
        let out = execute_run(&cfg, root.path()).unwrap();
        let path = out.record.dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("train.lr=0.005", "train.lr=0.006");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            RunRecord::load(&out.record.dir),
            Err(Error::Report { .. })
        ));
    }

    #[test]
    fn checkpoint_evaluation_matches_the_run() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.set("train.algorithm", "rd").unwrap();
        let out = execute_run(&cfg, root.path()).unwrap();
        let evals = evaluate_checkpoint(&cfg, &out.record.final_checkpoint()).unwrap();
        let reports: Vec<MetricsReport> = evals.into_iter().map(|e| e.report).collect();
        assert_eq!(reports, out.record.reports);
    }
}
