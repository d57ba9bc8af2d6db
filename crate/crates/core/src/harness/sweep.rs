use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::run::{execute_run, run_id, RunRecord};
use crate::datagen::Setting;
use crate::seeds::derive_seed;
use crate::{Error, Result};

/// One swept configuration key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(key: impl Into<String>, values: &[&str]) -> Self {
        Self {
            key: key.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    /// `key=v1,v2,...`. Values containing commas (K schedules) use `;` between values.
    pub fn parse(text: &str) -> Result<Self> {
        let (key, values) = text.split_once('=').ok_or_else(|| {
            Error::config("sweep.axis", format!("expected key=v1,v2, got `{text}`"))
        })?;
        let sep = if values.contains(';') { ';' } else { ',' };
        let values: Vec<String> = values.split(sep).map(|v| v.trim().to_string()).collect();
        if values.iter().any(|v| v.is_empty()) {
            return Err(Error::config(key.trim(), "empty axis value"));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axes: Vec<Axis>,
    pub replicates: usize,
}

/// Replicate of one cell.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub run_id: String,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
    /// True when a finalized run directory was reused instead of recomputed.
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub assignment: Vec<(String, String)>,
    pub replicates: Vec<ReplicateResult>,
}

impl CellResult {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.replicates.iter().filter_map(|r| r.record.as_ref())
    }

    pub fn n_failed(&self) -> usize {
        self.replicates.iter().filter(|r| r.error.is_some()).count()
    }

    /// Values of one metric over successful replicates, in replicate order.
    pub fn metric(&self, setting: Setting, metric: Metric) -> Vec<f64> {
        self.records()
            .filter_map(|r| r.report(setting))
            .filter_map(|r| metric.of(r))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub dir: PathBuf,
    pub settings: Vec<Setting>,
    pub cells: Vec<CellResult>,
}

impl SweepResult {
    pub fn executed(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|c| &c.replicates)
            .filter(|r| r.record.is_some() && !r.reused)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    IAuc,
    PAuc,
    Pro,
    TrainAuc,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::IAuc, Metric::PAuc, Metric::Pro, Metric::TrainAuc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::IAuc => "i_auc",
            Metric::PAuc => "p_auc",
            Metric::Pro => "pro",
            Metric::TrainAuc => "train_auc",
        }
    }

    pub fn of(self, r: &crate::metrics::MetricsReport) -> Option<f64> {
        match self {
            Metric::IAuc => Some(r.i_auc),
            Metric::PAuc => Some(r.p_auc),
            Metric::Pro => Some(r.pro),
            Metric::TrainAuc => r.train_auc,
        }
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Cartesian product of the axes, first axis varying slowest. No axes gives one empty cell.
pub fn cells(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    out
}

/// Keys whose values change the data a run sees. Only these enter seed derivation,
/// so cells that differ in method alone are compared on identical data and inits.
fn shapes_data(key: &str) -> bool {
    key.starts_with("data.") || key.starts_with("split.")
}

/// Config of one replicate of a cell, with seeds derived from the base seeds,
/// the replicate index and the data-shaping axis values.
pub fn cell_config(
    base: &RunConfig,
    assignment: &[(String, String)],
    replicate: usize,
) -> Result<RunConfig> {
    let mut cfg = base.clone();
    for (k, v) in assignment {
        cfg.set(k, v)?;
    }
    let mut labels = vec!["replicate".to_string(), replicate.to_string()];
    let mut data_axes: Vec<&(String, String)> =
        assignment.iter().filter(|(k, _)| shapes_data(k)).collect();
    data_axes.sort();
    for (k, v) in data_axes {
        labels.push(format!("{k}={v}"));
    }
    let derive = |base: u64, what: &str| {
        let mut l: Vec<&str> = vec![what];
        l.extend(labels.iter().map(String::as_str));
        derive_seed(base, &l)
    };
    cfg.seeds.data = derive(base.seeds.data, "data");
    cfg.seeds.split = derive(base.seeds.split, "split");
    cfg.seeds.model = derive(base.seeds.model, "model");
    cfg.seeds.train = derive(base.seeds.train, "train");
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every replicate of every cell under `dir/runs`, then writes
/// `results.csv`, `results.txt` and `runs.csv`.
///
/// Finished runs are reused, so an interrupted sweep resumes where it stopped
/// and deleting one run directory recomputes only that run. A failing run is
/// recorded and the sweep continues. `progress` is called after each run.
pub fn run_sweep(
    spec: &SweepSpec,
    dir: &Path,
    progress: &mut dyn FnMut(&ReplicateResult),
) -> Result<SweepResult> {
    if spec.replicates == 0 {
        return Err(Error::config("sweep.replicates", "must be positive"));
    }
    for axis in &spec.axes {
        if !RunConfig::keys().contains(&axis.key.as_str()) {
            return Err(Error::config(axis.key.clone(), "unknown sweep axis"));
        }
        if axis.values.is_empty() {
            return Err(Error::config(axis.key.clone(), "axis has no values"));
        }
    }
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    fs::write(dir.join("sweep.cfg"), sweep_text(spec))?;

    let mut results = Vec::new();
    for assignment in cells(&spec.axes) {
        let mut replicates = Vec::with_capacity(spec.replicates);
        for rep in 0..spec.replicates {
            let result = match cell_config(&spec.base, &assignment, rep) {
                Ok(cfg) => match execute_run(&cfg, &runs_dir) {
                    Ok(out) => ReplicateResult {
                        replicate: rep,
                        run_id: out.record.run_id.clone(),
                        record: Some(out.record),
                        error: None,
                        reused: out.reused,
                    },
                    Err(e) => ReplicateResult {
                        replicate: rep,
                        run_id: run_id(&cfg),
                        record: None,
                        error: Some(e.to_string()),
                        reused: false,
                    },
                },
                Err(e) => ReplicateResult {
                    replicate: rep,
                    run_id: String::new(),
                    record: None,
                    error: Some(e.to_string()),
                    reused: false,
                },
            };
            progress(&result);
            replicates.push(result);
        }
        results.push(CellResult {
            assignment,
            replicates,
        });
    }
    let result = SweepResult {
        dir: dir.to_path_buf(),
        settings: spec.base.settings.clone(),
        cells: results,
    };
    fs::write(dir.join("results.csv"), results_csv(&result))?;
    fs::write(dir.join("results.txt"), results_table(&result))?;
    fs::write(dir.join("runs.csv"), runs_csv(&result))?;
    Ok(result)
}

fn sweep_text(spec: &SweepSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# replicates={}", spec.replicates);
    for a in &spec.axes {
        let _ = writeln!(s, "# axis {}={}", a.key, a.values.join(";"));
    }
    s.push_str(&spec.base.canonical());
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.4}"))
}

fn axis_keys(result: &SweepResult) -> Vec<String> {
    result
        .cells
        .first()
        .map(|c| c.assignment.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default()
}

/// One row per cell: axis values, run counts, then mean and median of each metric per setting.
pub fn results_csv(result: &SweepResult) -> String {
    let mut header: Vec<String> = axis_keys(result);
    header.extend(["n_ok".to_string(), "n_failed".to_string()]);
    for s in &result.settings {
        for m in Metric::ALL {
            for stat in ["mean", "median"] {
                header.push(format!("{}.{}.{stat}", s.as_str(), m.as_str()));
            }
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for cell in &result.cells {
        let mut row: Vec<String> = cell
            .assignment
            .iter()
            .map(|(_, v)| format!("\"{v}\""))
            .collect();
        row.push(cell.records().count().to_string());
        row.push(cell.n_failed().to_string());
        for &s in &result.settings {
            for m in Metric::ALL {
                let xs = cell.metric(s, m);
                row.push(fmt_opt(mean(&xs)));
                row.push(fmt_opt(median(&xs)));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Aligned plain-text table of the medians.
pub fn results_table(result: &SweepResult) -> String {
    let mut header: Vec<String> = axis_keys(result);
    header.push("ok/failed".into());
    for s in &result.settings {
        for m in Metric::ALL {
            header.push(format!("{}:{}", s.as_str(), m.as_str()));
        }
    }
    let mut rows = vec![header];
    for cell in &result.cells {
        let mut row: Vec<String> = cell.assignment.iter().map(|(_, v)| v.clone()).collect();
        row.push(format!("{}/{}", cell.records().count(), cell.n_failed()));
        for &s in &result.settings {
            for m in Metric::ALL {
                row.push(fmt_opt(median(&cell.metric(s, m))));
            }
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::from("# medians over replicates\n");
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One row per replicate with its run id, status and metrics.
pub fn runs_csv(result: &SweepResult) -> String {
    let mut header: Vec<String> = vec!["cell".into()];
    header.extend(axis_keys(result));
    header.extend(["replicate", "run_id", "status"].map(String::from));
    for s in &result.settings {
        for m in Metric::ALL {
            header.push(format!("{}.{}", s.as_str(), m.as_str()));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (ci, cell) in result.cells.iter().enumerate() {
        for rep in &cell.replicates {
            let mut row = vec![ci.to_string()];
            row.extend(cell.assignment.iter().map(|(_, v)| format!("\"{v}\"")));
            row.push(rep.replicate.to_string());
            row.push(rep.run_id.clone());
            row.push(if rep.error.is_some() { "failed" } else { "ok" }.into());
            for &s in &result.settings {
                for m in Metric::ALL {
                    let v = rep
                        .record
                        .as_ref()
                        .and_then(|r| r.report(s))
                        .and_then(|r| m.of(r));
                    row.push(v.map_or_else(|| "nan".to_string(), |x| x.to_string()));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        assert_eq!(cells(&[]), vec![Vec::<(String, String)>::new()]);
        let axes = [
            Axis::new("a", &["1", "2"]),
            Axis::new("b", &["x", "y", "z"]),
        ];
        let c = cells(&axes);
        assert_eq!(c.len(), 6);
        assert_eq!(
            c[1],
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "y".to_string())
            ]
        );
    }

    #[test]
    fn axis_text() {
        let a = Axis::parse("split.r_noise=0.02,0.05").unwrap();
        assert_eq!(a, Axis::new("split.r_noise", &["0.02", "0.05"]));
        let k = Axis::parse("cdd.k_schedule=2,3,3,2;3").unwrap();
        assert_eq!(k.values, vec!["2,3,3,2", "3"]);
        assert!(Axis::parse("nothing").is_err());
        assert!(Axis::parse("a=1,,2").is_err());
    }

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mean(&[1.0, 2.0]), Some(1.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn method_axes_share_seeds_and_data_axes_do_not() {
        let base = RunConfig::default();
        let a = cell_config(&base, &[("train.algorithm".into(), "rd".into())], 0).unwrap();
        let b = cell_config(&base, &[("train.algorithm".into(), "cdd".into())], 0).unwrap();
        assert_eq!(a.seeds, b.seeds);
        let c = cell_config(&base, &[("train.algorithm".into(), "rd".into())], 1).unwrap();
        assert_ne!(a.seeds, c.seeds);
        let d = cell_config(&base, &[("split.r_noise".into(), "0.05".into())], 0).unwrap();
        let e = cell_config(&base, &[("split.r_noise".into(), "0.1".into())], 0).unwrap();
        assert_ne!(d.seeds, e.seeds);
        // Order-independent: the same assignment listed differently derives the same seeds.
        let f = cell_config(
            &base,
            &[
                ("split.r_noise".into(), "0.05".into()),
                ("data.jitter".into(), "0.1".into()),
            ],
            0,
        )
        .unwrap();
        let g = cell_config(
            &base,
            &[
                ("data.jitter".into(), "0.1".into()),
                ("split.r_noise".into(), "0.05".into()),
            ],
            0,
        )
        .unwrap();
        assert_eq!(f.seeds, g.seeds);
    }

    #[test]
    fn unknown_axis_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            base: RunConfig::default(),
            axes: vec![Axis::new("train.speed", &["1"])],
            replicates: 1,
        };
        assert!(matches!(
            run_sweep(&spec, dir.path(), &mut |_| {}),
            Err(Error::Config { .. })
        ));
    }
}
