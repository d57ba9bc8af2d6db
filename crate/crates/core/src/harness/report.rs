use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::plots::{histogram_panels, line_chart, overlay_panel, Bins, Series};
use super::run::{build_split, load_corpus_for, RunRecord, TelemetryLine, SCORES_DIR};
use super::sweep::{median, Metric};
use crate::cdd::CddSchedules;
use crate::datagen::Setting;
use crate::distill::score_images;
use crate::models::{load_student_params, StudentArch, TeacherNet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub n_bins: usize,
    /// Test sample ids to draw overlay panels for. Empty picks the first anomalous ones.
    pub overlay_ids: Vec<String>,
    pub n_default_overlays: usize,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            n_bins: 30,
            overlay_ids: Vec::new(),
            n_default_overlays: 3,
        }
    }
}

/// `(id, label, score)` rows of a score CSV.
pub fn read_scores(path: &Path) -> Result<ScoreRows> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.rsplitn(3, ',');
            let score = parts.next().unwrap_or_default();
            let label = parts.next().unwrap_or_default();
            let id = parts.next().unwrap_or_default();
            let score: f64 = score
                .parse()
                .map_err(|_| Error::Input(format!("bad score `{score}` in {}", path.display())))?;
            Ok((id.to_string(), label == "anomalous", score))
        })
        .collect()
}

fn split_by_label(rows: &[(String, bool, f64)]) -> (Vec<f64>, Vec<f64>) {
    let normal = rows.iter().filter(|r| !r.1).map(|r| r.2).collect();
    let anomalous = rows.iter().filter(|r| r.1).map(|r| r.2).collect();
    (normal, anomalous)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn save_png(img: &image::RgbImage, path: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    img.save(path)?;
    written.push(path.to_path_buf());
    Ok(())
}

fn save_text(text: &str, path: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, text)?;
    written.push(path.to_path_buf());
    Ok(())
}

fn label(r: &RunRecord) -> String {
    let c = &r.config;
    match c.algorithm {
        super::config::Algorithm::Rd => "rd".to_string(),
        super::config::Algorithm::Cdd => format!("cdd-{}", c.strategy.as_str()),
    }
}

/// Writes every figure for `records` into `out_dir` and returns the written paths.
///
/// Figures: per-run train/test score histograms on shared bins, per-run
/// overlay panels, metric-versus-noise charts per setting and metric, and
/// per-run loss and schedule curves. Each image has a CSV twin holding the
/// plotted numbers.
pub fn emit_plots(
    records: &[RunRecord],
    out_dir: &Path,
    options: &PlotOptions,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    // Telemetry first, so a broken run fails before anything is drawn.
    let telemetry: Vec<Vec<TelemetryLine>> = records
        .iter()
        .map(|r| r.telemetry_lines())
        .collect::<Result<_>>()?;

    histograms(records, out_dir, options, &mut written)?;
    for r in records {
        overlays(r, out_dir, options, &mut written)?;
    }
    metric_curves(records, out_dir, &mut written)?;
    for (r, t) in records.iter().zip(&telemetry) {
        epoch_curves(r, t, out_dir, &mut written)?;
    }
    Ok(written)
}

type ScoreRows = Vec<(String, bool, f64)>;

fn scores_of(r: &RunRecord) -> Result<(ScoreRows, ScoreRows)> {
    let setting = r.config.settings[0];
    let dir = r.dir.join(SCORES_DIR);
    let err = |e: Error| Error::Report {
        run: r.run_id.clone(),
        message: format!("scores unavailable: {e}"),
    };
    let train = read_scores(&dir.join("train.csv")).map_err(err)?;
    let test = read_scores(&dir.join(format!("test_{}.csv", setting.as_str()))).map_err(err)?;
    Ok((train, test))
}

fn histograms(
    records: &[RunRecord],
    out: &Path,
    options: &PlotOptions,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let scores: Vec<_> = records.iter().map(scores_of).collect::<Result<_>>()?;
    let bins = Bins::covering(
        scores
            .iter()
            .flat_map(|(a, b)| a.iter().chain(b.iter()).map(|r| r.2)),
        options.n_bins,
    );
    let mut axes = String::from("bin,lo,hi\n");
    for i in 0..bins.n {
        let _ = writeln!(axes, "{i},{},{}", bins.edge(i), bins.edge(i + 1));
    }
    save_text(&axes, &out.join("hist_axes.csv"), written)?;
    for (r, (train, test)) in records.iter().zip(&scores) {
        let setting = r.config.settings[0].as_str();
        let mut panels = Vec::new();
        let mut csv = String::from("panel,bin,lo,hi,normal,anomalous\n");
        for (name, rows) in [("train", train), (&format!("test_{setting}")[..], test)] {
            let (n, a) = split_by_label(rows);
            let (cn, ca) = (bins.counts(&n), bins.counts(&a));
            for i in 0..bins.n {
                let _ = writeln!(
                    csv,
                    "{name},{i},{},{},{},{}",
                    bins.edge(i),
                    bins.edge(i + 1),
                    cn[i],
                    ca[i]
                );
            }
            panels.push((format!("{} {name}", label(r)), cn, ca));
        }
        let stem = format!("hist_{}", r.run_id);
        save_png(
            &histogram_panels(&panels, &bins),
            &out.join(format!("{stem}.png")),
            written,
        )?;
        save_text(&csv, &out.join(format!("{stem}.csv")), written)?;
    }
    Ok(())
}

fn overlays(
    r: &RunRecord,
    out: &Path,
    options: &PlotOptions,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let cfg = &r.config;
    let corpus = load_corpus_for(cfg)?;
    let split = build_split(cfg, &corpus, cfg.settings[0])?;
    let chosen: Vec<usize> = if options.overlay_ids.is_empty() {
        split
            .test()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label().is_anomalous())
            .map(|(i, _)| i)
            .take(options.n_default_overlays)
            .collect()
    } else {
        options
            .overlay_ids
            .iter()
            .map(|id| {
                split
                    .test()
                    .iter()
                    .position(|s| s.id() == id)
                    .ok_or_else(|| Error::Report {
                        run: r.run_id.clone(),
                        message: format!("no test sample `{id}`"),
                    })
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Ok(());
    }
    let teacher = TeacherNet::build(&cfg.model, cfg.seeds.model)?;
    let arch = StudentArch::new(&cfg.model)?;
    let params = load_student_params(&r.final_checkpoint(), &arch)?;
    let samples: Vec<_> = chosen.iter().map(|&i| &split.test()[i]).collect();
    let maps = score_images(
        samples.iter().map(|s| s.pixels()),
        &teacher,
        &arch,
        &params,
        cfg.eval.smooth_sigma,
    )?;
    for (s, m) in samples.iter().zip(&maps) {
        let stem = format!("overlay_{}_{}", r.run_id, file_safe(s.id()));
        let title = format!("{} {} score {:.3}", label(r), s.id(), m.image_score());
        save_png(
            &overlay_panel(&title, s.pixels(), s.mask(), m.values()),
            &out.join(format!("{stem}.png")),
            written,
        )?;
        let mut csv = String::from("y,x,mask,map\n");
        for ((y, x), v) in m.values().indexed_iter() {
            let _ = writeln!(csv, "{y},{x},{},{v}", s.mask()[[y, x]]);
        }
        save_text(&csv, &out.join(format!("{stem}.csv")), written)?;
    }
    Ok(())
}

fn metric_curves(records: &[RunRecord], out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut settings: Vec<Setting> = Vec::new();
    for r in records {
        for rep in &r.reports {
            if !settings.contains(&rep.setting) {
                settings.push(rep.setting);
            }
        }
    }
    for setting in settings {
        for metric in Metric::ALL {
            // series label -> r_noise (as ordered bits) -> values
            let mut groups: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
            for r in records {
                if let Some(v) = r.report(setting).and_then(|rep| metric.of(rep)) {
                    groups
                        .entry(label(r))
                        .or_default()
                        .entry(r.config.r_noise.to_bits())
                        .or_default()
                        .push(v);
                }
            }
            if groups.is_empty() {
                continue;
            }
            let mut csv = String::from("series,r_noise,median,n\n");
            let mut series = Vec::new();
            for (name, by_r) in &groups {
                let mut points = Vec::new();
                for (bits, vals) in by_r {
                    let rn = f64::from_bits(*bits);
                    let m = median(vals).unwrap_or(f64::NAN);
                    let _ = writeln!(csv, "{name},{rn},{m},{}", vals.len());
                    points.push((rn, m));
                }
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                series.push(Series {
                    name: name.clone(),
                    points,
                });
            }
            let stem = format!("metric_{}_{}", setting.as_str(), metric.as_str());
            let title = format!("{} {}", setting.as_str(), metric.as_str());
            save_png(
                &line_chart(&title, "r_noise", metric.as_str(), &series, None),
                &out.join(format!("{stem}.png")),
                written,
            )?;
            save_text(&csv, &out.join(format!("{stem}.csv")), written)?;
        }
    }
    Ok(())
}

/// `(epoch, r, lambda, K)` of every CDD epoch in the telemetry.
pub fn schedule_points(telemetry: &[TelemetryLine]) -> Vec<(usize, f64, f64, usize)> {
    telemetry
        .iter()
        .filter_map(|t| match t {
            TelemetryLine::Cdd(c) => Some((c.epoch, c.r, c.lambda, c.k)),
            TelemetryLine::Rd(_) => None,
        })
        .collect()
}

fn epoch_curves(
    r: &RunRecord,
    telemetry: &[TelemetryLine],
    out: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    if telemetry.is_empty() {
        return Err(Error::Report {
            run: r.run_id.clone(),
            message: "telemetry is empty".into(),
        });
    }
    let loss = Series {
        name: "loss".into(),
        points: telemetry
            .iter()
            .map(|t| (t.epoch() as f64, t.mean_loss()))
            .collect(),
    };
    let stem = format!("loss_{}", r.run_id);
    let mut csv = String::from("epoch,mean_loss\n");
    for (e, l) in &loss.points {
        let _ = writeln!(csv, "{e},{l}");
    }
    save_png(
        &line_chart(
            &format!("{} loss", label(r)),
            "epoch",
            "loss",
            &[loss],
            None,
        ),
        &out.join(format!("{stem}.png")),
        written,
    )?;
    save_text(&csv, &out.join(format!("{stem}.csv")), written)?;

    let points = schedule_points(telemetry);
    if points.is_empty() {
        return Ok(());
    }
    let max_k = points.iter().map(|p| p.3).max().unwrap_or(1).max(1) as f64;
    let series = [
        Series {
            name: "r".into(),
            points: points.iter().map(|p| (p.0 as f64, p.1)).collect(),
        },
        Series {
            name: "lambda".into(),
            points: points.iter().map(|p| (p.0 as f64, p.2)).collect(),
        },
        Series {
            name: format!("k/{max_k}"),
            points: points
                .iter()
                .map(|p| (p.0 as f64, p.3 as f64 / max_k))
                .collect(),
        },
    ];
    let mut csv = String::from("epoch,r,lambda,k\n");
    for (e, rr, l, k) in &points {
        let _ = writeln!(csv, "{e},{rr},{l},{k}");
    }
    let stem = format!("schedule_{}", r.run_id);
    save_png(
        &line_chart(
            &format!("{} schedules", label(r)),
            "epoch",
            "value",
            &series,
            Some((0.0, 1.05)),
        ),
        &out.join(format!("{stem}.png")),
        written,
    )?;
    save_text(&csv, &out.join(format!("{stem}.csv")), written)?;
    Ok(())
}

/// Recomputes the schedule the trainer should have followed, for consistency checks.
pub fn expected_schedule(schedules: &CddSchedules) -> Vec<(usize, f64, f64, usize)> {
    (0..schedules.epochs)
        .map(|e| (e, schedules.r(e), schedules.lambda(e), schedules.k(e)))
        .collect()
}

/// Plain-text summary table of several runs.
pub fn runs_table(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "run_id,algorithm,strategy,r_noise,setting,i_auc,p_auc,pro,train_auc,wall_clock_secs\n",
    );
    for r in records {
        for rep in &r.reports {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:.3}",
                r.run_id,
                r.config.algorithm.as_str(),
                r.config.strategy.as_str(),
                r.config.r_noise,
                rep.setting.as_str(),
                rep.i_auc,
                rep.p_auc,
                rep.pro,
                rep.train_auc
                    .map_or_else(|| "none".to_string(), |v| v.to_string()),
                r.wall_clock_secs
            );
        }
    }
    out
}
