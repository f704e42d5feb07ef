//! Command-line front end: `generate`, `train`, `detect`, `diagnose`,
//! `evaluate` and `sweep`.
//!
//! Exit status is 0 on success, 1 for data or runtime failures and 2 for
//! usage or configuration errors.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

use crate::data::synthetic::{LABEL_FILE, ROOT_CAUSE_FILE, TEST_FILE, TRAIN_FILE};
use crate::data::{generate_synthetic, load_csv_dataset, CsvOptions, Dataset};
use crate::error::{Error, Result};
use crate::graphs::{attention_tensor, finalize_causal_graph, CausalGraph};
use crate::metrics::{rank_sensors, segments};
use crate::model::train::train_with_progress;
use crate::model::{run_series, Ablation, Hyperparams, ModelCheckpoint};
use crate::pipeline::{detect, evaluate, run_ablations, sweep, time_pipeline, write_trace, SweepParam};
use crate::scoring::AnomalyReport;

#[derive(Parser, Debug)]
#[command(name = "tsad", version, about = "Causal-attention anomaly detection and root-cause ranking")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true, env = "TSAD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory. Defaults to `<runs-root>/<timestamp>-seed<seed>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    pub runs_root: PathBuf,
    /// Single-threaded execution and no wall-clock fields in artifacts.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory holding train.csv, test.csv and optional label files.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV files start with a header line.
    #[arg(long)]
    pub header: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset with planted causal edges and labeled anomalies.
    Generate,
    /// Train a model and write its checkpoint and training history.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score the test split and write the anomaly report.
    Detect {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reconstruction weight in the root-cause score.
        #[arg(long)]
        beta: Option<f64>,
        /// Also write per-window attention diagnostics.
        #[arg(long)]
        trace: bool,
        /// Also time sequential inference.
        #[arg(long)]
        timing: bool,
    },
    /// Per-anomaly root-cause rankings, causal edges and value traces.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Also render one SVG chart per anomaly.
        #[arg(long)]
        plot: bool,
    },
    /// Compare a report with the test labels.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train, detect and evaluate once per value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// width, hidden, top_k, theta, or ablation.
        #[arg(long)]
        param: String,
        /// Comma-separated values; `all` lists every ablation preset.
        #[arg(long)]
        values: String,
    },
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&cli.sets)
}

fn run_dir(cli: &Cli, seed: u64) -> Result<PathBuf> {
    let dir = match &cli.out {
        Some(p) => p.clone(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S");
            cli.runs_root.join(format!("{stamp}-seed{seed}"))
        }
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_dataset_dir(args: &DataArgs) -> Result<Dataset> {
    let dir = &args.data;
    let need = |name: &str| {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::io(
                &p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "required input file is missing"),
            ))
        }
    };
    let optional = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    let labels = optional(LABEL_FILE);
    let rc = optional(ROOT_CAUSE_FILE);
    load_csv_dataset(
        &need(TRAIN_FILE)?,
        &need(TEST_FILE)?,
        labels.as_deref(),
        rc.as_deref(),
        CsvOptions { header: args.header },
    )
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.deterministic {
        // Fails only if a pool already exists, which is equally deterministic.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let syn = cfg.synthetic()?;
            let dir = run_dir(cli, syn.seed)?;
            let out = generate_synthetic(&syn)?;
            out.write_dir(&dir)?;
            println!("wrote synthetic dataset to {}", dir.display());
        }
        Command::Train { data } => {
            let hp = cfg.hyperparams()?;
            let ds = load_dataset_dir(data)?;
            let dir = run_dir(cli, hp.seed)?;
            let mut ck = train_with_progress(&ds, &hp, &mut |r| {
                eprintln!(
                    "epoch {:>3}  train {:.6}  val {:.6}  {:.1}s",
                    r.epoch, r.train_loss, r.val_loss, r.seconds
                );
            })?;
            if cli.deterministic {
                ck.history.iter_mut().for_each(|r| r.seconds = 0.0);
            }
            let path = dir.join("model.ckpt");
            ck.save(&path)?;
            write_json(&dir.join("history.json"), &ck.history)?;
            println!("wrote checkpoint {}", path.display());
        }
        Command::Detect {
            data,
            checkpoint,
            beta,
            trace,
            timing,
        } => {
            let ds = load_dataset_dir(data)?;
            let ck = ModelCheckpoint::load(checkpoint)?;
            let dir = run_dir(cli, ck.seed)?;
            let report = detect(&ck, &ds.test, *beta)?;
            let path = dir.join("report.jsonl");
            report.write_jsonl(&path)?;
            if *trace {
                let model = ck.model()?;
                let x = ck.normalizer.apply(&ds.test)?;
                let outs = run_series(&model, &x, model.hp.width..x.len(), true)?;
                write_trace(&dir.join("trace.jsonl"), &outs)?;
            }
            if *timing && !cli.deterministic {
                write_json(&dir.join("timing.json"), &time_pipeline(&ds, &ck)?)?;
            }
            let flagged = report.verdicts.iter().filter(|v| **v == 1).count();
            println!(
                "threshold {:.6}{}; {flagged} of {} timestamps flagged; wrote {}",
                report.threshold,
                if report.fallback { " (empirical quantile fallback)" } else { "" },
                report.scores.len(),
                path.display()
            );
        }
        Command::Diagnose {
            data,
            checkpoint,
            report,
            top_k,
            plot,
        } => {
            let ds = load_dataset_dir(data)?;
            let ck = ModelCheckpoint::load(checkpoint)?;
            let report = AnomalyReport::read_jsonl(report)?;
            let dir = run_dir(cli, ck.seed)?.join("diagnose");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let n = diagnose(&ds, &ck, &report, *top_k, *plot, &dir)?;
            println!("diagnosed {n} anomalies into {}", dir.display());
        }
        Command::Evaluate { data, report } => {
            let ds = load_dataset_dir(data)?;
            let report = AnomalyReport::read_jsonl(report)?;
            let result = evaluate(&report, &ds.test)?;
            let dir = run_dir(cli, 0)?;
            write_json(&dir.join("eval.json"), &result)?;
            println!("{}", result.table());
        }
        Command::Sweep { data, param, values } => {
            let hp = cfg.hyperparams()?;
            let ds = load_dataset_dir(data)?;
            let dir = run_dir(cli, hp.seed)?.join("sweep");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            run_sweep(&ds, &hp, param, values, &dir)?;
        }
    }
    Ok(())
}

fn run_sweep(ds: &Dataset, hp: &Hyperparams, param: &str, values: &str, dir: &Path) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    if param == "ablation" {
        let names: Vec<&str> = if values.trim() == "all" {
            Ablation::PRESETS.to_vec()
        } else {
            values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
        };
        for n in &names {
            Ablation::preset(n)?;
        }
        let points = run_ablations(ds, hp, &names)?;
        for p in &points {
            write_json(&dir.join(format!("ablation_{}.json", p.name)), p)?;
            let _ = writeln!(stdout, "ablation={}\n{}", p.name, p.eval.table());
        }
        return write_json(&dir.join("summary.json"), &points);
    }
    let param: SweepParam = param.parse()?;
    let vals = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("sweep value {v:?} is not a number"))))
        .collect::<Result<Vec<_>>>()?;
    if vals.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let points = sweep(ds, hp, param, &vals)?;
    let name = serde_json::to_value(param)?.as_str().unwrap_or("param").to_string();
    for p in &points {
        write_json(&dir.join(format!("{name}_{}.json", p.value)), p)?;
        let _ = writeln!(stdout, "{name}={}\n{}", p.value, p.eval.table());
    }
    write_json(&dir.join("summary.json"), &points)
}

#[derive(Serialize)]
struct AnomalyDiagnosis {
    id: usize,
    start: usize,
    end: usize,
    peak_t: usize,
    peak_score: f64,
    threshold: f64,
    /// Max-pooled over the flagged span, `(sensor index, name, score)`.
    root_causes: Vec<(usize, String, f64)>,
    causal_graph: Option<CausalGraph>,
}

/// Writes `anomaly_<k>.json`, `anomaly_<k>_traces.csv` and optionally
/// `anomaly_<k>.svg` per flagged span, plus `summary.json`.
fn diagnose(
    ds: &Dataset,
    ck: &ModelCheckpoint,
    report: &AnomalyReport,
    top_k: usize,
    plot: bool,
    dir: &Path,
) -> Result<usize> {
    let model = ck.model()?;
    let x = ck.normalizer.apply(&ds.test)?;
    let (width, bs) = (model.hp.width, model.hp.batch_size);
    let names = ds.test.sensor_names();
    let mut summary = Vec::new();
    for (id, (s, e)) in segments(&report.verdicts).into_iter().enumerate() {
        let (start, end) = (report.timestamps[s], report.timestamps[e]);
        let mut pooled = report.root_scores[s].clone();
        for rs in &report.root_scores[s..=e] {
            pooled.iter_mut().zip(rs).for_each(|(a, b)| *a = a.max(*b));
        }
        let peak = (s..=e).max_by(|&a, &b| report.scores[a].total_cmp(&report.scores[b])).unwrap_or(s);
        let peak_t = report.timestamps[peak];

        let lo = start.saturating_sub(width).max(width);
        let hi = (end + width + 2).min(x.len());
        // Chunks must line up with detection so the recurrent states match.
        let first = if model.hp.reset_per_batch { width + (lo - width) / bs * bs } else { width };
        let outs = run_series(&model, &x, first..hi, true)?;
        let by_t = |t: usize| outs.iter().find(|o| o.t == t);

        let causal_graph = match by_t(peak_t).and_then(|o| o.trace.as_ref()).and_then(|tr| tr.alpha_cdr.as_ref()) {
            Some(alpha) => Some(finalize_causal_graph(&attention_tensor(alpha, width), model.hp.theta, peak_t)?),
            None => None,
        };
        let ranked = rank_sensors(&pooled);
        let diag = AnomalyDiagnosis {
            id,
            start,
            end,
            peak_t,
            peak_score: report.scores[peak],
            threshold: report.threshold,
            root_causes: ranked
                .iter()
                .take(top_k)
                .map(|&i| (i, names[i].clone(), pooled[i]))
                .collect(),
            causal_graph,
        };

        let m = x.dim();
        let csv_path = dir.join(format!("anomaly_{id}_traces.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Schema(e.to_string()))?;
        w.write_record(["t", "sensor", "component", "actual", "predicted", "reconstructed", "root_cause_score"])
            .map_err(|e| Error::Schema(e.to_string()))?;
        let mut rows_for_plot: Vec<(usize, usize, f64, f64, Option<f64>)> = Vec::new();
        for o in outs.iter().filter(|o| o.t >= lo && o.t < hi) {
            // The next window's reconstruction ends with the estimate of x_t.
            let next = by_t(o.t + 1);
            let rs_idx = report.timestamps.binary_search(&o.t).ok();
            for i in 0..model.dims.n_sensors {
                for k in 0..m {
                    let recon = next.map(|nw| nw.reconstruction[[i, (width - 1) * m + k]]);
                    let rs = rs_idx.map(|j| report.root_scores[j][i]);
                    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                    w.write_record([
                        o.t.to_string(),
                        names[i].clone(),
                        k.to_string(),
                        o.target[[i, k]].to_string(),
                        o.x_hat[[i, k]].to_string(),
                        fmt(recon),
                        fmt(rs),
                    ])
                    .map_err(|e| Error::Schema(e.to_string()))?;
                    if k == 0 {
                        rows_for_plot.push((o.t, i, o.target[[i, 0]], o.x_hat[[i, 0]], recon));
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        write_json(&dir.join(format!("anomaly_{id}.json")), &diag)?;

        if plot {
            let mut panels = Vec::new();
            for &i in ranked.iter().take(top_k.min(3)) {
                let pick = |f: &dyn Fn(&(usize, usize, f64, f64, Option<f64>)) -> Option<f64>| -> Vec<(f64, f64)> {
                    rows_for_plot
                        .iter()
                        .filter(|r| r.1 == i)
                        .filter_map(|r| f(r).map(|v| (r.0 as f64, v)))
                        .collect()
                };
                panels.push(plot::Panel {
                    title: format!("{} (normalized)", names[i]),
                    series: vec![
                        plot::Series {
                            label: "actual".into(),
                            points: pick(&|r| Some(r.2)),
                        },
                        plot::Series {
                            label: "predicted".into(),
                            points: pick(&|r| Some(r.3)),
                        },
                        plot::Series {
                            label: "reconstructed".into(),
                            points: pick(&|r| r.4),
                        },
                    ],
                    reference: None,
                });
            }
            let score_pts = report
                .timestamps
                .iter()
                .zip(&report.scores)
                .filter(|(t, _)| **t >= lo && **t < hi)
                .map(|(t, s)| (*t as f64, *s))
                .collect();
            panels.push(plot::Panel {
                title: "anomaly score".into(),
                series: vec![plot::Series {
                    label: "score".into(),
                    points: score_pts,
                }],
                reference: Some(report.threshold),
            });
            let svg = plot::render(&format!("anomaly {id}: t = {start}..{end}"), &panels);
            let p = dir.join(format!("anomaly_{id}.svg"));
            std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        }
        summary.push(diag);
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary.len())
}
