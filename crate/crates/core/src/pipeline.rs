//! End-to-end glue: per-window inference, scoring and detection over a test
//! split, evaluation, discovered causal triples, sweeps, ablations and timing.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{Dataset, PlantedEdge, SampleWindow, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::metrics::{root_cause_metrics, EvalResult, DEFAULT_PERCENTAGES};
use crate::model::{
    forward_chunk, run_series, train, Ablation, Hyperparams, Model, ModelCheckpoint, NoiseMode, RecurrentState,
    StepTrace, WindowOutput,
};
use crate::scoring::{pot_threshold, AnomalyReport, ErrorTerms};

/// Representations of one window plus, when tracing, its attention maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationBundle {
    /// `N×l`
    pub d_cdr: Array2<f64>,
    /// `N×2l`
    pub d_necr: Array2<f64>,
    pub d_tdr: Array2<f64>,
    pub d: Array2<f64>,
    pub alpha_cdr: Option<Array2<f64>>,
    pub alpha_ncr: Option<Array2<f64>>,
    pub alpha_ecr: Option<Array2<f64>>,
    pub alpha_tdr: Option<Array2<f64>>,
}

impl RepresentationBundle {
    fn from_trace(tr: StepTrace, keep_attention: bool) -> Self {
        let keep = |a: Option<Array2<f64>>| if keep_attention { a } else { None };
        Self {
            d_cdr: tr.d_cdr,
            d_necr: tr.d_necr,
            d_tdr: tr.d_tdr,
            d: tr.d,
            alpha_cdr: keep(tr.alpha_cdr),
            alpha_ncr: keep(tr.alpha_ncr),
            alpha_ecr: keep(tr.alpha_ecr),
            alpha_tdr: keep(tr.alpha_tdr),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowForward {
    /// `N×m`
    pub x_hat: Array2<f64>,
    /// `N×ωm`
    pub reconstruction: Array2<f64>,
    pub recon_loss: f64,
    pub bundle: RepresentationBundle,
    pub state: RecurrentState,
}

/// One deterministic (`ε = 0`) step of the full model.
pub fn forward_window(
    window: &SampleWindow,
    state: &RecurrentState,
    model: &Model,
    trace: bool,
) -> Result<WindowForward> {
    let d = model.dims;
    let got = (window.width(), window.n_sensors(), window.dim());
    if got != (d.width, d.n_sensors, d.dim) {
        return Err(Error::contract(
            "forward_window",
            format!(
                "window (ω, N, m) = {got:?} but the model expects {:?}",
                (d.width, d.n_sensors, d.dim)
            ),
        ));
    }
    if state.encoder.dim() != (1, d.hidden) || state.gru.dim() != (d.n_sensors, d.hidden) {
        return Err(Error::contract("forward_window", "recurrent state shape does not match the model"));
    }
    let mut tape = Tape::new();
    let vars = model.params.freeze(&mut tape);
    let out = forward_chunk(
        &mut tape,
        model,
        &vars,
        std::slice::from_ref(window),
        state,
        &mut NoiseMode::Zero,
    );
    let step = &out.steps[0];
    let w = WindowOutput::from_step(&tape, step, true);
    Ok(WindowForward {
        x_hat: w.x_hat,
        reconstruction: w.reconstruction,
        recon_loss: w.recon_loss,
        bundle: RepresentationBundle::from_trace(w.trace.expect("trace requested"), trace),
        state: out.final_state(&tape),
    })
}

/// Per-window error terms for every scorable timestamp of an already
/// normalized series.
pub fn score_series(model: &Model, x: &TimeSeriesMatrix) -> Result<(Vec<usize>, Vec<ErrorTerms>)> {
    let width = model.hp.width;
    if x.len() <= width {
        return Err(Error::InsufficientData(format!(
            "test series of length {} has no window of width {width}",
            x.len()
        )));
    }
    let outs = run_series(model, x, width..x.len(), false)?;
    let ts = outs.iter().map(|o| o.t).collect();
    let terms = outs
        .iter()
        .map(|o| ErrorTerms::new(&o.target, &o.x_hat, &o.history, &o.reconstruction))
        .collect();
    Ok((ts, terms))
}

/// Normalize `test` with the checkpoint's statistics, score it, and flag
/// timestamps above the POT threshold fitted on the calibration scores.
/// `beta` overrides the checkpoint's reconstruction weight.
pub fn detect(ck: &ModelCheckpoint, test: &TimeSeriesMatrix, beta: Option<f64>) -> Result<AnomalyReport> {
    let beta = beta.unwrap_or(ck.hyperparams.beta);
    let model = ck.model()?;
    let x = ck.normalizer.apply(test)?;
    let (ts, terms) = score_series(&model, &x)?;
    let fit = pot_threshold(&ck.calibration_scores(beta), ck.hyperparams.q, ck.hyperparams.init_quantile)?;
    let rs = terms.iter().map(|e| e.root_cause_scores(beta)).collect();
    Ok(AnomalyReport::new(ts, rs, &fit, ck.hyperparams.q, beta))
}

/// Detection and root-cause metrics over the scored timestamps of `test`,
/// which must carry anomaly labels.
pub fn evaluate(report: &AnomalyReport, test: &TimeSeriesMatrix) -> Result<EvalResult> {
    let labels = test
        .anomaly_labels()
        .ok_or_else(|| Error::Label("test split has no anomaly labels".into()))?;
    let mut truth = Vec::with_capacity(report.timestamps.len());
    for &t in &report.timestamps {
        truth.push(*labels.get(t).ok_or_else(|| {
            Error::contract("evaluate", format!("report timestamp {t} beyond labels of length {}", labels.len()))
        })?);
    }
    let mut result = EvalResult::from_verdicts(&report.verdicts, &report.scores, &truth)?;
    if let Some(segments) = test.root_cause_labels() {
        let mut dense: Vec<Option<Vec<f64>>> = vec![None; labels.len()];
        for (&t, rs) in report.timestamps.iter().zip(&report.root_scores) {
            dense[t] = Some(rs.clone());
        }
        let verdicts = report.dense_verdicts(labels.len());
        let (hit, ndcg, used) = root_cause_metrics(&dense, &verdicts, segments, &DEFAULT_PERCENTAGES)?;
        result.hitrate = hit;
        result.ndcg = ndcg;
        result.rca_segments = used;
    }
    Ok(result)
}

/// A lagged cause→effect pair with its mean attention weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalTriple {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
    pub weight: f64,
}

/// Causal attention averaged over the windows ending in `targets`, as
/// cross-sensor triples sorted by descending weight. Window position `p`
/// corresponds to lag `ω − p`.
pub fn discovered_triples(model: &Model, x: &TimeSeriesMatrix, targets: std::ops::Range<usize>) -> Result<Vec<CausalTriple>> {
    if model.hp.ablation.no_cdr || model.hp.ablation.no_causal_discovery {
        return Err(Error::Config("causal attention is disabled by the ablation".into()));
    }
    let (n, w) = (model.dims.n_sensors, model.dims.width);
    let outs = run_series(model, x, targets, true)?;
    if outs.is_empty() {
        return Err(Error::InsufficientData("no windows to average causal attention over".into()));
    }
    let mut mean = Array2::<f64>::zeros((n, n * w));
    for o in &outs {
        let a = o.trace.as_ref().and_then(|t| t.alpha_cdr.as_ref()).expect("traced CDR attention");
        mean += a;
    }
    mean /= outs.len() as f64;
    let mut triples = Vec::with_capacity(n * (n - 1) * w);
    for effect in 0..n {
        for cause in (0..n).filter(|&c| c != effect) {
            for p in 0..w {
                triples.push(CausalTriple {
                    cause,
                    effect,
                    lag: w - p,
                    weight: mean[[effect, cause * w + p]],
                });
            }
        }
    }
    triples.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then((a.effect, a.cause, a.lag).cmp(&(b.effect, b.cause, b.lag)))
    });
    Ok(triples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalRecovery {
    /// Precision of the top-|E*| triples.
    pub precision: f64,
    /// Expected precision of a uniform pick among all `N²·ω` candidates.
    pub random_baseline: f64,
    pub n_planted: usize,
}

pub fn causal_recovery(triples: &[CausalTriple], planted: &[PlantedEdge], n: usize, width: usize) -> CausalRecovery {
    let truth: BTreeSet<(usize, usize, usize)> = planted
        .iter()
        .filter(|e| e.cause != e.effect)
        .map(|e| (e.cause, e.effect, e.lag))
        .collect();
    let k = truth.len();
    let hits = triples
        .iter()
        .take(k)
        .filter(|t| truth.contains(&(t.cause, t.effect, t.lag)))
        .count();
    CausalRecovery {
        precision: if k == 0 { 0.0 } else { hits as f64 / k as f64 },
        random_baseline: k as f64 / (n * n * width) as f64,
        n_planted: k,
    }
}

/// Train, detect and evaluate one configuration.
pub struct Experiment {
    pub checkpoint: ModelCheckpoint,
    pub report: AnomalyReport,
    pub eval: EvalResult,
}

pub fn run_experiment(ds: &Dataset, hp: &Hyperparams) -> Result<Experiment> {
    let checkpoint = train(ds, hp)?;
    let report = detect(&checkpoint, &ds.test, None)?;
    let eval = evaluate(&report, &ds.test)?;
    Ok(Experiment {
        checkpoint,
        report,
        eval,
    })
}

/// Hyperparameters reachable by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Width,
    Hidden,
    TopK,
    Theta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width" | "omega" | "window" => Ok(Self::Width),
            "hidden" | "l" | "embedding" => Ok(Self::Hidden),
            "top_k" | "k" => Ok(Self::TopK),
            "theta" => Ok(Self::Theta),
            other => Err(Error::Config(format!(
                "cannot sweep {other:?}; expected width, hidden, top_k or theta"
            ))),
        }
    }
}

impl SweepParam {
    pub fn apply(self, hp: &Hyperparams, value: f64) -> Result<Hyperparams> {
        let mut hp = hp.clone();
        let as_count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{self:?} needs a positive integer, got {value}")))
            }
        };
        match self {
            Self::Width => hp.width = as_count()?,
            Self::Hidden => hp.hidden = as_count()?,
            Self::TopK => hp.top_k = as_count()?,
            Self::Theta => hp.theta = value,
        }
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub eval: EvalResult,
}

/// One train/detect/evaluate run per value, executed in parallel.
pub fn sweep(ds: &Dataset, base: &Hyperparams, param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>> {
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v).map(|hp| (v, hp)))
        .collect::<Result<Vec<_>>>()?;
    configs
        .par_iter()
        .map(|(v, hp)| {
            run_experiment(ds, hp).map(|e| SweepPoint {
                param,
                value: *v,
                eval: e.eval,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub name: String,
    pub ablation: Ablation,
    pub eval: EvalResult,
}

/// Every named ablation preset, in parallel.
pub fn run_ablations(ds: &Dataset, base: &Hyperparams, names: &[&str]) -> Result<Vec<AblationPoint>> {
    names
        .par_iter()
        .map(|name| {
            let ablation = Ablation::preset(name)?;
            let hp = Hyperparams {
                ablation,
                ..base.clone()
            };
            run_experiment(ds, &hp).map(|e| AblationPoint {
                name: name.to_string(),
                ablation,
                eval: e.eval,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Mean wall-clock seconds per recorded training epoch.
    pub train_seconds_per_epoch: Option<f64>,
    /// Elapsed time to predict every test window.
    pub inference_seconds_total: f64,
    /// Sum of the individually timed per-window forward passes.
    pub per_window_seconds_sum: f64,
    pub n_windows: usize,
}

/// Sequential timing of inference over the test split.
pub fn time_pipeline(ds: &Dataset, ck: &ModelCheckpoint) -> Result<TimingReport> {
    let model = ck.model()?;
    let x = ck.normalizer.apply(&ds.test)?;
    let width = model.hp.width;
    if x.len() <= width {
        return Err(Error::InsufficientData(format!(
            "no test windows to time: length {} with width {width}",
            x.len()
        )));
    }
    let bs = model.hp.batch_size;
    let mut state = RecurrentState::zeros(model.dims);
    let mut per_window = 0.0;
    let started = Instant::now();
    for (k, t) in (width..x.len()).enumerate() {
        let w0 = Instant::now();
        if model.hp.reset_per_batch && k % bs == 0 {
            state = RecurrentState::zeros(model.dims);
        }
        let window = SampleWindow::at(&x, t, width)?;
        state = forward_window(&window, &state, &model, false)?.state;
        per_window += w0.elapsed().as_secs_f64();
    }
    let total = started.elapsed().as_secs_f64();
    let train_seconds_per_epoch = (!ck.history.is_empty())
        .then(|| ck.history.iter().map(|r| r.seconds).sum::<f64>() / ck.history.len() as f64);
    Ok(TimingReport {
        train_seconds_per_epoch,
        inference_seconds_total: total,
        per_window_seconds_sum: per_window,
        n_windows: x.len() - width,
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: usize,
    row_sums_cdr: Option<Vec<f64>>,
    row_sums_ncr: Option<Vec<f64>>,
    row_sums_ecr: Option<Vec<f64>>,
    row_sums_tdr: Option<Vec<f64>>,
    candidate_sizes: Option<&'a [usize]>,
}

/// One JSON line per traced window with attention row sums and causal
/// candidate-set sizes.
pub fn write_trace(path: &Path, outputs: &[WindowOutput]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let sums = |a: Option<&Array2<f64>>| a.map(|a| a.rows().into_iter().map(|r| r.sum()).collect());
    for o in outputs {
        let Some(tr) = &o.trace else { continue };
        let line = TraceLine {
            t: o.t,
            row_sums_cdr: sums(tr.alpha_cdr.as_ref()),
            row_sums_ncr: sums(tr.alpha_ncr.as_ref()),
            row_sums_ecr: sums(tr.alpha_ecr.as_ref()),
            row_sums_tdr: sums(tr.alpha_tdr.as_ref()),
            candidate_sizes: tr.candidate_sizes.as_deref(),
        };
        writeln!(w, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::{ModelParams, OptimizerConfig};

    fn tiny() -> (Dataset, Vec<PlantedEdge>) {
        let cfg = SyntheticConfig {
            n_sensors: 3,
            t_train: 500,
            t_test: 300,
            planted_edges: vec![PlantedEdge::new(0, 0, 1, 0.6), PlantedEdge::new(0, 1, 2, 0.8), PlantedEdge::new(1, 2, 1, 0.7)],
            anomaly_rate: 0.05,
            ..SyntheticConfig::default()
        };
        let out = generate_synthetic(&cfg).unwrap();
        (out.dataset, out.planted_edges)
    }

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            width: 6,
            hidden: 6,
            top_k: 2,
            batch_size: 16,
            max_epochs: 2,
            val_fraction: 0.2,
            ..Hyperparams::default()
        }
    }

    fn zero_model() -> Model {
        let hp = tiny_hp();
        let d = hp.dims(3, 1);
        let mut params = ModelParams::init(d, 0);
        let embeddings = params.necr.embeddings.clone();
        for (_, t) in params.named_tensors_mut() {
            t.fill(0.0);
        }
        // The correlation graph needs non-degenerate embeddings.
        params.necr.embeddings = embeddings;
        params.fusion.b2.fill(0.7);
        Model::from_params(d, hp, params).unwrap()
    }

    #[test]
    fn zero_parameters_give_bias_prediction_and_zero_representations() {
        let model = zero_model();
        let (ds, _) = tiny();
        let w = SampleWindow::at(&ds.train, 10, 6).unwrap();
        let out = forward_window(&w, &RecurrentState::zeros(model.dims), &model, true).unwrap();
        assert!(out.x_hat.iter().all(|v| *v == 0.7));
        let b = &out.bundle;
        for r in [&b.d_cdr, &b.d_necr, &b.d_tdr, &b.d] {
            assert!(r.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn traced_attention_rows_sum_to_one_and_untraced_omits_them() {
        let model = Model::new(tiny_hp().dims(3, 1), tiny_hp()).unwrap();
        let (ds, _) = tiny();
        let w = SampleWindow::at(&ds.train, 20, 6).unwrap();
        let s = RecurrentState::zeros(model.dims);
        let a = forward_window(&w, &s, &model, true).unwrap();
        for att in [&a.bundle.alpha_cdr, &a.bundle.alpha_ncr, &a.bundle.alpha_ecr, &a.bundle.alpha_tdr] {
            let att = att.as_ref().expect("traced");
            assert!(att.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-6));
        }
        let b = forward_window(&w, &s, &model, true).unwrap();
        assert_eq!(a, b);
        let c = forward_window(&w, &s, &model, false).unwrap();
        assert!(c.bundle.alpha_cdr.is_none() && c.bundle.alpha_tdr.is_none());
        assert_eq!(c.x_hat, a.x_hat);
    }

    #[test]
    fn window_shape_mismatch_names_stage() {
        let model = Model::new(tiny_hp().dims(3, 1), tiny_hp()).unwrap();
        let (ds, _) = tiny();
        let w = SampleWindow::at(&ds.train, 20, 5).unwrap();
        match forward_window(&w, &RecurrentState::zeros(model.dims), &model, false) {
            Err(Error::Contract { stage, .. }) => assert_eq!(stage, "forward_window"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detect_and_evaluate_small_run() {
        let (ds, planted) = tiny();
        let e = run_experiment(&ds, &tiny_hp()).unwrap();
        let r = &e.report;
        assert_eq!(r.timestamps, (6..300).collect::<Vec<_>>());
        for (s, v) in r.scores.iter().zip(&r.verdicts) {
            assert_eq!(*v == 1, *s > r.threshold);
        }
        assert!((0.0..=1.0).contains(&e.eval.f1));
        let model = e.checkpoint.model().unwrap();
        let x = e.checkpoint.normalizer.apply(&ds.train).unwrap();
        let triples = discovered_triples(&model, &x, 6..60).unwrap();
        assert_eq!(triples.len(), 3 * 2 * 6);
        assert!(triples.windows(2).all(|w| w[0].weight >= w[1].weight));
        let rec = causal_recovery(&triples, &planted, 3, 6);
        assert_eq!(rec.n_planted, 2);
        assert!((rec.random_baseline - 2.0 / 54.0).abs() < 1e-15);
    }

    #[test]
    fn timing_covers_every_window() {
        let (ds, _) = tiny();
        let model = Model::new(tiny_hp().dims(3, 1), tiny_hp()).unwrap();
        let ck = ModelCheckpoint::new(
            &model,
            OptimizerConfig::adam(1e-3),
            crate::data::NormalizerParams::fit(&ds.train, crate::data::NormMethod::MinMax),
            ds.train.sensor_names().to_vec(),
            Vec::new(),
            None,
            Vec::new(),
        );
        let t = time_pipeline(&ds, &ck).unwrap();
        assert_eq!(t.n_windows, 294);
        assert!(t.per_window_seconds_sum <= t.inference_seconds_total);
        assert!(t.per_window_seconds_sum >= 0.95 * t.inference_seconds_total, "{t:?}");
        assert_eq!(t.train_seconds_per_epoch, None);
        let short = Dataset {
            test: ds.test.slice_time(0, 6).unwrap(),
            ..ds.clone()
        };
        assert!(matches!(time_pipeline(&short, &ck), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sweep_param_parsing_and_validation() {
        assert_eq!("theta".parse::<SweepParam>().unwrap(), SweepParam::Theta);
        assert_eq!("omega".parse::<SweepParam>().unwrap(), SweepParam::Width);
        assert!("lr".parse::<SweepParam>().is_err());
        assert!(SweepParam::Width.apply(&tiny_hp(), 2.5).is_err());
        assert_eq!(SweepParam::TopK.apply(&tiny_hp(), 3.0).unwrap().top_k, 3);
    }

    #[test]
    fn trace_file_has_one_line_per_window() {
        let model = Model::new(tiny_hp().dims(3, 1), tiny_hp()).unwrap();
        let (ds, _) = tiny();
        let outs = run_series(&model, &ds.train, 6..20, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        write_trace(&p, &outs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 14);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["candidate_sizes"].as_array().unwrap().len(), 3);
    }
}
