//! Point-adjusted detection metrics, rank AUC, and root-cause retrieval
//! metrics (HitRate@P%, NDCG@P%).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::RootCauseSegment;
use crate::error::{Error, Result};

/// Percentages reported by default for root-cause retrieval.
pub const DEFAULT_PERCENTAGES: [u32; 2] = [100, 150];

/// Maximal runs of 1s as inclusive `(start, end)` pairs.
pub fn segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in labels.iter().enumerate() {
        match (v != 0, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len() - 1));
    }
    out
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(what, format!("lengths differ: {a} vs {b}")));
    }
    Ok(())
}

/// A truth segment with any detection inside it counts as fully detected.
pub fn point_adjust(pred: &[u8], truth: &[u8]) -> Result<Vec<u8>> {
    check_lengths("point_adjust", pred.len(), truth.len())?;
    let mut out: Vec<u8> = pred.iter().map(|&p| u8::from(p != 0)).collect();
    for (s, e) in segments(truth) {
        if out[s..=e].iter().any(|&p| p == 1) {
            out[s..=e].fill(1);
        }
    }
    Ok(out)
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. `None` unless both classes are present.
pub fn auc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let n_pos = truth.iter().filter(|&&v| v != 0).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != truth.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives (Mann–Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| truth[k] != 0).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(pred: &[u8], truth: &[u8]) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    /// Keyed by P.
    pub hitrate: BTreeMap<u32, f64>,
    pub ndcg: BTreeMap<u32, f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Truth segments with at least one detection; the retrieval metrics
    /// average over these.
    pub rca_segments: usize,
}

impl EvalResult {
    /// Point-adjusts `pred` before precision/recall/F1; AUC uses raw scores.
    pub fn from_verdicts(pred: &[u8], scores: &[f64], truth: &[u8]) -> Result<Self> {
        check_lengths("detection_metrics", scores.len(), truth.len())?;
        let adjusted = point_adjust(pred, truth)?;
        let c = Confusion::from_labels(&adjusted, truth);
        Ok(Self {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            auc: auc(scores, truth),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            ..Self::default()
        })
    }

    /// Fixed-order metric table.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let header = ["precision", "recall", "f1", "auc", "h@100", "h@150", "n@100", "n@150"];
        let values = [
            opt(Some(self.precision)),
            opt(Some(self.recall)),
            opt(Some(self.f1)),
            opt(self.auc),
            opt(self.hitrate.get(&100).copied()),
            opt(self.hitrate.get(&150).copied()),
            opt(self.ndcg.get(&100).copied()),
            opt(self.ndcg.get(&150).copied()),
        ];
        let mut out = String::new();
        for h in header {
            out.push_str(&format!("{h:>10}"));
        }
        out.push('\n');
        for v in values {
            out.push_str(&format!("{v:>10}"));
        }
        out
    }
}

pub fn detection_metrics(scores: &[f64], truth: &[u8], threshold: f64) -> Result<EvalResult> {
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    EvalResult::from_verdicts(&pred, scores, truth)
}

/// `⌊P·|GT|/100⌋`, at least 1.
pub fn cutoff(p: f64, n_truth: usize) -> usize {
    ((p * n_truth as f64 / 100.0 + 1e-9).floor() as usize).max(1)
}

fn check_truth(truth: &BTreeSet<usize>, p: f64) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("root-cause truth set is empty".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::UndefinedMetric(format!("percentage P = {p} must be >= 1")));
    }
    Ok(())
}

pub fn hitrate_at_p(ranked: &[usize], truth: &BTreeSet<usize>, p: f64) -> Result<f64> {
    check_truth(truth, p)?;
    let k = cutoff(p, truth.len());
    let hits = ranked.iter().take(k).filter(|s| truth.contains(s)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Binary-relevance NDCG over the top `⌊P·|GT|/100⌋` positions.
pub fn ndcg_at_p(ranked: &[usize], truth: &BTreeSet<usize>, p: f64) -> Result<f64> {
    check_truth(truth, p)?;
    let k = cutoff(p, truth.len());
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, s)| truth.contains(s))
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(gain).sum();
    Ok(dcg / idcg)
}

/// Sensor indices by descending score, ties to the lower index.
pub fn rank_sensors(rs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rs.len()).collect();
    idx.sort_by(|&a, &b| rs[b].total_cmp(&rs[a]).then(a.cmp(&b)));
    idx
}

/// Root-cause retrieval over truth segments that contain at least one
/// detection. Root-cause scores are max-pooled over the flagged timesteps of
/// each segment, ranked, and scored against that segment's sensors; results
/// are averaged over segments. `root_scores[t]` is `None` where no score
/// exists (the first ω timestamps).
pub fn root_cause_metrics(
    root_scores: &[Option<Vec<f64>>],
    verdicts: &[u8],
    truth: &[RootCauseSegment],
    percentages: &[u32],
) -> Result<(BTreeMap<u32, f64>, BTreeMap<u32, f64>, usize)> {
    check_lengths("root_cause_metrics", root_scores.len(), verdicts.len())?;
    let mut hit: BTreeMap<u32, f64> = BTreeMap::new();
    let mut ndcg: BTreeMap<u32, f64> = BTreeMap::new();
    let mut used = 0;
    for seg in truth {
        let gt: BTreeSet<usize> = seg.sensors.iter().copied().collect();
        if gt.is_empty() {
            continue;
        }
        let mut pooled: Option<Vec<f64>> = None;
        for t in seg.start..=seg.end.min(verdicts.len().saturating_sub(1)) {
            if verdicts[t] == 0 {
                continue;
            }
            let Some(rs) = &root_scores[t] else { continue };
            pooled = Some(match pooled {
                None => rs.clone(),
                Some(p) => p.iter().zip(rs).map(|(a, b)| a.max(*b)).collect(),
            });
        }
        let Some(pooled) = pooled else { continue };
        let ranked = rank_sensors(&pooled);
        for &p in percentages {
            *hit.entry(p).or_default() += hitrate_at_p(&ranked, &gt, p as f64)?;
            *ndcg.entry(p).or_default() += ndcg_at_p(&ranked, &gt, p as f64)?;
        }
        used += 1;
    }
    for v in hit.values_mut().chain(ndcg.values_mut()) {
        *v /= used as f64;
    }
    Ok((hit, ndcg, used))
}
