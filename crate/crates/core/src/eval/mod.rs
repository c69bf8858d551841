//! Regression, correlation, ranking and classification metrics, and
//! stratified fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finetune::Tier;
use crate::hash::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("R² is undefined for constant truth")]
    ConstantTruth,
    #[error("correlation is undefined for zero-variance input")]
    ZeroVariance,
    #[error("family '{0}' has no reference candidate")]
    NoReference(String),
    #[error("family '{0}' needs at least two candidates")]
    TooFewCandidates(String),
    #[error("invalid fold request: {0}")]
    Folds(String),
    #[error("unknown label '{0}'")]
    Label(String),
}

fn check_pair(a: &[f64], b: &[f64], need: usize) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Length(a.len(), b.len()));
    }
    if a.len() < need {
        return Err(EvalError::TooShort { need, got: a.len() });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, truth, 1)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `1 - SS_res / SS_tot`, with `SS_tot` about the mean of `truth`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, truth, 1)?;
    let m = mean(truth);
    let ss_tot: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_pair(a, b, 2)?;
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_pair(a, b, 2)?;
    pearson(&fractional_ranks(a), &fractional_ranks(b))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let m = mean(values);
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
    };
    MeanStd { mean: m, std }
}

/// Candidates of one target with predicted scores (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFamily {
    pub molecule_id: String,
    pub candidate_ids: Vec<String>,
    /// Deterministic tie-break keys, one per candidate.
    pub keys: Vec<u64>,
    pub scores: Vec<f64>,
    pub reference_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRanking {
    pub molecule_id: String,
    pub candidate_ids: Vec<String>,
    pub predicted: Vec<f64>,
    pub reference_id: String,
    /// 1-based position of the reference after sorting.
    pub reference_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub k_max: usize,
    pub families: Vec<FamilyRanking>,
    /// `hit_rate[k - 1]` is the fraction of families whose reference is
    /// among the top `k`.
    pub hit_rate: Vec<f64>,
}

impl RankReport {
    pub fn hit_at(&self, k: usize) -> f64 {
        self.hit_rate[k.clamp(1, self.k_max) - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,hit_rate\n");
        for (i, h) in self.hit_rate.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, h));
        }
        out
    }
}

/// Sort each family ascending by score (ties by key, then position) and
/// record where its reference lands.
pub fn topk_ranking(families: &[ScoredFamily], k_max: usize) -> Result<RankReport, EvalError> {
    if k_max == 0 {
        return Err(EvalError::TooShort { need: 1, got: 0 });
    }
    let mut hits = vec![0usize; k_max];
    let mut rankings = Vec::with_capacity(families.len());
    for fam in families {
        let n = fam.scores.len();
        if fam.candidate_ids.len() != n || fam.keys.len() != n {
            return Err(EvalError::Length(
                fam.candidate_ids.len().min(fam.keys.len()),
                n,
            ));
        }
        if n < 2 {
            return Err(EvalError::TooFewCandidates(fam.molecule_id.clone()));
        }
        let reference = match fam.reference_index {
            Some(r) if r < n => r,
            _ => return Err(EvalError::NoReference(fam.molecule_id.clone())),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            fam.scores[i]
                .total_cmp(&fam.scores[j])
                .then(fam.keys[i].cmp(&fam.keys[j]))
                .then(i.cmp(&j))
        });
        let rank = order
            .iter()
            .position(|&i| i == reference)
            .expect("reference in order")
            + 1;
        for (k, h) in hits.iter_mut().enumerate() {
            if rank <= k + 1 {
                *h += 1;
            }
        }
        rankings.push(FamilyRanking {
            molecule_id: fam.molecule_id.clone(),
            candidate_ids: order
                .iter()
                .map(|&i| fam.candidate_ids[i].clone())
                .collect(),
            predicted: order.iter().map(|&i| fam.scores[i]).collect(),
            reference_id: fam.candidate_ids[reference].clone(),
            reference_rank: rank,
        });
    }
    let total = families.len().max(1) as f64;
    Ok(RankReport {
        k_max,
        families: rankings,
        hit_rate: hits.into_iter().map(|h| h as f64 / total).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tier: Tier,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// Set when nothing was predicted as this class; precision is then 0.
    pub no_predictions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Rows are true tiers, columns predicted, both in [`Tier::ALL`] order.
    pub confusion: [[usize; 3]; 3],
}

impl ClassificationReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("tier,precision,recall,f1,support\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.tier, c.precision, c.recall, c.f1, c.support
            ));
        }
        out.push_str(&format!(
            "accuracy,,,{},{}\n",
            self.accuracy,
            self.confusion.iter().flatten().sum::<usize>()
        ));
        out
    }

    pub fn confusion_csv(&self) -> String {
        let names: Vec<String> = Tier::ALL.iter().map(|t| t.to_string()).collect();
        let mut out = format!("true\\predicted,{}\n", names.join(","));
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{},{}\n", names[i], cells.join(",")));
        }
        out
    }
}

pub fn classification_report(
    pred: &[Tier],
    truth: &[Tier],
) -> Result<ClassificationReport, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::TooShort { need: 1, got: 0 });
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, t) in pred.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    let classes = Tier::ALL
        .iter()
        .map(|&tier| {
            let c = tier.index();
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..3).map(|r| confusion[r][c]).sum();
            let precision = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if support == 0 {
                0.0
            } else {
                tp as f64 / support as f64
            };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                tier,
                precision,
                recall,
                f1,
                support,
                predicted,
                no_predictions: predicted == 0,
            }
        })
        .collect();
    let diag: usize = (0..3).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        classes,
        accuracy: diag as f64 / pred.len() as f64,
        confusion,
    })
}

/// Fraction of equal pairs.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::Length(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::TooShort { need: 1, got: 0 });
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    /// Fold id per sample.
    pub assignment: Vec<usize>,
    /// Stratum id per sample.
    pub strata: Vec<usize>,
    /// Set when fewer strata than requested bins were non-empty.
    pub collapsed: bool,
}

impl FoldSpec {
    /// `(train, test)` index lists for `fold`, ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Empirical-quantile bin per value, renumbered to drop empty bins.
/// Returns the bins and whether any requested bin came out empty.
pub fn quantile_bins(values: &[f64], n_bins: usize) -> (Vec<usize>, bool) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..n_bins)
        .map(|b| sorted[(b * n / n_bins).min(n - 1)])
        .collect();
    let raw: Vec<usize> = values
        .iter()
        .map(|v| edges.iter().filter(|&&e| *v >= e).count())
        .collect();
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let bins = raw
        .iter()
        .map(|b| used.binary_search(b).expect("present"))
        .collect();
    (bins, used.len() < n_bins)
}

fn deal(strata: Vec<usize>, k: usize, seed: u64, collapsed: bool) -> FoldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "eval.kfold"));
    let n_strata = strata.iter().max().map_or(0, |m| m + 1);
    let mut assignment = vec![0; strata.len()];
    let mut offset = 0;
    for s in 0..n_strata {
        let mut members: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == s).collect();
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = (offset + j) % k;
        }
        offset += members.len();
    }
    FoldSpec {
        k,
        assignment,
        strata,
        collapsed,
    }
}

fn check_folds(n: usize, k: usize) -> Result<(), EvalError> {
    if k < 2 {
        return Err(EvalError::Folds(format!("K = {k} must be at least 2")));
    }
    if n < k {
        return Err(EvalError::Folds(format!(
            "{n} samples cannot fill {k} folds"
        )));
    }
    Ok(())
}

/// Stratify by quantile bins of `values`, then deal each shuffled stratum
/// round-robin across `k` folds.
pub fn stratified_kfold(
    values: &[f64],
    k: usize,
    n_bins: usize,
    seed: u64,
) -> Result<FoldSpec, EvalError> {
    check_folds(values.len(), k)?;
    if n_bins == 0 {
        return Err(EvalError::Folds("n_bins must be at least 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Folds("values must be finite".into()));
    }
    let (strata, collapsed) = quantile_bins(values, n_bins);
    Ok(deal(strata, k, seed, collapsed))
}

/// Stratify by discrete labels, one stratum per distinct label.
pub fn stratified_kfold_labels<T: Ord + Clone>(
    labels: &[T],
    k: usize,
    seed: u64,
) -> Result<FoldSpec, EvalError> {
    check_folds(labels.len(), k)?;
    let mut distinct = labels.to_vec();
    distinct.sort();
    distinct.dedup();
    let strata = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("present"))
        .collect();
    Ok(deal(strata, k, seed, false))
}

/// Epoch with the highest score; NaN never wins and ties go to the earliest.
pub fn select_best_snapshot(history: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(epoch, score) in history {
        best = match best {
            None => Some((epoch, score)),
            Some((_, b)) if !score.is_nan() && (b.is_nan() || score > b) => Some((epoch, score)),
            keep => keep,
        };
    }
    best.map(|(e, _)| e)
}

#[cfg(test)]
mod tests;
