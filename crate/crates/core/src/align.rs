//! Similarity matrices, channel ensembles, ranking and evaluation.
//!
//! Ranking convention used everywhere: candidates are ordered by
//! descending score, ties broken by ascending column position. The rank of
//! a gold candidate is its 1-based position in that order.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense query × candidate score matrix. `rows`/`cols` hold the entity ids
/// the rows and columns stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub tag: String,
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_pos: HashMap<usize, usize>,
    col_pos: HashMap<usize, usize>,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(tag: impl Into<String>, rows: Vec<usize>, cols: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows.len() * cols.len() {
            return Err(Error::Contract(format!(
                "{} scores for a {}x{} similarity matrix",
                data.len(),
                rows.len(),
                cols.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("similarity matrix has non-finite scores".into()));
        }
        let row_pos = rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let col_pos = cols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self {
            tag: tag.into(),
            rows,
            cols,
            row_pos,
            col_pos,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.rows
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols.len() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.cols.len();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn row_of(&self, entity: usize) -> Option<usize> {
        self.row_pos.get(&entity).copied()
    }

    pub fn col_of(&self, entity: usize) -> Option<usize> {
        self.col_pos.get(&entity).copied()
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let (n, m) = self.shape();
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                data[c * n + r] = self.get(r, c);
            }
        }
        SimilarityMatrix::new(self.tag.clone(), self.cols.clone(), self.rows.clone(), data).expect("shape")
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SimilarityMatrix> {
        SimilarityMatrix::new(
            self.tag.clone(),
            self.rows.clone(),
            self.cols.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn same_axes(&self, other: &SimilarityMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// Cosine similarity between the selected source rows and target rows.
/// Both embedding matrices must already be row-normalized.
pub fn similarity_matrix(
    tag: impl Into<String>,
    source: &Tensor,
    target: &Tensor,
    rows: &[usize],
    cols: &[usize],
) -> Result<SimilarityMatrix> {
    if source.cols() != target.cols() {
        return Err(Error::Contract(format!(
            "embedding widths differ: {} vs {}",
            source.cols(),
            target.cols()
        )));
    }
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &r in rows {
        if r >= source.rows() || cols.iter().any(|&c| c >= target.rows()) {
            return Err(Error::Contract("similarity index out of range".into()));
        }
        let a = source.row(r);
        for &c in cols {
            data.push(a.iter().zip(target.row(c)).map(|(x, y)| x * y).sum());
        }
    }
    SimilarityMatrix::new(tag, rows.to_vec(), cols.to_vec(), data)
}

fn check_stack(mats: &[SimilarityMatrix]) -> Result<&SimilarityMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Validation("cannot ensemble an empty list of matrices".into()))?;
    if let Some(bad) = mats.iter().find(|m| !m.same_axes(first)) {
        return Err(Error::Contract(format!(
            "matrix {:?} has axes {:?}, expected {:?}",
            bad.tag,
            bad.shape(),
            first.shape()
        )));
    }
    Ok(first)
}

/// Entrywise `Σ_c w_c · mat_c`.
pub fn ensemble_weighted(mats: &[SimilarityMatrix], weights: &[f64]) -> Result<SimilarityMatrix> {
    let first = check_stack(mats)?;
    if weights.len() != mats.len() {
        return Err(Error::Contract(format!("{} weights for {} matrices", weights.len(), mats.len())));
    }
    let mut data = vec![0.0; first.data.len()];
    for (m, &w) in mats.iter().zip(weights) {
        for (o, &v) in data.iter_mut().zip(&m.data) {
            *o += w * v;
        }
    }
    SimilarityMatrix::new("ensemble", first.rows.clone(), first.cols.clone(), data)
}

/// Entrywise mean, computed as `m₀ + Σ_c (m_c − m₀) / n` so that
/// averaging identical matrices returns the matrix bit for bit.
pub fn ensemble_average(mats: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
    let first = check_stack(mats)?;
    let n = mats.len() as f64;
    let data = (0..first.data.len())
        .map(|i| {
            let base = first.data[i];
            base + mats[1..].iter().map(|m| m.data[i] - base).sum::<f64>() / n
        })
        .collect();
    SimilarityMatrix::new("ensemble", first.rows.clone(), first.cols.clone(), data)
}

/// Nonnegative channel weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(pub Vec<f64>);

impl ChannelWeights {
    /// Each channel's Hits@1 over the sum; uniform when every channel scored zero.
    pub fn from_hits(hits: &[f64]) -> Self {
        let total: f64 = hits.iter().sum();
        if total > 0.0 {
            ChannelWeights(hits.iter().map(|h| h / total).collect())
        } else {
            let n = hits.len().max(1) as f64;
            ChannelWeights(vec![1.0 / n; hits.len()])
        }
    }
}

/// Weights every channel by its Hits@1 on `val_pairs`.
pub fn ensemble_preweighted(
    mats: &[SimilarityMatrix],
    val_pairs: &[(usize, usize)],
) -> Result<(SimilarityMatrix, ChannelWeights)> {
    check_stack(mats)?;
    let hits: Vec<f64> = mats.iter().map(|m| hits_at_k(m, val_pairs, 1)).collect();
    let weights = ChannelWeights::from_hits(&hits);
    let out = ensemble_weighted(mats, &weights.0)?;
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Non-aligned cells sampled per aligned training cell.
    pub negatives_per_positive: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 5,
            lambda: 1e-3,
            iterations: 2000,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Linear decision function `w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

/// Soft-margin linear classifier: minimizes
/// `λ/2 ‖w‖² + mean_class-balanced hinge(1 − y(w·x + b))` by full-batch
/// subgradient descent with step `lr/√t`, returning the average of the
/// second half of the iterates.
pub fn fit_linear_svm(xs: &[Vec<f64>], ys: &[f64], cfg: &ClassifierConfig) -> Result<LinearClassifier> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Validation("classifier needs matching, non-empty samples and labels".into()));
    }
    let n_pos = ys.iter().filter(|&&y| y > 0.0).count();
    let n_neg = ys.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation(format!(
            "classifier training set has a single class ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let dim = xs[0].len();
    let sample_w: Vec<f64> = ys
        .iter()
        .map(|&y| if y > 0.0 { 0.5 / n_pos as f64 } else { 0.5 / n_neg as f64 })
        .collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut averaged = 0usize;
    let start_avg = cfg.iterations / 2;
    for t in 0..cfg.iterations {
        let mut gw: Vec<f64> = w.iter().map(|v| cfg.lambda * v).collect();
        let mut gb = 0.0;
        for ((x, &y), &sw) in xs.iter().zip(ys).zip(&sample_w) {
            let margin = y * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b);
            if margin < 1.0 {
                for (g, &v) in gw.iter_mut().zip(x) {
                    *g -= sw * y * v;
                }
                gb -= sw * y;
            }
        }
        let step = cfg.learning_rate / ((t + 1) as f64).sqrt();
        for (v, g) in w.iter_mut().zip(&gw) {
            *v -= step * g;
        }
        b -= step * gb;
        if t >= start_avg {
            for (a, v) in avg_w.iter_mut().zip(&w) {
                *a += v;
            }
            avg_b += b;
            averaged += 1;
        }
    }
    let k = averaged.max(1) as f64;
    Ok(LinearClassifier {
        weights: avg_w.iter().map(|v| v / k).collect(),
        bias: avg_b / k,
    })
}

/// Fits a linear classifier on per-channel scores of aligned training cells
/// against randomly drawn non-aligned cells; the ensemble score of a cell is
/// the decision value.
pub fn ensemble_classifier(
    mats: &[SimilarityMatrix],
    train_pairs: &[(usize, usize)],
    cfg: &ClassifierConfig,
) -> Result<(SimilarityMatrix, LinearClassifier)> {
    let first = check_stack(mats)?;
    let (_, n_cols) = first.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features = |r: usize, c: usize| mats.iter().map(|m| m.get(r, c)).collect::<Vec<f64>>();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(s, t) in train_pairs {
        let (Some(r), Some(c)) = (first.row_of(s), first.col_of(t)) else { continue };
        xs.push(features(r, c));
        ys.push(1.0);
        if n_cols < 2 {
            continue;
        }
        for _ in 0..cfg.negatives_per_positive {
            let mut j = rng.gen_range(0..n_cols - 1);
            if j >= c {
                j += 1;
            }
            xs.push(features(r, j));
            ys.push(-1.0);
        }
    }
    let clf = fit_linear_svm(&xs, &ys, cfg)?;
    let (n, m) = first.shape();
    let mut data = Vec::with_capacity(n * m);
    for r in 0..n {
        for c in 0..m {
            data.push(clf.decision(&features(r, c)));
        }
    }
    let out = SimilarityMatrix::new("ensemble", first.rows.clone(), first.cols.clone(), data)?;
    Ok((out, clf))
}

/// Decision values of an already fitted classifier on a stack of channel
/// matrices.
pub fn ensemble_with_classifier(mats: &[SimilarityMatrix], clf: &LinearClassifier) -> Result<SimilarityMatrix> {
    let first = check_stack(mats)?;
    if clf.weights.len() != mats.len() {
        return Err(Error::Contract(format!(
            "classifier has {} weights for {} channels",
            clf.weights.len(),
            mats.len()
        )));
    }
    let data = (0..first.data.len())
        .map(|i| clf.bias + mats.iter().zip(&clf.weights).map(|(m, w)| w * m.data[i]).sum::<f64>())
        .collect();
    SimilarityMatrix::new("ensemble", first.rows.clone(), first.cols.clone(), data)
}

/// Rank of column `gold` in row `r` (1-based).
pub fn rank_in_row(sim: &SimilarityMatrix, r: usize, gold: usize) -> usize {
    let row = sim.row(r);
    let g = row[gold];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > g || (v == g && c < gold))
        .count()
}

/// Rank of each gold pair's target, `None` when the pair cannot be scored
/// (its source is not a row or its target is not a column).
pub fn gold_ranks(sim: &SimilarityMatrix, gold: &[(usize, usize)]) -> Vec<Option<usize>> {
    gold.iter()
        .map(|&(s, t)| match (sim.row_of(s), sim.col_of(t)) {
            (Some(r), Some(c)) => Some(rank_in_row(sim, r, c)),
            _ => None,
        })
        .collect()
}

/// Per-query value of a rank metric; a missing gold counts as a miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMetric {
    Hits(usize),
    ReciprocalRank,
    Ndcg(usize),
    Precision(usize),
    Recall(usize),
}

impl RankMetric {
    pub fn per_query(self, rank: Option<usize>) -> f64 {
        let Some(rank) = rank else { return 0.0 };
        match self {
            RankMetric::Hits(k) | RankMetric::Recall(k) => f64::from(u8::from(rank <= k)),
            RankMetric::ReciprocalRank => 1.0 / rank as f64,
            // one relevant item: ideal DCG is 1
            RankMetric::Ndcg(k) if rank <= k => 1.0 / ((1 + rank) as f64).log2(),
            RankMetric::Ndcg(_) => 0.0,
            RankMetric::Precision(k) => f64::from(u8::from(rank <= k)) / k as f64,
        }
    }

    pub fn label(self) -> String {
        match self {
            RankMetric::Hits(k) => format!("hits@{k}"),
            RankMetric::ReciprocalRank => "mrr".into(),
            RankMetric::Ndcg(k) => format!("ndcg@{k}"),
            RankMetric::Precision(k) => format!("precision@{k}"),
            RankMetric::Recall(k) => format!("recall@{k}"),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn metric(sim: &SimilarityMatrix, gold: &[(usize, usize)], m: RankMetric) -> f64 {
    mean(gold_ranks(sim, gold).into_iter().map(|r| m.per_query(r)))
}

pub fn hits_at_k(sim: &SimilarityMatrix, gold: &[(usize, usize)], k: usize) -> f64 {
    metric(sim, gold, RankMetric::Hits(k))
}

pub fn mrr(sim: &SimilarityMatrix, gold: &[(usize, usize)]) -> f64 {
    metric(sim, gold, RankMetric::ReciprocalRank)
}

pub fn ndcg_at_k(sim: &SimilarityMatrix, gold: &[(usize, usize)], k: usize) -> f64 {
    metric(sim, gold, RankMetric::Ndcg(k))
}

/// `(precision@k, recall@k)`: gold hits over `k·#queries`, and the fraction
/// of queries whose gold is in the top `k`.
pub fn precision_recall_at_k(sim: &SimilarityMatrix, gold: &[(usize, usize)], k: usize) -> (f64, f64) {
    let ranks = gold_ranks(sim, gold);
    (
        mean(ranks.iter().map(|&r| RankMetric::Precision(k).per_query(r))),
        mean(ranks.iter().map(|&r| RankMetric::Recall(k).per_query(r))),
    )
}

/// Percentile interval `[2.5%, 97.5%]` of `statistic` over `n_resamples`
/// resamples (with replacement) of `n` query indices.
pub fn bootstrap_ci_with(
    n: usize,
    statistic: impl Fn(&[usize]) -> f64,
    n_resamples: usize,
    rng_seed: u64,
) -> (f64, f64) {
    if n == 0 || n_resamples == 0 {
        let v = statistic(&[]);
        return (v, v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut idx = vec![0usize; n];
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        stats.push(statistic(&idx));
    }
    stats.sort_by(f64::total_cmp);
    (quantile(&stats, 0.025), quantile(&stats, 0.975))
}

/// Bootstrap interval of the mean of per-query values, widened if needed
/// so that it contains the point estimate.
pub fn bootstrap_ci(per_query: &[f64], n_resamples: usize, rng_seed: u64) -> (f64, f64) {
    let point = mean(per_query.iter().copied());
    let (lo, hi) = bootstrap_ci_with(
        per_query.len(),
        |idx| mean(idx.iter().map(|&i| per_query[i])),
        n_resamples,
        rng_seed,
    );
    (lo.min(point), hi.max(point))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub queries: usize,
    pub missing_gold: usize,
    pub resamples: usize,
    pub metrics: Vec<(RankMetric, Estimate)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub hits_ks: Vec<usize>,
    /// Cutoff for NDCG, precision and recall.
    pub k: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hits_ks: vec![1, 10],
            k: 10,
            resamples: 1000,
            seed: 0,
        }
    }
}

impl MetricReport {
    pub fn get(&self, m: RankMetric) -> Option<Estimate> {
        self.metrics.iter().find(|(k, _)| *k == m).map(|(_, e)| *e)
    }

    /// `key: value` text, one block per metric with its interval.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "queries: {}", self.queries);
        let _ = writeln!(out, "missing_gold: {}", self.missing_gold);
        let _ = writeln!(out, "bootstrap_resamples: {}", self.resamples);
        for (m, e) in &self.metrics {
            let _ = writeln!(out, "{}:", m.label());
            let _ = writeln!(out, "  value: {:.6}", e.value);
            let _ = writeln!(out, "  ci95_lo: {:.6}", e.lo);
            let _ = writeln!(out, "  ci95_hi: {:.6}", e.hi);
        }
        out
    }
}

/// Computes every configured metric with its bootstrap interval.
pub fn evaluate(sim: &SimilarityMatrix, gold: &[(usize, usize)], cfg: &EvalConfig) -> MetricReport {
    let ranks = gold_ranks(sim, gold);
    let missing = ranks.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} gold targets are not candidates and count as misses");
    }
    let mut metrics: Vec<RankMetric> = cfg.hits_ks.iter().map(|&k| RankMetric::Hits(k)).collect();
    metrics.extend([
        RankMetric::ReciprocalRank,
        RankMetric::Ndcg(cfg.k),
        RankMetric::Precision(cfg.k),
        RankMetric::Recall(cfg.k),
    ]);
    let metrics = metrics
        .into_iter()
        .map(|m| {
            let values: Vec<f64> = ranks.iter().map(|&r| m.per_query(r)).collect();
            let value = mean(values.iter().copied());
            let (lo, hi) = bootstrap_ci(&values, cfg.resamples, cfg.seed);
            (m, Estimate { value, lo, hi })
        })
        .collect();
    MetricReport {
        queries: gold.len(),
        missing_gold: missing,
        resamples: cfg.resamples,
        metrics,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidates {
    pub query: usize,
    /// (candidate entity id, score), best first.
    pub items: Vec<(usize, f64)>,
}

/// The `k` best candidates of every row. With `allowed`, a row only ranks
/// the candidate entities listed for its query (rows without an entry
/// rank nothing).
pub fn top_k(
    sim: &SimilarityMatrix,
    k: usize,
    allowed: Option<&HashMap<usize, HashSet<usize>>>,
) -> Result<Vec<RankedCandidates>> {
    if k == 0 {
        return Err(Error::Validation("top-k needs k >= 1".into()));
    }
    let mut out = Vec::with_capacity(sim.rows.len());
    for (r, &q) in sim.rows.iter().enumerate() {
        let row = sim.row(r);
        let mut cols: Vec<usize> = match allowed {
            Some(map) => {
                let Some(set) = map.get(&q) else {
                    out.push(RankedCandidates { query: q, items: Vec::new() });
                    continue;
                };
                (0..sim.cols.len()).filter(|&c| set.contains(&sim.cols[c])).collect()
            }
            None => (0..sim.cols.len()).collect(),
        };
        cols.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        cols.truncate(k);
        out.push(RankedCandidates {
            query: q,
            items: cols.into_iter().map(|c| (sim.cols[c], row[c])).collect(),
        });
    }
    Ok(out)
}

/// `query<TAB>rank<TAB>candidate<TAB>score` lines.
pub fn top_k_tsv(
    ranked: &[RankedCandidates],
    query_label: impl Fn(usize) -> String,
    candidate_label: impl Fn(usize) -> String,
) -> String {
    let mut out = String::new();
    for rc in ranked {
        let q = query_label(rc.query);
        for (i, &(c, s)) in rc.items.iter().enumerate() {
            let _ = writeln!(out, "{q}\t{}\t{}\t{s:.6}", i + 1, candidate_label(c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> SimilarityMatrix {
        let n = rows.len();
        let m = rows[0].len();
        SimilarityMatrix::new("t", (0..n).collect(), (0..m).collect(), rows.concat()).unwrap()
    }

    fn identity(n: usize) -> SimilarityMatrix {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        SimilarityMatrix::new("id", (0..n).collect(), (0..n).collect(), data).unwrap()
    }

    fn diag(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, i)).collect()
    }

    #[test]
    fn identity_scores_perfectly() {
        let s = identity(5);
        let g = diag(5);
        assert_eq!(hits_at_k(&s, &g, 1), 1.0);
        assert_eq!(mrr(&s, &g), 1.0);
        assert_eq!(ndcg_at_k(&s, &g, 10), 1.0);
    }

    #[test]
    fn rank_two_gives_half_reciprocal() {
        let s = mat(&[&[0.9, 0.5, 0.1]]);
        assert_eq!(mrr(&s, &[(0, 1)]), 0.5);
    }

    #[test]
    fn ndcg_rank_three() {
        let s = mat(&[&[0.9, 0.8, 0.7, 0.1]]);
        assert!((ndcg_at_k(&s, &[(0, 2)], 10) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_column() {
        let s = mat(&[&[0.5, 0.5, 0.5]]);
        assert_eq!(gold_ranks(&s, &[(0, 0), (0, 2)]), vec![Some(1), Some(3)]);
    }

    #[test]
    fn missing_gold_is_a_miss() {
        let s = mat(&[&[0.5, 0.2]]);
        let r = evaluate(&s, &[(0, 7)], &EvalConfig { resamples: 10, ..Default::default() });
        assert_eq!(r.missing_gold, 1);
        assert_eq!(r.get(RankMetric::Hits(1)).unwrap().value, 0.0);
    }

    #[test]
    fn precision_and_recall() {
        let s = mat(&[&[0.9, 0.1, 0.0], &[0.1, 0.2, 0.9]]);
        let (p, r) = precision_recall_at_k(&s, &[(0, 0), (1, 0)], 2);
        assert_eq!(r, 0.5);
        assert_eq!(p, 0.25);
    }

    #[test]
    fn cosine_similarity_properties() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.6, 0.8], vec![1.0, 0.0]]).unwrap();
        let s = similarity_matrix("c", &a, &a, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(1, 1), 1.0);
        assert_eq!(s.get(0, 1), 0.0);
        let ab = similarity_matrix("c", &a, &b, &[0, 1], &[0, 1]).unwrap();
        let ba = similarity_matrix("c", &b, &a, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(ab.transpose().data(), ba.data());
        let wide = Tensor::zeros(2, 3);
        assert!(similarity_matrix("c", &a, &wide, &[0], &[0]).is_err());
    }

    #[test]
    fn average_ensembles() {
        let a = mat(&[&[0.3, -0.2], &[0.7, 0.1]]);
        assert_eq!(ensemble_average(&[a.clone(), a.clone()]).unwrap().data(), a.data());
        assert_eq!(ensemble_average(&[a.clone()]).unwrap().data(), a.data());
        let neg = a.map(|v| -v).unwrap();
        assert!(ensemble_average(&[a, neg]).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn preweighted_weights() {
        assert_eq!(ChannelWeights::from_hits(&[0.5, 0.3, 0.2]).0, vec![0.5, 0.3, 0.2]);
        assert_eq!(ChannelWeights::from_hits(&[0.0, 0.0, 0.0]).0, vec![1.0 / 3.0; 3]);
        let good = identity(4);
        let bad = mat(&[&[0.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], &[0.0, 0.0, 1.0, 0.0]]);
        let (out, w) = ensemble_preweighted(&[good.clone(), bad.clone(), bad], &diag(4)).unwrap();
        assert_eq!(w.0, vec![1.0, 0.0, 0.0]);
        assert_eq!(out.data(), good.data());
    }

    #[test]
    fn top_k_rules() {
        let s = identity(4);
        let t = top_k(&s, 1, None).unwrap();
        assert!(t.iter().all(|rc| rc.items[0].0 == rc.query));
        let flat = mat(&[&[0.2, 0.2, 0.2, 0.2]]);
        let t = top_k(&flat, 2, None).unwrap();
        assert_eq!(t[0].items.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
        let t = top_k(&flat, 10, None).unwrap();
        assert_eq!(t[0].items.len(), 4);
        assert!(top_k(&flat, 0, None).is_err());
        let allowed: HashMap<usize, HashSet<usize>> = [(0, [2, 3].into_iter().collect())].into_iter().collect();
        let t = top_k(&flat, 10, Some(&allowed)).unwrap();
        assert_eq!(t[0].items.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let ones = vec![1.0; 30];
        assert_eq!(bootstrap_ci(&ones, 200, 1), (1.0, 1.0));
        let v: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        assert_eq!(bootstrap_ci(&v, 300, 5), bootstrap_ci(&v, 300, 5));
        let (lo, hi) = bootstrap_ci(&v, 300, 5);
        let p = v.iter().sum::<f64>() / 40.0;
        assert!(lo <= p && p <= hi && lo < hi);
    }

    #[test]
    fn classifier_rejects_single_class() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(fit_linear_svm(&xs, &[1.0, 1.0], &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn classifier_symmetric_data_has_small_bias() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let v = 0.5 + 0.05 * i as f64;
            xs.push(vec![v, 0.3 * v]);
            ys.push(1.0);
            xs.push(vec![-v, -0.3 * v]);
            ys.push(-1.0);
        }
        let clf = fit_linear_svm(&xs, &ys, &ClassifierConfig::default()).unwrap();
        assert!(clf.bias.abs() < 1e-2, "{clf:?}");
        assert!(clf.weights[0] > 0.0);
    }
}
