//! Margin-based training of one channel: nearest-neighbour negatives,
//! adaptive-gradient updates, Hits@1 early stopping and grid search.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::align::{hits_at_k, similarity_matrix};
use crate::autodiff::{Distance, RowIndex, Tape, Var};
use crate::error::{Error, Result};
use crate::net::{channel_forward, embed, ChannelInput, ChannelModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub n_neg: usize,
    pub resample_every: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_grid: Vec<f64>,
    pub l2_grid: Vec<f64>,
    pub distance: Distance,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 3.0,
            n_neg: 15,
            resample_every: 50,
            max_epochs: 1500,
            patience: 50,
            lr_grid: vec![1e-3, 4e-3, 7e-3],
            l2_grid: vec![0.0, 1e-4, 1e-3],
            distance: Distance::L1,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be positive, got {}", self.margin));
        }
        if self.resample_every == 0 || self.max_epochs == 0 {
            return fail("resample_every and max_epochs must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return fail(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if self.lr_grid.is_empty() || self.l2_grid.is_empty() {
            return fail("learning-rate and l2 grids must be non-empty".into());
        }
        if self.lr_grid.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return fail(format!("learning rates must be positive: {:?}", self.lr_grid));
        }
        if self.l2_grid.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return fail(format!("l2 coefficients must be nonnegative: {:?}", self.l2_grid));
        }
        Ok(())
    }
}

/// Negatives for every training pair, computed at `epoch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSampleSet {
    pub epoch: usize,
    /// Source-side replacements for `e`, one list per pair.
    pub source: Vec<Vec<usize>>,
    /// Target-side replacements for `e′`, one list per pair.
    pub target: Vec<Vec<usize>>,
}

fn row_distance(a: &[f64], b: &[f64], d: Distance) -> f64 {
    match d {
        Distance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Distance::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    }
}

/// The `n` rows of `emb` nearest to row `anchor`, excluding `anchor`,
/// ties broken by smaller id.
fn nearest(emb: &Tensor, anchor: usize, n: usize, d: Distance) -> Vec<usize> {
    let a = emb.row(anchor);
    let mut cands: Vec<(f64, usize)> = (0..emb.rows())
        .filter(|&i| i != anchor)
        .map(|i| (row_distance(a, emb.row(i), d), i))
        .collect();
    let n = n.min(cands.len());
    if n == 0 {
        return Vec::new();
    }
    let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if n < cands.len() {
        cands.select_nth_unstable_by(n - 1, cmp);
        cands.truncate(n);
    }
    cands.sort_by(cmp);
    cands.into_iter().map(|(_, i)| i).collect()
}

/// For each pair `(e, e′)`: the `n_neg` source entities nearest to `e` and
/// the `n_neg` target entities nearest to `e′`, under the configured distance.
pub fn sample_negatives(
    emb_src: &Tensor,
    emb_tgt: &Tensor,
    seeds: &[(usize, usize)],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<NegativeSampleSet> {
    for &(s, t) in seeds {
        if s >= emb_src.rows() || t >= emb_tgt.rows() {
            return Err(Error::Contract(format!("seed pair ({s}, {t}) is out of range")));
        }
    }
    let smallest = emb_src.rows().min(emb_tgt.rows());
    if !seeds.is_empty() && smallest < cfg.n_neg + 2 {
        log::warn!(
            "graph with {smallest} entities is too small for {} negatives; using all available",
            cfg.n_neg
        );
    }
    Ok(NegativeSampleSet {
        epoch,
        source: seeds.iter().map(|&(s, _)| nearest(emb_src, s, cfg.n_neg, cfg.distance)).collect(),
        target: seeds.iter().map(|&(_, t)| nearest(emb_tgt, t, cfg.n_neg, cfg.distance)).collect(),
    })
}

/// Hinge loss summed over both negative sides of every seed pair:
/// `[d(e,e′) − d(e⁻,e′) + γ]₊` and `[d(e,e′) − d(e,e′⁻) + γ]₊`.
pub fn margin_loss(
    tape: &mut Tape,
    src: Var,
    tgt: Var,
    seeds: &[(usize, usize)],
    negs: &NegativeSampleSet,
    margin: f64,
    distance: Distance,
) -> Result<Var> {
    if negs.source.len() != seeds.len() || negs.target.len() != seeds.len() {
        return Err(Error::Contract(format!(
            "{} negative lists for {} seed pairs",
            negs.source.len(),
            seeds.len()
        )));
    }
    // (anchor source row, anchor target row, negative row) per term and side
    let mut src_pos = Vec::new();
    let mut tgt_pos = Vec::new();
    let mut src_neg = Vec::new();
    let mut tgt_neg = Vec::new();
    let mut src_pos2 = Vec::new();
    let mut tgt_pos2 = Vec::new();
    for (k, &(s, t)) in seeds.iter().enumerate() {
        for &n in &negs.source[k] {
            src_pos.push(s);
            tgt_pos.push(t);
            src_neg.push(n);
        }
        for &n in &negs.target[k] {
            src_pos2.push(s);
            tgt_pos2.push(t);
            tgt_neg.push(n);
        }
    }
    let mut terms = Vec::new();
    if !src_neg.is_empty() {
        terms.push(side_terms(tape, src, tgt, src_pos, tgt_pos, src_neg, true, margin, distance)?);
    }
    if !tgt_neg.is_empty() {
        terms.push(side_terms(tape, src, tgt, src_pos2, tgt_pos2, tgt_neg, false, margin, distance)?);
    }
    match terms.len() {
        0 => tape.constant(Tensor::scalar(0.0)),
        1 => Ok(terms[0]),
        _ => tape.add(terms[0], terms[1]),
    }
}

#[allow(clippy::too_many_arguments)]
fn side_terms(
    tape: &mut Tape,
    src: Var,
    tgt: Var,
    s_idx: Vec<usize>,
    t_idx: Vec<usize>,
    n_idx: Vec<usize>,
    negative_on_source: bool,
    margin: f64,
    distance: Distance,
) -> Result<Var> {
    let s_idx: RowIndex = s_idx.into();
    let t_idx: RowIndex = t_idx.into();
    let n_idx: RowIndex = n_idx.into();
    let es = tape.gather_rows(src, &s_idx)?;
    let et = tape.gather_rows(tgt, &t_idx)?;
    let d_pos = tape.row_distance(es, et, distance)?;
    let d_neg = if negative_on_source {
        let en = tape.gather_rows(src, &n_idx)?;
        tape.row_distance(en, et, distance)?
    } else {
        let en = tape.gather_rows(tgt, &n_idx)?;
        tape.row_distance(es, en, distance)?
    };
    let diff = tape.sub(d_pos, d_neg)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.sum(hinge)
}

/// Adaptive-gradient optimizer: `acc += g²`, `θ −= lr·g / (√acc + ε)`,
/// with `g` the loss gradient plus `l2·θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub l2: f64,
    pub eps: f64,
    pub accumulators: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(model: &ChannelModel, lr: f64, l2: f64) -> Self {
        Self {
            lr,
            l2,
            eps: 1e-10,
            accumulators: model
                .store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut ChannelModel) -> Result<()> {
        for (p, acc) in model.store.iter_mut().zip(self.accumulators.iter_mut()) {
            let values = p.value.data_mut();
            for ((v, &g0), a) in values.iter_mut().zip(p.grad.data()).zip(acc.data_mut()) {
                let g = g0 + self.l2 * *v;
                *a += g * g;
                *v -= self.lr * g / (a.sqrt() + self.eps);
            }
            if !p.value.is_finite() {
                return Err(Error::Numeric(format!("parameter {} became non-finite", p.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub hits1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best monitoring Hits@1.
    pub model: ChannelModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_hits1: f64,
    pub lr: f64,
    pub l2: f64,
}

impl TrainOutcome {
    pub fn stopped_at(&self) -> usize {
        self.history.last().map_or(0, |r| r.epoch)
    }
}

/// Hits@1 of `pairs` ranked against every target entity.
pub fn monitor_hits1(src: &Tensor, tgt: &Tensor, pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let cols: Vec<usize> = (0..tgt.rows()).collect();
    let sim = similarity_matrix("monitor", src, tgt, &rows, &cols)?;
    Ok(hits_at_k(&sim, pairs, 1))
}

/// Pairs used for early stopping: the validation pairs when there are any,
/// otherwise a seeded 10% of the training pairs (removed from training).
pub fn monitoring_split(
    train: &[(usize, usize)],
    validation: &[(usize, usize)],
    rng_seed: u64,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    if !validation.is_empty() || train.len() < 2 {
        return (train.to_vec(), validation.to_vec());
    }
    let mut shuffled = train.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let hold = ((train.len() as f64 * 0.1).round() as usize).max(1);
    let monitor = shuffled.split_off(train.len() - hold);
    (shuffled, monitor)
}

/// Full-batch training with early stopping on monitoring Hits@1.
#[allow(clippy::too_many_arguments)]
pub fn train_channel(
    mut model: ChannelModel,
    source: &ChannelInput,
    target: &ChannelInput,
    train: &[(usize, usize)],
    monitor: &[(usize, usize)],
    cfg: &TrainConfig,
    lr: f64,
    l2: f64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut opt = OptimizerState::new(&model, lr, l2);
    let mut negs: Option<NegativeSampleSet> = None;
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ChannelModel)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let src = channel_forward(&mut tape, &model, source)?;
        let tgt = channel_forward(&mut tape, &model, target)?;
        if (epoch - 1) % cfg.resample_every == 0 || negs.is_none() {
            negs = Some(sample_negatives(tape.value(src), tape.value(tgt), train, cfg, epoch)?);
        }
        let loss = margin_loss(&mut tape, src, tgt, train, negs.as_ref().expect("sampled"), cfg.margin, cfg.distance)
            .map_err(|e| numeric(e, epoch))?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss_value} at epoch {epoch}")));
        }
        tape.backward(loss, &mut model.store).map_err(|e| numeric(e, epoch))?;
        opt.step(&mut model).map_err(|e| numeric(e, epoch))?;

        let hits1 = monitor_hits1(&embed(&model, source)?, &embed(&model, target)?, monitor)?;
        history.push(EpochRecord {
            epoch,
            loss: loss_value,
            hits1,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("{} epoch {epoch}: loss {loss_value:.6} hits@1 {hits1:.4}", model.kind);
        if best.as_ref().map_or(true, |b| hits1 > b.1) {
            best = Some((epoch, hits1, model.clone()));
        }
        let best_epoch = best.as_ref().expect("set").0;
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_hits1, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        best_hits1,
        lr,
        l2,
    })
}

fn numeric(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

/// `epoch<TAB>loss<TAB>hits1<TAB>seconds` lines with a header.
pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tloss\thits1\tseconds\n");
    for r in history {
        let _ = writeln!(out, "{}\t{:.9}\t{:.6}\t{:.3}", r.epoch, r.loss, r.hits1, r.seconds);
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_tsv(history)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub l2: f64,
    pub best_hits1: f64,
    pub best_epoch: usize,
    pub stopped_at: usize,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub cells: Vec<GridCell>,
    pub best: TrainOutcome,
}

/// Trains one fresh model per `(lr, l2)` cell and keeps the one with the
/// highest monitoring Hits@1; ties go to the smaller lr, then smaller l2.
pub fn grid_search(
    make_model: impl Fn() -> Result<ChannelModel>,
    source: &ChannelInput,
    target: &ChannelInput,
    train: &[(usize, usize)],
    monitor: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<GridSearchResult> {
    cfg.validate()?;
    let mut lrs = cfg.lr_grid.clone();
    let mut l2s = cfg.l2_grid.clone();
    lrs.sort_by(f64::total_cmp);
    l2s.sort_by(f64::total_cmp);
    let mut cells = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    for &lr in &lrs {
        for &l2 in &l2s {
            let out = train_channel(make_model()?, source, target, train, monitor, cfg, lr, l2)?;
            log::info!(
                "{} lr={lr} l2={l2}: best hits@1 {:.4} at epoch {} (stopped at {})",
                out.model.kind,
                out.best_hits1,
                out.best_epoch,
                out.stopped_at()
            );
            cells.push(GridCell {
                lr,
                l2,
                best_hits1: out.best_hits1,
                best_epoch: out.best_epoch,
                stopped_at: out.stopped_at(),
            });
            if best.as_ref().map_or(true, |b| out.best_hits1 > b.best_hits1) {
                best = Some(out);
            }
        }
    }
    Ok(GridSearchResult {
        cells,
        best: best.expect("non-empty grid"),
    })
}

/// Inputs of the per-channel training cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub p1: u64,
    pub p2: u64,
    pub epochs: u64,
    pub f_neg: u64,
    pub n_neg: u64,
    pub n_s: u64,
    pub n_t: u64,
    pub t_s: u64,
    pub t_t: u64,
}

/// `P1·P2·(e + e/F_neg·N_neg)·N_s·N_t·T_s·T_t`, evaluated exactly as a
/// rational and returned as a float. `exact` holds the integer value when
/// `F_neg` divides `e·N_neg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    pub exact: Option<u128>,
}

pub fn estimate_training_cost(p: CostParams) -> Result<CostEstimate> {
    let positive = [p.p1, p.p2, p.epochs, p.f_neg, p.n_s, p.n_t, p.t_s, p.t_t]
        .iter()
        .all(|&v| v > 0);
    if !positive {
        return Err(Error::Validation(format!("cost parameters must be positive: {p:?}")));
    }
    let w = |v: u64| u128::from(v);
    let overflow = || Error::Validation(format!("cost estimate overflows: {p:?}"));
    // scaled by F_neg to stay in integers: P1·P2·(e·F + e·N_neg)·Ns·Nt·Ts·Tt
    let scaled = [w(p.p1), w(p.p2), w(p.n_s), w(p.n_t), w(p.t_s), w(p.t_t)]
        .into_iter()
        .try_fold(
            w(p.epochs)
                .checked_mul(w(p.f_neg))
                .and_then(|a| a.checked_add(w(p.epochs).checked_mul(w(p.n_neg))?))
                .ok_or_else(overflow)?,
            |acc, v| acc.checked_mul(v).ok_or_else(overflow),
        )?;
    let f = w(p.f_neg);
    Ok(CostEstimate {
        value: (scaled / f) as f64 + (scaled % f) as f64 / f as f64,
        exact: (scaled % f == 0).then_some(scaled / f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(src: &[Vec<f64>], tgt: &[Vec<f64>], seeds: &[(usize, usize)], negs: &NegativeSampleSet, margin: f64) -> f64 {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::from_rows(src).unwrap()).unwrap();
        let t = tape.constant(Tensor::from_rows(tgt).unwrap()).unwrap();
        let l = margin_loss(&mut tape, s, t, seeds, negs, margin, Distance::L1).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn hinge_single_term_arithmetic() {
        // d(e,e') = 2, d(e-,e') = 1 on a line
        let src = vec![vec![0.0], vec![1.0]];
        let tgt = vec![vec![2.0]];
        let negs = NegativeSampleSet { epoch: 1, source: vec![vec![1]], target: vec![vec![]] };
        assert_eq!(scalar_loss(&src, &tgt, &[(0, 0)], &negs, 3.0), 4.0);
    }

    #[test]
    fn hinge_inactive_when_negative_far() {
        // d(e,e') = 1, d(e-,e') = 5
        let src = vec![vec![0.0], vec![-4.0]];
        let tgt = vec![vec![1.0]];
        let negs = NegativeSampleSet { epoch: 1, source: vec![vec![1]], target: vec![vec![]] };
        assert_eq!(scalar_loss(&src, &tgt, &[(0, 0)], &negs, 3.0), 0.0);
    }

    #[test]
    fn zero_seeds_zero_loss() {
        let negs = NegativeSampleSet { epoch: 1, source: vec![], target: vec![] };
        assert_eq!(scalar_loss(&[vec![0.0]], &[vec![0.0]], &[], &negs, 3.0), 0.0);
    }

    #[test]
    fn nearest_negative_with_tie_break() {
        let emb = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![5.0]]).unwrap();
        assert_eq!(nearest(&emb, 0, 1, Distance::L1), vec![1]);
        assert_eq!(nearest(&emb, 0, 2, Distance::L1), vec![1, 2]);
        let three = Tensor::from_rows(&[vec![0.0], vec![0.3], vec![2.0]]).unwrap();
        let cfg = TrainConfig { n_neg: 1, ..Default::default() };
        let ns = sample_negatives(&three, &three, &[(0, 0)], &cfg, 1).unwrap();
        assert_eq!(ns.source, vec![vec![1]]);
        assert_eq!(ns.target, vec![vec![1]]);
    }

    #[test]
    fn fifteen_negatives_from_hundred() {
        let emb = Tensor::from_vec(100, 1, (0..100).map(|i| i as f64 * 0.01).collect()).unwrap();
        let ns = sample_negatives(&emb, &emb, &[(3, 7)], &TrainConfig::default(), 1).unwrap();
        assert_eq!(ns.source[0].len(), 15);
        assert!(!ns.source[0].contains(&3));
        assert!(!ns.target[0].contains(&7));
    }

    #[test]
    fn small_graph_takes_everything() {
        let emb = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let ns = sample_negatives(&emb, &emb, &[(0, 0)], &TrainConfig::default(), 1).unwrap();
        assert_eq!(ns.source[0], vec![1, 2]);
    }

    #[test]
    fn cost_examples() {
        let p = CostParams { p1: 3, p2: 3, epochs: 100, f_neg: 50, n_neg: 5, n_s: 100, n_t: 100, t_s: 500, t_t: 500 };
        let c = estimate_training_cost(p).unwrap();
        assert_eq!(c.exact, Some(2_475_000_000_000));
        assert_eq!(c.value, 2.475e12);
        let reduced = CostParams { f_neg: 100, n_neg: 0, ..p };
        assert_eq!(estimate_training_cost(reduced).unwrap().exact, Some(3 * 3 * 100 * 100 * 100 * 500 * 500));
        let doubled = CostParams { p1: 6, ..p };
        assert_eq!(estimate_training_cost(doubled).unwrap().exact, Some(2 * 2_475_000_000_000));
        assert!(estimate_training_cost(CostParams { p1: 0, ..p }).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 2000, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr_grid: vec![], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn monitoring_split_holds_out_ten_percent() {
        let train: Vec<(usize, usize)> = (0..60).map(|i| (i, i)).collect();
        let (t, m) = monitoring_split(&train, &[], 0);
        assert_eq!((t.len(), m.len()), (54, 6));
        let (t, m) = monitoring_split(&train, &[(99, 99)], 0);
        assert_eq!((t.len(), m.len()), (60, 1));
    }
}
