//! Negative sampling, the composite loss, Adam, and the epoch loop with
//! validation-based early stopping.

mod loss;
mod optim;

pub use loss::{
    adversarial_weights, batch_adversarial_weights, consistency_loss, consistency_loss_masked, rank_loss,
    rank_loss_weighted, reg_loss, total_loss, total_loss_weighted, LossBreakdown,
};
pub use optim::{adam_step, AdamState};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplits, FilterIndex, Triple};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::model::{init_parameters, ModelConfig, ParameterStore, TrainingState};

/// How the margin enters the ranking loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossSign {
    /// Scores are plausibilities: `−log σ(γ + φ⁺) − Σ p log σ(−γ − φ⁻)`.
    #[default]
    Score,
    /// `−log σ(γ − φ⁺) − Σ p log σ(φ⁻ − γ)`, i.e. φ read as a distance.
    Literal,
}

impl LossSign {
    pub(crate) fn factor(self) -> f64 {
        match self {
            LossSign::Score => 1.0,
            LossSign::Literal => -1.0,
        }
    }
}

impl FromStr for LossSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(LossSign::Score),
            "literal" => Ok(LossSign::Literal),
            _ => Err(Error::Config(format!("loss sign must be 'score' or 'literal', got {s:?}"))),
        }
    }
}

impl fmt::Display for LossSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossSign::Score => "score",
            LossSign::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Margin, in score units.
    pub gamma: f64,
    /// Adversarial temperature.
    pub beta: f64,
    /// Consistency weight.
    pub lambda1: f64,
    /// L2 weight.
    pub lambda2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub n_negatives: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub loss_sign: LossSign,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 9.0,
            beta: 1.0,
            lambda1: 0.1,
            lambda2: 1e-4,
            lr: 1e-3,
            batch_size: 512,
            n_negatives: 16,
            max_epochs: 200,
            patience: 20,
            eval_every: 1,
            seed: 0,
            loss_sign: LossSign::Score,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 || self.n_negatives == 0 {
            return bad("batch_size and n_negatives must be positive".into());
        }
        if self.patience == 0 || self.eval_every == 0 {
            return bad("patience and eval_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Which slot of a positive triple a negative replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    Head,
    Tail,
}

/// A positive triple and its corruptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
    pub corrupted: Vec<Corruption>,
}

/// Rejection attempts per draw before enumerating valid candidates.
const MAX_REJECTIONS: usize = 64;

fn corrupt(t: Triple, side: Corruption, e: usize) -> Triple {
    match side {
        Corruption::Head => Triple::new(e, t.relation, t.tail),
        Corruption::Tail => Triple::new(t.head, t.relation, e),
    }
}

fn is_valid_corruption(t: Triple, side: Corruption, e: usize, filter: &FilterIndex) -> bool {
    let original = match side {
        Corruption::Head => t.head,
        Corruption::Tail => t.tail,
    };
    e != original && !filter.contains(&corrupt(t, side, e))
}

fn draw_side<R: Rng>(t: Triple, side: Corruption, filter: &FilterIndex, n_entities: usize, rng: &mut R) -> Option<Triple> {
    for _ in 0..MAX_REJECTIONS {
        let e = rng.gen_range(0..n_entities);
        if is_valid_corruption(t, side, e, filter) {
            return Some(corrupt(t, side, e));
        }
    }
    let valid: Vec<usize> = (0..n_entities)
        .filter(|&e| is_valid_corruption(t, side, e, filter))
        .collect();
    valid.choose(rng).map(|&e| corrupt(t, side, e))
}

/// Draws `n` filtered corruptions of `positive`. Each draw picks head or tail
/// with a fair coin and falls back to the other side when the chosen one has
/// no valid candidate.
pub fn sample_negatives<R: Rng>(positive: Triple, n: usize, filter: &FilterIndex, n_entities: usize, rng: &mut R) -> Result<Example> {
    let mut negatives = Vec::with_capacity(n);
    let mut corrupted = Vec::with_capacity(n);
    for _ in 0..n {
        let first = if rng.gen_bool(0.5) {
            Corruption::Head
        } else {
            Corruption::Tail
        };
        let second = match first {
            Corruption::Head => Corruption::Tail,
            Corruption::Tail => Corruption::Head,
        };
        let (neg, side) = if let Some(t) = draw_side(positive, first, filter, n_entities, rng) {
            (t, first)
        } else if let Some(t) = draw_side(positive, second, filter, n_entities, rng) {
            (t, second)
        } else {
            return Err(Error::Sampling {
                head: positive.head,
                relation: positive.relation,
                tail: positive.tail,
            });
        };
        negatives.push(neg);
        corrupted.push(side);
    }
    Ok(Example {
        positive,
        negatives,
        corrupted,
    })
}

/// Gradient of the total loss for a batch, congruent to the store. Rows the
/// batch does not touch are zero; the regularizer's gradient is included on
/// the touched rows only.
pub fn compute_gradients(batch: &[Example], store: &ParameterStore, cfg: &TrainConfig) -> Result<(ParameterStore, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::Config("cannot differentiate an empty batch".into()));
    }
    let mut grads = store.zeros_like();
    let (losses, _) = loss::compute_gradients_into(batch, store, cfg, &mut grads);
    if let Some((family, index, value)) = grads.find_non_finite() {
        return Err(Error::NonFinite {
            family: family.name(),
            index,
            value,
        });
    }
    Ok((grads, losses))
}

/// One line of the training log. Loss columns are the weighted
/// contributions to the total (`rank`, `λ1·consistency`, `λ2·reg`) averaged
/// over the epoch's batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rank_loss: f64,
    pub cons_loss: f64,
    pub reg_loss: f64,
    pub valid_mrr: Option<f64>,
    /// Wall time of the optimization pass, excluding validation.
    pub seconds: f64,
}

impl EpochRecord {
    pub fn total(&self) -> f64 {
        self.rank_loss + self.cons_loss + self.reg_loss
    }

    /// `epoch<TAB>rank_loss<TAB>cons_loss<TAB>reg_loss<TAB>valid_mrr<TAB>seconds`;
    /// `valid_mrr` is `-` on epochs without validation.
    pub fn to_line(&self) -> String {
        let mrr = self.valid_mrr.map_or_else(|| "-".to_string(), |m| format!("{m:.17e}"));
        format!(
            "{}\t{:.17e}\t{:.17e}\t{:.17e}\t{}\t{:.6}",
            self.epoch, self.rank_loss, self.cons_loss, self.reg_loss, mrr, self.seconds
        )
    }
}

pub const LOG_COLUMNS: &str = "epoch\trank_loss\tcons_loss\treg_loss\tvalid_mrr\tseconds";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Store with the best validation MRR (the final store when there is no
    /// validation split).
    pub best: ParameterStore,
    pub best_state: TrainingState,
    pub last: ParameterStore,
    pub last_state: TrainingState,
    pub log: Vec<EpochRecord>,
}

/// Bundles what the epoch loop needs besides the configs.
pub struct TrainInput<'a> {
    pub splits: &'a DatasetSplits,
    pub filter: &'a FilterIndex,
    pub n_entities: usize,
    pub n_relations: usize,
}

/// Trains from a fresh initialization. `on_epoch` sees every record as it
/// is produced.
pub fn train(input: &TrainInput<'_>, model: &ModelConfig, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let store = init_parameters(*model, input.n_entities, input.n_relations, cfg.seed)?;
    train_from(input, store, cfg, on_epoch)
}

/// Runs the epoch loop starting from an existing store.
pub fn train_from(input: &TrainInput<'_>, mut store: ParameterStore, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = &input.splits.train;
    if train_set.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    for t in input.splits.all() {
        store.check_entity(t.head)?;
        store.check_entity(t.tail)?;
        store.check_relation(t.relation)?;
    }
    store.project_hyperbolic();

    // corruptions are filtered against training triples only, so held-out
    // facts never leak into the sampler
    let sampling_filter = FilterIndex::from_triples(train_set);
    // separate stream from the initializer's
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut adam = AdamState::new(&store);
    let mut grads = store.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();

    let mut best: Option<(ParameterStore, TrainingState)> = None;
    let mut best_mrr = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| sample_negatives(train_set[i], cfg.n_negatives, &sampling_filter, input.n_entities, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (losses, touched) = loss::compute_gradients_into(&batch, &store, cfg, &mut grads);
            if !losses.total.is_finite() {
                return Err(diverged(epoch, format!("loss {:?}", losses), &store));
            }
            if let Some((family, index, value)) = touched.find_non_finite(&grads) {
                return Err(diverged(
                    epoch,
                    format!("gradient {} at {index} is {value}", family.name()),
                    &store,
                ));
            }
            optim::adam_step_rows(&mut store, &grads, &mut adam, cfg.lr, &touched);
            touched.clear(&mut grads);
            sums[0] += losses.rank;
            sums[1] += cfg.lambda1 * losses.consistency;
            sums[2] += cfg.lambda2 * losses.reg;
            n_batches += 1;
        }
        let seconds = start.elapsed().as_secs_f64();
        if let Some((family, index, value)) = store.find_non_finite() {
            return Err(diverged(epoch, format!("parameter {} at {index} is {value}", family.name()), &store));
        }

        let nb = n_batches as f64;
        let mut record = EpochRecord {
            epoch,
            rank_loss: sums[0] / nb,
            cons_loss: sums[1] / nb,
            reg_loss: sums[2] / nb,
            valid_mrr: None,
            seconds,
        };

        let mut stop = false;
        if !input.splits.valid.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs) {
            let mrr = evaluation::mrr(&store, &input.splits.valid, input.filter);
            record.valid_mrr = Some(mrr);
            if mrr > best_mrr {
                best_mrr = mrr;
                best_epoch = epoch;
                best = Some((
                    store.clone(),
                    TrainingState {
                        epoch: epoch as u64,
                        best_valid_mrr: mrr,
                        adam: Some(adam.clone()),
                    },
                ));
            } else if epoch - best_epoch >= cfg.patience {
                stop = true;
            }
        }
        on_epoch(&record);
        log.push(record);
        if stop {
            break;
        }
    }

    let last_epoch = log.last().map_or(0, |r| r.epoch) as u64;
    let last_state = TrainingState {
        epoch: last_epoch,
        best_valid_mrr: if best.is_some() { best_mrr } else { 0.0 },
        adam: Some(adam),
    };
    let (best, best_state) = best.unwrap_or_else(|| (store.clone(), last_state.clone()));
    Ok(TrainOutcome {
        best,
        best_state,
        last: store,
        last_state,
        log,
    })
}

fn diverged(epoch: usize, detail: String, store: &ParameterStore) -> Error {
    Error::Diverged {
        epoch,
        detail,
        snapshot: crate::error::Snapshot(Box::new(store.clone())),
    }
}
