//! Loss terms and their analytic gradients.

use crate::data::Triple;
use crate::geometry;
use crate::model::{Family, ParameterStore, Space, SpaceMask};
use crate::scoring::{score_unchecked, SpaceScores};

use super::{Example, LossSign, TrainConfig};

/// Numerically stable `−log σ(x) = log(1 + e^{−x})`.
#[inline]
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `beta · scores`, shifted by the maximum for stability.
pub fn adversarial_weights(neg_scores: &[f64], beta: f64) -> Vec<f64> {
    assert!(!neg_scores.is_empty(), "adversarial weights need at least one score");
    let scaled: Vec<f64> = neg_scores.iter().map(|s| beta * s).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Self-adversarial ranking loss with score semantics (higher = more
/// plausible): `−log σ(γ + φ⁺) − Σ pᵢ log σ(−γ − φᵢ⁻)`.
pub fn rank_loss(pos_score: f64, neg_scores: &[f64], gamma: f64, beta: f64) -> f64 {
    let weights = adversarial_weights(neg_scores, beta);
    rank_loss_weighted(pos_score, neg_scores, &weights, gamma, LossSign::Score)
}

/// Ranking loss with caller-supplied negative weights.
pub fn rank_loss_weighted(pos_score: f64, neg_scores: &[f64], weights: &[f64], gamma: f64, sign: LossSign) -> f64 {
    let s = sign.factor();
    let neg: f64 = neg_scores
        .iter()
        .zip(weights)
        .map(|(&phi, &p)| p * neg_log_sigmoid(-gamma - s * phi))
        .sum();
    neg_log_sigmoid(gamma + s * pos_score) + neg
}

/// `(∂L/∂φ⁺, ∂L/∂φᵢ⁻)` with the weights held constant.
fn rank_loss_grads(pos_score: f64, neg_scores: &[f64], weights: &[f64], gamma: f64, sign: LossSign) -> (f64, Vec<f64>) {
    let s = sign.factor();
    let d_pos = -s * sigmoid(-(gamma + s * pos_score));
    let d_neg = neg_scores
        .iter()
        .zip(weights)
        .map(|(&phi, &p)| p * s * sigmoid(gamma + s * phi))
        .collect();
    (d_pos, d_neg)
}

/// Sum over ordered pairs of distinct spaces of `(φ_s − φ_s')²`.
pub fn consistency_loss(scores: &SpaceScores) -> f64 {
    consistency_loss_masked(&scores.components(), SpaceMask::ALL)
}

/// Consistency restricted to the enabled spaces.
pub fn consistency_loss_masked(phis: &[f64; 3], mask: SpaceMask) -> f64 {
    let mut total = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            if a != b && mask.0[a] && mask.0[b] {
                let d = phis[a] - phis[b];
                total += d * d;
            }
        }
    }
    total
}

fn consistency_grads(phis: &[f64; 3], mask: SpaceMask) -> [f64; 3] {
    let mut g = [0.0; 3];
    for a in 0..3 {
        if !mask.0[a] {
            continue;
        }
        for b in 0..3 {
            if a != b && mask.0[b] {
                g[a] += 4.0 * (phis[a] - phis[b]);
            }
        }
    }
    g
}

/// Mean squared norm of all embedding rows over `|E| + |R|`; attention
/// logits are excluded.
pub fn reg_loss(store: &ParameterStore) -> f64 {
    let sum: f64 = Family::ALL
        .iter()
        .filter(|f| f.space().is_some())
        .map(|&f| geometry::norm_sq(store.family(f)))
        .sum();
    sum / (store.n_entities + store.n_relations) as f64
}

/// Loss components of one batch. `rank` and `consistency` are batch means;
/// `total = rank + λ1·consistency + λ2·reg`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub rank: f64,
    pub consistency: f64,
    pub reg: f64,
}

/// Adversarial weights of every example, computed from the current store.
pub fn batch_adversarial_weights(batch: &[Example], store: &ParameterStore, cfg: &TrainConfig) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|ex| {
            let scores: Vec<f64> = ex
                .negatives
                .iter()
                .map(|n| score_unchecked(store, n.head, n.relation, n.tail).phi)
                .collect();
            adversarial_weights(&scores, cfg.beta)
        })
        .collect()
}

pub fn total_loss(batch: &[Example], store: &ParameterStore, cfg: &TrainConfig) -> LossBreakdown {
    let weights = batch_adversarial_weights(batch, store, cfg);
    total_loss_weighted(batch, store, cfg, &weights)
}

/// [`total_loss`] with fixed adversarial weights, which is the function
/// [`compute_gradients`] differentiates.
pub fn total_loss_weighted(batch: &[Example], store: &ParameterStore, cfg: &TrainConfig, weights: &[Vec<f64>]) -> LossBreakdown {
    assert!(!batch.is_empty(), "empty batch");
    let mask = store.config.spaces;
    let mut rank = 0.0;
    let mut cons = 0.0;
    for (ex, w) in batch.iter().zip(weights) {
        let p = ex.positive;
        let pos = score_unchecked(store, p.head, p.relation, p.tail);
        let negs: Vec<f64> = ex
            .negatives
            .iter()
            .map(|n| score_unchecked(store, n.head, n.relation, n.tail).phi)
            .collect();
        rank += rank_loss_weighted(pos.phi, &negs, w, cfg.gamma, cfg.loss_sign);
        cons += consistency_loss_masked(&pos.components(), mask);
    }
    let n = batch.len() as f64;
    let rank = rank / n;
    let consistency = cons / n;
    let reg = reg_loss(store);
    LossBreakdown {
        total: rank + cfg.lambda1 * consistency + cfg.lambda2 * reg,
        rank,
        consistency,
        reg,
    }
}

/// Scratch buffers reused across triples.
struct Scratch {
    moved: Vec<f64>,
    g_moved: Vec<f64>,
    g_head: Vec<f64>,
    g_rel: Vec<f64>,
    g_tail: Vec<f64>,
}

impl Scratch {
    fn new(width: usize) -> Self {
        Self {
            moved: vec![0.0; width],
            g_moved: vec![0.0; width],
            g_head: vec![0.0; width],
            g_rel: vec![0.0; width],
            g_tail: vec![0.0; width],
        }
    }

    fn reset(&mut self, width: usize) {
        for v in [
            &mut self.moved,
            &mut self.g_moved,
            &mut self.g_head,
            &mut self.g_rel,
            &mut self.g_tail,
        ] {
            v.clear();
            v.resize(width, 0.0);
        }
    }
}

fn add_row(dst: &mut [f64], row: usize, width: usize, src: &[f64]) {
    for (d, s) in dst[row * width..(row + 1) * width].iter_mut().zip(src) {
        *d += s;
    }
}

/// Back-propagates `∂L/∂φ_s` (per space) and `∂L/∂W_r` for one triple.
fn backward_triple(store: &ParameterStore, t: Triple, d_space: [f64; 3], d_logits: [f64; 3], grads: &mut ParameterStore, scratch: &mut Scratch) {
    let mask = store.config.spaces;
    let dims = store.config.dims;
    let c = store.config.curvature;

    if mask.is_active(Space::Hyperbolic) && d_space[0] != 0.0 {
        let w = dims.hyp;
        scratch.reset(w);
        let (h, r, tl) = (store.ent_hyp(t.head), store.rel_hyp(t.relation), store.ent_hyp(t.tail));
        geometry::mobius_add_into(h, r, c, &mut scratch.moved);
        // φ_H = −d, so ∂L/∂d = −∂L/∂φ_H
        geometry::distance_grad(&scratch.moved, tl, c, -d_space[0], &mut scratch.g_moved, &mut scratch.g_tail);
        geometry::mobius_add_vjp(h, r, c, &scratch.g_moved, &mut scratch.g_head, &mut scratch.g_rel);
        add_row(&mut grads.entity_hyp, t.head, w, &scratch.g_head);
        add_row(&mut grads.rel_hyp, t.relation, w, &scratch.g_rel);
        add_row(&mut grads.entity_hyp, t.tail, w, &scratch.g_tail);
    }

    if mask.is_active(Space::Complex) && d_space[1] != 0.0 {
        let w = 2 * dims.cplx;
        scratch.reset(w);
        let g = d_space[1];
        let (h, r, tl) = (store.ent_cplx(t.head), store.rel_cplx(t.relation), store.ent_cplx(t.tail));
        for k in 0..dims.cplx {
            let (a, b) = (h[2 * k], h[2 * k + 1]);
            let (rc, rd) = (r[2 * k], r[2 * k + 1]);
            let (e, f) = (tl[2 * k], tl[2 * k + 1]);
            // φ = (a·rc − b·rd)·e + (a·rd + b·rc)·f
            scratch.g_head[2 * k] = g * (rc * e + rd * f);
            scratch.g_head[2 * k + 1] = g * (rc * f - rd * e);
            scratch.g_rel[2 * k] = g * (a * e + b * f);
            scratch.g_rel[2 * k + 1] = g * (a * f - b * e);
            scratch.g_tail[2 * k] = g * (a * rc - b * rd);
            scratch.g_tail[2 * k + 1] = g * (a * rd + b * rc);
        }
        add_row(&mut grads.entity_cplx, t.head, w, &scratch.g_head);
        add_row(&mut grads.rel_cplx, t.relation, w, &scratch.g_rel);
        add_row(&mut grads.entity_cplx, t.tail, w, &scratch.g_tail);
    }

    if mask.is_active(Space::Euclidean) && d_space[2] != 0.0 {
        let w = dims.euc;
        scratch.reset(w);
        let (h, r, tl) = (store.ent_euc(t.head), store.rel_euc(t.relation), store.ent_euc(t.tail));
        for k in 0..w {
            let resid = h[k] + r[k] - tl[k];
            let gk = -2.0 * d_space[2] * resid;
            scratch.g_head[k] = gk;
            scratch.g_tail[k] = -gk;
        }
        add_row(&mut grads.entity_euc, t.head, w, &scratch.g_head);
        add_row(&mut grads.rel_euc, t.relation, w, &scratch.g_head);
        add_row(&mut grads.entity_euc, t.tail, w, &scratch.g_tail);
    }

    if !store.config.attention_frozen {
        let row = &mut grads.attn_logits[t.relation * 3..t.relation * 3 + 3];
        for s in 0..3 {
            if mask.0[s] {
                row[s] += d_logits[s];
            }
        }
    }
}

/// Pushes `∂L/∂φ` of one scored triple through the attention mixture.
fn backward_combined(store: &ParameterStore, t: Triple, sc: &SpaceScores, d_phi: f64, d_extra: [f64; 3], grads: &mut ParameterStore, scratch: &mut Scratch) {
    let mut d_space = [0.0; 3];
    let mut d_logits = [0.0; 3];
    for s in 0..3 {
        d_space[s] = d_phi * sc.alpha[s] + d_extra[s];
        // ∂φ/∂W_s = α_s (φ_s − φ)
        d_logits[s] = d_phi * sc.alpha[s] * (sc.components()[s] - sc.phi);
    }
    backward_triple(store, t, d_space, d_logits, grads, scratch);
}

/// Entity and relation rows that appear in a batch, sorted and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct Touched {
    pub entities: Vec<usize>,
    pub relations: Vec<usize>,
}

impl Touched {
    pub fn of_batch(batch: &[Example]) -> Self {
        let mut t = Self::default();
        for ex in batch {
            for tr in std::iter::once(&ex.positive).chain(&ex.negatives) {
                t.entities.extend([tr.head, tr.tail]);
                t.relations.push(tr.relation);
            }
        }
        t.entities.sort_unstable();
        t.entities.dedup();
        t.relations.sort_unstable();
        t.relations.dedup();
        t
    }

    /// Family rows covered by this set: entity rows for entity families,
    /// relation rows otherwise.
    pub fn rows(&self, f: Family) -> &[usize] {
        if f.is_entity() {
            &self.entities
        } else {
            &self.relations
        }
    }

    /// First non-finite value within the touched rows.
    pub fn find_non_finite(&self, store: &ParameterStore) -> Option<(Family, usize, f64)> {
        for f in Family::ALL {
            let w = store.row_width(f);
            let data = store.family(f);
            for &r in self.rows(f) {
                for i in r * w..(r + 1) * w {
                    if !data[i].is_finite() {
                        return Some((f, i, data[i]));
                    }
                }
            }
        }
        None
    }

    /// Zeroes the touched rows of `grads`.
    pub fn clear(&self, grads: &mut ParameterStore) {
        for f in Family::ALL {
            let w = grads.row_width(f);
            let data = grads.family_mut(f);
            for &r in self.rows(f) {
                data[r * w..(r + 1) * w].fill(0.0);
            }
        }
    }
}

/// Exact gradient of [`total_loss_weighted`] (weights taken from the current
/// store) with respect to every row the batch touches; all other rows are
/// left at zero. The regularizer contributes only on touched rows. Families
/// of disabled spaces, and the attention logits when attention is frozen,
/// get no gradient. `grads` must be all zero on entry.
pub(crate) fn compute_gradients_into(batch: &[Example], store: &ParameterStore, cfg: &TrainConfig, grads: &mut ParameterStore) -> (LossBreakdown, Touched) {
    assert!(!batch.is_empty(), "empty batch");
    let mask = store.config.spaces;
    let inv_n = 1.0 / batch.len() as f64;
    let widest = {
        let d = store.config.dims;
        d.hyp.max(2 * d.cplx).max(d.euc)
    };
    let mut scratch = Scratch::new(widest);

    let mut rank = 0.0;
    let mut cons = 0.0;
    let mut neg_scores: Vec<SpaceScores> = Vec::new();
    let mut neg_phi: Vec<f64> = Vec::new();
    for ex in batch {
        let p = ex.positive;
        let pos = score_unchecked(store, p.head, p.relation, p.tail);
        neg_scores.clear();
        neg_scores.extend(ex.negatives.iter().map(|n| score_unchecked(store, n.head, n.relation, n.tail)));
        neg_phi.clear();
        neg_phi.extend(neg_scores.iter().map(|s| s.phi));
        let weights = adversarial_weights(&neg_phi, cfg.beta);

        rank += rank_loss_weighted(pos.phi, &neg_phi, &weights, cfg.gamma, cfg.loss_sign);
        let phis = pos.components();
        cons += consistency_loss_masked(&phis, mask);

        let (d_pos, d_neg) = rank_loss_grads(pos.phi, &neg_phi, &weights, cfg.gamma, cfg.loss_sign);
        let mut d_cons = consistency_grads(&phis, mask);
        d_cons.iter_mut().for_each(|g| *g *= cfg.lambda1 * inv_n);
        backward_combined(store, p, &pos, d_pos * inv_n, d_cons, grads, &mut scratch);
        for ((n, sc), d) in ex.negatives.iter().zip(&neg_scores).zip(d_neg) {
            backward_combined(store, *n, sc, d * inv_n, [0.0; 3], grads, &mut scratch);
        }
    }

    let touched = Touched::of_batch(batch);
    let reg = reg_loss(store);
    if cfg.lambda2 != 0.0 {
        let scale = 2.0 * cfg.lambda2 / (store.n_entities + store.n_relations) as f64;
        for f in Family::ALL {
            match f.space() {
                Some(space) if mask.is_active(space) => {
                    let w = store.row_width(f);
                    let (g, v) = (grads.family_mut(f), store.family(f));
                    for &r in touched.rows(f) {
                        for i in r * w..(r + 1) * w {
                            g[i] += scale * v[i];
                        }
                    }
                }
                _ => {}
            }
        }
    }

    let rank = rank * inv_n;
    let consistency = cons * inv_n;
    let losses = LossBreakdown {
        total: rank + cfg.lambda1 * consistency + cfg.lambda2 * reg,
        rank,
        consistency,
        reg,
    };
    (losses, touched)
}
