//! Space-specific scores and their attention-weighted combination.
//!
//! Scalar and batched scoring share [`TailContext`], so `score` and
//! `score_candidates` produce bit-identical values for the same triple.

use crate::error::Result;
use crate::geometry::{self, PoincareBall};
use crate::model::{relation_attention, ParameterStore, Space};

/// Raw per-space scores of one triple plus their combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceScores {
    /// Negative hyperbolic distance.
    pub phi_h: f64,
    /// Real part of the Hermitian trilinear product.
    pub phi_c: f64,
    /// Negative squared translation residual.
    pub phi_e: f64,
    /// Attention-weighted combination.
    pub phi: f64,
    pub alpha: [f64; 3],
}

impl SpaceScores {
    pub fn components(&self) -> [f64; 3] {
        [self.phi_h, self.phi_c, self.phi_e]
    }

    pub fn get(&self, space: Space) -> f64 {
        self.components()[space.index()]
    }
}

/// `φ = Σ α_s φ_s` over the spaces with non-zero weight, in H, C, E order.
#[inline]
fn combine(alpha: &[f64; 3], phis: &[f64; 3], active: &[bool; 3]) -> f64 {
    let mut phi = 0.0;
    for s in 0..3 {
        if active[s] {
            phi += alpha[s] * phis[s];
        }
    }
    phi
}

/// Everything about `(h, r, ·)` that does not depend on the tail.
struct TailContext<'a> {
    store: &'a ParameterStore,
    active: [bool; 3],
    alpha: [f64; 3],
    /// `h ⊕_c r` and its squared norm.
    moved: Vec<f64>,
    moved_sq: f64,
    /// Complex `h ∘ r`, interleaved.
    hr: Vec<f64>,
    /// `h + r` in the Euclidean space.
    shifted: Vec<f64>,
}

impl<'a> TailContext<'a> {
    fn new(store: &'a ParameterStore, head: usize, relation: usize, all_spaces: bool) -> Self {
        let active = if all_spaces {
            [true; 3]
        } else {
            store.config.spaces.0
        };
        let alpha = relation_attention(store, relation);

        let mut moved = Vec::new();
        let mut moved_sq = 0.0;
        if active[0] {
            let (h, r) = (store.ent_hyp(head), store.rel_hyp(relation));
            moved = vec![0.0; h.len()];
            geometry::mobius_add_into(h, r, store.config.curvature, &mut moved);
            moved_sq = geometry::norm_sq(&moved);
        }

        let mut hr = Vec::new();
        if active[1] {
            let (h, r) = (store.ent_cplx(head), store.rel_cplx(relation));
            hr = h
                .chunks_exact(2)
                .zip(r.chunks_exact(2))
                .flat_map(|(h, r)| [h[0] * r[0] - h[1] * r[1], h[0] * r[1] + h[1] * r[0]])
                .collect();
        }

        let mut shifted = Vec::new();
        if active[2] {
            shifted = store
                .ent_euc(head)
                .iter()
                .zip(store.rel_euc(relation))
                .map(|(h, r)| h + r)
                .collect();
        }

        Self {
            store,
            active,
            alpha,
            moved,
            moved_sq,
            hr,
            shifted,
        }
    }

    fn hyperbolic(&self, tail: usize) -> f64 {
        let t = self.store.ent_hyp(tail);
        let c = self.store.config.curvature;
        let diff_sq: f64 = self.moved.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        -geometry::distance_from_parts(diff_sq, self.moved_sq, geometry::norm_sq(t), c)
    }

    fn complex(&self, tail: usize) -> f64 {
        let t = self.store.ent_cplx(tail);
        self.hr
            .chunks_exact(2)
            .zip(t.chunks_exact(2))
            .map(|(p, t)| p[0] * t[0] + p[1] * t[1])
            .sum()
    }

    fn euclidean(&self, tail: usize) -> f64 {
        let t = self.store.ent_euc(tail);
        -self
            .shifted
            .iter()
            .zip(t)
            .map(|(s, t)| (s - t) * (s - t))
            .sum::<f64>()
    }

    fn phis(&self, tail: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        if self.active[0] {
            p[0] = self.hyperbolic(tail);
        }
        if self.active[1] {
            p[1] = self.complex(tail);
        }
        if self.active[2] {
            p[2] = self.euclidean(tail);
        }
        p
    }

    fn combined(&self, tail: usize) -> f64 {
        combine(&self.alpha, &self.phis(tail), &self.store.config.spaces.0)
    }
}

fn check_ids(store: &ParameterStore, h: usize, r: usize, t: usize) -> Result<()> {
    store.check_entity(h)?;
    store.check_relation(r)?;
    store.check_entity(t)
}

/// `−d_c(h ⊕_c r, t)` over the hyperbolic rows.
pub fn score_hyperbolic(store: &ParameterStore, h: usize, r: usize, t: usize) -> Result<f64> {
    check_ids(store, h, r, t)?;
    let ball = PoincareBall::new(store.config.curvature)?;
    let moved = ball.mobius_add(store.ent_hyp(h), store.rel_hyp(r))?;
    Ok(-ball.distance(&moved, store.ent_hyp(t))?)
}

/// `Re Σ_k h_k r_k conj(t_k)` over the complex rows.
pub fn score_complex(store: &ParameterStore, h: usize, r: usize, t: usize) -> Result<f64> {
    check_ids(store, h, r, t)?;
    Ok(TailContext::new(store, h, r, true).complex(t))
}

/// `−‖h + r − t‖²` over the Euclidean rows.
pub fn score_euclidean(store: &ParameterStore, h: usize, r: usize, t: usize) -> Result<f64> {
    check_ids(store, h, r, t)?;
    Ok(TailContext::new(store, h, r, true).euclidean(t))
}

/// All three space scores and the combined score. Disabled spaces are still
/// reported but carry zero weight.
pub fn score(store: &ParameterStore, h: usize, r: usize, t: usize) -> Result<SpaceScores> {
    check_ids(store, h, r, t)?;
    let ball = PoincareBall::new(store.config.curvature)?;
    for row in [store.ent_hyp(h), store.rel_hyp(r), store.ent_hyp(t)] {
        if !ball.contains(row) {
            // surfaces the domain error with its details
            ball.mobius_add(row, row)?;
        }
    }
    Ok(score_unchecked(store, h, r, t))
}

pub(crate) fn score_unchecked(store: &ParameterStore, h: usize, r: usize, t: usize) -> SpaceScores {
    let ctx = TailContext::new(store, h, r, true);
    let [phi_h, phi_c, phi_e] = ctx.phis(t);
    let phi = combine(&ctx.alpha, &[phi_h, phi_c, phi_e], &store.config.spaces.0);
    SpaceScores {
        phi_h,
        phi_c,
        phi_e,
        phi,
        alpha: ctx.alpha,
    }
}

/// Combined score only, skipping disabled spaces.
pub(crate) fn phi_unchecked(store: &ParameterStore, h: usize, r: usize, t: usize) -> f64 {
    TailContext::new(store, h, r, false).combined(t)
}

/// Which slot of a triple is open during candidate scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    /// `(head, relation, ?)`
    Tail { head: usize, relation: usize },
    /// `(?, relation, tail)`
    Head { relation: usize, tail: usize },
}

/// Combined scores with each candidate substituted into the open slot.
pub fn score_candidates(store: &ParameterStore, query: Query, candidates: &[usize]) -> Result<Vec<f64>> {
    for &e in candidates {
        store.check_entity(e)?;
    }
    match query {
        Query::Tail { head, relation } => {
            store.check_entity(head)?;
            store.check_relation(relation)?;
        }
        Query::Head { relation, tail } => {
            store.check_entity(tail)?;
            store.check_relation(relation)?;
        }
    }
    Ok(score_candidates_unchecked(store, query, candidates))
}

pub(crate) fn score_candidates_unchecked(store: &ParameterStore, query: Query, candidates: &[usize]) -> Vec<f64> {
    match query {
        Query::Tail { head, relation } => {
            let ctx = TailContext::new(store, head, relation, false);
            candidates.iter().map(|&t| ctx.combined(t)).collect()
        }
        Query::Head { relation, tail } => candidates
            .iter()
            .map(|&h| phi_unchecked(store, h, relation, tail))
            .collect(),
    }
}

/// Combined scores of every entity in the open slot, indexed by entity id.
pub(crate) fn score_all_unchecked(store: &ParameterStore, query: Query) -> Vec<f64> {
    let all: Vec<usize> = (0..store.n_entities).collect();
    score_candidates_unchecked(store, query, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, AllocationPolicy, Dims, ModelConfig};

    fn tiny(d_h: usize, d_c: usize, d_e: usize, n: usize) -> ParameterStore {
        let dims = Dims { hyp: d_h, cplx: d_c, euc: d_e };
        let cfg = ModelConfig::new(n, dims.real_budget(), AllocationPolicy::Custom(dims), 1.0).unwrap();
        ParameterStore::zeros(cfg, n, 2)
    }

    #[test]
    fn hyperbolic_examples() {
        let mut s = tiny(2, 1, 1, 3);
        s.entity_hyp[0..2].copy_from_slice(&[0.1, 0.2]);
        s.entity_hyp[2..4].copy_from_slice(&[0.1, 0.2]);
        assert_eq!(score_hyperbolic(&s, 0, 0, 1).unwrap(), 0.0);

        s.entity_hyp[0..4].fill(0.0);
        s.rel_hyp[0..2].copy_from_slice(&[0.5, 0.0]);
        let v = score_hyperbolic(&s, 0, 0, 1).unwrap();
        assert!((v + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn complex_examples() {
        let mut s = tiny(1, 1, 1, 2);
        s.entity_cplx.copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        s.rel_cplx[0..2].copy_from_slice(&[2.0, 0.0]);
        assert_eq!(score_complex(&s, 0, 0, 1).unwrap(), 4.0);

        s.entity_cplx.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        s.rel_cplx[0..2].copy_from_slice(&[1.0, 0.0]);
        assert_eq!(score_complex(&s, 0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn complex_reduces_to_distmult_when_real() {
        let cfg = ModelConfig::new(4, 16, AllocationPolicy::Equal, 1.0).unwrap();
        let mut s = init_parameters(cfg, 4, 2, 3).unwrap();
        for v in s.entity_cplx.iter_mut().skip(1).step_by(2) {
            *v = 0.0;
        }
        for v in s.rel_cplx.iter_mut().skip(1).step_by(2) {
            *v = 0.0;
        }
        let re = |row: &[f64]| row.iter().step_by(2).copied().collect::<Vec<_>>();
        let (h, r, t) = (re(s.ent_cplx(0)), re(s.rel_cplx(1)), re(s.ent_cplx(2)));
        let distmult: f64 = (0..h.len()).map(|k| h[k] * r[k] * t[k]).sum();
        assert!((score_complex(&s, 0, 1, 2).unwrap() - distmult).abs() < 1e-14);
    }

    #[test]
    fn euclidean_examples() {
        let mut s = tiny(1, 1, 2, 2);
        s.entity_euc.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        s.rel_euc[0..2].copy_from_slice(&[0.0, 1.0]);
        assert_eq!(score_euclidean(&s, 0, 0, 1).unwrap(), -2.0);
        s.entity_euc.copy_from_slice(&[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(score_euclidean(&s, 0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_attention_averages() {
        // φ_H = −3 needs a distance of 3; pick the point on the axis at that distance
        let mut s = tiny(1, 1, 1, 2);
        let y = (1.5f64).tanh(); // d(0, y) = 2 artanh(y) = 3
        s.entity_hyp[1] = y;
        s.entity_cplx.copy_from_slice(&[2.0, 0.0, 3.0, 0.0]);
        s.rel_cplx[0..2].copy_from_slice(&[1.0, 0.0]);
        s.entity_euc.copy_from_slice(&[0.0, 3f64.sqrt()]);
        let sc = score(&s, 0, 0, 1).unwrap();
        assert!((sc.phi_h + 3.0).abs() < 1e-12);
        assert_eq!(sc.phi_c, 6.0);
        assert!((sc.phi_e + 3.0).abs() < 1e-12);
        assert!(sc.phi.abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_selects_space() {
        let cfg = ModelConfig::new(3, 16, AllocationPolicy::Equal, 1.0).unwrap();
        let mut s = init_parameters(cfg, 3, 1, 5).unwrap();
        s.attn_logits.copy_from_slice(&[800.0, 0.0, 0.0]);
        let sc = score(&s, 0, 0, 1).unwrap();
        assert_eq!(sc.phi, sc.phi_h);
    }

    #[test]
    fn candidates_match_scalar() {
        let cfg = ModelConfig::new(5, 16, AllocationPolicy::Equal, 2.0).unwrap();
        let s = init_parameters(cfg, 5, 2, 8).unwrap();
        let cands: Vec<usize> = (0..5).collect();
        let tails = score_candidates(&s, Query::Tail { head: 1, relation: 0 }, &cands).unwrap();
        let heads = score_candidates(&s, Query::Head { relation: 1, tail: 3 }, &cands).unwrap();
        for e in 0..5 {
            assert_eq!(tails[e].to_bits(), score(&s, 1, 0, e).unwrap().phi.to_bits());
            assert_eq!(heads[e].to_bits(), score(&s, e, 1, 3).unwrap().phi.to_bits());
        }
        let rev: Vec<usize> = cands.iter().rev().copied().collect();
        let tails_rev = score_candidates(&s, Query::Tail { head: 1, relation: 0 }, &rev).unwrap();
        assert_eq!(tails_rev, tails.iter().rev().copied().collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_ids() {
        let s = tiny(1, 1, 1, 2);
        assert!(score(&s, 0, 2, 1).is_err());
        assert!(score(&s, 5, 0, 1).is_err());
        assert!(score_candidates(&s, Query::Tail { head: 0, relation: 0 }, &[7]).is_err());
    }

    #[test]
    fn outside_ball_is_domain_error() {
        let mut s = tiny(1, 1, 1, 2);
        s.entity_hyp[0] = 1.5;
        assert!(matches!(score(&s, 0, 0, 1), Err(crate::Error::Domain { .. })));
    }
}
