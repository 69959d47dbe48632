//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use hcx::data::{FilterIndex, Triple};
use hcx::model::{init_parameters, AllocationPolicy, Family, ModelConfig, ParameterStore};
use hcx::scoring::score;
use hcx::training::{sample_negatives, total_loss_weighted, Example, LossBreakdown, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random store whose hyperbolic rows are spread well away from the
/// origin so curvature matters.
pub fn random_store(n_entities: usize, n_relations: usize, d_base: usize, c: f64, seed: u64) -> ParameterStore {
    let cfg = ModelConfig::new(n_entities, d_base, AllocationPolicy::Equal, c).unwrap();
    let mut s = init_parameters(cfg, n_entities, n_relations, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let radius = 1.0 / c.sqrt();
    let d = cfg.dims.hyp;
    for f in [Family::EntityHyp, Family::RelHyp] {
        for row in s.family_mut(f).chunks_exact_mut(d) {
            let target = rng.gen_range(0.05..0.6) * radius;
            row.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v *= target / n);
        }
    }
    for v in s.attn_logits.iter_mut() {
        *v = rng.gen_range(-1.5..1.5);
    }
    s
}

pub fn random_batch(store: &ParameterStore, n_pos: usize, n_neg: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives: Vec<Triple> = (0..n_pos)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..store.n_entities),
                rng.gen_range(0..store.n_relations),
                rng.gen_range(0..store.n_entities),
            )
        })
        .collect();
    let filter = FilterIndex::from_triples(&positives);
    positives
        .iter()
        .map(|&p| sample_negatives(p, n_neg, &filter, store.n_entities, &mut rng).unwrap())
        .collect()
}

/// Central finite difference of `f` with respect to one coordinate.
pub fn central_difference(
    store: &ParameterStore,
    family: Family,
    index: usize,
    step: f64,
    f: impl Fn(&ParameterStore) -> f64,
) -> f64 {
    let mut plus = store.clone();
    plus.family_mut(family)[index] += step;
    let mut minus = store.clone();
    minus.family_mut(family)[index] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Loss with the adversarial weights pinned at the unperturbed store.
pub fn pinned_loss(batch: &[Example], base: &ParameterStore, cfg: &TrainConfig) -> impl Fn(&ParameterStore) -> LossBreakdown {
    let weights = hcx::training::batch_adversarial_weights(batch, base, cfg);
    let batch = batch.to_vec();
    let cfg = cfg.clone();
    move |s: &ParameterStore| total_loss_weighted(&batch, s, &cfg, &weights)
}

/// Sort-based ranker: scores every entity through the scalar path, drops the
/// filtered ones, sorts descending with the true entity placed after any
/// equal scores, and reads off its 1-based position.
pub fn brute_force_ranks(store: &ParameterStore, t: Triple, filter: &FilterIndex) -> (usize, usize) {
    let rank_of = |candidates: Vec<(usize, f64)>, truth: usize| {
        let mut sorted: Vec<(bool, f64)> = candidates.iter().map(|&(e, s)| (e == truth, s)).collect();
        // descending score; on ties the true entity goes last
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sorted.iter().position(|&(is_truth, _)| is_truth).unwrap() + 1
    };
    let n = store.n_entities;
    let tails: Vec<(usize, f64)> = (0..n)
        .filter(|&e| e == t.tail || !filter.contains(&Triple::new(t.head, t.relation, e)))
        .map(|e| (e, score(store, t.head, t.relation, e).unwrap().phi))
        .collect();
    let heads: Vec<(usize, f64)> = (0..n)
        .filter(|&e| e == t.head || !filter.contains(&Triple::new(e, t.relation, t.tail)))
        .map(|e| (e, score(store, e, t.relation, t.tail).unwrap().phi))
        .collect();
    (rank_of(heads, t.head), rank_of(tails, t.tail))
}
