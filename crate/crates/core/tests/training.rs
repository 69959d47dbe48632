use hcx::data::{DatasetSplits, FilterIndex, SplitRatios, Triple};
use hcx::evaluation::evaluate;
use hcx::model::{init_parameters, AllocationPolicy, ModelConfig, ParameterStore, Space, SpaceMask};
use hcx::training::{sample_negatives, train, train_from, EpochRecord, TrainConfig, TrainInput};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splits(train: Vec<Triple>, valid: Vec<Triple>) -> DatasetSplits {
    DatasetSplits {
        train,
        valid,
        test: Vec::new(),
        ratios: SplitRatios::default(),
    }
}

fn run(
    s: &DatasetSplits,
    n_entities: usize,
    n_relations: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> (hcx::training::TrainOutcome, Vec<EpochRecord>) {
    let filter = FilterIndex::from_triples(s.all());
    let input = TrainInput {
        splits: s,
        filter: &filter,
        n_entities,
        n_relations,
    };
    let mut seen = Vec::new();
    let out = train(&input, model, cfg, |r| seen.push(r.clone())).unwrap();
    (out, seen)
}

#[test]
fn single_triple_overfits() {
    let s = splits(vec![Triple::new(2, 0, 5)], Vec::new());
    let model = ModelConfig::new(8, 16, AllocationPolicy::Equal, 1.0).unwrap();
    let cfg = TrainConfig {
        lr: 0.02,
        gamma: 1.0,
        max_epochs: 100,
        ..Default::default()
    };
    let (out, log) = run(&s, 8, 1, &model, &cfg);
    assert_eq!(log.len(), 100);
    assert!(log[49].total() < log[0].total(), "{} vs {}", log[49].total(), log[0].total());
    let report = evaluate(&out.last, &s.train, &FilterIndex::from_triples(&s.train)).unwrap();
    assert_eq!(report.mrr(), 1.0);
    assert!(out.last.hyperbolic_rows_inside());
}

#[test]
fn frozen_store_stops_after_second_evaluation() {
    let train_set: Vec<Triple> = (0..6).map(|i| Triple::new(i, 0, i + 1)).collect();
    let s = splits(train_set, vec![Triple::new(7, 0, 8)]);
    let model = ModelConfig::new(9, 8, AllocationPolicy::Equal, 1.0).unwrap();
    let cfg = TrainConfig {
        lr: 0.0,
        patience: 1,
        max_epochs: 50,
        ..Default::default()
    };
    let (out, log) = run(&s, 9, 1, &model, &cfg);
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].valid_mrr, log[1].valid_mrr);
    assert_eq!(out.best_state.epoch, 1);
    assert_eq!(out.best, out.last);
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let triples: Vec<Triple> = (0..60)
        .map(|_| Triple::new(rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..20)))
        .filter(|t| t.head != t.tail)
        .collect();
    let (valid, train_set) = triples.split_at(6);
    let s = splits(train_set.to_vec(), valid.to_vec());
    let model = ModelConfig::new(20, 16, AllocationPolicy::Equal, 2.0).unwrap();
    let cfg = TrainConfig {
        lr: 0.01,
        batch_size: 8,
        max_epochs: 8,
        seed: 11,
        ..Default::default()
    };
    let (a, la) = run(&s, 20, 3, &model, &cfg);
    let (b, lb) = run(&s, 20, 3, &model, &cfg);
    assert_eq!(a.last, b.last);
    assert_eq!(a.best, b.best);
    let losses = |l: &[EpochRecord]| -> Vec<u64> { l.iter().map(|r| r.total().to_bits()).collect() };
    assert_eq!(losses(&la), losses(&lb));
    assert!(a.last.hyperbolic_rows_inside());
}

// Hand-written single-space trainers. They reproduce the loop's shuffle and
// sampling stream, then apply their own loss, gradient and lazy Adam.

struct Dense {
    ent: Vec<Vec<f64>>,
    rel: Vec<Vec<f64>>,
    m_ent: Vec<Vec<f64>>,
    v_ent: Vec<Vec<f64>>,
    m_rel: Vec<Vec<f64>>,
    v_rel: Vec<Vec<f64>>,
}

impl Dense {
    fn new(ent: &[f64], rel: &[f64], width: usize) -> Self {
        let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(width).map(<[f64]>::to_vec).collect() };
        let zeros = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(width).map(|c| vec![0.0; c.len()]).collect() };
        Self {
            ent: rows(ent),
            rel: rows(rel),
            m_ent: zeros(ent),
            v_ent: zeros(ent),
            m_rel: zeros(rel),
            v_rel: zeros(rel),
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    TransE,
    ComplEx,
}

fn plain_score(kind: Kind, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match kind {
        Kind::TransE => -h.iter().zip(r).zip(t).map(|((h, r), t)| (h + r - t).powi(2)).sum::<f64>(),
        Kind::ComplEx => h
            .chunks(2)
            .zip(r.chunks(2))
            .zip(t.chunks(2))
            .map(|((h, r), t)| {
                let (re, im) = (h[0] * r[0] - h[1] * r[1], h[0] * r[1] + h[1] * r[0]);
                re * t[0] + im * t[1]
            })
            .sum(),
    }
}

/// Adds `w · ∂φ/∂(h, r, t)` into the three gradient rows.
fn plain_score_grad(kind: Kind, h: &[f64], r: &[f64], t: &[f64], w: f64, gh: &mut [f64], gr: &mut [f64], gt: &mut [f64]) {
    match kind {
        Kind::TransE => {
            for i in 0..h.len() {
                let d = -2.0 * (h[i] + r[i] - t[i]) * w;
                gh[i] += d;
                gr[i] += d;
                gt[i] -= d;
            }
        }
        Kind::ComplEx => {
            for k in 0..h.len() / 2 {
                let (a, b) = (2 * k, 2 * k + 1);
                gh[a] += w * (r[a] * t[a] + r[b] * t[b]);
                gh[b] += w * (-r[b] * t[a] + r[a] * t[b]);
                gr[a] += w * (h[a] * t[a] + h[b] * t[b]);
                gr[b] += w * (-h[b] * t[a] + h[a] * t[b]);
                gt[a] += w * (h[a] * r[a] - h[b] * r[b]);
                gt[b] += w * (h[a] * r[b] + h[b] * r[a]);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn adam_rows(p: &mut [Vec<f64>], m: &mut [Vec<f64>], v: &mut [Vec<f64>], g: &[Vec<f64>], rows: &[usize], step: i32, lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for &row in rows {
        for i in 0..p[row].len() {
            m[row][i] = b1 * m[row][i] + (1.0 - b1) * g[row][i];
            v[row][i] = b2 * v[row][i] + (1.0 - b2) * g[row][i] * g[row][i];
            let mh = m[row][i] / (1.0 - b1.powi(step));
            let vh = v[row][i] / (1.0 - b2.powi(step));
            p[row][i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Trains the single-space model directly; returns per-epoch mean rank loss.
fn plain_train(kind: Kind, model: &mut Dense, train_set: &[Triple], n_entities: usize, cfg: &TrainConfig) -> Vec<f64> {
    let filter = FilterIndex::from_triples(train_set);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut trace = Vec::new();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| sample_negatives(train_set[i], cfg.n_negatives, &filter, n_entities, &mut rng).unwrap())
                .collect();
            let mut ge: Vec<Vec<f64>> = model.ent.iter().map(|r| vec![0.0; r.len()]).collect();
            let mut gr: Vec<Vec<f64>> = model.rel.iter().map(|r| vec![0.0; r.len()]).collect();
            let mut ents = Vec::new();
            let mut rels = Vec::new();
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for ex in &batch {
                let triples: Vec<Triple> = std::iter::once(ex.positive).chain(ex.negatives.iter().copied()).collect();
                let scores: Vec<f64> = triples
                    .iter()
                    .map(|t| plain_score(kind, &model.ent[t.head], &model.rel[t.relation], &model.ent[t.tail]))
                    .collect();
                let neg = &scores[1..];
                let top = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = neg.iter().map(|s| (cfg.beta * (s - top)).exp()).collect();
                let z: f64 = e.iter().sum();
                let p: Vec<f64> = e.iter().map(|x| x / z).collect();
                loss += -sigmoid(cfg.gamma + scores[0]).ln()
                    - p.iter().zip(neg).map(|(p, s)| p * sigmoid(-cfg.gamma - s).ln()).sum::<f64>();
                let mut weights = vec![-(1.0 - sigmoid(cfg.gamma + scores[0]))];
                weights.extend(p.iter().zip(neg).map(|(p, s)| p * sigmoid(cfg.gamma + s)));
                for (t, w) in triples.iter().zip(weights) {
                    let (h, r, tl) = (model.ent[t.head].clone(), model.rel[t.relation].clone(), model.ent[t.tail].clone());
                    let mut gh = vec![0.0; h.len()];
                    let mut grr = vec![0.0; r.len()];
                    let mut gt = vec![0.0; tl.len()];
                    plain_score_grad(kind, &h, &r, &tl, w * scale, &mut gh, &mut grr, &mut gt);
                    for i in 0..h.len() {
                        ge[t.head][i] += gh[i];
                        ge[t.tail][i] += gt[i];
                    }
                    for i in 0..r.len() {
                        gr[t.relation][i] += grr[i];
                    }
                    ents.extend([t.head, t.tail]);
                    rels.push(t.relation);
                }
            }
            ents.sort_unstable();
            ents.dedup();
            rels.sort_unstable();
            rels.dedup();
            step += 1;
            adam_rows(&mut model.ent, &mut model.m_ent, &mut model.v_ent, &ge, &ents, step, cfg.lr);
            adam_rows(&mut model.rel, &mut model.m_rel, &mut model.v_rel, &gr, &rels, step, cfg.lr);
            epoch_loss += loss * scale;
            n_batches += 1;
        }
        trace.push(epoch_loss / n_batches as f64);
    }
    trace
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn degeneration(space: Space, kind: Kind) {
    let n = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut train_set: Vec<Triple> = (0..150)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..4), rng.gen_range(0..n)))
        .filter(|t| t.head != t.tail)
        .collect();
    train_set.sort();
    train_set.dedup();
    let s = splits(train_set.clone(), Vec::new());
    let mut model = ModelConfig::new(n, 32, AllocationPolicy::Equal, 1.0).unwrap();
    model.spaces = SpaceMask::only(space);
    model.attention_frozen = true;
    let cfg = TrainConfig {
        lr: 0.01,
        gamma: 2.0,
        beta: 0.5,
        lambda1: 0.0,
        lambda2: 0.0,
        batch_size: 32,
        n_negatives: 8,
        max_epochs: 6,
        seed: 5,
        ..Default::default()
    };
    let init = init_parameters(model, n, 4, cfg.seed).unwrap();
    let (ent, rel, width) = match space {
        Space::Euclidean => (&init.entity_euc, &init.rel_euc, init.config.dims.euc),
        Space::Complex => (&init.entity_cplx, &init.rel_cplx, 2 * init.config.dims.cplx),
        Space::Hyperbolic => unreachable!(),
    };
    let mut plain = Dense::new(ent, rel, width);
    let trace = plain_train(kind, &mut plain, &train_set, n, &cfg);

    let filter = FilterIndex::from_triples(&train_set);
    let input = TrainInput {
        splits: &s,
        filter: &filter,
        n_entities: n,
        n_relations: 4,
    };
    let mut log = Vec::new();
    let out = train_from(&input, init.clone(), &cfg, |r| log.push(r.rank_loss)).unwrap();
    assert_eq!(log.len(), trace.len());
    for (a, b) in log.iter().zip(&trace) {
        assert!(close(*a, *b), "loss trace {a} vs {b}");
    }
    let store: &ParameterStore = &out.last;
    for e in 0..n {
        for r in 0..4 {
            let lib = hcx::scoring::score(store, e, r, (e + 7) % n).unwrap().phi;
            let own = plain_score(kind, &plain.ent[e], &plain.rel[r], &plain.ent[(e + 7) % n]);
            assert!(close(lib, own), "score ({e},{r}) {lib} vs {own}");
        }
    }
    // the inactive families never move
    assert_eq!(store.entity_hyp, init.entity_hyp);
    assert_eq!(store.attn_logits, init.attn_logits);
}

#[test]
fn euclidean_only_training_is_transe() {
    degeneration(Space::Euclidean, Kind::TransE);
}

#[test]
fn complex_only_training_is_complex_bilinear() {
    degeneration(Space::Complex, Kind::ComplEx);
}
