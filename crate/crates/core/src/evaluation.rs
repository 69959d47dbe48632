//! Filtered link-prediction ranking, metric reports, attention summaries and
//! log–log scaling fits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{FilterIndex, Triple, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{relation_attention, ParameterStore, Space};
use crate::scoring::{score_all_unchecked, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankingResult {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
}

/// `1 + #{candidates scoring ≥ the target}`, skipping the target itself and
/// candidates accepted by `is_filtered`. Ties count against the target.
fn filtered_rank(scores: &[f64], target: usize, is_filtered: impl Fn(usize) -> bool) -> usize {
    let truth = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| e != target && !(s < truth) && !is_filtered(e))
        .count()
}

/// Filtered head and tail ranks of one triple against every entity.
pub fn rank_triple(store: &ParameterStore, triple: Triple, filter: &FilterIndex) -> Result<RankingResult> {
    store.check_entity(triple.head)?;
    store.check_entity(triple.tail)?;
    store.check_relation(triple.relation)?;
    Ok(rank_triple_unchecked(store, triple, filter))
}

fn rank_triple_unchecked(store: &ParameterStore, t: Triple, filter: &FilterIndex) -> RankingResult {
    let tail_scores = score_all_unchecked(
        store,
        Query::Tail {
            head: t.head,
            relation: t.relation,
        },
    );
    let known_tails = filter.tails(t.head, t.relation);
    let tail_rank = filtered_rank(&tail_scores, t.tail, |e| known_tails.is_some_and(|s| s.contains(&e)));

    let head_scores = score_all_unchecked(
        store,
        Query::Head {
            relation: t.relation,
            tail: t.tail,
        },
    );
    let known_heads = filter.heads(t.relation, t.tail);
    let head_rank = filtered_rank(&head_scores, t.head, |e| known_heads.is_some_and(|s| s.contains(&e)));

    RankingResult {
        triple: t,
        head_rank,
        tail_rank,
    }
}

/// Aggregate metrics over a set of ranks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    /// Number of ranks (two per triple).
    pub n_ranks: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        // summing in sorted order makes the result independent of input order
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Self {
            mrr: sorted.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            n_ranks: ranks.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_relation: BTreeMap<usize, Metrics>,
    pub n_triples: usize,
}

impl EvalReport {
    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    pub fn from_results(results: &[RankingResult]) -> Self {
        let mut all = Vec::with_capacity(results.len() * 2);
        let mut by_rel: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in results {
            all.extend([r.head_rank, r.tail_rank]);
            by_rel
                .entry(r.triple.relation)
                .or_default()
                .extend([r.head_rank, r.tail_rank]);
        }
        Self {
            overall: Metrics::from_ranks(&all),
            per_relation: by_rel.into_iter().map(|(k, v)| (k, Metrics::from_ranks(&v))).collect(),
            n_triples: results.len(),
        }
    }

    /// `key<TAB>value` lines; per-relation keys are `relation.<name>.<metric>`.
    pub fn to_records(&self, vocab: Option<&Vocabulary>) -> String {
        let mut s = String::new();
        let m = &self.overall;
        let _ = writeln!(s, "n_triples\t{}", self.n_triples);
        let _ = writeln!(s, "n_ranks\t{}", m.n_ranks);
        let _ = writeln!(s, "mrr\t{}", m.mrr);
        let _ = writeln!(s, "hits@1\t{}", m.hits1);
        let _ = writeln!(s, "hits@3\t{}", m.hits3);
        let _ = writeln!(s, "hits@10\t{}", m.hits10);
        for (&r, m) in &self.per_relation {
            let name = relation_label(vocab, r);
            let _ = writeln!(s, "relation.{name}.n_ranks\t{}", m.n_ranks);
            let _ = writeln!(s, "relation.{name}.mrr\t{}", m.mrr);
            let _ = writeln!(s, "relation.{name}.hits@10\t{}", m.hits10);
        }
        s
    }

    /// Fixed-width text table.
    pub fn to_table(&self, vocab: Option<&Vocabulary>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}", "relation", "ranks", "MRR", "H@1", "H@3", "H@10");
        let mut row = |label: &str, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<24} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                label, m.n_ranks, m.mrr, m.hits1, m.hits3, m.hits10
            );
        };
        for (&r, m) in &self.per_relation {
            row(&relation_label(vocab, r), m);
        }
        row("ALL", &self.overall);
        s
    }
}

fn relation_label(vocab: Option<&Vocabulary>, r: usize) -> String {
    vocab
        .and_then(|v| v.relation_name(r))
        .map_or_else(|| r.to_string(), str::to_owned)
}

/// Ranks every triple of a split (in parallel) and aggregates the metrics.
pub fn evaluate(store: &ParameterStore, split: &[Triple], filter: &FilterIndex) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    for &t in split {
        store.check_entity(t.head)?;
        store.check_entity(t.tail)?;
        store.check_relation(t.relation)?;
    }
    let results: Vec<RankingResult> = split
        .par_iter()
        .map(|&t| rank_triple_unchecked(store, t, filter))
        .collect();
    Ok(EvalReport::from_results(&results))
}

/// Filtered MRR over head and tail ranks; 0 for an empty split.
pub(crate) fn mrr(store: &ParameterStore, split: &[Triple], filter: &FilterIndex) -> f64 {
    let ranks: Vec<[usize; 2]> = split
        .par_iter()
        .map(|&t| {
            let r = rank_triple_unchecked(store, t, filter);
            [r.head_rank, r.tail_rank]
        })
        .collect();
    let flat: Vec<usize> = ranks.into_iter().flatten().collect();
    Metrics::from_ranks(&flat).mrr
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub relation: usize,
    /// `(α_H, α_C, α_E)` averaged over the sampled triples.
    pub alpha: [f64; 3],
    pub dominant: Space,
    pub samples: usize,
}

/// Index of the largest weight; ties resolve to the earlier space (H, C, E).
pub fn dominant_space(alpha: &[f64; 3]) -> Space {
    let mut best = 0;
    for s in 1..3 {
        if alpha[s] > alpha[best] {
            best = s;
        }
    }
    Space::ALL[best]
}

/// Samples `n_samples` triples uniformly with replacement, then averages the
/// attention weights per relation. Relations that were never drawn are absent.
pub fn attention_report(store: &ParameterStore, triples: &[Triple], n_samples: usize, seed: u64) -> Result<Vec<AttentionRow>> {
    if n_samples == 0 {
        return Err(Error::Config("attention report needs at least one sample".into()));
    }
    if triples.is_empty() {
        return Err(Error::Dataset("no triples to sample from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
    for _ in 0..n_samples {
        let t = triples[rng.gen_range(0..triples.len())];
        store.check_relation(t.relation)?;
        let a = relation_attention(store, t.relation);
        let entry = acc.entry(t.relation).or_insert(([0.0; 3], 0));
        for s in 0..3 {
            entry.0[s] += a[s];
        }
        entry.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(relation, (sum, n))| {
            let alpha = sum.map(|v| v / n as f64);
            AttentionRow {
                relation,
                alpha,
                dominant: dominant_space(&alpha),
                samples: n,
            }
        })
        .collect())
}

pub const ATTENTION_COLUMNS: &str = "relation\talpha_H\talpha_C\talpha_E\tdominant\tsamples";

pub fn render_attention_tsv(rows: &[AttentionRow], vocab: Option<&Vocabulary>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{ATTENTION_COLUMNS}");
    for row in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            relation_label(vocab, row.relation),
            row.alpha[0],
            row.alpha[1],
            row.alpha[2],
            row.dominant,
            row.samples
        );
    }
    s
}

/// Power law `time ≈ e^intercept · size^exponent` fitted by OLS in log–log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_scaling_law(sizes: &[f64], times: &[f64]) -> Result<ScalingFit> {
    if sizes.len() != times.len() {
        return Err(Error::Config(format!(
            "{} sizes but {} times",
            sizes.len(),
            times.len()
        )));
    }
    if sizes.len() < 3 {
        return Err(Error::Config(format!("need at least 3 points, got {}", sizes.len())));
    }
    if let Some(bad) = sizes.iter().chain(times).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("scaling data must be positive and finite, got {bad}")));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = times.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("all sizes are equal; the exponent is undetermined".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + exponent * x);
            e * e
        })
        .sum();
    // constant times: a perfect (flat) fit
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(ScalingFit {
        exponent,
        intercept,
        r_squared,
    })
}

/// Parses `size<TAB>seconds` lines (`#` comments and blank lines skipped).
pub fn parse_scaling_points(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut sizes = Vec::new();
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected size<TAB>seconds".into(),
            });
        };
        let parse = |v: &str| {
            v.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("not a number: {v:?}"),
            })
        };
        sizes.push(parse(a)?);
        times.push(parse(b)?);
    }
    Ok((sizes, times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AllocationPolicy, Dims, ModelConfig};

    #[test]
    fn metric_arithmetic() {
        let m = Metrics::from_ranks(&[1, 4]);
        assert_eq!(m.mrr, 0.625);
        assert_eq!(m.hits1, 0.5);
        assert_eq!(m.hits3, 0.5);
        assert_eq!(m.hits10, 1.0);
    }

    #[test]
    fn pessimistic_ties_and_filtering() {
        let scores = [0.5, 0.9, 0.7, 0.8];
        // true = 2 (0.7); 1 and 3 score higher, 3 is filtered
        assert_eq!(filtered_rank(&scores, 2, |e| e == 3), 2);
        assert_eq!(filtered_rank(&scores, 2, |_| false), 3);
        assert_eq!(filtered_rank(&[1.0, 1.0, 0.0], 0, |_| false), 2);
        assert_eq!(filtered_rank(&[2.0, 1.0, 0.0], 0, |_| false), 1);
    }

    /// Store where only the Euclidean space is active and tails are 1-D points,
    /// so `φ(h, r, e) = −(h + r − e)²` can be read off by hand.
    fn line_store(points: &[f64]) -> ParameterStore {
        let dims = Dims { hyp: 1, cplx: 1, euc: 1 };
        let mut cfg = ModelConfig::new(points.len(), 4, AllocationPolicy::Custom(dims), 1.0).unwrap();
        cfg.spaces = crate::model::SpaceMask::only(Space::Euclidean);
        let mut s = ParameterStore::zeros(cfg, points.len(), 1);
        s.entity_euc.copy_from_slice(points);
        s
    }

    #[test]
    fn toy_tail_rank() {
        // h + r = 0; tails scored by closeness to 0: e1 (0.1), e3 (0.2) beat e2 (0.3)
        let mut s = line_store(&[1.0, 0.1, 0.3, 0.2]);
        s.rel_euc[0] = -1.0;
        let t = Triple::new(0, 0, 2);
        let filter = FilterIndex::from_triples(&[t, Triple::new(0, 0, 3)]);
        let r = rank_triple(&s, t, &filter).unwrap();
        assert_eq!(r.tail_rank, 2);
    }

    #[test]
    fn evaluate_requires_triples() {
        let s = line_store(&[0.0, 1.0]);
        assert!(evaluate(&s, &[], &FilterIndex::default()).is_err());
    }

    #[test]
    fn attention_rows() {
        let mut s = line_store(&[0.0, 1.0]);
        s.config.spaces = crate::model::SpaceMask::ALL;
        let triples = [Triple::new(0, 0, 1)];
        let rows = attention_report(&s, &triples, 10, 0).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(rows[0].dominant, Space::Hyperbolic);
        s.attn_logits[0] = 2f64.ln();
        let rows = attention_report(&s, &triples, 3, 0).unwrap();
        assert!((rows[0].alpha[0] - 0.5).abs() < 1e-15);
        assert_eq!(rows[0].dominant, Space::Hyperbolic);
        let tsv = render_attention_tsv(&rows, None);
        assert!(tsv.starts_with(ATTENTION_COLUMNS));
    }

    #[test]
    fn scaling_fit_exact_power_law() {
        let sizes = [1e3, 1e4, 1e5, 1e6];
        let times: Vec<f64> = sizes.iter().map(|e: &f64| 2.0 * e.powf(1.06)).collect();
        let fit = fit_scaling_law(&sizes, &times).unwrap();
        assert!((fit.exponent - 1.06).abs() < 1e-9);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat = fit_scaling_law(&sizes, &[3.0; 4]).unwrap();
        assert!(flat.exponent.abs() < 1e-15);
    }

    #[test]
    fn scaling_fit_errors() {
        assert!(fit_scaling_law(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_scaling_law(&[1.0, 2.0, 0.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_scaling_law(&[1.0, 2.0, 3.0], &[1.0, -2.0, 3.0]).is_err());
        assert!(fit_scaling_law(&[5.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn scaling_points_parse() {
        let (s, t) = parse_scaling_points("# size\tseconds\n10\t1.5\n100\t12\n").unwrap();
        assert_eq!(s, vec![10.0, 100.0]);
        assert_eq!(t, vec![1.5, 12.0]);
        assert!(parse_scaling_points("10 1.5\n").is_err());
    }
}
