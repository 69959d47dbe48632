//! Trainable parameters, dimension allocation and attention weights.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, render_manifest, save_checkpoint, write_manifest, TrainingState,
    MAGIC, VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{self, DEFAULT_MARGIN};

/// The three embedding spaces, in attention order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    Hyperbolic = 0,
    Complex = 1,
    Euclidean = 2,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Hyperbolic, Space::Complex, Space::Euclidean];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Space::Hyperbolic => 'H',
            Space::Complex => 'C',
            Space::Euclidean => 'E',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Space::Hyperbolic => "Hyperbolic",
            Space::Complex => "Complex",
            Space::Euclidean => "Euclidean",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "H" | "HYPERBOLIC" => Ok(Space::Hyperbolic),
            "C" | "COMPLEX" => Ok(Space::Complex),
            "E" | "EUCLIDEAN" => Ok(Space::Euclidean),
            _ => Err(Error::Config(format!("unknown space {s:?} (expected H, C or E)"))),
        }
    }
}

/// Which spaces take part in scoring. Disabled spaces behave as if their
/// attention logit were −∞ and receive no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceMask(pub [bool; 3]);

impl SpaceMask {
    pub const ALL: SpaceMask = SpaceMask([true; 3]);

    pub fn only(space: Space) -> Self {
        let mut m = [false; 3];
        m[space.index()] = true;
        SpaceMask(m)
    }

    pub fn without(self, space: Space) -> Self {
        let mut m = self.0;
        m[space.index()] = false;
        SpaceMask(m)
    }

    pub fn is_active(&self, space: Space) -> bool {
        self.0[space.index()]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> u8 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &on)| acc | (u8::from(on) << i))
    }

    pub fn from_bits(bits: u8) -> Self {
        SpaceMask([bits & 1 != 0, bits & 2 != 0, bits & 4 != 0])
    }
}

impl Default for SpaceMask {
    fn default() -> Self {
        Self::ALL
    }
}

/// Per-space widths. `cplx` counts complex coordinates (two reals each).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub hyp: usize,
    pub cplx: usize,
    pub euc: usize,
}

impl Dims {
    /// Real numbers per entity row across all spaces.
    pub fn real_budget(&self) -> usize {
        self.hyp + 2 * self.cplx + self.euc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationPolicy {
    Equal,
    Custom(Dims),
}

/// Splits a real-dimension budget across the three spaces.
///
/// `Equal` gives a quarter of the budget to each of the hyperbolic and
/// Euclidean spaces and half (as `budget/4` complex coordinates) to the
/// complex space. `Custom` is accepted when its real budget matches exactly.
pub fn allocate_dimensions(num_entities: usize, d_base: usize, policy: AllocationPolicy) -> Result<Dims> {
    // the entity count is accepted for future size-aware policies; neither
    // current policy depends on it
    let _ = num_entities;
    match policy {
        AllocationPolicy::Equal => {
            if d_base < 8 || d_base % 4 != 0 {
                return Err(Error::Config(format!(
                    "equal allocation needs D_base ≥ 8 and divisible by 4, got {d_base}"
                )));
            }
            let q = d_base / 4;
            Ok(Dims { hyp: q, cplx: q, euc: q })
        }
        AllocationPolicy::Custom(dims) => {
            if dims.hyp == 0 || dims.cplx == 0 || dims.euc == 0 {
                return Err(Error::Config(format!("all dimensions must be ≥ 1: {dims:?}")));
            }
            if dims.real_budget() != d_base {
                return Err(Error::Config(format!(
                    "custom dims {}+2·{}+{} = {} do not match D_base {d_base}",
                    dims.hyp,
                    dims.cplx,
                    dims.euc,
                    dims.real_budget()
                )));
            }
            Ok(dims)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub d_base: usize,
    pub policy: AllocationPolicy,
    pub curvature: f64,
    /// Projection margin for hyperbolic rows.
    pub ball_margin: f64,
    pub spaces: SpaceMask,
    /// Attention held at uniform over the active spaces.
    pub attention_frozen: bool,
}

impl ModelConfig {
    pub fn new(n_entities: usize, d_base: usize, policy: AllocationPolicy, curvature: f64) -> Result<Self> {
        let dims = allocate_dimensions(n_entities, d_base, policy)?;
        let cfg = Self {
            dims,
            d_base,
            policy,
            curvature,
            ball_margin: DEFAULT_MARGIN,
            spaces: SpaceMask::ALL,
            attention_frozen: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        geometry::PoincareBall::new(self.curvature)?;
        if !(self.ball_margin > 0.0 && self.ball_margin < 1.0) {
            return Err(Error::Config(format!("ball margin must be in (0, 1), got {}", self.ball_margin)));
        }
        if self.spaces.count() == 0 {
            return Err(Error::Config("at least one space must stay enabled".into()));
        }
        let d = self.dims;
        if d.hyp == 0 || d.cplx == 0 || d.euc == 0 {
            return Err(Error::Config(format!("all dimensions must be ≥ 1: {d:?}")));
        }
        Ok(())
    }
}

/// Identifies one parameter array of a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    EntityHyp,
    EntityCplx,
    EntityEuc,
    RelHyp,
    RelCplx,
    RelEuc,
    AttnLogits,
}

impl Family {
    /// Serialization and iteration order.
    pub const ALL: [Family; 7] = [
        Family::EntityHyp,
        Family::EntityCplx,
        Family::EntityEuc,
        Family::RelHyp,
        Family::RelCplx,
        Family::RelEuc,
        Family::AttnLogits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::EntityHyp => "entity_hyp",
            Family::EntityCplx => "entity_cplx",
            Family::EntityEuc => "entity_euc",
            Family::RelHyp => "rel_hyp",
            Family::RelCplx => "rel_cplx",
            Family::RelEuc => "rel_euc",
            Family::AttnLogits => "attn_logits",
        }
    }

    /// True for the per-entity families.
    pub fn is_entity(self) -> bool {
        matches!(self, Family::EntityHyp | Family::EntityCplx | Family::EntityEuc)
    }

    /// The space whose score this family feeds, if any.
    pub fn space(self) -> Option<Space> {
        match self {
            Family::EntityHyp | Family::RelHyp => Some(Space::Hyperbolic),
            Family::EntityCplx | Family::RelCplx => Some(Space::Complex),
            Family::EntityEuc | Family::RelEuc => Some(Space::Euclidean),
            Family::AttnLogits => None,
        }
    }
}

/// All trainable arrays, row-major. Complex rows interleave `(re, im)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub config: ModelConfig,
    pub n_entities: usize,
    pub n_relations: usize,
    pub entity_hyp: Vec<f64>,
    pub entity_cplx: Vec<f64>,
    pub entity_euc: Vec<f64>,
    pub rel_hyp: Vec<f64>,
    pub rel_cplx: Vec<f64>,
    pub rel_euc: Vec<f64>,
    pub attn_logits: Vec<f64>,
}

impl ParameterStore {
    /// An all-zero store of the given shape.
    pub fn zeros(config: ModelConfig, n_entities: usize, n_relations: usize) -> Self {
        let d = config.dims;
        Self {
            config,
            n_entities,
            n_relations,
            entity_hyp: vec![0.0; n_entities * d.hyp],
            entity_cplx: vec![0.0; n_entities * 2 * d.cplx],
            entity_euc: vec![0.0; n_entities * d.euc],
            rel_hyp: vec![0.0; n_relations * d.hyp],
            rel_cplx: vec![0.0; n_relations * 2 * d.cplx],
            rel_euc: vec![0.0; n_relations * d.euc],
            attn_logits: vec![0.0; n_relations * 3],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config, self.n_entities, self.n_relations)
    }

    pub fn family(&self, f: Family) -> &[f64] {
        match f {
            Family::EntityHyp => &self.entity_hyp,
            Family::EntityCplx => &self.entity_cplx,
            Family::EntityEuc => &self.entity_euc,
            Family::RelHyp => &self.rel_hyp,
            Family::RelCplx => &self.rel_cplx,
            Family::RelEuc => &self.rel_euc,
            Family::AttnLogits => &self.attn_logits,
        }
    }

    pub fn family_mut(&mut self, f: Family) -> &mut [f64] {
        match f {
            Family::EntityHyp => &mut self.entity_hyp,
            Family::EntityCplx => &mut self.entity_cplx,
            Family::EntityEuc => &mut self.entity_euc,
            Family::RelHyp => &mut self.rel_hyp,
            Family::RelCplx => &mut self.rel_cplx,
            Family::RelEuc => &mut self.rel_euc,
            Family::AttnLogits => &mut self.attn_logits,
        }
    }

    /// Width of one row of a family.
    pub fn row_width(&self, f: Family) -> usize {
        let d = self.config.dims;
        match f {
            Family::EntityHyp | Family::RelHyp => d.hyp,
            Family::EntityCplx | Family::RelCplx => 2 * d.cplx,
            Family::EntityEuc | Family::RelEuc => d.euc,
            Family::AttnLogits => 3,
        }
    }

    pub fn fill(&mut self, value: f64) {
        for f in Family::ALL {
            self.family_mut(f).fill(value);
        }
    }

    pub fn parameter_count(&self) -> usize {
        Family::ALL.iter().map(|&f| self.family(f).len()).sum()
    }

    pub fn ent_hyp(&self, e: usize) -> &[f64] {
        let d = self.config.dims.hyp;
        &self.entity_hyp[e * d..(e + 1) * d]
    }

    pub fn ent_cplx(&self, e: usize) -> &[f64] {
        let d = 2 * self.config.dims.cplx;
        &self.entity_cplx[e * d..(e + 1) * d]
    }

    pub fn ent_euc(&self, e: usize) -> &[f64] {
        let d = self.config.dims.euc;
        &self.entity_euc[e * d..(e + 1) * d]
    }

    pub fn rel_hyp(&self, r: usize) -> &[f64] {
        let d = self.config.dims.hyp;
        &self.rel_hyp[r * d..(r + 1) * d]
    }

    pub fn rel_cplx(&self, r: usize) -> &[f64] {
        let d = 2 * self.config.dims.cplx;
        &self.rel_cplx[r * d..(r + 1) * d]
    }

    pub fn rel_euc(&self, r: usize) -> &[f64] {
        let d = self.config.dims.euc;
        &self.rel_euc[r * d..(r + 1) * d]
    }

    pub fn logits(&self, r: usize) -> &[f64] {
        &self.attn_logits[r * 3..r * 3 + 3]
    }

    pub fn check_entity(&self, e: usize) -> Result<()> {
        if e < self.n_entities {
            Ok(())
        } else {
            Err(Error::Index {
                kind: "entity",
                index: e,
                size: self.n_entities,
            })
        }
    }

    pub fn check_relation(&self, r: usize) -> Result<()> {
        if r < self.n_relations {
            Ok(())
        } else {
            Err(Error::Index {
                kind: "relation",
                index: r,
                size: self.n_relations,
            })
        }
    }

    /// Projects every hyperbolic row (entities and relations) into the ball.
    pub fn project_hyperbolic(&mut self) {
        let c = self.config.curvature;
        let margin = self.config.ball_margin;
        let d = self.config.dims.hyp;
        for row in self.entity_hyp.chunks_exact_mut(d).chain(self.rel_hyp.chunks_exact_mut(d)) {
            geometry::project_in_place(row, c, margin);
        }
    }

    /// True when every hyperbolic row lies strictly inside the ball.
    pub fn hyperbolic_rows_inside(&self) -> bool {
        let c = self.config.curvature;
        let d = self.config.dims.hyp;
        self.entity_hyp
            .chunks_exact(d)
            .chain(self.rel_hyp.chunks_exact(d))
            .all(|row| c * geometry::norm_sq(row) < 1.0)
    }

    /// First non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<(Family, usize, f64)> {
        Family::ALL.iter().find_map(|&f| {
            self.family(f)
                .iter()
                .position(|v| !v.is_finite())
                .map(|i| (f, i, self.family(f)[i]))
        })
    }
}

/// Initializes a store: hyperbolic rows uniform in `(−1e-3, 1e-3)`, complex
/// and Euclidean rows Xavier-uniform over the row width, attention logits
/// uniform in `[0, 1)`. Frozen attention starts (and stays) at zero logits.
pub fn init_parameters(config: ModelConfig, n_entities: usize, n_relations: usize, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    if n_entities == 0 || n_relations == 0 {
        return Err(Error::Config("entity and relation counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::zeros(config, n_entities, n_relations);

    for f in Family::ALL {
        let width = store.row_width(f);
        let values = store.family_mut(f);
        match f {
            Family::EntityHyp | Family::RelHyp => {
                values.iter_mut().for_each(|v| *v = rng.gen_range(-1e-3..1e-3));
            }
            Family::EntityCplx | Family::RelCplx | Family::EntityEuc | Family::RelEuc => {
                let bound = (6.0 / (2 * width) as f64).sqrt();
                values.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
            Family::AttnLogits => {
                if config.attention_frozen {
                    values.fill(0.0);
                } else {
                    values.iter_mut().for_each(|v| *v = rng.gen::<f64>());
                }
            }
        }
    }
    Ok(store)
}

/// Softmax of three logits restricted to the active spaces; inactive spaces
/// get weight 0.
pub fn masked_softmax(logits: &[f64], mask: SpaceMask) -> [f64; 3] {
    let max = (0..3)
        .filter(|&i| mask.0[i])
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = [0.0; 3];
    let mut sum = 0.0;
    for i in 0..3 {
        if mask.0[i] {
            w[i] = (logits[i] - max).exp();
            sum += w[i];
        }
    }
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

/// Attention weights `(α_H, α_C, α_E)` of a relation.
pub fn attention_weights(store: &ParameterStore, relation: usize) -> Result<[f64; 3]> {
    store.check_relation(relation)?;
    Ok(relation_attention(store, relation))
}

pub(crate) fn relation_attention(store: &ParameterStore, relation: usize) -> [f64; 3] {
    if store.config.attention_frozen {
        masked_softmax(&[0.0; 3], store.config.spaces)
    } else {
        masked_softmax(store.logits(relation), store.config.spaces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d_base: usize) -> ModelConfig {
        ModelConfig::new(10, d_base, AllocationPolicy::Equal, 1.0).unwrap()
    }

    #[test]
    fn equal_allocation() {
        let d = allocate_dimensions(100, 192, AllocationPolicy::Equal).unwrap();
        assert_eq!(d, Dims { hyp: 48, cplx: 48, euc: 48 });
        assert_eq!(d.real_budget(), 192);
        let d = allocate_dimensions(100, 8, AllocationPolicy::Equal).unwrap();
        assert_eq!(d, Dims { hyp: 2, cplx: 2, euc: 2 });
    }

    #[test]
    fn allocation_errors() {
        assert!(allocate_dimensions(1, 4, AllocationPolicy::Equal).is_err());
        assert!(allocate_dimensions(1, 30, AllocationPolicy::Equal).is_err());
        let custom = AllocationPolicy::Custom(Dims { hyp: 10, cplx: 5, euc: 10 });
        assert!(allocate_dimensions(1, 30, custom).is_ok());
        assert!(allocate_dimensions(1, 32, custom).is_err());
        let zero = AllocationPolicy::Custom(Dims { hyp: 0, cplx: 5, euc: 20 });
        assert!(allocate_dimensions(1, 30, zero).is_err());
    }

    #[test]
    fn init_ranges_and_determinism() {
        let a = init_parameters(cfg(32), 20, 3, 11).unwrap();
        assert!(a.entity_hyp.iter().chain(&a.rel_hyp).all(|v| v.abs() < 1e-3));
        let bound = (6.0f64 / 32.0).sqrt(); // complex row width 16 reals
        assert!(a.entity_cplx.iter().all(|v| v.abs() <= bound));
        assert!(a.attn_logits.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(a.hyperbolic_rows_inside());
        let b = init_parameters(cfg(32), 20, 3, 11).unwrap();
        for f in Family::ALL {
            let bits = |s: &ParameterStore| s.family(f).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
        let c = init_parameters(cfg(32), 20, 3, 12).unwrap();
        assert_ne!(a.entity_euc, c.entity_euc);
    }

    #[test]
    fn attention_examples() {
        let mut s = ParameterStore::zeros(cfg(8), 2, 2);
        let w = attention_weights(&s, 0).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        s.attn_logits[3] = 2f64.ln();
        let w = attention_weights(&s, 1).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((w[2] - 0.25).abs() < 1e-15);
        assert!(matches!(attention_weights(&s, 2), Err(Error::Index { .. })));
    }

    #[test]
    fn masked_attention() {
        let w = masked_softmax(&[5.0, 1.0, -2.0], SpaceMask::only(Space::Euclidean));
        assert_eq!(w, [0.0, 0.0, 1.0]);
        let w = masked_softmax(&[0.0, 0.0, 0.0], SpaceMask::ALL.without(Space::Complex));
        assert_eq!(w, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn frozen_attention_is_uniform() {
        let mut c = cfg(8);
        c.attention_frozen = true;
        let s = init_parameters(c, 3, 2, 0).unwrap();
        assert!(s.attn_logits.iter().all(|&v| v == 0.0));
        let w = attention_weights(&s, 1).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mask_bits_round_trip() {
        for bits in 1..8u8 {
            assert_eq!(SpaceMask::from_bits(bits).bits(), bits);
        }
    }

    #[test]
    fn config_rejects_all_spaces_disabled() {
        let mut c = cfg(8);
        c.spaces = SpaceMask([false; 3]);
        assert!(c.validate().is_err());
    }
}
