//! Run settings merged from a `key = value` file, command-line overrides and
//! the `HCX_SEED` environment variable.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use hcx::model::{AllocationPolicy, Dims, ModelConfig, Space, SpaceMask};
use hcx::training::{LossSign, TrainConfig};

/// Every key accepted in a config file, in the order they are echoed.
pub const KEYS: &[&str] = &[
    "d_base",
    "dims",
    "curvature",
    "ball_margin",
    "gamma",
    "beta",
    "lambda1",
    "lambda2",
    "lr",
    "batch_size",
    "n_negatives",
    "max_epochs",
    "patience",
    "eval_every",
    "seed",
    "loss_sign",
    "no_attention",
    "no_consistency",
    "no_space",
];

pub const SEED_ENV: &str = "HCX_SEED";

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// unknown keys and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(format!("config line {}: unknown key {k:?}", i + 1));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("config line {}: duplicate key {k:?}", i + 1));
        }
    }
    Ok(out)
}

/// Fully resolved model and training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_base: usize,
    pub dims: Option<Dims>,
    pub curvature: f64,
    pub ball_margin: f64,
    pub train: TrainConfig,
    pub no_attention: bool,
    pub no_consistency: bool,
    pub disabled: Vec<Space>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_base: 128,
            dims: None,
            curvature: 1.0,
            ball_margin: hcx::geometry::DEFAULT_MARGIN,
            train: TrainConfig::default(),
            no_attention: false,
            no_consistency: false,
            disabled: Vec::new(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

fn parse_space(s: &str) -> Result<Space, String> {
    s.trim().parse::<Space>().map_err(|e| e.to_string())
}

impl RunConfig {
    /// Resolves settings: `overrides` win over `file`, and the seed falls back
    /// to `env_seed` when neither sets it.
    pub fn resolve(
        file: &BTreeMap<String, String>,
        overrides: &BTreeMap<String, String>,
        env_seed: Option<&str>,
    ) -> Result<Self, String> {
        let mut merged = file.clone();
        merged.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        if !merged.contains_key("seed") {
            if let Some(s) = env_seed {
                merged.insert("seed".into(), s.trim().to_string());
            }
        }

        let mut rc = RunConfig::default();
        for (k, v) in &merged {
            let t = &mut rc.train;
            match k.as_str() {
                "d_base" => rc.d_base = num(k, v)?,
                "dims" if v == "equal" => rc.dims = None,
                "dims" => {
                    let parts: Vec<usize> = v.split(',').map(|p| num(k, p.trim())).collect::<Result<_, _>>()?;
                    let [hyp, cplx, euc] = parts[..] else {
                        return Err(format!("dims: expected three comma-separated counts, got {v:?}"));
                    };
                    rc.dims = Some(Dims { hyp, cplx, euc });
                }
                "curvature" => rc.curvature = num(k, v)?,
                "ball_margin" => rc.ball_margin = num(k, v)?,
                "gamma" => t.gamma = num(k, v)?,
                "beta" => t.beta = num(k, v)?,
                "lambda1" => t.lambda1 = num(k, v)?,
                "lambda2" => t.lambda2 = num(k, v)?,
                "lr" => t.lr = num(k, v)?,
                "batch_size" => t.batch_size = num(k, v)?,
                "n_negatives" => t.n_negatives = num(k, v)?,
                "max_epochs" => t.max_epochs = num(k, v)?,
                "patience" => t.patience = num(k, v)?,
                "eval_every" => t.eval_every = num(k, v)?,
                "seed" => t.seed = num(k, v)?,
                "loss_sign" => t.loss_sign = v.parse::<LossSign>().map_err(|e| e.to_string())?,
                "no_attention" => rc.no_attention = flag(k, v)?,
                "no_consistency" => rc.no_consistency = flag(k, v)?,
                "no_space" => {
                    rc.disabled = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(parse_space).collect::<Result<_, _>>()?
                    };
                }
                _ => return Err(format!("unknown setting {k:?}")),
            }
        }
        // custom dims fix the budget unless it was given explicitly
        if let Some(d) = rc.dims {
            if !merged.contains_key("d_base") {
                rc.d_base = d.real_budget();
            }
        }
        if rc.no_consistency {
            rc.train.lambda1 = 0.0;
        }
        rc.disabled.sort_by_key(|s| s.index());
        rc.disabled.dedup();
        if rc.disabled.len() == 3 {
            return Err("cannot disable all three spaces".into());
        }
        rc.train.validate().map_err(|e| e.to_string())?;
        Ok(rc)
    }

    pub fn space_mask(&self) -> SpaceMask {
        self.disabled.iter().fold(SpaceMask::ALL, |m, &s| m.without(s))
    }

    pub fn model_config(&self, n_entities: usize) -> Result<ModelConfig, String> {
        let policy = self.dims.map_or(AllocationPolicy::Equal, AllocationPolicy::Custom);
        let mut mc = ModelConfig::new(n_entities, self.d_base, policy, self.curvature).map_err(|e| e.to_string())?;
        mc.ball_margin = self.ball_margin;
        mc.spaces = self.space_mask();
        mc.attention_frozen = self.no_attention;
        mc.validate().map_err(|e| e.to_string())?;
        Ok(mc)
    }

    /// Effective settings as `key = value` lines in [`KEYS`] order.
    pub fn render(&self) -> String {
        let t = &self.train;
        let dims = self
            .dims
            .map_or_else(|| "equal".to_string(), |d| format!("{},{},{}", d.hyp, d.cplx, d.euc));
        let no_space: Vec<String> = self.disabled.iter().map(|s| s.letter().to_string()).collect();
        let values = [
            self.d_base.to_string(),
            dims,
            self.curvature.to_string(),
            self.ball_margin.to_string(),
            t.gamma.to_string(),
            t.beta.to_string(),
            t.lambda1.to_string(),
            t.lambda2.to_string(),
            t.lr.to_string(),
            t.batch_size.to_string(),
            t.n_negatives.to_string(),
            t.max_epochs.to_string(),
            t.patience.to_string(),
            t.eval_every.to_string(),
            t.seed.to_string(),
            t.loss_sign.to_string(),
            self.no_attention.to_string(),
            self.no_consistency.to_string(),
            no_space.join(","),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
