use super::loss::Touched;
use crate::geometry;
use crate::model::{Family, ParameterStore};

/// First and second moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParameterStore,
    pub v: ParameterStore,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update followed by projection of every hyperbolic
/// row back into the ball.
pub fn adam_step(store: &mut ParameterStore, grads: &ParameterStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    for f in Family::ALL {
        let n = store.family(f).len();
        update_range(store, grads, state, f, 0..n, lr);
    }
    store.project_hyperbolic();
}

/// Lazy variant used by the training loop: only the rows in `touched` have
/// their moments and values updated, and only those hyperbolic rows are
/// re-projected. Bias correction still uses the global step count.
pub(crate) fn adam_step_rows(store: &mut ParameterStore, grads: &ParameterStore, state: &mut AdamState, lr: f64, touched: &Touched) {
    state.step += 1;
    let (c, margin) = (store.config.curvature, store.config.ball_margin);
    for f in Family::ALL {
        let w = store.row_width(f);
        for &r in touched.rows(f) {
            update_range(store, grads, state, f, r * w..(r + 1) * w, lr);
            if matches!(f, Family::EntityHyp | Family::RelHyp) {
                geometry::project_in_place(&mut store.family_mut(f)[r * w..(r + 1) * w], c, margin);
            }
        }
    }
}

fn update_range(store: &mut ParameterStore, grads: &ParameterStore, state: &mut AdamState, f: Family, range: std::ops::Range<usize>, lr: f64) {
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let g = grads.family(f);
    let m = state.m.family_mut(f);
    let v = state.v.family_mut(f);
    let p = store.family_mut(f);
    for i in range {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
