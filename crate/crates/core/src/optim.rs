//! Adam with the inverse-square-root warmup schedule of the original transformer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// `peak * min(step / warmup, sqrt(warmup / step))`: linear warmup to `peak`,
    /// then decay proportional to `step^-1/2`.
    InverseSqrt { peak: f64, warmup: u64 },
}

impl LrSchedule {
    pub fn rate(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::InverseSqrt { peak, warmup } => {
                let s = step.max(1) as f64;
                let w = warmup.max(1) as f64;
                peak * (s / w).min((w / s).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            schedule: LrSchedule::InverseSqrt { peak: 1e-3, warmup: 400 },
            clip_norm: Some(1.0),
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        AdamState { step: 0, first: zeros(), second: zeros() }
    }
}

/// One Adam update. `grads[i]` belongs to parameter id `i`; `None` means no gradient.
///
/// Returns the learning rate used. A non-finite gradient aborts before any
/// parameter is touched.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<f64> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment buffers", params.len(), grads.len(), state.first.len()),
        ));
    }
    let mut sq_norm = 0.0f64;
    for (id, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        if g.len() != params.by_id(id).len() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient for '{}' has {} elements, parameter has {}", params.name(id), g.len(), params.by_id(id).len()),
            ));
        }
        for &v in g {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("gradient of '{}' contains {v}", params.name(id))));
            }
            sq_norm += v.as_f64() * v.as_f64();
        }
    }
    let clip = match config.clip_norm {
        Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let lr = config.schedule.rate(state.step);
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(config.beta1), T::from_f64_lossy(config.beta2));
    let (one, eps) = (T::one(), T::from_f64_lossy(config.eps));
    let step_size = T::from_f64_lossy(lr / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let clip = T::from_f64_lossy(clip);

    for (id, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.first[id], &mut state.second[id]);
        let p = params.by_id_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g[i] * clip;
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            p[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(v));
        s
    }

    fn plain(lr: f64) -> AdamConfig {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule: LrSchedule::Constant(lr), clip_norm: None }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store(1.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Some(vec![1.0])], &mut st, &plain(0.1)).unwrap();
        let moved = 1.0 - p.by_id(0).data()[0];
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Some(vec![0.0])], &mut st, &plain(0.1)).unwrap();
        assert_eq!(p.by_id(0).data()[0], 0.7);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = scalar_store(0.7);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Some(vec![f64::NAN])], &mut st, &plain(0.1)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p.by_id(0).data()[0], 0.7);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn quadratic_bowl_descends_after_warmup() {
        // loss = sum(x^2), gradient 2x; simulate directly.
        let mut p = ParamStore::new();
        p.insert("x", Tensor::from_vec(vec![1.5, -2.0, 0.5]));
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            schedule: LrSchedule::InverseSqrt { peak: 0.05, warmup: 3 },
            ..plain(0.0)
        };
        let loss = |p: &ParamStore<f64>| p.by_id(0).data().iter().map(|v| v * v).sum::<f64>();
        let mut losses = vec![loss(&p)];
        for _ in 0..10 {
            let g: Vec<f64> = p.by_id(0).data().iter().map(|v| 2.0 * v).collect();
            adam_step(&mut p, &[Some(g)], &mut st, &cfg).unwrap();
            losses.push(loss(&p));
        }
        for w in losses[3..].windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule::InverseSqrt { peak: 1.0, warmup: 100 };
        assert!((s.rate(50) - 0.5).abs() < 1e-12);
        assert!((s.rate(100) - 1.0).abs() < 1e-12);
        assert!((s.rate(400) - 0.5).abs() < 1e-12);
    }
}
