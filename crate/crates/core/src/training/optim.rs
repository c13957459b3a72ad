use serde::{Deserialize, Serialize};

use crate::diffmath::{Gradients, ParamSet, Real};
use crate::error::{Error, Result};

/// Adam moment decay rates and denominator guard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and the step counter; the learning rate is set by
/// the schedule before each step.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step: u64,
    pub lr: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        OptimizerState {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            lr,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
    hyper: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - hyper.beta1), T::lit(1.0 - hyper.beta2));
    let step_size = T::lit(state.lr / c1);
    let inv_c2 = T::lit(1.0 / c2);
    let eps = T::lit(hyper.eps);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let g = grads.get(id).data();
        if g.len() != params.get(id).len() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient size mismatch for `{}`", params.name(id)),
            ));
        }
        let m = state.m.get_mut(id).data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + one_b1 * gi;
        }
        let v = state.v.get_mut(id).data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + one_b2 * gi * gi;
        }
        let m = state.m.get(id).data();
        let v = state.v.get(id).data();
        let p = params.get_mut(id).data_mut();
        for ((pi, &mi), &vi) in p.iter_mut().zip(m).zip(v) {
            *pi = *pi - step_size * mi / ((vi * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_gradients<T: Real>(
    grads: &mut Gradients<T>,
    params: &ParamSet<T>,
    max_norm: f64,
) -> Result<f64> {
    if let Some((id, _)) = grads.iter().find(|(_, a)| !a.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of `{}`",
            params.name(id)
        )));
    }
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(T::lit(max_norm / norm));
    }
    Ok(norm)
}

/// Exponential per-epoch decay of the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl LrSchedule {
    /// Learning rate during `epoch` (0-based).
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi(epoch as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Array;

    fn setup(values: Vec<f64>) -> (ParamSet<f64>, Gradients<f64>) {
        let mut p = ParamSet::new();
        p.add("a", Array::vector(vec![0.5; values.len()])).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.get_mut(p.id("a").unwrap())
            .data_mut()
            .copy_from_slice(&values);
        (p, g)
    }

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let (mut p, g) = setup(vec![0.0; 3]);
        let mut s = OptimizerState::new(&p, 3e-4);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get(p.id("a").unwrap()).data(), &[0.5; 3]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let gv = vec![0.3, -2.0, 1e-3];
        let (mut p, g) = setup(gv.clone());
        let lr = 3e-4;
        let mut s = OptimizerState::new(&p, lr);
        let hyper = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, &hyper).unwrap();
        for (x, gi) in p.get(p.id("a").unwrap()).data().iter().zip(gv) {
            let expected = 0.5 - lr * gi / (gi.abs() + hyper.eps);
            assert!((x - expected).abs() < 1e-12, "{x} {expected}");
        }
    }

    #[test]
    fn clipping_cases() {
        let (p, mut g) = setup(vec![3.0, 4.0]);
        assert_eq!(clip_gradients(&mut g, &p, 10.0).unwrap(), 5.0);
        assert_eq!(g.flatten(), vec![3.0, 4.0]);

        let (p, mut g) = setup(vec![12.0, 16.0]);
        assert_eq!(clip_gradients(&mut g, &p, 10.0).unwrap(), 20.0);
        assert_eq!(g.flatten(), vec![6.0, 8.0]);
        assert!((g.global_norm() - 10.0).abs() < 1e-12);
        let once = g.clone();
        clip_gradients(&mut g, &p, 10.0).unwrap();
        assert_eq!(g, once);

        let (p, mut g) = setup(vec![0.0, 0.0]);
        clip_gradients(&mut g, &p, 10.0).unwrap();
        assert_eq!(g.flatten(), vec![0.0, 0.0]);

        let (p, mut g) = setup(vec![1.0, f64::NAN]);
        let err = clip_gradients(&mut g, &p, 10.0).unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
    }

    #[test]
    fn halving_schedule() {
        let s = LrSchedule {
            initial: 3e-4,
            decay: 0.5,
        };
        assert_eq!(s.at_epoch(0), 3e-4);
        assert_eq!(s.at_epoch(3), 3e-4 / 8.0);
    }
}
