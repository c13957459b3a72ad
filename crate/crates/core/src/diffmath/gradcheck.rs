use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

// Relative error denominators are floored so coordinates whose true
// derivative is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-3;

/// Compares reverse-mode gradients of `f` against central finite
/// differences, perturbing every coordinate of every array in `inputs`.
///
/// The output of `f` is reduced to a scalar through a random projection
/// drawn from `seed`, so vector-valued operations are covered too.
pub fn grad_check<F>(f: F, inputs: &ParamSet<f64>, eps: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<NodeId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }

    let tape = {
        let mut t = Tape::new(inputs);
        let out = f(&mut t)?;
        (t, out)
    };
    let (tape, out) = tape;
    if tape.value(out).iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("grad_check primal output".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = (0..tape.value(out).len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let analytic = tape.param_gradients(&tape.backward(out, &projection)?);
    drop(tape);

    let project = |params: &ParamSet<f64>| -> Result<f64> {
        let mut t = Tape::new(params);
        let o = f(&mut t)?;
        let v = t.value(o);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("grad_check perturbed output".to_string()));
        }
        Ok(v.iter().zip(&projection).map(|(a, b)| a * b).sum())
    };

    let mut work = inputs.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in inputs.ids() {
        for j in 0..inputs.get(id).len() {
            let orig = inputs.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + eps;
            let plus = project(&work)?;
            work.get_mut(id).data_mut()[j] = orig - eps;
            let minus = project(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((inputs.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
