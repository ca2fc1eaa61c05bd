use super::bind::{bind_params, Binding};
use super::params::ParamSet;
use super::scalar::Scalar;
use super::tape::{NodeId, Tape};
use crate::{Error, Result};

/// A scalar objective that can be built on a tape of any precision.
///
/// Gradient verification converts the parameters to 64-bit, rebuilds the same
/// graph there, and compares analytic gradients against central finite
/// differences.
pub trait LossFn {
    fn build<F: Scalar>(&self, tape: &mut Tape<F>, binding: &Binding) -> NodeId;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOpts {
    /// Central-difference step.
    pub eps: f64,
    /// Cap on probed elements per tensor; evenly spaced when set.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            eps: 1e-5,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorGradReport {
    pub name: String,
    pub frozen: bool,
    /// Max relative error over probed elements; exactly 0 for frozen tensors.
    pub max_rel_error: f64,
    pub checked_elements: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub tensors: Vec<TensorGradReport>,
}

impl GradReport {
    /// Worst relative error over non-frozen tensors.
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .filter(|t| !t.frozen)
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

fn eval_loss(loss: &impl LossFn, params: &ParamSet<f64>) -> Result<f64> {
    let mut tape: Tape<f64> = Tape::new();
    let binding = bind_params(&mut tape, params);
    let id = loss.build(&mut tape, &binding);
    let v = tape.value(id).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective".to_string()));
    }
    Ok(v)
}

/// Compare analytic gradients of `loss` against 64-bit central finite
/// differences. Frozen tensors are reported with error exactly 0 and are
/// excluded from the maximum.
pub fn grad_check(loss: &impl LossFn, params: &ParamSet<f32>, opts: &GradCheckOpts) -> Result<GradReport> {
    assert!(opts.eps > 0.0, "grad_check eps must be positive");
    let base = params.to_f64();

    // Analytic gradients in 64-bit.
    let mut tape: Tape<f64> = Tape::new();
    let binding = bind_params(&mut tape, &base);
    let loss_id = loss.build(&mut tape, &binding);
    if !tape.value(loss_id).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".to_string()));
    }
    let grads = tape.backward(loss_id);

    let mut tensors = Vec::new();
    for (name, entry) in base.iter() {
        if entry.frozen {
            tensors.push(TensorGradReport {
                name: name.clone(),
                frozen: true,
                max_rel_error: 0.0,
                checked_elements: 0,
            });
            continue;
        }
        let analytic = grads.get(binding.id(name), entry.tensor.shape());
        let n = entry.tensor.len();
        let probes: Vec<usize> = match opts.max_per_tensor {
            Some(cap) if cap < n => {
                let step = n as f64 / cap as f64;
                (0..cap).map(|i| (i as f64 * step) as usize).collect()
            }
            _ => (0..n).collect(),
        };

        let mut max_rel = 0.0f64;
        let mut work = base.clone();
        for &i in &probes {
            let orig = work.get(name).data()[i];
            work.get_mut(name).data_mut()[i] = orig + opts.eps;
            let plus = eval_loss(loss, &work)?;
            work.get_mut(name).data_mut()[i] = orig - opts.eps;
            let minus = eval_loss(loss, &work)?;
            work.get_mut(name).data_mut()[i] = orig;

            let fd = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        tensors.push(TensorGradReport {
            name: name.clone(),
            frozen: false,
            max_rel_error: max_rel,
            checked_elements: probes.len(),
        });
    }
    Ok(GradReport { tensors })
}
