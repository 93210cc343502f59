//! Finite-difference gradient verification.
//!
//! The checker never looks at a model's backward pass: it perturbs one
//! scalar parameter at a time and recomputes the loss through the forward
//! path only, so it is an independent oracle for the hand-written gradients.

use super::{with_param, Parameterized};

/// One verified parameter coordinate.
#[derive(Debug, Clone)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl Probe {
    /// True when analytic and numeric agree to `rtol`, with differences
    /// below `atol` treated as central-difference noise. Noise scales as
    /// machine epsilon times loss magnitude over the step, so for O(100)
    /// losses at step 1e-5 anything under ~1e-8 is unresolvable.
    pub fn agrees(&self, rtol: f64, atol: f64) -> bool {
        let d = (self.analytic - self.numeric).abs();
        d <= atol || d <= rtol * self.analytic.abs().max(self.numeric.abs())
    }
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check analytic gradients (already accumulated in the model's grad
/// buffers) against central differences of `loss` at the given parameter
/// coordinates. `loss` must be a pure function of the model's parameters.
pub fn check_probes<M: Parameterized>(
    model: &mut M,
    mut loss: impl FnMut(&mut M) -> f64,
    probes: &[(String, usize)],
    step: f64,
) -> Vec<Probe> {
    let mut out = Vec::with_capacity(probes.len());
    for (name, index) in probes {
        let analytic =
            with_param(model, name, |_, g| g[*index]).expect("probe names a visited parameter");
        let orig = with_param(model, name, |v, _| {
            let o = v[*index];
            v[*index] = o + step;
            o
        })
        .unwrap();
        let f_plus = loss(model);
        with_param(model, name, |v, _| v[*index] = orig - step);
        let f_minus = loss(model);
        with_param(model, name, |v, _| v[*index] = orig);
        let numeric = (f_plus - f_minus) / (2.0 * step);
        out.push(Probe {
            name: name.clone(),
            index: *index,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric),
        });
    }
    out
}
