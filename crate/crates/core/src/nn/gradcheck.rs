use rand::seq::index::sample;

use super::{ParamId, ParamStore};
use crate::rng;

/// Denominator floor: coordinates whose numeric gradient is below this are
/// compared in absolute terms scaled by the floor.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst error over all checked coordinates.
    pub max_rel_error: f64,
    /// Worst error per parameter name, in store order.
    pub per_param: Vec<(String, f64)>,
    pub coordinates_checked: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must compute the loss and overwrite every gradient buffer
/// of the store. The error of one coordinate is
/// `|analytic - numeric| / max(|numeric|, 1e-4)`. With `max_coords` set,
/// each parameter is checked on a seeded sample of that many coordinates.
pub fn grad_check<F>(
    params: &mut ParamStore,
    mut loss_and_grad: F,
    eps: f64,
    max_coords: Option<usize>,
) -> GradCheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
{
    params.zero_grads();
    loss_and_grad(params);
    let analytic: Vec<Vec<f64>> = params.ids().map(|id| params.grad(id).data().to_vec()).collect();

    let mut per_param = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let n = params.value(id).data().len();
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < n => {
                let mut r = rng::substream(0, &["gradcheck", params.name(id)]);
                let mut s = sample(&mut r, n, m).into_vec();
                s.sort_unstable();
                s
            }
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for i in coords {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + eps;
            let lp = loss_and_grad(params);
            params.value_mut(id).data_mut()[i] = orig - eps;
            let lm = loss_and_grad(params);
            params.value_mut(id).data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = analytic[id.0][i];
            let err = (a - numeric).abs() / numeric.abs().max(REL_FLOOR);
            worst = worst.max(err);
            checked += 1;
        }
        max_err = max_err.max(worst);
        per_param.push((params.name(id).to_string(), worst));
    }
    // leave the analytic gradients in place for the caller
    loss_and_grad(params);
    GradCheckReport {
        max_rel_error: max_err,
        per_param,
        coordinates_checked: checked,
    }
}
