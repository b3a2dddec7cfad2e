use crate::error::{Error, Result};

use super::{Graph, ParamStore, Var};

/// Compares reverse-mode gradients against central differences.
///
/// `loss_fn` builds a scalar loss on a fresh graph. Returns the maximum over
/// all parameter coordinates of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(loss_fn: F, params: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, p)?;
        let v = g.value(loss);
        if v.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let ad = g.backward(loss, params)?.flatten();

    let base = params.flatten();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (i, &g_ad) in ad.iter().enumerate() {
        let mut plus = base.clone();
        plus[i] += step;
        probe.unflatten(&plus)?;
        let fp = eval(&probe)?;
        let mut minus = base.clone();
        minus[i] -= step;
        probe.unflatten(&minus)?;
        let fm = eval(&probe)?;
        let g_fd = (fp - fm) / (2.0 * step);
        worst = worst.max((g_ad - g_fd).abs() / g_fd.abs().max(1.0));
    }
    Ok(worst)
}
