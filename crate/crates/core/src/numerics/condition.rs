use crate::error::{Error, Result};

use super::{chol, Matrix};

/// Conditions a dense joint Gaussian `N(mean, cov)` on `x[observed] = values`.
///
/// Returns the mean and covariance of the unobserved coordinates, in
/// increasing index order. This is the dense reference every closed-form
/// posterior in the crate is checked against.
pub fn gaussian_condition(
    mean: &[f64],
    cov: &Matrix,
    observed: &[usize],
    values: &[f64],
) -> Result<(Vec<f64>, Matrix)> {
    let n = mean.len();
    if cov.shape() != (n, n) {
        return Err(Error::dims(format!(
            "gaussian_condition: mean {n}, cov {:?}",
            cov.shape()
        )));
    }
    if observed.len() != values.len() {
        return Err(Error::dims(format!(
            "gaussian_condition: {} indices, {} values",
            observed.len(),
            values.len()
        )));
    }
    let mut is_obs = vec![false; n];
    for &i in observed {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        if is_obs[i] {
            return Err(Error::InvalidArgument(format!("observed index {i} repeated")));
        }
        is_obs[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();

    let mu2: Vec<f64> = free.iter().map(|&i| mean[i]).collect();
    let s22 = Matrix::from_fn(free.len(), free.len(), |a, b| cov[(free[a], free[b])]);
    if observed.is_empty() || free.is_empty() {
        return Ok((mu2, s22));
    }

    let s11 = Matrix::from_fn(observed.len(), observed.len(), |a, b| cov[(observed[a], observed[b])]);
    let s12 = Matrix::from_fn(observed.len(), free.len(), |a, b| cov[(observed[a], free[b])]);
    let resid = Matrix::column(
        &observed
            .iter()
            .zip(values)
            .map(|(&i, &v)| v - mean[i])
            .collect::<Vec<_>>(),
    );
    let f = chol(&s11)?;
    // W = L^-1 S12, so S21 S11^-1 S12 = W^T W.
    let w = f.solve_lower(&s12);
    let z = f.solve_lower(&resid);
    let shift = w.t_matmul(&z);
    let post_mean = mu2.iter().zip(shift.as_slice()).map(|(a, b)| a + b).collect();
    let post_cov = s22.sub(&w.t_matmul(&w));
    Ok((post_mean, post_cov))
}
