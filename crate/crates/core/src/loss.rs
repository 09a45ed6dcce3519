//! The prior-based uncertainty-aware loss and the plain L2 baseline.
//!
//! Both are summed over (frame, joint) cells of a single sample; callers
//! average over the batch.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `sum exp(-u) * ||y - y_hat||`.
    pub weighted_error_term: f64,
    /// `sum u`.
    pub regularizer_term: f64,
    /// `||y - y_hat||` per `(T, J)` cell, millimeters.
    pub per_cell_error: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub d_y_hat: Array3<f64>,
    pub d_u: Array2<f64>,
}

fn check_pair(y: &ArrayView3<'_, f64>, y_hat: &ArrayView3<'_, f64>) -> Result<()> {
    if y.dim() != y_hat.dim() {
        return Err(Error::shape("loss prediction", y.shape(), y_hat.shape()));
    }
    if y.dim().2 != 3 {
        return Err(Error::shape(
            "loss coordinates",
            &[y.dim().0, y.dim().1, 3],
            y.shape(),
        ));
    }
    if y.iter().chain(y_hat.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("loss input"));
    }
    Ok(())
}

fn cell_errors(y: &ArrayView3<'_, f64>, y_hat: &ArrayView3<'_, f64>) -> Array2<f64> {
    let (t, j, _) = y.dim();
    Array2::from_shape_fn((t, j), |(tt, jj)| {
        (0..3)
            .map(|a| {
                let d = y[[tt, jj, a]] - y_hat[[tt, jj, a]];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    })
}

/// `sum_{t,j} exp(-u) * ||y - y_hat||_2 + u`.
pub fn pual_loss(
    y: ArrayView3<'_, f64>,
    y_hat: ArrayView3<'_, f64>,
    u: ArrayView2<'_, f64>,
) -> Result<LossBreakdown> {
    check_pair(&y, &y_hat)?;
    let (t, j, _) = y.dim();
    if u.dim() != (t, j) {
        return Err(Error::shape("loss uncertainty", &[t, j], u.shape()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss uncertainty"));
    }
    let per_cell_error = cell_errors(&y, &y_hat);
    let mut weighted = 0.0;
    Zip::from(&per_cell_error)
        .and(&u)
        .for_each(|&e, &uu| weighted += (-uu).exp() * e);
    let regularizer = u.sum();
    Ok(LossBreakdown {
        total: weighted + regularizer,
        weighted_error_term: weighted,
        regularizer_term: regularizer,
        per_cell_error,
    })
}

/// [`pual_loss`] together with its gradient in `y_hat` and `u`.
///
/// The norm's gradient at a zero-error cell is taken to be zero.
pub fn pual_loss_with_grad(
    y: ArrayView3<'_, f64>,
    y_hat: ArrayView3<'_, f64>,
    u: ArrayView2<'_, f64>,
) -> Result<(LossBreakdown, LossGradient)> {
    let loss = pual_loss(y, y_hat, u)?;
    let (t, j, _) = y.dim();
    let mut d_y_hat = Array3::zeros((t, j, 3));
    let mut d_u = Array2::zeros((t, j));
    for tt in 0..t {
        for jj in 0..j {
            let e = loss.per_cell_error[[tt, jj]];
            let w = (-u[[tt, jj]]).exp();
            d_u[[tt, jj]] = 1.0 - w * e;
            if e > 0.0 {
                for a in 0..3 {
                    d_y_hat[[tt, jj, a]] = w * (y_hat[[tt, jj, a]] - y[[tt, jj, a]]) / e;
                }
            }
        }
    }
    Ok((loss, LossGradient { d_y_hat, d_u }))
}

/// `sum_{t,j} ||y - y_hat||_2`.
pub fn plain_l2_loss(y: ArrayView3<'_, f64>, y_hat: ArrayView3<'_, f64>) -> Result<f64> {
    check_pair(&y, &y_hat)?;
    Ok(cell_errors(&y, &y_hat).sum())
}

/// [`plain_l2_loss`] and its gradient in `y_hat`.
pub fn plain_l2_loss_with_grad(
    y: ArrayView3<'_, f64>,
    y_hat: ArrayView3<'_, f64>,
) -> Result<(f64, Array3<f64>)> {
    let (t, j, _) = y.dim();
    let (loss, grad) = pual_loss_with_grad(y, y_hat, Array2::zeros((t, j)).view())?;
    Ok((loss.total, grad.d_y_hat))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_dev_y_hat: f64,
    pub max_rel_dev_u: f64,
    pub cells_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_dev(&self) -> f64 {
        self.max_rel_dev_y_hat.max(self.max_rel_dev_u)
    }
}

/// Relative deviation with an absolute floor so that near-zero gradients
/// compare absolutely.
pub fn relative_deviation(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares [`pual_loss_with_grad`] against central finite differences
/// (step `1e-5`) on a random `(T, J, 3)` instance.
///
/// The loss is a sum of independent per-cell terms, so each probe
/// differences only the perturbed cell's term. Differencing the full sum
/// would bury small gradients under its rounding error.
pub fn loss_gradient_check(seed: u64, horizon: usize, joints: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Array3::from_shape_fn((horizon, joints, 3), |_| rng.random_range(-50.0..50.0));
    let y_hat = Array3::from_shape_fn((horizon, joints, 3), |_| rng.random_range(-50.0..50.0));
    let u = Array2::from_shape_fn((horizon, joints), |_| rng.random_range(-1.0..3.0));
    let (_, grad) = pual_loss_with_grad(y.view(), y_hat.view(), u.view())?;
    let h = 1e-5;
    let cell = |tt: usize, jj: usize, yh: [f64; 3], uu: f64| -> Result<f64> {
        let yc = y.slice(ndarray::s![tt..tt + 1, jj..jj + 1, ..]);
        let yh = Array3::from_shape_vec((1, 1, 3), yh.to_vec()).expect("three coordinates");
        Ok(pual_loss(yc, yh.view(), Array2::from_elem((1, 1), uu).view())?.total)
    };

    let mut dev_y: f64 = 0.0;
    let mut dev_u: f64 = 0.0;
    for tt in 0..horizon {
        for jj in 0..joints {
            let base = [y_hat[[tt, jj, 0]], y_hat[[tt, jj, 1]], y_hat[[tt, jj, 2]]];
            let uu = u[[tt, jj]];
            for a in 0..3 {
                let (mut plus, mut minus) = (base, base);
                plus[a] += h;
                minus[a] -= h;
                let numeric = (cell(tt, jj, plus, uu)? - cell(tt, jj, minus, uu)?) / (2.0 * h);
                dev_y = dev_y.max(relative_deviation(grad.d_y_hat[[tt, jj, a]], numeric));
            }
            let numeric = (cell(tt, jj, base, uu + h)? - cell(tt, jj, base, uu - h)?) / (2.0 * h);
            dev_u = dev_u.max(relative_deviation(grad.d_u[[tt, jj]], numeric));
        }
    }
    Ok(GradCheckReport {
        max_rel_dev_y_hat: dev_y,
        max_rel_dev_u: dev_u,
        cells_checked: y_hat.len() + u.len(),
    })
}
