//! Savitzky-Golay smoothing.
//!
//! Each output sample is the value of a least-squares polynomial fitted
//! over a sliding window, so polynomials up to the fit order pass through
//! untouched while uncorrelated noise is attenuated. Edges are handled by
//! shifting the window inward and evaluating the fit at the off-center
//! position, which preserves the exactness property at the boundaries.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Smooth `y` with a centered window of `window` points (odd) and a
/// polynomial of degree `order`. The output has the same length.
pub fn savgol_smooth(y: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || window < 3 {
        return Err(Error::Config(format!("window must be odd and >= 3, got {window}")));
    }
    if order + 2 > window {
        return Err(Error::Config(format!(
            "window {window} too short for polynomial order {order}"
        )));
    }
    if y.len() < window {
        return Err(Error::InsufficientData(format!(
            "need at least {window} samples, got {}",
            y.len()
        )));
    }
    let half = window / 2;
    let n = y.len();

    // Fit once per window start; evaluation position varies only at the
    // edges. Basis is centered and scaled to [-1, 1] for conditioning.
    let design = {
        let mut a = DMatrix::zeros(window, order + 1);
        for r in 0..window {
            let x = (r as f64 - half as f64) / half as f64;
            let mut pow = 1.0;
            for c in 0..=order {
                a[(r, c)] = pow;
                pow *= x;
            }
        }
        a
    };
    let normal = Cholesky::new(design.tr_mul(&design))
        .ok_or_else(|| Error::Config("smoothing basis is singular".into()))?;

    let fit_eval = |start: usize, at: usize| -> f64 {
        let seg = DVector::from_fn(window, |r, _| y[start + r]);
        let coef = normal.solve(&design.tr_mul(&seg));
        let x = (at as f64 - start as f64 - half as f64) / half as f64;
        let mut acc = 0.0;
        let mut pow = 1.0;
        for c in 0..=order {
            acc += coef[c] * pow;
            pow *= x;
        }
        acc
    };

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - window);
        out.push(fit_eval(start, i));
    }
    Ok(out)
}
