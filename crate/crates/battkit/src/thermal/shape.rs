//! Shape-based distance between equal-length series.
//!
//! Two windows have the same shape when one is a scaled, offset, and
//! time-shifted copy of the other. Each series is centered and scaled to
//! unit energy, then the distance is one minus the best cross-correlation
//! over all alignments, giving a value in [0, 2]: 0 for identical shapes,
//! 1 for uncorrelated, 2 for mirror images.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Center to zero mean and scale to unit L2 norm.
///
/// Returns the normalized series and whether it was static. A static
/// (constant) series has no shape; it normalizes to all zeros so that any
/// correlation against it is zero, and the flag lets callers refuse it.
pub fn znormalize(x: &[f64]) -> (Vec<f64>, bool) {
    let n = x.len();
    if n == 0 {
        return (Vec::new(), true);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut out: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 || !norm.is_finite() {
        out.iter_mut().for_each(|v| *v = 0.0);
        return (out, true);
    }
    out.iter_mut().for_each(|v| *v /= norm);
    (out, false)
}

/// Cross-correlations of two unit-normalized series at every shift,
/// computed in one FFT round trip. `cc[0]` is the zero-shift value and
/// `cc[m - j]` the value with `y` advanced by `j` samples.
pub(crate) fn correlations(xn: &[f64], yn: &[f64]) -> Vec<f64> {
    let n = xn.len();
    let m = (2 * n - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);

    let mut fx: Vec<Complex<f64>> = xn
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut fy: Vec<Complex<f64>> = yn
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    fft.process(&mut fx);
    fft.process(&mut fy);
    for (a, b) in fx.iter_mut().zip(&fy) {
        *a *= b.conj();
    }
    ifft.process(&mut fx);
    fx.iter().map(|c| c.re / m as f64).collect()
}

/// Best cross-correlation between the normalized shapes of `x` and `y`,
/// and the shift (in samples, applied to `y`) achieving it.
///
/// Shifts are tried in the order 0, -1, +1, -2, +2, ... and a later shift
/// replaces the incumbent only when strictly better, so the smallest
/// alignment wins ties deterministically. Errors if either shape is
/// static or the lengths differ.
pub fn best_correlation(x: &[f64], y: &[f64]) -> Result<(f64, i64)> {
    if x.len() != y.len() {
        return Err(Error::Schema(format!(
            "shape lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two samples to compare shapes".into(),
        ));
    }
    let (xn, x_static) = znormalize(x);
    let (yn, y_static) = znormalize(y);
    if x_static || y_static {
        return Err(Error::Domain(
            "constant series has no shape to compare".into(),
        ));
    }
    let cc = correlations(&xn, &yn);
    let n = x.len();
    let m = cc.len();

    let mut best = cc[0];
    let mut best_shift = 0i64;
    for j in 1..n as i64 {
        // Negative shift (y advanced) first, then positive (y delayed).
        let adv = cc[m - j as usize];
        if adv > best {
            best = adv;
            best_shift = -j;
        }
        let del = cc[j as usize];
        if del > best {
            best = del;
            best_shift = j;
        }
    }
    Ok((best.clamp(-1.0, 1.0), best_shift))
}

/// Shape-based distance: `1 - best_correlation`, clamped to [0, 2].
pub fn sbd(x: &[f64], y: &[f64]) -> Result<f64> {
    let (cc, _) = best_correlation(x, y)?;
    Ok((1.0 - cc).clamp(0.0, 2.0))
}

/// Shift `y` to its best alignment against `reference`, zero-filling the
/// vacated samples, and return the aligned normalized copy.
pub fn align_to(reference: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let (_, shift) = best_correlation(reference, y)?;
    let (yn, _) = znormalize(y);
    let n = yn.len() as i64;
    let mut out = vec![0.0; yn.len()];
    for i in 0..n {
        let src = i - shift;
        if src >= 0 && src < n {
            out[i as usize] = yn[src as usize];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadratic-time cross-correlation over all shifts; the
    /// definition the FFT path must reproduce.
    fn oracle_best(x: &[f64], y: &[f64]) -> (f64, i64) {
        let (xn, _) = znormalize(x);
        let (yn, _) = znormalize(y);
        let n = xn.len() as i64;
        let mut best = f64::NEG_INFINITY;
        let mut best_shift = 0i64;
        let mut order: Vec<i64> = vec![0];
        for j in 1..n {
            order.push(-j);
            order.push(j);
        }
        for &w in &order {
            let mut s = 0.0;
            for t in 0..n {
                let u = t - w;
                if u >= 0 && u < n {
                    s += xn[t as usize] * yn[u as usize];
                }
            }
            if s > best {
                best = s;
                best_shift = w;
            }
        }
        (best, best_shift)
    }

    #[test]
    fn matches_direct_computation_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..300 {
            let n = rng.random_range(2..40);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (cc, shift) = best_correlation(&x, &y).unwrap();
            let (occ, oshift) = oracle_best(&x, &y);
            assert!((cc - occ).abs() < 1e-9, "trial {trial}: {cc} vs {occ}");
            assert_eq!(shift, oshift, "trial {trial} shift");
        }
    }

    #[test]
    fn identical_shape_has_zero_distance() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        // Offset and scale must not matter.
        let y: Vec<f64> = x.iter().map(|v| 7.0 + 3.5 * v).collect();
        assert!(sbd(&x, &y).unwrap() < 1e-12);
    }

    #[test]
    fn shifted_copy_recovers_the_shift() {
        let n = 64;
        let base: Vec<f64> = (0..n + 10)
            .map(|i| (i as f64 * 0.17).sin() + 0.3 * (i as f64 * 0.71).cos())
            .collect();
        let x: Vec<f64> = base[5..5 + n].to_vec();
        let y: Vec<f64> = base[..n].to_vec();
        let (cc, shift) = best_correlation(&x, &y).unwrap();
        // Every feature shows up in y five samples after x, so advancing
        // y by five lines them up.
        assert_eq!(shift, -5);
        assert!(cc > 0.9, "overlap correlation {cc}");
    }

    #[test]
    fn mirrored_bump_is_far() {
        // Negation cannot be undone by offset or scale, only partially by
        // shifting, so the mirror of an aperiodic shape stays distant
        // while a scaled copy sits at zero.
        let x: Vec<f64> = (0..48)
            .map(|i| (-0.5 * ((i as f64 - 20.0) / 2.0).powi(2)).exp())
            .collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        let d = sbd(&x, &y).unwrap();
        assert!(d > 0.5, "distance {d}");
        assert!(d <= 2.0);
    }

    #[test]
    fn static_series_is_refused() {
        let x = vec![3.0; 20];
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(sbd(&x, &y), Err(Error::Domain(_))));
        assert!(matches!(sbd(&y, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn alignment_moves_peak_onto_reference() {
        let n = 48;
        let peak_at = |c: usize| -> Vec<f64> {
            (0..n)
                .map(|i| (-0.5 * ((i as f64 - c as f64) / 2.0).powi(2)).exp())
                .collect()
        };
        let reference = peak_at(20);
        let late = peak_at(28);
        let aligned = align_to(&reference, &late).unwrap();
        let argmax = aligned
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 20);
    }

    #[test]
    fn distance_is_symmetric_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(4..30);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dxy = sbd(&x, &y).unwrap();
            let dyx = sbd(&y, &x).unwrap();
            assert!((0.0..=2.0).contains(&dxy));
            // Correlation candidates are mirrored between the two orders,
            // so the best value is shared even though shifts negate.
            assert!((dxy - dyx).abs() < 1e-9);
            assert!(sbd(&x, &x).unwrap() < 1e-9);
        }
    }
}
