//! Small statistical helpers shared by the diagnostics.

use nalgebra::{DMatrix, DVector};

/// Mean and standard error of `values` estimated from `n_blocks` contiguous
/// block means. Returns `(mean, se)`.
pub fn block_mean_se(values: &[f64], n_blocks: usize) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let nb = n_blocks.clamp(2, n.max(2));
    let size = n / nb;
    if size == 0 {
        return (mean, f64::INFINITY);
    }
    let means: Vec<f64> = (0..nb)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
    (mean, (var / nb as f64).sqrt())
}

/// Smooth weight `exp(−1/(t(1−t)))` on `(0, 1)`.
pub fn bump_weight(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

/// Weighted Birkhoff average of `values` with the bump weight.
pub fn weighted_birkhoff(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, v) in values.iter().enumerate() {
        let w = bump_weight((k as f64 + 0.5) / n as f64);
        num += w * v;
        den += w;
    }
    num / den
}

/// Real trigonometric polynomial `a0 + Σ a[k-1] cos kφ + b[k-1] sin kφ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FourierSeries {
    pub fn modes(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let mut v = self.a0;
        for k in 0..self.a.len() {
            let (s, c) = ((k + 1) as f64 * phi).sin_cos();
            v += self.a[k] * c + self.b[k] * s;
        }
        v
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..self.a.len() {
            let kf = (k + 1) as f64;
            let (s, c) = (kf * phi).sin_cos();
            v += kf * (self.b[k] * c - self.a[k] * s);
        }
        v
    }
}

/// Least-squares fit of `values` as a Fourier series in `angles` with
/// `modes` harmonics.
pub fn fourier_fit(angles: &[f64], values: &[f64], modes: usize) -> Option<FourierSeries> {
    let n = angles.len();
    let cols = 2 * modes + 1;
    if n < cols || values.len() != n {
        return None;
    }
    let mut a = DMatrix::zeros(n, cols);
    for (i, phi) in angles.iter().enumerate() {
        a[(i, 0)] = 1.0;
        for k in 0..modes {
            let (s, c) = ((k + 1) as f64 * phi).sin_cos();
            a[(i, 1 + 2 * k)] = c;
            a[(i, 2 + 2 * k)] = s;
        }
    }
    let y = DVector::from_column_slice(values);
    let sol = a.svd(true, true).solve(&y, 1e-13).ok()?;
    Some(FourierSeries {
        a0: sol[0],
        a: (0..modes).map(|k| sol[1 + 2 * k]).collect(),
        b: (0..modes).map(|k| sol[2 + 2 * k]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_fit_recovers_polynomial() {
        let angles: Vec<f64> = (0..200).map(|k| 0.1 + 0.031 * k as f64).collect();
        let f = |p: f64| 0.5 + 0.2 * p.cos() - 0.1 * (3.0 * p).sin();
        let vals: Vec<f64> = angles.iter().map(|p| f(*p)).collect();
        let fit = fourier_fit(&angles, &vals, 4).unwrap();
        for p in &angles {
            assert!((fit.eval(*p) - f(*p)).abs() < 1e-12);
        }
        assert!((fit.derivative(0.7) - (-0.2 * 0.7f64.sin() - 0.3 * 2.1f64.cos())).abs() < 1e-10);
    }

    #[test]
    fn block_se_of_constant_is_zero() {
        let v = vec![2.0; 100];
        let (m, se) = block_mean_se(&v, 10);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn birkhoff_beats_plain_mean_for_quasiperiodic_observable() {
        let rho = (5f64.sqrt() - 1.0) / 2.0;
        let vals: Vec<f64> = (0..2000).map(|k| 1.0 + (std::f64::consts::TAU * rho * k as f64).sin()).collect();
        let plain = vals.iter().sum::<f64>() / vals.len() as f64;
        let weighted = weighted_birkhoff(&vals);
        assert!((weighted - 1.0).abs() < 1e-10);
        assert!((weighted - 1.0).abs() < (plain - 1.0).abs());
    }
}
