//! Ordinary least-squares line fits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    /// Standard error of the slope; absent with fewer than three points.
    pub slope_stderr: Option<f64>,
}

/// Fits `y = slope * x + intercept`. Needs at least two distinct abscissae.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = (n > 2).then(|| (sse / (nf - 2.0) / sxx).sqrt());
    Some(LinearFit { slope, intercept, residual: (sse / nf).sqrt(), slope_stderr })
}

/// Least squares on `(ln x, ln y)`; all inputs must be positive.
pub fn loglog(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    least_squares(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let x = [0.2, 0.1, 0.05];
        let f = loglog(&x, &x).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!((loglog(&x, &y).unwrap().slope - 2.0).abs() < 1e-12);
        assert!(loglog(&x, &[1.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn stderr_of_noisy_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.1, 0.9, 2.1, 2.9];
        let f = least_squares(&x, &y).unwrap();
        assert!((f.slope - 0.96).abs() < 1e-12);
        let se = f.slope_stderr.unwrap();
        assert!(se > 0.0 && se < 0.1);
        assert!(least_squares(&x[..2], &y[..2]).unwrap().slope_stderr.is_none());
    }
}
