//! Small regression and summary helpers.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub intercept_std_error: f64,
    pub samples: usize,
}

impl LinearFit {
    /// Two-sided confidence half-width on the slope; infinite with two points.
    pub fn slope_half_width(&self, confidence: f64) -> f64 {
        self.student_quantile(confidence) * self.slope_std_error
    }

    pub fn intercept_half_width(&self, confidence: f64) -> f64 {
        self.student_quantile(confidence) * self.intercept_std_error
    }

    fn student_quantile(&self, confidence: f64) -> f64 {
        if self.samples <= 2 {
            return f64::INFINITY;
        }
        let t = StudentsT::new(0.0, 1.0, (self.samples - 2) as f64).expect("positive dof");
        t.inverse_cdf(0.5 + confidence / 2.0)
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a line needs at least 2 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("all abscissae are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_std_error, intercept_std_error) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let sigma2 = rss / (nf - 2.0);
        let se_b = (sigma2 / sxx).sqrt();
        let se_a = (sigma2 * (1.0 / nf + mx * mx / sxx)).sqrt();
        (se_b, se_a)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_error,
        intercept_std_error,
        samples: n,
    })
}

/// Least-squares slope of `ln|y|` against `ln x`, dropping zero `y`.
/// Returns the fit and the number of dropped points.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<(LinearFit, usize)> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut dropped = 0;
    for (&a, &b) in x.iter().zip(y) {
        if b == 0.0 || !b.is_finite() || a <= 0.0 {
            dropped += 1;
        } else {
            lx.push(a.ln());
            ly.push(b.abs().ln());
        }
    }
    Ok((linear_fit(&lx, &ly)?, dropped))
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
