//! Significance tests on per-seed accuracies.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample variance (n − 1); zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

fn two_tailed(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution with {df} dof: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Two-tailed Welch t-test of `a` against `b`. With zero variance on both
/// sides the answer is 1 for equal means and 0 otherwise.
pub fn significance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "significance needs at least 2 values per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let se2 = qa + qb;
    let diff = mean(a) - mean(b);
    if se2 == 0.0 {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    two_tailed(diff / se2.sqrt(), df)
}

/// Two-tailed one-sample t-test of the mean of `xs` against `mu`.
pub fn one_sample(xs: &[f64], mu: f64) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "one-sample test needs at least 2 values, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let se = (variance(xs) / n).sqrt();
    let diff = mean(xs) - mu;
    if se == 0.0 {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    two_tailed(diff / se, n - 1.0)
}
