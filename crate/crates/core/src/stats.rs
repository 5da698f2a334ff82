//! Summary statistics and the paired two-sided t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// ±∞ when every difference is equal and nonzero.
    pub t: f64,
    pub dof: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

/// Paired two-sided t-test on `a[i] - b[i]`.
///
/// All-zero differences give t = 0 and p = 1. Constant nonzero
/// differences give an infinite t and p = 0.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::config(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::config("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let dof = n - 1;
    let md = mean(&diffs);
    let sd = std_dev(&diffs);
    if sd == 0.0 {
        return Ok(if md == 0.0 {
            TTest { t: 0.0, dof, p_value: 1.0, mean_difference: 0.0 }
        } else {
            TTest { t: f64::INFINITY.copysign(md), dof, p_value: 0.0, mean_difference: md }
        });
    }
    let t = md / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::config(e.to_string()))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, dof, p_value, mean_difference: md })
}
