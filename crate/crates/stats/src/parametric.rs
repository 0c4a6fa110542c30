use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{check_finite, StatResult, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
}

pub fn describe(sample: &[f64]) -> Result<Descriptive, StatsError> {
    check_finite(sample)?;
    let n = sample.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let mean = sample.iter().sum::<f64>() / n as f64;
    let ss: f64 = sample.iter().map(|x| (x - mean).powi(2)).sum();
    Ok(Descriptive {
        n,
        mean,
        sd: (ss / (n - 1) as f64).sqrt(),
    })
}

/// Paired t-test on `pre - post` differences, two-sided, df = n - 1.
/// Constant non-zero differences give an infinite t with p = 0 and a note.
pub fn paired_t(pre: &[f64], post: &[f64]) -> Result<StatResult, StatsError> {
    if pre.len() != post.len() {
        return Err(StatsError::LengthMismatch(pre.len(), post.len()));
    }
    let diffs: Vec<f64> = pre.iter().zip(post).map(|(a, b)| a - b).collect();
    let d = describe(&diffs)?;
    let df = (d.n - 1) as f64;
    if d.sd == 0.0 {
        let (t, p, note) = if d.mean == 0.0 {
            (0.0, 1.0, "all differences are zero")
        } else {
            (
                f64::INFINITY.copysign(d.mean),
                0.0,
                "differences have zero variance; t is unbounded",
            )
        };
        let mut r = StatResult::new("paired t", t, Some(df), p, d.n);
        r.note = Some(note.to_string());
        return Ok(r);
    }
    let t = d.mean / (d.sd / (d.n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = 2.0 * dist.sf(t.abs());
    Ok(StatResult::new("paired t", t, Some(df), p, d.n))
}

/// One-sample effect size against a fixed benchmark: (M - benchmark) / SD.
pub fn cohens_d(sample: &[f64], benchmark: f64) -> Result<StatResult, StatsError> {
    let d = describe(sample)?;
    let mut r = cohens_d_from_summary(d.mean, d.sd, benchmark)?;
    r.n = d.n;
    Ok(r)
}

/// The same arithmetic from a reported mean and SD.
pub fn cohens_d_from_summary(mean: f64, sd: f64, benchmark: f64) -> Result<StatResult, StatsError> {
    check_finite(&[mean, sd, benchmark])?;
    if sd == 0.0 {
        return Err(StatsError::ZeroSpread);
    }
    let mut r = StatResult::new("cohen's d", (mean - benchmark) / sd, None, f64::NAN, 0);
    r.p = f64::NAN;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn describe_basics() {
        assert_eq!(describe(&[3.0, 3.0, 3.0]).unwrap().sd, 0.0);
        assert_eq!(describe(&[1.0]), Err(StatsError::TooFew(1)));
        assert_eq!(describe(&[1.0, f64::NAN]), Err(StatsError::NonFinite));
    }

    #[test]
    fn paired_degenerate_cases() {
        let r = paired_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        let r = paired_t(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.statistic.is_infinite() && r.statistic > 0.0);
        assert!(r.note.is_some());
        assert_eq!(paired_t(&[1.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn effect_size_edges() {
        assert_eq!(cohens_d(&[2.0, 4.0], 3.0).unwrap().statistic, 0.0);
        let d = describe(&[2.0, 4.0, 6.0]).unwrap();
        assert!((cohens_d(&[2.0, 4.0, 6.0], d.mean - d.sd).unwrap().statistic - 1.0).abs() < 1e-12);
        assert_eq!(cohens_d(&[2.0, 2.0], 1.0), Err(StatsError::ZeroSpread));
    }
}
