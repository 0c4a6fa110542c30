use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use crate::{check_finite, StatResult, StatsError};

/// Above this n*m the Mann-Whitney p-value uses the normal approximation.
pub const EXACT_LIMIT: usize = 400;

/// Ranks starting at 1, ties share their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    Data::new(values.to_vec()).ranks(RankTieBreaker::Average)
}

/// Mann-Whitney U for `a`, i.e. R_a - n_a(n_a + 1)/2, so that
/// U(a, b) + U(b, a) = n_a * n_b. Two-sided p: exact permutation
/// distribution of the mid-rank sum when n_a * n_b <= EXACT_LIMIT,
/// otherwise the tie-corrected normal approximation.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    if a.is_empty() {
        return Err(StatsError::EmptySample("a"));
    }
    if b.is_empty() {
        return Err(StatsError::EmptySample("b"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..n].iter().sum();
    let u = ra - (n * (n + 1)) as f64 / 2.0;
    let (p, method) = if n * m <= EXACT_LIMIT {
        (exact_p(&ranks, n, u), "mann-whitney u (exact)")
    } else {
        (normal_p(&pooled, n, m, u), "mann-whitney u (normal approx.)")
    };
    Ok(StatResult::new(method, u, None, p, n + m))
}

/// Two-sided permutation p-value of U given the pooled mid-ranks. Mid-ranks
/// are multiples of 1/2, so doubled ranks are integers and the subset-sum
/// counts fit a dynamic program.
fn exact_p(ranks: &[f64], n: usize, u_obs: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s.
    let mut ways = vec![vec![0.0_f64; max_sum + 1]; n + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let total: f64 = ways[n].iter().sum();
    let m = ranks.len() - n;
    let mean_u = (n * m) as f64 / 2.0;
    let offset = (n * (n + 1)) as f64 / 2.0;
    let dev_obs = (u_obs - mean_u).abs();
    let extreme: f64 = ways[n]
        .iter()
        .enumerate()
        .filter(|(s, &w)| w > 0.0 && ((*s as f64 / 2.0 - offset) - mean_u).abs() >= dev_obs - 1e-9)
        .map(|(_, w)| w)
        .sum();
    extreme / total
}

fn tie_term(pooled: &[f64]) -> f64 {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}

fn normal_p(pooled: &[f64], n: usize, m: usize, u: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term(pooled) / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = (u - nf * mf / 2.0) / var.sqrt();
    2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z.abs())
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k - 1 df.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<StatResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew(groups.len()));
    }
    for g in groups {
        if g.is_empty() {
            return Err(StatsError::EmptySample("group"));
        }
        check_finite(g)?;
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let ranks = midranks(&pooled);
    let n = pooled.len() as f64;
    let mut h = 0.0;
    let mut start = 0;
    for g in groups {
        let r: f64 = ranks[start..start + g.len()].iter().sum();
        h += r * r / g.len() as f64;
        start += g.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let c = 1.0 - tie_term(&pooled) / (n * n * n - n);
    if c > 0.0 {
        h /= c;
    }
    let df = (groups.len() - 1) as f64;
    let p = ChiSquared::new(df).expect("df >= 1").sf(h);
    Ok(StatResult::new("kruskal-wallis h", h, Some(df), p, pooled.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_half() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_samples_hit_bounds() {
        let lo = [1.0, 2.0, 3.0];
        let hi = [7.0, 8.0, 9.0, 10.0];
        assert_eq!(mann_whitney_u(&lo, &hi).unwrap().statistic, 0.0);
        assert_eq!(mann_whitney_u(&hi, &lo).unwrap().statistic, 12.0);
        // 2 of C(7,3) = 35 arrangements are this extreme.
        assert!((mann_whitney_u(&lo, &hi).unwrap().p - 2.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_rejected() {
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(StatsError::EmptySample("a")));
    }

    #[test]
    fn large_samples_use_normal() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (10..40).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!(r.method.contains("normal"));
        assert!(r.p < 0.05);
    }

    #[test]
    fn kruskal_two_groups() {
        let r = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert!((r.statistic - 3.857142857142857).abs() < 1e-12);
        assert_eq!(r.df, Some(1.0));
    }
}
