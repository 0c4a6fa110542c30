use proptest::prelude::*;
use scenic_stats::*;

fn brute_chi(counts: &[Vec<u64>]) -> f64 {
    let n: f64 = counts.iter().flatten().map(|&c| c as f64).sum();
    let mut s = 0.0;
    for (i, row) in counts.iter().enumerate() {
        let ri: f64 = row.iter().map(|&c| c as f64).sum();
        for j in 0..row.len() {
            let cj: f64 = counts.iter().map(|r| r[j] as f64).sum();
            let e = ri * cj / n;
            s += (counts[i][j] as f64 - e).powi(2) / e;
        }
    }
    s
}

proptest! {
    #[test]
    fn chi_square_matches_brute_force(
        rows in 2usize..5, cols in 2usize..5,
        cells in proptest::collection::vec(1u64..60, 16)
    ) {
        let counts: Vec<Vec<u64>> = (0..rows).map(|i| (0..cols).map(|j| cells[i * 4 + j]).collect()).collect();
        let t = ContingencyTable::from_counts(counts.clone()).unwrap();
        let r = chi_square(&t).unwrap();
        prop_assert!((r.statistic - brute_chi(&counts)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.p));
    }

    #[test]
    fn u_statistics_sum_to_nm(
        a in proptest::collection::vec(0i32..10, 1..25),
        b in proptest::collection::vec(0i32..10, 1..25)
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((ab.statistic + ba.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((ab.p - ba.p).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p));
    }

    #[test]
    fn describe_matches_two_pass(xs in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
        let d = describe(&xs).unwrap();
        let n = xs.len() as f64;
        let mut mean = 0.0;
        for x in &xs { mean += x; }
        mean /= n;
        let mut ss = 0.0;
        for x in &xs { ss += (x - mean) * (x - mean); }
        prop_assert!((d.mean - mean).abs() < 1e-12 * (1.0 + mean.abs()));
        prop_assert!((d.sd - (ss / (n - 1.0)).sqrt()).abs() < 1e-9);
    }
}
