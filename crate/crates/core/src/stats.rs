//! Small statistics helpers used by the evaluation harness.

/// Spearman rank correlation with average ranks for ties.
///
/// Returns `None` when either side has fewer than two items or zero rank
/// variance (all values tied).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// 1-based ranks; tied values share the mean of the ranks they span.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sample chi-square distance between normalized histograms.
pub fn chi_square_histogram(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ta: f64 = a.iter().map(|&v| v as f64).sum();
    let tb: f64 = b.iter().map(|&v| v as f64).sum();
    if ta == 0.0 || tb == 0.0 {
        return 0.0;
    }
    let mut chi = 0.0;
    for (&ca, &cb) in a.iter().zip(b.iter()) {
        let pa = ca as f64 / ta;
        let pb = cb as f64 / tb;
        let denom = pa + pb;
        if denom > 0.0 {
            chi += (pa - pb) * (pa - pb) / denom;
        }
    }
    chi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_perfect_monotone() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 30.0, 40.0];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        // Hand-computed: ranks of xs = [1.5, 1.5, 3, 4], ys = [1, 2, 3, 4].
        let xs = [5.0, 5.0, 7.0, 9.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        let rho = spearman(&xs, &ys).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-12, "rho {rho}");
    }

    #[test]
    fn spearman_degenerate_inputs() {
        assert!(spearman(&[1.0], &[2.0]).is_none());
        assert!(spearman(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn chi_square_zero_for_identical_and_large_for_disjoint() {
        let a = [10u64, 20, 30];
        assert_eq!(chi_square_histogram(&a, &a), 0.0);
        let b = [0u64, 0, 60];
        let c = [60u64, 0, 0];
        assert!(chi_square_histogram(&b, &c) > 1.0);
    }
}
