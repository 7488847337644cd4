//! Small numeric helpers: compensated summation, Pearson and Spearman.

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Pearson correlation by the two-pass centered formula. `None` for fewer
/// than two points or mismatched lengths; `Some(0.0)` when either side has
/// (numerically) zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let scale = |v: &[f64]| v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let n = xs.len() as f64;
    // Deviations below ~1e-12 relative are rounding residue of equal values.
    let flat = |s: f64, sc: f64| s <= n * (1e-12 * sc).powi(2);
    if flat(sxx, scale(xs)) || flat(syy, scale(ys)) {
        return Some(0.0);
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: the closed form `1 - 6 sum d^2 / (n (n^2 - 1))`
/// when neither side has ties, which is exact for integer rank
/// differences, else Pearson on average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let untied = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    };
    if untied(&rx) && untied(&ry) {
        let n = xs.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        return Some(1.0 - 6.0 * d2 / (n * (n * n - 1.0)));
    }
    pearson(&rx, &ry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(xs), 1.0);
    }

    #[test]
    fn pearson_basics() {
        let close = |r: Option<f64>, want: f64| (r.unwrap() - want).abs() < 1e-15;
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), 1.0));
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0));
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), Some(0.0));
        assert_eq!(pearson(&[0.1, 0.1, 0.1], &[0.0, 1.0, 2.0]), Some(0.0));
        assert_eq!(pearson(&[1.0], &[1.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), None);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_reversed_permutation_is_minus_one() {
        let a = [0.9, 0.7, 0.5, 0.1];
        let b = [0.1, 0.5, 0.7, 0.9];
        assert!((spearman(&a, &b).unwrap() + 1.0).abs() < 1e-15);
        // Closed form 1 - 6 sum d^2 / (n (n^2 - 1)) with d = (3, 1, -1, -3).
        let closed = 1.0 - 6.0 * 20.0 / (4.0 * 15.0);
        assert_eq!(closed, -1.0);
    }
}
