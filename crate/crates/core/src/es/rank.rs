//! Rank-based fitness shaping and the mirrored gradient estimate.

use super::EsError;

/// Maps scores to centered ranks in `[-0.5, 0.5]`.
///
/// The ascending 0-based rank `r` maps to `r / (n - 1) - 0.5`; tied scores
/// share the mean of the values their ranks would receive.
pub fn rank_normalize(scores: &[f64]) -> Result<Vec<f64>, EsError> {
    let n = scores.len();
    if n < 2 {
        return Err(EsError::TooFewScores(n));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EsError::NanScore(i));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let scale = (n - 1) as f64;
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // mean rank of the tie group [start, end)
        let mean_rank = (start + end - 1) as f64 / 2.0;
        let u = mean_rank / scale - 0.5;
        for &i in &order[start..end] {
            out[i] = u;
        }
        start = end;
    }
    Ok(out)
}

/// `g = (1/lambda) * sum_i (u_plus[i] - u_minus[i]) * eps[i]`.
///
/// `ranks` holds the normalized ranks of the `2 * lambda` offspring with the
/// `+` offspring first, then the `-` offspring, in pair order.
pub fn estimate_gradient(eps: &[Vec<f64>], ranks: &[f64]) -> Result<Vec<f64>, EsError> {
    let lambda = eps.len();
    if lambda == 0 || ranks.len() != 2 * lambda {
        return Err(EsError::ShapeMismatch {
            what: "rank vector",
            expected: 2 * lambda,
            got: ranks.len(),
        });
    }
    let dim = eps[0].len();
    let mut g = vec![0.0; dim];
    for (i, e) in eps.iter().enumerate() {
        if e.len() != dim {
            return Err(EsError::ShapeMismatch {
                what: "perturbation",
                expected: dim,
                got: e.len(),
            });
        }
        let w = ranks[i] - ranks[lambda + i];
        if w != 0.0 {
            for (gj, ej) in g.iter_mut().zip(e) {
                *gj += w * ej;
            }
        }
    }
    let inv = 1.0 / lambda as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sort-then-map oracle without tie handling.
    fn sorted_ranks(scores: &[f64]) -> Vec<f64> {
        let n = scores.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
        let mut out = vec![0.0; n];
        for (r, &i) in idx.iter().enumerate() {
            out[i] = r as f64 / (n - 1) as f64 - 0.5;
        }
        out
    }

    #[test]
    fn small_examples() {
        let u = rank_normalize(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(u, sorted_ranks(&[3.0, 1.0, 2.0]));
        assert_eq!(u, vec![0.5, -0.5, 0.0]);
        assert_eq!(rank_normalize(&[7.0, 7.0, 7.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(rank_normalize(&[1.0, 2.0]).unwrap(), vec![-0.5, 0.5]);
        assert_eq!(
            rank_normalize(&[1.0, 5.0, 5.0, 9.0]).unwrap(),
            vec![-0.5, 0.0, 0.0, 0.5]
        );
    }

    #[test]
    fn rejects_short_or_nan_input() {
        assert!(matches!(rank_normalize(&[1.0]), Err(EsError::TooFewScores(1))));
        assert!(rank_normalize(&[]).is_err());
        assert!(matches!(
            rank_normalize(&[1.0, f64::NAN]),
            Err(EsError::NanScore(1))
        ));
    }

    #[test]
    fn gradient_examples() {
        let eps = vec![vec![0.5, -1.0, 2.0]];
        // s+ > s-
        let u = rank_normalize(&[2.0, 1.0]).unwrap();
        assert_eq!(estimate_gradient(&eps, &u).unwrap(), eps[0]);
        let u = rank_normalize(&[1.0, 1.0]).unwrap();
        assert_eq!(estimate_gradient(&eps, &u).unwrap(), vec![0.0; 3]);
        assert!(estimate_gradient(&eps, &[0.0; 3]).is_err());
    }
}
