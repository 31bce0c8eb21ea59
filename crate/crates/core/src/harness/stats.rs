//! Nonparametric tests and descriptive statistics for comparing methods.

use crate::rng::{Purpose, StreamKey};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest smaller-group size for which the exact distribution is used.
pub const EXACT_MAX_GROUP: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{what} needs at least {min} samples, got {got}")]
    TooFew {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("sample contains NaN")]
    Nan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    TwoSided,
    /// `a` tends to be larger than `b`.
    Greater,
    /// `a` tends to be smaller than `b`.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    Normal,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` for the first sample: pairs with `a > b`, ties counted half.
    pub u: f64,
    pub p: f64,
    pub method: PMethod,
}

fn check(samples: &[f64], what: &'static str, min: usize) -> Result<(), StatsError> {
    if samples.len() < min {
        return Err(StatsError::TooFew {
            what,
            min,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(StatsError::Nan);
    }
    Ok(())
}

/// Doubled midranks (so they are integers) and the tie group sizes.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1..=end, doubled mean = start + end + 1
        for &i in &order[start..end] {
            ranks[i] = (start + end + 1) as u64;
        }
        ties.push((end - start) as u64);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    mann_whitney_u_with(a, b, Alternative::TwoSided)
}

/// Mann-Whitney U test. Uses the exact permutation distribution (midranks
/// for ties) when the smaller group has at most [`EXACT_MAX_GROUP`]
/// samples, otherwise the tie-corrected normal approximation with
/// continuity correction. The two-sided p-value counts rearrangements with
/// `|U - E[U]|` at least as large as observed.
pub fn mann_whitney_u_with(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
) -> Result<MannWhitney, StatsError> {
    check(a, "mann_whitney_u", 2)?;
    check(b, "mann_whitney_u", 2)?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_ranks(&pooled);
    let ra2: u64 = ranks[..na].iter().sum();
    let u = ra2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if ties.len() == 1 {
        return Ok(MannWhitney {
            u,
            p: 1.0,
            method: PMethod::Degenerate,
        });
    }

    if na.min(nb) <= EXACT_MAX_GROUP {
        let p = exact_p(&ranks, na, ra2, alternative);
        return Ok(MannWhitney {
            u,
            p: p.min(1.0),
            method: PMethod::Exact,
        });
    }

    let mean = (na * nb) as f64 / 2.0;
    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term);
    let sd = var.sqrt();
    let upper_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
    let p = match alternative {
        Alternative::TwoSided => {
            let z = ((u - mean).abs() - 0.5).max(0.0) / sd;
            2.0 * upper_tail(z)
        }
        Alternative::Greater => upper_tail((u - mean - 0.5) / sd),
        Alternative::Less => upper_tail((mean - u - 0.5) / sd),
    };
    Ok(MannWhitney {
        u,
        p: p.min(1.0),
        method: PMethod::Normal,
    })
}

/// Exact permutation p-value from the distribution of the doubled rank sum
/// of a random `k`-subset, where `k` is the smaller group.
fn exact_p(ranks: &[u64], na: usize, ra2: u64, alternative: Alternative) -> f64 {
    let n = ranks.len();
    let nb = n - na;
    let total: u64 = ranks.iter().sum();
    // work with the smaller group to keep the table small
    let (k, t_obs, flip) = if na <= nb {
        (na, ra2, false)
    } else {
        (nb, total - ra2, true)
    };
    let max_sum: u64 = {
        let mut r = ranks.to_vec();
        r.sort_unstable();
        r[n - k..].iter().sum()
    };
    let width = max_sum as usize + 1;
    // counts[j][s]: subsets of size j with doubled rank sum s
    let mut counts = vec![vec![0.0f64; width]; k + 1];
    counts[0][0] = 1.0;
    for (idx, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=k.min(idx + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..width).rev() {
                let c = prev[s - r];
                if c != 0.0 {
                    cur[s] += c;
                }
            }
        }
    }
    let dist = &counts[k];
    let all: f64 = dist.iter().sum();
    // E[2 * rank sum of k-subset] = k * total / n; compare n * t - k * total
    // in integers to avoid rounding.
    let centred = |s: u64| n as i128 * s as i128 - k as i128 * total as i128;
    let obs = centred(t_obs);
    let mut hit = 0.0;
    for (s, &c) in dist.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let d = centred(s as u64);
        let extreme = match alternative {
            Alternative::TwoSided => d.abs() >= obs.abs(),
            // "a greater" means a large rank sum for a, i.e. small for b
            Alternative::Greater => {
                if flip {
                    d <= obs
                } else {
                    d >= obs
                }
            }
            Alternative::Less => {
                if flip {
                    d >= obs
                } else {
                    d <= obs
                }
            }
        };
        if extreme {
            hit += c;
        }
    }
    hit / all
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Kruskal-Wallis H with tie correction; p from chi-squared with `k - 1`
/// degrees of freedom. All values tied gives `H = 0, p = 1`.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            what: "kruskal_wallis groups",
            min: 2,
            got: groups.len(),
        });
    }
    for g in groups {
        check(g, "kruskal_wallis group", 2)?;
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = doubled_ranks(&pooled);
    let df = groups.len() - 1;
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let correction = 1.0 - tie_sum / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p: 1.0, df });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum::<u64>() as f64 / 2.0;
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let p = ChiSquared::new(df as f64)
        .map(|d| d.sf(h))
        .unwrap_or(f64::NAN);
    Ok(KruskalWallis { h, p, df })
}

/// `min(1, p * m)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    assert!(m >= 1, "correction factor must be >= 1");
    (p * m as f64).min(1.0)
}

/// Quantile by linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

pub fn median(samples: &[f64]) -> f64 {
    quantile_sorted(&sorted(samples), 0.5)
}

/// Bootstrap means of `samples`, `resamples` of them, sorted ascending.
pub fn bootstrap_means(samples: &[f64], resamples: usize, seed: u64) -> Vec<f64> {
    let n = samples.len();
    let mut rng = StreamKey::new(seed, Purpose::Bootstrap).rng();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

/// Percentile bootstrap confidence interval of the mean.
pub fn bootstrap_ci(
    samples: &[f64],
    level: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), StatsError> {
    check(samples, "bootstrap_ci", 2)?;
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1)");
    assert!(resamples > 0);
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Ok((first, first));
    }
    let means = bootstrap_means(samples, resamples, seed);
    let alpha = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&means, alpha),
        quantile_sorted(&means, 1.0 - alpha),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Tukey box: whiskers reach the most extreme data within 1.5 IQR of the
/// box; quartiles by linear interpolation.
pub fn boxplot_stats(samples: &[f64]) -> Result<BoxStats, StatsError> {
    check(samples, "boxplot_stats", 1)?;
    let s = sorted(samples);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s
        .iter()
        .copied()
        .filter(|&v| v >= lo_fence && v <= hi_fence)
        .collect();
    Ok(BoxStats {
        median: quantile_sorted(&s, 0.5),
        q1,
        q3,
        whisker_lo: inside.first().copied().unwrap_or(q1),
        whisker_hi: inside.last().copied().unwrap_or(q3),
        outliers: s
            .iter()
            .copied()
            .filter(|&v| v < lo_fence || v > hi_fence)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `U` by direct pair counting.
    fn pair_u(a: &[f64], b: &[f64]) -> f64 {
        let mut u = 0.0;
        for &x in a {
            for &y in b {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    }

    /// Two-sided p by enumerating every split of the pooled sample.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let k = a.len();
        let mean = (a.len() * b.len()) as f64 / 2.0;
        let obs = (pair_u(a, b) - mean).abs();
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let (x, y): (Vec<f64>, Vec<f64>) = {
                let mut x = Vec::new();
                let mut y = Vec::new();
                for (i, &v) in pooled.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        x.push(v)
                    } else {
                        y.push(v)
                    }
                }
                (x, y)
            };
            total += 1;
            if (pair_u(&x, &y) - mean).abs() >= obs - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / total as f64
    }

    #[test]
    fn mann_whitney_separated_groups() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.method, PMethod::Exact);
        assert!((r.p - 0.1).abs() < 1e-12);
        let swapped = mann_whitney_u(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(swapped.u, 9.0);
        assert_eq!(swapped.p, r.p);
    }

    #[test]
    fn mann_whitney_identical_samples() {
        let a = [3.0, 1.0, 4.0, 1.5, 9.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.p, 1.0);
        let r = mann_whitney_u(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.method, PMethod::Degenerate);
    }

    #[test]
    fn mann_whitney_one_sided() {
        let a = [4.0, 5.0, 6.0];
        let b = [1.0, 2.0, 3.0];
        let g = mann_whitney_u_with(&a, &b, Alternative::Greater).unwrap();
        assert!((g.p - 0.05).abs() < 1e-12);
        let l = mann_whitney_u_with(&a, &b, Alternative::Less).unwrap();
        assert!((l.p - 1.0).abs() < 1e-12);
        // larger first group exercises the flipped table
        let a = [4.0, 5.0, 6.0, 7.0];
        let g = mann_whitney_u_with(&a, &b, Alternative::Greater).unwrap();
        assert!((g.p - 1.0 / 35.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_normal_approximation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, PMethod::Normal);
        assert!(r.p > 0.5);
        let far: Vec<f64> = (0..30).map(|i| i as f64 + 100.0).collect();
        let r = mann_whitney_u(&a, &far).unwrap();
        assert!(r.p < 1e-9);
        assert_eq!(r.u, 0.0);
    }

    #[test]
    fn mann_whitney_rejects_tiny_groups() {
        assert!(mann_whitney_u(&[1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn kruskal_wallis_two_groups() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((r.h - 3.857).abs() < 1e-3, "{}", r.h);
        assert_eq!(r.df, 1);
        let swapped = kruskal_wallis(&[vec![4.0, 5.0, 6.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.h, swapped.h);
        let tied = kruskal_wallis(&[vec![7.0; 3], vec![7.0; 4]]).unwrap();
        assert_eq!((tied.h, tied.p), (0.0, 1.0));
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(0.004, 5) - 0.02).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 5), 1.0);
        assert_eq!(bonferroni(0.037, 1), 0.037);
    }

    #[test]
    fn boxplot_examples() {
        let s: Vec<f64> = (1..=11).map(f64::from).collect();
        let b = boxplot_stats(&s).unwrap();
        assert_eq!((b.median, b.q1, b.q3), (6.0, 3.5, 8.5));
        assert_eq!((b.whisker_lo, b.whisker_hi), (1.0, 11.0));
        assert!(b.outliers.is_empty());

        let b = boxplot_stats(&[4.2]).unwrap();
        assert_eq!(
            (b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi),
            (4.2, 4.2, 4.2, 4.2, 4.2)
        );

        // q3 + 1.5 IQR = 16; 15 stays a whisker, 40 is an outlier
        let mut near = s.clone();
        near.push(15.0);
        let b = boxplot_stats(&near).unwrap();
        assert_eq!(b.whisker_hi, 15.0);
        let mut far = s.clone();
        far.push(40.0);
        let b = boxplot_stats(&far).unwrap();
        assert_eq!(b.outliers, vec![40.0]);
        assert_eq!(b.whisker_hi, 11.0);
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[3.3; 6], 0.9, 500, 1).unwrap(), (3.3, 3.3));
        let sym = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let (lo, hi) = bootstrap_ci(&sym, 0.9, 2000, 4).unwrap();
        assert!(lo < 4.0 && 4.0 < hi);
        let (lo95, hi95) = bootstrap_ci(&sym, 0.95, 2000, 4).unwrap();
        assert!(lo95 <= lo && hi <= hi95);
        assert_eq!(bootstrap_ci(&sym, 0.9, 2000, 4).unwrap(), (lo, hi));
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            a in prop::collection::vec(0u8..6, 2..=7),
            b in prop::collection::vec(0u8..6, 2..=7),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = mann_whitney_u(&a, &b).unwrap();
            prop_assert_eq!(r.u, pair_u(&a, &b));
            let oracle = enumerate_p(&a, &b);
            prop_assert!((r.p - oracle).abs() < 1e-9, "{} vs {}", r.p, oracle);
        }
    }
}
