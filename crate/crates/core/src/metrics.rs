//! Evaluation metrics: PEHE, lift and uplift curves, AUUC, population
//! accuracy and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::mask::CausalPopulation;
use crate::{Error, Result};

/// Mean squared error between true and estimated individual effects.
pub fn pehe(true_ite: &[f64], pred_ite: &[f64]) -> Result<f64> {
    if true_ite.len() != pred_ite.len() {
        return Err(Error::Evaluation(format!(
            "pehe: {} true effects vs {} predictions",
            true_ite.len(),
            pred_ite.len()
        )));
    }
    if true_ite.is_empty() {
        return Err(Error::Evaluation("pehe: empty input".into()));
    }
    let sum: f64 = true_ite
        .iter()
        .zip(pred_ite)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / true_ite.len() as f64)
}

/// Lift values `AUL(k) = positives among the first k - k * base rate`, for
/// `k = 1..=len`. `order` lists positions into `y`, best first.
pub fn group_lift_curve(y: &[u8], order: &[usize]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::Evaluation("lift curve of an empty group".into()));
    }
    if order.len() != y.len() {
        return Err(Error::Evaluation("order is not a permutation of the group".into()));
    }
    let mut seen = vec![false; y.len()];
    for &i in order {
        if i >= y.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Evaluation("order is not a permutation of the group".into()));
        }
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    let rate = positives as f64 / y.len() as f64;
    let mut cum = 0usize;
    Ok(order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            cum += usize::from(y[i] == 1);
            cum as f64 - (k + 1) as f64 * rate
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftCurve {
    /// `(j/n, AUL_treated(k1) - AUL_control(k0))` for `j = 1..=n`.
    pub points: Vec<(f64, f64)>,
    pub auuc: f64,
}

impl UpliftCurve {
    /// `fraction,uplift` header, one row per depth.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,uplift\n");
        for (f, u) in &self.points {
            out.push_str(&format!("{f},{u}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("fraction,uplift") {
            return Err(Error::Parse {
                line: 1,
                message: "expected header fraction,uplift".into(),
            });
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| Error::Parse {
                    line: i as u64 + 2,
                    message: format!("malformed row {line:?}"),
                })
            };
            let mut cells = line.split(',');
            let f = parse(cells.next())?;
            let u = parse(cells.next())?;
            points.push((f, u));
        }
        let auuc = if points.is_empty() {
            0.0
        } else {
            points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64
        };
        Ok(UpliftCurve { points, auuc })
    }
}

/// Indices sorted by score descending; ties keep index order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the uplift curve.
///
/// Each treatment group is ranked separately by descending predicted effect.
/// For `j = 1..=n` the treated lift is read at depth `ceil(j * n1 / n)` and
/// the control lift at `ceil(j * n0 / n)`, so both groups are compared at the
/// same population fraction `j / n`. The AUUC is the mean of the `n`
/// differences (unnormalized, in units of individuals).
pub fn auuc(pred_ite: &[f64], y: &[u8], t: &[u8]) -> Result<UpliftCurve> {
    let n = pred_ite.len();
    if y.len() != n || t.len() != n {
        return Err(Error::Evaluation("auuc: input lengths differ".into()));
    }
    let mut groups: [(Vec<f64>, Vec<u8>); 2] = Default::default();
    for i in 0..n {
        let g = match t[i] {
            0 | 1 => &mut groups[t[i] as usize],
            other => return Err(Error::Evaluation(format!("auuc: treatment {other} is not binary"))),
        };
        g.0.push(pred_ite[i]);
        g.1.push(y[i]);
    }
    if groups.iter().any(|g| g.1.is_empty()) {
        return Err(Error::Evaluation(
            "auuc: a treatment group is empty (overlap violated)".into(),
        ));
    }
    let lift = |g: &(Vec<f64>, Vec<u8>)| group_lift_curve(&g.1, &ranking(&g.0));
    let control = lift(&groups[0])?;
    let treated = lift(&groups[1])?;
    let at = |curve: &[f64], j: usize| {
        let k = (j * curve.len()).div_ceil(n);
        if k == 0 {
            0.0
        } else {
            curve[k - 1]
        }
    };
    let points: Vec<(f64, f64)> = (1..=n)
        .map(|j| (j as f64 / n as f64, at(&treated, j) - at(&control, j)))
        .collect();
    let auuc = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    Ok(UpliftCurve { points, auuc })
}

pub fn population_accuracy(pred: &[CausalPopulation], truth: &[CausalPopulation]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Evaluation("population_accuracy: length mismatch".into()));
    }
    if pred.is_empty() {
        return Err(Error::Evaluation("population_accuracy: empty input".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(T+, T-)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    pub exact: bool,
}

/// Largest `n_effective` for which the null distribution is enumerated exactly.
pub const WILCOXON_EXACT_LIMIT: usize = 20;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; tied magnitudes get average ranks. Up to
/// [`WILCOXON_EXACT_LIMIT`] pairs the p-value is the exact fraction of the
/// `2^n` sign assignments whose statistic is at most the observed one;
/// beyond that a tie-corrected normal approximation with continuity
/// correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Evaluation("wilcoxon: samples have different lengths".into()));
    }
    if a.is_empty() {
        return Err(Error::Evaluation("wilcoxon: empty samples".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact: true,
        });
    }
    let doubled = doubled_average_ranks(&diffs);
    let total: u64 = doubled.iter().sum();
    let positive: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w2 = positive.min(total - positive);
    let statistic = w2 as f64 / 2.0;

    if n <= WILCOXON_EXACT_LIMIT {
        // counts[s] = number of sign assignments whose doubled positive rank sum is s
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r as usize..=total as usize).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as u64).min(total - *s as u64) <= w2)
            .map(|(_, c)| c)
            .sum();
        let p_value = (extreme as f64 / (1u64 << n) as f64).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value,
            n_effective: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < abs.len() {
        let mut j = i;
        while j + 1 < abs.len() && abs[j + 1] == abs[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (statistic - mean + 0.5) / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.cdf(z.min(0.0))).min(1.0)
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n_effective: n,
        exact: false,
    })
}

/// Twice the average rank of each `|d|` (always an integer).
fn doubled_average_ranks(diffs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..diffs.len()).collect();
    idx.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && diffs[idx[end + 1]].abs() == diffs[idx[start]].abs() {
            end += 1;
        }
        // ranks start+1 ..= end+1, doubled average = (start + 1) + (end + 1)
        let doubled = (start + end + 2) as u64;
        for &k in &idx[start..=end] {
            ranks[k] = doubled;
        }
        start = end + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use CausalPopulation::*;

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[1.0, 0.0, -1.0], &[1.0, 0.0, -1.0]).unwrap(), 0.0);
        assert_eq!(pehe(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(pehe(&[1.0], &[1.0, 2.0]).is_err());
        assert!(pehe(&[], &[]).is_err());
    }

    #[test]
    fn pehe_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut naive = 0.0;
        for i in 0..50 {
            naive += (a[i] - b[i]).powi(2);
        }
        assert!((pehe(&a, &b).unwrap() - naive / 50.0).abs() < 1e-14);
    }

    #[test]
    fn lift_examples() {
        assert_eq!(group_lift_curve(&[1, 1, 1], &[2, 0, 1]).unwrap(), vec![0.0; 3]);
        assert_eq!(group_lift_curve(&[1, 0], &[0, 1]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(group_lift_curve(&[0, 1], &[0, 1]).unwrap(), vec![-0.5, 0.0]);
        assert!(group_lift_curve(&[], &[]).is_err());
        assert!(group_lift_curve(&[0, 1], &[0, 0]).is_err());
    }

    #[test]
    fn auuc_small_instance() {
        // treated (idx 0,1): scores 2,1, y 1,0 -> lift (0.5, 0)
        // control (idx 2,3): scores 2,1, y 0,0 -> lift (0, 0)
        // depths for j=1..4 with n1=n0=2: k = 1,1,2,2
        let c = auuc(&[2.0, 1.0, 2.0, 1.0], &[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        let u: Vec<f64> = c.points.iter().map(|p| p.1).collect();
        assert_eq!(u, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(c.auuc, 0.25);
        assert_eq!(c.points[3].0, 1.0);
    }

    #[test]
    fn auuc_requires_both_groups() {
        assert!(auuc(&[1.0, 2.0], &[0, 1], &[1, 1]).is_err());
        assert!(auuc(&[1.0], &[0, 1], &[1, 0]).is_err());
    }

    #[test]
    fn uplift_csv_round_trip() {
        let c = auuc(&[0.3, -0.1, 0.9, 0.0, 0.2], &[1, 0, 1, 1, 0], &[1, 0, 0, 1, 1]).unwrap();
        let csv = c.to_csv();
        assert!(csv.starts_with("fraction,uplift\n"));
        assert_eq!(csv.lines().count(), 6);
        assert_eq!(UpliftCurve::from_csv(&csv).unwrap(), c);
    }

    #[test]
    fn accuracy_examples() {
        let truth = [Responder, Doomed, Survivor, AntiResponder];
        assert_eq!(population_accuracy(&truth, &truth).unwrap(), 1.0);
        let wrong = [Doomed, Survivor, AntiResponder, Responder];
        assert_eq!(population_accuracy(&wrong, &truth).unwrap(), 0.0);
        let half = [Responder, Doomed, Responder, Responder];
        assert_eq!(population_accuracy(&half, &truth).unwrap(), 0.5);
        assert!(population_accuracy(&half[..2], &truth).is_err());
    }

    #[test]
    fn wilcoxon_identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_effective, 0);
    }

    #[test]
    fn wilcoxon_all_positive_ten() {
        let a: Vec<f64> = (1..=10).map(|i| i as f64 + 0.5).collect();
        let b = vec![0.0; 10];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 2.0 / 1024.0);
    }

    #[test]
    fn wilcoxon_single_pair_is_degenerate() {
        let r = wilcoxon_signed_rank(&[1.0], &[0.0]).unwrap();
        assert_eq!(r.n_effective, 1);
        assert_eq!(r.p_value, 1.0);
    }

    /// Direct enumeration of all sign flips with naively computed ranks.
    fn naive_wilcoxon_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
        let n = d.len();
        if n == 0 {
            return 1.0;
        }
        let rank = |i: usize| {
            let less = d.iter().filter(|v| v.abs() < d[i].abs()).count() as f64;
            let equal = d.iter().filter(|v| v.abs() == d[i].abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = (0..n).map(rank).collect();
        let total: f64 = ranks.iter().sum();
        let plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
        let w = plus.min(total - plus);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s.min(total - s) <= w + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_matches_naive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let a: Vec<f64> = (0..8).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.random_range(0..6) as f64).collect();
            let got = wilcoxon_signed_rank(&a, &b).unwrap().p_value;
            let want = naive_wilcoxon_p(&a, &b);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn wilcoxon_normal_approximation_large_n() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + if i % 3 == 0 { -2.0 } else { 1.0 }).collect();
        let b = vec![0.0; 40];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
        let shifted: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 + i as f64 } else { -1.0 - i as f64 }).collect();
        let r = wilcoxon_signed_rank(&shifted, &b).unwrap();
        assert!(r.p_value > 0.5);
    }

    proptest! {
        #[test]
        fn wilcoxon_symmetric_in_arguments(
            a in prop::collection::vec(-5i32..5, 1..15),
            b in prop::collection::vec(-5i32..5, 15),
        ) {
            let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = b[..a.len()].iter().map(|&v| v as f64).collect();
            let ab = wilcoxon_signed_rank(&a, &b).unwrap();
            let ba = wilcoxon_signed_rank(&b, &a).unwrap();
            prop_assert_eq!(ab.statistic, ba.statistic);
            prop_assert_eq!(ab.p_value, ba.p_value);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }

        #[test]
        fn pehe_zero_iff_equal(a in prop::collection::vec(-1.0f64..1.0, 1..20), bump in 0usize..20) {
            prop_assert_eq!(pehe(&a, &a).unwrap(), 0.0);
            let mut b = a.clone();
            let i = bump % b.len();
            b[i] += 0.5;
            prop_assert!(pehe(&a, &b).unwrap() > 0.0);
        }

        #[test]
        fn lift_curve_ends_at_zero(y in prop::collection::vec(0u8..2, 1..40)) {
            let order: Vec<usize> = (0..y.len()).rev().collect();
            let curve = group_lift_curve(&y, &order).unwrap();
            prop_assert!(curve.last().unwrap().abs() < 1e-9);
        }
    }
}
