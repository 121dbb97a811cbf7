//! Long-only selection with false-discovery-rate control.
//!
//! Each strategy returns a [`SelectionResult`]: which nulls `H₀: z_i ≤ 0` are
//! rejected by the Benjamini–Hochberg step-up rule and which assets enter the
//! equally weighted portfolio.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, FciError, Result};
use crate::linalg::Mat;
use crate::stats::normal_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `H_a: z > 0`, `p = 1 − Φ(t)`.
    #[default]
    OneSidedPositive,
    /// `p = 2(1 − Φ(|t|))`; for diagnostics only.
    TwoSided,
}

impl Side {
    pub fn p_value(self, t: f64) -> f64 {
        match self {
            Side::OneSidedPositive => normal_sf(t),
            Side::TwoSided => (2.0 * normal_sf(t.abs())).min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPanel {
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub side: Side,
}

impl TestPanel {
    pub fn from_t(t_stats: Vec<f64>, side: Side) -> Self {
        let p_values = t_stats.iter().map(|&t| side.p_value(t)).collect();
        TestPanel { t_stats, p_values, side }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rejected: Vec<bool>,
    /// `p_(K)`, or zero when nothing is rejected.
    pub cutoff: f64,
    pub k_bh: usize,
    /// Portfolio members, best forecast first.
    pub chosen: Vec<usize>,
    /// Equal weights over `chosen`, zero elsewhere.
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<TestPanel>,
}

impl SelectionResult {
    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(FciError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn equal_weights(r: usize, chosen: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; r];
    for &i in chosen {
        w[i] = 1.0 / chosen.len() as f64;
    }
    w
}

/// Indices ordered by descending forecast, ties by index.
fn by_forecast(z_hat: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = candidates.collect();
    idx.sort_by(|&a, &b| z_hat[b].total_cmp(&z_hat[a]).then(a.cmp(&b)));
    idx
}

/// Benjamini–Hochberg at level `alpha`: rejects every `p ≤ p_(K)` with
/// `K = max{i : p_(i) ≤ α i / R}`. Equal p-values share a decision.
pub fn bh_select(p_values: &[f64], alpha: f64) -> Result<SelectionResult> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(FciError::InvalidArgument("p-values must lie in [0, 1]".into()));
    }
    let (k, cutoff) = bh_cutoff(p_values, alpha);
    let rejected: Vec<bool> = p_values.iter().map(|&p| k > 0 && p <= cutoff).collect();
    let chosen: Vec<usize> = (0..p_values.len()).filter(|&i| rejected[i]).collect();
    Ok(SelectionResult {
        weights: equal_weights(p_values.len(), &chosen),
        rejected,
        cutoff,
        k_bh: k,
        chosen,
        tests: None,
    })
}

fn bh_cutoff(p_values: &[f64], alpha: f64) -> (usize, f64) {
    let r = p_values.len();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (1..=r)
        .rev()
        .find(|&i| sorted[i - 1] <= alpha * i as f64 / r as f64)
        .unwrap_or(0);
    let cutoff = if k == 0 { 0.0 } else { sorted[k - 1] };
    (k, cutoff)
}

fn select_top(mut bh: SelectionResult, z_hat: &[f64], k_portfolio: usize, tests: TestPanel) -> SelectionResult {
    let mut chosen = by_forecast(z_hat, (0..z_hat.len()).filter(|&i| bh.rejected[i]));
    chosen.truncate(k_portfolio);
    bh.weights = equal_weights(z_hat.len(), &chosen);
    bh.chosen = chosen;
    bh.tests = Some(tests);
    bh
}

/// FCI-FDR: BH on `t = ẑ/se`, then the `k_portfolio` largest forecasts among
/// the rejections. An empty selection means holding nothing.
pub fn strategy_fci_fdr(z_hat: &[f64], se: &[f64], alpha: f64, k_portfolio: usize) -> Result<SelectionResult> {
    ensure_len(se.len(), z_hat.len(), "standard errors")?;
    check_alpha(alpha)?;
    check_k(k_portfolio)?;
    if se.iter().any(|&s| !(s > 0.0)) {
        return Err(FciError::InvalidArgument("standard errors must be positive".into()));
    }
    if z_hat.iter().any(|z| !z.is_finite()) {
        return Err(FciError::NonFinite("z_hat"));
    }
    let tests = TestPanel::from_t(
        z_hat.iter().zip(se).map(|(z, s)| z / s).collect(),
        Side::OneSidedPositive,
    );
    let bh = bh_select(&tests.p_values, alpha)?;
    Ok(select_top(bh, z_hat, k_portfolio, tests))
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(FciError::InvalidArgument("portfolio size must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// The `k_portfolio` largest forecasts, equally weighted.
pub fn strategy_highest_k(z_hat: &[f64], k_portfolio: usize) -> Result<SelectionResult> {
    check_k(k_portfolio)?;
    if z_hat.iter().any(|z| !z.is_finite()) {
        return Err(FciError::NonFinite("z_hat"));
    }
    let mut chosen = by_forecast(z_hat, 0..z_hat.len());
    chosen.truncate(k_portfolio);
    let mut rejected = vec![false; z_hat.len()];
    for &i in &chosen {
        rejected[i] = true;
    }
    Ok(SelectionResult {
        weights: equal_weights(z_hat.len(), &chosen),
        rejected,
        cutoff: 0.0,
        k_bh: 0,
        chosen,
        tests: None,
    })
}

/// Time-series t-statistic `ȳ / (s/√T)` per column of a `T × R` history.
///
/// Zero-variance columns get `±∞` by the sign of the mean and `NaN` when the
/// mean is zero too.
pub fn naive_t_stats(history: &Mat) -> Result<Vec<f64>> {
    let (t, r) = history.shape();
    if t < 2 {
        return Err(FciError::InvalidArgument(format!(
            "naive t-statistics need at least two periods, got {t}"
        )));
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(FciError::NonFinite("return history"));
    }
    Ok((0..r)
        .map(|c| {
            let col: Vec<f64> = history.column(c).iter().copied().collect();
            let mean = crate::stats::mean(&col);
            let sd = crate::stats::sample_sd(&col);
            if sd > 0.0 {
                mean / (sd / (t as f64).sqrt())
            } else if mean > 0.0 {
                f64::INFINITY
            } else if mean < 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Naive-FDR: BH on historical-mean t-statistics, then the `k_portfolio`
/// largest forecasts among the rejections. Columns without a defined
/// statistic are left out of the multiple test.
pub fn strategy_naive_fdr(history: &Mat, alpha: f64, k_portfolio: usize, z_hat: &[f64]) -> Result<SelectionResult> {
    ensure_len(z_hat.len(), history.ncols(), "forecasts")?;
    check_alpha(alpha)?;
    check_k(k_portfolio)?;
    let t_stats = naive_t_stats(history)?;
    let tests = TestPanel::from_t(t_stats, Side::OneSidedPositive);
    let included: Vec<usize> = (0..z_hat.len()).filter(|&i| !tests.t_stats[i].is_nan()).collect();
    let sub_p: Vec<f64> = included.iter().map(|&i| tests.p_values[i]).collect();
    let (k, cutoff) = bh_cutoff(&sub_p, alpha);
    let mut rejected = vec![false; z_hat.len()];
    for (&i, &p) in included.iter().zip(&sub_p) {
        rejected[i] = k > 0 && p <= cutoff;
    }
    let bh = SelectionResult {
        rejected,
        cutoff,
        k_bh: k,
        chosen: Vec::new(),
        weights: Vec::new(),
        tests: None,
    };
    Ok(select_top(bh, z_hat, k_portfolio, tests))
}

/// Writes `asset_id,t,p,rejected,chosen,weight`; `t` and `p` are blank when
/// the strategy ran no test.
pub fn write_selection_csv<W: Write>(out: W, asset_ids: &[String], result: &SelectionResult) -> Result<()> {
    ensure_len(asset_ids.len(), result.rejected.len(), "asset ids")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["asset_id", "t", "p", "rejected", "chosen", "weight"])?;
    for (i, id) in asset_ids.iter().enumerate() {
        let (t, p) = match &result.tests {
            Some(tp) => (tp.t_stats[i].to_string(), tp.p_values[i].to_string()),
            None => (String::new(), String::new()),
        };
        let chosen = result.chosen.contains(&i);
        w.write_record([
            id.as_str(),
            &t,
            &p,
            &result.rejected[i].to_string(),
            &chosen.to_string(),
            &result.weights[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Quadratic-time BH straight from the definition.
    fn naive_bh(p: &[f64], alpha: f64) -> Vec<bool> {
        let r = p.len();
        let mut k = 0;
        for i in 0..r {
            // Rank of p[i] counting all values not above it.
            let rank = p.iter().filter(|&&q| q <= p[i]).count();
            if p[i] <= alpha * rank as f64 / r as f64 {
                k = k.max(rank);
            }
        }
        p.iter()
            .map(|&pi| k > 0 && p.iter().filter(|&&q| q <= pi).count() <= k)
            .collect()
    }

    #[test]
    fn bh_examples() {
        let p = [0.001, 0.01, 0.02, 0.5];
        let r = bh_select(&p, 0.05).unwrap();
        assert_eq!(r.k_bh, 3);
        assert_eq!(r.rejected, vec![true, true, true, false]);
        assert_eq!(r.rejected, naive_bh(&p, 0.05));
        assert_eq!(r.cutoff, 0.02);

        let r = bh_select(&[0.9, 0.95], 0.05).unwrap();
        assert_eq!(r.k_bh, 0);
        assert_eq!(r.cutoff, 0.0);
        assert!(r.rejected.iter().all(|x| !x));

        let r = bh_select(&[0.0; 4], 0.05).unwrap();
        assert!(r.rejected.iter().all(|&x| x));
        assert!(bh_select(&[1.2], 0.05).is_err());
    }

    #[test]
    fn bh_ties_share_fate() {
        let r = bh_select(&[0.02, 0.02, 0.02, 0.9], 0.05).unwrap();
        assert_eq!(r.rejected, vec![true, true, true, false]);
    }

    #[test]
    fn p_values_from_t() {
        let tp = TestPanel::from_t(vec![0.0, 1.959963984540054, f64::INFINITY], Side::OneSidedPositive);
        assert!((tp.p_values[0] - 0.5).abs() < 1e-15);
        assert!((tp.p_values[1] - 0.025).abs() < 1e-10);
        assert_eq!(tp.p_values[2], 0.0);
        assert!((Side::TwoSided.p_value(-1.959963984540054) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn fci_fdr_examples() {
        let r = strategy_fci_fdr(&[-0.1, -0.2], &[0.01, 0.01], 0.05, 5).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.weights, vec![0.0, 0.0]);

        let r = strategy_fci_fdr(&[0.05, 0.04, 0.03], &[0.001, 0.001, 10.0], 0.05, 2).unwrap();
        let p = &r.tests.as_ref().unwrap().p_values;
        // 0.03/10 is a t of 0.003, p ≈ 0.4988, far above any BH threshold.
        assert!(p[2] > 0.49);
        assert_eq!(r.chosen, vec![0, 1]);
        assert_eq!(r.weights, vec![0.5, 0.5, 0.0]);

        let r = strategy_fci_fdr(&[0.05, 0.0], &[0.001, 1.0], 0.05, 1).unwrap();
        assert_eq!(r.chosen, vec![0]);
        assert_eq!(r.weights, vec![1.0, 0.0]);
        assert!(strategy_fci_fdr(&[0.05], &[0.0], 0.05, 1).is_err());
    }

    #[test]
    fn highest_k_examples() {
        let r = strategy_highest_k(&[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(r.chosen, vec![0, 2]);
        let r = strategy_highest_k(&[3.0, 1.0, 2.0], 10).unwrap();
        assert_eq!(r.chosen.len(), 3);
        let r = strategy_highest_k(&[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(r.chosen, vec![0, 1]);
        assert!(strategy_highest_k(&[1.0], 0).is_err());
    }

    #[test]
    fn highest_k_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(1..40);
            let mut order: Vec<(f64, usize)> = z.iter().copied().zip(0..).collect();
            order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut expect: Vec<usize> = order.iter().take(k).map(|x| x.1).collect();
            let mut got = strategy_highest_k(&z, k).unwrap().chosen;
            expect.sort();
            got.sort();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn naive_constant_columns() {
        let h = Mat::from_row_slice(3, 3, &[0.01, -0.02, 0.0, 0.01, -0.02, 0.0, 0.01, -0.02, 0.0]);
        let t = naive_t_stats(&h).unwrap();
        assert_eq!(t[0], f64::INFINITY);
        assert_eq!(t[1], f64::NEG_INFINITY);
        assert!(t[2].is_nan());
        let r = strategy_naive_fdr(&h, 0.05, 3, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(r.rejected, vec![true, false, false]);
        assert_eq!(r.chosen, vec![0]);
        assert!(naive_t_stats(&Mat::zeros(1, 2)).is_err());
    }

    #[test]
    fn naive_null_rejection_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (t, r, draws) = (60, 20, 1000);
        let mut rejected = 0usize;
        for _ in 0..draws {
            let h = Mat::from_fn(t, r, |_, _| rng.sample::<f64, _>(StandardNormal));
            let res = strategy_naive_fdr(&h, 0.05, r, &vec![0.0; r]).unwrap();
            rejected += res.rejected.iter().filter(|&&x| x).count();
        }
        assert!((rejected as f64) / ((draws * r) as f64) < 0.10);
    }

    #[test]
    fn naive_detects_strong_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (t, r, draws) = (60, 10, 1000);
        let shift = 5.0 / (t as f64).sqrt();
        let mut hits = 0;
        for _ in 0..draws {
            let h = Mat::from_fn(t, r, |_, c| rng.sample::<f64, _>(StandardNormal) + if c == 0 { shift } else { 0.0 });
            if strategy_naive_fdr(&h, 0.05, 1, &vec![0.0; r]).unwrap().rejected[0] {
                hits += 1;
            }
        }
        assert!(hits as f64 / draws as f64 > 0.99);
    }

    #[test]
    fn selection_csv() {
        let r = strategy_fci_fdr(&[0.05, -0.01], &[0.001, 0.01], 0.05, 1).unwrap();
        let mut buf = Vec::new();
        write_selection_csv(&mut buf, &["A".into(), "B".into()], &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "asset_id,t,p,rejected,chosen,weight");
        assert!(lines[1].starts_with("A,50,"));
        assert!(lines[1].ends_with(",true,true,1"));
        assert!(lines[2].ends_with(",false,false,0"));
    }

    proptest! {
        #[test]
        fn bh_matches_naive(p in prop::collection::vec(0.0f64..=1.0, 1..60), alpha in 0.001f64..0.5) {
            prop_assert_eq!(bh_select(&p, alpha).unwrap().rejected, naive_bh(&p, alpha));
        }

        #[test]
        fn bh_monotone_in_alpha(p in prop::collection::vec(0.0f64..=1.0, 1..60), a in 0.001f64..0.5, b in 0.001f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = bh_select(&p, lo).unwrap().rejected;
            let large = bh_select(&p, hi).unwrap().rejected;
            prop_assert!(small.iter().zip(&large).all(|(s, l)| !s || *l));
        }

        #[test]
        fn bh_permutation_invariant(p in prop::collection::vec(0.0f64..=1.0, 1..60), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..p.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let shuffled: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
            let base = bh_select(&p, 0.1).unwrap().rejected;
            let moved = bh_select(&shuffled, 0.1).unwrap().rejected;
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(moved[k], base[i]);
            }
        }

        #[test]
        fn fci_fdr_subset_of_rejections(
            z in prop::collection::vec(-0.1f64..0.1, 1..40),
            seed in any::<u64>(),
            k in 1usize..10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let se: Vec<f64> = z.iter().map(|_| rng.random_range(0.001..0.1)).collect();
            let r = strategy_fci_fdr(&z, &se, 0.1, k).unwrap();
            prop_assert!(r.chosen.len() <= k);
            prop_assert!(r.chosen.iter().all(|&i| r.rejected[i]));
            let w: f64 = r.weights.iter().sum();
            prop_assert!(r.chosen.is_empty() || (w - 1.0).abs() < 1e-12);
        }
    }
}
