//! Catalan numbers, Kondratiev-weighted norms, and second-quantization
//! rescaling operators acting on chaos expansions.
//!
//! Everything here works in log-space: Catalan numbers, factorial weights,
//! and rescaling factors all grow (or shrink) super-exponentially with the
//! chaos degree, so magnitudes are carried as natural logs and exponentiated
//! only at the boundary.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::chaos::{wick_product_scalar, ChaosScalar};
use crate::error::{Error, Result};
use crate::multiindex::{ln_factorial, MultiIndex};

/// Largest log-magnitude a rescaling weight may reach.  Weights beyond this
/// are clamped (Kondratiev norms) or zeroed with a diagnostic (second
/// quantization) rather than allowed to overflow into infinities.
pub const WEIGHT_LOG_CLAMP: f64 = 600.0;

const CATALAN_CACHE_LEN: usize = 1024;

/// Catalan numbers `c_0..c_{len-1}` held as natural logs.
///
/// Values are generated by the convolution recursion
/// `c_n = sum_{k<n} c_k c_{n-1-k}` accumulated with log-sum-exp, so the
/// cache stays finite far beyond the ~n = 510 point where the values
/// themselves leave f64 range.
pub struct CatalanCache {
    logs: Vec<f64>,
}

impl CatalanCache {
    pub fn new(len: usize) -> Self {
        let mut logs = vec![0.0f64; len.max(1)];
        let mut terms = Vec::with_capacity(len);
        for n in 1..logs.len() {
            terms.clear();
            terms.extend((0..n).map(|k| logs[k] + logs[n - 1 - k]));
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
            logs[n] = top + sum.ln();
        }
        CatalanCache { logs }
    }

    pub fn len(&self) -> usize {
        self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logs.is_empty()
    }

    /// `ln c_n`; finite for every cached index.
    pub fn log(&self, n: usize) -> f64 {
        self.logs[n]
    }

    /// `c_n` itself; overflows to infinity past roughly n = 510.
    pub fn get(&self, n: usize) -> f64 {
        self.logs[n].exp()
    }
}

fn shared_cache() -> &'static CatalanCache {
    static CACHE: OnceLock<CatalanCache> = OnceLock::new();
    CACHE.get_or_init(|| CatalanCache::new(CATALAN_CACHE_LEN))
}

/// n-th Catalan number (1, 1, 2, 5, 14, ...).
pub fn catalan(n: u32) -> f64 {
    shared_cache().get(n as usize)
}

/// Natural log of the n-th Catalan number.
pub fn catalan_log(n: u32) -> f64 {
    shared_cache().log(n as usize)
}

/// Parameters of a weighted-norm / rescaling study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingSpec {
    /// Kondratiev exponent; the scan space is `Q_SCAN`.
    pub q: f64,
    /// Factorial weight exponent in [-1, 1]; negative values invert the weights.
    pub rho: f64,
    /// Second-quantization strength.
    pub epsilon: f64,
}

impl ScalingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 1.0) {
            return Err(Error::Domain(format!("q must exceed 1, got {}", self.q)));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Candidate Kondratiev exponents, scanned smallest first.
pub const Q_SCAN: [f64; 4] = [1.1, 1.5, 2.0, 3.0];

/// Log of the Kondratiev weight `(|a|!)^rho (2N)^{+/-2q a}` attached to a
/// multi-index.  The sign of the `(2N)` exponent follows the sign of `rho`:
/// nonnegative `rho` weights up, negative `rho` inverts both factors.
pub fn kondratiev_weight_log(alpha: &MultiIndex, rho: f64, q: f64) -> f64 {
    assert!(q >= 0.0, "q must be nonnegative");
    assert!((-1.0..=1.0).contains(&rho), "rho must lie in [-1, 1]");
    let sign = if rho < 0.0 { -1.0 } else { 1.0 };
    let mode_part: f64 = alpha
        .entries()
        .iter()
        .map(|&(k, m)| m as f64 * (2.0 * k as f64).ln())
        .sum();
    rho * ln_factorial(alpha.degree()) + sign * 2.0 * q * mode_part
}

fn clamp_weight_log(w: f64) -> f64 {
    w.clamp(-WEIGHT_LOG_CLAMP, WEIGHT_LOG_CLAMP)
}

/// Weighted l2 aggregate `sqrt(sum_a w_a |u_a|^2)` over precomputed
/// coefficient magnitudes, accumulated in log-space.
pub fn kondratiev_norm(mags: &BTreeMap<MultiIndex, f64>, rho: f64, q: f64) -> f64 {
    let mut terms = Vec::with_capacity(mags.len());
    for (alpha, &mag) in mags {
        if mag == 0.0 {
            continue;
        }
        terms.push(clamp_weight_log(kondratiev_weight_log(alpha, rho, q)) + 2.0 * mag.abs().ln());
    }
    if terms.is_empty() {
        return 0.0;
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    (0.5 * (top + sum.ln())).exp()
}

/// Weighted mass per chaos degree: `(n, sum_{|a|=n} w_a |u_a|^2)`, sorted by n.
pub fn kondratiev_level_sums(
    mags: &BTreeMap<MultiIndex, f64>,
    rho: f64,
    q: f64,
) -> Vec<(u32, f64)> {
    let mut levels: BTreeMap<u32, f64> = BTreeMap::new();
    for (alpha, &mag) in mags {
        let w = clamp_weight_log(kondratiev_weight_log(alpha, rho, q));
        *levels.entry(alpha.degree()).or_insert(0.0) += w.exp() * mag * mag;
    }
    levels.into_iter().collect()
}

/// Outcome of the `Q_SCAN` search: the chosen exponent and the largest
/// consecutive level-sum ratio observed under it.
#[derive(Clone, Copy, Debug)]
pub struct QSelection {
    pub q: f64,
    pub max_ratio: f64,
}

/// Largest ratio between consecutive level sums, or None when the sums are
/// not geometrically decaying (a ratio at or above 1, an internal gap, or
/// fewer than two populated levels).
fn geometric_ratio(sums: &[(u32, f64)]) -> Option<f64> {
    let positive: Vec<(u32, f64)> = sums.iter().copied().filter(|&(_, s)| s > 0.0).collect();
    if positive.len() < 2 {
        return None;
    }
    let mut max_ratio: f64 = 0.0;
    for pair in positive.windows(2) {
        let (n0, s0) = pair[0];
        let (n1, s1) = pair[1];
        if n1 != n0 + 1 {
            return None;
        }
        max_ratio = max_ratio.max(s1 / s0);
    }
    (max_ratio < 1.0).then_some(max_ratio)
}

/// Scans `Q_SCAN` and returns the smallest exponent whose level sums decay
/// geometrically, or None when none qualifies.
pub fn select_q(mags: &BTreeMap<MultiIndex, f64>, rho: f64) -> Option<QSelection> {
    for &q in &Q_SCAN {
        let sums = kondratiev_level_sums(mags, rho, q);
        if let Some(max_ratio) = geometric_ratio(&sums) {
            return Some(QSelection { q, max_ratio });
        }
    }
    None
}

/// One degree >= 2 row of a Catalan bound report.
#[derive(Clone, Debug)]
pub struct BoundRow {
    pub alpha: MultiIndex,
    /// Supplied coefficient norm.
    pub norm: f64,
    /// Log of the fitted bound `sqrt(a!) c_{|a|-1} binom(|a|, a) b0^{|a|-1} k^{|a|}`.
    pub bound_log: f64,
    /// `bound_log - ln(norm)`; zero at the binding row, +inf where the norm vanishes.
    pub slack_log: f64,
}

/// Fitted Catalan growth bound over a family of coefficient norms.
#[derive(Clone, Debug)]
pub struct CatalanBound {
    /// Smallest constant making the bound hold for every degree >= 2 entry.
    pub b0: f64,
    /// First-order constant the caller supplied.
    pub k: f64,
    pub rows: Vec<BoundRow>,
}

/// `1 + sup over first-order coefficient norms`, the natural first-order
/// constant for `catalan_bound_check`.
pub fn suggested_k(norms: &BTreeMap<MultiIndex, f64>) -> f64 {
    1.0 + norms
        .iter()
        .filter(|(alpha, _)| alpha.degree() == 1)
        .map(|(_, &v)| v)
        .fold(0.0, f64::max)
}

/// Fits the smallest `b0` with
/// `norm_a <= sqrt(a!) c_{|a|-1} binom(|a|, a) b0^{|a|-1} k^{|a|}`
/// over every degree >= 2 entry, and reports per-entry slack at that fit.
pub fn catalan_bound_check(norms: &BTreeMap<MultiIndex, f64>, k: f64) -> Result<CatalanBound> {
    if norms.is_empty() {
        return Err(Error::EmptyInput(
            "catalan_bound_check: no coefficient norms supplied".into(),
        ));
    }
    if !(k > 0.0) {
        return Err(Error::Domain(format!(
            "first-order constant must be positive, got {k}"
        )));
    }
    let mut b0_log = f64::NEG_INFINITY;
    for (alpha, &norm) in norms {
        let deg = alpha.degree();
        if deg < 2 || norm <= 0.0 {
            continue;
        }
        let fixed = 0.5 * alpha.factorial_log()
            + catalan_log(deg - 1)
            + alpha.multinomial_log()
            + deg as f64 * k.ln();
        b0_log = b0_log.max((norm.ln() - fixed) / (deg - 1) as f64);
    }
    let b0 = if b0_log == f64::NEG_INFINITY { 0.0 } else { b0_log.exp() };
    let mut rows = Vec::new();
    for (alpha, &norm) in norms {
        let deg = alpha.degree();
        if deg < 2 {
            continue;
        }
        let bound_log = 0.5 * alpha.factorial_log()
            + catalan_log(deg - 1)
            + alpha.multinomial_log()
            + (deg - 1) as f64 * if b0 == 0.0 { f64::NEG_INFINITY } else { b0_log }
            + deg as f64 * k.ln();
        let slack_log = if norm > 0.0 {
            bound_log - norm.ln()
        } else {
            f64::INFINITY
        };
        rows.push(BoundRow {
            alpha: alpha.clone(),
            norm,
            bound_log,
            slack_log,
        });
    }
    Ok(CatalanBound { b0, k, rows })
}

/// Log of the second-quantization factor
/// `kappa_{eps,|a|} (2^{-eps N})^a = exp(-eps e^{|a|}) prod_k 2^{-eps k a_k}`.
pub fn quantize_factor_log(alpha: &MultiIndex, eps: f64) -> f64 {
    let mode_part: f64 = alpha
        .entries()
        .iter()
        .map(|&(k, m)| (k * m) as f64)
        .sum();
    -eps * ((alpha.degree() as f64).exp() + std::f64::consts::LN_2 * mode_part)
}

/// Second-quantization rescale together with the modes whose factors left
/// the representable log-range and were zeroed.
#[derive(Clone, Debug)]
pub struct QuantizeOutcome {
    pub field: ChaosScalar,
    pub zeroed: Vec<MultiIndex>,
}

/// Applies the diagonal contraction `u_a -> kappa_{eps,|a|} (2^{-eps N})^a u_a`.
/// Factors whose log-magnitude exceeds `WEIGHT_LOG_CLAMP` zero the coefficient
/// and are reported in the outcome instead of silently underflowing.
pub fn second_quantize(u: &ChaosScalar, eps: f64) -> Result<QuantizeOutcome> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let mut field = ChaosScalar::new();
    let mut zeroed = Vec::new();
    for (alpha, &c) in u.iter() {
        let flog = quantize_factor_log(alpha, eps);
        if flog < -WEIGHT_LOG_CLAMP {
            zeroed.push(alpha.clone());
            continue;
        }
        field.insert(alpha.clone(), c * flog.exp());
    }
    Ok(QuantizeOutcome { field, zeroed })
}

/// Exact inverse of `second_quantize` on a truncation none of whose factors
/// were clamped; errors where the inverse factor would leave the log-range.
pub fn second_quantize_inverse(u: &ChaosScalar, eps: f64) -> Result<ChaosScalar> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let mut out = ChaosScalar::new();
    for (alpha, &c) in u.iter() {
        let flog = quantize_factor_log(alpha, eps);
        if -flog > WEIGHT_LOG_CLAMP {
            return Err(Error::Domain(format!(
                "cannot invert clamped mode {}: factor log {:.1}",
                alpha.render(),
                flog
            )));
        }
        out.insert(alpha.clone(), c * (-flog).exp());
    }
    Ok(out)
}

/// Diagonal rescale `u_a -> lambda^a u_a` with `lambda^a = prod_k lambda_k^{a_k}`.
/// Every index in the support must carry a positive entry in `lambda`.
pub fn gamma_rescale(u: &ChaosScalar, lambda: &BTreeMap<u32, f64>) -> Result<ChaosScalar> {
    let mut out = ChaosScalar::new();
    for (alpha, &c) in u.iter() {
        let mut factor = 1.0;
        for &(k, m) in alpha.entries() {
            let lk = *lambda.get(&k).ok_or_else(|| {
                Error::Domain(format!("gamma_rescale: no scale supplied for index {k}"))
            })?;
            if !(lk > 0.0) {
                return Err(Error::Domain(format!(
                    "gamma_rescale: scale for index {k} must be positive, got {lk}"
                )));
            }
            factor *= lk.powi(m as i32);
        }
        out.insert(alpha.clone(), c * factor);
    }
    Ok(out)
}

/// Max coefficient deviation between rescaling a Wick product and Wick-multiplying
/// the rescaled factors.  Multiplicativity of `lambda^a` makes this vanish up to
/// rounding; the contract is <= 1e-12 on bounded truncations.
pub fn gamma_rescale_wick_identity_check(
    u: &ChaosScalar,
    v: &ChaosScalar,
    lambda: &BTreeMap<u32, f64>,
) -> Result<f64> {
    let lhs = gamma_rescale(&wick_product_scalar(u, v), lambda)?;
    let rhs = wick_product_scalar(&gamma_rescale(u, lambda)?, &gamma_rescale(v, lambda)?);
    Ok(lhs.max_coeff_diff(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::TruncationSpec;
    use proptest::prelude::*;

    fn idx(pairs: &[(u32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs).unwrap()
    }

    /// Exact Catalan numbers via the integer recursion; c_60 still fits u128.
    fn exact_catalan(n_max: usize) -> Vec<u128> {
        let mut c = vec![0u128; n_max + 1];
        c[0] = 1;
        for n in 1..=n_max {
            c[n] = (0..n).map(|k| c[k] * c[n - 1 - k]).sum();
        }
        c
    }

    #[test]
    fn catalan_small_values() {
        let want = [1.0, 1.0, 2.0, 5.0, 14.0, 42.0, 132.0];
        for (n, &w) in want.iter().enumerate() {
            assert!((catalan(n as u32) - w).abs() <= 1e-12 * w, "n={n}");
        }
    }

    #[test]
    fn catalan_matches_closed_form_to_30() {
        for n in 0..=30u32 {
            let mut binom: u128 = 1;
            for i in 1..=n as u128 {
                binom = binom * (n as u128 + i) / i;
            }
            let closed = (binom / (n as u128 + 1)) as f64;
            let rel = (catalan(n) - closed).abs() / closed;
            assert!(rel <= 1e-9, "n={n}: cache {} vs closed {closed}", catalan(n));
        }
    }

    #[test]
    fn catalan_log_accuracy() {
        let exact = exact_catalan(60);
        for n in [10usize, 30, 45, 60] {
            let diff = (catalan_log(n as u32) - (exact[n] as f64).ln()).abs();
            assert!(diff <= 1e-11, "n={n}: log diff {diff}");
        }
    }

    #[test]
    fn catalan_asymptotic_agreement() {
        // deviation from 4^n / (sqrt(pi) n^{3/2}) shrinks monotonically,
        // sits at 5.6% by n = 19, and is below 5% from n = 22 on
        let exact = exact_catalan(60);
        let dev = |n: usize| {
            let a = 4.0f64.powi(n as i32) / (std::f64::consts::PI.sqrt() * (n as f64).powf(1.5));
            (exact[n] as f64 - a).abs() / a
        };
        for n in 2..60 {
            assert!(dev(n + 1) < dev(n), "deviation not decreasing at n={n}");
        }
        for n in 19..=60 {
            assert!(dev(n) <= 0.06, "n={n}: deviation {}", dev(n));
            if n >= 22 {
                assert!(dev(n) <= 0.05, "n={n}: deviation {}", dev(n));
            }
        }
        // far tail via logs: deviation ~ 9/(8n)
        let n = 200u32;
        let a_log = (n as f64) * 4.0f64.ln()
            - 0.5 * std::f64::consts::PI.ln()
            - 1.5 * (n as f64).ln();
        let dev_tail = ((catalan_log(n) - a_log).exp() - 1.0).abs();
        assert!(dev_tail < 9.0 / (8.0 * n as f64), "tail deviation {dev_tail}");
        assert!(dev_tail > 0.5 * 9.0 / (8.0 * n as f64), "tail deviation {dev_tail}");
    }

    #[test]
    fn kondratiev_weight_examples() {
        // empty index carries weight 1 for any (rho, q)
        assert_eq!(kondratiev_weight_log(&MultiIndex::empty(), -1.0, 2.0), 0.0);
        // rho = -1, q = 1 at eps_2: (1/1!) (2*2)^{-2}
        let w = kondratiev_weight_log(&idx(&[(2, 1)]), -1.0, 1.0);
        assert!((w.exp() - 1.0 / 16.0).abs() < 1e-15);
        // rho = 1 pairs the (2N) factor upward
        let w_up = kondratiev_weight_log(&idx(&[(2, 1)]), 1.0, 1.0);
        assert!((w_up.exp() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn kondratiev_norm_parseval_and_homogeneity() {
        let mut mags = BTreeMap::new();
        mags.insert(MultiIndex::empty(), 0.5);
        mags.insert(idx(&[(1, 1)]), 1.5);
        mags.insert(idx(&[(2, 2)]), 0.25);
        let plain: f64 = mags.values().map(|m| m * m).sum::<f64>().sqrt();
        assert!((kondratiev_norm(&mags, 0.0, 0.0) - plain).abs() < 1e-14);

        let doubled: BTreeMap<_, _> =
            mags.iter().map(|(a, &m)| (a.clone(), 2.0 * m)).collect();
        let n1 = kondratiev_norm(&mags, -1.0, 1.1);
        let n2 = kondratiev_norm(&doubled, -1.0, 1.1);
        assert!((n2 - 2.0 * n1).abs() < 1e-12 * n1.max(1.0));

        // single-coefficient example: |u| / 4 at eps_2 with rho = -1, q = 1
        let mut single = BTreeMap::new();
        single.insert(idx(&[(2, 1)]), 0.8);
        assert!((kondratiev_norm(&single, -1.0, 1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn weight_clamp_keeps_norms_finite() {
        let huge = idx(&[(40, 60)]);
        let raw = kondratiev_weight_log(&huge, 1.0, 3.0);
        assert!(raw > WEIGHT_LOG_CLAMP);
        let mut mags = BTreeMap::new();
        mags.insert(huge, 1.0);
        let n = kondratiev_norm(&mags, 1.0, 3.0);
        assert!(n.is_finite());
        assert!((n.ln() - 0.5 * WEIGHT_LOG_CLAMP).abs() < 1e-9);
    }

    #[test]
    fn bound_check_equality_case() {
        // single row at 2 eps_1 with norm sqrt(2) c_1 k^2 pins b0 = 1, slack 0
        let k = 1.7;
        let mut norms = BTreeMap::new();
        norms.insert(idx(&[(1, 1)]), k - 1.0);
        norms.insert(idx(&[(1, 2)]), 2.0f64.sqrt() * k * k);
        assert!((suggested_k(&norms) - k).abs() < 1e-15);
        let report = catalan_bound_check(&norms, k).unwrap();
        assert!((report.b0 - 1.0).abs() < 1e-12);
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].slack_log.abs() < 1e-12);
    }

    #[test]
    fn bound_check_degenerate_and_monotone() {
        assert!(matches!(
            catalan_bound_check(&BTreeMap::new(), 1.0),
            Err(Error::EmptyInput(_))
        ));

        let mut norms = BTreeMap::new();
        norms.insert(MultiIndex::empty(), 1.0);
        norms.insert(idx(&[(1, 1)]), 0.5);
        norms.insert(idx(&[(1, 2)]), 0.0);
        let report = catalan_bound_check(&norms, 1.5).unwrap();
        assert_eq!(report.b0, 0.0);
        assert!(report.rows[0].slack_log.is_infinite());

        // raising the binding norm raises the fit
        norms.insert(idx(&[(1, 2)]), 1.0);
        let b_lo = catalan_bound_check(&norms, 1.5).unwrap().b0;
        norms.insert(idx(&[(1, 2)]), 2.0);
        let b_hi = catalan_bound_check(&norms, 1.5).unwrap().b0;
        assert!(b_hi > b_lo);
        assert!((b_hi / b_lo - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_check_all_rows_hold_at_fit() {
        let trunc = TruncationSpec::new(4, 3);
        let mut norms = BTreeMap::new();
        for (i, alpha) in trunc.enumerate().into_iter().enumerate() {
            let wobble = 1.0 + 0.3 * ((i as f64 * 2.399).sin());
            norms.insert(alpha.clone(), wobble * 0.7f64.powi(alpha.degree() as i32));
        }
        let k = suggested_k(&norms);
        let report = catalan_bound_check(&norms, k).unwrap();
        assert!(report.b0 > 0.0);
        let min_slack = report
            .rows
            .iter()
            .map(|r| r.slack_log)
            .fold(f64::INFINITY, f64::min);
        assert!(min_slack.abs() < 1e-10, "binding slack {min_slack}");
        assert!(report.rows.iter().all(|r| r.slack_log >= -1e-10));
    }

    #[test]
    fn quantize_factor_examples() {
        let eps = 0.1;
        // empty index: kappa_{eps,0} = e^{-eps}
        let f0 = quantize_factor_log(&MultiIndex::empty(), eps).exp();
        assert!((f0 - (-eps).exp()).abs() < 1e-15);
        // eps_2: e^{-eps e} 2^{-2 eps}
        let f = quantize_factor_log(&idx(&[(2, 1)]), eps).exp();
        let want = (-eps * std::f64::consts::E).exp() * 2.0f64.powf(-0.2);
        assert!((f - want).abs() < 1e-15);
    }

    #[test]
    fn second_quantize_contracts_and_inverts() {
        let eps = 0.35;
        let trunc = TruncationSpec::new(4, 4);
        let mut u = ChaosScalar::new();
        for (i, alpha) in trunc.enumerate().into_iter().enumerate() {
            u.insert(alpha, 1.0 + (i as f64 * 1.618).cos());
        }
        let out = second_quantize(&u, eps).unwrap();
        assert!(out.zeroed.is_empty());
        for (alpha, &c) in out.field.iter() {
            let orig = u.get(alpha);
            assert!(c.abs() < orig.abs(), "no contraction at {}", alpha.render());
        }
        let back = second_quantize_inverse(&out.field, eps).unwrap();
        let rel = back.max_coeff_diff(&u)
            / u.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        assert!(rel <= 1e-12, "roundtrip deviation {rel}");
    }

    #[test]
    fn second_quantize_zeroes_overflowing_modes() {
        let mut u = ChaosScalar::new();
        u.insert(MultiIndex::empty(), 1.0);
        let deep = idx(&[(1, 8)]);
        u.insert(deep.clone(), 1.0);
        // e^8 = 2981 > 600: factor under the representable floor at eps = 1
        let out = second_quantize(&u, 1.0).unwrap();
        assert_eq!(out.zeroed, vec![deep.clone()]);
        assert_eq!(out.field.get(&deep), 0.0);
        assert!(out.field.get(&MultiIndex::empty()) > 0.0);
        // and the lost mode blocks exact inversion
        let mut v = ChaosScalar::new();
        v.insert(deep, 1.0);
        assert!(second_quantize_inverse(&v, 1.0).is_err());
    }

    #[test]
    fn quantize_factor_bookkeeping_is_multiplicative_in_modes() {
        // with kappa stripped, the factor is lambda^a for lambda_k = 2^{-eps k};
        // the kappa correction is exactly exp(-eps (e^{|a|} - e^{|b|} - e^{|a-b|}))
        let eps = 0.4;
        for alpha in TruncationSpec::new(4, 3).enumerate() {
            for beta in alpha.sub_indices() {
                let gamma = alpha.sub_checked(&beta).unwrap();
                let ratio = quantize_factor_log(&alpha, eps)
                    - quantize_factor_log(&beta, eps)
                    - quantize_factor_log(&gamma, eps);
                let kappa = -eps
                    * ((alpha.degree() as f64).exp()
                        - (beta.degree() as f64).exp()
                        - (gamma.degree() as f64).exp());
                assert!((ratio - kappa).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_rescale_examples() {
        let xi1 = ChaosScalar::monomial(idx(&[(1, 1)]), 1.0);
        let xi2 = ChaosScalar::monomial(idx(&[(2, 1)]), 1.0);
        let lambda: BTreeMap<u32, f64> = [(1, 2.0), (2, 3.0)].into_iter().collect();
        // identity scales
        let ones: BTreeMap<u32, f64> = [(1, 1.0), (2, 1.0)].into_iter().collect();
        assert_eq!(
            gamma_rescale_wick_identity_check(&xi1, &xi2, &ones).unwrap(),
            0.0
        );
        // both sides produce 6 xi_{e1+e2}
        let prod = gamma_rescale(&wick_product_scalar(&xi1, &xi2), &lambda).unwrap();
        assert!((prod.get(&idx(&[(1, 1), (2, 1)])) - 6.0).abs() < 1e-15);
        assert!(
            gamma_rescale_wick_identity_check(&xi1, &xi2, &lambda).unwrap() <= 1e-12
        );
        // missing scale is an error
        let partial: BTreeMap<u32, f64> = [(1, 2.0)].into_iter().collect();
        assert!(gamma_rescale(&xi2, &partial).is_err());
    }

    #[test]
    fn select_q_prefers_smallest_workable_exponent() {
        // mags sqrt(n!) g^n on n*eps_1 give level ratios g^2 / 4^q under rho = -1;
        // g = 6 needs 4^q > 36, so only q = 3 qualifies
        let build = |g: f64| {
            let mut mags = BTreeMap::new();
            for n in 0..=8u32 {
                let alpha = if n == 0 {
                    MultiIndex::empty()
                } else {
                    idx(&[(1, n)])
                };
                mags.insert(alpha, (0.5 * ln_factorial(n)).exp() * g.powi(n as i32));
            }
            mags
        };
        let sel = select_q(&build(6.0), -1.0).unwrap();
        assert_eq!(sel.q, 3.0);
        assert!((sel.max_ratio - 36.0 / 64.0).abs() < 1e-9);
        // fast decay already passes at the smallest candidate
        let easy = select_q(&build(0.5), -1.0).unwrap();
        assert_eq!(easy.q, 1.1);
        // too fast growth defeats the whole scan
        assert!(select_q(&build(9.0), -1.0).is_none());
    }

    proptest! {
        #[test]
        fn gamma_rescale_wick_identity_random(
            coeffs_u in proptest::collection::vec((0u8..12, -2.0f64..2.0), 1..5),
            coeffs_v in proptest::collection::vec((0u8..12, -2.0f64..2.0), 1..5),
            scales in proptest::collection::vec(0.2f64..3.0, 3),
        ) {
            let trunc = TruncationSpec::new(4, 3);
            let all = trunc.enumerate();
            let build = |picks: &[(u8, f64)]| {
                let mut u = ChaosScalar::new();
                for &(slot, c) in picks {
                    u.insert(all[slot as usize % all.len()].clone(), c);
                }
                u
            };
            let u = build(&coeffs_u);
            let v = build(&coeffs_v);
            let lambda: BTreeMap<u32, f64> =
                (1..=3u32).zip(scales.iter().copied()).collect();
            let dev = gamma_rescale_wick_identity_check(&u, &v, &lambda).unwrap();
            prop_assert!(dev <= 1e-12, "deviation {dev}");
        }
    }
}
