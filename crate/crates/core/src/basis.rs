//! Product bases of the noise space: orthonormal time modes on `[0, T]`
//! (trigonometric or Haar) tensored with unit directions of a finite
//! noise-component space Y.
//!
//! The flattened modes `e_k = m_{i_k} l_{j_k}` are ordered by
//! `(i_k + j_k, j_k)` ascending, so low time frequencies and low noise
//! components come first. The module also provides composite Gauss-Legendre
//! quadrature aligned with the dyadic breakpoints of the Haar modes,
//! Gauss-Hermite rules for Gaussian moment oracles, deterministic points of
//! the noise space ([`ZPoint`]) with their test actions on an expansion, and
//! the stochastic exponent used to probe solutions by Monte Carlo.

use std::collections::BTreeMap;

use crate::chaos::ChaosScalar;
use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;

pub mod quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBasis {
    /// 1/sqrt(T), then sqrt(2/T) cos(2 pi j t/T) and sqrt(2/T) sin(2 pi j t/T)
    /// with increasing frequency j.
    Trig,
    /// 1/sqrt(T), then the Haar wavelets level by level, positive on the
    /// left half of their support.
    Haar,
}

/// A finite product basis of time modes and noise directions.
#[derive(Debug, Clone)]
pub struct BasisSpec {
    pub horizon: f64,
    pub time_basis: TimeBasis,
    pub n_time: usize,
    pub m_noise: usize,
    /// Number of uniform quadrature cells over `[0, T]`; each cell carries
    /// an 8-point Gauss-Legendre rule.
    pub quad_cells: usize,
    /// k-1 -> (i_k, j_k), both 1-based.
    pairing: Vec<(u32, u32)>,
}

impl BasisSpec {
    pub fn new(
        time_basis: TimeBasis,
        horizon: f64,
        n_time: usize,
        m_noise: usize,
    ) -> Result<Self> {
        let cells = default_cells(time_basis, n_time);
        Self::with_quad_cells(time_basis, horizon, n_time, m_noise, cells)
    }

    pub fn with_quad_cells(
        time_basis: TimeBasis,
        horizon: f64,
        n_time: usize,
        m_noise: usize,
        quad_cells: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if n_time == 0 || m_noise == 0 {
            return Err(Error::EmptyInput("n_time and m_noise must be >= 1".into()));
        }
        let quad_cells = match time_basis {
            TimeBasis::Trig => quad_cells.max(1),
            // align with the finest dyadic breakpoints of the Haar modes
            TimeBasis::Haar => {
                let mut c = 2 * haar_scale(n_time as u32) as usize;
                while c < quad_cells {
                    c *= 2;
                }
                c
            }
        };
        let mut pairs: Vec<(u32, u32)> = (1..=n_time as u32)
            .flat_map(|i| (1..=m_noise as u32).map(move |j| (i, j)))
            .collect();
        pairs.sort_by_key(|&(i, j)| (i + j, j));
        Ok(BasisSpec {
            horizon,
            time_basis,
            n_time,
            m_noise,
            quad_cells,
            pairing: pairs,
        })
    }

    /// Total number of flattened modes.
    pub fn n_modes(&self) -> usize {
        self.n_time * self.m_noise
    }

    /// The (time index, noise index) pair of mode `k` (all 1-based).
    pub fn pairing(&self, k: u32) -> (u32, u32) {
        self.pairing[k as usize - 1]
    }

    /// Inverse of [`BasisSpec::pairing`].
    pub fn mode_index(&self, i: u32, j: u32) -> u32 {
        self.pairing
            .iter()
            .position(|&p| p == (i, j))
            .map(|p| p as u32 + 1)
            .expect("pair within range")
    }

    /// Value of time mode `i` at `t`.
    pub fn eval_time_mode(&self, i: u32, t: f64) -> f64 {
        let tt = self.horizon;
        match self.time_basis {
            TimeBasis::Trig => {
                if i == 1 {
                    1.0 / tt.sqrt()
                } else {
                    let j = (i / 2) as f64;
                    let arg = 2.0 * std::f64::consts::PI * j * t / tt;
                    let amp = (2.0 / tt).sqrt();
                    if i % 2 == 0 {
                        amp * arg.cos()
                    } else {
                        amp * arg.sin()
                    }
                }
            }
            TimeBasis::Haar => {
                if i == 1 {
                    return 1.0 / tt.sqrt();
                }
                let (level, offset) = haar_level_offset(i);
                let scale = (1u32 << level) as f64;
                let x = t / tt * scale - offset as f64;
                // left-limit values at the dyadic breakpoints (right limit at
                // the origin), so a mode vanishes at its own onset and point
                // sampling matches the time integrals it stands in for
                if (x > 0.0 && x <= 0.5) || (x == 0.0 && t == 0.0) {
                    (scale / tt).sqrt()
                } else if x > 0.5 && x <= 1.0 {
                    -(scale / tt).sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// Closed support interval of time mode `i`.
    pub fn time_mode_support(&self, i: u32) -> (f64, f64) {
        match self.time_basis {
            TimeBasis::Trig => (0.0, self.horizon),
            TimeBasis::Haar => {
                if i == 1 {
                    (0.0, self.horizon)
                } else {
                    let (level, offset) = haar_level_offset(i);
                    let w = self.horizon / (1u32 << level) as f64;
                    (offset as f64 * w, (offset as f64 + 1.0) * w)
                }
            }
        }
    }

    /// Y-components of `e_k(t)`: a single nonzero slot `j_k - 1` holding
    /// `m_{i_k}(t)`.
    pub fn eval_e(&self, k: u32, t: f64) -> Vec<f64> {
        let (i, j) = self.pairing(k);
        let mut v = vec![0.0; self.m_noise];
        v[j as usize - 1] = self.eval_time_mode(i, t);
        v
    }

    /// Sparse form of [`BasisSpec::eval_e`]: (noise slot, value).
    pub fn eval_e_sparse(&self, k: u32, t: f64) -> (usize, f64) {
        let (i, j) = self.pairing(k);
        (j as usize - 1, self.eval_time_mode(i, t))
    }

    /// Composite Gauss-Legendre nodes and weights over `[a, b]`, clipped to
    /// the uniform cell grid of `[0, T]` so that Haar breakpoints never fall
    /// inside a cell.
    pub fn quadrature_nodes(&self, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
        if !(a >= 0.0 && b <= self.horizon * (1.0 + 1e-12) && a < b) {
            return Err(Error::Quadrature(format!(
                "invalid interval [{a}, {b}] within [0, {}]",
                self.horizon
            )));
        }
        let b = b.min(self.horizon);
        let h = self.horizon / self.quad_cells as f64;
        let rule = quad::gauss_legendre(8);
        let mut nodes = Vec::new();
        let first_cell = (a / h).floor() as usize;
        let last_cell = ((b / h).ceil() as usize).max(first_cell + 1);
        for c in first_cell..last_cell.min(self.quad_cells).max(first_cell + 1) {
            let lo = (c as f64 * h).max(a);
            let hi = ((c + 1) as f64 * h).min(b);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            for &(x, w) in &rule {
                nodes.push((mid + half * x, half * w));
            }
        }
        Ok(nodes)
    }

    /// Gram matrix `G[i-1][i'-1] = int_0^t m_i m_i' ds` of the time modes.
    pub fn gram_time(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        let nodes = self.quadrature_nodes(0.0, t)?;
        let n = self.n_time;
        let mut g = vec![vec![0.0; n]; n];
        for &(s, w) in &nodes {
            let vals: Vec<f64> = (1..=n as u32).map(|i| self.eval_time_mode(i, s)).collect();
            for i in 0..n {
                if vals[i] == 0.0 {
                    continue;
                }
                for ip in i..n {
                    g[i][ip] += w * vals[i] * vals[ip];
                }
            }
        }
        for i in 0..n {
            for ip in 0..i {
                g[i][ip] = g[ip][i];
            }
        }
        Ok(g)
    }
}

fn default_cells(time_basis: TimeBasis, n_time: usize) -> usize {
    match time_basis {
        TimeBasis::Trig => (2 * n_time).max(16),
        TimeBasis::Haar => (2 * haar_scale(n_time as u32) as usize).max(8),
    }
}

/// Level and offset of Haar mode `i >= 2`: mode 2 is the mother wavelet on
/// the whole interval, modes 3..4 are level 1, 5..8 level 2, ...
fn haar_level_offset(i: u32) -> (u32, u32) {
    debug_assert!(i >= 2);
    let r = i - 1;
    let level = 31 - r.leading_zeros();
    (level, r - (1 << level))
}

/// The dyadic scale 2^level of the finest mode among `1..=n_time`.
fn haar_scale(n_time: u32) -> u32 {
    if n_time <= 1 {
        1
    } else {
        1 << haar_level_offset(n_time).0
    }
}

/// A deterministic point of the noise space given by its coordinates
/// against the flattened basis: `e_z = sum_k z_k e_k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZPoint {
    entries: BTreeMap<u32, f64>,
}

impl ZPoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        ZPoint {
            entries: pairs.into_iter().filter(|&(_, z)| z != 0.0).collect(),
        }
    }

    pub fn get(&self, k: u32) -> f64 {
        self.entries.get(&k).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u32, &f64)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `z^a = prod_k z_k^(a_k)`; zero for support outside the point.
    pub fn pow(&self, a: &MultiIndex) -> f64 {
        let mut acc = 1.0;
        for &(k, m) in a.entries() {
            acc *= self.get(k).powi(m as i32);
            if acc == 0.0 {
                return 0.0;
            }
        }
        acc
    }

    /// Squared l2 norm of the coordinates.
    pub fn norm_sq(&self) -> f64 {
        self.entries.values().map(|z| z * z).sum()
    }
}

/// The degree-m test action of an expansion at a point z:
/// `sum_{|a| = m} u_a z^a / sqrt(a!)`.
pub fn test_action(u: &ChaosScalar, m: u32, z: &ZPoint) -> f64 {
    u.iter()
        .filter(|(a, _)| a.degree() == m)
        .map(|(a, &c)| c * z.pow(a) * (-0.5 * a.factorial_log()).exp())
        .sum()
}

/// Monte-Carlo-evaluable stochastic exponent
/// `p_t(z) = exp(int_0^t e_z dW - 1/2 int_0^t |e_z|^2 ds)`
/// for a path sampled through its basis projections `g[k-1] = W(e_k)`.
/// At `t = T` this is `exp(sum_k z_k g_k - 1/2 sum_k z_k^2)`; for `t < T`
/// the indicator-restricted integrand is re-projected onto the basis, which
/// is exact when the time modes resolve the restriction (e.g. Haar modes
/// with dyadic `t`).
pub fn stochastic_exponent(
    z: &ZPoint,
    t: f64,
    samples: &[f64],
    basis: &BasisSpec,
) -> Result<f64> {
    if z.is_empty() {
        return Ok(1.0);
    }
    let at_horizon = (t - basis.horizon).abs() <= 1e-12 * basis.horizon;
    let mut ito = 0.0;
    let mut quadratic = 0.0;
    if at_horizon {
        for (&k, &zk) in z.iter() {
            let g = samples
                .get(k as usize - 1)
                .ok_or(Error::MissingSample { index: k })?;
            ito += zk * g;
            quadratic += zk * zk;
        }
    } else {
        let gram = basis.gram_time(t)?;
        // c_k = sum_l z_l G[i_l][i_k] delta_{j_l j_k}
        for k in 1..=basis.n_modes() as u32 {
            let (ik, jk) = basis.pairing(k);
            let mut ck = 0.0;
            for (&l, &zl) in z.iter() {
                let (il, jl) = basis.pairing(l);
                if jl == jk {
                    ck += zl * gram[il as usize - 1][ik as usize - 1];
                }
            }
            if ck != 0.0 {
                let g = samples
                    .get(k as usize - 1)
                    .ok_or(Error::MissingSample { index: k })?;
                ito += ck * g;
            }
        }
        for (&l, &zl) in z.iter() {
            let (il, jl) = basis.pairing(l);
            for (&lp, &zlp) in z.iter() {
                let (ilp, jlp) = basis.pairing(lp);
                if jl == jlp {
                    quadratic += zl * zlp * gram[il as usize - 1][ilp as usize - 1];
                }
            }
        }
    }
    Ok((ito - 0.5 * quadratic).exp())
}

/// Projects a Y-valued function of time onto the first `n` flattened modes:
/// `z_k = int_0^T (h(s), e_k(s))_Y ds`. Returns the point and the L2
/// residual of the projection.
pub fn approximate_h<F>(h: F, basis: &BasisSpec, n: usize) -> Result<(ZPoint, f64)>
where
    F: Fn(f64) -> Vec<f64>,
{
    if n > basis.n_modes() {
        return Err(Error::Domain(format!(
            "requested {n} modes, basis has {}",
            basis.n_modes()
        )));
    }
    let nodes = basis.quadrature_nodes(0.0, basis.horizon)?;
    let mut z = vec![0.0; n];
    let mut h_norm_sq = 0.0;
    for &(s, w) in &nodes {
        let hv = h(s);
        if hv.len() != basis.m_noise {
            return Err(Error::DimensionMismatch(format!(
                "h(s) has {} components, expected {}",
                hv.len(),
                basis.m_noise
            )));
        }
        h_norm_sq += w * hv.iter().map(|x| x * x).sum::<f64>();
        for (k, zk) in z.iter_mut().enumerate() {
            let (slot, val) = basis.eval_e_sparse(k as u32 + 1, s);
            *zk += w * hv[slot] * val;
        }
    }
    let proj_sq: f64 = z.iter().map(|x| x * x).sum();
    let residual = (h_norm_sq - proj_sq).max(0.0).sqrt();
    Ok((
        ZPoint::from_pairs(z.into_iter().enumerate().map(|(k, v)| (k as u32 + 1, v))),
        residual,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trig(n_time: usize, m_noise: usize) -> BasisSpec {
        BasisSpec::new(TimeBasis::Trig, 1.0, n_time, m_noise).unwrap()
    }

    fn haar(n_time: usize, m_noise: usize) -> BasisSpec {
        BasisSpec::new(TimeBasis::Haar, 1.0, n_time, m_noise).unwrap()
    }

    #[test]
    fn pairing_orders_by_total_then_noise() {
        let b = trig(2, 2);
        assert_eq!(b.pairing(1), (1, 1));
        assert_eq!(b.pairing(2), (2, 1));
        assert_eq!(b.pairing(3), (1, 2));
        assert_eq!(b.pairing(4), (2, 2));
        for k in 1..=4 {
            let (i, j) = b.pairing(k);
            assert_eq!(b.mode_index(i, j), k);
        }
    }

    #[test]
    fn time_modes_orthonormal_trig_and_haar() {
        for basis in [trig(20, 1), haar(20, 1)] {
            let nodes = basis.quadrature_nodes(0.0, 1.0).unwrap();
            for i in 1..=20u32 {
                for l in i..=20u32 {
                    let mut dot = 0.0;
                    for &(s, w) in &nodes {
                        dot += w * basis.eval_time_mode(i, s) * basis.eval_time_mode(l, s);
                    }
                    let target = if i == l { 1.0 } else { 0.0 };
                    assert!(
                        (dot - target).abs() < 1e-10,
                        "{:?} <m_{i}, m_{l}> = {dot}",
                        basis.time_basis
                    );
                }
            }
        }
    }

    #[test]
    fn haar_supports_and_signs() {
        let b = haar(8, 1);
        assert_eq!(b.time_mode_support(1), (0.0, 1.0));
        assert_eq!(b.time_mode_support(2), (0.0, 1.0));
        assert_eq!(b.time_mode_support(3), (0.0, 0.5));
        assert_eq!(b.time_mode_support(4), (0.5, 1.0));
        assert_eq!(b.time_mode_support(5), (0.0, 0.25));
        assert_eq!(b.time_mode_support(8), (0.75, 1.0));
        // positive on the left half of the support
        assert!(b.eval_time_mode(4, 0.6) > 0.0);
        assert!(b.eval_time_mode(4, 0.9) < 0.0);
        assert_eq!(b.eval_time_mode(4, 0.3), 0.0);
        // value scale: level-1 wavelet has |value| sqrt(2)
        assert!((b.eval_time_mode(4, 0.6) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn quadrature_integrates_smooth_functions() {
        let b = trig(4, 1);
        let nodes = b.quadrature_nodes(0.0, 1.0).unwrap();
        let total: f64 = nodes.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-13);
        let integral: f64 = nodes.iter().map(|&(x, w)| w * x.exp()).sum();
        assert!((integral - (1f64.exp() - 1.0)).abs() < 1e-12);
        // partial interval
        let nodes = b.quadrature_nodes(0.25, 0.75).unwrap();
        let integral: f64 = nodes.iter().map(|&(x, w)| w * x).sum();
        assert!((integral - 0.25).abs() < 1e-13);
    }

    #[test]
    fn test_action_selects_degree_level() {
        let e1 = MultiIndex::unit(1);
        let u = ChaosScalar::from_pairs([
            (MultiIndex::empty(), 5.0),
            (e1.clone(), 2.0),
            (MultiIndex::from_pairs(&[(1, 2)]).unwrap(), 3.0),
        ]);
        let z = ZPoint::from_pairs([(1, 0.5)]);
        assert!((test_action(&u, 0, &z) - 5.0).abs() < 1e-14);
        assert!((test_action(&u, 1, &z) - 2.0 * 0.5).abs() < 1e-14);
        // degree 2: 3 * z^2 / sqrt(2!)
        let expect = 3.0 * 0.25 / 2f64.sqrt();
        assert!((test_action(&u, 2, &z) - expect).abs() < 1e-14);
    }

    #[test]
    fn stochastic_exponent_horizon_form() {
        let b = trig(2, 1);
        let z = ZPoint::from_pairs([(1, 0.7), (2, -0.3)]);
        let g = [1.1, 0.4];
        let p = stochastic_exponent(&z, 1.0, &g, &b).unwrap();
        let expect = (0.7f64 * 1.1 - 0.3 * 0.4 - 0.5 * (0.49 + 0.09)).exp();
        assert!((p - expect).abs() < 1e-12);
        // missing sample surfaces as an error
        assert!(stochastic_exponent(&z, 1.0, &g[..1], &b).is_err());
    }

    #[test]
    fn stochastic_exponent_haar_restriction_exact() {
        // With Haar modes and dyadic t, restricting e_z = z1 e1 (constant
        // mode) to [0, 1/2] is exactly representable: the restricted
        // integral is z1 * (W(e1) + W(e3)) / ... computed via the Gram.
        let b = haar(4, 1);
        let z = ZPoint::from_pairs([(1, 1.0)]);
        let g = [0.3, -0.2, 0.9, 0.1];
        let p = stochastic_exponent(&z, 0.5, &g, &b).unwrap();
        // 1_{[0,1/2]} * 1 = (1/2) m1 + (1/(2 sqrt1)) m2 ... in the Haar
        // system: coefficients <1_{[0,.5]}, m_i>: m1: 0.5, m2: 0.5, m3:
        // int_0^.5 sqrt2 on [0,.25] minus sqrt2 on [.25,.5] = 0, m4: 0.
        let ito = 0.5 * g[0] + 0.5 * g[1];
        let quad = 0.5; // int_0^0.5 1^2
        assert!((p - (ito - 0.5 * quad).exp()).abs() < 1e-10);
    }

    #[test]
    fn approximate_h_projects_and_reports_residual() {
        let b = trig(8, 1);
        // h(s) = m_2(s): projection exact, residual ~ 0
        let (z, res) = approximate_h(|s| vec![b.eval_time_mode(2, s)], &b, 8).unwrap();
        assert!((z.get(2) - 1.0).abs() < 1e-10);
        assert!(res < 1e-8);
        // a function outside the span keeps a residual
        let (_, res) = approximate_h(|s| vec![(20.0 * s).tanh()], &b, 4).unwrap();
        assert!(res > 1e-3);
    }

    proptest! {
        #[test]
        fn quadrature_partitions_and_mode_integrals_obey_bessel(
            lo in 0.0f64..0.9,
            len in 0.01f64..0.9,
            haar in proptest::bool::ANY,
        ) {
            let b = if haar {
                BasisSpec::new(TimeBasis::Haar, 1.0, 4, 1).unwrap()
            } else {
                trig(4, 1)
            };
            let hi = (lo + len).min(1.0);
            let nodes = b.quadrature_nodes(lo, hi).unwrap();
            let total: f64 = nodes.iter().map(|&(_, w)| w).sum();
            prop_assert!((total - (hi - lo)).abs() <= 1e-12);
            for &(s, w) in &nodes {
                prop_assert!(w > 0.0);
                prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
            }
            // the mode integrals are coefficients of the indicator: their
            // squares can never exceed its squared length
            let sq: f64 = (1..=b.n_modes() as u32)
                .map(|k| {
                    nodes
                        .iter()
                        .map(|&(s, w)| w * b.eval_time_mode(k, s))
                        .sum::<f64>()
                        .powi(2)
                })
                .sum();
            prop_assert!(sq <= (hi - lo) * (1.0 + 1e-9) + 1e-12);
        }
    }
}
