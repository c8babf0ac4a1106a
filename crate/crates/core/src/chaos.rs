//! Truncated Hermite-chaos expansions and their algebra.
//!
//! A scalar random variable with finite variance is represented by the map
//! `a -> u_a` of its coefficients against the orthonormal functionals
//! `xi_a = prod_k H_{a_k}(W(e_k)) / sqrt(a!)` built from probabilists'
//! Hermite polynomials of independent standard Gaussians. The module
//! implements the Wick product, the E-paired Wick product, the ordinary
//! (pointwise) product linearization, Malliavin derivatives, Skorokhod
//! integral coefficients against a time-noise basis, and plain evaluation at
//! sampled Gaussians.
//!
//! Products of truncated expansions can leave the truncation; the `_trunc`
//! variants report the discarded coefficient mass instead of dropping it
//! silently.

use std::collections::BTreeMap;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::multiindex::{chaos_binomial_sqrt, ln_factorial, wick_weight, MultiIndex};

/// Coefficients with absolute value below this are dropped from storage.
pub const DROP_TOL: f64 = 1e-14;

/// Evaluates the probabilists' Hermite polynomial H_n at x via the
/// three-term recurrence H_{n+1} = x H_n - n H_{n-1}.
pub fn hermite_eval(n: u32, x: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut hm, mut h) = (1.0, x);
            for m in 1..n {
                let next = x * h - m as f64 * hm;
                hm = h;
                h = next;
            }
            h
        }
    }
}

/// Monomial coefficient rows of H_0..H_nmax: row n holds the coefficients of
/// x^0..x^n. Used by oracles that need the polynomials in closed form.
pub fn hermite_table(nmax: u32) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
    if nmax == 0 {
        return rows;
    }
    rows.push(vec![0.0, 1.0]);
    for n in 1..nmax {
        let n = n as usize;
        let mut next = vec![0.0; n + 2];
        for (p, &c) in rows[n].iter().enumerate() {
            next[p + 1] += c; // x * H_n
        }
        for (p, &c) in rows[n - 1].iter().enumerate() {
            next[p] -= n as f64 * c; // - n H_{n-1}
        }
        rows.push(next);
    }
    rows
}

/// Evaluates `xi_a` at a vector of sampled Gaussians, `g[k-1] = W(e_k)`.
pub fn xi_eval(a: &MultiIndex, g: &[f64]) -> Result<f64> {
    let mut acc = 1.0;
    for &(k, m) in a.entries() {
        let x = *g
            .get(k as usize - 1)
            .ok_or(Error::MissingSample { index: k })?;
        acc *= hermite_eval(m, x) * (-0.5 * ln_factorial(m)).exp();
    }
    Ok(acc)
}

/// A finite chaos expansion of a scalar quantity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChaosScalar {
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl ChaosScalar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut u = ChaosScalar::new();
        for (a, c) in pairs {
            u.insert(a, c);
        }
        u
    }

    /// A deterministic constant (all mass at the empty multiindex).
    pub fn constant(c: f64) -> Self {
        Self::from_pairs([(MultiIndex::empty(), c)])
    }

    /// A single basis functional with coefficient `c`.
    pub fn monomial(a: MultiIndex, c: f64) -> Self {
        Self::from_pairs([(a, c)])
    }

    /// Adds `c` to the coefficient at `a`, dropping the entry if the result
    /// falls below [`DROP_TOL`].
    pub fn insert(&mut self, a: MultiIndex, c: f64) {
        match self.coeffs.entry(a) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = e.get_mut();
                *v += c;
                if v.abs() < DROP_TOL {
                    e.remove();
                }
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                if c.abs() >= DROP_TOL {
                    e.insert(c);
                }
            }
        }
    }

    pub fn get(&self, a: &MultiIndex) -> f64 {
        self.coeffs.get(a).copied().unwrap_or(0.0)
    }

    /// Expectation: the coefficient at the empty multiindex.
    pub fn expectation(&self) -> f64 {
        self.get(&MultiIndex::empty())
    }

    pub fn coeffs(&self) -> &BTreeMap<MultiIndex, f64> {
        &self.coeffs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &f64)> {
        self.coeffs.iter()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.coeffs.keys().map(|a| a.degree()).max().unwrap_or(0)
    }

    /// l2 norm of the coefficient vector; by orthonormality this is the
    /// standard deviation-like magnitude sqrt(E[u^2]).
    pub fn norm_l2(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> ChaosScalar {
        ChaosScalar {
            coeffs: self
                .coeffs
                .iter()
                .filter(|(_, &c)| (c * s).abs() >= DROP_TOL)
                .map(|(a, &c)| (a.clone(), c * s))
                .collect(),
        }
    }

    pub fn add(&self, other: &ChaosScalar) -> ChaosScalar {
        let mut out = self.clone();
        for (a, &c) in other.iter() {
            out.insert(a.clone(), c);
        }
        out
    }

    /// Removes coefficients smaller than `tol` in absolute value.
    pub fn prune(&mut self, tol: f64) {
        self.coeffs.retain(|_, c| c.abs() >= tol);
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_coeff_diff(&self, other: &ChaosScalar) -> f64 {
        let mut d: f64 = 0.0;
        for (a, &c) in self.iter() {
            d = d.max((c - other.get(a)).abs());
        }
        for (a, &c) in other.iter() {
            d = d.max((c - self.get(a)).abs());
        }
        d
    }

    /// Evaluates the expansion at sampled Gaussians.
    pub fn eval(&self, g: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (a, &c) in self.iter() {
            acc += c * xi_eval(a, g)?;
        }
        Ok(acc)
    }
}

/// A chaos expansion with vector-valued coefficients of a fixed width
/// (Y-components of a noise-space-valued quantity, or flattened tensor
/// components of an iterated Malliavin derivative).
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosVector {
    width: usize,
    coeffs: BTreeMap<MultiIndex, Vec<f64>>,
}

impl ChaosVector {
    pub fn new(width: usize) -> Self {
        ChaosVector {
            width,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &BTreeMap<MultiIndex, Vec<f64>> {
        &self.coeffs
    }

    pub fn get(&self, a: &MultiIndex) -> Option<&[f64]> {
        self.coeffs.get(a).map(|v| v.as_slice())
    }

    /// Adds `c` to component `slot` of the coefficient at `a`.
    pub fn insert_component(&mut self, a: MultiIndex, slot: usize, c: f64) {
        assert!(slot < self.width);
        let v = self
            .coeffs
            .entry(a)
            .or_insert_with(|| vec![0.0; self.width]);
        v[slot] += c;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &Vec<f64>)> {
        self.coeffs.iter()
    }

    /// Removes coefficients whose every component is below `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.coeffs.retain(|_, v| v.iter().any(|c| c.abs() >= tol));
    }
}

fn prune_result(mut coeffs: BTreeMap<MultiIndex, f64>) -> ChaosScalar {
    coeffs.retain(|_, c| c.abs() >= DROP_TOL);
    ChaosScalar { coeffs }
}

/// Wick product of scalar expansions:
/// `(u <> v)_(a+b) += u_a v_b sqrt((a+b)!/(a! b!))`.
pub fn wick_product_scalar(u: &ChaosScalar, v: &ChaosScalar) -> ChaosScalar {
    let (out, dropped) = wick_product_scalar_trunc(u, v, u32::MAX);
    debug_assert_eq!(dropped, 0.0);
    out
}

/// Wick product truncated at `max_degree`; the second return value is the
/// absolute coefficient mass that fell above the truncation.
pub fn wick_product_scalar_trunc(
    u: &ChaosScalar,
    v: &ChaosScalar,
    max_degree: u32,
) -> (ChaosScalar, f64) {
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    let mut dropped = 0.0;
    for (a, &ua) in u.iter() {
        for (b, &vb) in v.iter() {
            let c = ua * vb * wick_weight(a, b);
            if a.degree() + b.degree() > max_degree {
                dropped += c.abs();
                continue;
            }
            *out.entry(a.add(b)).or_insert(0.0) += c;
        }
    }
    (prune_result(out), dropped)
}

/// E-paired Wick product of vector expansions of equal width:
/// `c_a = sum_{b <= a} <u_b, v_(a-b)>_E sqrt(a!/(b! (a-b)!))`.
pub fn wick_product_paired(u: &ChaosVector, v: &ChaosVector) -> Result<ChaosScalar> {
    if u.width != v.width {
        return Err(Error::DimensionMismatch(format!(
            "paired Wick product widths {} vs {}",
            u.width, v.width
        )));
    }
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for (b, ub) in u.iter() {
        for (g, vg) in v.iter() {
            let dot: f64 = ub.iter().zip(vg).map(|(x, y)| x * y).sum();
            if dot == 0.0 {
                continue;
            }
            let a = b.add(g);
            let w = chaos_binomial_sqrt(&a, b).expect("b <= b+g always");
            *out.entry(a).or_insert(0.0) += dot * w;
        }
    }
    Ok(prune_result(out))
}

/// Linearization weight of the pointwise Hermite product:
/// `xi_t xi_k = sum_{p <= t /\ k} sqrt(C(t,p) C(k,p) C(t+k-2p, k-p)) xi_(t+k-2p)`.
fn ordinary_weight(t: &MultiIndex, k: &MultiIndex, p: &MultiIndex) -> f64 {
    let tp = t.sub_checked(p).expect("p <= t");
    let kp = k.sub_checked(p).expect("p <= k");
    let target = tp.add(&kp);
    let log_w = (t.factorial_log() + k.factorial_log() + target.factorial_log()) * 0.5
        - p.factorial_log()
        - tp.factorial_log()
        - kp.factorial_log();
    log_w.exp()
}

/// Ordinary (pointwise) product of expansions.
pub fn ordinary_product(u: &ChaosScalar, v: &ChaosScalar) -> ChaosScalar {
    ordinary_product_trunc(u, v, u32::MAX).0
}

/// Ordinary product truncated at `max_degree`, reporting the dropped mass.
pub fn ordinary_product_trunc(
    u: &ChaosScalar,
    v: &ChaosScalar,
    max_degree: u32,
) -> (ChaosScalar, f64) {
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    let mut dropped = 0.0;
    for (t, &ut) in u.iter() {
        for (k, &vk) in v.iter() {
            let meet = t.min_with(k);
            for p in meet.sub_indices() {
                let c = ut * vk * ordinary_weight(t, k, &p);
                let target = t
                    .sub_checked(&p)
                    .unwrap()
                    .add(&k.sub_checked(&p).unwrap());
                if target.degree() > max_degree {
                    dropped += c.abs();
                    continue;
                }
                *out.entry(target).or_insert(0.0) += c;
            }
        }
    }
    (prune_result(out), dropped)
}

/// First-order Malliavin derivative of a scalar expansion. The result has
/// width `basis_dim`; its a-coefficient's k-th component is
/// `sqrt(a_k + 1) u_(a + e_k)`.
pub fn malliavin(u: &ChaosScalar, basis_dim: usize) -> Result<ChaosVector> {
    let mut out = ChaosVector::new(basis_dim);
    for (mu, &c) in u.iter() {
        if mu.max_index() as usize > basis_dim {
            return Err(Error::DimensionMismatch(format!(
                "support index {} exceeds basis_dim {}",
                mu.max_index(),
                basis_dim
            )));
        }
        for &(k, m) in mu.entries() {
            let lowered = mu.lower(k).expect("m >= 1");
            out.insert_component(lowered, k as usize - 1, (m as f64).sqrt() * c);
        }
    }
    out.prune(DROP_TOL);
    Ok(out)
}

/// One more Malliavin derivative of an already vector-valued expansion; the
/// payload widens from w to w*basis_dim with the new slot appended last
/// (flattened index `old*basis_dim + (k-1)`).
pub fn malliavin_vector(u: &ChaosVector, basis_dim: usize) -> ChaosVector {
    let mut out = ChaosVector::new(u.width() * basis_dim);
    for (mu, payload) in u.iter() {
        for &(k, m) in mu.entries() {
            let lowered = mu.lower(k).expect("m >= 1");
            let s = (m as f64).sqrt();
            for (old, &c) in payload.iter().enumerate() {
                if c != 0.0 {
                    out.insert_component(
                        lowered.clone(),
                        old * basis_dim + (k as usize - 1),
                        s * c,
                    );
                }
            }
        }
    }
    out.prune(DROP_TOL);
    out
}

/// Pointwise product computed through the Wick/Malliavin ladder
/// `u v = sum_{n=0}^{N} (D^n u <> D^n v) / n!`, contracting the n-th
/// derivatives componentwise over the `basis_dim^n` flattened tensor slots.
/// With `n_terms >= min(deg u, deg v)` this equals [`ordinary_product`].
pub fn product_via_wick_malliavin(
    u: &ChaosScalar,
    v: &ChaosScalar,
    n_terms: u32,
    basis_dim: usize,
) -> Result<ChaosScalar> {
    let mut acc = wick_product_scalar(u, v);
    let mut du = malliavin(u, basis_dim)?;
    let mut dv = malliavin(v, basis_dim)?;
    let mut n_fact_log = 0.0;
    for n in 1..=n_terms {
        if du.is_empty() || dv.is_empty() {
            break;
        }
        n_fact_log += (n as f64).ln();
        let term = wick_product_paired(&du, &dv)?;
        acc = acc.add(&term.scale((-n_fact_log).exp()));
        if n < n_terms {
            du = malliavin_vector(&du, basis_dim);
            dv = malliavin_vector(&dv, basis_dim);
        }
    }
    acc.prune(DROP_TOL);
    Ok(acc)
}

/// Chaos coefficients of the Skorokhod integral over `[0, t]` of a
/// noise-space-valued integrand given by its expansion at each time,
/// `delta_a = sum_k sqrt(a_k) int_0^t (v_(a - e_k)(s), e_k(s))_Y ds`,
/// integrated with the basis' composite quadrature.
pub fn skorokhod_coeffs<F>(v: F, t: f64, basis: &BasisSpec) -> Result<ChaosScalar>
where
    F: Fn(f64) -> ChaosVector,
{
    let nodes = basis.quadrature_nodes(0.0, t)?;
    let n_modes = basis.n_modes();
    let mut out: BTreeMap<MultiIndex, f64> = BTreeMap::new();
    for &(s, w) in &nodes {
        let vs = v(s);
        if vs.width() != basis.m_noise {
            return Err(Error::DimensionMismatch(format!(
                "integrand width {} vs m_noise {}",
                vs.width(),
                basis.m_noise
            )));
        }
        let time_vals: Vec<f64> = (1..=basis.n_time)
            .map(|i| basis.eval_time_mode(i as u32, s))
            .collect();
        for (b, payload) in vs.iter() {
            for k in 1..=n_modes {
                let (i, j) = basis.pairing(k as u32);
                let y = payload[j as usize - 1];
                if y == 0.0 {
                    continue;
                }
                let m = time_vals[i as usize - 1];
                if m == 0.0 {
                    continue;
                }
                let a = b.raise(k as u32);
                let sqrt_ak = (a.get(k as u32) as f64).sqrt();
                *out.entry(a).or_insert(0.0) += w * sqrt_ak * y * m;
            }
        }
    }
    Ok(prune_result(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::TruncationSpec;
    use proptest::prelude::*;

    fn mi(pairs: &[(u32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs).unwrap()
    }

    #[test]
    fn hermite_recurrence_known_values() {
        // H_2 = x^2 - 1, H_3 = x^3 - 3x, H_4 = x^4 - 6x^2 + 3
        assert_eq!(hermite_eval(2, 2.0), 3.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
        assert_eq!(hermite_eval(4, 2.0), 16.0 - 24.0 + 3.0);
        let t = hermite_table(4);
        assert_eq!(t[2], vec![-1.0, 0.0, 1.0]);
        assert_eq!(t[3], vec![0.0, -3.0, 0.0, 1.0]);
        assert_eq!(t[4], vec![3.0, 0.0, -6.0, 0.0, 1.0]);
        // table agrees with the recurrence evaluator
        for n in 0..=4u32 {
            for &x in &[-1.7f64, 0.3, 2.9] {
                let poly: f64 = t[n as usize]
                    .iter()
                    .enumerate()
                    .map(|(p, c)| c * x.powi(p as i32))
                    .sum();
                assert!((poly - hermite_eval(n, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn xi_eval_normalization() {
        let a = mi(&[(1, 2)]);
        // xi_{2e1}(x) = H_2(x)/sqrt(2)
        let x = 1.3;
        assert!((xi_eval(&a, &[x]).unwrap() - (x * x - 1.0) / 2f64.sqrt()).abs() < 1e-14);
        assert!(matches!(
            xi_eval(&mi(&[(3, 1)]), &[0.0, 0.0]),
            Err(Error::MissingSample { index: 3 })
        ));
    }

    #[test]
    fn wick_product_basics() {
        let e1 = MultiIndex::unit(1);
        let u = ChaosScalar::monomial(e1.clone(), 1.0);
        let w = wick_product_scalar(&u, &u);
        // xi_1 <> xi_1 = sqrt(2) xi_{2e1}
        assert!((w.get(&mi(&[(1, 2)])) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(w.len(), 1);
        // constants multiply plainly
        let c = ChaosScalar::constant(3.0);
        let w = wick_product_scalar(&c, &u);
        assert!((w.get(&e1) - 3.0).abs() < 1e-14);
        // truncation reports mass
        let (w, dropped) = wick_product_scalar_trunc(&u, &u, 1);
        assert!(w.is_empty());
        assert!((dropped - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn wick_zero_mode_factorizes() {
        // the expectation of a Wick product is the product of expectations
        let u = ChaosScalar::from_pairs([
            (MultiIndex::empty(), 2.0),
            (MultiIndex::unit(1), 0.7),
            (mi(&[(2, 2)]), -0.4),
        ]);
        let v = ChaosScalar::from_pairs([
            (MultiIndex::empty(), -1.5),
            (MultiIndex::unit(2), 0.3),
        ]);
        let w = wick_product_scalar(&u, &v);
        assert!((w.expectation() - u.expectation() * v.expectation()).abs() < 1e-14);
    }

    #[test]
    fn ordinary_product_single_variable_oracle() {
        // H_1 H_1 = H_2 + 1, in normalized form xi_1 xi_1 = sqrt2 xi_2 + 1
        let u = ChaosScalar::monomial(MultiIndex::unit(1), 1.0);
        let p = ordinary_product(&u, &u);
        assert!((p.get(&mi(&[(1, 2)])) - 2f64.sqrt()).abs() < 1e-14);
        assert!((p.expectation() - 1.0).abs() < 1e-14);
        assert_eq!(p.len(), 2);

        // H_2 H_2 = H_4 + 4 H_2 + 2: in xi form (H_n = sqrt(n!) xi_n):
        // 2 xi_2 xi_2 = sqrt(24) xi_4 + 4 sqrt2 xi_2 + 2
        let h2 = ChaosScalar::monomial(mi(&[(1, 2)]), 2f64.sqrt());
        let p = ordinary_product(&h2, &h2);
        assert!((p.get(&mi(&[(1, 4)])) - 24f64.sqrt()).abs() < 1e-13);
        assert!((p.get(&mi(&[(1, 2)])) - 4.0 * 2f64.sqrt()).abs() < 1e-13);
        assert!((p.expectation() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn ordinary_product_independent_variables() {
        // xi_{e1} xi_{e2} = xi_{e1+e2} exactly (disjoint supports, p = 0 only)
        let u = ChaosScalar::monomial(MultiIndex::unit(1), 1.0);
        let v = ChaosScalar::monomial(MultiIndex::unit(2), 1.0);
        let p = ordinary_product(&u, &v);
        assert_eq!(p.len(), 1);
        assert!((p.get(&mi(&[(1, 1), (2, 1)])) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ordinary_product_identity_element() {
        let u = ChaosScalar::from_pairs([
            (MultiIndex::empty(), 0.3),
            (mi(&[(1, 1), (3, 2)]), -1.2),
            (mi(&[(2, 3)]), 0.8),
        ]);
        let one = ChaosScalar::constant(1.0);
        let p = ordinary_product(&u, &one);
        assert!(p.max_coeff_diff(&u) < 1e-14);
    }

    #[test]
    fn malliavin_lowers_degree_with_sqrt_weights() {
        // D(xi_{2e1}) = sqrt(2) xi_{e1} e_1
        let u = ChaosScalar::monomial(mi(&[(1, 2)]), 1.0);
        let d = malliavin(&u, 2).unwrap();
        let at_e1 = d.get(&MultiIndex::unit(1)).unwrap();
        assert!((at_e1[0] - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(at_e1[1], 0.0);
        // constants have zero derivative
        let d = malliavin(&ChaosScalar::constant(5.0), 2).unwrap();
        assert!(d.is_empty());
        // insufficient width is an error
        assert!(malliavin(&ChaosScalar::monomial(mi(&[(3, 1)]), 1.0), 2).is_err());
    }

    #[test]
    fn malliavin_expectation_is_deterministic_gradient() {
        // E[D xi_mu] has k-component sqrt(mu_k) 1_{mu = e_k}
        let u = ChaosScalar::from_pairs([
            (MultiIndex::unit(1), 2.0),
            (MultiIndex::unit(3), -0.5),
            (mi(&[(1, 1), (2, 1)]), 9.0),
        ]);
        let d = malliavin(&u, 3).unwrap();
        let at_empty = d.get(&MultiIndex::empty()).unwrap();
        assert_eq!(at_empty, &[2.0, 0.0, -0.5]);
    }

    #[test]
    fn product_identity_small_cases() {
        // spec'd case: (xi_{2e1}, xi_{2e1}) with enough ladder terms matches
        // the ordinary product exactly
        let u = ChaosScalar::monomial(mi(&[(1, 2)]), 1.0);
        let via_ladder = product_via_wick_malliavin(&u, &u, 3, 1).unwrap();
        let direct = ordinary_product(&u, &u);
        assert!(via_ladder.max_coeff_diff(&direct) < 1e-13);

        // mixed-support case
        let a = ChaosScalar::monomial(mi(&[(1, 1), (2, 1)]), 1.0);
        let b = ChaosScalar::monomial(mi(&[(1, 2)]), 1.0);
        let via_ladder = product_via_wick_malliavin(&a, &b, 2, 2).unwrap();
        let direct = ordinary_product(&a, &b);
        assert!(via_ladder.max_coeff_diff(&direct) < 1e-13);
    }

    #[test]
    fn product_identity_exhaustive_degree_two() {
        let trunc = TruncationSpec::new(2, 2);
        for t in trunc.enumerate() {
            for k in trunc.enumerate() {
                let u = ChaosScalar::monomial(t.clone(), 1.0);
                let v = ChaosScalar::monomial(k.clone(), 1.0);
                let n = t.degree().min(k.degree());
                let lhs = product_via_wick_malliavin(&u, &v, n, 2).unwrap();
                let rhs = ordinary_product(&u, &v);
                assert!(
                    lhs.max_coeff_diff(&rhs) < 1e-12,
                    "mismatch at {t} * {k}: {}",
                    lhs.max_coeff_diff(&rhs)
                );
            }
        }
    }

    #[test]
    fn truncated_ladder_matches_top_degree_only() {
        // with n_terms = 0 the ladder is the bare Wick product: top degree
        // of the ordinary product matches, lower orders are corrections
        let u = ChaosScalar::monomial(mi(&[(1, 2)]), 1.0);
        let wick_only = product_via_wick_malliavin(&u, &u, 0, 1).unwrap();
        let direct = ordinary_product(&u, &u);
        let top = mi(&[(1, 4)]);
        assert!((wick_only.get(&top) - direct.get(&top)).abs() < 1e-14);
        assert!(wick_only.get(&MultiIndex::empty()).abs() < 1e-14);
        assert!((direct.expectation() - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn products_commute_and_distribute(
            u_picks in proptest::collection::vec((0u8..20, -2.0f64..2.0), 1..5),
            v_picks in proptest::collection::vec((0u8..20, -2.0f64..2.0), 1..5),
            w_picks in proptest::collection::vec((0u8..20, -2.0f64..2.0), 1..5),
        ) {
            let all = TruncationSpec::new(3, 3).enumerate();
            let build = |picks: &[(u8, f64)]| {
                let mut u = ChaosScalar::new();
                for &(slot, c) in picks {
                    u.insert(all[slot as usize % all.len()].clone(), c);
                }
                u
            };
            let (u, v, w) = (build(&u_picks), build(&v_picks), build(&w_picks));

            let uv = wick_product_scalar(&u, &v);
            prop_assert!(uv.max_coeff_diff(&wick_product_scalar(&v, &u)) <= 1e-10);
            let spread = wick_product_scalar(&u.add(&w), &v);
            prop_assert!(spread.max_coeff_diff(&uv.add(&wick_product_scalar(&w, &v))) <= 1e-10);
            prop_assert_eq!(uv.expectation(), u.expectation() * v.expectation());

            let ord = ordinary_product(&u, &v);
            prop_assert!(ord.max_coeff_diff(&ordinary_product(&v, &u)) <= 1e-10);

            // the Wick support lives inside the index sumset of the factors
            for (idx, c) in uv.iter() {
                if *c == 0.0 {
                    continue;
                }
                let decomposable = u.iter().any(|(a, ua)| {
                    *ua != 0.0
                        && idx
                            .sub_checked(a)
                            .map_or(false, |rest| v.get(&rest) != 0.0)
                });
                prop_assert!(decomposable);
            }
        }
    }
}
