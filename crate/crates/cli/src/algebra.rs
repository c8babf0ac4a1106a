//! Self-contained checks of the chaos algebra, printed as a JSON report.
//! Each suite recomputes its expected values from scratch (factorials,
//! explicit double loops, quadrature) rather than reusing library internals,
//! so a regression in the product kernels cannot hide itself.

use serde_json::{json, Value};

use polychaos::basis::{BasisSpec, TimeBasis};
use polychaos::chaos::{
    malliavin, ordinary_product, product_via_wick_malliavin, skorokhod_coeffs, wick_product_scalar,
    ChaosScalar, ChaosVector,
};
use polychaos::multiindex::{chaos_binomial_sqrt, MultiIndex, TruncationSpec};

use crate::CliError;

struct Suite {
    name: &'static str,
    max_error: f64,
    tol: f64,
}

impl Suite {
    fn pass(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tol
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Deterministic, sign-varying fill for synthetic expansions.
fn fill(i: usize) -> f64 {
    let x = (i as f64 + 1.0) * 0.7391;
    x.sin() + 0.25
}

/// k-fold repetition of the first index (degree-k single-variable term).
fn single(k: u32) -> MultiIndex {
    if k == 0 {
        MultiIndex::empty()
    } else {
        MultiIndex::from_pairs(&[(1, k)]).expect("valid pair")
    }
}

/// Single-variable Hermite polynomials are multiplicative under the Wick
/// product: the product of the degree-k and degree-n Hermite expansions must
/// be exactly the degree-(k+n) one.
fn hermite_wick(max_order: u32) -> Suite {
    let mut max_error = 0.0f64;
    for k in 0..=max_order {
        for n in 0..=max_order {
            let u = ChaosScalar::monomial(single(k), factorial(k).sqrt());
            let v = ChaosScalar::monomial(single(n), factorial(n).sqrt());
            let prod = wick_product_scalar(&u, &v);
            let target = single(k + n);
            let want = factorial(k + n).sqrt();
            max_error = max_error.max(rel_err(prod.get(&target), want));
            let extra: f64 = prod
                .iter()
                .filter(|(a, _)| **a != target)
                .map(|(_, c)| c.abs())
                .sum();
            max_error = max_error.max(extra);
        }
    }
    Suite {
        name: "hermite_wick",
        max_error,
        tol: 1e-12,
    }
}

/// The Wick kernel against an explicit reference convolution built from
/// `chaos_binomial_sqrt`. With `corrupt` the reference weights are perturbed
/// by 1e-6, which must make the comparison fail.
fn wick_reference(max_degree: u32, basis_size: u32, corrupt: bool) -> Suite {
    let spec = TruncationSpec::new(max_degree, basis_size);
    let support = spec.enumerate();
    let u = ChaosScalar::from_pairs(
        support
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), fill(i))),
    );
    let v = ChaosScalar::from_pairs(
        support
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), fill(i + 1000))),
    );
    let got = wick_product_scalar(&u, &v);

    let corruption = if corrupt { 1.0 + 1e-6 } else { 1.0 };
    let mut want = ChaosScalar::new();
    for (a, &ua) in u.iter() {
        for (b, &vb) in v.iter() {
            let sum = a.add(b);
            let w = chaos_binomial_sqrt(&sum, a).expect("a <= a+b") * corruption;
            want.insert(sum, ua * vb * w);
        }
    }
    Suite {
        name: "wick_reference",
        max_error: got.max_coeff_diff(&want),
        tol: 1e-10,
    }
}

/// The derivative-ladder product `sum_n (D^n u <> D^n v)/n!` must reproduce
/// the pointwise product exactly once enough terms are kept.
fn product_identity(max_degree: u32, basis_size: u32) -> Suite {
    let deg = max_degree.min(4);
    let spec = TruncationSpec::new(deg, basis_size);
    let support = spec.enumerate();
    let mut max_error = 0.0f64;
    for t in &support {
        for k in &support {
            let u = ChaosScalar::monomial(t.clone(), 1.0);
            let v = ChaosScalar::monomial(k.clone(), 1.0);
            let want = ordinary_product(&u, &v);
            let got = match product_via_wick_malliavin(&u, &v, deg, basis_size as usize) {
                Ok(p) => p,
                Err(_) => {
                    return Suite {
                        name: "product_identity",
                        max_error: f64::INFINITY,
                        tol: 1e-10,
                    }
                }
            };
            max_error = max_error.max(got.max_coeff_diff(&want));
        }
    }
    Suite {
        name: "product_identity",
        max_error,
        tol: 1e-10,
    }
}

/// The mean coefficient of a Wick product factorizes:
/// `(u <> v)_0 = u_0 v_0`, with nothing else contributing.
fn zero_mode_factorization(max_degree: u32, basis_size: u32) -> Suite {
    let spec = TruncationSpec::new(max_degree, basis_size);
    let support = spec.enumerate();
    let u = ChaosScalar::from_pairs(
        support
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), fill(i + 17))),
    );
    let v = ChaosScalar::from_pairs(
        support
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), fill(i + 91))),
    );
    let prod = wick_product_scalar(&u, &v);
    let err = (prod.expectation() - u.expectation() * v.expectation()).abs();
    Suite {
        name: "zero_mode_factorization",
        max_error: err,
        tol: 1e-15,
    }
}

/// The divergence of the derivative is the number operator:
/// `delta(D u) = |a| u_a` coefficientwise.
fn number_operator(max_degree: u32, basis_size: u32) -> Suite {
    let basis = match BasisSpec::new(TimeBasis::Trig, 1.0, basis_size as usize, 1) {
        Ok(b) => b,
        Err(_) => {
            return Suite {
                name: "number_operator",
                max_error: f64::INFINITY,
                tol: 1e-9,
            }
        }
    };
    let spec = TruncationSpec::new(max_degree, basis_size);
    let support = spec.enumerate();
    let u = ChaosScalar::from_pairs(
        support
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), fill(i + 5))),
    );
    let du = match malliavin(&u, basis.n_modes()) {
        Ok(d) => d,
        Err(_) => {
            return Suite {
                name: "number_operator",
                max_error: f64::INFINITY,
                tol: 1e-9,
            }
        }
    };
    let integrand = |s: f64| {
        let mut v = ChaosVector::new(1);
        for (a, payload) in du.iter() {
            let val: f64 = payload
                .iter()
                .enumerate()
                .map(|(slot, c)| c * basis.eval_time_mode(slot as u32 + 1, s))
                .sum();
            if val != 0.0 {
                v.insert_component(a.clone(), 0, val);
            }
        }
        v
    };
    let delta = match skorokhod_coeffs(integrand, 1.0, &basis) {
        Ok(d) => d,
        Err(_) => {
            return Suite {
                name: "number_operator",
                max_error: f64::INFINITY,
                tol: 1e-9,
            }
        }
    };
    let mut want = ChaosScalar::new();
    for (a, &c) in u.iter() {
        if a.degree() > 0 {
            want.insert(a.clone(), a.degree() as f64 * c);
        }
    }
    Suite {
        name: "number_operator",
        max_error: delta.max_coeff_diff(&want),
        tol: 1e-9,
    }
}

pub fn run(max_degree: u32, basis_size: u32, corrupt_binomial: bool) -> Result<(), CliError> {
    if basis_size == 0 {
        return Err(CliError::config("basis size must be at least 1"));
    }
    if max_degree == 0 {
        return Err(CliError::config("max degree must be at least 1"));
    }
    let suites = vec![
        hermite_wick(8),
        wick_reference(max_degree, basis_size, corrupt_binomial),
        product_identity(max_degree, basis_size),
        zero_mode_factorization(max_degree, basis_size),
        number_operator(max_degree, basis_size),
    ];
    let overall = suites.iter().all(Suite::pass);
    let mut body = serde_json::Map::new();
    for s in &suites {
        body.insert(
            s.name.into(),
            json!({"max_error": s.max_error, "tol": s.tol, "pass": s.pass()}),
        );
    }
    let report = json!({
        "max_degree": max_degree,
        "basis_size": basis_size,
        "suites": Value::Object(body),
        "overall_pass": overall,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if overall {
        Ok(())
    } else {
        let failed: Vec<&str> = suites
            .iter()
            .filter(|s| !s.pass())
            .map(|s| s.name)
            .collect();
        Err(CliError::failure(format!(
            "algebra check failed: {}",
            failed.join(", ")
        )))
    }
}
