//! Gaussian quadrature rules computed at runtime by Newton iteration on the
//! orthogonal-polynomial recurrences; no tabulated constants.

use std::sync::OnceLock;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
/// Weights sum to 2; the rule is exact for polynomials of degree 2n-1.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    // the 8-point rule is the workhorse of the composite quadrature; cache it
    static GL8: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    if n == 8 {
        return GL8.get_or_init(|| gauss_legendre_uncached(8)).clone();
    }
    gauss_legendre_uncached(n)
}

fn gauss_legendre_uncached(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess for the i-th positive root
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        out[i] = (-z, w);
        out[n - 1 - i] = (z, w);
    }
    out
}

/// Nodes and weights of the n-point Gauss-Hermite rule for the standard
/// normal weight exp(-x^2/2)/sqrt(2 pi); weights sum to 1 and the rule is
/// exact for polynomial moments of degree 2n-1.
pub fn gauss_hermite_normal(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    // physicists' rule for weight exp(-x^2), scaled at the end
    let mut nodes = vec![(0.0f64, 0.0f64); n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        // standard initial guesses, then Newton on the orthonormal recurrence
        z = match i {
            0 => {
                let a = (2 * n + 1) as f64;
                a.sqrt() - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0].0,
            3 => 1.91 * z - 0.91 * nodes[1].0,
            _ => 2.0 * z - nodes[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let pim4 = std::f64::consts::PI.powf(-0.25);
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2
                    - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = (z, 2.0 / (pp * pp));
        nodes[n - 1 - i] = (-z, 2.0 / (pp * pp));
    }
    // physicists' -> probabilists': x -> sqrt(2) x, w -> w / sqrt(pi)
    let spi = std::f64::consts::PI.sqrt();
    let mut out: Vec<(f64, f64)> = nodes
        .into_iter()
        .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w / spi))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
