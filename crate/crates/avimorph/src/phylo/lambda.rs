//! Pagel's lambda: maximum-likelihood phylogenetic signal under Brownian
//! motion, with a likelihood-ratio test against lambda = 0.
//!
//! For one trait dimension y over S species, the BM model is
//! y ~ N(mu 1, sigma^2 C(lambda)) where C is the shared-path covariance
//! and C(lambda) keeps the diagonal while scaling off-diagonals by
//! lambda. mu and sigma^2 are profiled out analytically; lambda is
//! maximized by golden-section search on [0, 1] to 1e-4. Dimensions are
//! pooled by the mean lambda and a Fisher-combined p-value.

use super::{PhyloTree, TraitMatrix};
use crate::error::{Error, Result};
use crate::par;
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct DimLambda {
    pub lambda: f64,
    pub p_value: f64,
    pub loglik: f64,
    pub loglik_zero: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaReport {
    pub per_dim: Vec<DimLambda>,
    pub mean_lambda: f64,
    /// Fisher-combined p across dimensions.
    pub fisher_p: f64,
    /// Set when a singular C(lambda) needed diagonal regularization.
    pub regularized: bool,
}

/// Profile log-likelihood of one trait column at a given lambda.
/// Returns (loglik, regularized).
fn profile_loglik(c: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (f64, bool) {
    let s = y.len();
    let mut m = c.clone();
    for i in 0..s {
        for j in 0..s {
            if i != j {
                m[(i, j)] *= lambda;
            }
        }
    }
    let mut regularized = false;
    let chol = match Cholesky::new(m.clone()) {
        Some(c) => c,
        None => {
            regularized = true;
            for i in 0..s {
                m[(i, i)] += 1e-10;
            }
            match Cholesky::new(m) {
                Some(c) => c,
                None => return (f64::NEG_INFINITY, true),
            }
        }
    };
    let ones = DVector::from_element(s, 1.0);
    let ci_y = chol.solve(y);
    let ci_1 = chol.solve(&ones);
    let mu = ones.dot(&ci_y) / ones.dot(&ci_1).max(1e-300);
    let r = y - &ones * mu;
    let ci_r = chol.solve(&r);
    let sigma2 = (r.dot(&ci_r) / s as f64).max(1e-300);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.max(1e-300).ln()).sum();
    let ll = -0.5
        * (s as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet + s as f64);
    (ll, regularized)
}

/// Survival function of chi-square with 1 df.
fn chi2_sf_1(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    libm::erfc((x / 2.0).sqrt())
}

/// Survival function of chi-square with even df = 2m (closed form).
fn chi2_sf_even(x: f64, m: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..m {
        term *= half / k as f64;
        sum += term;
    }
    ((-half).exp() * sum).clamp(0.0, 1.0)
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Per-dimension ML lambda with LRT p-values, pooled by mean lambda and
/// Fisher-combined p. A star tree (no shared paths) is degenerate: lambda
/// is reported as 0 with p = 1.
pub fn pagels_lambda(tree: &PhyloTree, traits: &TraitMatrix) -> Result<LambdaReport> {
    let s = traits.species.len();
    if s < 4 {
        return Err(Error::TooFewInstances { needed: 4, got: s });
    }
    tree.validate()?;
    let c = tree.bm_covariance(&traits.species)?;

    let off_diag_max = (0..s)
        .flat_map(|i| (0..s).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .map(|(i, j)| c[(i, j)].abs())
        .fold(0.0, f64::max);
    if off_diag_max == 0.0 {
        let per_dim = (0..traits.dims())
            .map(|_| DimLambda {
                lambda: 0.0,
                p_value: 1.0,
                loglik: 0.0,
                loglik_zero: 0.0,
            })
            .collect();
        return Ok(LambdaReport {
            per_dim,
            mean_lambda: 0.0,
            fisher_p: 1.0,
            regularized: false,
        });
    }

    let dims: Vec<usize> = (0..traits.dims()).collect();
    let fits = par::map_collect(&dims, |&d| {
        let y = DVector::from_vec(traits.column(d));
        let mut regularized = false;
        let mut eval = |l: f64| {
            let (ll, reg) = profile_loglik(&c, &y, l);
            regularized |= reg;
            ll
        };
        let l0 = eval(0.0);
        let l1 = eval(1.0);
        let lhat = golden_max(&|l| profile_loglik(&c, &y, l).0, 0.0, 1.0, 1e-4);
        let lhat_ll = eval(lhat);
        // Keep the best of the interior optimum and the endpoints.
        let (lambda, loglik) = [(lhat, lhat_ll), (0.0, l0), (1.0, l1)]
            .into_iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let lrt = 2.0 * (loglik - l0);
        let p = chi2_sf_1(lrt.max(0.0));
        (
            DimLambda {
                lambda,
                p_value: p,
                loglik,
                loglik_zero: l0,
            },
            regularized,
        )
    });

    let regularized = fits.iter().any(|(_, r)| *r);
    let per_dim: Vec<DimLambda> = fits.into_iter().map(|(d, _)| d).collect();
    let mean_lambda = per_dim.iter().map(|d| d.lambda).sum::<f64>() / per_dim.len() as f64;
    let fisher_stat: f64 = per_dim
        .iter()
        .map(|d| -2.0 * d.p_value.max(1e-300).ln())
        .sum();
    let fisher_p = chi2_sf_even(fisher_stat, per_dim.len());
    Ok(LambdaReport {
        per_dim,
        mean_lambda,
        fisher_p,
        regularized,
    })
}

pub(crate) fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
