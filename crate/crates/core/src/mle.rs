//! Maximum-likelihood state reconstruction from coincidence counts.
//!
//! The design's projectors `Π_k` (weighted by integration time) do not in
//! general sum to the identity, so the problem is first mapped onto a POVM:
//! with `G = Σ_k t_k Π_k`, the operators `E_k = t_k G^{-1/2} Π_k G^{-1/2}` sum
//! to `I` and `σ = G^{1/2} ρ G^{1/2} / Tr(Gρ)` is a state whose outcome
//! probabilities are the conditional ones `t_k Tr(Π_k ρ) / Tr(Gρ)`. The
//! iteration runs on `σ`:
//!
//! ```text
//! R = Σ_k (f_k / q_k) E_k,   T = (1 − μ) I + μ R,   σ ← T σ T / Tr(T σ T)
//! ```
//!
//! where `f_k` are the observed frequencies and `q_k = Tr(E_k σ)`. Any
//! Hermitian `T` keeps `σ` positive, so `μ` is a free step length: each
//! iteration halves it until the log-likelihood does not decrease, and a step
//! accepted at the first try doubles it for the next iteration (up to
//! [`MAX_STEP`]). Starting at the dilution `μ = 0.5`, this is the diluted
//! `RρR` algorithm with a monotone line search. Near pure states the plain
//! iteration from `I/d` crawls, so it starts from the clipped least-squares
//! estimate whenever that is at least as likely.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::measurement::{poisson, CountRecord, Subspace, TomographyDesign};
use crate::rng::{derive_seed, stream_rng};
use crate::space::ModeSpace;
use crate::state::{BiphotonKet, DensityOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop once the max-norm change of `ρ` falls below this.
    pub tol: f64,
    /// Initial mixing weight `μ` of the `R` operator.
    pub dilution: f64,
}

/// White-noise weight mixed into the linear starting point.
const LINEAR_START_MIXING: f64 = 1e-9;

/// Largest step `μ` the line search will try.
pub const MAX_STEP: f64 = 4096.0;

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iter: 10_000,
            tol: 1e-10,
            dilution: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub mean: f64,
    pub stddev: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub rho: DensityOperator,
    pub subspace: Subspace,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted iteration, starting from `ρ0`.
    pub likelihood_trace: Vec<f64>,
    pub fidelity: Option<FidelityEstimate>,
}

const C0: Complex64 = Complex64::new(0.0, 0.0);

fn hermitian_power(m: &DMatrix<Complex64>, power: f64) -> Result<DMatrix<Complex64>> {
    let (values, vectors) = hermitian_eigen(m)?;
    let min = values.min();
    if min <= 1e-12 * values.max() {
        return Err(Error::Incomplete {
            rank: values.iter().filter(|&&l| l > 1e-12).count(),
            required: m.nrows(),
        });
    }
    let d = DVector::from_iterator(
        m.nrows(),
        values.iter().map(|l| Complex64::new(l.powf(power), 0.0)),
    );
    let v = &vectors;
    Ok(v * DMatrix::from_diagonal(&d) * v.adjoint())
}

struct Problem {
    /// POVM vectors `u_k` with `E_k = u_k u_k†`.
    povm: Vec<DVector<Complex64>>,
    counts: Vec<f64>,
    total: f64,
    /// `G^{-1/2}`.
    g_inv_sqrt: DMatrix<Complex64>,
}

impl Problem {
    fn new(records: &[CountRecord], design: &TomographyDesign) -> Result<Self> {
        if records.len() != design.len() {
            return Err(Error::Invalid(format!(
                "{} records for a design of {} settings",
                records.len(),
                design.len()
            )));
        }
        let sub = design.subspace();
        let dim = sub.dim();
        let mut g = DMatrix::from_element(dim, dim, C0);
        let mut vectors = Vec::with_capacity(records.len());
        for (k, (rec, setting)) in records.iter().zip(design.settings()).enumerate() {
            if !rec.setting.approx_eq(setting, 1e-9) {
                return Err(Error::Invalid(format!(
                    "record {k} does not match design setting {k}"
                )));
            }
            if !(rec.integration_time > 0.0 && rec.integration_time.is_finite()) {
                return Err(Error::Invalid(format!(
                    "record {k} has integration time {}",
                    rec.integration_time
                )));
            }
            let v = DVector::from_vec(sub.setting_vector(setting))
                * Complex64::new(rec.integration_time.sqrt(), 0.0);
            g += &v * v.adjoint();
            vectors.push(v);
        }
        let g_inv_sqrt = hermitian_power(&g, -0.5)?;
        let povm = vectors.iter().map(|v| &g_inv_sqrt * v).collect();
        let counts: Vec<f64> = records.iter().map(|r| r.counts as f64).collect();
        let total = counts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Invalid("no counts recorded".into()));
        }
        Ok(Problem {
            povm,
            counts,
            total,
            g_inv_sqrt,
        })
    }

    fn probabilities(&self, sigma: &DMatrix<Complex64>) -> Vec<f64> {
        self.povm
            .iter()
            .map(|u| (u.adjoint() * sigma * u)[(0, 0)].re)
            .collect()
    }

    fn log_likelihood(&self, q: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(q)
            .filter(|(&n, _)| n > 0.0)
            .map(|(&n, &p)| {
                if p > 0.0 {
                    n * p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .sum()
    }

    fn r_operator(&self, q: &[f64]) -> DMatrix<Complex64> {
        let dim = self.g_inv_sqrt.nrows();
        let mut r = DMatrix::from_element(dim, dim, C0);
        for ((u, &n), &p) in self.povm.iter().zip(&self.counts).zip(q) {
            if n > 0.0 && p > 0.0 {
                r += u * u.adjoint() * Complex64::new(n / (self.total * p), 0.0);
            }
        }
        r
    }

    /// Least-squares `σ` from the observed frequencies, clipped to the
    /// positive cone and mixed with a little white noise so that every
    /// outcome keeps a nonzero probability.
    fn linear_start(&self, mixing: f64) -> Option<DMatrix<Complex64>> {
        let dim = self.g_inv_sqrt.nrows();
        // Real parameters of a Hermitian matrix: diagonal, then Re and Im of
        // the upper triangle.
        let mut basis = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            let mut b = DMatrix::from_element(dim, dim, C0);
            b[(r, r)] = Complex64::new(1.0, 0.0);
            basis.push(b);
        }
        for r in 0..dim {
            for c in r + 1..dim {
                let mut b = DMatrix::from_element(dim, dim, C0);
                b[(r, c)] = Complex64::new(1.0, 0.0);
                b[(c, r)] = Complex64::new(1.0, 0.0);
                basis.push(b.clone());
                b[(r, c)] = Complex64::new(0.0, -1.0);
                b[(c, r)] = Complex64::new(0.0, 1.0);
                basis.push(b);
            }
        }
        let a = DMatrix::from_fn(self.povm.len(), basis.len(), |k, j| {
            let u = &self.povm[k];
            (u.adjoint() * &basis[j] * u)[(0, 0)].re
        });
        let f = DVector::from_iterator(self.counts.len(), self.counts.iter().map(|n| n / self.total));
        let x = a.svd(true, true).solve(&f, 1e-12).ok()?;
        let mut sigma = DMatrix::from_element(dim, dim, C0);
        for (b, &xj) in basis.iter().zip(x.iter()) {
            sigma += b * Complex64::new(xj, 0.0);
        }
        let (values, vectors) = hermitian_eigen(&sigma).ok()?;
        let clipped = DVector::from_iterator(
            dim,
            values.iter().map(|&l| Complex64::new(l.max(0.0), 0.0)),
        );
        let sigma = &vectors * DMatrix::from_diagonal(&clipped) * vectors.adjoint();
        let tr = sigma.trace().re;
        if !(tr > 0.0 && tr.is_finite()) {
            return None;
        }
        let ident = DMatrix::<Complex64>::identity(dim, dim);
        Some(sigma.unscale(tr) * Complex64::new(1.0 - mixing, 0.0) + ident * Complex64::new(mixing / dim as f64, 0.0))
    }

    /// `ρ ∝ G^{-1/2} σ G^{-1/2}`.
    fn to_rho(&self, sigma: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let m = &self.g_inv_sqrt * sigma * &self.g_inv_sqrt;
        let m = m.unscale(m.trace().re);
        (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
    }
}

/// Reconstructs a density operator from `records`, which must list the
/// design's settings in order.
pub fn mle_reconstruct(
    records: &[CountRecord],
    design: &TomographyDesign,
    space: ModeSpace,
    options: &MleOptions,
) -> Result<ReconstructionResult> {
    if !(options.dilution > 0.0 && options.dilution <= 1.0) {
        return Err(Error::Invalid(format!(
            "dilution {} outside (0, 1]",
            options.dilution
        )));
    }
    let problem = Problem::new(records, design)?;
    let dim = design.subspace().dim();
    let ident = DMatrix::<Complex64>::identity(dim, dim);

    // σ for ρ0 = I/dim is G/Tr(G) = G^{1/2} G^{1/2}/Tr(G).
    let g_sqrt = problem
        .g_inv_sqrt
        .clone()
        .try_inverse()
        .ok_or(Error::Incomplete {
            rank: 0,
            required: dim,
        })?;
    let mut sigma = &g_sqrt * &g_sqrt;
    sigma = sigma.unscale(sigma.trace().re);
    let mut q = problem.probabilities(&sigma);
    let mut ll = problem.log_likelihood(&q);
    // The fixed-point iteration is slow near pure states, so start from the
    // linear estimate when it is at least as likely as ρ0.
    if let Some(start) = problem.linear_start(LINEAR_START_MIXING) {
        let start_q = problem.probabilities(&start);
        let start_ll = problem.log_likelihood(&start_q);
        if start_ll >= ll {
            sigma = start;
            q = start_q;
            ll = start_ll;
        }
    }
    let mut rho = problem.to_rho(&sigma);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut next_mu = options.dilution;

    while iterations < options.max_iter {
        iterations += 1;
        let r = problem.r_operator(&q);
        let mut mu = next_mu;
        let mut accepted = None;
        for attempt in 0..60 {
            let t = &ident * Complex64::new(1.0 - mu, 0.0) + &r * Complex64::new(mu, 0.0);
            let next = &t * &sigma * &t;
            let next = next.unscale(next.trace().re);
            let next = (&next + next.adjoint()) * Complex64::new(0.5, 0.0);
            let next_q = problem.probabilities(&next);
            let next_ll = problem.log_likelihood(&next_q);
            if next_ll >= ll {
                accepted = Some((next, next_q, next_ll));
                next_mu = if attempt == 0 { (2.0 * mu).min(MAX_STEP) } else { mu };
                break;
            }
            mu *= 0.5;
        }
        let Some((next, next_q, next_ll)) = accepted else {
            // No ascent direction left at double precision.
            converged = true;
            break;
        };
        let next_rho = problem.to_rho(&next);
        let step = (&next_rho - &rho).camax();
        sigma = next;
        q = next_q;
        ll = next_ll;
        rho = next_rho;
        trace.push(ll);
        if step < options.tol {
            converged = true;
            break;
        }
    }

    let full = design.subspace().embed(space, &rho)?;
    let rho = DensityOperator::from_matrix(space, full)?;
    Ok(ReconstructionResult {
        rho,
        subspace: design.subspace().clone(),
        iterations,
        converged,
        log_likelihood: ll,
        likelihood_trace: trace,
        fidelity: None,
    })
}

/// Parametric bootstrap of the reconstruction fidelity: each resample redraws
/// every count as `Poisson(observed)` and is reconstructed independently.
pub fn bootstrap_fidelity(
    records: &[CountRecord],
    design: &TomographyDesign,
    target: &BiphotonKet,
    resamples: usize,
    seed: u64,
    options: &MleOptions,
) -> Result<FidelityEstimate> {
    if resamples < 10 {
        return Err(Error::Invalid(format!(
            "{resamples} resamples; at least 10 required"
        )));
    }
    let space = target.space();
    let fidelities: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let child = derive_seed(seed, b as u64);
            let redrawn: Vec<CountRecord> = records
                .iter()
                .enumerate()
                .map(|(k, r)| CountRecord {
                    counts: poisson(&mut stream_rng(child, k as u64), r.counts as f64),
                    ..r.clone()
                })
                .collect();
            let res = mle_reconstruct(&redrawn, design, space, options)?;
            res.rho.fidelity(target)
        })
        .collect::<Result<_>>()?;
    let n = fidelities.len() as f64;
    let mean = fidelities.iter().sum::<f64>() / n;
    let var = fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(FidelityEstimate {
        mean,
        stddev: var.sqrt(),
        resamples,
    })
}
