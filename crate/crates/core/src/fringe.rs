//! Two-source interference fringes and their visibility.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::chain::{build_density, relative_pair_rate, ChainConfig, DistinguishabilityModel};
use crate::error::{Error, Result};
use crate::measurement::{poisson, MeasurementSetting};
use crate::rng::stream_rng;
use crate::state::projection_probability;

/// Least-squares fit of `A (1 + V cos(φ + φ0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub visibility: f64,
    pub phase: f64,
    pub amplitude_err: f64,
    pub visibility_err: f64,
    pub phase_err: f64,
    pub residual_sum_squares: f64,
}

/// Raw contrast `(max − min)/(max + min)` of the samples.
pub fn extremal_visibility(samples: &[(f64, f64)]) -> f64 {
    let max = samples
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    (max - min) / (max + min)
}

fn model(p: &Vector3<f64>, phi: f64) -> f64 {
    p[0] * (1.0 + p[1] * (phi + p[2]).cos())
}

fn rss(samples: &[(f64, f64)], p: &Vector3<f64>) -> f64 {
    samples
        .iter()
        .map(|&(phi, y)| (y - model(p, phi)).powi(2))
        .sum()
}

fn jacobian(samples: &[(f64, f64)], p: &Vector3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(samples.len(), 3, |r, c| {
        let phi = samples[r].0;
        let (s, co) = (phi + p[2]).sin_cos();
        match c {
            0 => 1.0 + p[1] * co,
            1 => p[0] * co,
            _ => -p[0] * p[1] * s,
        }
    })
}

/// Fits a fringe by damped Gauss-Newton started from the discrete extrema.
///
/// Needs at least 8 samples whose grid covers a full period, i.e.
/// `(max φ − min φ)·n/(n − 1) ≥ 2π`.
pub fn visibility(samples: &[(f64, f64)]) -> Result<FringeFit> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::Invalid(format!(
            "{n} fringe samples; at least 8 required"
        )));
    }
    if samples.iter().any(|s| !s.0.is_finite() || !s.1.is_finite()) {
        return Err(Error::Invalid("non-finite fringe sample".into()));
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples
        .iter()
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo) * n as f64 / (n - 1) as f64;
    if span < std::f64::consts::TAU - 1e-9 {
        return Err(Error::Invalid(format!(
            "phase grid spans {:.4} rad, less than a period",
            hi - lo
        )));
    }

    let (phi_max, max) = samples
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    if max + min <= 0.0 {
        return Err(Error::Fit("fringe has no counts".into()));
    }
    let mut p = Vector3::new((max + min) / 2.0, (max - min) / (max + min), -phi_max);
    let mut cost = rss(samples, &p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let j = jacobian(samples, &p);
        let r = DVector::from_iterator(n, samples.iter().map(|&(phi, y)| y - model(&p, phi)));
        let jtj: Matrix3<f64> = (j.transpose() * &j).fixed_view::<3, 3>(0, 0).into();
        let jtr: Vector3<f64> = (j.transpose() * r).fixed_view::<3, 1>(0, 0).into();
        if jtr.amax() <= 1e-14 * (1.0 + cost) {
            break;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let damped =
                jtj + Matrix3::from_diagonal(&jtj.diagonal().map(|d| lambda * d.max(1e-300)));
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_cost = rss(samples, &trial);
            if trial_cost <= cost {
                let done = step.amax() <= 1e-15 * (1.0 + p.amax());
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    if p[1] < 0.0 {
        p[1] = -p[1];
        p[2] += std::f64::consts::PI;
    }
    p[2] = p[2].rem_euclid(std::f64::consts::TAU);
    if !(p[0] > 0.0) {
        return Err(Error::Fit(format!(
            "fitted amplitude {} is not positive",
            p[0]
        )));
    }

    let j = jacobian(samples, &p);
    let s2 = if n > 3 { cost / (n - 3) as f64 } else { 0.0 };
    let jtj = j.transpose() * &j;
    let eps = 1e-12 * jtj.amax().max(1e-300);
    let cov = jtj
        .pseudo_inverse(eps)
        .map_err(|e| Error::Fit(e.to_string()))?
        * s2;
    Ok(FringeFit {
        amplitude: p[0],
        visibility: p[1],
        phase: p[2],
        amplitude_err: cov[(0, 0)].max(0.0).sqrt(),
        visibility_err: cov[(1, 1)].max(0.0).sqrt(),
        phase_err: cov[(2, 2)].max(0.0).sqrt(),
        residual_sum_squares: cost,
    })
}

/// `n` equally spaced phases covering `[0, 2π)`.
pub fn phase_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| std::f64::consts::TAU * k as f64 / points as f64)
        .collect()
}

/// Mean coincidences while the phase shifter at `stage` is scanned.
///
/// The count rate follows the interference-modulated pair rate of the chain
/// times the projection probability of `setting`.
pub fn expected_fringe(
    chain: &ChainConfig,
    model: &DistinguishabilityModel,
    stage: usize,
    phases: &[f64],
    setting: &MeasurementSetting,
    rate_scale: f64,
    time: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(rate_scale > 0.0 && time > 0.0) {
        return Err(Error::Invalid(
            "rate scale and integration time must be positive".into(),
        ));
    }
    phases
        .iter()
        .map(|&phi| {
            let c = chain.with_phase(stage, phi)?;
            let rate = relative_pair_rate(&c, model)?;
            let p = match build_density(&c, model) {
                Ok(rho) => projection_probability(&rho, setting)?,
                Err(Error::ZeroState) => 0.0,
                Err(e) => return Err(e),
            };
            Ok((phi, rate_scale * time * rate * p))
        })
        .collect()
}

/// Poisson-sampled version of [`expected_fringe`]; point `k` uses stream `(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_fringe(
    chain: &ChainConfig,
    model: &DistinguishabilityModel,
    stage: usize,
    phases: &[f64],
    setting: &MeasurementSetting,
    rate_scale: f64,
    time: f64,
    seed: u64,
) -> Result<Vec<(f64, u64)>> {
    Ok(
        expected_fringe(chain, model, stage, phases, setting, rate_scale, time)?
            .into_iter()
            .enumerate()
            .map(|(k, (phi, mean))| (phi, poisson(&mut stream_rng(seed, k as u64), mean)))
            .collect(),
    )
}
