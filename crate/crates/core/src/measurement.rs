//! Projective coincidence measurements: settings, designs and count simulation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::rng::stream_rng;
use crate::space::{ModeSpace, Oam};
use crate::state::{projection_probability, DensityOperator, PhotonKet};

const KET_TOLERANCE: f64 = 1e-12;

/// One hologram per photon: projects onto `|signal⟩ ⊗ |idler⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    signal: PhotonKet,
    idler: PhotonKet,
}

impl MeasurementSetting {
    pub fn new(signal: PhotonKet, idler: PhotonKet) -> Result<Self> {
        for ket in [&signal, &idler] {
            let n = ket.norm_sqr();
            if (n - 1.0).abs() > KET_TOLERANCE {
                return Err(Error::NotNormalized(n));
            }
        }
        Ok(MeasurementSetting { signal, idler })
    }

    pub fn computational(signal: Oam, idler: Oam) -> Self {
        MeasurementSetting {
            signal: PhotonKet::basis(signal),
            idler: PhotonKet::basis(idler),
        }
    }

    pub fn signal(&self) -> &PhotonKet {
        &self.signal
    }

    pub fn idler(&self) -> &PhotonKet {
        &self.idler
    }

    /// Nonzero coordinates of `|signal⟩ ⊗ |idler⟩` in the flat pair basis.
    pub(crate) fn product_terms(&self, space: ModeSpace) -> Result<Vec<(usize, Complex64)>> {
        let mut out = Vec::new();
        for (s, a) in self.signal.iter() {
            for (i, b) in self.idler.iter() {
                let c = a * b;
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                space.check(s)?;
                space.check(i)?;
                out.push((space.pair_index(s, i).unwrap(), c));
            }
        }
        Ok(out)
    }

    pub(crate) fn approx_eq(&self, other: &MeasurementSetting, tol: f64) -> bool {
        let close = |a: &PhotonKet, b: &PhotonKet| {
            a.iter().all(|(l, c)| (c - b.amplitude(l)).norm() <= tol)
                && b.iter().all(|(l, c)| (c - a.amplitude(l)).norm() <= tol)
        };
        close(&self.signal, &other.signal) && close(&self.idler, &other.idler)
    }
}

/// Coincidences recorded for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting: MeasurementSetting,
    pub counts: u64,
    /// Seconds.
    pub integration_time: f64,
    /// Expected pairs per second at unit projection probability; unknown for
    /// imported data.
    pub rate_scale: Option<f64>,
}

/// Product subspace `span{|s⟩ : s ∈ signal} ⊗ span{|i⟩ : i ∈ idler}` on which a
/// tomography design acts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subspace {
    pub signal: Vec<Oam>,
    pub idler: Vec<Oam>,
}

impl Subspace {
    pub fn symmetric(modes: &[Oam]) -> Self {
        Subspace {
            signal: modes.to_vec(),
            idler: modes.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.signal.len() * self.idler.len()
    }

    /// Pair labels in subspace order (signal-major).
    pub fn basis(&self) -> Vec<(Oam, Oam)> {
        self.signal
            .iter()
            .flat_map(|&s| self.idler.iter().map(move |&i| (s, i)))
            .collect()
    }

    /// Coordinates of a product setting in this subspace.
    pub fn setting_vector(&self, setting: &MeasurementSetting) -> Vec<Complex64> {
        self.basis()
            .into_iter()
            .map(|(s, i)| setting.signal.amplitude(s) * setting.idler.amplitude(i))
            .collect()
    }

    /// Places a subspace operator into the full pair space.
    pub fn embed(
        &self,
        space: ModeSpace,
        block: &DMatrix<Complex64>,
    ) -> Result<DMatrix<Complex64>> {
        let basis = self.basis();
        let index: Vec<usize> = basis
            .iter()
            .map(|&(s, i)| {
                space.pair_index(s, i).ok_or(Error::OutOfBounds {
                    ell: s.unsigned_abs().max(i.unsigned_abs()) as i64,
                    bound: space.truncation(),
                })
            })
            .collect::<Result<_>>()?;
        let n = space.joint_dim();
        let mut full = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for (r, &fr) in index.iter().enumerate() {
            for (c, &fc) in index.iter().enumerate() {
                full[(fr, fc)] = block[(r, c)];
            }
        }
        Ok(full)
    }

    /// The subspace block of a full-space operator.
    pub fn restrict(&self, rho: &DensityOperator) -> DMatrix<Complex64> {
        let basis = self.basis();
        DMatrix::from_fn(basis.len(), basis.len(), |r, c| {
            rho.entry(basis[r], basis[c])
        })
    }
}

/// Ordered list of settings spanning the operator space of its subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDesign {
    subspace: Subspace,
    settings: Vec<MeasurementSetting>,
}

impl TomographyDesign {
    /// Wraps `settings`, deriving the subspace from their supports and
    /// rejecting sets that are not informationally complete on it.
    pub fn new(settings: Vec<MeasurementSetting>) -> Result<Self> {
        if settings.is_empty() {
            return Err(Error::Incomplete {
                rank: 0,
                required: 1,
            });
        }
        let support = |f: fn(&MeasurementSetting) -> &PhotonKet| {
            let mut modes: Vec<Oam> = settings
                .iter()
                .flat_map(|s| {
                    f(s).iter()
                        .filter(|(_, c)| c.norm_sqr() > 0.0)
                        .map(|(l, _)| l)
                })
                .collect();
            modes.sort_unstable();
            modes.dedup();
            modes
        };
        let subspace = Subspace {
            signal: support(MeasurementSetting::signal),
            idler: support(MeasurementSetting::idler),
        };
        let design = TomographyDesign { subspace, settings };
        let required = design.subspace.dim().pow(2);
        let rank = design.rank();
        if rank < required {
            return Err(Error::Incomplete { rank, required });
        }
        Ok(design)
    }

    /// Computational pairs plus every two-mode superposition
    /// `(|ℓ⟩ + e^{iθ}|ℓ'⟩)/√2`, `θ ∈ {0, π/2}`, on each photon.
    pub fn standard(modes: &[Oam]) -> Result<Self> {
        let mut sorted = modes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != modes.len() || modes.is_empty() {
            return Err(Error::Invalid(format!(
                "tomography modes {modes:?} must be distinct and nonempty"
            )));
        }
        let mut single: Vec<PhotonKet> = modes.iter().map(|&l| PhotonKet::basis(l)).collect();
        for (n, &a) in modes.iter().enumerate() {
            for &b in &modes[n + 1..] {
                single.push(PhotonKet::superposition(a, b, 0.0));
                single.push(PhotonKet::superposition(a, b, std::f64::consts::FRAC_PI_2));
            }
        }
        let settings = single
            .iter()
            .flat_map(|s| {
                single
                    .iter()
                    .map(move |i| MeasurementSetting::new(s.clone(), i.clone()).unwrap())
            })
            .collect();
        TomographyDesign::new(settings)
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }

    pub fn settings(&self) -> &[MeasurementSetting] {
        &self.settings
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// Rank of the matrix whose rows are the vectorized projectors.
    pub fn rank(&self) -> usize {
        let d = self.subspace.dim();
        let rows: Vec<Vec<Complex64>> = self
            .settings
            .iter()
            .map(|s| {
                let v = self.subspace.setting_vector(s);
                let mut row = Vec::with_capacity(d * d);
                for a in &v {
                    for b in &v {
                        row.push(a * b.conj());
                    }
                }
                row
            })
            .collect();
        let m = DMatrix::from_fn(rows.len(), d * d, |r, c| rows[r][c]);
        let Ok((values, _)) = hermitian_eigen(&(m.adjoint() * &m)) else {
            return 0;
        };
        let top = values.max();
        values
            .iter()
            .filter(|&&l| l > 1e-12 * top.max(1e-300))
            .count()
    }
}

fn check_rates(rate_scale: f64, time: f64) -> Result<()> {
    if !(rate_scale > 0.0 && rate_scale.is_finite()) || !(time > 0.0 && time.is_finite()) {
        return Err(Error::Invalid(format!(
            "rate scale ({rate_scale}) and integration time ({time}) must be positive"
        )));
    }
    Ok(())
}

pub(crate) fn poisson(rng: &mut impl rand::Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng) as u64
}

/// Poisson-sampled coincidences for every setting of `design`.
///
/// Record `k` draws from its own stream keyed by `(seed, k)`, so the output
/// does not depend on evaluation order.
pub fn simulate_counts(
    rho: &DensityOperator,
    design: &TomographyDesign,
    rate_scale: f64,
    time: f64,
    seed: u64,
) -> Result<Vec<CountRecord>> {
    check_rates(rate_scale, time)?;
    rho.validate()?;
    design
        .settings
        .par_iter()
        .enumerate()
        .map(|(k, setting)| {
            let p = projection_probability(rho, setting)?;
            let mut rng = stream_rng(seed, k as u64);
            Ok(CountRecord {
                setting: setting.clone(),
                counts: poisson(&mut rng, rate_scale * time * p),
                integration_time: time,
                rate_scale: Some(rate_scale),
            })
        })
        .collect()
}

/// Records holding the rounded Poisson means instead of samples.
pub fn expected_counts(
    rho: &DensityOperator,
    design: &TomographyDesign,
    rate_scale: f64,
    time: f64,
) -> Result<Vec<CountRecord>> {
    check_rates(rate_scale, time)?;
    design
        .settings
        .iter()
        .map(|setting| {
            let p = projection_probability(rho, setting)?;
            Ok(CountRecord {
                setting: setting.clone(),
                counts: (rate_scale * time * p).round() as u64,
                integration_time: time,
                rate_scale: Some(rate_scale),
            })
        })
        .collect()
}

/// Computational-basis coincidence map: entry `(i, j)` is the probability of
/// `(|ℓ_i⟩, |ℓ_j⟩)`, scaled so the largest entry is 1.
pub fn crosstalk_matrix(rho: &DensityOperator, ell_range: &[Oam]) -> Result<DMatrix<f64>> {
    let n = ell_range.len();
    let mut m = DMatrix::zeros(n, n);
    for (r, &a) in ell_range.iter().enumerate() {
        for (c, &b) in ell_range.iter().enumerate() {
            if rho.space().contains(a) && rho.space().contains(b) {
                m[(r, c)] = projection_probability(rho, &MeasurementSetting::computational(a, b))?;
            }
        }
    }
    let max = m.max();
    if max > 0.0 {
        m /= max;
    }
    Ok(m)
}

/// Largest entry over the next largest; infinite when only one entry is nonzero.
pub fn dominance_ratio(matrix: &DMatrix<f64>) -> f64 {
    let mut v: Vec<f64> = matrix.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    match (v.first(), v.get(1)) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        (Some(&a), _) if a > 0.0 => f64::INFINITY,
        _ => f64::NAN,
    }
}
