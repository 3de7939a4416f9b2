//! Photon-pair kets, density operators and the overlaps between them.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::measurement::MeasurementSetting;
use crate::space::{ModeSpace, Oam};

/// Absolute tolerance for density-operator invariants.
pub const TOLERANCE: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Single-photon OAM ket, stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonKet {
    amplitudes: BTreeMap<Oam, Complex64>,
}

impl PhotonKet {
    pub fn new(amplitudes: impl IntoIterator<Item = (Oam, Complex64)>) -> Self {
        let mut map = BTreeMap::new();
        for (ell, c) in amplitudes {
            *map.entry(ell).or_insert(ZERO) += c;
        }
        PhotonKet { amplitudes: map }
    }

    pub fn basis(ell: Oam) -> Self {
        PhotonKet::new([(ell, Complex64::new(1.0, 0.0))])
    }

    /// `(|a⟩ + e^{iθ}|b⟩)/√2`.
    pub fn superposition(a: Oam, b: Oam, theta: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        PhotonKet::new([
            (a, Complex64::new(s, 0.0)),
            (b, Complex64::from_polar(s, theta)),
        ])
    }

    pub fn amplitude(&self, ell: Oam) -> Complex64 {
        self.amplitudes.get(&ell).copied().unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Oam, Complex64)> + '_ {
        self.amplitudes.iter().map(|(&l, &c)| (l, c))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroState);
        }
        Ok(PhotonKet {
            amplitudes: self.amplitudes.iter().map(|(&l, &c)| (l, c / n)).collect(),
        })
    }

    /// Largest `|ℓ|` with a nonzero amplitude.
    pub fn max_abs_oam(&self) -> u32 {
        self.amplitudes
            .iter()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(l, _)| l.unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

/// Two-photon OAM ket `Σ c_{ℓs,ℓi} |ℓs, ℓi⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonKet {
    space: ModeSpace,
    amplitudes: BTreeMap<(Oam, Oam), Complex64>,
}

impl BiphotonKet {
    /// Builds a ket from `(signal, idler, amplitude)` terms; repeated pairs add.
    pub fn new(
        space: ModeSpace,
        terms: impl IntoIterator<Item = ((Oam, Oam), Complex64)>,
    ) -> Result<Self> {
        let mut amplitudes = BTreeMap::new();
        for ((s, i), c) in terms {
            space.check(s)?;
            space.check(i)?;
            *amplitudes.entry((s, i)).or_insert(ZERO) += c;
        }
        Ok(BiphotonKet { space, amplitudes })
    }

    pub fn zero(space: ModeSpace) -> Self {
        BiphotonKet {
            space,
            amplitudes: BTreeMap::new(),
        }
    }

    pub fn basis(space: ModeSpace, signal: Oam, idler: Oam) -> Result<Self> {
        BiphotonKet::new(space, [((signal, idler), Complex64::new(1.0, 0.0))])
    }

    pub fn space(&self) -> ModeSpace {
        self.space
    }

    pub fn amplitude(&self, signal: Oam, idler: Oam) -> Complex64 {
        self.amplitudes
            .get(&(signal, idler))
            .copied()
            .unwrap_or(ZERO)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((Oam, Oam), Complex64)> + '_ {
        self.amplitudes.iter().map(|(&k, &c)| (k, c))
    }

    /// Terms with nonzero amplitude.
    pub fn support(&self) -> impl Iterator<Item = (Oam, Oam)> + '_ {
        self.amplitudes
            .iter()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(&k, _)| k)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= TOLERANCE
    }

    /// Rescales to unit norm and fixes the global phase so that the
    /// largest-magnitude amplitude is real and positive.
    ///
    /// Ties in magnitude (within a relative 1e-12) go to the pair with the
    /// smallest `|ℓs| + |ℓi|`, then to the lexicographically smallest pair, so
    /// `|0,0⟩` is the phase reference of every equal-weight state in this
    /// crate.
    pub fn normalize(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroState);
        }
        let max = self
            .amplitudes
            .values()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let (_, reference) = self
            .amplitudes
            .iter()
            .filter(|(_, c)| max - c.norm() <= 1e-12 * max)
            .min_by_key(|((s, i), _)| (s.unsigned_abs() + i.unsigned_abs(), *s, *i))
            .expect("nonzero ket has a largest amplitude");
        let phase = reference.conj() / reference.norm();
        let factor = phase / norm;
        Ok(BiphotonKet {
            space: self.space,
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(&k, &c)| (k, c * factor))
                .collect(),
        })
    }

    /// `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &BiphotonKet) -> Result<Complex64> {
        self.space.same_as(&other.space)?;
        Ok(self
            .amplitudes
            .iter()
            .map(|(k, a)| a.conj() * other.amplitude(k.0, k.1))
            .sum())
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        BiphotonKet {
            space: self.space,
            amplitudes: self
                .amplitudes
                .iter()
                .map(|(&k, &c)| (k, c * factor))
                .collect(),
        }
    }

    /// Adds `delta` quanta to both photons of every term.
    pub fn shifted(&self, delta: Oam) -> Result<Self> {
        BiphotonKet::new(
            self.space,
            self.amplitudes
                .iter()
                .map(|(&(s, i), &c)| ((s + delta, i + delta), c)),
        )
    }

    pub fn add(&self, other: &BiphotonKet) -> Result<Self> {
        self.space.same_as(&other.space)?;
        let mut out = self.clone();
        for (&k, &c) in &other.amplitudes {
            *out.amplitudes.entry(k).or_insert(ZERO) += c;
        }
        Ok(out)
    }

    /// Dense coordinate vector in the flat pair basis of the space.
    pub fn to_vector(&self) -> DVector<Complex64> {
        let mut v = DVector::from_element(self.space.joint_dim(), ZERO);
        for (&(s, i), &c) in &self.amplitudes {
            let k = self
                .space
                .pair_index(s, i)
                .expect("validated on construction");
            v[k] += c;
        }
        v
    }

    pub fn from_vector(space: ModeSpace, v: &DVector<Complex64>) -> Result<Self> {
        if v.len() != space.joint_dim() {
            return Err(Error::Dimension(format!(
                "vector length {} vs joint dimension {}",
                v.len(),
                space.joint_dim()
            )));
        }
        BiphotonKet::new(
            space,
            v.iter()
                .enumerate()
                .filter(|(_, c)| c.norm_sqr() > 0.0)
                .map(|(k, &c)| (space.pair(k), c)),
        )
    }

    pub fn to_density(&self) -> Result<DensityOperator> {
        DensityOperator::pure(self)
    }
}

/// Hermitian, positive semidefinite, unit-trace operator on the pair space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    space: ModeSpace,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    /// Validates `matrix` against the density-operator invariants.
    pub fn from_matrix(space: ModeSpace, matrix: DMatrix<Complex64>) -> Result<Self> {
        let n = space.joint_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, space needs {n}x{n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let rho = DensityOperator { space, matrix };
        rho.validate()?;
        Ok(rho)
    }

    /// `|ψ⟩⟨ψ|` for a normalized ket.
    pub fn pure(ket: &BiphotonKet) -> Result<Self> {
        let norm = ket.norm_sqr();
        if (norm - 1.0).abs() > TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        let v = ket.to_vector();
        Ok(DensityOperator {
            space: ket.space(),
            matrix: &v * v.adjoint(),
        })
    }

    /// Identity on the span of `modes ⊗ modes`, normalized to unit trace.
    pub fn maximally_mixed(space: ModeSpace, modes: &[Oam]) -> Result<Self> {
        let mut m = DMatrix::from_element(space.joint_dim(), space.joint_dim(), ZERO);
        let w = 1.0 / (modes.len() * modes.len()) as f64;
        for &s in modes {
            for &i in modes {
                let k = space.pair_index(s, i).ok_or(Error::OutOfBounds {
                    ell: s.unsigned_abs().max(i.unsigned_abs()) as i64,
                    bound: space.truncation(),
                })?;
                m[(k, k)] = Complex64::new(w, 0.0);
            }
        }
        DensityOperator::from_matrix(space, m)
    }

    pub fn space(&self) -> ModeSpace {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn entry(&self, row: (Oam, Oam), col: (Oam, Oam)) -> Complex64 {
        match (
            self.space.pair_index(row.0, row.1),
            self.space.pair_index(col.0, col.1),
        ) {
            (Some(r), Some(c)) => self.matrix[(r, c)],
            _ => ZERO,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).camax()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        match hermitian_eigen(&self.matrix) {
            Ok((values, _)) => values.iter().copied().collect(),
            Err(_) => vec![f64::NAN; self.matrix.nrows()],
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Checks hermiticity, unit trace and positivity to [`TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if !(herm <= TOLERANCE) {
            return Err(Error::InvalidDensity(format!("not Hermitian ({herm:e})")));
        }
        let tr = self.trace();
        if !((tr.re - 1.0).abs() <= TOLERANCE && tr.im.abs() <= TOLERANCE) {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if !(min >= -TOLERANCE) {
            return Err(Error::InvalidDensity(format!("eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// `Tr(|ψ⟩⟨ψ|ρ)`.
    pub fn fidelity(&self, target: &BiphotonKet) -> Result<f64> {
        fidelity(target, self)
    }

    pub fn projection_probability(&self, setting: &MeasurementSetting) -> Result<f64> {
        projection_probability(self, setting)
    }

    /// `½ Σ |λ(ρ - σ)|`.
    pub fn trace_distance(&self, other: &DensityOperator) -> Result<f64> {
        self.space.same_as(&other.space)?;
        let diff = &self.matrix - &other.matrix;
        Ok(0.5
            * hermitian_eigen(&diff)?
                .0
                .iter()
                .map(|l| l.abs())
                .sum::<f64>())
    }
}

fn clamp_probability(value: Complex64, what: &str) -> Result<f64> {
    if value.im.abs() > TOLERANCE {
        return Err(Error::InvalidDensity(format!(
            "{what} has imaginary part {:e}",
            value.im
        )));
    }
    let p = value.re;
    if (-TOLERANCE..0.0).contains(&p) {
        Ok(0.0)
    } else if p > 1.0 && p <= 1.0 + TOLERANCE {
        Ok(1.0)
    } else {
        Ok(p)
    }
}

/// `Tr(|ψ⟩⟨ψ|ρ) = ⟨ψ|ρ|ψ⟩`.
pub fn fidelity(target: &BiphotonKet, rho: &DensityOperator) -> Result<f64> {
    target.space().same_as(&rho.space)?;
    let norm = target.norm_sqr();
    if (norm - 1.0).abs() > TOLERANCE {
        return Err(Error::NotNormalized(norm));
    }
    let mut acc = ZERO;
    let terms: Vec<(usize, Complex64)> = target
        .iter()
        .map(|((s, i), c)| (rho.space.pair_index(s, i).unwrap(), c))
        .collect();
    for &(r, a) in &terms {
        for &(c, b) in &terms {
            acc += a.conj() * rho.matrix[(r, c)] * b;
        }
    }
    clamp_probability(acc, "fidelity")
}

/// `(⟨a| ⊗ ⟨b|) ρ (|a⟩ ⊗ |b⟩)` for a product projector.
pub fn projection_probability(rho: &DensityOperator, setting: &MeasurementSetting) -> Result<f64> {
    let space = rho.space;
    let v = setting.product_terms(space)?;
    let mut acc = ZERO;
    for &(r, a) in &v {
        for &(c, b) in &v {
            acc += a.conj() * rho.matrix[(r, c)] * b;
        }
    }
    clamp_probability(acc, "projection probability")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ket(terms: &[((i32, i32), Complex64)]) -> BiphotonKet {
        BiphotonKet::new(ModeSpace::default(), terms.iter().copied()).unwrap()
    }

    fn omega() -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI / 3.0)
    }

    fn psi(a: Complex64, b: Complex64) -> BiphotonKet {
        ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), a), ((-2, -2), b)])
            .normalize()
            .unwrap()
    }

    #[test]
    fn normalize_bell() {
        let k = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(1.0, 0.0))])
            .normalize()
            .unwrap();
        assert!((k.amplitude(0, 0) - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((k.amplitude(2, 2) - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn normalize_already_normalized() {
        let k = ket(&[((0, 0), c(1.0, 0.0))]);
        assert_eq!(k.normalize().unwrap(), k);
    }

    #[test]
    fn normalize_psi5_weights() {
        let k = ket(&[
            ((0, 0), c(2.0, 0.0)),
            ((2, 2), c(3.0, 0.0)),
            ((-2, -2), c(3.0, 0.0)),
        ])
        .normalize()
        .unwrap();
        let r = 22f64.sqrt();
        assert!((k.amplitude(0, 0).re - 2.0 / r).abs() < 1e-15);
        assert!((k.amplitude(2, 2).re - 3.0 / r).abs() < 1e-15);
        assert!((k.amplitude(-2, -2).re - 3.0 / r).abs() < 1e-15);
    }

    #[test]
    fn normalize_zero_state() {
        assert!(matches!(
            BiphotonKet::zero(ModeSpace::default()).normalize(),
            Err(Error::ZeroState)
        ));
        assert!(matches!(
            ket(&[((1, 1), c(0.0, 0.0))]).normalize(),
            Err(Error::ZeroState)
        ));
    }

    #[test]
    fn normalize_phase_reference_is_vacuum_pair_on_ties() {
        // ψ4 keeps the sign pattern it is usually written with.
        let k = ket(&[
            ((0, 0), c(-1.0, 0.0)),
            ((2, 2), c(1.0, 0.0)),
            ((-2, -2), c(1.0, 0.0)),
        ])
        .normalize()
        .unwrap();
        assert!(k.amplitude(0, 0).re > 0.0);
        assert!(k.amplitude(2, 2).re < 0.0);
        let g = ket(&[((1, 1), c(0.0, 3.0)), ((0, 0), c(0.0, 1.0))])
            .normalize()
            .unwrap();
        assert!(g.amplitude(1, 1).im.abs() < 1e-15 && g.amplitude(1, 1).re > 0.0);
    }

    #[test]
    fn out_of_bounds_terms_rejected() {
        assert!(BiphotonKet::new(ModeSpace::new(2), [((3, 0), c(1.0, 0.0))]).is_err());
        assert!(ket(&[((4, 4), c(1.0, 0.0))]).shifted(1).is_err());
    }

    #[test]
    fn inner_products() {
        let p1 = psi(c(1.0, 0.0), c(1.0, 0.0));
        let p2 = psi(omega(), omega().inv());
        let p3 = psi(omega().inv(), omega());
        assert!((p1.inner_product(&p1).unwrap() - c(1.0, 0.0)).norm() < 1e-12);
        assert!(p1.inner_product(&p2).unwrap().norm() < 1e-12);
        assert!(p1.inner_product(&p3).unwrap().norm() < 1e-12);
        assert!(p2.inner_product(&p3).unwrap().norm() < 1e-12);

        let phi_p = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(1.0, 0.0))])
            .normalize()
            .unwrap();
        let phi_m = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(-1.0, 0.0))])
            .normalize()
            .unwrap();
        assert!(phi_p.inner_product(&phi_m).unwrap().norm() < 1e-15);

        let other = BiphotonKet::basis(ModeSpace::new(2), 0, 0).unwrap();
        assert!(matches!(
            phi_p.inner_product(&other),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn density_of_basis_pair() {
        let rho = DensityOperator::pure(&ket(&[((0, 0), c(1.0, 0.0))])).unwrap();
        let k = ModeSpace::default().pair_index(0, 0).unwrap();
        for r in 0..81 {
            for col in 0..81 {
                let expected = if r == k && col == k { 1.0 } else { 0.0 };
                assert_eq!(rho.matrix()[(r, col)], c(expected, 0.0));
            }
        }
    }

    #[test]
    fn density_of_bell_state() {
        let phi = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(1.0, 0.0))])
            .normalize()
            .unwrap();
        let rho = phi.to_density().unwrap();
        let nonzero: Vec<_> = rho.matrix().iter().filter(|z| z.norm() > 1e-15).collect();
        assert_eq!(nonzero.len(), 4);
        for z in nonzero {
            assert!((z.norm() - 0.5).abs() < 1e-15);
        }
        rho.validate().unwrap();
    }

    #[test]
    fn density_of_psi4_matches_theory_bars() {
        let p4 = psi(c(-1.0, 0.0), c(-1.0, 0.0));
        let rho = p4.to_density().unwrap();
        let third = 1.0 / 3.0;
        assert!((rho.entry((0, 0), (2, 2)).re + third).abs() < 1e-15);
        assert!((rho.entry((0, 0), (-2, -2)).re + third).abs() < 1e-15);
        assert!((rho.entry((2, 2), (-2, -2)).re - third).abs() < 1e-15);
        assert!((rho.entry((2, 2), (2, 2)).re - third).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_ket_rejected_for_density() {
        let k = ket(&[((0, 0), c(2.0, 0.0))]);
        assert!(matches!(
            DensityOperator::pure(&k),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            fidelity(
                &k,
                &DensityOperator::maximally_mixed(ModeSpace::default(), &[0]).unwrap()
            ),
            Err(Error::NotNormalized(_))
        ));
    }

    #[test]
    fn fidelity_examples() {
        let p1 = psi(c(1.0, 0.0), c(1.0, 0.0));
        assert!((fidelity(&p1, &p1.to_density().unwrap()).unwrap() - 1.0).abs() < 1e-12);

        let phi_p = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(1.0, 0.0))])
            .normalize()
            .unwrap();
        let phi_m = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(-1.0, 0.0))])
            .normalize()
            .unwrap();
        assert!(
            fidelity(&phi_p, &phi_m.to_density().unwrap())
                .unwrap()
                .abs()
                < 1e-12
        );

        let mixed = DensityOperator::maximally_mixed(ModeSpace::default(), &[-2, 0, 2]).unwrap();
        assert!((fidelity(&p1, &mixed).unwrap() - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn density_validation_failures() {
        let space = ModeSpace::new(0);
        let m = |z: Complex64| DMatrix::from_element(1, 1, z);
        assert!(DensityOperator::from_matrix(space, m(c(1.0, 0.0))).is_ok());
        assert!(DensityOperator::from_matrix(space, m(c(0.5, 0.0))).is_err());
        assert!(DensityOperator::from_matrix(space, m(c(1.0, 0.1))).is_err());

        let space = ModeSpace::new(1);
        let mut bad = DMatrix::from_element(9, 9, c(0.0, 0.0));
        bad[(0, 0)] = c(1.5, 0.0);
        bad[(1, 1)] = c(-0.5, 0.0);
        assert!(matches!(
            DensityOperator::from_matrix(space, bad),
            Err(Error::InvalidDensity(_))
        ));
        let mut nonherm = DMatrix::from_element(9, 9, c(0.0, 0.0));
        nonherm[(0, 0)] = c(1.0, 0.0);
        nonherm[(0, 1)] = c(0.1, 0.0);
        assert!(DensityOperator::from_matrix(space, nonherm).is_err());
        assert!(DensityOperator::from_matrix(space, DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn projection_examples() {
        let phi = ket(&[((0, 0), c(1.0, 0.0)), ((2, 2), c(1.0, 0.0))])
            .normalize()
            .unwrap();
        let rho = phi.to_density().unwrap();
        let p = |a: PhotonKet, b: PhotonKet| {
            projection_probability(&rho, &MeasurementSetting::new(a, b).unwrap()).unwrap()
        };
        assert!((p(PhotonKet::basis(0), PhotonKet::basis(0)) - 0.5).abs() < 1e-12);
        assert!(p(PhotonKet::basis(0), PhotonKet::basis(2)).abs() < 1e-12);
        let plus = PhotonKet::superposition(0, 2, 0.0);
        assert!((p(plus.clone(), plus) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states() {
        let a = BiphotonKet::basis(ModeSpace::default(), 0, 0)
            .unwrap()
            .to_density()
            .unwrap();
        let b = BiphotonKet::basis(ModeSpace::default(), 1, 1)
            .unwrap()
            .to_density()
            .unwrap();
        assert!((a.trace_distance(&b).unwrap() - 1.0).abs() < 1e-12);
        assert!(a.trace_distance(&a).unwrap() < 1e-12);
    }
}
