//! Photon-pair states emitted by a chain of coherently pumped crystals.
//!
//! A chain is read in pump order. Every crystal emits a pair whose OAM is set
//! by the pump OAM accumulated upstream; every down-conversion element placed
//! after a crystal acts on the pairs already emitted. Because the emitted
//! paths are identical, the per-crystal amplitudes add coherently.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::space::{ModeSpace, Oam};
use crate::state::{BiphotonKet, DensityOperator, TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    /// Square root of the relative pump power.
    pub pump_amplitude: f64,
    /// OAM the pump carries on top of what upstream shifters imprinted.
    pub pump_oam: Oam,
    /// Spiral spectrum `α_k`, `k = 0..K`; order `k ≥ 1` feeds both
    /// `|m+k, m−k⟩` and `|m−k, m+k⟩`.
    pub spiral: Vec<Complex64>,
}

impl CrystalSpec {
    /// Pure `|m, m⟩` emission.
    pub fn ideal(pump_amplitude: f64) -> Self {
        CrystalSpec {
            pump_amplitude,
            pump_oam: 0,
            spiral: vec![Complex64::new(1.0, 0.0)],
        }
    }

    pub fn with_pump_oam(mut self, pump_oam: Oam) -> Self {
        self.pump_oam = pump_oam;
        self
    }

    pub fn with_spiral(mut self, spiral: Vec<Complex64>) -> Self {
        self.spiral = spiral;
        self
    }

    /// `Σ_k mult_k |α_k|²`, with multiplicity 2 for `k ≥ 1`.
    pub fn spiral_weight(&self) -> f64 {
        self.spiral
            .iter()
            .enumerate()
            .map(|(k, a)| if k == 0 { 1.0 } else { 2.0 } * a.norm_sqr())
            .sum()
    }

    fn validate(&self) -> Result<()> {
        if !(self.pump_amplitude >= 0.0 && self.pump_amplitude.is_finite()) {
            return Err(Error::Invalid(format!(
                "pump amplitude {} must be non-negative",
                self.pump_amplitude
            )));
        }
        if self.spiral_weight() == 0.0 {
            return Err(Error::Invalid("spiral spectrum has no weight".into()));
        }
        Ok(())
    }
}

/// Unit-norm pair state of a single crystal pumped with `spec.pump_oam`.
pub fn crystal_emission(spec: &CrystalSpec, space: ModeSpace) -> Result<BiphotonKet> {
    spec.validate()?;
    if spec.pump_oam % 2 != 0 {
        return Err(Error::UnsupportedPump(spec.pump_oam));
    }
    let m = spec.pump_oam / 2;
    let mut terms = Vec::new();
    for (k, &a) in spec.spiral.iter().enumerate() {
        let k = k as Oam;
        if a.norm_sqr() == 0.0 {
            continue;
        }
        if k == 0 {
            terms.push(((m, m), a));
        } else {
            terms.push(((m + k, m - k), a));
            terms.push(((m - k, m + k), a));
        }
    }
    let ket = BiphotonKet::new(space, terms)?;
    let norm = spec.spiral_weight().sqrt();
    Ok(ket.scaled(Complex64::new(1.0 / norm, 0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stage {
    Crystal(CrystalSpec),
    /// Adds quanta to the pump (spiral phase plate).
    PumpModeShifter(Oam),
    /// Adds quanta to each photon of every pair emitted upstream.
    DownconversionModeShifter(Oam),
    /// Multiplies every pair emitted upstream by `e^{iφ}`.
    PhaseShifter(f64),
    /// Inverts the sign of the accumulated pump OAM.
    Mirror,
}

/// Pair state contributed by one crystal after all downstream elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    /// Index of the crystal's stage in the chain.
    pub stage: usize,
    pub weight: f64,
    /// Unit-norm ket including downstream shifts and phases.
    pub ket: BiphotonKet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    space: ModeSpace,
    stages: Vec<Stage>,
}

impl ChainConfig {
    /// Validates that the chain has a crystal and stays inside `space`.
    pub fn new(space: ModeSpace, stages: Vec<Stage>) -> Result<Self> {
        let chain = ChainConfig { space, stages };
        chain.contributions()?;
        Ok(chain)
    }

    /// `d` crystals joined by `(+1 down-conversion shift, phase φ_j)` links:
    /// `crystal, shift, φ_1, crystal, shift, φ_2, …, crystal`.
    pub fn canonical(space: ModeSpace, weights: &[f64], phases: &[f64]) -> Result<Self> {
        if weights.is_empty() || phases.len() + 1 != weights.len() {
            return Err(Error::Shape(format!(
                "{} crystals need {} phases, got {}",
                weights.len(),
                weights.len().saturating_sub(1),
                phases.len()
            )));
        }
        let mut stages = vec![Stage::Crystal(CrystalSpec::ideal(weights[0]))];
        for (&w, &phi) in weights[1..].iter().zip(phases) {
            stages.push(Stage::DownconversionModeShifter(1));
            stages.push(Stage::PhaseShifter(phi));
            stages.push(Stage::Crystal(CrystalSpec::ideal(w)));
        }
        ChainConfig::new(space, stages)
    }

    /// Two crystals, the second pumped through a +4 spiral phase plate:
    /// `a|0,0⟩ + b e^{iφ}|2,2⟩` up to a global phase.
    pub fn two_dimensional(space: ModeSpace, weights: [f64; 2], phi: f64) -> Result<Self> {
        ChainConfig::new(
            space,
            vec![
                Stage::Crystal(CrystalSpec::ideal(weights[0])),
                Stage::PhaseShifter(-phi),
                Stage::PumpModeShifter(4),
                Stage::Crystal(CrystalSpec::ideal(weights[1])),
            ],
        )
    }

    /// Three crystals pumped with OAM 0, +4 and −4 (via a mirror):
    /// `a|0,0⟩ + b e^{iφ1}|2,2⟩ + c e^{iφ2}|−2,−2⟩` up to a global phase.
    pub fn three_dimensional(
        space: ModeSpace,
        weights: [f64; 3],
        phi1: f64,
        phi2: f64,
    ) -> Result<Self> {
        ChainConfig::new(
            space,
            vec![
                Stage::Crystal(CrystalSpec::ideal(weights[0])),
                Stage::PhaseShifter(-phi1),
                Stage::PumpModeShifter(4),
                Stage::Crystal(CrystalSpec::ideal(weights[1])),
                Stage::PhaseShifter(phi1 - phi2),
                Stage::Mirror,
                Stage::Crystal(CrystalSpec::ideal(weights[2])),
            ],
        )
    }

    pub fn space(&self) -> ModeSpace {
        self.space
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn crystal_count(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| matches!(s, Stage::Crystal(_)))
            .count()
    }

    /// Copy with the phase shifter at `stage` set to `phi`.
    pub fn with_phase(&self, stage: usize, phi: f64) -> Result<Self> {
        let mut out = self.clone();
        match out.stages.get_mut(stage) {
            Some(Stage::PhaseShifter(p)) => *p = phi,
            _ => {
                return Err(Error::Invalid(format!(
                    "stage {stage} is not a phase shifter"
                )));
            }
        }
        Ok(out)
    }

    /// Per-crystal pair states, in chain order.
    pub fn contributions(&self) -> Result<Vec<Contribution>> {
        let mut pump_oam: Oam = 0;
        let mut out: Vec<Contribution> = Vec::new();
        for (n, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Crystal(spec) => {
                    let local = CrystalSpec {
                        pump_oam: pump_oam + spec.pump_oam,
                        ..spec.clone()
                    };
                    let ket = crystal_emission(&local, self.space).map_err(|e| e.at_stage(n))?;
                    out.push(Contribution {
                        stage: n,
                        weight: spec.pump_amplitude,
                        ket,
                    });
                }
                Stage::PumpModeShifter(delta) => pump_oam += delta,
                Stage::Mirror => pump_oam = -pump_oam,
                Stage::DownconversionModeShifter(delta) => {
                    for c in &mut out {
                        c.ket = c.ket.shifted(*delta).map_err(|e| e.at_stage(n))?;
                    }
                }
                Stage::PhaseShifter(phi) => {
                    let f = Complex64::from_polar(1.0, *phi);
                    for c in &mut out {
                        c.ket = c.ket.scaled(f);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyChain);
        }
        Ok(out)
    }

    /// Phase accumulated by each dimension of a canonical chain,
    /// `φ̄_i = Σ_{j=d−i}^{d−1} φ_j` for `i = 1..d−1`.
    pub fn accumulated_phases(&self) -> Result<Vec<f64>> {
        let phases = self.canonical_phases()?;
        let d = phases.len() + 1;
        Ok((1..d).map(|i| phases[d - i - 1..].iter().sum()).collect())
    }

    /// The `φ_j` of a canonical chain: exactly one phase shifter between
    /// consecutive crystals and none outside them.
    fn canonical_phases(&self) -> Result<Vec<f64>> {
        let mut phases = Vec::new();
        let mut crystals = 0;
        let mut pending: Option<f64> = None;
        for (n, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Crystal(_) => {
                    if crystals > 0 {
                        phases.push(pending.take().ok_or_else(|| {
                            Error::Shape(format!("no phase shifter before crystal at stage {n}"))
                        })?);
                    }
                    crystals += 1;
                }
                Stage::PhaseShifter(phi) => {
                    if crystals == 0 {
                        return Err(Error::Shape(format!(
                            "phase shifter at stage {n} precedes every crystal"
                        )));
                    }
                    if pending.replace(*phi).is_some() {
                        return Err(Error::Shape(format!("second phase shifter at stage {n}")));
                    }
                }
                _ => {}
            }
        }
        if crystals == 0 {
            return Err(Error::EmptyChain);
        }
        if pending.is_some() {
            return Err(Error::Shape("phase shifter after the last crystal".into()));
        }
        Ok(phases)
    }
}

/// Coherent sum of the crystal contributions, normalized.
pub fn build_state(chain: &ChainConfig) -> Result<BiphotonKet> {
    let mut sum = BiphotonKet::zero(chain.space);
    for c in chain.contributions()? {
        sum = sum.add(&c.ket.scaled(Complex64::new(c.weight, 0.0)))?;
    }
    sum.normalize()
}

/// Pairwise mutual coherence `γ(i, j)` between crystals.
#[derive(Debug, Clone, PartialEq)]
pub struct DistinguishabilityModel {
    overlaps: DMatrix<f64>,
}

impl DistinguishabilityModel {
    pub fn from_matrix(overlaps: DMatrix<f64>) -> Result<Self> {
        let n = overlaps.nrows();
        if overlaps.ncols() != n {
            return Err(Error::Model("overlap matrix must be square".into()));
        }
        for r in 0..n {
            if (overlaps[(r, r)] - 1.0).abs() > TOLERANCE {
                return Err(Error::Model(format!(
                    "γ({r},{r}) = {} ≠ 1",
                    overlaps[(r, r)]
                )));
            }
            for c in 0..n {
                let g = overlaps[(r, c)];
                if !(0.0..=1.0).contains(&g) {
                    return Err(Error::Model(format!("γ({r},{c}) = {g} outside [0, 1]")));
                }
                if (g - overlaps[(c, r)]).abs() > TOLERANCE {
                    return Err(Error::Model(format!("γ({r},{c}) ≠ γ({c},{r})")));
                }
            }
        }
        if n > 0 {
            let min = symmetric_eigenvalues(&overlaps)?.min();
            if min < -TOLERANCE {
                return Err(Error::Model(format!(
                    "overlap matrix not PSD (eigenvalue {min:e})"
                )));
            }
        }
        Ok(DistinguishabilityModel { overlaps })
    }

    pub fn coherent(crystals: usize) -> Self {
        DistinguishabilityModel {
            overlaps: DMatrix::from_element(crystals, crystals, 1.0),
        }
    }

    pub fn incoherent(crystals: usize) -> Self {
        DistinguishabilityModel {
            overlaps: DMatrix::identity(crystals, crystals),
        }
    }

    /// Same `γ` for every pair of distinct crystals.
    pub fn uniform(crystals: usize, gamma: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(crystals, crystals, gamma);
        m.fill_diagonal(1.0);
        DistinguishabilityModel::from_matrix(m)
    }

    pub fn len(&self) -> usize {
        self.overlaps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.overlaps[(i, j)]
    }
}

fn mixture(
    chain: &ChainConfig,
    model: &DistinguishabilityModel,
) -> Result<(DMatrix<Complex64>, f64)> {
    let parts = chain.contributions()?;
    if parts.len() != model.len() {
        return Err(Error::Model(format!(
            "{} crystals but overlap matrix is {}x{}",
            parts.len(),
            model.len(),
            model.len()
        )));
    }
    let n = chain.space.joint_dim();
    let vectors: Vec<_> = parts
        .iter()
        .map(|c| c.ket.to_vector() * Complex64::new(c.weight, 0.0))
        .collect();
    let mut m = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (i, a) in vectors.iter().enumerate() {
        for (j, b) in vectors.iter().enumerate() {
            let g = model.overlap(i, j);
            if g != 0.0 {
                m += a * b.adjoint() * Complex64::new(g, 0.0);
            }
        }
    }
    let incoherent: f64 = parts.iter().map(|c| c.weight * c.weight).sum();
    Ok((m, incoherent))
}

/// `ρ ∝ Σ_{ij} γ(i,j) w_i w_j |e_i⟩⟨e_j|`, normalized to unit trace.
pub fn build_density(
    chain: &ChainConfig,
    model: &DistinguishabilityModel,
) -> Result<DensityOperator> {
    let (m, _) = mixture(chain, model)?;
    let tr = m.trace().re;
    if tr <= 0.0 {
        return Err(Error::ZeroState);
    }
    let m = m.unscale(tr);
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    DensityOperator::from_matrix(chain.space, herm)
}

/// Pair-emission rate relative to the sum of the individual crystal rates.
///
/// Interference between indistinguishable crystals modulates the total rate;
/// this ratio is `1 + γ cos φ` for two equally pumped crystals.
pub fn relative_pair_rate(chain: &ChainConfig, model: &DistinguishabilityModel) -> Result<f64> {
    let (m, incoherent) = mixture(chain, model)?;
    if incoherent == 0.0 {
        return Err(Error::ZeroState);
    }
    Ok(m.trace().re / incoherent)
}

/// Pump and down-conversion path lengths of one interferometer, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceGeometry {
    pub l_pump_a: f64,
    pub l_pump_b: f64,
    pub l_spdc: f64,
    pub l_coherence: f64,
}

impl CoherenceGeometry {
    pub fn new(l_pump_a: f64, l_pump_b: f64, l_spdc: f64, l_coherence: f64) -> Result<Self> {
        for (name, v) in [
            ("l_pump_a", l_pump_a),
            ("l_pump_b", l_pump_b),
            ("l_spdc", l_spdc),
            ("l_coherence", l_coherence),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "{name} = {v} must be a non-negative length"
                )));
            }
        }
        Ok(CoherenceGeometry {
            l_pump_a,
            l_pump_b,
            l_spdc,
            l_coherence,
        })
    }

    /// `L_p,B − L_p,A − L_SPDC`.
    pub fn path_difference(&self) -> f64 {
        self.l_pump_b - self.l_pump_a - self.l_spdc
    }

    /// Distance of `|Δ|` from the coherence length; the sign is carried by
    /// [`coherence_satisfied`].
    pub fn margin(&self) -> f64 {
        (self.l_coherence - self.path_difference().abs()).abs()
    }
}

/// `|L_p,B − L_p,A − L_SPDC| ≤ L_coh`.
pub fn coherence_satisfied(geom: &CoherenceGeometry) -> bool {
    geom.path_difference().abs() <= geom.l_coherence
}
