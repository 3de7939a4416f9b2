//! Jones calculus for the quarter-half-quarter (QHQ) phase control of the
//! locking beam.
//!
//! Plate angles are measured from the vertical direction, which is the first
//! basis vector of the matrices below; [`JonesVector::h`] and
//! [`JonesVector::v`] name the two components as they are labelled at the
//! polarizing splitter. Angles are radians throughout this module.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::ops::Mul;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JonesVector {
    pub h: Complex64,
    pub v: Complex64,
}

impl JonesVector {
    pub fn new(h: Complex64, v: Complex64) -> Self {
        JonesVector { h, v }
    }

    /// Linear polarization at angle `phi`: `(cos φ, sin φ)`.
    pub fn linear(phi: f64) -> Self {
        JonesVector::new(
            Complex64::new(phi.cos(), 0.0),
            Complex64::new(phi.sin(), 0.0),
        )
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroState);
        }
        Ok(JonesVector::new(self.h / n, self.v / n))
    }

    /// `arg(v) − arg(h)` wrapped to `(−π, π]`.
    pub fn relative_phase(&self) -> f64 {
        wrap((self.v * self.h.conj()).arg())
    }

    /// `|⟨self|other⟩|`.
    pub fn overlap(&self, other: &JonesVector) -> f64 {
        (self.h.conj() * other.h + self.v.conj() * other.v).norm()
    }

    fn as_vector(&self) -> Vector2<Complex64> {
        Vector2::new(self.h, self.v)
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub Matrix2<Complex64>);

impl JonesMatrix {
    pub fn identity() -> Self {
        JonesMatrix(Matrix2::identity())
    }

    /// Pauli Z.
    pub fn sigma_z() -> Self {
        JonesMatrix(Matrix2::new(C1, C0, C0, -C1))
    }

    pub fn adjoint(&self) -> Self {
        JonesMatrix(self.0.adjoint())
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        let out = self.0 * v.as_vector();
        JonesVector::new(out[0], out[1])
    }

    /// `‖M†M − I‖_max`.
    pub fn unitarity_error(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2::identity()).camax()
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_deviation(&self, other: &JonesMatrix) -> f64 {
        (self.0 - other.0).camax()
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

/// `[[cos α, −sin α], [sin α, cos α]]`.
pub fn rotation(alpha: f64) -> JonesMatrix {
    let (s, c) = alpha.sin_cos();
    JonesMatrix(Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(c, 0.0),
    ))
}

/// `Q(α) = R(α) diag(1, i) R(−α)`.
pub fn quarter_wave(alpha: f64) -> JonesMatrix {
    let retarder = JonesMatrix(Matrix2::new(C1, C0, C0, Complex64::new(0.0, 1.0)));
    rotation(alpha) * retarder * rotation(-alpha)
}

/// `H(α) = R(α) σ_Z R(−α)`.
pub fn half_wave(alpha: f64) -> JonesMatrix {
    rotation(alpha) * JonesMatrix::sigma_z() * rotation(-alpha)
}

/// Relative and global phase a quarter-wave plate at π/4 imprints on the
/// linear input `(cos φ, sin φ)`:
/// `Q(π/4)(cos φ, sin φ) = e^{i(π/4 − φ)}/√2 · (1, e^{i(2φ − π/2)})`.
pub fn qwp_phase_transfer(phi: f64) -> (f64, f64) {
    (2.0 * phi - FRAC_PI_2, FRAC_PI_4 - phi)
}

/// `‖Q(π/4)H(α)H(β)Q(γ) − Q(π/4)H(α−β)Q(−γ)σ_Z‖_max`.
pub fn qhq_reduction_check(alpha: f64, beta: f64, gamma: f64) -> f64 {
    let lhs = quarter_wave(FRAC_PI_4) * half_wave(alpha) * half_wave(beta) * quarter_wave(gamma);
    let rhs = quarter_wave(FRAC_PI_4)
        * half_wave(alpha - beta)
        * quarter_wave(-gamma)
        * JonesMatrix::sigma_z();
    lhs.max_deviation(&rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlateKind {
    Quarter,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSetting {
    pub kind: PlateKind,
    /// Radians in `[0, π)`.
    pub angle: f64,
}

impl WaveplateSetting {
    pub fn new(kind: PlateKind, angle: f64) -> Self {
        let mut a = angle.rem_euclid(PI);
        if a >= PI {
            a = 0.0;
        }
        WaveplateSetting { kind, angle: a }
    }

    pub fn matrix(&self) -> JonesMatrix {
        match self.kind {
            PlateKind::Quarter => quarter_wave(self.angle),
            PlateKind::Half => half_wave(self.angle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QhqSolution {
    pub q_in: WaveplateSetting,
    pub h_mid: WaveplateSetting,
    pub q_out: WaveplateSetting,
    /// Output field, including its global phase.
    pub output: JonesVector,
    /// `arg` of the output's first component.
    pub global_phase: f64,
}

impl QhqSolution {
    /// `Q(q_out) H(h_mid) Q(q_in)`.
    pub fn matrix(&self) -> JonesMatrix {
        self.q_out.matrix() * self.h_mid.matrix() * self.q_in.matrix()
    }
}

/// Relative phase `ω` produced by `Q(π/4) H(alpha) Q(gamma)` on `input`.
pub fn qhq_relative_phase(input: &JonesVector, gamma: f64, alpha: f64) -> f64 {
    (quarter_wave(FRAC_PI_4) * half_wave(alpha) * quarter_wave(gamma))
        .apply(input)
        .relative_phase()
}

/// Waveplate angles `(γ, α, π/4)` such that `Q(π/4) H(α) Q(γ)·input` equals
/// `(1, e^{iω})/√2` up to a global phase, with `ω = target_relative_phase`.
///
/// `Q(γ)` with `γ` on the input ellipse's principal axis makes the beam
/// linear, the half-wave plate reflects that linear angle `θ` to
/// `φ = 2α − θ`, and the output plate turns `φ` into the relative phase
/// `2φ − π/2`. With `γ` fixed, `ω` moves as `4α`.
pub fn solve_qhq(input: &JonesVector, target_relative_phase: f64) -> Result<QhqSolution> {
    let input = input.normalized()?;
    let (h, v) = (input.h, input.v);
    let s1 = h.norm_sqr() - v.norm_sqr();
    let s2 = 2.0 * (h.conj() * v).re;
    let gamma = 0.5 * s2.atan2(s1);

    let linear = quarter_wave(gamma).apply(&input);
    // Strip the common phase; what remains is real up to rounding.
    let reference = if linear.h.norm() >= linear.v.norm() {
        linear.h
    } else {
        linear.v
    };
    let unphase = reference.conj() / reference.norm();
    let theta = (linear.v * unphase).re.atan2((linear.h * unphase).re);

    let phi = 0.5 * (target_relative_phase + FRAC_PI_2);
    let mut alpha = 0.5 * (phi + theta);

    // One Newton polish on α against the forward model (dω/dα = 4).
    for _ in 0..3 {
        let err = wrap(qhq_relative_phase(&input, gamma, alpha) - target_relative_phase);
        if err.abs() < 1e-15 {
            break;
        }
        alpha -= err / 4.0;
    }

    let q_in = WaveplateSetting::new(PlateKind::Quarter, gamma);
    let h_mid = WaveplateSetting::new(PlateKind::Half, alpha);
    let q_out = WaveplateSetting::new(PlateKind::Quarter, FRAC_PI_4);
    let output = (q_out.matrix() * h_mid.matrix() * q_in.matrix()).apply(&input);
    Ok(QhqSolution {
        q_in,
        h_mid,
        q_out,
        output,
        global_phase: output.h.arg(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &JonesMatrix, b: [[f64; 2]; 2]) -> bool {
        let m = JonesMatrix(Matrix2::new(
            Complex64::new(b[0][0], 0.0),
            Complex64::new(b[0][1], 0.0),
            Complex64::new(b[1][0], 0.0),
            Complex64::new(b[1][1], 0.0),
        ));
        a.max_deviation(&m) < 1e-15
    }

    #[test]
    fn rotation_values() {
        assert!(close(&rotation(0.0), [[1.0, 0.0], [0.0, 1.0]]));
        assert!(close(&rotation(FRAC_PI_2), [[0.0, -1.0], [1.0, 0.0]]));
        let (a, b) = (0.3, -1.1);
        assert!((rotation(a) * rotation(b)).max_deviation(&rotation(a + b)) < 1e-15);
        let det = rotation(0.7).0.determinant();
        assert!((det - C1).norm() < 1e-15);
    }

    #[test]
    fn plate_values() {
        let q0 = quarter_wave(0.0);
        assert!((q0.0 - Matrix2::new(C1, C0, C0, Complex64::new(0.0, 1.0))).camax() < 1e-15);
        assert!(close(&half_wave(0.0), [[1.0, 0.0], [0.0, -1.0]]));
        assert!(close(&half_wave(FRAC_PI_4), [[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn phase_transfer_examples() {
        assert_eq!(qwp_phase_transfer(FRAC_PI_4).0, 0.0);
        let (rel, _) = qwp_phase_transfer(0.0);
        assert!((rel + FRAC_PI_2).abs() < 1e-15);
        let out = quarter_wave(FRAC_PI_4).apply(&JonesVector::linear(0.0));
        let expected = JonesVector::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0))
            .normalized()
            .unwrap();
        assert!((out.overlap(&expected) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduction_at_origin() {
        assert!(qhq_reduction_check(0.0, 0.0, 0.0) <= 1e-12);
    }

    #[test]
    fn half_wave_squares_to_identity() {
        for a in [0.0, 0.4, 2.0, -3.0] {
            assert!((half_wave(a) * half_wave(a)).max_deviation(&JonesMatrix::identity()) < 1e-12);
        }
    }

    #[test]
    fn solve_horizontal_to_diagonal() {
        let input = JonesVector::new(C1, C0);
        let sol = solve_qhq(&input, 0.0).unwrap();
        let want = JonesVector::new(C1, C1).normalized().unwrap();
        assert!((sol.output.overlap(&want) - 1.0).abs() < 1e-9);
        assert!((sol.q_out.angle - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn solve_diagonal_to_antidiagonal() {
        let input = JonesVector::new(C1, C1).normalized().unwrap();
        let sol = solve_qhq(&input, PI).unwrap();
        let want = JonesVector::new(C1, -C1).normalized().unwrap();
        assert!((sol.output.overlap(&want) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solve_circular_input() {
        let input = JonesVector::new(C1, Complex64::new(0.0, 1.0))
            .normalized()
            .unwrap();
        let sol = solve_qhq(&input, 1.0).unwrap();
        assert!(wrap(sol.output.relative_phase() - 1.0).abs() < 1e-9);
        assert!((sol.output.h.norm() - sol.output.v.norm()).abs() < 1e-9);
    }

    #[test]
    fn zero_input_rejected() {
        assert!(solve_qhq(&JonesVector::new(C0, C0), 0.0).is_err());
    }

    #[test]
    fn waveplate_angle_normalized() {
        let w = WaveplateSetting::new(PlateKind::Half, -0.1);
        assert!((w.angle - (PI - 0.1)).abs() < 1e-15);
        let w = WaveplateSetting::new(PlateKind::Quarter, 3.0 * PI + 0.2);
        assert!((w.angle - 0.2).abs() < 1e-12);
    }
}
