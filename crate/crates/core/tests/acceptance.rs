//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any failed.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI, TAU};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2};
use pathid_core::fringe::{expected_fringe, phase_grid, simulate_fringe};
use pathid_core::measurement::dominance_ratio;
use pathid_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type C = Complex64;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn space() -> ModeSpace {
    ModeSpace::default()
}

/// Reference targets written out term by term.
fn reference_state(name: &str) -> BiphotonKet {
    let w = 1.0 / 3f64.sqrt();
    let omega = C::from_polar(1.0, TAU / 3.0);
    let terms: Vec<((Oam, Oam), C)> = match name {
        "phi+" => vec![
            ((0, 0), c(FRAC_1_SQRT_2, 0.0)),
            ((2, 2), c(FRAC_1_SQRT_2, 0.0)),
        ],
        "phi-" => vec![
            ((0, 0), c(FRAC_1_SQRT_2, 0.0)),
            ((2, 2), c(-FRAC_1_SQRT_2, 0.0)),
        ],
        "psi1" => vec![
            ((0, 0), c(w, 0.0)),
            ((2, 2), c(w, 0.0)),
            ((-2, -2), c(w, 0.0)),
        ],
        "psi2" => vec![
            ((0, 0), c(w, 0.0)),
            ((2, 2), omega * w),
            ((-2, -2), omega.conj() * w),
        ],
        "psi3" => vec![
            ((0, 0), c(w, 0.0)),
            ((2, 2), omega.conj() * w),
            ((-2, -2), omega * w),
        ],
        "psi4" => vec![
            ((0, 0), c(w, 0.0)),
            ((2, 2), c(-w, 0.0)),
            ((-2, -2), c(-w, 0.0)),
        ],
        "psi5" => {
            let n = 22f64.sqrt();
            vec![
                ((0, 0), c(2.0 / n, 0.0)),
                ((2, 2), c(3.0 / n, 0.0)),
                ((-2, -2), c(3.0 / n, 0.0)),
            ]
        }
        other => panic!("unknown state {other}"),
    };
    BiphotonKet::new(space(), terms).unwrap()
}

fn amplitude_error(a: &BiphotonKet, b: &BiphotonKet) -> f64 {
    let mut err: f64 = 0.0;
    for pair in a.support().chain(b.support()) {
        err = err.max((a.amplitude(pair.0, pair.1) - b.amplitude(pair.0, pair.1)).norm());
    }
    err
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/setups")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let third = 2.0 * PI / 3.0;
    let cases = [
        ("psi1", [1.0, 1.0, 1.0], 0.0, 0.0),
        ("psi2", [1.0, 1.0, 1.0], third, -third),
        ("psi3", [1.0, 1.0, 1.0], -third, third),
        ("psi4", [1.0, 1.0, 1.0], PI, PI),
        ("psi5", [2.0, 3.0, 3.0], 0.0, 0.0),
    ];
    let mut worst: f64 = 0.0;
    for (name, w, p1, p2) in cases {
        let chain = ChainConfig::three_dimensional(space(), w, p1, p2).unwrap();
        worst = worst.max(amplitude_error(
            &build_state(&chain).unwrap(),
            &reference_state(name),
        ));
    }
    let text = std::fs::read_to_string(data_dir().join("valid/three_crystal_reference.setup")).unwrap();
    let doc = parse_setup(&text).unwrap();
    worst = worst.max(amplitude_error(
        &build_state(&doc.chain().unwrap()).unwrap(),
        &reference_state("psi1"),
    ));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-12 && secs < 1.0,
        format!("max amplitude error {worst:.2e}, {secs:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for d in 2..=6 {
        for _ in 0..20 {
            let phases: Vec<f64> = (1..d).map(|_| rng.random_range(-PI..PI)).collect();
            let chain = ChainConfig::canonical(ModeSpace::new(6), &vec![1.0; d], &phases).unwrap();
            let acc = chain.accumulated_phases().unwrap();
            let k = build_state(&chain).unwrap();
            for i in 1..d {
                // φ̄_i = Σ_{j=d−i}^{d−1} φ_j with φ_j = phases[j − 1].
                let want: f64 = (d - i..d).map(|j| phases[j - 1]).sum();
                worst = worst.max((acc[i - 1] - want).abs());
                let m = i as i32;
                let got = k.amplitude(m, m).arg() - k.amplitude(0, 0).arg();
                let diff = (got - want).rem_euclid(TAU);
                worst = worst.max(diff.min(TAU - diff));
            }
        }
    }
    outcome(
        worst < 1e-10,
        format!("max phase error {worst:.2e} over d = 2..6"),
    )
}

fn modes_for(name: &str) -> &'static [Oam] {
    if name.starts_with("phi") {
        &[0, 2]
    } else {
        &[-2, 0, 2]
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let names = ["phi+", "phi-", "psi1", "psi2", "psi3", "psi4", "psi5"];
    let results: Vec<(String, DensityOperator)> = names
        .iter()
        .map(|&name| {
            let target = reference_state(name);
            let design = TomographyDesign::standard(modes_for(name)).unwrap();
            let recs = expected_counts(&target.to_density().unwrap(), &design, 1e6, 1.0).unwrap();
            let res = mle_reconstruct(&recs, &design, space(), &MleOptions::default()).unwrap();
            (name.to_string(), res.rho)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let mut min_self: f64 = 1.0;
    for (name, rho) in &results {
        min_self = min_self.min(fidelity(&reference_state(name), rho).unwrap());
    }
    let mut cross: f64 = 0.0;
    for (i, a) in ["psi1", "psi2", "psi3"].iter().enumerate() {
        for (j, b) in ["psi1", "psi2", "psi3"].iter().enumerate() {
            let rho = &results.iter().find(|r| r.0 == *b).unwrap().1;
            let analytic = reference_state(a)
                .inner_product(&reference_state(b))
                .unwrap()
                .norm_sqr();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((analytic - expect).abs() < 1e-12);
            cross = cross.max((fidelity(&reference_state(a), rho).unwrap() - analytic).abs());
        }
    }
    outcome(
        min_self >= 0.999 && cross <= 0.02 && secs < 10.0,
        format!("min self-fidelity {min_self:.6}, max cross deviation {cross:.2e}, {secs:.2} s"),
    )
}

fn percentile_5(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(0.05 * v.len() as f64).floor() as usize]
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, threshold) in [("phi+", 0.98), ("psi1", 0.97)] {
        let target = reference_state(name);
        let rho = target.to_density().unwrap();
        let design = TomographyDesign::standard(modes_for(name)).unwrap();
        let runs: Vec<(f64, bool)> = (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let recs = simulate_counts(&rho, &design, 1e4, 1.0, seed).unwrap();
                let res = mle_reconstruct(&recs, &design, space(), &MleOptions::default()).unwrap();
                let m = res.rho.matrix();
                let physical = res.rho.hermiticity_error() < 1e-10
                    && res.rho.min_eigenvalue() > -1e-10
                    && (m.trace().re - 1.0).abs() < 1e-10;
                (fidelity(&target, &res.rho).unwrap(), physical)
            })
            .collect();
        let physical = runs.iter().all(|r| r.1);
        let p5 = percentile_5(runs.iter().map(|r| r.0).collect());
        pass &= physical && p5 >= threshold;
        lines.push(format!(
            "{name} p5 {p5:.4} (need {threshold}), physical {physical}"
        ));
    }
    outcome(pass, lines.join("; "))
}

fn fringe_chain() -> ChainConfig {
    ChainConfig::new(
        space(),
        vec![
            Stage::Crystal(CrystalSpec::ideal(1.0)),
            Stage::PhaseShifter(0.0),
            Stage::Crystal(CrystalSpec::ideal(1.0)),
        ],
    )
    .unwrap()
}

fn criterion_5() -> Outcome {
    let chain = fringe_chain();
    let setting = MeasurementSetting::computational(0, 0);
    let grid = phase_grid(24);
    let mut worst: f64 = 0.0;
    for g in [0.0, 0.25, 0.5, 0.75, 0.971, 1.0] {
        let model = DistinguishabilityModel::uniform(2, g).unwrap();
        let samples = expected_fringe(&chain, &model, 1, &grid, &setting, 500.0, 1.0).unwrap();
        worst = worst.max((visibility(&samples).unwrap().visibility - g).abs());
    }
    let model = DistinguishabilityModel::uniform(2, 0.971).unwrap();
    let fit_seed = |seed: u64| {
        let counts = simulate_fringe(&chain, &model, 1, &grid, &setting, 500.0, 1.0, seed).unwrap();
        let samples: Vec<(f64, f64)> = counts.iter().map(|&(p, n)| (p, n as f64)).collect();
        visibility(&samples).unwrap()
    };
    let fit = fit_seed(971);
    let within = (fit.visibility - 0.971).abs() <= 3.0 * fit.visibility_err;
    let covered = (0..200u64)
        .filter(|&s| {
            let f = fit_seed(10_000 + s);
            (f.visibility - 0.971).abs() <= 3.0 * f.visibility_err
        })
        .count();
    outcome(
        worst <= 1e-6 && within && covered >= 190,
        format!(
            "noiseless max error {worst:.2e}; Poisson V = {:.4} ± {:.4}; 3σ coverage {covered}/200",
            fit.visibility, fit.visibility_err
        ),
    )
}

fn criterion_6() -> Outcome {
    let a1 = 0.05f64.sqrt();
    let chain = ChainConfig::new(
        space(),
        vec![Stage::Crystal(
            CrystalSpec::ideal(1.0).with_spiral(vec![c(1.0, 0.0), c(a1, 0.0)]),
        )],
    )
    .unwrap();
    let rho = build_density(&chain, &DistinguishabilityModel::coherent(1)).unwrap();
    let range: Vec<Oam> = (-3..=3).collect();
    let m = crosstalk_matrix(&rho, &range).unwrap();
    let ratio = dominance_ratio(&m);
    // The ratio is exactly |α0|²/|α1|² = 20; allow for rounding only.
    outcome(
        ratio >= 20.0 * (1.0 - 1e-9),
        format!("dominance ratio {ratio:.12}"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut boundary = 0;
    for k in 0..100 {
        let lpa = rng.random_range(0.0..500.0f64).round();
        let lpb = rng.random_range(0.0..1000.0f64).round();
        let lcoh = rng.random_range(1.0..60.0f64).round();
        // Every fourth case sits exactly on |Δ| = L_coh.
        let lspdc = if k % 4 == 0 {
            let s = lpb - lpa - if k % 8 == 0 { lcoh } else { -lcoh };
            if s < 0.0 {
                lpb - lpa + lcoh
            } else {
                s
            }
        } else {
            rng.random_range(0.0..800.0f64).round()
        };
        if lspdc < 0.0 {
            continue;
        }
        let delta = lpb - lpa - lspdc;
        if delta.abs() == lcoh {
            boundary += 1;
        }
        let expect = delta.abs() <= lcoh;
        let geom = CoherenceGeometry::new(lpa, lpb, lspdc, lcoh).unwrap();
        if coherence_satisfied(&geom) != expect {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && boundary > 0,
        format!("{mismatches} mismatches, {boundary} boundary cases"),
    )
}

fn oracle_rotation(a: f64) -> Matrix2<C> {
    Matrix2::new(
        c(a.cos(), 0.0),
        c(-a.sin(), 0.0),
        c(a.sin(), 0.0),
        c(a.cos(), 0.0),
    )
}

fn oracle_half_wave(a: f64) -> Matrix2<C> {
    let (s, co) = (2.0 * a).sin_cos();
    Matrix2::new(c(co, 0.0), c(s, 0.0), c(s, 0.0), c(-co, 0.0))
}

fn oracle_quarter_wave(a: f64) -> Matrix2<C> {
    let (s, co) = a.sin_cos();
    let off = c(1.0, -1.0) * s * co;
    Matrix2::new(c(co * co, s * s), off, off, c(s * s, co * co))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sz = Matrix2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0));
    let mut identity_err: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b, g) = (
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
        );
        // Library plates against the closed forms.
        identity_err = identity_err
            .max((rotation(a).0 - oracle_rotation(a)).camax())
            .max((half_wave(a).0 - oracle_half_wave(a)).camax())
            .max((quarter_wave(g).0 - oracle_quarter_wave(g)).camax());
        // H(α)H(β) = H(α − β)σ_Z and σ_Z Q(−γ) = Q(γ)σ_Z.
        identity_err = identity_err
            .max((oracle_half_wave(a) * oracle_half_wave(b) - oracle_half_wave(a - b) * sz).camax())
            .max((sz * oracle_quarter_wave(-g) - oracle_quarter_wave(g) * sz).camax())
            .max(qhq_reduction_check(a, b, g));
        // Quarter-wave phase transfer on (cos φ, sin φ).
        let phi = a;
        let out = oracle_quarter_wave(FRAC_PI_4)
            * nalgebra::Vector2::new(c(phi.cos(), 0.0), c(phi.sin(), 0.0));
        let (rel, global) = qwp_phase_transfer(phi);
        let want = nalgebra::Vector2::new(
            C::from_polar(FRAC_1_SQRT_2, global),
            C::from_polar(FRAC_1_SQRT_2, global + rel),
        );
        identity_err = identity_err.max((out - want).camax());
    }
    let mut solve_err: f64 = 0.0;
    for _ in 0..100 {
        let input = JonesVector::new(
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        );
        let target = rng.random_range(-PI..PI);
        let sol = solve_qhq(&input, target).unwrap();
        let plates = oracle_quarter_wave(sol.q_out.angle)
            * oracle_half_wave(sol.h_mid.angle)
            * oracle_quarter_wave(sol.q_in.angle);
        let unit = input.normalized().unwrap();
        let out = plates * nalgebra::Vector2::new(unit.h, unit.v);
        let d = ((out[1] / out[0]).arg() - target).rem_euclid(TAU);
        solve_err = solve_err
            .max(d.min(TAU - d))
            .max((out[0].norm() - FRAC_1_SQRT_2).abs())
            .max((out[1].norm() - FRAC_1_SQRT_2).abs());
    }
    outcome(
        identity_err <= 1e-12 && solve_err <= 1e-9,
        format!("identity error {identity_err:.2e}, solver error {solve_err:.2e}"),
    )
}

fn random_density_block(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<C> {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let m = &a * a.adjoint() + DMatrix::identity(dim, dim) * c(0.05, 0.0);
    let t = m.trace();
    m / t
}

/// Linear inversion: least-squares solve of `p_k = v_k† ρ v_k` for the entries of ρ.
fn linear_inversion(records: &[CountRecord], design: &TomographyDesign) -> DMatrix<C> {
    let sub = design.subspace();
    let d = sub.dim();
    let rows: Vec<Vec<C>> = design
        .settings()
        .iter()
        .map(|s| {
            let v = sub.setting_vector(s);
            let mut row = Vec::with_capacity(d * d);
            for a in 0..d {
                for b in 0..d {
                    row.push(v[a].conj() * v[b]);
                }
            }
            row
        })
        .collect();
    let a = DMatrix::from_fn(rows.len(), d * d, |r, k| rows[r][k]);
    let b = DVector::from_iterator(
        records.len(),
        records.iter().map(|r| c(r.counts as f64, 0.0)),
    );
    let normal = a.adjoint() * &a;
    let x = normal.lu().solve(&(a.adjoint() * b)).unwrap();
    let m = DMatrix::from_fn(d, d, |r, k| x[r * d + k]);
    let t = m.trace();
    m / t
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let design = TomographyDesign::standard(&[0, 2]).unwrap();
    let sub = design.subspace().clone();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let block = random_density_block(&mut rng, sub.dim());
        let rho =
            DensityOperator::from_matrix(space(), sub.embed(space(), &block).unwrap()).unwrap();
        let recs = expected_counts(&rho, &design, 1e12, 1.0).unwrap();
        let mle = mle_reconstruct(&recs, &design, space(), &MleOptions::default()).unwrap();
        let oracle = linear_inversion(&recs, &design);
        let oracle =
            DensityOperator::from_matrix(space(), sub.embed(space(), &oracle).unwrap()).unwrap();
        worst = worst.max(mle.rho.trace_distance(&oracle).unwrap());
    }
    outcome(
        worst < 1e-4,
        format!("max trace distance {worst:.2e} over 20 states"),
    )
}

fn criterion_10() -> Outcome {
    let list = |sub: &str| -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(data_dir().join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "setup"))
            .collect();
        v.sort();
        v
    };
    let valid = list("valid");
    let malformed = list("malformed");
    let mut failures = Vec::new();
    let mut round_trips = 0;
    for path in &valid {
        let text = std::fs::read_to_string(path).unwrap();
        let ok = match parse_setup(&text) {
            Ok(doc) => parse_setup(&doc.to_string()).is_ok_and(|again| again == doc),
            Err(_) => false,
        };
        if ok {
            round_trips += 1;
        } else {
            failures.push(path.file_name().unwrap().to_string_lossy().to_string());
        }
    }
    let mut positioned = 0;
    for path in &malformed {
        let text = std::fs::read_to_string(path).unwrap();
        let lines = text.lines().count().max(1);
        let result = std::panic::catch_unwind(|| parse_setup(&text));
        match result {
            Ok(Err(e)) if e.line >= 1 && e.line <= lines && e.column >= 1 => positioned += 1,
            _ => failures.push(path.file_name().unwrap().to_string_lossy().to_string()),
        }
    }
    let has_reference = valid.iter().any(|p| p.ends_with("three_crystal_reference.setup"));
    outcome(
        failures.is_empty() && valid.len() >= 20 && malformed.len() >= 10 && has_reference,
        format!(
            "{round_trips}/{} valid files round-trip, {positioned}/{} malformed files positioned{}",
            valid.len(),
            malformed.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(", "))
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("state construction", criterion_1),
        ("phase law", criterion_2),
        ("noiseless tomography", criterion_3),
        ("Poisson tomography", criterion_4),
        ("visibility", criterion_5),
        ("spiral spectrum", criterion_6),
        ("coherence inequality", criterion_7),
        ("QHQ algebra", criterion_8),
        ("oracle equivalence", criterion_9),
        ("parser corpus", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<22} {}  {} [{:.2} s]",
            k + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
