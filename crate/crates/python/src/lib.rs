//! Python bindings for `pathid-core`.
//!
//! Angles are radians and complex numbers are Python `complex`. Density
//! matrices come back as nested lists over the full pair space, ordered as
//! `Density.basis()`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pathid_core::io::{read_records_csv, write_records_csv};
use pathid_core::{
    bootstrap_fidelity, build_density, build_state, coherence_satisfied, crosstalk_matrix,
    expected_counts, mle_reconstruct, parse_setup, simulate_counts, solve_qhq, visibility,
    BiphotonKet, ChainConfig, CoherenceGeometry, Complex64, CountRecord, DensityOperator,
    DistinguishabilityModel, Error, JonesVector, MleOptions, ModeSpace, Oam, TomographyDesign,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Incomplete { .. } | Error::Fit(_) | Error::ZeroState => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Chain", module = "pathid", frozen)]
struct PyChain(ChainConfig);

#[pymethods]
impl PyChain {
    /// Chain described by the stage lines of a setup file.
    #[staticmethod]
    fn from_setup(text: &str) -> PyResult<Self> {
        let doc = parse_setup(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        doc.chain().map(PyChain).map_err(err)
    }

    /// `α|0,0⟩ + β e^{iφ1}|2,2⟩ + γ e^{iφ2}|−2,−2⟩` from pump weights.
    #[staticmethod]
    #[pyo3(signature = (weights, phi1, phi2, truncation = 4))]
    fn three_dimensional(weights: [f64; 3], phi1: f64, phi2: f64, truncation: u32) -> PyResult<Self> {
        ChainConfig::three_dimensional(ModeSpace::new(truncation), weights, phi1, phi2)
            .map(PyChain)
            .map_err(err)
    }

    /// `Σ_i w_i e^{iφ̄_i}|i,i⟩` built from crystals separated by mode shifters.
    #[staticmethod]
    #[pyo3(signature = (weights, phases, truncation = 4))]
    fn canonical(weights: Vec<f64>, phases: Vec<f64>, truncation: u32) -> PyResult<Self> {
        ChainConfig::canonical(ModeSpace::new(truncation), &weights, &phases)
            .map(PyChain)
            .map_err(err)
    }

    #[getter]
    fn truncation(&self) -> u32 {
        self.0.space().truncation()
    }

    #[getter]
    fn crystal_count(&self) -> usize {
        self.0.crystal_count()
    }

    /// Same chain with the phase stage at `stage` set to `phi`.
    fn with_phase(&self, stage: usize, phi: f64) -> PyResult<Self> {
        self.0.with_phase(stage, phi).map(PyChain).map_err(err)
    }

    fn accumulated_phases(&self) -> PyResult<Vec<f64>> {
        self.0.accumulated_phases().map_err(err)
    }

    fn build_state(&self) -> PyResult<PyKet> {
        build_state(&self.0).map(PyKet).map_err(err)
    }

    /// Mixed state when every crystal pair has coherence `gamma`.
    #[pyo3(signature = (gamma = 1.0))]
    fn build_density(&self, gamma: f64) -> PyResult<PyDensity> {
        let model = DistinguishabilityModel::uniform(self.0.crystal_count(), gamma).map_err(err)?;
        build_density(&self.0, &model).map(PyDensity).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Chain(crystals={}, stages={}, truncation={})",
            self.0.crystal_count(),
            self.0.stages().len(),
            self.0.space().truncation()
        )
    }
}

#[pyclass(name = "Ket", module = "pathid", frozen)]
struct PyKet(BiphotonKet);

#[pymethods]
impl PyKet {
    #[staticmethod]
    #[pyo3(signature = (amplitudes, truncation = 4))]
    fn new(amplitudes: Vec<(Oam, Oam, Complex64)>, truncation: u32) -> PyResult<Self> {
        BiphotonKet::new(
            ModeSpace::new(truncation),
            amplitudes.into_iter().map(|(s, i, c)| ((s, i), c)),
        )
        .and_then(|k| k.normalize())
        .map(PyKet)
        .map_err(err)
    }

    #[getter]
    fn truncation(&self) -> u32 {
        self.0.space().truncation()
    }

    /// `(ℓs, ℓi, amplitude)` for every nonzero term.
    fn amplitudes(&self) -> Vec<(Oam, Oam, Complex64)> {
        self.0.iter().map(|((s, i), c)| (s, i, c)).collect()
    }

    fn amplitude(&self, signal: Oam, idler: Oam) -> Complex64 {
        self.0.amplitude(signal, idler)
    }

    fn norm_sqr(&self) -> f64 {
        self.0.norm_sqr()
    }

    fn inner_product(&self, other: PyRef<'_, PyKet>) -> PyResult<Complex64> {
        self.0.inner_product(&other.0).map_err(err)
    }

    fn to_density(&self) -> PyResult<PyDensity> {
        self.0.to_density().map(PyDensity).map_err(err)
    }

    fn __repr__(&self) -> String {
        let terms: Vec<String> = self
            .0
            .iter()
            .map(|((s, i), c)| format!("({:.4}{:+.4}j)|{s},{i}>", c.re, c.im))
            .collect();
        format!("Ket({})", terms.join(" + "))
    }
}

#[pyclass(name = "Density", module = "pathid", frozen)]
struct PyDensity(DensityOperator);

#[pymethods]
impl PyDensity {
    #[getter]
    fn truncation(&self) -> u32 {
        self.0.space().truncation()
    }

    /// Row/column labels `(ℓs, ℓi)` of `matrix()`.
    fn basis(&self) -> Vec<(Oam, Oam)> {
        let space = self.0.space();
        (0..space.joint_dim()).map(|k| space.pair(k)).collect()
    }

    fn matrix(&self) -> Vec<Vec<Complex64>> {
        let m = self.0.matrix();
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect()
    }

    fn entry(&self, row: (Oam, Oam), col: (Oam, Oam)) -> Complex64 {
        self.0.entry(row, col)
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.0.eigenvalues()
    }

    fn purity(&self) -> f64 {
        self.0.purity()
    }

    fn fidelity(&self, target: PyRef<'_, PyKet>) -> PyResult<f64> {
        self.0.fidelity(&target.0).map_err(err)
    }

    fn trace_distance(&self, other: PyRef<'_, PyDensity>) -> PyResult<f64> {
        self.0.trace_distance(&other.0).map_err(err)
    }

    /// Computational coincidence map over `modes`, largest entry 1.
    fn crosstalk(&self, modes: Vec<Oam>) -> PyResult<Vec<Vec<f64>>> {
        let m = crosstalk_matrix(&self.0, &modes).map_err(err)?;
        Ok((0..m.nrows())
            .map(|r| m.row(r).iter().copied().collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Density(truncation={}, purity={:.6})",
            self.0.space().truncation(),
            self.0.purity()
        )
    }
}

#[pyclass(name = "TomographyDesign", module = "pathid", frozen)]
struct PyDesign(TomographyDesign);

#[pymethods]
impl PyDesign {
    /// Computational and two-mode superposition projectors on `modes`.
    #[staticmethod]
    fn standard(modes: Vec<Oam>) -> PyResult<Self> {
        TomographyDesign::standard(&modes).map(PyDesign).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn rank(&self) -> usize {
        self.0.rank()
    }

    /// Pair labels of the reconstructed block.
    fn basis(&self) -> Vec<(Oam, Oam)> {
        self.0.subspace().basis()
    }
}

#[pyclass(name = "Counts", module = "pathid", frozen)]
struct PyCounts(Vec<CountRecord>);

#[pymethods]
impl PyCounts {
    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.0.iter().map(|r| r.counts).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_records_csv(&self.0, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        read_records_csv(text.as_bytes()).map(PyCounts).map_err(err)
    }
}

#[pyclass(name = "Reconstruction", module = "pathid", frozen, get_all)]
struct PyReconstruction {
    rho: Py<PyDensity>,
    iterations: usize,
    converged: bool,
    log_likelihood: f64,
}

#[pyfunction]
fn simulate(
    rho: PyRef<'_, PyDensity>,
    design: PyRef<'_, PyDesign>,
    rate: f64,
    time: f64,
    seed: u64,
) -> PyResult<PyCounts> {
    simulate_counts(&rho.0, &design.0, rate, time, seed)
        .map(PyCounts)
        .map_err(err)
}

/// Mean counts rounded to integers.
#[pyfunction]
fn expected(
    rho: PyRef<'_, PyDensity>,
    design: PyRef<'_, PyDesign>,
    rate: f64,
    time: f64,
) -> PyResult<PyCounts> {
    expected_counts(&rho.0, &design.0, rate, time)
        .map(PyCounts)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (counts, design, truncation = 4, max_iter = 10_000, tol = 1e-10))]
fn reconstruct(
    py: Python<'_>,
    counts: PyRef<'_, PyCounts>,
    design: PyRef<'_, PyDesign>,
    truncation: u32,
    max_iter: usize,
    tol: f64,
) -> PyResult<PyReconstruction> {
    let options = MleOptions {
        max_iter,
        tol,
        ..MleOptions::default()
    };
    let records = counts.0.clone();
    let design = design.0.clone();
    let res = py
        .detach(move || mle_reconstruct(&records, &design, ModeSpace::new(truncation), &options))
        .map_err(err)?;
    Ok(PyReconstruction {
        rho: Py::new(py, PyDensity(res.rho))?,
        iterations: res.iterations,
        converged: res.converged,
        log_likelihood: res.log_likelihood,
    })
}

/// `(mean, stddev)` of the fidelity over Poisson resamples of `counts`.
#[pyfunction]
fn bootstrap(
    py: Python<'_>,
    counts: PyRef<'_, PyCounts>,
    design: PyRef<'_, PyDesign>,
    target: PyRef<'_, PyKet>,
    resamples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let (records, design, target) = (counts.0.clone(), design.0.clone(), target.0.clone());
    let est = py
        .detach(move || {
            bootstrap_fidelity(
                &records,
                &design,
                &target,
                resamples,
                seed,
                &MleOptions::default(),
            )
        })
        .map_err(err)?;
    Ok((est.mean, est.stddev))
}

/// Fit `A(1 + V cos(φ + φ0))` to a scan.
#[pyfunction]
fn fit_visibility<'py>(
    py: Python<'py>,
    phases: Vec<f64>,
    counts: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    if phases.len() != counts.len() {
        return Err(PyValueError::new_err(format!(
            "{} phases but {} counts",
            phases.len(),
            counts.len()
        )));
    }
    let samples: Vec<(f64, f64)> = phases.into_iter().zip(counts).collect();
    let fit = visibility(&samples).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("visibility", fit.visibility)?;
    d.set_item("visibility_err", fit.visibility_err)?;
    d.set_item("amplitude", fit.amplitude)?;
    d.set_item("amplitude_err", fit.amplitude_err)?;
    d.set_item("phase", fit.phase)?;
    d.set_item("phase_err", fit.phase_err)?;
    Ok(d)
}

/// Waveplate angles `(q_in, h_mid, q_out)` producing relative phase `target`.
#[pyfunction]
fn qhq_solve<'py>(
    py: Python<'py>,
    input_h: Complex64,
    input_v: Complex64,
    target: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = solve_qhq(&JonesVector::new(input_h, input_v), target).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("q_in", sol.q_in.angle)?;
    d.set_item("h_mid", sol.h_mid.angle)?;
    d.set_item("q_out", sol.q_out.angle)?;
    d.set_item("output", (sol.output.h, sol.output.v))?;
    d.set_item("global_phase", sol.global_phase)?;
    Ok(d)
}

/// `(satisfied, margin)` for the path lengths of one interferometer.
#[pyfunction]
fn coherence_check(lpa: f64, lpb: f64, lspdc: f64, lcoh: f64) -> PyResult<(bool, f64)> {
    let g = CoherenceGeometry::new(lpa, lpb, lspdc, lcoh).map_err(err)?;
    Ok((coherence_satisfied(&g), g.margin()))
}

/// Parse and re-print a setup file in normal form.
#[pyfunction]
fn normalize_setup(text: &str) -> PyResult<String> {
    parse_setup(text)
        .map(|d| d.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
pub fn pathid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_class::<PyKet>()?;
    m.add_class::<PyDensity>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyCounts>()?;
    m.add_class::<PyReconstruction>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(expected, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(fit_visibility, m)?)?;
    m.add_function(wrap_pyfunction!(qhq_solve, m)?)?;
    m.add_function(wrap_pyfunction!(coherence_check, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_setup, m)?)?;
    Ok(())
}
