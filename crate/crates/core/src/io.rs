//! File formats: count records as CSV, states and reconstructions as JSON.
//!
//! Complex numbers are `[re, im]` pairs and matrices are row-major arrays of
//! rows. Single-photon kets inside CSV cells are JSON lists of `[ℓ, re, im]`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{CountRecord, MeasurementSetting, Subspace};
use crate::mle::{FidelityEstimate, ReconstructionResult};
use crate::space::{ModeSpace, Oam};
use crate::state::{BiphotonKet, DensityOperator, PhotonKet};

pub type ComplexPair = [f64; 2];

fn pair(c: Complex64) -> ComplexPair {
    [c.re, c.im]
}

fn unpair(p: ComplexPair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

pub fn matrix_to_rows(m: &DMatrix<Complex64>) -> Vec<Vec<ComplexPair>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| pair(m[(r, c)])).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<ComplexPair>]) -> Result<DMatrix<Complex64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("matrix rows must form a square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| unpair(rows[r][c])))
}

#[derive(Debug, Serialize, Deserialize)]
struct PhotonTerm(Oam, f64, f64);

pub fn photon_ket_to_json(ket: &PhotonKet) -> String {
    let terms: Vec<PhotonTerm> = ket.iter().map(|(l, c)| PhotonTerm(l, c.re, c.im)).collect();
    serde_json::to_string(&terms).expect("plain numbers serialize")
}

pub fn photon_ket_from_json(text: &str) -> Result<PhotonKet> {
    let terms: Vec<PhotonTerm> = serde_json::from_str(text)?;
    Ok(PhotonKet::new(
        terms.into_iter().map(|t| (t.0, Complex64::new(t.1, t.2))),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    setting_id: usize,
    signal_ket: String,
    idler_ket: String,
    counts: u64,
    integration_time: f64,
}

pub fn write_records_csv<W: Write>(records: &[CountRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (k, r) in records.iter().enumerate() {
        w.serialize(CsvRow {
            setting_id: k,
            signal_ket: photon_ket_to_json(r.setting.signal()),
            idler_ket: photon_ket_to_json(r.setting.idler()),
            counts: r.counts,
            integration_time: r.integration_time,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back in `setting_id` order; the rate scale is unknown.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<CountRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut rows: Vec<CsvRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| r.setting_id);
    rows.into_iter()
        .map(|r| {
            Ok(CountRecord {
                setting: MeasurementSetting::new(
                    photon_ket_from_json(&r.signal_ket)?,
                    photon_ket_from_json(&r.idler_ket)?,
                )?,
                counts: r.counts,
                integration_time: r.integration_time,
                rate_scale: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KetJson {
    pub truncation: u32,
    /// `[ℓs, ℓi, re, im]` per term.
    pub amplitudes: Vec<(Oam, Oam, f64, f64)>,
}

impl From<&BiphotonKet> for KetJson {
    fn from(k: &BiphotonKet) -> Self {
        KetJson {
            truncation: k.space().truncation(),
            amplitudes: k.iter().map(|((s, i), c)| (s, i, c.re, c.im)).collect(),
        }
    }
}

impl KetJson {
    pub fn to_ket(&self) -> Result<BiphotonKet> {
        BiphotonKet::new(
            ModeSpace::new(self.truncation),
            self.amplitudes
                .iter()
                .map(|&(s, i, re, im)| ((s, i), Complex64::new(re, im))),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub truncation: u32,
    pub matrix: Vec<Vec<ComplexPair>>,
}

impl From<&DensityOperator> for DensityJson {
    fn from(rho: &DensityOperator) -> Self {
        DensityJson {
            truncation: rho.space().truncation(),
            matrix: matrix_to_rows(rho.matrix()),
        }
    }
}

impl DensityJson {
    pub fn to_density(&self) -> Result<DensityOperator> {
        DensityOperator::from_matrix(
            ModeSpace::new(self.truncation),
            rows_to_matrix(&self.matrix)?,
        )
    }
}

/// Reconstruction export: the density block on the tomography subspace with
/// its pair labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionJson {
    pub truncation: u32,
    pub basis: Vec<(Oam, Oam)>,
    pub subspace: Subspace,
    pub rho: Vec<Vec<ComplexPair>>,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    pub fidelity: Option<FidelityEstimate>,
}

impl From<&ReconstructionResult> for ReconstructionJson {
    fn from(r: &ReconstructionResult) -> Self {
        ReconstructionJson {
            truncation: r.rho.space().truncation(),
            basis: r.subspace.basis(),
            subspace: r.subspace.clone(),
            rho: matrix_to_rows(&r.subspace.restrict(&r.rho)),
            iterations: r.iterations,
            converged: r.converged,
            log_likelihood: r.log_likelihood,
            fidelity: r.fidelity,
        }
    }
}

impl ReconstructionJson {
    pub fn to_result(&self) -> Result<ReconstructionResult> {
        let space = ModeSpace::new(self.truncation);
        if self.basis != self.subspace.basis() {
            return Err(Error::Invalid(
                "basis labels do not match the subspace".into(),
            ));
        }
        let block = rows_to_matrix(&self.rho)?;
        if block.nrows() != self.subspace.dim() {
            return Err(Error::Dimension(format!(
                "{}x{} block for a subspace of dimension {}",
                block.nrows(),
                block.ncols(),
                self.subspace.dim()
            )));
        }
        let rho = DensityOperator::from_matrix(space, self.subspace.embed(space, &block)?)?;
        Ok(ReconstructionResult {
            rho,
            subspace: self.subspace.clone(),
            iterations: self.iterations,
            converged: self.converged,
            log_likelihood: self.log_likelihood,
            likelihood_trace: Vec::new(),
            fidelity: self.fidelity,
        })
    }
}
