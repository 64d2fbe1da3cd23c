//! Per-event detector readings.
//!
//! A diagonal channel gives each detector a bra and ket from the same source,
//! so the reading is an eigenvalue of the detector operator drawn with its
//! Born weight. An exchange channel gives a detector the bra of one source
//! and the ket of the other; the reading is a phase-modulated value whose
//! average over the emission phase is zero.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    matrix_element, overlap_coefficients, spectral_decompose, HermitianOperator,
    SpectralDecomposition, StateVector,
};
use crate::error::Result;
use crate::rng::RngStream;
use crate::wavicle::{Channel, ChannelKind, EmissionEvent, SourcePair};

/// Scale applied to every exchange-channel reading.
///
/// Averaging `cos(α + φ)·cos(β − φ)` over a uniform phase leaves
/// `cos(α + β)/2`; scaling both readings by √2 restores the full
/// `Re[⟨u|A|v⟩⟨v|B|u⟩]` per exchange channel.
pub const EXCHANGE_CALIBRATION: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Draw an eigenvalue index `j` and report `N·A_j·cos(α_j + φ)`.
    Eigenvalue,
    /// Report `Re[e^{iφ}⟨u|A|v⟩]` directly.
    Expectation,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Eigenvalue => "eigenvalue",
            SamplingMode::Expectation => "expectation",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigenvalue" => Ok(SamplingMode::Eigenvalue),
            "expectation" => Ok(SamplingMode::Expectation),
            other => Err(crate::Error::Config(format!(
                "mode must be \"eigenvalue\" or \"expectation\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorReading {
    pub detector: Detector,
    pub value: f64,
    pub channel: ChannelKind,
    pub trial_id: u64,
    /// Weight of this reading in the detector's own (separate) average.
    pub weight: f64,
}

/// Born weights of a state in an eigenbasis, ready for inverse-CDF sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PureTable {
    eigenvalues: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PureTable {
    pub fn new(state: &StateVector, decomp: &SpectralDecomposition) -> Result<Self> {
        let weights: Vec<f64> = overlap_coefficients(state, decomp)?
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        Ok(Self {
            eigenvalues: decomp.eigenvalues().to_vec(),
            cumulative: cumulative(&weights),
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.eigenvalues)
            .map(|(w, a)| w * a)
            .sum()
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        self.eigenvalues[self.sample_index(stream)]
    }

    /// Index `j` of the drawn eigenvalue.
    pub fn sample_index(&self, stream: &mut RngStream) -> usize {
        pick(&self.cumulative, stream.uniform())
    }
}

/// Normalized running sums; the last entry is exactly 1.
fn cumulative(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Draws an eigenvalue of the decomposed operator with probability `|c_j|²`.
pub fn sample_pure_reading(
    stream: &mut RngStream,
    state: &StateVector,
    decomp: &SpectralDecomposition,
) -> Result<f64> {
    Ok(PureTable::new(state, decomp)?.sample(stream))
}

/// Termwise decomposition of `⟨u|A|v⟩ = Σ_j c_j*(u)·c_j(v)·A_j` into
/// magnitudes `m_j` and phases `α_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTermTable {
    magnitudes: Vec<f64>,
    alphas: Vec<f64>,
    eigenvalues: Vec<f64>,
    normalization: f64,
    cumulative: Vec<f64>,
    element: Complex64,
}

impl MixedTermTable {
    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `N = Σ_j m_j`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// `⟨u|A|v⟩` assembled from the table terms.
    pub fn element(&self) -> Complex64 {
        self.element
    }

    /// `Σ_j m_j·A_j·cos(α_j + phase)`.
    pub fn term_sum(&self, phase: f64) -> f64 {
        self.magnitudes
            .iter()
            .zip(&self.alphas)
            .zip(&self.eigenvalues)
            .map(|((m, alpha), a)| m * a * (alpha + phase).cos())
            .sum()
    }

    /// `Re[e^{i·phase}⟨u|A|v⟩]`.
    pub fn expectation(&self, phase: f64) -> f64 {
        (Complex64::from_polar(1.0, phase) * self.element).re
    }
}

pub fn build_mixed_table(
    u: &StateVector,
    v: &StateVector,
    decomp: &SpectralDecomposition,
) -> Result<MixedTermTable> {
    let cu = overlap_coefficients(u, decomp)?;
    let cv = overlap_coefficients(v, decomp)?;
    let terms: Vec<Complex64> = cu.iter().zip(&cv).map(|(a, b)| a.conj() * b).collect();
    let magnitudes: Vec<f64> = terms.iter().map(|c| c.norm()).collect();
    let alphas = terms
        .iter()
        .zip(&magnitudes)
        .map(|(z, &m)| if m > 0.0 { z.arg() } else { 0.0 })
        .collect();
    let normalization: f64 = magnitudes.iter().sum();
    let element = terms
        .iter()
        .zip(decomp.eigenvalues())
        .map(|(z, &a)| z * a)
        .sum();
    let cumulative = if normalization > 0.0 {
        cumulative(&magnitudes)
    } else {
        Vec::new()
    };
    Ok(MixedTermTable {
        magnitudes,
        alphas,
        eigenvalues: decomp.eigenvalues().to_vec(),
        normalization,
        cumulative,
        element,
    })
}

/// One reading from a bra/ket pair of different sources at the given phase.
pub fn sample_mixed_reading(
    stream: &mut RngStream,
    table: &MixedTermTable,
    phase: f64,
    mode: SamplingMode,
) -> f64 {
    if table.normalization == 0.0 {
        return 0.0;
    }
    match mode {
        SamplingMode::Expectation => table.expectation(phase),
        SamplingMode::Eigenvalue => {
            let j = pick(&table.cumulative, stream.uniform());
            table.normalization * table.eigenvalues[j] * (table.alphas[j] + phase).cos()
        }
    }
}

/// Everything one detector needs to produce readings for a source pair.
#[derive(Debug, Clone)]
pub struct DetectorSetup {
    op: HermitianOperator,
    decomp: SpectralDecomposition,
    /// Extra exchange phase at this detector, e.g. `k·r` for plane waves.
    local_phase: f64,
    pure_u: PureTable,
    pure_v: PureTable,
    mixed_uv: MixedTermTable,
    mixed_vu: MixedTermTable,
}

impl DetectorSetup {
    pub fn new(op: HermitianOperator, sources: &SourcePair, local_phase: f64) -> Result<Self> {
        let decomp = spectral_decompose(&op)?;
        let (u, v) = (&sources.u.state, &sources.v.state);
        Ok(Self {
            pure_u: PureTable::new(u, &decomp)?,
            pure_v: PureTable::new(v, &decomp)?,
            mixed_uv: build_mixed_table(u, v, &decomp)?,
            mixed_vu: build_mixed_table(v, u, &decomp)?,
            op,
            decomp,
            local_phase,
        })
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomp
    }

    pub fn local_phase(&self) -> f64 {
        self.local_phase
    }

    /// Table for bra-U/ket-V (`true`) or bra-V/ket-U (`false`).
    pub fn mixed(&self, bra_u: bool) -> &MixedTermTable {
        if bra_u {
            &self.mixed_uv
        } else {
            &self.mixed_vu
        }
    }

    pub fn pure(&self, source_u: bool) -> &PureTable {
        if source_u {
            &self.pure_u
        } else {
            &self.pure_v
        }
    }
}

/// Turns events and channels into pairs of detector readings.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    sources: SourcePair,
    a: DetectorSetup,
    b: DetectorSetup,
    mode: SamplingMode,
    calibration: f64,
}

impl ChannelSampler {
    pub fn new(
        sources: SourcePair,
        a: DetectorSetup,
        b: DetectorSetup,
        mode: SamplingMode,
    ) -> Self {
        Self {
            sources,
            a,
            b,
            mode,
            calibration: EXCHANGE_CALIBRATION,
        }
    }

    /// Replaces the exchange-reading scale (diagnostics only).
    pub fn with_calibration(mut self, calibration: f64) -> Self {
        self.calibration = calibration;
        self
    }

    pub fn sources(&self) -> &SourcePair {
        &self.sources
    }

    pub fn detector(&self, which: Detector) -> &DetectorSetup {
        match which {
            Detector::A => &self.a,
            Detector::B => &self.b,
        }
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    /// Readings of detectors A and B for one channel of one event.
    ///
    /// In `ExchUV` detector A reads bra-U/ket-V at `+φ` and B reads
    /// bra-V/ket-U at `−φ`; `ExchVU` is the mirror image. A detector's local
    /// phase enters with `+` when it holds the `⟨u|·|v⟩` orientation of its
    /// own element (`⟨u|A|v⟩` for A, `⟨v|B|u⟩` for B) and with `−` otherwise.
    pub fn sample_event_readings(
        &self,
        stream: &mut RngStream,
        event: &EmissionEvent,
        channel: &Channel,
    ) -> (DetectorReading, DetectorReading) {
        let (fu, fv) = (self.sources.u.occupancy(), self.sources.v.occupancy());
        let (a, wa, b, wb) = match channel.kind {
            ChannelKind::DiagUV => (
                self.a.pure_u.sample(stream),
                fu,
                self.b.pure_v.sample(stream),
                fv,
            ),
            ChannelKind::DiagVU => (
                self.a.pure_v.sample(stream),
                fv,
                self.b.pure_u.sample(stream),
                fu,
            ),
            kind => {
                let phase = kind
                    .phase(event, &self.sources)
                    .expect("exchange channel has a phase");
                let a_bra_u = kind == ChannelKind::ExchUV;
                let orient = if a_bra_u { 1.0 } else { -1.0 };
                let a = sample_mixed_reading(
                    stream,
                    self.a.mixed(a_bra_u),
                    phase + orient * self.a.local_phase,
                    self.mode,
                );
                let b = sample_mixed_reading(
                    stream,
                    self.b.mixed(!a_bra_u),
                    -phase + orient * self.b.local_phase,
                    self.mode,
                );
                let w = (fu * fv).sqrt();
                (self.calibration * a, w, self.calibration * b, w)
            }
        };
        let reading = |detector, value, weight| DetectorReading {
            detector,
            value,
            channel: channel.kind,
            trial_id: event.trial_id,
            weight,
        };
        (reading(Detector::A, a, wa), reading(Detector::B, b, wb))
    }

    /// `⟨u|A|v⟩` seen by detector A including its local phase, and likewise
    /// `⟨v|B|u⟩` for detector B.
    pub fn exchange_elements(&self) -> Result<(Complex64, Complex64)> {
        let (u, v) = (&self.sources.u.state, &self.sources.v.state);
        let x = matrix_element(u, &self.a.op, v)? * Complex64::from_polar(1.0, self.a.local_phase);
        let y = matrix_element(v, &self.b.op, u)? * Complex64::from_polar(1.0, self.b.local_phase);
        Ok((x, y))
    }
}
