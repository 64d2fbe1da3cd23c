//! Closed-form expectations for the two-source, two-detector setup.
//!
//! The joint mean splits into a part where each detector sees a whole
//! wavicle from one source,
//!
//! ```text
//! uncorr = [⟨u|A|u⟩⟨v|B|v⟩ + ⟨v|A|v⟩⟨u|B|u⟩]·F_u·F_v
//! ```
//!
//! and an exchange part where bras and kets are swapped between sources,
//!
//! ```text
//! corr = ±[⟨u|A|v⟩⟨v|B|u⟩ + ⟨u|B|v⟩⟨v|A|u⟩]·F_u·F_v
//! ```
//!
//! with `+` for bosons and `−` for fermions. [`brute_force_joint`] computes
//! the same total independently, as the expectation of `A ⊗ B` in the
//! unnormalized (anti)symmetrized product state `u⊗v ± v⊗u`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::algebra::{
    expectation, matrix_element, spectral_decompose, spin_operator, Direction, HermitianOperator,
    StateVector,
};
use crate::error::{Error, Result};
use crate::sampler::{build_mixed_table, SamplingMode};
use crate::wavicle::{SourcePair, SourceSpec, Statistics};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSourceScenario {
    pub sources: SourcePair,
    pub op_a: HermitianOperator,
    pub op_b: HermitianOperator,
    pub stats: Statistics,
}

impl TwoSourceScenario {
    pub fn new(
        sources: SourcePair,
        op_a: HermitianOperator,
        op_b: HermitianOperator,
        stats: Statistics,
    ) -> Result<Self> {
        for op in [&op_a, &op_b] {
            if op.dim() != sources.dim() {
                return Err(Error::DimensionMismatch {
                    expected: sources.dim(),
                    actual: op.dim(),
                });
            }
        }
        Ok(Self {
            sources,
            op_a,
            op_b,
            stats,
        })
    }
}

/// Spin-up source with `occ_up`, spin-down source with `occ_down`, and
/// detectors measuring spin along `dir_a` and `dir_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinScenario {
    pub dir_a: Direction,
    pub dir_b: Direction,
    pub occ_up: f64,
    pub occ_down: f64,
}

impl SpinScenario {
    pub fn sources(&self) -> Result<SourcePair> {
        SourcePair::new(
            SourceSpec::new("up", StateVector::spin_up(), self.occ_up, 0.0)?,
            SourceSpec::new("down", StateVector::spin_down(), self.occ_down, 0.0)?,
        )
    }

    pub fn to_two_source(&self, stats: Statistics) -> Result<TwoSourceScenario> {
        TwoSourceScenario::new(
            self.sources()?,
            spin_operator(self.dir_a),
            spin_operator(self.dir_b),
            stats,
        )
    }
}

/// `⟨u|A|u⟩·F_u`.
pub fn expected_single(source: &SourceSpec, op: &HermitianOperator) -> Result<f64> {
    Ok(expectation(&source.state, op)? * source.occupancy())
}

/// Per-detector means with both sources present: `(Ā, B̄)`.
pub fn expected_separate(scn: &TwoSourceScenario) -> Result<(f64, f64)> {
    let (u, v) = (&scn.sources.u, &scn.sources.v);
    Ok((
        expected_single(u, &scn.op_a)? + expected_single(v, &scn.op_a)?,
        expected_single(u, &scn.op_b)? + expected_single(v, &scn.op_b)?,
    ))
}

pub fn expected_joint_uncorr(scn: &TwoSourceScenario) -> Result<f64> {
    let (u, v) = (&scn.sources.u.state, &scn.sources.v.state);
    let uu = expectation(u, &scn.op_a)? * expectation(v, &scn.op_b)?;
    let vv = expectation(v, &scn.op_a)? * expectation(u, &scn.op_b)?;
    Ok((uu + vv) * scn.sources.occupancy_product())
}

/// The exchange bracket `⟨u|A|v⟩⟨v|B|u⟩ + ⟨u|B|v⟩⟨v|A|u⟩` as a complex
/// number; its imaginary part cancels between the two conjugate terms.
pub fn exchange_bracket(scn: &TwoSourceScenario) -> Result<Complex64> {
    let (u, v) = (&scn.sources.u.state, &scn.sources.v.state);
    Ok(
        matrix_element(u, &scn.op_a, v)? * matrix_element(v, &scn.op_b, u)?
            + matrix_element(u, &scn.op_b, v)? * matrix_element(v, &scn.op_a, u)?,
    )
}

pub fn expected_joint_corr(scn: &TwoSourceScenario) -> Result<f64> {
    let bracket = exchange_bracket(scn)?;
    debug_assert!(
        bracket.im.abs() < 1e-14 * bracket.norm().max(1.0),
        "exchange bracket has imaginary part {}",
        bracket.im
    );
    Ok(scn.stats.sign() * bracket.re * scn.sources.occupancy_product())
}

pub fn expected_joint_total(scn: &TwoSourceScenario) -> Result<f64> {
    Ok(expected_joint_uncorr(scn)? + expected_joint_corr(scn)?)
}

/// `cos γ = cosθ_a cosθ_b + cos(φ_a − φ_b) sinθ_a sinθ_b`.
pub fn spin_cos_gamma(dir_a: Direction, dir_b: Direction) -> f64 {
    let (ta, tb) = (dir_a.theta(), dir_b.theta());
    ta.cos() * tb.cos() + (dir_a.phi() - dir_b.phi()).cos() * ta.sin() * tb.sin()
}

/// Angle between two measurement directions.
pub fn spin_gamma(dir_a: Direction, dir_b: Direction) -> f64 {
    spin_cos_gamma(dir_a, dir_b).clamp(-1.0, 1.0).acos()
}

/// `[1 ± cos((p − p′)·R)]·2·F_p·F_p′`.
pub fn hbt_correlation(
    p: &[f64],
    p_prime: &[f64],
    r: &[f64],
    occ_p: f64,
    occ_p_prime: f64,
    stats: Statistics,
) -> Result<f64> {
    let phase = hbt_phase(p, p_prime, r)?;
    Ok((1.0 + stats.sign() * phase.cos()) * 2.0 * occ_p * occ_p_prime)
}

/// `(p − p′)·R` for vectors of 1 to 3 components.
pub fn hbt_phase(p: &[f64], p_prime: &[f64], r: &[f64]) -> Result<f64> {
    let dim = p.len();
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!(
            "wavevectors need 1 to 3 components, got {dim}"
        )));
    }
    for len in [p_prime.len(), r.len()] {
        if len != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: len,
            });
        }
    }
    Ok(p.iter()
        .zip(p_prime)
        .zip(r)
        .map(|((a, b), x)| (a - b) * x)
        .sum())
}

/// `⟨ψ|op|ψ⟩` for an arbitrary (unnormalized) amplitude vector.
fn quadratic_form(psi: &[Complex64], op: &HermitianOperator) -> Complex64 {
    let n = op.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += psi[i].conj() * op.entry(i, j) * psi[j];
        }
    }
    acc
}

/// `u⊗v + sign·v⊗u`, not normalized.
fn symmetrized_pair(u: &StateVector, v: &StateVector, sign: f64) -> Vec<Complex64> {
    let uv = u.kron(v);
    let vu = v.kron(u);
    uv.components()
        .iter()
        .zip(vu.components())
        .map(|(a, b)| a + b * sign)
        .collect()
}

/// `⟨Ψ|A⊗B|Ψ⟩·F_u·F_v` with `Ψ = u⊗v ± v⊗u`, computed on the product space.
pub fn brute_force_joint(scn: &TwoSourceScenario) -> Result<f64> {
    let psi = symmetrized_pair(&scn.sources.u.state, &scn.sources.v.state, scn.stats.sign());
    let op = scn.op_a.kron(&scn.op_b);
    Ok(quadratic_form(&psi, &op).re * scn.sources.occupancy_product())
}

/// The unnormalized singlet `|↑⟩|↓⟩ − |↓⟩|↑⟩` (norm² = 2).
pub fn singlet() -> Vec<Complex64> {
    symmetrized_pair(&StateVector::spin_up(), &StateVector::spin_down(), -1.0)
}

/// `⟨Ψ|A⊗B|Ψ⟩` for the singlet with spin measured along `dir_a` on the first
/// particle and `dir_b` on the second.
pub fn singlet_expectation(dir_a: Direction, dir_b: Direction) -> f64 {
    let op = spin_operator(dir_a).kron(&spin_operator(dir_b));
    quadratic_form(&singlet(), &op).re
}

/// `⟨Ψ|A⊗1|Ψ⟩` for the singlet.
pub fn singlet_single(dir: Direction) -> f64 {
    let op = spin_operator(dir).kron(&HermitianOperator::identity(2));
    quadratic_form(&singlet(), &op).re
}

/// Mean reading of one detector at polar angle `theta` facing a spin-up
/// flow `f_up` and a spin-down flow `f_down`: `cosθ·(F↑ − F↓)`.
pub fn spin_flow_mean(theta: f64, f_up: f64, f_down: f64) -> f64 {
    theta.cos() * (f_up - f_down)
}

/// Probability of `+1` for a spin-up particle measured at polar angle
/// `theta`: `cos²(θ/2)`.
pub fn spin_flow_plus_probability(theta: f64) -> f64 {
    (theta / 2.0).cos().powi(2)
}

/// Phase-averaged variance of one exchange-channel reading before
/// calibration scaling.
///
/// Expectation mode: `|⟨u|A|v⟩|²/2`. Eigenvalue mode: `N·Σ_j m_j·A_j²/2`,
/// with `m_j`, `N` from the mixed-term table.
pub fn mixed_noise_variance(
    u: &StateVector,
    v: &StateVector,
    op: &HermitianOperator,
    mode: SamplingMode,
) -> Result<f64> {
    match mode {
        SamplingMode::Expectation => Ok(matrix_element(u, op, v)?.norm_sqr() / 2.0),
        SamplingMode::Eigenvalue => {
            let table = build_mixed_table(u, v, &spectral_decompose(op)?)?;
            let second: f64 = table
                .magnitudes()
                .iter()
                .zip(table.eigenvalues())
                .map(|(m, a)| m * a * a)
                .sum();
            Ok(table.normalization() * second / 2.0)
        }
    }
}

/// Cumulative distribution of `cos φ` for uniform `φ`.
pub fn cosine_cdf(y: f64) -> f64 {
    1.0 - y.clamp(-1.0, 1.0).acos() / PI
}
