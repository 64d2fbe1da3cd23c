//! Sources, emission events and bra/ket channels.
//!
//! Every trial pairs one particle from each source with the two detectors in
//! four ways. In the two diagonal channels each detector receives a bra and a
//! ket from the same source. In the two exchange channels the bras (or kets)
//! are swapped, so each detector sees a bra from one source and a ket from
//! the other and the reading depends on the emission phase difference.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::algebra::StateVector;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub label: String,
    pub state: StateVector,
    occupancy: f64,
    /// Angular frequency, radians per unit time.
    pub omega: f64,
}

impl SourceSpec {
    pub fn new(
        label: impl Into<String>,
        state: StateVector,
        occupancy: f64,
        omega: f64,
    ) -> Result<Self> {
        if !occupancy.is_finite() || !omega.is_finite() {
            return Err(Error::NonFinite("source parameters"));
        }
        if occupancy < 0.0 {
            return Err(Error::NegativeOccupancy(occupancy));
        }
        Ok(Self {
            label: label.into(),
            state,
            occupancy,
            omega,
        })
    }

    pub fn occupancy(&self) -> f64 {
        self.occupancy
    }
}

/// The pair of sources `(U, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub u: SourceSpec,
    pub v: SourceSpec,
}

impl SourcePair {
    pub fn new(u: SourceSpec, v: SourceSpec) -> Result<Self> {
        if u.state.dim() != v.state.dim() {
            return Err(Error::DimensionMismatch {
                expected: u.state.dim(),
                actual: v.state.dim(),
            });
        }
        Ok(Self { u, v })
    }

    pub fn dim(&self) -> usize {
        self.u.state.dim()
    }

    /// `F_u · F_v`.
    pub fn occupancy_product(&self) -> f64 {
        self.u.occupancy * self.v.occupancy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    Boson,
    Fermion,
}

impl Statistics {
    /// `+1` for bosons, `−1` for fermions.
    pub fn sign(self) -> f64 {
        match self {
            Statistics::Boson => 1.0,
            Statistics::Fermion => -1.0,
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            Statistics::Boson => Statistics::Fermion,
            Statistics::Fermion => Statistics::Boson,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Statistics::Boson => "boson",
            Statistics::Fermion => "fermion",
        }
    }
}

impl std::str::FromStr for Statistics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boson" => Ok(Statistics::Boson),
            "fermion" => Ok(Statistics::Fermion),
            other => Err(Error::Config(format!(
                "stats must be \"boson\" or \"fermion\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub phase_u: f64,
    pub phase_v: f64,
    pub time: f64,
    pub trial_id: u64,
}

/// Draws independent uniform emission phases for both sources.
pub fn draw_event(stream: &mut RngStream, time: f64, trial_id: u64) -> EmissionEvent {
    let phase_u = stream.phase();
    let phase_v = stream.phase();
    EmissionEvent {
        phase_u,
        phase_v,
        time,
        trial_id,
    }
}

/// Reduces an angle to `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// `φ = (ω_u − ω_v)·t − (φ_u − φ_v)`, reduced to `(−π, π]`.
pub fn phase_difference(event: &EmissionEvent, sources: &SourcePair) -> f64 {
    let detuning = (sources.u.omega - sources.v.omega) * event.time;
    wrap_phase(detuning - (event.phase_u - event.phase_v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    /// A reads source U, B reads source V.
    DiagUV,
    /// A reads source V, B reads source U.
    DiagVU,
    /// A reads bra-U/ket-V, B reads bra-V/ket-U.
    ExchUV,
    /// A reads bra-V/ket-U, B reads bra-U/ket-V.
    ExchVU,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::DiagUV,
        ChannelKind::DiagVU,
        ChannelKind::ExchUV,
        ChannelKind::ExchVU,
    ];

    pub fn is_exchange(self) -> bool {
        matches!(self, ChannelKind::ExchUV | ChannelKind::ExchVU)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The channel that plays the same role after relabeling `U ↔ V`.
    pub fn swapped(self) -> Self {
        match self {
            ChannelKind::DiagUV => ChannelKind::DiagVU,
            ChannelKind::DiagVU => ChannelKind::DiagUV,
            ChannelKind::ExchUV => ChannelKind::ExchVU,
            ChannelKind::ExchVU => ChannelKind::ExchUV,
        }
    }

    /// Exchange phase carried by this channel: `+φ` for `ExchUV`, `−φ` for
    /// `ExchVU`, none for diagonal channels.
    pub fn phase(self, event: &EmissionEvent, sources: &SourcePair) -> Option<f64> {
        match self {
            ChannelKind::ExchUV => Some(phase_difference(event, sources)),
            ChannelKind::ExchVU => Some(-phase_difference(event, sources)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    /// `F_u·F_v`, times the statistics sign for exchange channels.
    pub weight: f64,
}

pub fn enumerate_channels(sources: &SourcePair, stats: Statistics) -> [Channel; 4] {
    let product = sources.occupancy_product();
    ChannelKind::ALL.map(|kind| Channel {
        kind,
        weight: if kind.is_exchange() {
            stats.sign() * product
        } else {
            product
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spin_sources(fu: f64, fv: f64) -> SourcePair {
        SourcePair::new(
            SourceSpec::new("up", StateVector::spin_up(), fu, 0.0).unwrap(),
            SourceSpec::new("down", StateVector::spin_down(), fv, 0.0).unwrap(),
        )
        .unwrap()
    }

    fn event(phase_u: f64, phase_v: f64, time: f64) -> EmissionEvent {
        EmissionEvent {
            phase_u,
            phase_v,
            time,
            trial_id: 0,
        }
    }

    #[test]
    fn draw_event_is_deterministic() {
        let a = draw_event(&mut RngStream::for_trial(11, 0, 0), 0.0, 0);
        let b = draw_event(&mut RngStream::for_trial(11, 0, 0), 0.0, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn draw_event_phases_are_uniform() {
        let n = 100_000;
        let mut phases: Vec<f64> = (0..n)
            .map(|t| draw_event(&mut RngStream::for_trial(2024, 0, t), 0.0, t).phase_u)
            .collect();
        assert!(phases.iter().all(|p| (0.0..TAU).contains(p)));
        phases.sort_by(f64::total_cmp);
        let d = phases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let cdf = p / TAU;
                (cdf - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic Kolmogorov critical value at α = 0.01.
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn phase_difference_cases() {
        let mut sources = spin_sources(1.0, 1.0);
        assert_eq!(phase_difference(&event(1.2, 1.2, 3.0), &sources), 0.0);
        assert!((phase_difference(&event(PI / 2.0, 0.0, 0.0), &sources) + PI / 2.0).abs() < 1e-15);
        sources.u.omega = PI;
        assert!((phase_difference(&event(0.4, 0.4, 1.0), &sources) - PI).abs() < 1e-15);
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        for k in -20..20 {
            let r = wrap_phase(k as f64 * 0.77);
            assert!(r > -PI && r <= PI);
        }
    }

    #[test]
    fn exchange_channels_carry_opposite_phases() {
        let sources = spin_sources(1.0, 1.0);
        let ev = event(0.3, 2.9, 0.0);
        let plus = ChannelKind::ExchUV.phase(&ev, &sources).unwrap();
        let minus = ChannelKind::ExchVU.phase(&ev, &sources).unwrap();
        assert_eq!(plus, -minus);
        assert_eq!(ChannelKind::DiagUV.phase(&ev, &sources), None);
    }

    #[test]
    fn channel_weights() {
        let weights =
            |fu, fv, stats| enumerate_channels(&spin_sources(fu, fv), stats).map(|c| c.weight);
        assert_eq!(weights(1.0, 1.0, Statistics::Boson), [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            weights(1.0, 1.0, Statistics::Fermion),
            [1.0, 1.0, -1.0, -1.0]
        );
        assert!(weights(0.0, 2.0, Statistics::Fermion)
            .iter()
            .all(|w| *w == 0.0));
    }

    #[test]
    fn statistics_toggle_flips_only_exchange_weights() {
        let sources = spin_sources(0.7, 1.9);
        let boson = enumerate_channels(&sources, Statistics::Boson);
        let fermion = enumerate_channels(&sources, Statistics::Boson.toggled());
        for (b, f) in boson.iter().zip(&fermion) {
            if b.kind.is_exchange() {
                assert_eq!(b.weight, -f.weight);
            } else {
                assert_eq!(b.weight, f.weight);
            }
        }
    }

    #[test]
    fn weights_symmetric_under_relabeling() {
        let sources = spin_sources(0.3, 2.5);
        let swapped = SourcePair::new(sources.v.clone(), sources.u.clone()).unwrap();
        for stats in [Statistics::Boson, Statistics::Fermion] {
            let a = enumerate_channels(&sources, stats);
            let b = enumerate_channels(&swapped, stats);
            for ch in a {
                let partner = b.iter().find(|c| c.kind == ch.kind.swapped()).unwrap();
                assert_eq!(ch.weight, partner.weight);
            }
        }
    }

    #[test]
    fn source_validation() {
        assert!(matches!(
            SourceSpec::new("x", StateVector::spin_up(), -1.0, 0.0),
            Err(Error::NegativeOccupancy(_))
        ));
        let s3 = SourceSpec::new("x", StateVector::basis(3, 0), 1.0, 0.0).unwrap();
        let s2 = SourceSpec::new("y", StateVector::spin_up(), 1.0, 0.0).unwrap();
        assert!(SourcePair::new(s3, s2).is_err());
        assert!("anyon".parse::<Statistics>().is_err());
        assert_eq!(
            "fermion".parse::<Statistics>().unwrap(),
            Statistics::Fermion
        );
    }
}
