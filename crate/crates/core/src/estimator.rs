//! Streaming, mergeable estimators for separate and joint detector averages.
//!
//! Each trial contributes one signed-weighted total per quantity: detector A
//! alone, detector B alone, the product, and the product split into diagonal
//! (uncorrelated) and exchange (correlated) channels. Means are taken over
//! trials, so an estimate equals the sum of channel weights times readings
//! divided by the trial count. Standard errors come from the per-trial
//! second moments.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampler::DetectorReading;
use crate::wavicle::ChannelKind;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.compensation += other.compensation;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// First and second moments of one per-trial quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq.value()
    }

    /// Mean over `n` trials with the standard error of that mean. The error
    /// is NaN for fewer than two trials.
    pub fn estimate(&self, n: u64) -> Estimate {
        let nf = n as f64;
        let mean = self.sum() / nf;
        if n < 2 {
            return Estimate {
                value: mean,
                stderr: f64::NAN,
            };
        }
        let variance = ((self.sum_sq() / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
        Estimate {
            value: mean,
            stderr: (variance / nf).sqrt(),
        }
    }
}

const EXACT_MATCH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|value − target| / stderr`. Differences at the rounding level
    /// (`1e-12` relative to `max(1, |target|)`) count as exact, so a
    /// zero-variance estimate that hits its target scores 0 and one that
    /// misses scores infinity.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.value - target).abs();
        if diff <= EXACT_MATCH * target.abs().max(1.0) {
            0.0
        } else {
            diff / self.stderr
        }
    }

    /// Whether `target` lies within `k` standard errors, with an absolute
    /// floor of `floor` for degenerate (zero-variance) estimates.
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= (k * self.stderr).max(floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub mean_a: Estimate,
    pub mean_b: Estimate,
    pub mean_ab: Estimate,
    pub uncorrelated: Estimate,
    pub correlated: Estimate,
}

/// Weighted sums restricted to one channel kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChannelTotals {
    pub trials: u64,
    pub a: Moments,
    pub b: Moments,
    pub ab: Moments,
    pub weight: CompensatedSum,
}

impl ChannelTotals {
    fn merge(&mut self, other: &ChannelTotals) {
        self.trials += other.trials;
        self.a.merge(&other.a);
        self.b.merge(&other.b);
        self.ab.merge(&other.ab);
        self.weight.merge(&other.weight);
    }
}

/// Single-writer accumulator. Combine workers with [`Accumulator::merge`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    scenario: u64,
    trials: u64,
    a: Moments,
    b: Moments,
    ab: Moments,
    uncorr: Moments,
    corr: Moments,
    channels: [ChannelTotals; 4],
}

impl Accumulator {
    /// An empty accumulator tagged with a scenario fingerprint; only
    /// accumulators with equal tags can be merged.
    pub fn new(scenario: u64) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    pub fn scenario(&self) -> u64 {
        self.scenario
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn channel(&self, kind: ChannelKind) -> &ChannelTotals {
        &self.channels[kind.index()]
    }

    /// Records a trial consisting of a single channel.
    pub fn accumulate(
        &mut self,
        a: &DetectorReading,
        b: &DetectorReading,
        weight: f64,
    ) -> Result<()> {
        self.accumulate_trial(&[(*a, *b, weight)])
    }

    /// Records one trial made of several channel contributions. `weight` is
    /// the signed channel weight applied to the product `a·b`; each reading's
    /// own weight is used for the separate averages.
    pub fn accumulate_trial(
        &mut self,
        pairs: &[(DetectorReading, DetectorReading, f64)],
    ) -> Result<()> {
        let Some((first, _, _)) = pairs.first() else {
            return Err(Error::ReadingMismatch("empty trial".into()));
        };
        let trial_id = first.trial_id;
        for (a, b, _) in pairs {
            if a.trial_id != trial_id || b.trial_id != trial_id {
                return Err(Error::ReadingMismatch(format!(
                    "trial ids {} and {} in trial {trial_id}",
                    a.trial_id, b.trial_id
                )));
            }
            if a.channel != b.channel {
                return Err(Error::ReadingMismatch(format!(
                    "channels {:?} and {:?} in trial {trial_id}",
                    a.channel, b.channel
                )));
            }
        }

        let (mut ta, mut tb, mut tu, mut tc) = (0.0, 0.0, 0.0, 0.0);
        for (a, b, w) in pairs {
            let wa = a.weight * a.value;
            let wb = b.weight * b.value;
            let wab = w * a.value * b.value;
            ta += wa;
            tb += wb;
            if a.channel.is_exchange() {
                tc += wab;
            } else {
                tu += wab;
            }
            let ch = &mut self.channels[a.channel.index()];
            ch.trials += 1;
            ch.a.push(wa);
            ch.b.push(wb);
            ch.ab.push(wab);
            ch.weight.add(*w);
        }
        self.trials += 1;
        self.a.push(ta);
        self.b.push(tb);
        self.ab.push(tu + tc);
        self.uncorr.push(tu);
        self.corr.push(tc);
        Ok(())
    }

    pub fn merge(&mut self, other: &Accumulator) -> Result<()> {
        if self.scenario != other.scenario {
            return Err(Error::ScenarioMismatch(self.scenario, other.scenario));
        }
        self.trials += other.trials;
        self.a.merge(&other.a);
        self.b.merge(&other.b);
        self.ab.merge(&other.ab);
        self.uncorr.merge(&other.uncorr);
        self.corr.merge(&other.corr);
        for (mine, theirs) in self.channels.iter_mut().zip(&other.channels) {
            mine.merge(theirs);
        }
        Ok(())
    }

    fn require_data(&self) -> Result<()> {
        if self.trials < 2 {
            Err(Error::InsufficientData(self.trials))
        } else {
            Ok(())
        }
    }

    /// Per-detector means, each averaged on its own.
    pub fn separate_average(&self) -> Result<(Estimate, Estimate)> {
        self.require_data()?;
        Ok((self.a.estimate(self.trials), self.b.estimate(self.trials)))
    }

    /// Mean of the product with its diagonal/exchange decomposition.
    pub fn joint_average(&self) -> Result<CorrelationEstimate> {
        self.require_data()?;
        Ok(self.estimates())
    }

    /// Like [`Accumulator::joint_average`] but never fails; standard errors
    /// are NaN below two trials and every value is NaN for an empty
    /// accumulator.
    pub fn estimates(&self) -> CorrelationEstimate {
        CorrelationEstimate {
            mean_a: self.a.estimate(self.trials),
            mean_b: self.b.estimate(self.trials),
            mean_ab: self.ab.estimate(self.trials),
            uncorrelated: self.uncorr.estimate(self.trials),
            correlated: self.corr.estimate(self.trials),
        }
    }

    /// Product mean contributed by one channel kind, per trial.
    pub fn channel_average(&self, kind: ChannelKind) -> Result<Estimate> {
        self.require_data()?;
        Ok(self.channels[kind.index()].ab.estimate(self.trials))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::testing::{rng, uniform};
    use crate::sampler::Detector;

    fn reading(
        detector: Detector,
        value: f64,
        channel: ChannelKind,
        trial_id: u64,
    ) -> DetectorReading {
        DetectorReading {
            detector,
            value,
            channel,
            trial_id,
            weight: 1.0,
        }
    }

    fn pair(
        a: f64,
        b: f64,
        channel: ChannelKind,
        trial: u64,
    ) -> (DetectorReading, DetectorReading) {
        (
            reading(Detector::A, a, channel, trial),
            reading(Detector::B, b, channel, trial),
        )
    }

    fn random_accumulator(seed: u64, trials: u64) -> Accumulator {
        let mut r = rng(seed);
        let mut acc = Accumulator::new(1);
        for t in 0..trials {
            let mut trial = Vec::new();
            for kind in ChannelKind::ALL {
                let (a, b) = pair(2.0 * uniform(&mut r) - 1.0, uniform(&mut r), kind, t);
                let w = if kind.is_exchange() { -0.7 } else { 0.7 };
                trial.push((a, b, w));
            }
            acc.accumulate_trial(&trial).unwrap();
        }
        acc
    }

    #[test]
    fn single_accumulation() {
        let mut acc = Accumulator::default();
        let (a, b) = pair(1.0, -1.0, ChannelKind::DiagUV, 0);
        acc.accumulate(&a, &b, 1.0).unwrap();
        assert_eq!(acc.trials(), 1);
        assert_eq!(acc.ab.sum(), -1.0);
        assert!(matches!(
            acc.separate_average(),
            Err(Error::InsufficientData(1))
        ));
    }

    #[test]
    fn negative_weight_decreases_product_sum() {
        let mut acc = Accumulator::default();
        let (a, b) = pair(1.0, 1.0, ChannelKind::ExchUV, 0);
        acc.accumulate(&a, &b, 1.0).unwrap();
        let before = acc.ab.sum();
        acc.accumulate(
            &reading(Detector::A, 1.0, ChannelKind::ExchUV, 1),
            &reading(Detector::B, 1.0, ChannelKind::ExchUV, 1),
            -1.0,
        )
        .unwrap();
        assert!(acc.ab.sum() < before);
    }

    #[test]
    fn mismatched_readings_are_rejected() {
        let mut acc = Accumulator::default();
        let a = reading(Detector::A, 1.0, ChannelKind::DiagUV, 0);
        let b = reading(Detector::B, 1.0, ChannelKind::DiagUV, 1);
        assert!(matches!(
            acc.accumulate(&a, &b, 1.0),
            Err(Error::ReadingMismatch(_))
        ));
        let b = reading(Detector::B, 1.0, ChannelKind::ExchUV, 0);
        assert!(matches!(
            acc.accumulate(&a, &b, 1.0),
            Err(Error::ReadingMismatch(_))
        ));
        assert_eq!(acc.trials(), 0);
    }

    #[test]
    fn compensated_sum_of_unit_steps() {
        let mut r = rng(1);
        let mut comp = CompensatedSum::default();
        let mut naive = 0.0;
        for _ in 0..1_000_000 {
            let x = if uniform(&mut r) < 0.5 { 1.0 } else { -1.0 };
            comp.add(x);
            naive += x;
        }
        let rel = (comp.value() - naive).abs() / naive.abs().max(1.0);
        assert!(rel < 1e-9);
    }

    #[test]
    fn compensated_sum_recovers_lost_bits() {
        let mut comp = CompensatedSum::default();
        let mut naive = 0.0;
        comp.add(1e16);
        naive += 1e16;
        for _ in 0..1000 {
            comp.add(1.0);
            naive += 1.0;
        }
        comp.add(-1e16);
        naive -= 1e16;
        assert_eq!(comp.value(), 1000.0);
        assert_ne!(naive, 1000.0);
    }

    #[test]
    fn constant_readings_have_zero_error() {
        let mut acc = Accumulator::default();
        for t in 0..10 {
            let (a, b) = pair(0.25, 0.25, ChannelKind::DiagUV, t);
            acc.accumulate(&a, &b, 1.0).unwrap();
        }
        let (ma, mb) = acc.separate_average().unwrap();
        assert_eq!((ma.value, ma.stderr), (0.25, 0.0));
        assert_eq!((mb.value, mb.stderr), (0.25, 0.0));
    }

    #[test]
    fn decomposition_identity() {
        let acc = random_accumulator(3, 10_000);
        let est = acc.joint_average().unwrap();
        let sum = est.uncorrelated.value + est.correlated.value;
        assert!((est.mean_ab.value - sum).abs() <= 1e-9 * est.mean_ab.value.abs().max(1e-300));
        let by_channel: f64 = ChannelKind::ALL
            .iter()
            .map(|k| acc.channel_average(*k).unwrap().value)
            .sum();
        assert!((est.mean_ab.value - by_channel).abs() < 1e-12);
    }

    #[test]
    fn suppressed_exchange_leaves_uncorrelated_part() {
        let mut acc = Accumulator::default();
        for t in 0..100 {
            let diag = pair(1.0, -1.0, ChannelKind::DiagUV, t);
            let exch = pair(0.6, 0.8, ChannelKind::ExchUV, t);
            acc.accumulate_trial(&[(diag.0, diag.1, 1.0), (exch.0, exch.1, 0.0)])
                .unwrap();
        }
        let est = acc.joint_average().unwrap();
        assert_eq!(est.mean_ab.value, est.uncorrelated.value);
        assert_eq!(est.correlated.value, 0.0);
    }

    #[test]
    fn merge_identity_and_symmetry() {
        let x = random_accumulator(5, 1000);
        let y = random_accumulator(6, 777);
        let mut with_empty = x.clone();
        with_empty.merge(&Accumulator::new(1)).unwrap();
        assert_eq!(with_empty, x);

        let mut xy = x.clone();
        xy.merge(&y).unwrap();
        let mut yx = y.clone();
        yx.merge(&x).unwrap();
        let (exy, eyx) = (xy.joint_average().unwrap(), yx.joint_average().unwrap());
        assert!((exy.mean_ab.value - eyx.mean_ab.value).abs() < 1e-12);
        assert!((exy.mean_a.stderr - eyx.mean_a.stderr).abs() < 1e-12);
        assert_eq!(xy.trials(), 1777);
    }

    #[test]
    fn merge_is_associative() {
        let (x, y, z) = (
            random_accumulator(7, 300),
            random_accumulator(8, 400),
            random_accumulator(9, 500),
        );
        let mut left = x.clone();
        left.merge(&y).unwrap();
        left.merge(&z).unwrap();
        let mut yz = y.clone();
        yz.merge(&z).unwrap();
        let mut right = x.clone();
        right.merge(&yz).unwrap();
        let (l, r) = (
            left.joint_average().unwrap(),
            right.joint_average().unwrap(),
        );
        assert!((l.mean_ab.value - r.mean_ab.value).abs() < 1e-12);
        assert!((l.correlated.value - r.correlated.value).abs() < 1e-12);
    }

    #[test]
    fn merge_rejects_other_scenarios() {
        let mut x = Accumulator::new(1);
        assert!(matches!(
            x.merge(&Accumulator::new(2)),
            Err(Error::ScenarioMismatch(1, 2))
        ));
    }

    #[test]
    fn stderr_agrees_with_bootstrap() {
        let mut r = rng(42);
        let n = 2000;
        let values: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let a = 2.0 * uniform(&mut r) - 1.0;
                let w = if uniform(&mut r) < 0.3 { -1.0 } else { 1.0 };
                (a, w)
            })
            .collect();
        let mut acc = Accumulator::default();
        for (t, (a, w)) in values.iter().enumerate() {
            let (ra, rb) = pair(*a, 1.0, ChannelKind::DiagUV, t as u64);
            acc.accumulate(&ra, &rb, *w).unwrap();
        }
        let analytic = acc.joint_average().unwrap().mean_ab.stderr;

        let resamples = 400;
        let means: Vec<f64> = (0..resamples)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let (a, w) = values[(uniform(&mut r) * n as f64) as usize];
                        a * w
                    })
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / resamples as f64;
        let boot =
            (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt();
        assert!(
            (boot / analytic - 1.0).abs() < 0.15,
            "bootstrap {boot} vs {analytic}"
        );
    }

    #[test]
    fn z_score_and_window() {
        let e = Estimate {
            value: 1.0,
            stderr: 0.1,
        };
        assert!((e.z_score(1.2) - 2.0).abs() < 1e-12);
        assert!(e.within(1.35, 4.0, 0.0));
        assert!(!e.within(1.5, 4.0, 0.0));
        let exact = Estimate {
            value: 1.0,
            stderr: 0.0,
        };
        assert_eq!(exact.z_score(1.0), 0.0);
        assert!(exact.within(1.0 + 1e-15, 4.0, 1e-12));
    }
}
