//! Two-channel start-stop coincidence histogramming and its reduction to a
//! normalized intensity correlation.
//!
//! The accumulator reproduces the classic hardware measurement: every photon
//! opens a clock on its own channel, and the first later photon on the other
//! channel closes all clocks currently open there. Positive lags are
//! channel-2 stops of channel-1 starts, negative lags the reverse. Because a
//! start is always closed by the *first* opposite photon, the uncorrelated
//! floor is not flat: it decays like `exp(-r_stop |tau|)` (the stop channel
//! must stay quiet until `tau`). [`g2`] removes that droop analytically from
//! the measured rates, so the normalized curve is flat at 1 for uncorrelated
//! light without any flat-tail assumption.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{least_squares, Antibunching, FitOptions, FitResult, Weighting};
use crate::stream::TimeTag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorConfig {
    /// Histogram bin width.
    pub bin_s: f64,
    /// Largest lag recorded on each side of zero.
    pub max_lag_s: f64,
}

impl CorrelatorConfig {
    pub fn new(bin_s: f64, max_lag_s: f64) -> Self {
        CorrelatorConfig { bin_s, max_lag_s }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bin_s > 0.0) {
            return Err(Error::invalid("bin_s", "must be positive"));
        }
        if !(self.max_lag_s >= self.bin_s) {
            return Err(Error::invalid("max_lag_s", "must be at least one bin"));
        }
        Ok(())
    }

    fn half_bins(&self) -> usize {
        (self.max_lag_s / self.bin_s).round() as usize
    }
}

/// Raw start-stop histogram over an odd number of bins centered on zero lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_s: f64,
    /// Bin centers, `-n..=n` times the bin width.
    pub lag_s: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_channel_1: u64,
    pub n_channel_2: u64,
    /// Wall-clock span of the acquisition.
    pub duration_s: f64,
    /// All resolved start-stop pairs, including lags beyond the histogram.
    pub pairs_resolved: u64,
}

/// Streaming start-stop accumulator; feed time-ordered tags in any number of
/// chunks, then take the histogram.
pub struct StartStopAccumulator {
    config: CorrelatorConfig,
    counts: Vec<u64>,
    pending_1: VecDeque<f64>,
    pending_2: VecDeque<f64>,
    n1: u64,
    n2: u64,
    t_last: f64,
    t_end: f64,
    pairs: u64,
}

impl StartStopAccumulator {
    pub fn new(config: CorrelatorConfig) -> Result<Self> {
        config.validate()?;
        let n_bins = 2 * config.half_bins() + 1;
        Ok(StartStopAccumulator {
            config,
            counts: vec![0; n_bins],
            pending_1: VecDeque::new(),
            pending_2: VecDeque::new(),
            n1: 0,
            n2: 0,
            t_last: f64::NEG_INFINITY,
            t_end: 0.0,
            pairs: 0,
        })
    }

    /// Open starts not yet closed by an opposite-channel photon.
    pub fn pending(&self) -> usize {
        self.pending_1.len() + self.pending_2.len()
    }

    pub fn pairs_resolved(&self) -> u64 {
        self.pairs
    }

    pub fn feed(&mut self, tags: &[TimeTag]) -> Result<()> {
        for tag in tags {
            if tag.time_s < self.t_last {
                return Err(Error::OutOfRange(format!(
                    "tags must be time-ordered: {} after {}",
                    tag.time_s, self.t_last
                )));
            }
            self.t_last = tag.time_s;
            self.t_end = self.t_end.max(tag.time_s);
            match tag.channel {
                1 => {
                    self.n1 += 1;
                    // first channel-1 photon after each pending channel-2
                    // start: negative lags
                    for i in 0..self.pending_2.len() {
                        let t2 = self.pending_2[i];
                        self.record(-(tag.time_s - t2));
                    }
                    self.pairs += self.pending_2.len() as u64;
                    self.pending_2.clear();
                    self.pending_1.push_back(tag.time_s);
                }
                2 => {
                    self.n2 += 1;
                    for i in 0..self.pending_1.len() {
                        let t1 = self.pending_1[i];
                        self.record(tag.time_s - t1);
                    }
                    self.pairs += self.pending_1.len() as u64;
                    self.pending_1.clear();
                    self.pending_2.push_back(tag.time_s);
                }
                c => {
                    return Err(Error::OutOfRange(format!(
                        "channel must be 1 or 2, got {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, lag: f64) {
        let half = self.config.half_bins() as i64;
        let idx = (lag / self.config.bin_s).round() as i64;
        if idx.abs() <= half {
            self.counts[(idx + half) as usize] += 1;
        }
    }

    pub fn finish(self) -> Result<CorrelationHistogram> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::EmptyStream(format!(
                "two channels required, got {} tags on channel 1 and {} on channel 2",
                self.n1, self.n2
            )));
        }
        let half = self.config.half_bins() as i64;
        let lag_s = (-half..=half)
            .map(|k| k as f64 * self.config.bin_s)
            .collect();
        Ok(CorrelationHistogram {
            bin_s: self.config.bin_s,
            lag_s,
            counts: self.counts,
            n_channel_1: self.n1,
            n_channel_2: self.n2,
            duration_s: self.t_end,
            pairs_resolved: self.pairs,
        })
    }
}

/// Histogram a complete in-memory tag list.
pub fn correlate(tags: &[TimeTag], config: CorrelatorConfig) -> Result<CorrelationHistogram> {
    let mut acc = StartStopAccumulator::new(config)?;
    acc.feed(tags)?;
    acc.finish()
}

/// Normalized intensity correlation derived from a start-stop histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G2Analysis {
    pub lag_s: Vec<f64>,
    /// Droop-corrected, rate-normalized curve: flat at 1 for uncorrelated
    /// light, independent of signal purity.
    pub g2_raw: Vec<f64>,
    /// Background-corrected curve, `(g2_raw - (1 - rho^2)) / rho^2`.
    pub g2_corrected: Vec<f64>,
    /// Signal purity used for the correction.
    pub rho: f64,
    /// Model fit (dip depth and recovery time) to the raw curve.
    pub fit: FitResult,
    pub g2_zero_raw: f64,
    pub g2_zero: f64,
    pub g2_zero_uncertainty: f64,
    pub recovery_time_s: f64,
    /// `round(1 / (1 - g2_zero))`, at least 1; `None` when the dip is too
    /// shallow to bound a count.
    pub estimated_emitters: Option<u32>,
    /// Dip deeper than 0.5 after correction.
    pub consistent_with_single: bool,
    pub warnings: Vec<String>,
}

/// Reduce a histogram to a normalized correlation with a fitted dip.
///
/// `rho` is the signal fraction `S/(S+B)` of the detected stream; 1 disables
/// the background correction.
pub fn g2(histogram: &CorrelationHistogram, rho: f64) -> Result<G2Analysis> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid("rho", "must be in (0, 1]"));
    }
    if histogram.duration_s <= 0.0 {
        return Err(Error::EmptyStream("histogram has no duration".into()));
    }
    let t = histogram.duration_s;
    let r1 = histogram.n_channel_1 as f64 / t;
    let r2 = histogram.n_channel_2 as f64 / t;
    let scale = histogram.n_channel_1 as f64 * r2 * histogram.bin_s;
    if scale <= 0.0 {
        return Err(Error::Normalization(
            "both channels need photons to normalize".into(),
        ));
    }

    let mut warnings = Vec::new();
    let max_lag = *histogram
        .lag_s
        .last()
        .ok_or_else(|| Error::EmptyStream("histogram has no bins".into()))?;
    let droop_span = r1.max(r2) * max_lag;
    if droop_span > 0.05 {
        warnings.push(format!(
            "start-stop droop is large (rate x max lag = {droop_span:.3}); \
             droop correction dominates the far bins"
        ));
    }

    // expected uncorrelated counts per bin; the stop channel must stay quiet
    // until the lag, hence the exponential
    let expected: Vec<f64> = histogram
        .lag_s
        .iter()
        .map(|&lag| {
            if lag >= 0.0 {
                histogram.n_channel_1 as f64 * r2 * histogram.bin_s * (-r2 * lag).exp()
            } else {
                histogram.n_channel_2 as f64 * r1 * histogram.bin_s * (-r1 * -lag).exp()
            }
        })
        .collect();

    let g2_raw: Vec<f64> = histogram
        .counts
        .iter()
        .zip(&expected)
        .map(|(&c, &e)| c as f64 / e)
        .collect();
    let g2_corrected: Vec<f64> = g2_raw
        .iter()
        .map(|&g| (g - (1.0 - rho * rho)) / (rho * rho))
        .collect();

    // fit the dip on the raw curve; the purity correction is affine in g2,
    // so it maps the fitted dip exactly
    let sigmas: Vec<f64> = histogram
        .counts
        .iter()
        .zip(&expected)
        .map(|(&c, &e)| (c.max(1) as f64).sqrt() / e)
        .collect();
    let center = g2_raw[g2_raw.len() / 2];
    let g0_init = center.clamp(-0.5, 0.995);
    let recover = 1.0 - (1.0 - g0_init) / std::f64::consts::E;
    let half = g2_raw.len() / 2;
    let tau_init = histogram
        .lag_s
        .iter()
        .zip(&g2_raw)
        .skip(half)
        .find(|&(_, &g)| g >= recover)
        .map(|(&l, _)| l.max(histogram.bin_s))
        .unwrap_or(max_lag / 5.0);
    let fit = least_squares(
        &Antibunching,
        &histogram.lag_s,
        &g2_raw,
        &[g0_init, tau_init],
        &Weighting::Sigmas(sigmas),
        &FitOptions::default(),
    )?;

    let g2_zero_raw = fit.value("g2_zero").expect("fit carries g2_zero");
    let g2_zero = (g2_zero_raw - (1.0 - rho * rho)) / (rho * rho);
    let g2_zero_uncertainty =
        fit.uncertainty("g2_zero").unwrap_or(f64::INFINITY) / (rho * rho);
    let recovery_time_s = fit.value("tau_c").expect("fit carries tau_c");
    if recovery_time_s > 0.5 * max_lag {
        warnings.push(format!(
            "recovery time {recovery_time_s:.3e} s approaches the lag window; widen max_lag_s"
        ));
    }

    let contrast = 1.0 - g2_zero;
    let estimated_emitters = if contrast > 1.0 / 128.0 {
        Some(((1.0 / contrast).round() as u32).max(1))
    } else {
        None
    };

    Ok(G2Analysis {
        lag_s: histogram.lag_s.clone(),
        g2_raw,
        g2_corrected,
        rho,
        fit,
        g2_zero_raw,
        g2_zero,
        g2_zero_uncertainty,
        recovery_time_s,
        estimated_emitters,
        consistent_with_single: g2_zero < 0.5,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::{Emitter, EmitterConfig, SpectralDynamics};
    use crate::physics::{lifetime_limited_fwhm, BackgroundModel, OpticalTransition};
    use crate::stream::{Drive, PhotonStream, PhotonStreamConfig};
    use proptest::prelude::*;

    fn tag(channel: u8, time_s: f64) -> TimeTag {
        TimeTag { channel, time_s }
    }

    #[test]
    fn deterministic_pairs_land_in_the_right_bins() {
        // 1 at t=0 stopped by 2 at t=3ns: +3ns. 2 at 3ns stopped by 1 at
        // 10ns: -7ns. 1 at 10ns and 11ns both stopped by 2 at 12ns: +2, +1.
        let tags = [
            tag(1, 0.0),
            tag(2, 3.0e-9),
            tag(1, 10.0e-9),
            tag(1, 11.0e-9),
            tag(2, 12.0e-9),
        ];
        let hist = correlate(&tags, CorrelatorConfig::new(1.0e-9, 8.0e-9)).unwrap();
        assert_eq!(hist.lag_s.len(), 17);
        assert_eq!(hist.counts.iter().sum::<u64>(), 4);
        let at = |lag_ns: i64| hist.counts[(lag_ns + 8) as usize];
        assert_eq!(at(3), 1);
        assert_eq!(at(-7), 1);
        assert_eq!(at(2), 1);
        assert_eq!(at(1), 1);
        assert_eq!(hist.pairs_resolved, 4);
        assert_eq!(hist.n_channel_1, 3);
        assert_eq!(hist.n_channel_2, 2);
    }

    #[test]
    fn out_of_order_tags_are_rejected() {
        let mut acc = StartStopAccumulator::new(CorrelatorConfig::new(1e-9, 1e-8)).unwrap();
        acc.feed(&[tag(1, 1.0)]).unwrap();
        assert!(acc.feed(&[tag(2, 0.5)]).is_err());
        let mut acc = StartStopAccumulator::new(CorrelatorConfig::new(1e-9, 1e-8)).unwrap();
        assert!(acc.feed(&[tag(3, 0.0)]).is_err());
    }

    proptest! {
        /// Every photon either becomes a resolved start or is still pending:
        /// nothing is lost or double-counted, regardless of the sequence.
        #[test]
        fn start_stop_conserves_photons(
            channels in proptest::collection::vec(1u8..=2, 1..200),
            gaps in proptest::collection::vec(0.0f64..1.0e-6, 1..200),
        ) {
            let n = channels.len().min(gaps.len());
            let mut t = 0.0;
            let mut tags = Vec::new();
            for i in 0..n {
                t += gaps[i];
                tags.push(tag(channels[i], t));
            }
            let mut acc = StartStopAccumulator::new(
                CorrelatorConfig::new(1.0e-9, 100.0e-9),
            ).unwrap();
            acc.feed(&tags).unwrap();
            prop_assert_eq!(
                acc.pairs_resolved() + acc.pending() as u64,
                n as u64
            );
            // pending photons all sit on one channel: the first opposite
            // arrival would have cleared the rest
            let has_both = channels[..n].contains(&1) && channels[..n].contains(&2);
            match acc.finish() {
                Ok(hist) => {
                    prop_assert!(has_both);
                    prop_assert!(hist.counts.iter().sum::<u64>() <= hist.pairs_resolved);
                }
                Err(Error::EmptyStream(_)) => prop_assert!(!has_both),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    fn poisson_pair_stream(rate_each: f64, duration: f64, seed: u64) -> Vec<TimeTag> {
        let cfg = PhotonStreamConfig {
            background: BackgroundModel::new(2.0 * rate_each, 0.0),
            ..PhotonStreamConfig::new(duration, Drive::Resonant { laser_hz: 0.0, power_nw: 0.0 })
        };
        PhotonStream::new(vec![], cfg, seed).unwrap().collect_all()
    }

    #[test]
    fn uncorrelated_light_is_flat_after_droop_correction() {
        // r * max_lag = 0.5: the raw histogram droops by 40% across the
        // window, and the analytic correction must recover a flat curve
        let rate = 1.0e4;
        let tags = poisson_pair_stream(rate, 50.0, 21);
        let hist = correlate(&tags, CorrelatorConfig::new(1.0e-6, 50.0e-6)).unwrap();
        let analysis = g2(&hist, 1.0).unwrap();
        assert!(!analysis.warnings.is_empty(), "droop warning expected");

        // raw counts really droop
        let c0 = hist.counts[hist.counts.len() / 2] as f64;
        let cfar = *hist.counts.last().unwrap() as f64;
        let droop = cfar / c0;
        assert!(droop < 0.75, "expected visible droop, got {droop:.3}");

        // normalized curve is flat at 1
        let mean = analysis.g2_raw.iter().sum::<f64>() / analysis.g2_raw.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean:.4}");
        for (&lag, &v) in analysis.lag_s.iter().zip(&analysis.g2_raw) {
            assert!((v - 1.0).abs() < 0.1, "g2({lag:.2e}) = {v:.3}");
        }
        // and shows no spurious dip
        assert!(analysis.g2_zero > 0.9, "g2(0) = {}", analysis.g2_zero);
    }

    fn single_emitter_tags(
        rate_ceiling: f64,
        lifetime_s: f64,
        bg_cps: f64,
        duration: f64,
        seed: u64,
    ) -> Vec<TimeTag> {
        let mut t = OpticalTransition::siv();
        t.max_signal_rate_cps = 2.0 * rate_ceiling;
        t.lifetime_s = lifetime_s;
        t.natural_fwhm_hz = lifetime_limited_fwhm(lifetime_s);
        let quiet = SpectralDynamics {
            ou_sigma_hz: 0.0,
            ..SpectralDynamics::stable()
        };
        let e = Emitter::new(EmitterConfig::new(t, 0.0, quiet)).unwrap();
        let cfg = PhotonStreamConfig {
            background: BackgroundModel::new(bg_cps, 0.0),
            ..PhotonStreamConfig::new(
                duration,
                Drive::Resonant {
                    laser_hz: e.center_hz(),
                    power_nw: 23.0,
                },
            )
        };
        PhotonStream::new(vec![e], cfg, seed).unwrap().collect_all()
    }

    #[test]
    fn single_emitter_dip_reaches_zero_and_recovers_with_tau() {
        // tau_c at Psat = lifetime/2 = 100 ns
        let tags = single_emitter_tags(5.0e4, 200.0e-9, 0.0, 120.0, 31);
        let hist = correlate(&tags, CorrelatorConfig::new(20.0e-9, 2.0e-6)).unwrap();
        let analysis = g2(&hist, 1.0).unwrap();
        assert!(
            analysis.g2_zero.abs() < 0.05,
            "dip {} +/- {}",
            analysis.g2_zero,
            analysis.g2_zero_uncertainty
        );
        assert!(
            (analysis.recovery_time_s / 100.0e-9 - 1.0).abs() < 0.1,
            "tau_c {:.3e}",
            analysis.recovery_time_s
        );
        assert!(analysis.consistent_with_single);
        assert_eq!(analysis.estimated_emitters, Some(1));
    }

    #[test]
    fn two_emitters_halve_the_dip() {
        let mk = |detuning_hz: f64| {
            let mut t = OpticalTransition::siv();
            t.max_signal_rate_cps = 1.0e5;
            t.lifetime_s = 200.0e-9;
            t.natural_fwhm_hz = lifetime_limited_fwhm(200.0e-9);
            let quiet = SpectralDynamics {
                ou_sigma_hz: 0.0,
                ..SpectralDynamics::stable()
            };
            Emitter::new(EmitterConfig::new(t, detuning_hz, quiet)).unwrap()
        };
        let emitters = vec![mk(0.0), mk(0.0)];
        let laser = emitters[0].center_hz();
        let cfg = PhotonStreamConfig::new(
            120.0,
            Drive::Resonant {
                laser_hz: laser,
                power_nw: 23.0,
            },
        );
        let tags = PhotonStream::new(emitters, cfg, 37).unwrap().collect_all();
        let hist = correlate(&tags, CorrelatorConfig::new(20.0e-9, 2.0e-6)).unwrap();
        let analysis = g2(&hist, 1.0).unwrap();
        assert!(
            (analysis.g2_zero - 0.5).abs() < 0.05,
            "two-emitter dip {}",
            analysis.g2_zero
        );
        assert!(!analysis.consistent_with_single);
        assert_eq!(analysis.estimated_emitters, Some(2));
    }

    #[test]
    fn background_correction_recovers_the_true_dip() {
        // rho = 0.8: raw dip floors at 1 - rho^2 = 0.36
        let signal = 4.0e4;
        let bg = 1.0e4;
        let tags = single_emitter_tags(signal, 200.0e-9, bg, 150.0, 41);
        let hist = correlate(&tags, CorrelatorConfig::new(20.0e-9, 2.0e-6)).unwrap();
        let raw = g2(&hist, 1.0).unwrap();
        assert!(
            (raw.g2_zero - 0.36).abs() < 0.05,
            "raw dip {} (expected the purity floor)",
            raw.g2_zero
        );
        // measured rates give rho directly here: S/(S+B)
        let deficit = 1.0 / (1.0 + signal * 100.0e-9);
        let rho = signal * deficit / (signal * deficit + bg);
        let corrected = g2(&hist, rho).unwrap();
        assert!(
            corrected.g2_zero.abs() < 0.06,
            "corrected dip {} +/- {}",
            corrected.g2_zero,
            corrected.g2_zero_uncertainty
        );
        assert_eq!(corrected.estimated_emitters, Some(1));
    }
}
