//! Scanned-excitation fluorescence traces.
//!
//! A sweep steps the drive laser across a fixed frequency grid, dwelling at
//! each setpoint and discarding a settle window at the start of the dwell.
//! Passes alternate direction (up, down, up, ...), with laser-off dead time
//! at each turnaround. Emitter dynamics keep evolving through settle windows
//! and turnarounds; only the counting is gated. Every pass is stored aligned
//! to the ascending grid together with its direction, so later analysis can
//! average windows of passes or study direction-dependent drag.

use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emitter::{DriveScheme, Emitter};
use crate::error::{Error, Result};
use crate::physics::BackgroundModel;
use crate::rng::{domain, task_rng};

/// Full description of one scanned acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Absolute scan center; setpoints are symmetric around it.
    pub center_hz: f64,
    /// Full scan span.
    pub span_hz: f64,
    pub n_points: usize,
    /// Dwell per setpoint, counting plus settle.
    pub dwell_s: f64,
    /// Leading fraction of each dwell discarded while the laser settles.
    pub settle_fraction: f64,
    /// Laser-off dead time after each one-way pass.
    pub turnaround_s: f64,
    /// Number of one-way passes; even counts make full round trips.
    pub n_passes: usize,
    /// Dynamics and counting bin.
    pub bin_s: f64,
    /// Residual lock jitter of the drive laser around each setpoint.
    pub laser_jitter_hz: f64,
    pub power_nw: f64,
    pub scheme: DriveScheme,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            center_hz: crate::physics::SIV_ZPL_HZ,
            span_hz: 2.0e9,
            n_points: 61,
            dwell_s: 0.2,
            settle_fraction: 0.1,
            turnaround_s: 0.8,
            n_passes: 28,
            bin_s: 0.02,
            laser_jitter_hz: 1.0e6,
            power_nw: 1.2,
            scheme: DriveScheme::continuous_resonant(),
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::invalid("n_points", "need at least 2 setpoints"));
        }
        if self.n_passes == 0 {
            return Err(Error::invalid("n_passes", "need at least one pass"));
        }
        if !(self.span_hz > 0.0) {
            return Err(Error::invalid("span_hz", "must be positive"));
        }
        if !(self.bin_s > 0.0) || !(self.dwell_s > 0.0) {
            return Err(Error::invalid("dwell_s", "dwell and bin must be positive"));
        }
        let bins = self.dwell_s / self.bin_s;
        if (bins - bins.round()).abs() > 1e-9 || bins.round() < 2.0 {
            return Err(Error::invalid(
                "dwell_s",
                "must be a whole number (>= 2) of bins",
            ));
        }
        if !(0.0..1.0).contains(&self.settle_fraction) {
            return Err(Error::invalid("settle_fraction", "must be in [0, 1)"));
        }
        if self.turnaround_s < 0.0 {
            return Err(Error::invalid("turnaround_s", "must be >= 0"));
        }
        if !(self.laser_jitter_hz >= 0.0) || !self.laser_jitter_hz.is_finite() {
            return Err(Error::invalid("laser_jitter_hz", "must be finite and >= 0"));
        }
        if !(self.power_nw > 0.0) {
            return Err(Error::invalid("power_nw", "must be positive"));
        }
        self.scheme.validate()
    }

    /// Setpoints as detunings from the scan center, ascending.
    pub fn detunings_hz(&self) -> Vec<f64> {
        let step = self.span_hz / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| -0.5 * self.span_hz + i as f64 * step)
            .collect()
    }

    pub fn bins_per_point(&self) -> usize {
        (self.dwell_s / self.bin_s).round() as usize
    }

    /// Bins discarded at the start of each dwell.
    pub fn settle_bins(&self) -> usize {
        (self.settle_fraction * self.bins_per_point() as f64).round() as usize
    }

    /// Counting time per setpoint per pass.
    pub fn live_time_s(&self) -> f64 {
        (self.bins_per_point() - self.settle_bins()) as f64 * self.bin_s
    }

    pub fn one_way_duration_s(&self) -> f64 {
        self.n_points as f64 * self.dwell_s
    }

    /// One pass plus its turnaround.
    pub fn pass_period_s(&self) -> f64 {
        self.one_way_duration_s() + self.turnaround_s
    }

    /// An up pass and a down pass, turnarounds included.
    pub fn round_trip_duration_s(&self) -> f64 {
        2.0 * self.pass_period_s()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.n_passes as f64 * self.pass_period_s()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDirection {
    Up,
    Down,
}

/// Counts from a scanned acquisition, one row per pass, every row aligned to
/// the ascending detuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PleTrace {
    pub center_hz: f64,
    pub detunings_hz: Vec<f64>,
    pub counts: Vec<Vec<f64>>,
    pub directions: Vec<SweepDirection>,
    /// Wall-clock start of each pass.
    pub start_times_s: Vec<f64>,
    /// Counting time behind each point of each row.
    pub live_time_s: f64,
    pub power_nw: f64,
}

impl PleTrace {
    pub fn n_passes(&self) -> usize {
        self.counts.len()
    }

    /// Mean of all rows.
    pub fn averaged(&self) -> Vec<f64> {
        self.window_mean(0, self.n_passes())
    }

    /// Mean of `len` consecutive rows starting at `start`.
    pub fn window_mean(&self, start: usize, len: usize) -> Vec<f64> {
        let end = (start + len).min(self.n_passes());
        let n = (end - start).max(1) as f64;
        let mut out = vec![0.0; self.detunings_hz.len()];
        for row in &self.counts[start..end] {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Sliding means of `window` consecutive rows (stride 1): the resolution
    /// element of per-sweep statistics. `window` passes averaged together
    /// trade time resolution for fit stability. N rows yield N-window+1
    /// singles.
    pub fn overlapping_windows(&self, window: usize) -> Vec<Vec<f64>> {
        if window == 0 || window > self.n_passes() {
            return Vec::new();
        }
        (0..=self.n_passes() - window)
            .map(|start| self.window_mean(start, window))
            .collect()
    }

    /// Non-overlapping means of `window` consecutive rows (stride `window`):
    /// the display convention. N rows yield floor(N / window) singles;
    /// leftover rows are dropped.
    pub fn disjoint_windows(&self, window: usize) -> Vec<Vec<f64>> {
        if window == 0 || window > self.n_passes() {
            return Vec::new();
        }
        (0..self.n_passes() / window)
            .map(|i| self.window_mean(i * window, window))
            .collect()
    }
}

/// Run a scanned acquisition over live emitters.
///
/// Emitter state evolves in place, so consecutive sweeps continue the same
/// trajectory; pass a fresh `seed` per acquisition to decorrelate the
/// stochastic draws (the same seed replays the same draws).
pub fn run_sweep(
    emitters: &mut [Emitter],
    background: &BackgroundModel,
    plan: &SweepPlan,
    seed: u64,
) -> Result<PleTrace> {
    plan.validate()?;
    for e in emitters.iter() {
        e.config.validate()?;
    }
    let detunings = plan.detunings_hz();
    let bins = plan.bins_per_point();
    let settle = plan.settle_bins();
    let duty = plan.scheme.resonant_duty;
    let mut emitter_rngs: Vec<_> = (0..emitters.len())
        .map(|i| task_rng(seed, domain::EMITTER, i as u64))
        .collect();
    let mut count_rng = task_rng(seed, domain::SWEEP, 0);

    let mut counts = Vec::with_capacity(plan.n_passes);
    let mut directions = Vec::with_capacity(plan.n_passes);
    let mut start_times = Vec::with_capacity(plan.n_passes);

    for pass in 0..plan.n_passes {
        let direction = if pass % 2 == 0 {
            SweepDirection::Up
        } else {
            SweepDirection::Down
        };
        start_times.push(pass as f64 * plan.pass_period_s());
        let mut row = vec![0.0; detunings.len()];
        let order: Box<dyn Iterator<Item = usize>> = match direction {
            SweepDirection::Up => Box::new(0..detunings.len()),
            SweepDirection::Down => Box::new((0..detunings.len()).rev()),
        };
        for idx in order {
            let setpoint_hz = plan.center_hz + detunings[idx];
            for bin in 0..bins {
                let laser_hz = if plan.laser_jitter_hz > 0.0 {
                    let g: f64 = StandardNormal.sample(&mut count_rng);
                    setpoint_hz + plan.laser_jitter_hz * g
                } else {
                    setpoint_hz
                };
                let mut rate = background.rate(plan.power_nw);
                for e in emitters.iter() {
                    rate += e.signal_rate_cps(laser_hz, plan.power_nw);
                }
                let mean = rate * duty * plan.bin_s;
                let drawn = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|_| Error::invalid("rate", "non-finite bin mean"))?
                        .sample(&mut count_rng)
                } else {
                    0.0
                };
                if bin >= settle {
                    row[idx] += drawn;
                }
                for (e, rng) in emitters.iter_mut().zip(&mut emitter_rngs) {
                    e.advance_bin(plan.bin_s, &plan.scheme, plan.power_nw, rng);
                }
            }
        }
        counts.push(row);
        directions.push(direction);

        // turnaround: laser off, repump (and therefore walk and recovery)
        // keeps running
        let dead_bins = (plan.turnaround_s / plan.bin_s).round() as usize;
        for _ in 0..dead_bins {
            for (e, rng) in emitters.iter_mut().zip(&mut emitter_rngs) {
                e.advance_bin(plan.bin_s, &plan.scheme, 0.0, rng);
            }
        }
    }

    Ok(PleTrace {
        center_hz: plan.center_hz,
        detunings_hz: detunings,
        counts,
        directions,
        start_times_s: start_times,
        live_time_s: plan.live_time_s(),
        power_nw: plan.power_nw,
    })
}
