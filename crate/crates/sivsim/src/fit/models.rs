//! Model zoo for the analysis pipeline, with seeding heuristics.
//!
//! Every model carries an analytic gradient; `tests` cross-check each one
//! against central finite differences.

use crate::error::{Error, Result};
use crate::fit::lm::{least_squares, FitOptions, FitResult, Model, Transform, Weighting};

/// Single Lorentzian line: `offset + A (G/2)^2 / ((x-c)^2 + (G/2)^2)`.
/// Parameters: `center, fwhm, amplitude, offset`.
pub struct Lorentzian;

impl Model for Lorentzian {
    fn n_params(&self) -> usize {
        4
    }
    fn param_names(&self) -> Vec<String> {
        ["center", "fwhm", "amplitude", "offset"]
            .map(String::from)
            .to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let (c, fwhm, amp, off) = (p[0], p[1], p[2], p[3]);
        let h = 0.5 * fwhm;
        let d = x - c;
        off + amp * h * h / (d * d + h * h)
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (c, fwhm, amp) = (p[0], p[1], p[2]);
        let h = 0.5 * fwhm;
        let d = x - c;
        let den = d * d + h * h;
        out[0] = amp * h * h * 2.0 * d / (den * den);
        out[1] = amp * h * d * d / (den * den); // includes d(h)/d(fwhm) = 1/2
        out[2] = h * h / den;
        out[3] = 1.0;
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![
            Transform::Linear,
            Transform::Log,
            Transform::Log,
            Transform::Linear,
        ]
    }
}

/// Sum of Lorentzian peaks on a shared offset. Parameters:
/// `offset, center_1, fwhm_1, amplitude_1, center_2, ...`.
pub struct MultiLorentzian {
    pub n_peaks: usize,
}

impl Model for MultiLorentzian {
    fn n_params(&self) -> usize {
        1 + 3 * self.n_peaks
    }
    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["offset".to_string()];
        for k in 1..=self.n_peaks {
            names.push(format!("center_{k}"));
            names.push(format!("fwhm_{k}"));
            names.push(format!("amplitude_{k}"));
        }
        names
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let mut y = p[0];
        for k in 0..self.n_peaks {
            let (c, fwhm, amp) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
            let h = 0.5 * fwhm;
            let d = x - c;
            y += amp * h * h / (d * d + h * h);
        }
        y
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for k in 0..self.n_peaks {
            let (c, fwhm, amp) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
            let h = 0.5 * fwhm;
            let d = x - c;
            let den = d * d + h * h;
            out[1 + 3 * k] = amp * h * h * 2.0 * d / (den * den);
            out[2 + 3 * k] = amp * h * d * d / (den * den);
            out[3 + 3 * k] = h * h / den;
        }
    }
    fn transforms(&self) -> Vec<Transform> {
        let mut t = vec![Transform::Linear];
        for _ in 0..self.n_peaks {
            t.extend([Transform::Linear, Transform::Log, Transform::Log]);
        }
        t
    }
}

/// `offset + A exp(-(x - origin)/tau)`, with the origin fixed at the fit
/// window start. Parameters: `amplitude, lifetime, offset`.
pub struct ExponentialDecay {
    pub origin: f64,
}

impl Model for ExponentialDecay {
    fn n_params(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        ["amplitude", "lifetime", "offset"].map(String::from).to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[2] + p[0] * (-(x - self.origin) / p[1]).exp()
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let t = x - self.origin;
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * t / (p[1] * p[1]);
        out[2] = 1.0;
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Log, Transform::Log, Transform::Linear]
    }
}

/// Saturable emission plus a linear background leak:
/// `Imax P / (P + Psat) + beta P`.
/// Parameters: `max_rate, saturation_power, linear_background`.
pub struct SaturationCurve;

impl Model for SaturationCurve {
    fn n_params(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        ["max_rate", "saturation_power", "linear_background"]
            .map(String::from)
            .to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x / (x + p[1]) + p[2] * x
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let den = x + p[1];
        out[0] = x / den;
        out[1] = -p[0] * x / (den * den);
        out[2] = x;
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Log, Transform::Log, Transform::Linear]
    }
}

/// Linewidth versus power: `fwhm0 sqrt(1 + P/Psat)`.
/// Parameters: `natural_fwhm, saturation_power`.
pub struct PowerBroadening;

impl Model for PowerBroadening {
    fn n_params(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        ["natural_fwhm", "saturation_power"].map(String::from).to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 + x / p[1]).sqrt()
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let root = (1.0 + x / p[1]).sqrt();
        out[0] = root;
        out[1] = -p[0] * x / (2.0 * p[1] * p[1] * root);
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Log, Transform::Log]
    }
}

/// Two Gaussian components, e.g. an implantation depth profile.
/// Parameters: `mean_1, sigma_1, amplitude_1, mean_2, sigma_2, amplitude_2`
/// (amplitudes are peak heights, components ordered by ascending mean).
pub struct DoubleGaussian;

impl Model for DoubleGaussian {
    fn n_params(&self) -> usize {
        6
    }
    fn param_names(&self) -> Vec<String> {
        [
            "mean_1",
            "sigma_1",
            "amplitude_1",
            "mean_2",
            "sigma_2",
            "amplitude_2",
        ]
        .map(String::from)
        .to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        gaussian(x, p[0], p[1], p[2]) + gaussian(x, p[3], p[4], p[5])
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        for k in 0..2 {
            let (mu, sigma, amp) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
            let d = x - mu;
            let g = (-d * d / (2.0 * sigma * sigma)).exp();
            out[3 * k] = amp * g * d / (sigma * sigma);
            out[3 * k + 1] = amp * g * d * d / (sigma * sigma * sigma);
            out[3 * k + 2] = g;
        }
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![
            Transform::Linear,
            Transform::Log,
            Transform::Log,
            Transform::Linear,
            Transform::Log,
            Transform::Log,
        ]
    }
}

struct SingleGaussian;

impl Model for SingleGaussian {
    fn n_params(&self) -> usize {
        3
    }
    fn param_names(&self) -> Vec<String> {
        ["mean", "sigma", "amplitude"].map(String::from).to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        gaussian(x, p[0], p[1], p[2])
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let d = x - p[0];
        let g = (-d * d / (2.0 * p[1] * p[1])).exp();
        out[0] = p[2] * g * d / (p[1] * p[1]);
        out[1] = p[2] * g * d * d / (p[1] * p[1] * p[1]);
        out[2] = g;
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Linear, Transform::Log, Transform::Log]
    }
}

fn gaussian(x: f64, mu: f64, sigma: f64, amp: f64) -> f64 {
    let d = x - mu;
    amp * (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Antibunching dip `1 - (1 - g2_zero) exp(-|tau|/tau_c)`.
/// Parameters: `g2_zero, tau_c`; `g2_zero` may go slightly negative so noise
/// around zero is not clipped.
pub struct Antibunching;

impl Model for Antibunching {
    fn n_params(&self) -> usize {
        2
    }
    fn param_names(&self) -> Vec<String> {
        ["g2_zero", "tau_c"].map(String::from).to_vec()
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        1.0 - (1.0 - p[0]) * (-x.abs() / p[1]).exp()
    }
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let e = (-x.abs() / p[1]).exp();
        out[0] = e;
        out[1] = -(1.0 - p[0]) * e * x.abs() / (p[1] * p[1]);
    }
    fn transforms(&self) -> Vec<Transform> {
        vec![Transform::Linear, Transform::Log]
    }
}

// ---------------------------------------------------------------------------
// seeding heuristics

pub(crate) struct Baseline {
    pub offset: f64,
    pub noise: f64,
}

/// Offset and noise estimated from the outer quartiles of the x-range, where
/// the wings of a centered peak dominate.
pub(crate) fn outer_quartile_baseline(x: &[f64], y: &[f64]) -> Baseline {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut wings: Vec<f64> = x
        .iter()
        .zip(y)
        .filter(|(&xi, _)| xi <= lo + 0.25 * span || xi >= hi - 0.25 * span)
        .map(|(_, &yi)| yi)
        .collect();
    if wings.is_empty() {
        wings = y.to_vec();
    }
    let offset = median(&mut wings);
    let mean = wings.iter().sum::<f64>() / wings.len() as f64;
    let var = wings.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (wings.len() as f64 - 1.0).max(1.0);
    Baseline {
        offset,
        noise: var.sqrt(),
    }
}

/// Robust baseline for spectra whose peaks may sit anywhere on the grid:
/// median level with a MAD-derived noise scale.
pub(crate) fn median_baseline(y: &[f64]) -> Baseline {
    let mut vals = y.to_vec();
    let offset = median(&mut vals);
    let mut dev: Vec<f64> = y.iter().map(|&v| (v - offset).abs()).collect();
    let mad = median(&mut dev);
    let ymax = y.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    Baseline {
        offset,
        noise: (1.4826 * mad).max(1e-12 * ymax),
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Width at `level` around the sample maximum, by linear interpolation of the
/// crossings. Falls back to a quarter of the span when a wing never crosses.
fn width_at_level(x: &[f64], y: &[f64], peak: usize, level: f64) -> f64 {
    let span = x[x.len() - 1] - x[0];
    let mut left = x[0] - 0.125 * span.abs();
    for i in (0..peak).rev() {
        if y[i] <= level {
            let f = (level - y[i]) / (y[i + 1] - y[i]).max(1e-300);
            left = x[i] + f * (x[i + 1] - x[i]);
            break;
        }
    }
    let mut right = x[x.len() - 1] + 0.125 * span.abs();
    for i in peak + 1..x.len() {
        if y[i] <= level {
            let f = (level - y[i - 1]) / (y[i] - y[i - 1]).min(-1e-300);
            right = x[i - 1] + f * (x[i] - x[i - 1]);
            break;
        }
    }
    (right - left).abs().max(span.abs() * 1e-3)
}

fn moving_average(y: &[f64], half_width: usize) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_width);
            let hi = (i + half_width + 1).min(n);
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Local maxima with their topographic prominence, highest prominence first.
fn find_peaks(y: &[f64]) -> Vec<(usize, f64)> {
    let n = y.len();
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        if y[i] > y[i - 1] && y[i] >= y[i + 1] {
            let mut left_floor = y[i];
            for j in (0..i).rev() {
                left_floor = left_floor.min(y[j]);
                if y[j] > y[i] {
                    break;
                }
            }
            let mut right_floor = y[i];
            for j in i + 1..n {
                right_floor = right_floor.min(y[j]);
                if y[j] > y[i] {
                    break;
                }
            }
            peaks.push((i, y[i] - left_floor.max(right_floor)));
        }
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks
}

// ---------------------------------------------------------------------------
// high-level fits

/// Fit a single Lorentzian line. Seeds itself from the data; errors with
/// [`Error::NoPeak`] when no point rises 3 sigma above the baseline noise,
/// which downstream statistics use to flag ionized or dim sweeps.
pub fn fit_lorentzian(x: &[f64], y: &[f64], weighting: &Weighting) -> Result<FitResult> {
    if x.len() < 8 || y.len() != x.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 8 points for a Lorentzian fit, got {}",
            x.len().min(y.len())
        )));
    }
    let base = outer_quartile_baseline(x, y);
    let (peak, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let amp = ymax - base.offset;
    if amp <= 3.0 * base.noise || amp <= 0.0 {
        return Err(Error::NoPeak(format!(
            "maximum {ymax:.3} vs baseline {:.3} +/- {:.3}",
            base.offset, base.noise
        )));
    }
    let fwhm0 = width_at_level(x, y, peak, base.offset + 0.5 * amp);
    let span = (x[x.len() - 1] - x[0]).abs();
    if span < 2.0 * fwhm0 {
        return Err(Error::InsufficientData(format!(
            "span {span:.3e} covers less than twice the estimated width {fwhm0:.3e}"
        )));
    }
    let init = [x[peak], fwhm0, amp, base.offset];
    let mut fit = least_squares(&Lorentzian, x, y, &init, weighting, &FitOptions::default())?;
    let fitted_fwhm = fit.value("fwhm").unwrap();
    if fitted_fwhm > 2.0 * span {
        fit.warn(format!(
            "fitted width {fitted_fwhm:.3e} exceeds twice the scanned span; treat as unresolved"
        ));
    }
    Ok(fit)
}

/// Fit `n_peaks` Lorentzians on a shared offset. Peaks are seeded from
/// prominence-ranked local maxima of a lightly smoothed copy of the data; if
/// fewer than `n_peaks` candidates exist the error reports those found.
/// Fitted peaks are reordered by ascending center.
pub fn fit_multi_lorentzian(
    x: &[f64],
    y: &[f64],
    n_peaks: usize,
    weighting: &Weighting,
) -> Result<FitResult> {
    if n_peaks == 0 {
        return Err(Error::invalid("n_peaks", "must be at least 1"));
    }
    if n_peaks == 1 {
        // delegate: the single-peak seeding is more robust
        let fit = fit_lorentzian(x, y, weighting)?;
        return Ok(relabel_single_as_multi(fit));
    }
    let min_len = 3 * n_peaks + 4;
    if x.len() < min_len || y.len() != x.len() {
        return Err(Error::InsufficientData(format!(
            "need >= {min_len} points for {n_peaks} peaks, got {}",
            x.len().min(y.len())
        )));
    }
    let base = median_baseline(y);
    let smooth = moving_average(y, (x.len() / 64).max(1));
    let candidates: Vec<(usize, f64)> = find_peaks(&smooth)
        .into_iter()
        .filter(|&(i, prom)| {
            smooth[i] > base.offset + 3.0 * base.noise && prom > 1.5 * base.noise
        })
        .collect();
    if candidates.len() < n_peaks {
        return Err(Error::PeakSeeding {
            expected: n_peaks,
            found: candidates.iter().map(|&(i, _)| x[i]).collect(),
        });
    }
    let mut chosen: Vec<usize> = candidates[..n_peaks].iter().map(|&(i, _)| i).collect();
    chosen.sort_unstable();

    let span = (x[x.len() - 1] - x[0]).abs();
    let mut init = vec![base.offset];
    for &i in &chosen {
        let amp = (y[i] - base.offset).max(base.noise.max(1e-12));
        let fwhm = width_at_level(x, y, i, base.offset + 0.5 * amp)
            .min(span / n_peaks as f64)
            .max(span * 1e-3);
        init.extend([x[i], fwhm, amp]);
    }
    let model = MultiLorentzian { n_peaks };
    let mut fit = least_squares(&model, x, y, &init, weighting, &FitOptions::default())?;
    sort_peaks_by_center(&mut fit, n_peaks);
    Ok(fit)
}

fn relabel_single_as_multi(fit: FitResult) -> FitResult {
    let mut out = fit;
    let order = ["offset", "center", "fwhm", "amplitude"];
    let idx: Vec<usize> = order
        .iter()
        .map(|n| out.names.iter().position(|m| m == n).unwrap())
        .collect();
    out.values = idx.iter().map(|&i| out.values[i]).collect();
    out.uncertainties = idx.iter().map(|&i| out.uncertainties[i]).collect();
    out.names = ["offset", "center_1", "fwhm_1", "amplitude_1"]
        .map(String::from)
        .to_vec();
    out
}

fn sort_peaks_by_center(fit: &mut FitResult, n_peaks: usize) {
    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| fit.values[1 + 3 * a].total_cmp(&fit.values[1 + 3 * b]));
    let values = fit.values.clone();
    let uncertainties = fit.uncertainties.clone();
    for (slot, &src) in order.iter().enumerate() {
        for f in 0..3 {
            fit.values[1 + 3 * slot + f] = values[1 + 3 * src + f];
            fit.uncertainties[1 + 3 * slot + f] = uncertainties[1 + 3 * src + f];
        }
    }
}

/// Fit `offset + A exp(-t/tau)` to a decay histogram. The window starts at
/// the histogram maximum, which drops the instrument rise.
pub fn fit_exponential_decay(t: &[f64], counts: &[f64], weighting: &Weighting) -> Result<FitResult> {
    if t.len() < 10 || counts.len() != t.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 10 histogram bins, got {}",
            t.len().min(counts.len())
        )));
    }
    let peak = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty");
    let (tw, yw) = (&t[peak..], &counts[peak..]);
    if tw.len() < 10 {
        return Err(Error::InsufficientData(
            "fewer than 10 bins after the histogram peak".into(),
        ));
    }
    let tail = &yw[yw.len() - (yw.len() / 10).max(3)..];
    let offset = tail.iter().sum::<f64>() / tail.len() as f64;
    let amp = yw[0] - offset;
    if amp <= 0.0 {
        return Err(Error::NoPeak("decay peak does not rise above the tail floor".into()));
    }
    let efold = offset + amp / std::f64::consts::E;
    let tau0 = yw
        .iter()
        .position(|&v| v <= efold)
        .map(|k| (tw[k] - tw[0]).max((tw[1] - tw[0]) * 0.5))
        .unwrap_or((tw[tw.len() - 1] - tw[0]) / 3.0);
    let model = ExponentialDecay { origin: tw[0] };
    let weighting_window = match weighting {
        Weighting::Sigmas(s) => Weighting::Sigmas(s[peak..].to_vec()),
        w => w.clone(),
    };
    least_squares(
        &model,
        tw,
        yw,
        &[amp, tau0, offset.max(1e-9 * amp)],
        &weighting_window,
        &FitOptions::default(),
    )
}

/// Fit the saturation curve `Imax P/(P+Psat) + beta P`. Warns when the
/// sampled powers do not bracket the fitted saturation power, which leaves
/// `saturation_power` poorly constrained.
pub fn fit_saturation(powers: &[f64], rates: &[f64], weighting: &Weighting) -> Result<FitResult> {
    if powers.len() < 5 || rates.len() != powers.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 5 saturation points, got {}",
            powers.len().min(rates.len())
        )));
    }
    if powers.iter().any(|&p| p <= 0.0) {
        return Err(Error::invalid("powers", "must all be positive"));
    }
    let ymax = rates.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if ymax <= 0.0 {
        return Err(Error::NoPeak("all rates are non-positive".into()));
    }
    let mut ps: Vec<f64> = powers.to_vec();
    let p_med = median(&mut ps);
    // seed Psat from the first crossing of half the maximum rate
    let psat0 = powers
        .iter()
        .zip(rates)
        .find(|(_, &r)| r >= 0.5 * ymax)
        .map(|(&p, _)| p)
        .unwrap_or(p_med)
        .max(1e-6);
    let init = [1.2 * ymax, psat0, 1e-9 * ymax];
    let mut fit = least_squares(&SaturationCurve, powers, rates, &init, weighting, &FitOptions::default())?;
    let psat = fit.value("saturation_power").unwrap();
    let (pmin, pmax) = powers
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    if psat > pmax || psat < pmin {
        fit.warn(format!(
            "fitted saturation power {psat:.3e} lies outside the sampled range [{pmin:.3e}, {pmax:.3e}]; poorly constrained"
        ));
    }
    Ok(fit)
}

/// Signal purity `rho(P) = S/(S+B)` implied by a saturation fit, with
/// `B = linear_background * P`. Equals 1 for all powers when the fitted
/// background term vanishes.
pub fn saturation_rho(fit: &FitResult, power_nw: f64) -> f64 {
    let s = fit.value("max_rate").unwrap_or(0.0) * power_nw
        / (power_nw + fit.value("saturation_power").unwrap_or(f64::INFINITY));
    let b = fit.value("linear_background").unwrap_or(0.0).max(0.0) * power_nw;
    if s <= 0.0 {
        if b > 0.0 {
            return 0.0;
        }
        return 1.0;
    }
    s / (s + b)
}

/// Fit `fwhm0 sqrt(1 + P/Psat)` to linewidth-versus-power data. Data whose
/// overall trend decreases with power is rejected as outside the model.
pub fn fit_power_broadening(powers: &[f64], fwhms: &[f64]) -> Result<FitResult> {
    if powers.len() < 3 || fwhms.len() != powers.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 3 linewidth points, got {}",
            powers.len().min(fwhms.len())
        )));
    }
    if powers.iter().any(|&p| p < 0.0) || fwhms.iter().any(|&f| f <= 0.0) {
        return Err(Error::invalid("data", "powers must be >= 0 and linewidths > 0"));
    }
    let n = powers.len() as f64;
    let px = powers.iter().sum::<f64>() / n;
    let fy = fwhms.iter().sum::<f64>() / n;
    let cov: f64 = powers.iter().zip(fwhms).map(|(&p, &f)| (p - px) * (f - fy)).sum();
    let var: f64 = powers.iter().map(|&p| (p - px) * (p - px)).sum();
    if var <= 0.0 {
        return Err(Error::InsufficientData(
            "all powers identical; broadening is unconstrained".into(),
        ));
    }
    let slope = cov / var;
    if slope < 0.0 {
        return Err(Error::FitFailure(format!(
            "linewidths decrease with power (trend {slope:.3e} per unit power); outside the broadening model"
        )));
    }
    let f0 = fwhms.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let (pmax, fmax) = powers
        .iter()
        .zip(fwhms)
        .max_by(|a, b| a.0.total_cmp(b.0))
        .map(|(&p, &f)| (p, f))
        .expect("nonempty");
    let ratio = (fmax / f0).max(1.0 + 1e-6);
    let psat0 = (pmax / (ratio * ratio - 1.0)).max(1e-6);
    least_squares(
        &PowerBroadening,
        powers,
        fwhms,
        &[f0, psat0],
        &Weighting::Unweighted,
        &FitOptions::default(),
    )
}

/// Fit two Gaussian components to a profile (e.g. implantation depth
/// distributions). Components are ordered by ascending mean. When the two
/// means collapse within the sampling resolution the fit degrades to a single
/// Gaussian, reported with a warning and a zeroed second amplitude.
pub fn fit_double_gaussian(x: &[f64], y: &[f64], weighting: &Weighting) -> Result<FitResult> {
    if x.len() < 12 || y.len() != x.len() {
        return Err(Error::InsufficientData(format!(
            "need >= 12 profile points, got {}",
            x.len().min(y.len())
        )));
    }
    let total: f64 = y.iter().sum();
    if total <= 0.0 {
        return Err(Error::NoPeak("profile has no positive mass".into()));
    }
    let mean = x.iter().zip(y).map(|(&xi, &yi)| xi * yi).sum::<f64>() / total;
    let var = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi * (xi - mean) * (xi - mean))
        .sum::<f64>()
        / total;
    let std = var.sqrt().max(spacing(x));

    let smooth = moving_average(y, (x.len() / 32).max(1));
    let peaks = find_peaks(&smooth);
    let (m1, m2) = if peaks.len() >= 2 {
        (x[peaks[0].0], x[peaks[1].0])
    } else {
        (mean - 0.7 * std, mean + 0.7 * std)
    };
    let ymax = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let init = [
        m1.min(m2),
        0.5 * std,
        0.75 * ymax,
        m1.max(m2),
        0.5 * std,
        0.5 * ymax,
    ];
    let mut fit = least_squares(&DoubleGaussian, x, y, &init, weighting, &FitOptions::default())?;

    // order components by mean
    if fit.values[0] > fit.values[3] {
        fit.values.rotate_left(3);
        fit.uncertainties.rotate_left(3);
    }
    let resolution = 2.0 * spacing(x);
    if (fit.values[3] - fit.values[0]).abs() < resolution {
        let g = least_squares(
            &SingleGaussian,
            x,
            y,
            &[mean, std, ymax],
            weighting,
            &FitOptions::default(),
        )?;
        let names = fit.names.clone();
        fit = g;
        fit.values = vec![fit.values[0], fit.values[1], fit.values[2], fit.values[0], fit.values[1], 0.0];
        fit.uncertainties = vec![
            fit.uncertainties[0],
            fit.uncertainties[1],
            fit.uncertainties[2],
            fit.uncertainties[0],
            fit.uncertainties[1],
            0.0,
        ];
        fit.names = names;
        fit.warn("component means collapsed within the sampling resolution; reporting a single Gaussian");
    }
    Ok(fit)
}

/// Mean of the component with the larger amplitude in a double-Gaussian fit.
pub fn dominant_gaussian_mean(fit: &FitResult) -> f64 {
    if fit.value("amplitude_1").unwrap_or(0.0) >= fit.value("amplitude_2").unwrap_or(0.0) {
        fit.value("mean_1").unwrap_or(f64::NAN)
    } else {
        fit.value("mean_2").unwrap_or(f64::NAN)
    }
}

fn spacing(x: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = x.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    median(&mut gaps).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::lm::finite_difference_gradient;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn check_gradient(model: &dyn Model, p: &[f64], xs: &[f64]) {
        let mut grad = vec![0.0; model.n_params()];
        for &x in xs {
            model.gradient(x, p, &mut grad);
            let fd = finite_difference_gradient(model, x, p);
            for j in 0..p.len() {
                // the 1e-6 floor keeps finite-difference truncation noise in
                // far tails (values ~1e-7) from failing the comparison
                let scale = grad[j].abs().max(fd[j].abs()).max(1e-6);
                assert!(
                    (grad[j] - fd[j]).abs() / scale < 1e-4,
                    "param {j} at x={x}: analytic {} vs fd {}",
                    grad[j],
                    fd[j]
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.37).collect();
        check_gradient(&Lorentzian, &[0.6, 2.3, 4.0, 0.7], &xs);
        check_gradient(
            &MultiLorentzian { n_peaks: 2 },
            &[0.2, -3.0, 1.5, 2.0, 3.0, 2.5, 1.0],
            &xs,
        );
        check_gradient(&DoubleGaussian, &[-2.0, 1.0, 3.0, 2.5, 2.0, 1.5], &xs);
        check_gradient(&Antibunching, &[0.3, 2.0], &xs);
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        check_gradient(&ExponentialDecay { origin: 0.0 }, &[10.0, 3.0, 0.5], &ts);
        let ps: Vec<f64> = (1..30).map(|i| i as f64 * 2.0).collect();
        check_gradient(&SaturationCurve, &[9.7e3, 23.0, 2.0], &ps);
        check_gradient(&PowerBroadening, &[100.3, 23.0], &ps);
    }

    #[test]
    fn lorentzian_fit_recovers_noise_free_parameters() {
        let truth = [3.0, 40.0, 120.0, 5.0];
        let x: Vec<f64> = (0..81).map(|i| -200.0 + 5.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| Lorentzian.eval(x, &truth)).collect();
        let fit = fit_lorentzian(&x, &y, &Weighting::Unweighted).unwrap();
        assert!(fit.converged);
        for (name, want) in ["center", "fwhm", "amplitude", "offset"].iter().zip(truth) {
            let got = fit.value(name).unwrap();
            let scale = want.abs().max(1.0);
            assert!(
                ((got - want) / scale).abs() < 1e-6,
                "{name}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn noise_free_recovery_from_perturbed_starts() {
        // +/-20% perturbed starts must come back to the truth at 1e-6
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..101).map(|i| -250.0 + 5.0 * i as f64).collect();
        let truth = [10.0, 60.0, 900.0, 30.0];
        let y: Vec<f64> = x.iter().map(|&x| Lorentzian.eval(x, &truth)).collect();
        for _ in 0..12 {
            let init: Vec<f64> = truth
                .iter()
                .map(|&p| p * rng.gen_range(0.8..1.2))
                .collect();
            let fit = least_squares(
                &Lorentzian,
                &x,
                &y,
                &init,
                &Weighting::Unweighted,
                &FitOptions::default(),
            )
            .unwrap();
            for (j, &want) in truth.iter().enumerate() {
                assert!(
                    ((fit.values[j] - want) / want.abs().max(1.0)).abs() < 1e-6,
                    "param {j}: {} vs {want} from init {init:?}",
                    fit.values[j]
                );
            }
        }
    }

    #[test]
    fn two_separated_lorentzians_resolved_within_two_percent() {
        // two lines 10 widths apart; mutual contamination < 1%
        let p = [1.0, -500.0, 100.0, 50.0, 500.0, 100.0, 30.0];
        let model = MultiLorentzian { n_peaks: 2 };
        let x: Vec<f64> = (0..201).map(|i| -1000.0 + 10.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| model.eval(x, &p)).collect();
        let fit = fit_multi_lorentzian(&x, &y, 2, &Weighting::Unweighted).unwrap();
        assert!(fit.converged);
        for (name, want) in [
            ("center_1", -500.0),
            ("fwhm_1", 100.0),
            ("center_2", 500.0),
            ("fwhm_2", 100.0),
        ] {
            let got = fit.value(name).unwrap();
            assert!(
                ((got - want) / want.abs().max(1.0)).abs() < 0.02,
                "{name}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn missing_peak_reports_found_candidates() {
        let x: Vec<f64> = (0..61).map(|i| i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&x| Lorentzian.eval(x, &[30.0, 6.0, 50.0, 2.0]))
            .collect();
        match fit_multi_lorentzian(&x, &y, 3, &Weighting::Unweighted) {
            Err(Error::PeakSeeding { expected, found }) => {
                assert_eq!(expected, 3);
                assert_eq!(found.len(), 1);
                assert!((found[0] - 30.0).abs() < 2.0);
            }
            other => panic!("expected PeakSeeding, got {other:?}"),
        }
    }

    #[test]
    fn flat_noise_has_no_peak() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..61).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|_| 50.0 + rng.gen_range(-1.0..1.0)).collect();
        assert!(matches!(
            fit_lorentzian(&x, &y, &Weighting::Unweighted),
            Err(Error::NoPeak(_))
        ));
    }

    #[test]
    fn exponential_decay_noise_free() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|&t| 20.0 + 500.0 * (-t / 1.69).exp()).collect();
        let fit = fit_exponential_decay(&t, &y, &Weighting::Unweighted).unwrap();
        assert_relative_eq!(fit.value("lifetime").unwrap(), 1.69, max_relative = 1e-6);
        assert_relative_eq!(fit.value("amplitude").unwrap(), 500.0, max_relative = 1e-6);
    }

    #[test]
    fn saturation_fit_recovers_parameters_and_rho() {
        let p: Vec<f64> = vec![1.0, 2.0, 5.0, 10.0, 23.0, 50.0, 100.0, 200.0];
        let model = SaturationCurve;
        let truth = [9.7e3, 23.0, 12.0];
        let y: Vec<f64> = p.iter().map(|&x| model.eval(x, &truth)).collect();
        let fit = fit_saturation(&p, &y, &Weighting::Unweighted).unwrap();
        assert_relative_eq!(fit.value("max_rate").unwrap(), 9.7e3, max_relative = 1e-5);
        assert_relative_eq!(fit.value("saturation_power").unwrap(), 23.0, max_relative = 1e-5);
        let rho = saturation_rho(&fit, 23.0);
        let expect = 4850.0 / (4850.0 + 12.0 * 23.0);
        assert_relative_eq!(rho, expect, max_relative = 1e-4);

        // beta = 0 means a pure emitter: rho = 1 everywhere
        let y0: Vec<f64> = p.iter().map(|&x| model.eval(x, &[9.7e3, 23.0, 0.0])).collect();
        let fit0 = fit_saturation(&p, &y0, &Weighting::Unweighted).unwrap();
        for &pw in &p {
            assert!((saturation_rho(&fit0, pw) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn saturation_detects_unbracketed_range() {
        let p: Vec<f64> = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let y: Vec<f64> = p.iter().map(|&x| SaturationCurve.eval(x, &[9.7e3, 23.0, 0.0])).collect();
        let fit = fit_saturation(&p, &y, &Weighting::Unweighted).unwrap();
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn power_broadening_recovery_and_rejection() {
        let p: Vec<f64> = vec![1.0, 5.0, 10.0, 23.0, 50.0, 100.0, 200.0];
        let y: Vec<f64> = p.iter().map(|&x| 100.3 * (1.0 + x / 23.0).sqrt()).collect();
        let fit = fit_power_broadening(&p, &y).unwrap();
        assert_relative_eq!(fit.value("natural_fwhm").unwrap(), 100.3, max_relative = 1e-6);
        assert_relative_eq!(fit.value("saturation_power").unwrap(), 23.0, max_relative = 1e-5);

        let decreasing: Vec<f64> = y.iter().rev().cloned().collect();
        assert!(matches!(
            fit_power_broadening(&p, &decreasing),
            Err(Error::FitFailure(_))
        ));
        assert!(fit_power_broadening(&[5.0, 5.0, 5.0], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn double_gaussian_recovers_two_components() {
        let x: Vec<f64> = (0..120).map(|i| i as f64).collect();
        let truth = [40.0, 8.0, 100.0, 75.0, 12.0, 60.0];
        let y: Vec<f64> = x.iter().map(|&x| DoubleGaussian.eval(x, &truth)).collect();
        let fit = fit_double_gaussian(&x, &y, &Weighting::Unweighted).unwrap();
        for (name, want) in [("mean_1", 40.0), ("sigma_1", 8.0), ("mean_2", 75.0), ("sigma_2", 12.0)] {
            let got = fit.value(name).unwrap();
            assert!(((got - want) / want).abs() < 0.02, "{name}: {got} vs {want}");
        }
        assert_relative_eq!(dominant_gaussian_mean(&fit), fit.value("mean_1").unwrap());
    }

    #[test]
    fn pure_gaussian_collapses_second_component() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| gaussian(x, 50.0, 9.0, 80.0)).collect();
        let fit = fit_double_gaussian(&x, &y, &Weighting::Unweighted).unwrap();
        let a2 = fit.value("amplitude_2").unwrap();
        let a1 = fit.value("amplitude_1").unwrap();
        assert!(
            a2 / a1 < 0.02 || !fit.warnings.is_empty(),
            "second component should vanish or be flagged (a1={a1}, a2={a2}, warnings={:?})",
            fit.warnings
        );
    }
}
