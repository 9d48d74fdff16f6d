//! PPG conditioning: band-pass filtering, pulse peak detection and
//! inter-beat-interval extraction with artifact rejection.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid band [{low_hz}, {high_hz}] Hz, order {order} at {rate_hz} Hz")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        order: usize,
        rate_hz: f64,
    },
    #[error("signal of {len} samples is too short for an order-{order} filter (need {needed})")]
    SignalTooShort { len: usize, order: usize, needed: usize },
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid interval sequence: {0}")]
    InvalidIbi(String),
}

/// Uniformly sampled optical pulse waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSignal {
    samples: Vec<f64>,
    rate_hz: f64,
    start_time_s: f64,
}

impl PpgSignal {
    pub fn new(samples: Vec<f64>, rate_hz: f64, start_time_s: f64) -> Result<Self, SignalError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(SignalError::InvalidRate(rate_hz));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            samples,
            rate_hz,
            start_time_s,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            rate_hz: self.rate_hz,
            start_time_s: self.start_time_s,
        }
    }
}

/// Inter-beat intervals in milliseconds, each tagged with the time of the
/// beat that ends it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IbiSequence {
    intervals_ms: Vec<f64>,
    beat_times_s: Vec<f64>,
}

impl IbiSequence {
    pub fn new(intervals_ms: Vec<f64>, beat_times_s: Vec<f64>) -> Result<Self, SignalError> {
        if intervals_ms.len() != beat_times_s.len() {
            return Err(SignalError::InvalidIbi(format!(
                "{} intervals but {} beat times",
                intervals_ms.len(),
                beat_times_s.len()
            )));
        }
        if let Some(i) = intervals_ms
            .iter()
            .position(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(SignalError::InvalidIbi(format!(
                "interval {i} is not a positive finite value"
            )));
        }
        if let Some(i) = beat_times_s.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::InvalidIbi(format!("beat time {i} is not finite")));
        }
        if let Some(i) = beat_times_s.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SignalError::InvalidIbi(format!(
                "beat times not strictly increasing at {}",
                i + 1
            )));
        }
        Ok(Self {
            intervals_ms,
            beat_times_s,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn intervals_ms(&self) -> &[f64] {
        &self.intervals_ms
    }

    pub fn beat_times_s(&self) -> &[f64] {
        &self.beat_times_s
    }

    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }

    /// Intervals whose ending beat falls in `[start_s, end_s)`.
    pub fn intervals_between(&self, start_s: f64, end_s: f64) -> &[f64] {
        let lo = self.beat_times_s.partition_point(|&t| t < start_s);
        let hi = self.beat_times_s.partition_point(|&t| t < end_s);
        &self.intervals_ms[lo..hi.max(lo)]
    }
}

/// One second-order section in direct form, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form-II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[2] * y]
    }

    fn run(&self, data: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for x in data.iter_mut() {
            let input = *x;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *x = y;
        }
    }
}

/// Butterworth band-pass realized as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub rate_hz: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    /// Magnitude of the cascade's frequency response at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / self.rate_hz;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .product::<Complex64>()
            .norm()
    }
}

/// Designs a Butterworth band-pass of total order `order` (2 or 4) via the
/// bilinear transform with pre-warped band edges. Each section is scaled to
/// unit gain at the geometric centre frequency.
pub fn design_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    rate_hz: f64,
) -> Result<FilterSpec, SignalError> {
    let valid = low_hz.is_finite()
        && high_hz.is_finite()
        && rate_hz.is_finite()
        && 0.0 < low_hz
        && low_hz < high_hz
        && high_hz < rate_hz / 2.0
        && matches!(order, 2 | 4);
    if !valid {
        return Err(SignalError::InvalidBand {
            low_hz,
            high_hz,
            order,
            rate_hz,
        });
    }

    let proto_order = order / 2;
    let two_fs = 2.0 * rate_hz;
    let warped_low = two_fs * (PI * low_hz / rate_hz).tan();
    let warped_high = two_fs * (PI * high_hz / rate_hz).tan();
    let centre = (warped_low * warped_high).sqrt();
    let bandwidth = warped_high - warped_low;

    let mut poles = Vec::with_capacity(order);
    for k in 0..proto_order {
        let angle = PI * (2 * k + proto_order + 1) as f64 / (2 * proto_order) as f64;
        let proto = Complex64::from_polar(1.0, angle);
        // s -> (s^2 + w0^2) / (B s) maps each prototype pole to two poles.
        let pb = proto * bandwidth;
        let disc = (pb * pb - 4.0 * centre * centre).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            poles.push((two_fs + s) / (two_fs - s));
        }
    }

    let centre_omega = 2.0 * (centre / two_fs).atan();
    let sections = pair_poles(poles)
        .into_iter()
        .map(|(p1, p2)| {
            let mut section = Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -(p1 + p2).re, (p1 * p2).re],
            };
            let gain = section.response(centre_omega).norm();
            for b in &mut section.b {
                *b /= gain;
            }
            section
        })
        .collect();

    Ok(FilterSpec {
        low_hz,
        high_hz,
        order,
        rate_hz,
        sections,
    })
}

/// Groups z-plane poles into conjugate pairs, then leftover real poles in
/// order of magnitude.
fn pair_poles(poles: Vec<Complex64>) -> Vec<(Complex64, Complex64)> {
    const IMAG_EPS: f64 = 1e-12;
    let mut pairs = Vec::new();
    let mut real = Vec::new();
    for p in poles {
        if p.im > IMAG_EPS {
            pairs.push((p, p.conj()));
        } else if p.im.abs() <= IMAG_EPS {
            real.push(p.re);
        }
    }
    real.sort_by(|a, b| a.total_cmp(b));
    for chunk in real.chunks(2) {
        let second = chunk.get(1).copied().unwrap_or(0.0);
        pairs.push((Complex64::new(chunk[0], 0.0), Complex64::new(second, 0.0)));
    }
    pairs
}

fn run_cascade(sections: &[Biquad], data: &mut [f64]) {
    let Some(&first) = data.first() else { return };
    let mut level = first;
    for section in sections {
        let [z1, z2] = section.step_state();
        section.run(data, [z1 * level, z2 * level]);
        level *= section.dc_gain();
    }
}

/// Forward-backward filtering with odd reflection padding of `3 × order`
/// samples and steady-state initial conditions, giving zero phase shift and
/// squared magnitude response.
pub fn filter_zero_phase(signal: &PpgSignal, spec: &FilterSpec) -> Result<PpgSignal, SignalError> {
    let x = signal.samples();
    let needed = 3 * spec.order;
    if x.len() < needed || x.len() < 2 {
        return Err(SignalError::SignalTooShort {
            len: x.len(),
            order: spec.order,
            needed: needed.max(2),
        });
    }
    let n = x.len();
    let pad = needed.min(n - 1);

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    run_cascade(&spec.sections, &mut ext);
    ext.reverse();
    run_cascade(&spec.sections, &mut ext);
    ext.reverse();

    Ok(signal.with_samples(ext[pad..pad + n].to_vec()))
}

/// Adaptive-threshold peak picker settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDetector {
    /// Length of the trailing window, ending at the candidate, for the
    /// moving statistics.
    pub window_s: f64,
    /// Multiplier on the moving standard deviation.
    pub k: f64,
    /// Minimum spacing between accepted peaks.
    pub refractory_s: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            k: 0.5,
            refractory_s: 0.3,
        }
    }
}

impl PeakDetector {
    pub fn detect(&self, signal: &PpgSignal) -> Vec<usize> {
        let x = signal.samples();
        let n = x.len();
        if n < 3 {
            return Vec::new();
        }
        let rate = signal.rate_hz();
        let span = (self.window_s * rate).round().max(1.0) as usize;

        let mut sum = vec![0.0; n + 1];
        let mut sum_sq = vec![0.0; n + 1];
        for (i, &v) in x.iter().enumerate() {
            sum[i + 1] = sum[i] + v;
            sum_sq[i + 1] = sum_sq[i] + v * v;
        }
        let threshold = |i: usize| {
            let lo = i.saturating_sub(span);
            let hi = i + 1;
            let count = (hi - lo) as f64;
            let mean = (sum[hi] - sum[lo]) / count;
            let var = ((sum_sq[hi] - sum_sq[lo]) / count - mean * mean).max(0.0);
            mean + self.k * var.sqrt()
        };

        let mut peaks: Vec<usize> = Vec::new();
        let mut i = 1;
        while i < n - 1 {
            if x[i] > x[i - 1] {
                // Walk to the end of a plateau; report its first sample.
                let mut j = i;
                while j + 1 < n && x[j + 1] == x[i] {
                    j += 1;
                }
                if j + 1 < n && x[j + 1] < x[i] && x[i] > threshold(i) {
                    let spaced = peaks
                        .last()
                        .is_none_or(|&last| (i - last) as f64 / rate >= self.refractory_s - 1e-12);
                    if spaced {
                        peaks.push(i);
                    }
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        peaks
    }
}

/// Peak indices using the default detector (2 s window, k = 0.5, 300 ms
/// refractory period).
pub fn detect_peaks(signal: &PpgSignal) -> Vec<usize> {
    PeakDetector::default().detect(signal)
}

pub fn peaks_to_ibi(peak_indices: &[usize], rate_hz: f64) -> IbiSequence {
    if peak_indices.len() < 2 {
        return IbiSequence::empty();
    }
    let (intervals_ms, beat_times_s) = peak_indices
        .windows(2)
        .map(|w| {
            (
                (w[1] - w[0]) as f64 / rate_hz * 1000.0,
                w[1] as f64 / rate_hz,
            )
        })
        .unzip();
    IbiSequence {
        intervals_ms,
        beat_times_s,
    }
}

/// Sub-sample peak positions from a parabola through each peak and its two
/// neighbours. Peaks at the edges or on flat tops keep their index.
pub fn refine_peaks(signal: &PpgSignal, peak_indices: &[usize]) -> Vec<f64> {
    let x = signal.samples();
    peak_indices
        .iter()
        .map(|&i| {
            if i == 0 || i + 1 >= x.len() {
                return i as f64;
            }
            let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
            let curvature = a - 2.0 * b + c;
            if curvature >= 0.0 {
                return i as f64;
            }
            i as f64 + (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
        })
        .collect()
}

/// Intervals between fractional peak positions.
pub fn peak_positions_to_ibi(positions: &[f64], rate_hz: f64) -> IbiSequence {
    if positions.len() < 2 {
        return IbiSequence::empty();
    }
    let (intervals_ms, beat_times_s) = positions
        .windows(2)
        .map(|w| ((w[1] - w[0]) / rate_hz * 1000.0, w[1] / rate_hz))
        .unzip();
    IbiSequence {
        intervals_ms,
        beat_times_s,
    }
}

pub const MIN_IBI_MS: f64 = 300.0;
pub const MAX_IBI_MS: f64 = 2000.0;
pub const MAX_IBI_STEP_MS: f64 = 250.0;

/// Drops intervals outside [300, 2000] ms, then clips successive jumps to
/// 250 ms in one left-to-right pass anchored on the already-clipped value.
pub fn clean_ibi(ibi: &IbiSequence) -> IbiSequence {
    let (mut intervals_ms, beat_times_s): (Vec<f64>, Vec<f64>) = ibi
        .intervals_ms
        .iter()
        .zip(&ibi.beat_times_s)
        .filter(|(&v, _)| (MIN_IBI_MS..=MAX_IBI_MS).contains(&v))
        .map(|(&v, &t)| (v, t))
        .unzip();
    for i in 1..intervals_ms.len() {
        let prev = intervals_ms[i - 1];
        let diff = intervals_ms[i] - prev;
        if diff.abs() > MAX_IBI_STEP_MS {
            intervals_ms[i] = prev + MAX_IBI_STEP_MS.copysign(diff);
        }
    }
    IbiSequence {
        intervals_ms,
        beat_times_s,
    }
}
