//! Offline clock alignment of sensor streams and linear resampling.
//!
//! The offset between two streams is found by correlating their angular-speed
//! magnitudes on a common uniform grid (Pearson form, so the streams may differ
//! in scale and bias), then refining the integer-lag peak with a parabola.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{geodesic_angle, RigidTransform, Rotation3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("series needs at least {needed} samples, has {got}")]
    EmptySeries { needed: usize, got: usize },
    #[error("timestamps must be finite and strictly increasing (index {index})")]
    NonMonotonic { index: usize },
    #[error("timestamps and samples differ in length ({timestamps} vs {samples})")]
    LengthMismatch { timestamps: usize, samples: usize },
    #[error("signal has zero variance")]
    DegenerateSignal,
    #[error("streams overlap for {overlap_s:.3} s, need at least {required_s:.3} s")]
    InsufficientOverlap { overlap_s: f64, required_s: f64 },
    #[error("target time {t} outside source span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
}

/// Samples that can be linearly interpolated between two neighbors.
pub trait Interpolate: Clone {
    fn interpolate(&self, other: &Self, t: f64) -> Self;
}

impl Interpolate for f64 {
    fn interpolate(&self, other: &Self, t: f64) -> Self {
        self + (other - self) * t
    }
}

impl Interpolate for Vector3<f64> {
    fn interpolate(&self, other: &Self, t: f64) -> Self {
        self + (other - self) * t
    }
}

impl Interpolate for Rotation3 {
    fn interpolate(&self, other: &Self, t: f64) -> Self {
        self.slerp(other, t)
    }
}

impl Interpolate for RigidTransform {
    fn interpolate(&self, other: &Self, t: f64) -> Self {
        RigidTransform::new(
            self.rotation.slerp(&other.rotation, t),
            self.translation.interpolate(&other.translation, t),
        )
    }
}

impl<T: Interpolate> Interpolate for Vec<T> {
    fn interpolate(&self, other: &Self, t: f64) -> Self {
        self.iter().zip(other).map(|(a, b)| a.interpolate(b, t)).collect()
    }
}

/// Timestamped samples with strictly increasing timestamps (seconds).
#[derive(Clone, Debug, PartialEq)]
pub struct TimedSeries<T> {
    timestamps: Vec<f64>,
    samples: Vec<T>,
    nominal_rate: f64,
}

impl<T> TimedSeries<T> {
    pub fn new(timestamps: Vec<f64>, samples: Vec<T>, nominal_rate: f64) -> Result<Self, SyncError> {
        if timestamps.len() != samples.len() {
            return Err(SyncError::LengthMismatch { timestamps: timestamps.len(), samples: samples.len() });
        }
        for (i, t) in timestamps.iter().enumerate() {
            if !t.is_finite() || (i > 0 && *t <= timestamps[i - 1]) {
                return Err(SyncError::NonMonotonic { index: i });
            }
        }
        Ok(Self { timestamps, samples, nominal_rate })
    }

    /// Uniformly sampled series starting at `start`.
    pub fn uniform(start: f64, rate: f64, samples: Vec<T>) -> Self {
        let timestamps = (0..samples.len()).map(|i| start + i as f64 / rate).collect();
        Self { timestamps, samples, nominal_rate: rate }
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn nominal_rate(&self) -> f64 {
        self.nominal_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamps[self.timestamps.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.timestamps.iter().copied().zip(&self.samples)
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<T>, f64) {
        (self.timestamps, self.samples, self.nominal_rate)
    }

    /// Re-stamps every sample with `t - offset`, e.g. to move a stream onto
    /// another clock after [`estimate_time_offset`].
    pub fn shifted(&self, offset: f64) -> Self
    where
        T: Clone,
    {
        Self {
            timestamps: self.timestamps.iter().map(|t| t - offset).collect(),
            samples: self.samples.clone(),
            nominal_rate: self.nominal_rate,
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> TimedSeries<U> {
        TimedSeries {
            timestamps: self.timestamps.clone(),
            samples: self.samples.iter().map(f).collect(),
            nominal_rate: self.nominal_rate,
        }
    }
}

impl<T: Interpolate> TimedSeries<T> {
    /// Linearly interpolated sample at `t`, or `None` outside the span.
    pub fn sample_at(&self, t: f64) -> Option<T> {
        let n = self.timestamps.len();
        if n == 0 || t < self.timestamps[0] || t > self.timestamps[n - 1] {
            return None;
        }
        let hi = self.timestamps.partition_point(|&s| s < t);
        if self.timestamps[hi] == t {
            return Some(self.samples[hi].clone());
        }
        let lo = hi - 1;
        let (t0, t1) = (self.timestamps[lo], self.timestamps[hi]);
        Some(self.samples[lo].interpolate(&self.samples[hi], (t - t0) / (t1 - t0)))
    }
}

/// Angular speed (rad/s) between consecutive orientations, stamped at interval midpoints.
pub fn angular_speed(series: &TimedSeries<Rotation3>) -> Result<TimedSeries<f64>, SyncError> {
    if series.len() < 2 {
        return Err(SyncError::EmptySeries { needed: 2, got: series.len() });
    }
    let ts = series.timestamps();
    let rs = series.samples();
    let mut times = Vec::with_capacity(ts.len() - 1);
    let mut speed = Vec::with_capacity(ts.len() - 1);
    for i in 0..ts.len() - 1 {
        let dt = ts[i + 1] - ts[i];
        times.push(0.5 * (ts[i] + ts[i + 1]));
        speed.push(geodesic_angle(&rs[i], &rs[i + 1]) / dt);
    }
    TimedSeries::new(times, speed, series.nominal_rate())
}

/// Resamples onto `targets` without extrapolation.
pub fn resample_linear<T: Interpolate>(series: &TimedSeries<T>, targets: &[f64]) -> Result<TimedSeries<T>, SyncError> {
    if series.is_empty() {
        return Err(SyncError::EmptySeries { needed: 1, got: 0 });
    }
    let samples = targets
        .iter()
        .map(|&t| series.sample_at(t).ok_or(SyncError::OutOfRange { t, start: series.start(), end: series.end() }))
        .collect::<Result<Vec<_>, _>>()?;
    let rate = if targets.len() >= 2 {
        (targets.len() - 1) as f64 / (targets[targets.len() - 1] - targets[0])
    } else {
        series.nominal_rate()
    };
    TimedSeries::new(targets.to_vec(), samples, rate)
}

/// Sliding-window mode for streams whose clocks drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingWindow {
    pub length_s: f64,
    pub hop_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncOptions {
    /// Offsets are searched in `[-search_window_s, search_window_s]`.
    pub search_window_s: f64,
    /// Off by default: a single constant offset is estimated.
    pub sliding: Option<SlidingWindow>,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self { search_window_s: 2.0, sliding: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub offset_s: f64,
    pub peak_correlation: f64,
    pub grid_step_s: f64,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (x, y) in pairs {
        sx += x;
        sy += y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= f64::EPSILON * n || syy <= f64::EPSILON * n {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Finds `delta` maximizing the correlation of `b(t)` with `a(t + delta)`.
///
/// A sample stamped `t_a` on `a`'s clock corresponds to `t_a - delta` on `b`'s
/// clock, so `a.shifted(delta)` lives on `b`'s clock. Both series are resampled
/// onto a grid at twice the faster nominal rate.
pub fn estimate_time_offset(
    a: &TimedSeries<f64>,
    b: &TimedSeries<f64>,
    search_window_s: f64,
) -> Result<SyncReport, SyncError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(SyncError::EmptySeries { needed: 2, got: s.len() });
        }
        if variance(s.samples()) <= 1e-24 {
            return Err(SyncError::DegenerateSignal);
        }
    }
    let overlap = a.end().min(b.end()) - a.start().max(b.start());
    let required = 2.0 * search_window_s;
    if overlap < required {
        return Err(SyncError::InsufficientOverlap { overlap_s: overlap.max(0.0), required_s: required });
    }

    let step = 1.0 / (2.0 * a.nominal_rate().max(b.nominal_rate()));
    let origin = b.start();
    let b_count = ((b.end() - origin) / step + 1e-9).floor() as i64 + 1;
    let max_lag = (search_window_s / step).ceil() as i64;
    let b_grid: Vec<f64> =
        (0..b_count).map(|k| b.sample_at((origin + k as f64 * step).min(b.end())).expect("inside b span")).collect();
    let a_grid: Vec<Option<f64>> =
        (-max_lag..b_count + max_lag).map(|n| a.sample_at(origin + n as f64 * step)).collect();
    let min_pairs = ((search_window_s / step).ceil() as usize).max(8);

    let mut scores: Vec<Option<f64>> = Vec::with_capacity((2 * max_lag + 1) as usize);
    let mut pairs = Vec::with_capacity(b_count as usize);
    for lag in -max_lag..=max_lag {
        pairs.clear();
        for (k, &bv) in b_grid.iter().enumerate() {
            if let Some(av) = a_grid[(k as i64 + lag + max_lag) as usize] {
                pairs.push((bv, av));
            }
        }
        scores.push(if pairs.len() >= min_pairs { pearson(&pairs) } else { None });
    }

    let (best, peak) = scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|v| (i, v)))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or(SyncError::DegenerateSignal)?;

    let mut frac = 0.0;
    if best > 0 && best + 1 < scores.len() {
        if let (Some(l), Some(r)) = (scores[best - 1], scores[best + 1]) {
            let denom = l - 2.0 * peak + r;
            if denom < 0.0 {
                frac = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
            }
        }
    }
    let lag = (best as i64 - max_lag) as f64 + frac;
    Ok(SyncReport { offset_s: lag * step, peak_correlation: peak, grid_step_s: step })
}

/// Offset per window of `b`, for streams with clock drift. Each entry is
/// `(window center on b's clock, report)`; windows that fail are skipped.
pub fn estimate_time_offsets_sliding(
    a: &TimedSeries<f64>,
    b: &TimedSeries<f64>,
    search_window_s: f64,
    window: SlidingWindow,
) -> Vec<(f64, SyncReport)> {
    let mut out = Vec::new();
    let mut start = b.start();
    while start + window.length_s <= b.end() + 1e-9 {
        let idx: Vec<usize> = (0..b.len())
            .filter(|&i| b.timestamps()[i] >= start && b.timestamps()[i] <= start + window.length_s)
            .collect();
        if idx.len() >= 2 {
            let sub = TimedSeries::new(
                idx.iter().map(|&i| b.timestamps()[i]).collect(),
                idx.iter().map(|&i| b.samples()[i]).collect(),
                b.nominal_rate(),
            )
            .expect("subset of a valid series");
            if let Ok(report) = estimate_time_offset(a, &sub, search_window_s) {
                out.push((start + 0.5 * window.length_s, report));
            }
        }
        start += window.hop_s;
    }
    out
}

/// Runs the estimator in the mode selected by `opts`; in sliding mode the
/// median window offset is reported.
pub fn synchronize(a: &TimedSeries<f64>, b: &TimedSeries<f64>, opts: &SyncOptions) -> Result<SyncReport, SyncError> {
    match opts.sliding {
        None => estimate_time_offset(a, b, opts.search_window_s),
        Some(window) => {
            let mut reports: Vec<SyncReport> =
                estimate_time_offsets_sliding(a, b, opts.search_window_s, window).into_iter().map(|(_, r)| r).collect();
            if reports.is_empty() {
                return estimate_time_offset(a, b, opts.search_window_s);
            }
            reports.sort_by(|x, y| x.offset_s.total_cmp(&y.offset_s));
            Ok(reports.swap_remove(reports.len() / 2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn signal(t: f64) -> f64 {
        (1.3 * t).sin() + 0.5 * (3.1 * t + 0.4).sin() + 0.3 * (0.37 * t).cos()
    }

    fn sampled(start: f64, end: f64, rate: f64, shift: f64) -> TimedSeries<f64> {
        let n = ((end - start) * rate) as usize;
        TimedSeries::uniform(start, rate, (0..n).map(|i| signal(start + i as f64 / rate + shift)).collect())
    }

    #[test]
    fn rejects_non_monotone_timestamps() {
        assert_eq!(
            TimedSeries::new(vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0], 1.0).unwrap_err(),
            SyncError::NonMonotonic { index: 2 }
        );
    }

    #[test]
    fn constant_orientation_has_zero_speed() {
        let r = Rotation3::about_axis(&Vector3::new(1.0, 2.0, 3.0), 0.7);
        let s = TimedSeries::uniform(0.0, 30.0, vec![r; 10]);
        let w = angular_speed(&s).unwrap();
        assert_eq!(w.len(), 9);
        assert!(w.samples().iter().all(|&v| v.abs() < 1e-12));
        assert_relative_eq!(w.timestamps()[0], 1.0 / 60.0);
    }

    #[test]
    fn uniform_spin_has_constant_speed() {
        let omega = 2.5;
        let axis = Vector3::new(0.3, -0.2, 0.9);
        let s = TimedSeries::uniform(
            0.0,
            100.0,
            (0..50).map(|i| Rotation3::about_axis(&axis, omega * i as f64 / 100.0)).collect(),
        );
        for v in angular_speed(&s).unwrap().samples() {
            assert_relative_eq!(*v, omega, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_sample_is_rejected() {
        let s = TimedSeries::uniform(0.0, 30.0, vec![Rotation3::identity()]);
        assert!(matches!(angular_speed(&s), Err(SyncError::EmptySeries { .. })));
    }

    #[test]
    fn identical_series_have_zero_offset() {
        let a = sampled(0.0, 12.0, 30.0, 0.0);
        let r = estimate_time_offset(&a, &a, 2.0).unwrap();
        assert!(r.offset_s.abs() <= r.grid_step_s);
        assert_relative_eq!(r.peak_correlation, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn recovers_known_shift() {
        // b(t) = a(t + 0.1)
        let a = sampled(-1.0, 12.0, 30.0, 0.0);
        let b = sampled(0.0, 10.0, 30.0, 0.1);
        let r = estimate_time_offset(&a, &b, 2.0).unwrap();
        assert!((r.offset_s - 0.1).abs() < 1.0 / 60.0, "{r:?}");
        let back = estimate_time_offset(&b, &a, 2.0).unwrap();
        assert!((back.offset_s + r.offset_s).abs() <= r.grid_step_s);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let a = TimedSeries::uniform(0.0, 30.0, vec![0.0; 300]);
        let b = sampled(0.0, 10.0, 30.0, 0.0);
        assert_eq!(estimate_time_offset(&a, &b, 2.0).unwrap_err(), SyncError::DegenerateSignal);
    }

    #[test]
    fn short_overlap_is_rejected() {
        let a = sampled(0.0, 3.0, 30.0, 0.0);
        let b = sampled(0.0, 10.0, 30.0, 0.0);
        assert!(matches!(estimate_time_offset(&a, &b, 2.0), Err(SyncError::InsufficientOverlap { .. })));
    }

    #[test]
    fn sliding_mode_tracks_constant_offset() {
        let a = sampled(-3.0, 25.0, 30.0, 0.0);
        let b = sampled(0.0, 20.0, 30.0, -0.2);
        let opts = SyncOptions { search_window_s: 1.0, sliding: Some(SlidingWindow { length_s: 6.0, hop_s: 3.0 }) };
        let windows = estimate_time_offsets_sliding(&a, &b, 1.0, opts.sliding.unwrap());
        assert!(windows.len() >= 4);
        for (_, r) in &windows {
            assert!((r.offset_s + 0.2).abs() < 1.0 / 60.0);
        }
        assert!((synchronize(&a, &b, &opts).unwrap().offset_s + 0.2).abs() < 1.0 / 60.0);
    }

    #[test]
    fn resample_on_source_grid_is_identity() {
        let s = TimedSeries::new(vec![0.0, 0.4, 1.0], vec![1.0, -2.0, 5.0], 3.0).unwrap();
        let r = resample_linear(&s, s.timestamps()).unwrap();
        assert_eq!(r.samples(), s.samples());
    }

    #[test]
    fn resample_midpoints() {
        let p0 = Vector3::new(0.0, 1.0, 2.0);
        let p1 = Vector3::new(2.0, -1.0, 4.0);
        let s = TimedSeries::new(vec![0.0, 1.0], vec![p0, p1], 1.0).unwrap();
        assert_relative_eq!(resample_linear(&s, &[0.5]).unwrap().samples()[0], (p0 + p1) / 2.0);

        let rs = TimedSeries::new(
            vec![0.0, 1.0],
            vec![Rotation3::identity(), Rotation3::about_axis(&Vector3::z(), FRAC_PI_2)],
            1.0,
        )
        .unwrap();
        let mid = resample_linear(&rs, &[0.5]).unwrap().samples()[0];
        assert!(geodesic_angle(&mid, &Rotation3::about_axis(&Vector3::z(), FRAC_PI_2 / 2.0)) < 1e-9);
    }

    #[test]
    fn resample_refuses_extrapolation() {
        let s = TimedSeries::new(vec![0.0, 1.0], vec![0.0, 1.0], 1.0).unwrap();
        assert!(matches!(resample_linear(&s, &[1.5]), Err(SyncError::OutOfRange { .. })));
    }
}
