//! Fixed-step history buffers for the delayed quantities the observers need,
//! plus the distributed-delay convolution over a stored residual history.

use std::collections::VecDeque;

use nalgebra::{DVector, Vector6};
use thiserror::Error;

use crate::profile::Profile;
use crate::se2::StateVector;

#[derive(Debug, Error)]
pub enum DelayError {
    #[error("out-of-order push at t = {t}, expected {expected}")]
    OutOfOrderPush { t: f64, expected: f64 },
    #[error("query at t = {t} is beyond the newest sample {newest}")]
    BeyondNewest { t: f64, newest: f64 },
    #[error("query at t = {t} fell behind the retained window starting at {oldest}")]
    TooOld { t: f64, oldest: f64 },
    #[error("history spans [{oldest}, {newest}], cannot cover [{from}, {to}]")]
    InsufficientSpan { oldest: f64, newest: f64, from: f64, to: f64 },
    #[error("dimension mismatch: line holds {line}, got {got}")]
    Dimension { line: usize, got: usize },
}

const TIME_TOL: f64 = 1e-9;

/// Ring buffer of uniformly spaced vector samples with linear interpolation.
///
/// Samples are spaced exactly `dt` apart. Queries earlier than the first
/// push return the configured prefill value; queries in the retained window
/// interpolate linearly; queries past the newest sample are an error.
#[derive(Debug, Clone)]
pub struct DelayLine {
    dt: f64,
    capacity: usize,
    dim: usize,
    start_time: f64,
    /// Step index of entries[0] relative to `start_time`; times are always
    /// recomputed as `start_time + index * dt` so that long runs do not
    /// accumulate drift.
    first_index: u64,
    entries: VecDeque<DVector<f64>>,
    prefill: DVector<f64>,
}

impl DelayLine {
    /// `capacity` samples are retained; sized for a window of `delay`
    /// seconds via [`DelayLine::for_delay`].
    pub fn new(dim: usize, dt: f64, capacity: usize, prefill: DVector<f64>, start_time: f64) -> Self {
        assert!(dt > 0.0 && capacity >= 1);
        assert_eq!(prefill.len(), dim);
        Self {
            dt,
            capacity,
            dim,
            start_time,
            first_index: 0,
            entries: VecDeque::with_capacity(capacity),
            prefill,
        }
    }

    /// Capacity `ceil(delay/dt) + 2`: one full delay window plus the sample
    /// being produced.
    pub fn for_delay(dim: usize, dt: f64, delay: f64, prefill: DVector<f64>, start_time: f64) -> Self {
        let capacity = (delay / dt).ceil() as usize + 2;
        Self::new(dim, dt, capacity, prefill, start_time)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn oldest_time(&self) -> f64 {
        self.start_time + self.first_index as f64 * self.dt
    }

    pub fn newest_time(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            let idx = self.first_index + (self.entries.len() - 1) as u64;
            Some(self.start_time + idx as f64 * self.dt)
        }
    }

    pub fn newest(&self) -> Option<&DVector<f64>> {
        self.entries.back()
    }

    pub fn prefill(&self) -> &DVector<f64> {
        &self.prefill
    }

    /// Appends the sample for `t`, which must be one `dt` after the previous
    /// push (or the configured start time for the first push).
    pub fn push(&mut self, t: f64, value: DVector<f64>) -> Result<(), DelayError> {
        if value.len() != self.dim {
            return Err(DelayError::Dimension { line: self.dim, got: value.len() });
        }
        let next_index = if self.entries.is_empty() {
            self.first_index
        } else {
            self.first_index + self.entries.len() as u64
        };
        let expected = self.start_time + next_index as f64 * self.dt;
        if (t - expected).abs() > TIME_TOL {
            return Err(DelayError::OutOfOrderPush { t, expected });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
            self.first_index += 1;
        }
        self.entries.push_back(value);
        Ok(())
    }

    /// Linear interpolation at `t`. Exact-sample queries return the stored
    /// vector bit-for-bit.
    pub fn query(&self, t: f64) -> Result<DVector<f64>, DelayError> {
        if t < self.start_time - TIME_TOL {
            return Ok(self.prefill.clone());
        }
        let newest = match self.newest_time() {
            Some(n) => n,
            None => {
                // Nothing pushed yet; only the prefill region is answerable.
                return Err(DelayError::BeyondNewest { t, newest: f64::NEG_INFINITY });
            }
        };
        if t > newest + TIME_TOL {
            return Err(DelayError::BeyondNewest { t, newest });
        }
        if t < self.oldest_time() - TIME_TOL {
            return Err(DelayError::TooOld { t, oldest: self.oldest_time() });
        }
        let pos = (t - self.oldest_time()) / self.dt;
        let lo = pos.floor().max(0.0) as usize;
        let lo = lo.min(self.entries.len() - 1);
        let frac = pos - lo as f64;
        if frac.abs() <= TIME_TOL / self.dt || lo + 1 == self.entries.len() {
            Ok(self.entries[lo].clone())
        } else if (1.0 - frac).abs() <= TIME_TOL / self.dt {
            Ok(self.entries[lo + 1].clone())
        } else {
            Ok(&self.entries[lo] * (1.0 - frac) + &self.entries[lo + 1] * frac)
        }
    }

    /// Sample `back` steps behind the newest one, or the prefill when the
    /// buffer does not reach that far and nothing was evicted yet.
    pub fn from_newest(&self, back: usize) -> Option<&DVector<f64>> {
        let len = self.entries.len();
        if back < len {
            Some(&self.entries[len - 1 - back])
        } else {
            None
        }
    }

    fn get_at_index_time(&self, t: f64) -> Option<&DVector<f64>> {
        if t < self.start_time - TIME_TOL {
            return Some(&self.prefill);
        }
        let pos = (t - self.oldest_time()) / self.dt;
        let idx = pos.round();
        if (pos - idx).abs() > 1e-6 || idx < 0.0 {
            return None;
        }
        self.entries.get(idx as usize)
    }
}

/// Which input window the transition matrices in the predictor use.
///
/// `Literal` anchors the rate integral at absolute time zero, matching the
/// convolution kernel `exp(∫_0^{t-θ} A)`; `Sliding` rebuilds it from the
/// trailing window `[θ, t]`. The two coincide for constant rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiWindow {
    #[default]
    Literal,
    Sliding,
}

impl PhiWindow {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhiWindow::Literal => "literal",
            PhiWindow::Sliding => "sliding",
        }
    }
}

/// Trapezoid-accumulated running integral of the angular rate, sampled at
/// the simulation step over the whole run horizon.
#[derive(Debug, Clone)]
pub struct OmegaTable {
    dt: f64,
    cumulative: Vec<f64>,
}

impl OmegaTable {
    pub fn from_profile(profile: &Profile, horizon: f64, dt: f64) -> Self {
        assert!(dt > 0.0 && horizon >= 0.0);
        let steps = (horizon / dt).ceil() as usize + 1;
        let mut cumulative = Vec::with_capacity(steps + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        let mut prev = profile.value(0.0);
        for k in 1..=steps {
            let cur = profile.value(k as f64 * dt);
            acc += 0.5 * dt * (prev + cur);
            cumulative.push(acc);
            prev = cur;
        }
        Self { dt, cumulative }
    }

    /// `∫_0^t ω dτ`, linearly interpolated. Times before zero clamp to zero
    /// (only ever multiplied against prefill-zero histories).
    pub fn angle(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let pos = t / self.dt;
        let lo = pos.floor() as usize;
        if lo + 1 >= self.cumulative.len() {
            return *self.cumulative.last().unwrap();
        }
        let frac = pos - lo as f64;
        self.cumulative[lo] * (1.0 - frac) + self.cumulative[lo + 1] * frac
    }

    /// `∫_{t0}^{t1} ω dτ`.
    pub fn window(&self, t0: f64, t1: f64) -> f64 {
        self.angle(t1) - self.angle(t0)
    }
}

/// Rotates the three 2-blocks of a state-dimension vector by `angle`.
#[inline]
pub fn rotate_blocks(v: &Vector6<f64>, angle: f64) -> Vector6<f64> {
    if angle == 0.0 {
        return *v;
    }
    let (s, c) = angle.sin_cos();
    Vector6::new(
        c * v[0] - s * v[1],
        s * v[0] + c * v[1],
        c * v[2] - s * v[3],
        s * v[2] + c * v[3],
        c * v[4] - s * v[5],
        s * v[4] + c * v[5],
    )
}

#[inline]
fn rotate_blocks_cs(v: &[f64], c: f64, s: f64, out: &mut [f64; 6]) {
    out[0] += c * v[0] - s * v[1];
    out[1] += s * v[0] + c * v[1];
    out[2] += c * v[2] - s * v[3];
    out[3] += s * v[2] + c * v[3];
    out[4] += c * v[4] - s * v[5];
    out[5] += s * v[4] + c * v[5];
}

/// Trapezoidal quadrature of `Φ(t-θ, 0) f(θ)` over `θ ∈ [t-D, t]`.
///
/// The endpoint `θ = t` is served by the newest stored sample (explicit
/// treatment; the true value is not available until the step completes).
/// Weights carry the trapezoid `dt/2` ends.
pub fn convolve_history(
    line: &DelayLine,
    omega: &OmegaTable,
    window: PhiWindow,
    t: f64,
    delay: f64,
) -> Result<Vector6<f64>, DelayError> {
    if line.dim != 6 {
        return Err(DelayError::Dimension { line: line.dim, got: 6 });
    }
    let dt = line.dt;
    let m = (delay / dt).round() as usize;
    if m == 0 {
        return Ok(Vector6::zeros());
    }
    if delay - (m as f64) * dt > TIME_TOL * delay.max(1.0) {
        // The window must be an integer number of steps.
        return Err(DelayError::InsufficientSpan {
            oldest: line.oldest_time(),
            newest: line.newest_time().unwrap_or(f64::NAN),
            from: t - delay,
            to: t,
        });
    }
    let mut acc = [0.0f64; 6];
    for j in 0..=m {
        let theta = t - delay + j as f64 * dt;
        let sample: &DVector<f64> = if j == m {
            line.newest().unwrap_or(&line.prefill)
        } else {
            match line.get_at_index_time(theta) {
                Some(v) => v,
                None => {
                    return Err(DelayError::InsufficientSpan {
                        oldest: line.oldest_time(),
                        newest: line.newest_time().unwrap_or(f64::NAN),
                        from: t - delay,
                        to: t,
                    })
                }
            }
        };
        let age = delay - j as f64 * dt; // = t - theta
        let angle = match window {
            PhiWindow::Literal => -omega.angle(age),
            PhiWindow::Sliding => -omega.window(theta, t),
        };
        let w = if j == 0 || j == m { 0.5 * dt } else { dt };
        let (s, c) = angle.sin_cos();
        let mut contrib = [0.0f64; 6];
        rotate_blocks_cs(sample.as_slice(), c, s, &mut contrib);
        for i in 0..6 {
            acc[i] += w * contrib[i];
        }
    }
    Ok(StateVector::from_row_slice(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line_with(dim: usize, dt: f64, capacity: usize) -> DelayLine {
        DelayLine::new(dim, dt, capacity, DVector::zeros(dim), 0.0)
    }

    #[test]
    fn push_query_round_trip() {
        let mut line = line_with(2, 0.1, 8);
        for k in 0..5 {
            let t = k as f64 * 0.1;
            line.push(t, DVector::from_vec(vec![t, -t])).unwrap();
        }
        let v = line.query(0.3).unwrap();
        assert_eq!(v[0], 0.30000000000000004); // stored bit-exact, not recomputed
        assert_eq!(v, line.query(0.3).unwrap());
    }

    #[test]
    fn interpolates_between_samples() {
        let mut line = line_with(1, 1.0, 4);
        line.push(0.0, DVector::from_vec(vec![0.0])).unwrap();
        line.push(1.0, DVector::from_vec(vec![10.0])).unwrap();
        let v = line.query(0.25).unwrap();
        assert_abs_diff_eq!(v[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn prefill_serves_negative_times() {
        let mut line = DelayLine::new(1, 0.5, 4, DVector::from_vec(vec![7.0]), 0.0);
        line.push(0.0, DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(line.query(-3.0).unwrap()[0], 7.0);
        assert_eq!(line.query(0.0).unwrap()[0], 1.0);
    }

    #[test]
    fn rejects_out_of_order_and_future() {
        let mut line = line_with(1, 0.5, 4);
        line.push(0.0, DVector::zeros(1)).unwrap();
        assert!(line.push(0.7, DVector::zeros(1)).is_err());
        assert!(line.query(0.4).is_err());
    }

    #[test]
    fn eviction_keeps_window() {
        let mut line = line_with(1, 1.0, 3);
        for k in 0..6 {
            line.push(k as f64, DVector::from_vec(vec![k as f64])).unwrap();
        }
        assert_eq!(line.len(), 3);
        assert_eq!(line.query(5.0).unwrap()[0], 5.0);
        assert_eq!(line.query(3.0).unwrap()[0], 3.0);
        assert!(matches!(line.query(1.0), Err(DelayError::TooOld { .. })));
    }

    #[test]
    fn delayed_query_after_warmup() {
        let dt = 0.01;
        let delay = 0.25;
        let mut line = DelayLine::for_delay(1, dt, delay, DVector::zeros(1), 0.0);
        for k in 0..100 {
            let t = k as f64 * dt;
            line.push(t, DVector::from_vec(vec![(3.0 * t).sin()])).unwrap();
        }
        let t = 99.0 * dt;
        let got = line.query(t - delay).unwrap()[0];
        assert_abs_diff_eq!(got, (3.0 * (t - delay)).sin(), epsilon = 1e-9);
        assert!(line.len() <= (delay / dt).ceil() as usize + 2);
    }

    fn flat_omega(horizon: f64, dt: f64) -> OmegaTable {
        OmegaTable::from_profile(&Profile::constant(0.0), horizon, dt)
    }

    #[test]
    fn convolution_of_zero_history_is_zero() {
        let dt = 0.01;
        let mut line = DelayLine::for_delay(6, dt, 0.2, DVector::zeros(6), 0.0);
        for k in 0..40 {
            line.push(k as f64 * dt, DVector::zeros(6)).unwrap();
        }
        let omega = flat_omega(1.0, dt);
        let out = convolve_history(&line, &omega, PhiWindow::Literal, 39.0 * dt, 0.2).unwrap();
        assert_eq!(out, Vector6::zeros());
    }

    #[test]
    fn convolution_constant_integrand() {
        // ω = 0 so Φ = I; f ≡ c gives D·c.
        let dt = 0.01;
        let delay = 0.3;
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let mut line = DelayLine::for_delay(6, dt, delay, c.clone(), 0.0);
        for k in 0..=60 {
            line.push(k as f64 * dt, c.clone()).unwrap();
        }
        let omega = flat_omega(1.0, dt);
        let out = convolve_history(&line, &omega, PhiWindow::Literal, 60.0 * dt, delay).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(out[i], delay * c[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_linear_integrand_is_exact() {
        // f(θ) = θ e1 over [t-D, t] integrates to (tD - D²/2) e1; the
        // trapezoid rule is exact for linear integrands.
        let dt = 0.005;
        let delay = 0.4;
        let mut line = DelayLine::for_delay(6, dt, delay, DVector::zeros(6), 0.0);
        let steps = 200;
        for k in 0..=steps {
            let theta = k as f64 * dt;
            let mut v = DVector::zeros(6);
            v[0] = theta;
            line.push(theta, v).unwrap();
        }
        let t = steps as f64 * dt;
        let omega = flat_omega(2.0, dt);
        let out = convolve_history(&line, &omega, PhiWindow::Literal, t, delay).unwrap();
        let expected = t * delay - delay * delay / 2.0;
        assert_abs_diff_eq!(out[0], expected, epsilon = 1e-10);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn convolution_quadrature_is_second_order() {
        // Smooth integrand with rotation: halving dt should cut the error
        // by about 4x against a fine-grid reference.
        let delay = 0.5;
        let t_end = 1.0;
        let profile = Profile::sinusoid(2.0, 1.3);
        let f = |theta: f64| {
            let mut v = DVector::zeros(6);
            v[0] = (2.0 * theta).sin();
            v[3] = theta * theta;
            v
        };
        let run = |dt: f64| -> Vector6<f64> {
            let mut line = DelayLine::for_delay(6, dt, delay, DVector::zeros(6), 0.0);
            let steps = (t_end / dt).round() as usize;
            for k in 0..=steps {
                line.push(k as f64 * dt, f(k as f64 * dt)).unwrap();
            }
            let omega = OmegaTable::from_profile(&profile, 2.0, 1e-5);
            convolve_history(&line, &omega, PhiWindow::Literal, t_end, delay).unwrap()
        };
        let reference = run(1e-5);
        let e1 = (run(4e-3) - reference).norm();
        let e2 = (run(2e-3) - reference).norm();
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn zero_delay_convolution_is_empty() {
        let dt = 0.01;
        let mut line = DelayLine::for_delay(6, dt, 0.0, DVector::zeros(6), 0.0);
        line.push(0.0, DVector::from_vec(vec![1.0; 6])).unwrap();
        let omega = flat_omega(1.0, dt);
        let out = convolve_history(&line, &omega, PhiWindow::Literal, 0.0, 0.0).unwrap();
        assert_eq!(out, Vector6::zeros());
    }

    #[test]
    fn omega_table_matches_analytic_integral() {
        let profile = Profile::parse("sinusoid 2 0.125663706143592").unwrap();
        let table = OmegaTable::from_profile(&profile, 120.0, 1e-3);
        for &t in &[0.0, 0.5, 1.0, 17.3, 99.99] {
            assert_abs_diff_eq!(table.angle(t), profile.integral(t), epsilon = 1e-6);
        }
        assert_abs_diff_eq!(
            table.window(3.0, 10.0),
            profile.integral(10.0) - profile.integral(3.0),
            epsilon = 1e-6
        );
    }
}
