//! Scenario orchestration: truth integration, delayed and optionally noisy
//! measurement generation, lockstep observer stepping, verdicts, parameter
//! sweeps and the sensor-noise study.

use nalgebra::{DMatrix, DVector, Matrix6};
use rayon::prelude::*;
use thiserror::Error;

use crate::delay::{DelayError, DelayLine, OmegaTable, PhiWindow};
use crate::landmarks::{
    build_output_matrix, measure, observability_check, LandmarkError, LandmarkSet,
    MeasurementNoise, ObservabilityReport,
};
use crate::observer::{
    HistoryPrefill, ObserverContext, ObserverError, PredictiveObserver, StandardObserver,
};
use crate::profile::Profile;
use crate::riccati::GainState;
use crate::se2::{integrate_pose, KinematicsError, Pose, Rotation2, StateVector, VelocityInput};
use crate::transport::{error_norm, exact_truth_nodes, PdeError, PdeObserver, TransportError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("noise study requires a noise block in the scenario")]
    NoiseNotConfigured,
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    History(#[from] DelayError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

/// Additive Gaussian sensor noise settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma_landmark: f64,
    pub sigma_velocity: f64,
    pub seed: u64,
}

/// A complete simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub landmarks: LandmarkSet,
    pub omega_profile: Profile,
    pub vx_profile: Profile,
    pub vy_profile: Profile,
    pub x0: Pose,
    pub x_hat0: StateVector,
    pub delay: f64,
    pub dt: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub sigma_scale: f64,
    pub p0_scale: f64,
    pub noise: Option<NoiseConfig>,
    pub phi_window: PhiWindow,
    pub conv_tol: f64,
    pub div_factor: f64,
    pub pde_cells: usize,
}

impl Scenario {
    /// The wheeled-robot benchmark: three landmarks, a slow sinusoidal turn
    /// rate, unit forward speed, one second of sensor delay.
    pub fn wheeled_robot() -> Self {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        Scenario {
            landmarks: LandmarkSet::from_pairs(&[(1.0, 3.0), (3.0, 1.0), (4.0, 4.0)]).unwrap(),
            omega_profile: Profile::sinusoid(2.0, 0.04 * std::f64::consts::PI),
            vx_profile: Profile::constant(1.0),
            vy_profile: Profile::constant(0.0),
            x0: Pose::new(
                Rotation2::from_angle(std::f64::consts::FRAC_PI_4),
                nalgebra::Vector2::new(-5.0 * s2, s2),
            ),
            x_hat0: StateVector::zeros(),
            delay: 1.0,
            dt: 1e-3,
            t_end: 100.0,
            epsilon: 0.6,
            sigma_scale: 0.5,
            p0_scale: 0.5,
            noise: None,
            phi_window: PhiWindow::Literal,
            conv_tol: 1e-2,
            div_factor: 10.0,
            pde_cells: 200,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Validation(msg));
        if self.landmarks.len() < 2 {
            return fail("need at least two landmarks".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt_s must be positive, got {}", self.dt));
        }
        if self.delay < 0.0 || !self.delay.is_finite() {
            return fail(format!("delay_s must be non-negative, got {}", self.delay));
        }
        if self.delay > 0.0 && self.dt > self.delay / 100.0 + 1e-12 {
            return fail(format!(
                "dt_s = {} too coarse for delay_s = {} (need dt <= delay/100)",
                self.dt, self.delay
            ));
        }
        if self.t_end <= self.delay {
            return fail(format!(
                "t_end_s = {} must exceed delay_s = {}",
                self.t_end, self.delay
            ));
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.sigma_scale > 0.0) || !(self.p0_scale > 0.0) {
            return fail("sigma_scale and p0_scale must be positive".into());
        }
        if !(self.conv_tol > 0.0) || !(self.div_factor > 1.0) {
            return fail("conv_tol must be positive and div_factor > 1".into());
        }
        if self.pde_cells < 2 {
            return fail("pde_cells must be at least 2".into());
        }
        if !self.x_hat0.iter().all(|v| v.is_finite()) {
            return fail("x_hat0 must be finite".into());
        }
        if let Some(n) = &self.noise {
            if n.sigma_landmark < 0.0 || n.sigma_velocity < 0.0 {
                return fail("noise sigmas must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Which observer(s) a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverChoice {
    Predictive,
    Standard,
    Both,
}

/// Per-run switches that are not part of the scenario itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep the full time series (required for CSV/SVG output).
    pub record_series: bool,
    /// Co-simulate the transport-grid observer form and record the full
    /// error norm plus the boundary gap against the delay-line realization.
    pub pde_validate: bool,
    /// Start the observer on the truth state with histories agreeing with
    /// the truth; used by equilibrium tests.
    pub matched_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Converged,
    Diverged,
    BoundedNoise,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::BoundedNoise => "bounded_noise",
        }
    }
}

/// Recorded trajectories of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub t: Vec<f64>,
    pub x_tilde_norm: Vec<f64>,
    pub y_tilde_norm: Vec<f64>,
    /// Full error norm over state plus delay window; present when the
    /// transport co-simulation ran.
    pub eq_norm: Option<Vec<f64>>,
    pub lambda_min_p: Vec<f64>,
    pub lambda_max_p: Vec<f64>,
    pub x: Vec<[f64; 6]>,
    pub x_hat: Vec<[f64; 6]>,
}

/// Transport co-simulation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeSummary {
    /// `max_t |U_hat(0,t) - Y_hat(t)|` (max over components and time).
    pub max_boundary_gap: f64,
    /// Scale of the compared signals, `max_t |Y_hat(t)|_inf`.
    pub output_scale: f64,
    pub eq_norm_initial: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub verdict: Verdict,
    pub blowup_time: Option<f64>,
    pub x_tilde_initial: f64,
    pub x_tilde_final: f64,
    pub x_tilde_max: f64,
    /// Max over the last 10% of the run.
    pub tail_max: f64,
    /// Max over the last 20% of the run (steady-state error band).
    pub band: f64,
    pub series: Option<RunSeries>,
    pub pde: Option<PdeSummary>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub observability: ObservabilityReport,
    pub predictive: Option<RunOutput>,
    pub standard: Option<RunOutput>,
}

enum Engine {
    Predictive(PredictiveObserver, Option<PdeObserver>),
    Standard(StandardObserver),
}

impl Engine {
    fn x_hat(&self) -> StateVector {
        match self {
            Engine::Predictive(o, _) => o.x_hat,
            Engine::Standard(o) => o.x_hat,
        }
    }

    fn gain(&self) -> &GainState {
        match self {
            Engine::Predictive(o, _) => &o.gain,
            Engine::Standard(o) => &o.gain,
        }
    }
}

/// Runs one observer through the scenario.
fn run_single(scenario: &Scenario, predictive: bool, opts: &RunOptions) -> Result<RunOutput, SimError> {
    let dt = scenario.dt;
    let delay = scenario.delay;
    let n_steps = (scenario.t_end / dt).round() as usize;
    let t_end = n_steps as f64 * dt;
    let dim_y = 2 * scenario.landmarks.len();

    let c = build_output_matrix(&scenario.landmarks);
    let omega = OmegaTable::from_profile(&scenario.omega_profile, scenario.t_end + delay + 1.0, dt);
    let ctx = ObserverContext {
        c: c.clone(),
        omega,
        phi_window: scenario.phi_window,
        delay,
        dt,
    };
    let sigma = DMatrix::identity(dim_y, dim_y) * scenario.sigma_scale;
    let gain0 = GainState::new(
        Matrix6::identity() * scenario.p0_scale,
        scenario.epsilon,
        sigma,
        &c,
    );

    let mut truth = scenario.x0;
    let y_init = measure(&truth, &scenario.landmarks);
    let mut meas_line = DelayLine::for_delay(dim_y, dt, delay, y_init.clone(), 0.0);
    meas_line.push(0.0, y_init)?;

    let (x_hat0, prefill) = if opts.matched_start {
        (
            truth.embed(),
            HistoryPrefill {
                x_hat: truth.embed(),
                y_hat: measure(&truth, &scenario.landmarks),
                residual: StateVector::zeros(),
            },
        )
    } else {
        (scenario.x_hat0, HistoryPrefill::zero(dim_y))
    };

    let mut engine = if predictive {
        let obs = PredictiveObserver::new(x_hat0, gain0.clone(), &ctx, prefill);
        let pde = if opts.pde_validate {
            Some(PdeObserver::new(x_hat0, gain0, &ctx, scenario.pde_cells)?)
        } else {
            None
        };
        Engine::Predictive(obs, pde)
    } else {
        Engine::Standard(StandardObserver::new(x_hat0, gain0, &ctx, prefill))
    };

    let mut noise = scenario
        .noise
        .map(|n| MeasurementNoise::new(n.seed, n.sigma_landmark, n.sigma_velocity));

    let x_tilde_initial = (scenario.x0.embed() - x_hat0).norm();
    let hard_cap = 1e9 * x_tilde_initial.max(1.0);
    let div_threshold = scenario.div_factor * x_tilde_initial.max(scenario.conv_tol);
    let tail_start = 0.9 * t_end - 0.5 * dt;
    let band_start = 0.8 * t_end - 0.5 * dt;

    let mut series = opts.record_series.then(|| RunSeries {
        t: Vec::with_capacity(n_steps + 1),
        x_tilde_norm: Vec::with_capacity(n_steps + 1),
        y_tilde_norm: Vec::with_capacity(n_steps + 1),
        eq_norm: opts.pde_validate.then(Vec::new),
        lambda_min_p: Vec::with_capacity(n_steps + 1),
        lambda_max_p: Vec::with_capacity(n_steps + 1),
        x: Vec::with_capacity(n_steps + 1),
        x_hat: Vec::with_capacity(n_steps + 1),
    });

    let mut x_tilde_max = 0.0f64;
    let mut tail_max = 0.0f64;
    let mut band = 0.0f64;
    let mut x_tilde_final = x_tilde_initial;
    let mut blowup_time = None;
    let mut first_crossing = None;
    let mut max_gap = 0.0f64;
    let mut output_scale = 0.0f64;
    let mut eq_norm_initial = 0.0f64;

    let om = &scenario.omega_profile;
    let vx = &scenario.vx_profile;
    let vy = &scenario.vy_profile;
    let u_clean = |tau: f64| VelocityInput::new(om.value(tau), vx.value(tau), vy.value(tau));

    for k in 0..=n_steps {
        let t = k as f64 * dt;

        let mut y = meas_line.query(t - delay)?;
        let (dvx, dvy) = if let Some(n) = noise.as_mut() {
            let mut v_sample = u_clean(t);
            let before = v_sample.v;
            n.apply(&mut y, &mut v_sample);
            (v_sample.v.x - before.x, v_sample.v.y - before.y)
        } else {
            (0.0, 0.0)
        };
        let u_obs = |tau: f64| {
            let mut u = u_clean(tau);
            u.v.x += dvx;
            u.v.y += dvy;
            u
        };

        // Metrics for the state at time t, before stepping.
        let x = truth.embed();
        let x_hat = engine.x_hat();
        let x_tilde = x - x_hat;
        let xnorm = x_tilde.norm();
        x_tilde_final = xnorm;
        x_tilde_max = x_tilde_max.max(xnorm);
        if t >= tail_start {
            tail_max = tail_max.max(xnorm);
        }
        if t >= band_start {
            band = band.max(xnorm);
        }
        if xnorm > div_threshold && first_crossing.is_none() {
            first_crossing = Some(t);
        }

        let mut eq_norm_now = None;
        if let Engine::Predictive(_, Some(pde)) = &engine {
            let truth_nodes = exact_truth_nodes(&meas_line, t, delay, scenario.pde_cells)?;
            let x_tilde_pde = x - pde.x_hat;
            let en = error_norm(&truth_nodes, pde.grid.nodes(), &x_tilde_pde, pde.grid.delta_x());
            if k == 0 {
                eq_norm_initial = en;
            }
            eq_norm_now = Some(en);
        }

        if !xnorm.is_finite() || xnorm > hard_cap {
            blowup_time = Some(t);
            if let Some(s) = series.as_mut() {
                s.t.push(t);
                s.x_tilde_norm.push(xnorm);
                s.y_tilde_norm.push(f64::NAN);
                if let (Some(eq), Some(v)) = (s.eq_norm.as_mut(), eq_norm_now) {
                    eq.push(v);
                }
                let (lmin, lmax) = engine.gain().eigenvalue_range();
                s.lambda_min_p.push(lmin);
                s.lambda_max_p.push(lmax);
                s.x.push(x.as_slice().try_into().unwrap());
                s.x_hat.push(x_hat.as_slice().try_into().unwrap());
            }
            break;
        }

        // Advance (or, on the final row, just evaluate the output).
        let stepped = k < n_steps;
        let step_result: Result<(DVector<f64>, Option<DVector<f64>>), SimError> = (|| {
            match &mut engine {
                Engine::Predictive(obs, pde) => {
                    let y_hat = if stepped {
                        obs.step(&ctx, &y, &u_obs, t)?
                    } else {
                        obs.output(&ctx, t)?
                    };
                    let y_hat_pde = if let Some(p) = pde {
                        let v = if stepped {
                            p.step(&ctx, &y, &u_obs, t).map_err(|e| match e {
                                PdeError::Observer(o) => SimError::Observer(o),
                                PdeError::Transport(tr) => SimError::Transport(tr),
                            })?
                        } else {
                            p.output().clone()
                        };
                        Some(v)
                    } else {
                        None
                    };
                    Ok((y_hat, y_hat_pde))
                }
                Engine::Standard(obs) => {
                    let y_hat = if stepped {
                        obs.step(&ctx, &y, &u_obs, t)?
                    } else {
                        obs.output(&ctx, t)?
                    };
                    Ok((y_hat, None))
                }
            }
        })();

        let (y_hat, y_hat_pde) = match step_result {
            Ok(v) => v,
            Err(SimError::Observer(ObserverError::NonFinite { t })) => {
                blowup_time = Some(t);
                break;
            }
            Err(SimError::Observer(ObserverError::Gain(crate::riccati::GainError::NonFinite {
                t,
            }))) => {
                blowup_time = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };

        if let Some(yp) = &y_hat_pde {
            let gap = (yp - &y_hat).amax();
            max_gap = max_gap.max(gap);
            output_scale = output_scale.max(y_hat.amax());
        }

        if let Some(s) = series.as_mut() {
            s.t.push(t);
            s.x_tilde_norm.push(xnorm);
            s.y_tilde_norm.push((&y - &y_hat).norm());
            if let (Some(eq), Some(v)) = (s.eq_norm.as_mut(), eq_norm_now) {
                eq.push(v);
            }
            let (lmin, lmax) = engine.gain().eigenvalue_range();
            s.lambda_min_p.push(lmin);
            s.lambda_max_p.push(lmax);
            s.x.push(x.as_slice().try_into().unwrap());
            s.x_hat.push(x_hat.as_slice().try_into().unwrap());
        }

        if stepped {
            truth = integrate_pose(&truth, u_clean, t, t + dt, dt)?;
            meas_line.push(t + dt, measure(&truth, &scenario.landmarks))?;
        }
    }

    let verdict = if blowup_time.is_some() {
        Verdict::Diverged
    } else if tail_max < scenario.conv_tol {
        Verdict::Converged
    } else if first_crossing.is_some() {
        Verdict::Diverged
    } else {
        Verdict::BoundedNoise
    };
    let blowup_time = match verdict {
        Verdict::Diverged => blowup_time.or(first_crossing),
        _ => None,
    };

    Ok(RunOutput {
        verdict,
        blowup_time,
        x_tilde_initial,
        x_tilde_final,
        x_tilde_max,
        tail_max,
        band,
        series,
        pde: (predictive && opts.pde_validate).then_some(PdeSummary {
            max_boundary_gap: max_gap,
            output_scale,
            eq_norm_initial,
        }),
    })
}

/// Runs the scenario for the chosen observer(s). An observability failure is
/// reported in the outcome but does not stop the run.
pub fn run(scenario: &Scenario, which: ObserverChoice, opts: &RunOptions) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let observability = observability_check(&scenario.landmarks);
    if !observability.ok {
        log::warn!(
            "landmark set is not observable (rank {} < 6); running anyway",
            observability.rank
        );
    }
    let predictive = match which {
        ObserverChoice::Predictive | ObserverChoice::Both => {
            Some(run_single(scenario, true, opts)?)
        }
        ObserverChoice::Standard => None,
    };
    let standard = match which {
        ObserverChoice::Standard | ObserverChoice::Both => {
            Some(run_single(scenario, false, opts)?)
        }
        ObserverChoice::Predictive => None,
    };
    Ok(SimOutcome { observability, predictive, standard })
}

/// One sweep grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub delay: f64,
    pub epsilon: f64,
    pub verdict: Verdict,
    pub x_tilde_max: f64,
    pub x_tilde_final: f64,
    pub tail_max: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    /// Per delay, the smallest swept gain with a converged verdict.
    pub thresholds: Vec<(f64, Option<f64>)>,
}

fn maybe_capped_pool() -> Option<rayon::ThreadPool> {
    let cap: usize = std::env::var("OBSLAB_THREADS").ok()?.parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cap.max(1))
        .build()
        .ok()
}

/// Runs the observer over the `(delay, gain)` grid and extracts empirical
/// gain thresholds. Cells run in parallel; `OBSLAB_THREADS` caps the pool.
pub fn sweep(
    base: &Scenario,
    d_values: &[f64],
    eps_values: &[f64],
    which: ObserverChoice,
) -> Result<SweepTable, SimError> {
    if d_values.is_empty() || eps_values.is_empty() {
        return Err(SimError::Validation("sweep lists must be non-empty".into()));
    }
    let predictive = !matches!(which, ObserverChoice::Standard);
    let opts = RunOptions::default();
    let grid: Vec<(f64, f64)> = d_values
        .iter()
        .flat_map(|&d| eps_values.iter().map(move |&e| (d, e)))
        .collect();

    let compute = || -> Result<Vec<SweepCell>, SimError> {
        grid.par_iter()
            .map(|&(delay, epsilon)| {
                let mut s = base.clone();
                s.delay = delay;
                s.epsilon = epsilon;
                s.validate()?;
                let out = run_single(&s, predictive, &opts)?;
                Ok(SweepCell {
                    delay,
                    epsilon,
                    verdict: out.verdict,
                    x_tilde_max: out.x_tilde_max,
                    x_tilde_final: out.x_tilde_final,
                    tail_max: out.tail_max,
                })
            })
            .collect()
    };
    let cells = match maybe_capped_pool() {
        Some(pool) => pool.install(compute)?,
        None => compute()?,
    };

    let mut sorted_eps: Vec<f64> = eps_values.to_vec();
    sorted_eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds = d_values
        .iter()
        .map(|&d| {
            let thr = sorted_eps
                .iter()
                .find(|&&e| {
                    cells
                        .iter()
                        .any(|c| c.delay == d && c.epsilon == e && c.verdict == Verdict::Converged)
                })
                .copied();
            (d, thr)
        })
        .collect();

    Ok(SweepTable { cells, thresholds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStudyEntry {
    pub delay: f64,
    /// One verdict per seed.
    pub verdicts: Vec<Verdict>,
    /// Steady-state error band (max `|x_tilde|` over the last 20%),
    /// averaged over the seed ensemble.
    pub band: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseStudyResult {
    pub entries: Vec<NoiseStudyEntry>,
    pub band_monotone_in_delay: bool,
}

/// Noise runs across delays over a small seed ensemble (seeds counted up
/// from the scenario seed); reports the mean steady-state band per delay
/// and whether it grows with the delay.
pub fn noise_study(
    base: &Scenario,
    d_values: &[f64],
    n_seeds: usize,
) -> Result<NoiseStudyResult, SimError> {
    let noise = base.noise.ok_or(SimError::NoiseNotConfigured)?;
    let n_seeds = n_seeds.max(1);
    let opts = RunOptions::default();
    let mut entries = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let mut verdicts = Vec::with_capacity(n_seeds);
        let mut band_sum = 0.0;
        for k in 0..n_seeds {
            let mut s = base.clone();
            s.delay = d;
            s.noise = Some(NoiseConfig { seed: noise.seed + k as u64, ..noise });
            s.validate()?;
            let out = run_single(&s, true, &opts)?;
            verdicts.push(out.verdict);
            band_sum += out.band;
        }
        entries.push(NoiseStudyEntry { delay: d, verdicts, band: band_sum / n_seeds as f64 });
    }
    let mut ordered: Vec<&NoiseStudyEntry> = entries.iter().collect();
    ordered.sort_by(|a, b| a.delay.partial_cmp(&b.delay).unwrap());
    let band_monotone_in_delay = ordered.windows(2).all(|w| w[0].band <= w[1].band);
    Ok(NoiseStudyResult { entries, band_monotone_in_delay })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_scenario() -> Scenario {
        let mut s = Scenario::wheeled_robot();
        s.t_end = 10.0;
        s
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let s = short_scenario();
        let opts = RunOptions { matched_start: true, ..Default::default() };
        let out = run(&s, ObserverChoice::Both, &opts).unwrap();
        for o in [out.predictive.unwrap(), out.standard.unwrap()] {
            assert!(o.x_tilde_max < 1e-8, "drift {}", o.x_tilde_max);
            assert_eq!(o.verdict, Verdict::Converged);
        }
    }

    #[test]
    fn zero_delay_trajectories_agree() {
        let mut s = short_scenario();
        s.delay = 0.0;
        let opts = RunOptions { record_series: true, ..Default::default() };
        let out = run(&s, ObserverChoice::Both, &opts).unwrap();
        let p = out.predictive.unwrap();
        let st = out.standard.unwrap();
        let ps = p.series.unwrap();
        let ss = st.series.unwrap();
        let mut worst = 0.0f64;
        for (a, b) in ps.x_hat.iter().zip(ss.x_hat.iter()) {
            for i in 0..6 {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        assert!(worst < 1e-9, "max deviation {worst}");
    }

    #[test]
    fn determinism_bitwise() {
        let mut s = short_scenario();
        s.noise = Some(NoiseConfig { sigma_landmark: 0.04, sigma_velocity: 0.04, seed: 7 });
        let opts = RunOptions { record_series: true, ..Default::default() };
        let a = run(&s, ObserverChoice::Predictive, &opts).unwrap();
        let b = run(&s, ObserverChoice::Predictive, &opts).unwrap();
        let sa = a.predictive.unwrap().series.unwrap();
        let sb = b.predictive.unwrap().series.unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn observability_warning_does_not_abort() {
        let mut s = short_scenario();
        s.landmarks = LandmarkSet::from_pairs(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        let out = run(&s, ObserverChoice::Predictive, &RunOptions::default()).unwrap();
        assert!(!out.observability.ok);
        assert!(out.predictive.is_some());
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let mut s = short_scenario();
        s.dt = 0.5; // too coarse for delay = 1
        assert!(s.validate().is_err());
        let mut s = short_scenario();
        s.t_end = 0.5;
        assert!(s.validate().is_err());
        let mut s = short_scenario();
        s.epsilon = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn noise_study_requires_noise() {
        let s = short_scenario();
        assert!(matches!(
            noise_study(&s, &[0.5, 1.0], 1),
            Err(SimError::NoiseNotConfigured)
        ));
    }

    #[test]
    fn noise_study_without_noise_matches_run() {
        // Zero sigmas: the noise path must be the identity.
        let mut s = short_scenario();
        s.noise = Some(NoiseConfig { sigma_landmark: 0.0, sigma_velocity: 0.0, seed: 1 });
        let with = noise_study(&s, &[1.0], 1).unwrap();
        let mut clean = s.clone();
        clean.noise = None;
        let base = run(&clean, ObserverChoice::Predictive, &RunOptions::default()).unwrap();
        let p = base.predictive.unwrap();
        assert_eq!(with.entries[0].band, p.band);
        assert_eq!(with.entries[0].verdicts[0], p.verdict);
    }
}
