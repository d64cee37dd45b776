//! Delay-margin and admissible-gain analysis.
//!
//! The Lyapunov argument behind the predictive observer yields explicit
//! constants: a decay budget `delta1`/`delta2`, the decay rate `mu`, an
//! admissible gain interval bounded by the two real Lambert W branches, and
//! the largest delay `D_max` for which the budget stays positive. All of it
//! is driven by the landmark spectrum, the weight matrix, the excitation
//! window and the input-variation measure `gamma`.

use nalgebra::{DMatrix, Matrix6};
use thiserror::Error;

use crate::landmarks::OutputMatrix;
use crate::profile::Profile;
use crate::riccati::{excitation_constants, GainError};

#[derive(Debug, Error)]
pub enum MarginError {
    #[error("lambert_w: z = {z} outside the domain of branch {branch:?}")]
    LambertDomain { branch: Branch, z: f64 },
    #[error(transparent)]
    Gain(#[from] GainError),
}

/// Real branches of the Lambert W function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `W_0`, defined for `z >= -1/e`, values in `[-1, inf)`.
    Principal,
    /// `W_{-1}`, defined for `-1/e <= z < 0`, values in `(-inf, -1]`.
    MinusOne,
}

/// Solves `w e^w = z` on the requested branch by Halley iteration from a
/// branch-appropriate seed.
pub fn lambert_w(branch: Branch, z: f64) -> Result<f64, MarginError> {
    let e_inv = (-1.0f64).exp();
    let snap = 4.0 * f64::EPSILON;
    if (z + e_inv).abs() <= snap {
        // Branch point: both branches meet at -1.
        return Ok(-1.0);
    }
    match branch {
        Branch::Principal => {
            if z < -e_inv {
                return Err(MarginError::LambertDomain { branch, z });
            }
            if z == 0.0 {
                return Ok(0.0);
            }
        }
        Branch::MinusOne => {
            if z < -e_inv || z >= 0.0 {
                return Err(MarginError::LambertDomain { branch, z });
            }
        }
    }

    let mut w = match branch {
        Branch::Principal => {
            if z < -0.25 {
                // Series around the branch point.
                let p = (2.0 * (std::f64::consts::E * z + 1.0)).max(0.0).sqrt();
                -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
            } else if z < 1.0 {
                z * (1.0 - z)
            } else {
                let l = z.ln();
                l - l.ln().max(0.0)
            }
        }
        Branch::MinusOne => {
            if z < -0.25 {
                let p = (2.0 * (std::f64::consts::E * z + 1.0)).max(0.0).sqrt();
                -1.0 - p - p * p / 3.0 - 11.0 * p * p * p / 72.0
            } else {
                // Asymptotics toward 0-: w ≈ ln(-z) - ln(-ln(-z)).
                let l = (-z).ln();
                l - (-l).ln()
            }
        }
    };

    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - z;
        if f == 0.0 {
            break;
        }
        let fp = ew * (w + 1.0);
        if fp == 0.0 {
            w += f64::EPSILON;
            continue;
        }
        let fpp = ew * (w + 2.0);
        let delta = f / (fp - f * fpp / (2.0 * fp));
        let mut next = w - delta;
        // Keep the iterate on its branch.
        match branch {
            Branch::Principal => {
                if next < -1.0 {
                    next = -1.0 + (w + 1.0).abs() * 0.5;
                }
            }
            Branch::MinusOne => {
                if next > -1.0 {
                    next = -1.0 - (w + 1.0).abs() * 0.5;
                }
            }
        }
        let done = (next - w).abs() <= 2.0 * f64::EPSILON * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// Worst-case squared input variation over the delay window:
/// `sup_t ∫_0^D |w(t + x - D) - w(t)|² dx`, the operator-norm difference of
/// the drift matrices being exactly the rate difference for planar blocks.
pub fn compute_gamma(profile: &Profile, delay: f64, horizon: f64, dt: f64) -> f64 {
    if delay <= 0.0 {
        return 0.0;
    }
    let n_x = ((delay / dt).round() as usize).clamp(16, 2000);
    let dx = delay / n_x as f64;
    let n_t = ((horizon / dt).round() as usize).clamp(16, 4000);
    let t_step = horizon / n_t as f64;
    let mut sup = 0.0f64;
    for i in 0..=n_t {
        let t = i as f64 * t_step;
        let w_t = profile.value(t);
        let mut acc = 0.0;
        for j in 0..=n_x {
            let x = j as f64 * dx;
            let d = profile.value(t + x - delay) - w_t;
            let w = if j == 0 || j == n_x { 0.5 } else { 1.0 };
            acc += w * d * d * dx;
        }
        sup = sup.max(acc);
    }
    sup
}

/// Eigenvalue data of the landmark products entering the margin formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralData {
    pub lam_min_ctc: f64,
    pub lam_max_ctc: f64,
    pub lam_min_ctsc: f64,
    pub lam_max_ctsc: f64,
    pub lam_max_cts2c: f64,
}

pub fn spectral_data(c: &OutputMatrix, sigma: &DMatrix<f64>) -> SpectralData {
    let to6 = |m: DMatrix<f64>| -> Matrix6<f64> { m.fixed_view::<6, 6>(0, 0).into_owned() };
    let ctc = to6(c.matrix().transpose() * c.matrix());
    let ctsc = to6(c.matrix().transpose() * sigma * c.matrix());
    let cts2c = to6(c.matrix().transpose() * sigma * sigma * c.matrix());
    let e_ctc = ctc.symmetric_eigenvalues();
    let e_ctsc = ctsc.symmetric_eigenvalues();
    let e_cts2c = cts2c.symmetric_eigenvalues();
    SpectralData {
        lam_min_ctc: e_ctc.min(),
        lam_max_ctc: e_ctc.max(),
        lam_min_ctsc: e_ctsc.min(),
        lam_max_ctsc: e_ctsc.max(),
        lam_max_cts2c: e_cts2c.max(),
    }
}

/// Everything the margin formulas need.
#[derive(Debug, Clone, Copy)]
pub struct MarginInputs {
    pub spectra: SpectralData,
    pub gamma: f64,
    pub t_window: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub delay: f64,
    pub epsilon: f64,
}

impl MarginInputs {
    /// Lower gain bound `beta1 = 2 T e^{-eps T} lam_min(C^T Σ C)`.
    pub fn beta1(&self) -> f64 {
        2.0 * self.t_window * (-self.epsilon * self.t_window).exp() * self.spectra.lam_min_ctsc
    }

    /// Right-hand side of the gain inequality; the admissible gains solve
    /// `eps T e^{-eps T} >= upsilon2`.
    pub fn upsilon2(&self) -> f64 {
        let d = self.delay;
        let s = &self.spectra;
        let num = d * (d + 1.0) * (d + 2.0) * self.gamma / self.kappa1 * s.lam_max_ctc
            + 2.0 * self.kappa1 * s.lam_max_cts2c;
        0.5 * (num / (2.0 * s.lam_min_ctsc) - 1.0)
    }

    /// Cubic constant for the delay bound: `D(D+1)(D+2) = upsilon1` at the
    /// feasibility boundary.
    pub fn upsilon1(&self) -> f64 {
        let s = &self.spectra;
        let num = 2.0 * s.lam_min_ctsc * (1.0 + 2.0 * (-1.0f64).exp())
            - 2.0 * self.kappa1 * s.lam_max_cts2c;
        num / (self.gamma / self.kappa1 * s.lam_max_ctc)
    }

    /// Residual of the gain inequality at a candidate gain; zero at the
    /// admissible-interval endpoints.
    pub fn gain_inequality_residual(&self, epsilon: f64) -> f64 {
        epsilon * self.t_window * (-epsilon * self.t_window).exp() - self.upsilon2()
    }
}

/// Decay-budget constants of the convergence argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Constants {
    pub delta1: f64,
    pub delta2: f64,
    pub rho: f64,
    /// `mu = min(delta1/beta1, delta2/(1+D))`; a decay rate only when both
    /// deltas are positive.
    pub mu: f64,
    pub feasible: bool,
}

pub fn theorem1_constants(inputs: &MarginInputs) -> Theorem1Constants {
    let s = &inputs.spectra;
    let d = inputs.delay;
    let beta1 = inputs.beta1();
    let delta1 = inputs.epsilon * beta1 + s.lam_min_ctsc
        - inputs.kappa1 * s.lam_max_cts2c
        - d * (d / 2.0 + 1.0) * inputs.gamma / (inputs.kappa1 * inputs.kappa2) * s.lam_max_ctc;
    let delta2 = 1.0 - (1.0 + d) * inputs.kappa2;
    let mu = (delta1 / beta1).min(delta2 / (1.0 + d));
    Theorem1Constants {
        delta1,
        delta2,
        rho: 1.0 / inputs.kappa1,
        mu,
        feasible: delta1 > 0.0 && delta2 > 0.0,
    }
}

/// Admissible gain range from the two Lambert branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonInterval {
    /// `upsilon2 <= 0`: every positive gain satisfies the inequality.
    AllAdmissible,
    /// Endpoints satisfy the gain inequality with equality.
    Bounded { eps_min: f64, eps_max: f64 },
    /// `upsilon2 > 1/e`: no gain satisfies the inequality.
    Empty,
}

pub fn epsilon_interval(inputs: &MarginInputs) -> Result<EpsilonInterval, MarginError> {
    let u2 = inputs.upsilon2();
    let e_inv = (-1.0f64).exp();
    if u2 <= 0.0 {
        return Ok(EpsilonInterval::AllAdmissible);
    }
    if u2 > e_inv + 4.0 * f64::EPSILON {
        return Ok(EpsilonInterval::Empty);
    }
    let z = -u2.min(e_inv);
    let w0 = lambert_w(Branch::Principal, z)?;
    let wm1 = lambert_w(Branch::MinusOne, z)?;
    Ok(EpsilonInterval::Bounded {
        eps_min: -w0 / inputs.t_window,
        eps_max: -wm1 / inputs.t_window,
    })
}

/// Largest delay for which a positive decay budget exists at the given
/// `kappa1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DmaxResult {
    Finite(f64),
    /// `gamma = 0`: the analysis imposes no delay bound.
    Unbounded,
    /// Negative cubic constant or complex Cardano root: the configuration
    /// admits no positive delay at all.
    Infeasible,
}

impl DmaxResult {
    pub fn finite(&self) -> Option<f64> {
        match self {
            DmaxResult::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

pub fn compute_dmax(inputs: &MarginInputs) -> DmaxResult {
    let s = &inputs.spectra;
    let numerator = 2.0 * s.lam_min_ctsc * (1.0 + 2.0 * (-1.0f64).exp())
        - 2.0 * inputs.kappa1 * s.lam_max_cts2c;
    if numerator <= 0.0 {
        return DmaxResult::Infeasible;
    }
    if inputs.gamma <= 0.0 {
        return DmaxResult::Unbounded;
    }
    let u1 = inputs.upsilon1();
    let disc = u1 * u1 / 4.0 - 1.0 / 27.0;
    if disc < 0.0 {
        return DmaxResult::Infeasible;
    }
    let sigma = (u1 / 2.0 + disc.sqrt()).cbrt();
    DmaxResult::Finite(1.0 / (3.0 * sigma) + sigma - 1.0)
}

/// Overshoot coefficient of the exponential error envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstants {
    pub overshoot: f64,
    pub v_phi1: f64,
    pub v_phi2: f64,
    pub psi1: f64,
    pub psi2: f64,
}

/// Computes the envelope constants. `literal_min` reproduces the upper
/// V-bound constant as `min(beta2, rho(1+D))`, which cannot bound the
/// functional from above; the default uses `max`.
pub fn theorem2_envelope(inputs: &MarginInputs, beta2: f64, literal_min: bool) -> EnvelopeConstants {
    let rho = 1.0 / inputs.kappa1;
    let d = inputs.delay;
    let beta1 = inputs.beta1();
    let v_phi1 = beta1.min(rho);
    let v_phi2 = if literal_min {
        beta2.min(rho * (1.0 + d))
    } else {
        beta2.max(rho * (1.0 + d))
    };
    let w_phi1 = 1.0 + inputs.kappa3;
    let w_phi2 = (1.0 + 1.0 / inputs.kappa3) * inputs.spectra.lam_max_ctc * d;
    let w_phi3 = 1.0 + inputs.kappa4;
    let w_phi4 = (1.0 + 1.0 / inputs.kappa4) * inputs.spectra.lam_max_ctc * d;
    let psi1 = 1.0 / w_phi3.max(1.0 + w_phi4);
    let psi2 = w_phi1.max(1.0 + w_phi2);
    EnvelopeConstants {
        overshoot: (v_phi2 * psi2 / (v_phi1 * psi1)).sqrt(),
        v_phi1,
        v_phi2,
        psi1,
        psi2,
    }
}

/// Gain-inequality-minimizing `kappa1` over a log grid, the documented
/// default selection.
pub fn kappa1_auto(spectra: &SpectralData, gamma: f64, delay: f64) -> f64 {
    let mut best = (f64::INFINITY, 1e-3);
    let points = 121;
    for i in 0..points {
        let kappa1 = 10f64.powf(-3.0 + 6.0 * i as f64 / (points - 1) as f64);
        let probe = MarginInputs {
            spectra: *spectra,
            gamma,
            t_window: 1.0,
            kappa1,
            kappa2: 0.5 / (1.0 + delay),
            kappa3: 1.0,
            kappa4: 1.0,
            delay,
            epsilon: 1.0,
        };
        let u2 = probe.upsilon2();
        if u2 < best.0 {
            best = (u2, kappa1);
        }
    }
    best.1
}

/// Full margin report for a scenario.
#[derive(Debug, Clone)]
pub struct MarginReport {
    pub feasible: bool,
    pub delay: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub t_window: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kappa: [f64; 4],
    pub delta1: f64,
    pub delta2: f64,
    pub rho: f64,
    pub mu: f64,
    pub overshoot: f64,
    pub upsilon1: f64,
    pub upsilon2: f64,
    pub d_max: DmaxResult,
    pub eps_interval: EpsilonInterval,
    /// Gain-inequality residuals at the interval endpoints (zero there by
    /// construction of the Lambert branches).
    pub eps_residuals: Option<(f64, f64)>,
    pub spectra: SpectralData,
}

/// Runs the whole margin pipeline: excitation constants on the actual input
/// profile, `gamma`, the documented kappa defaults, and every Appendix
/// quantity.
#[allow(clippy::too_many_arguments)]
pub fn analyze(
    c: &OutputMatrix,
    sigma: &DMatrix<f64>,
    epsilon: f64,
    delay: f64,
    omega_profile: &Profile,
    horizon: f64,
    p0: Matrix6<f64>,
    kappa1_override: Option<f64>,
) -> Result<MarginReport, MarginError> {
    let exc = excitation_constants(c, sigma, epsilon, omega_profile, horizon, p0)?;
    let gamma = compute_gamma(omega_profile, delay, horizon, f64::max(1e-3, delay / 1000.0));
    let spectra = spectral_data(c, sigma);
    let kappa1 = kappa1_override.unwrap_or_else(|| kappa1_auto(&spectra, gamma, delay));
    let inputs = MarginInputs {
        spectra,
        gamma,
        t_window: exc.t_window,
        kappa1,
        kappa2: 0.5 / (1.0 + delay),
        kappa3: 1.0,
        kappa4: 1.0,
        delay,
        epsilon,
    };
    let th1 = theorem1_constants(&inputs);
    let interval = epsilon_interval(&inputs)?;
    let d_max = compute_dmax(&inputs);
    let envelope = theorem2_envelope(&inputs, exc.beta2, false);
    let eps_residuals = match interval {
        EpsilonInterval::Bounded { eps_min, eps_max } => Some((
            inputs.gain_inequality_residual(eps_min),
            inputs.gain_inequality_residual(eps_max),
        )),
        _ => None,
    };
    Ok(MarginReport {
        feasible: th1.feasible,
        delay,
        epsilon,
        gamma,
        t_window: exc.t_window,
        alpha: exc.alpha,
        beta1: inputs.beta1(),
        beta2: exc.beta2,
        kappa: [inputs.kappa1, inputs.kappa2, inputs.kappa3, inputs.kappa4],
        delta1: th1.delta1,
        delta2: th1.delta2,
        rho: th1.rho,
        mu: th1.mu,
        overshoot: envelope.overshoot,
        upsilon1: inputs.upsilon1(),
        upsilon2: inputs.upsilon2(),
        d_max,
        eps_interval: interval,
        eps_residuals,
        spectra,
    })
}

/// Margin pipeline on a scenario: landmark matrix, weight, gain and input
/// profile all come from the scenario itself.
pub fn analyze_scenario(
    scenario: &crate::sim::Scenario,
    kappa1_override: Option<f64>,
) -> Result<MarginReport, MarginError> {
    let c = crate::landmarks::build_output_matrix(&scenario.landmarks);
    let dim = c.output_dim();
    let sigma = DMatrix::identity(dim, dim) * scenario.sigma_scale;
    analyze(
        &c,
        &sigma,
        scenario.epsilon,
        scenario.delay,
        &scenario.omega_profile,
        scenario.t_end,
        Matrix6::identity() * scenario.p0_scale,
        kappa1_override,
    )
}
