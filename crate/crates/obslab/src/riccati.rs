//! The observer gain matrix `P(t)` and its excitation bounds.
//!
//! `P` obeys the forced Lyapunov-type flow
//!
//! ```text
//! dP/dt = -eps P - A^T(u) P - P A(u) + C^T Σ C
//! ```
//!
//! which stays symmetric positive definite and uniformly bounded as long as
//! the landmark geometry excites every state direction.

use nalgebra::{DMatrix, Matrix6};
use thiserror::Error;

use crate::delay::OmegaTable;
use crate::landmarks::OutputMatrix;
use crate::profile::Profile;
use crate::se2::{transition, VelocityInput};

#[derive(Debug, Error)]
pub enum GainError {
    #[error("gain matrix became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("insufficient excitation: no window up to {horizon} s satisfies the Gramian bound")]
    InsufficientExcitation { horizon: f64 },
}

/// Gain matrix state plus the constant pieces of its flow.
#[derive(Debug, Clone)]
pub struct GainState {
    pub p: Matrix6<f64>,
    pub epsilon: f64,
    pub sigma: DMatrix<f64>,
    /// Cached `C^T Σ C`.
    ctsc: Matrix6<f64>,
    /// Cached `C^T Σ` (6 x 2N).
    ct_sigma: DMatrix<f64>,
}

impl GainState {
    pub fn new(p0: Matrix6<f64>, epsilon: f64, sigma: DMatrix<f64>, c: &OutputMatrix) -> Self {
        assert!(epsilon > 0.0, "gain decay must be positive");
        assert_eq!(sigma.nrows(), c.output_dim());
        let ct_sigma = c.matrix().transpose() * &sigma;
        let ctsc_d = &ct_sigma * c.matrix();
        let ctsc = ctsc_d.fixed_view::<6, 6>(0, 0).into_owned();
        Self { p: p0, epsilon, sigma, ctsc, ct_sigma }
    }

    pub fn ctsc(&self) -> &Matrix6<f64> {
        &self.ctsc
    }

    pub fn ct_sigma(&self) -> &DMatrix<f64> {
        &self.ct_sigma
    }

    /// `P^{-1}` via Cholesky on the symmetrized matrix; during a non-SPD
    /// transient falls back to a pseudo-inverse and logs a warning.
    pub fn inverse(&self) -> Matrix6<f64> {
        let sym = (self.p + self.p.transpose()) * 0.5;
        if let Some(chol) = nalgebra::Cholesky::new(sym) {
            return chol.inverse();
        }
        log::warn!("gain matrix not SPD; using pseudo-inverse");
        sym.svd(true, true)
            .pseudo_inverse(1e-12)
            .expect("svd of a finite matrix")
    }

    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let eigs = ((self.p + self.p.transpose()) * 0.5).symmetric_eigenvalues();
        (eigs.min(), eigs.max())
    }
}

fn gain_rhs(p: &Matrix6<f64>, omega: f64, epsilon: f64, ctsc: &Matrix6<f64>) -> Matrix6<f64> {
    // A(u) = -diag(S(w)...) is skew, so -A^T P - P A = A P - P A.
    let a = a_matrix(omega);
    -epsilon * p + a * p - p * a + ctsc
}

fn a_matrix(omega: f64) -> Matrix6<f64> {
    let mut a = Matrix6::zeros();
    for b in 0..3 {
        a[(2 * b, 2 * b + 1)] = omega;
        a[(2 * b + 1, 2 * b)] = -omega;
    }
    a
}

/// One RK4 step of the gain flow followed by symmetrization.
pub fn step_riccati<F>(state: &mut GainState, u_of: &F, t: f64, dt: f64) -> Result<(), GainError>
where
    F: Fn(f64) -> VelocityInput,
{
    let eps = state.epsilon;
    let ctsc = state.ctsc;
    let w1 = u_of(t).omega;
    let w2 = u_of(t + 0.5 * dt).omega;
    let w4 = u_of(t + dt).omega;
    let p = state.p;
    let k1 = gain_rhs(&p, w1, eps, &ctsc);
    let k2 = gain_rhs(&(p + 0.5 * dt * k1), w2, eps, &ctsc);
    let k3 = gain_rhs(&(p + 0.5 * dt * k2), w2, eps, &ctsc);
    let k4 = gain_rhs(&(p + dt * k3), w4, eps, &ctsc);
    let next = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let sym = (next + next.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(GainError::NonFinite { t: t + dt });
    }
    state.p = sym;
    Ok(())
}

/// Excitation window and the induced gain bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationConstants {
    /// Window length `T` over which the observability Gramian clears `alpha`.
    pub t_window: f64,
    /// `alpha = T λ_min(Σ) λ_min(C^T C)`.
    pub alpha: f64,
    /// `beta1 = 2 T e^{-eps T} λ_min(C^T Σ C)`, the lower gain bound valid
    /// for `t > T`.
    pub beta1: f64,
    /// Largest eigenvalue of `P(t)` observed along the horizon (no closed
    /// form is available for the upper bound).
    pub beta2: f64,
}

/// Scans windows `T` on a grid, keeps those whose Gramian
/// `∫_t^{t+T} Φ^T C^T Σ C Φ dτ` clears `alpha(T)` uniformly over sampled
/// `t`, and returns the admissible window that maximizes `beta1`.
///
/// For planar kinematics the transition blocks are rotations, so every
/// window is admissible and the scan effectively picks `T ≈ 1/eps`, the
/// maximizer of `T e^{-eps T}`. Returning the smallest admissible window
/// instead would tie the reported bounds to the grid step, which is a
/// discretization artifact rather than a property of the system.
pub fn excitation_constants(
    c: &OutputMatrix,
    sigma: &DMatrix<f64>,
    epsilon: f64,
    omega_profile: &Profile,
    horizon: f64,
    p0: Matrix6<f64>,
) -> Result<ExcitationConstants, GainError> {
    assert!(horizon > 0.0);
    let dt = (horizon / 2000.0).min(0.05).max(1e-4);
    let omega = OmegaTable::from_profile(omega_profile, horizon + dt, dt);

    let ct_sigma = c.matrix().transpose() * sigma;
    let ctsc = (&ct_sigma * c.matrix()).fixed_view::<6, 6>(0, 0).into_owned();
    let lam_min_ctsc = ctsc.symmetric_eigenvalues().min();
    let ctc = (c.matrix().transpose() * c.matrix()).fixed_view::<6, 6>(0, 0).into_owned();
    let lam_min_ctc = ctc.symmetric_eigenvalues().min();
    let lam_min_sigma = sigma.clone().symmetric_eigenvalues().min();

    let t_max = horizon / 2.0;
    let n_windows = (t_max / dt).floor() as usize;
    let t_samples = 16usize;

    // Incremental Gramian accumulation per sampled start time.
    let mut best: Option<(f64, f64)> = None; // (beta1, T)
    let mut grams: Vec<Matrix6<f64>> = vec![Matrix6::zeros(); t_samples];
    let mut starts: Vec<f64> = Vec::with_capacity(t_samples);
    for i in 0..t_samples {
        starts.push((horizon - t_max) * i as f64 / (t_samples.max(2) - 1) as f64);
    }
    let integrand = |tau: f64, t0: f64| -> Matrix6<f64> {
        let phi = transition(omega.window(t0, tau)).matrix6();
        phi.transpose() * ctsc * phi
    };
    let mut prev: Vec<Matrix6<f64>> = starts.iter().map(|&t0| integrand(t0, t0)).collect();
    for k in 1..=n_windows {
        let t_window = k as f64 * dt;
        let mut min_eig = f64::INFINITY;
        for (i, &t0) in starts.iter().enumerate() {
            let cur = integrand(t0 + t_window, t0);
            grams[i] += 0.5 * dt * (prev[i] + cur);
            prev[i] = cur;
            min_eig = min_eig.min(grams[i].symmetric_eigenvalues().min());
        }
        let alpha = t_window * lam_min_sigma * lam_min_ctc;
        if min_eig >= alpha * (1.0 - 1e-9) {
            let beta1 = 2.0 * t_window * (-epsilon * t_window).exp() * lam_min_ctsc;
            match best {
                Some((b, _)) if b >= beta1 => {}
                _ => best = Some((beta1, t_window)),
            }
        }
    }
    let (beta1, t_window) = best.ok_or(GainError::InsufficientExcitation { horizon })?;
    let alpha = t_window * lam_min_sigma * lam_min_ctc;

    // beta2: run the gain flow along the horizon and track the largest
    // eigenvalue seen.
    let output = OutputMatrix::clone(c);
    let mut gain = GainState::new(p0, epsilon, sigma.clone(), &output);
    let u_of = |t: f64| VelocityInput::new(omega_profile.value(t), 0.0, 0.0);
    let steps = (horizon / dt).round() as usize;
    let mut beta2 = gain.eigenvalue_range().1;
    for k in 0..steps {
        step_riccati(&mut gain, &u_of, k as f64 * dt, dt)?;
        beta2 = beta2.max(gain.eigenvalue_range().1);
    }

    Ok(ExcitationConstants { t_window, alpha, beta1, beta2 })
}
