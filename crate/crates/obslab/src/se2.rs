//! Planar rigid-body types and kinematics.
//!
//! A pose is a rotation `R ∈ SO(2)` plus a position `P ∈ R²` (the inertial
//! position expressed in the body frame). Column-stacking `[P; r1; r2]`
//! turns the kinematics into the linear state-affine form
//!
//! ```text
//! dX/dt = A(u) X + B(u),   A(u) = -diag(S(w), S(w), S(w)),   B(u) = [v; 0; 0]
//! ```
//!
//! whose transition matrix is available in closed form because planar skew
//! matrices commute: it is a block-diagonal rotation by `-∫w dt`.

use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};
use thiserror::Error;

/// State vector `[P; r1; r2]` of the embedded planar pose.
pub type StateVector = Vector6<f64>;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("velocity input is not finite at t = {t}")]
    NonFiniteInput { t: f64 },
    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
}

/// Planar skew matrix `S(w) = [0 -w; w 0]`.
pub fn skew(omega: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, -omega, omega, 0.0)
}

/// A 2x2 rotation matrix, kept orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation2 {
    m: Matrix2<f64>,
}

impl Rotation2 {
    pub fn identity() -> Self {
        Self { m: Matrix2::identity() }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self { m: Matrix2::new(c, -s, s, c) }
    }

    /// Wraps an existing matrix. Debug builds assert orthonormality; the
    /// entries are stored as given (no silent re-projection).
    pub fn from_matrix(m: Matrix2<f64>) -> Self {
        debug_assert!(Self::defect(&m) < 1e-9, "matrix is not a rotation");
        Self { m }
    }

    /// Orthonormality defect: max of |R^T R - I| entries and |det - 1|.
    pub fn defect(m: &Matrix2<f64>) -> f64 {
        let gram = m.transpose() * m - Matrix2::identity();
        gram.abs().max().max((m.determinant() - 1.0).abs())
    }

    /// Projects an almost-rotation back onto SO(2): normalize the first
    /// column, rebuild the second as its perpendicular.
    pub fn renormalized(m: &Matrix2<f64>) -> Self {
        let c0 = Vector2::new(m[(0, 0)], m[(1, 0)]);
        let n = c0.norm();
        let c0 = if n > 0.0 { c0 / n } else { Vector2::new(1.0, 0.0) };
        Self {
            m: Matrix2::new(c0.x, -c0.y, c0.y, c0.x),
        }
    }

    pub fn angle(&self) -> f64 {
        self.m[(1, 0)].atan2(self.m[(0, 0)])
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }
}

impl std::ops::Mul for Rotation2 {
    type Output = Rotation2;
    fn mul(self, rhs: Rotation2) -> Rotation2 {
        Rotation2 { m: self.m * rhs.m }
    }
}

/// Rigid-body pose: rotation plus body-frame-expressed inertial position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation2,
    pub position: Vector2<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation2, position: Vector2<f64>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::new(Rotation2::identity(), Vector2::zeros())
    }

    /// Column stacking `[P; r1; r2]`.
    pub fn embed(&self) -> StateVector {
        let r = self.rotation.matrix();
        Vector6::new(
            self.position.x,
            self.position.y,
            r[(0, 0)],
            r[(1, 0)],
            r[(0, 1)],
            r[(1, 1)],
        )
    }

    /// Inverse of [`Pose::embed`]. The rotation block is taken verbatim, so
    /// `unembed(x).embed() == x` holds exactly whenever the block is
    /// orthonormal.
    pub fn unembed(x: &StateVector) -> Self {
        Self {
            rotation: Rotation2::from_matrix(Matrix2::new(x[2], x[4], x[3], x[5])),
            position: Vector2::new(x[0], x[1]),
        }
    }
}

/// Angular rate (rad/s) and body-frame translational velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityInput {
    pub omega: f64,
    pub v: Vector2<f64>,
}

impl VelocityInput {
    pub fn new(omega: f64, vx: f64, vy: f64) -> Self {
        Self { omega, v: Vector2::new(vx, vy) }
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite() && self.v.x.is_finite() && self.v.y.is_finite()
    }
}

/// `A(u) = -diag(S(w), S(w), S(w))` and `B(u) = [v; 0; 0]`.
pub fn system_matrices(u: &VelocityInput) -> (Matrix6<f64>, Vector6<f64>) {
    let mut a = Matrix6::zeros();
    for b in 0..3 {
        a[(2 * b, 2 * b + 1)] = u.omega;
        a[(2 * b + 1, 2 * b)] = -u.omega;
    }
    let mut bv = Vector6::zeros();
    bv[0] = u.v.x;
    bv[1] = u.v.y;
    (a, bv)
}

/// Applies `A(u)` to a state without forming the matrix.
#[inline]
pub fn apply_a(omega: f64, x: &StateVector) -> StateVector {
    Vector6::new(
        omega * x[1],
        -omega * x[0],
        omega * x[3],
        -omega * x[2],
        omega * x[5],
        -omega * x[4],
    )
}

/// State transition matrix of the homogeneous system, block-diagonal
/// repetition of a single rotation.
#[derive(Debug, Clone, Copy)]
pub struct TransitionMatrix {
    block: Rotation2,
}

impl TransitionMatrix {
    pub fn block(&self) -> &Rotation2 {
        &self.block
    }

    pub fn matrix6(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        let r = self.block.matrix();
        for b in 0..3 {
            m[(2 * b, 2 * b)] = r[(0, 0)];
            m[(2 * b, 2 * b + 1)] = r[(0, 1)];
            m[(2 * b + 1, 2 * b)] = r[(1, 0)];
            m[(2 * b + 1, 2 * b + 1)] = r[(1, 1)];
        }
        m
    }

    /// `Phi * x`, exploiting the block structure.
    #[inline]
    pub fn apply(&self, x: &StateVector) -> StateVector {
        let r = self.block.matrix();
        let (c, s) = (r[(0, 0)], r[(1, 0)]);
        Vector6::new(
            c * x[0] - s * x[1],
            s * x[0] + c * x[1],
            c * x[2] - s * x[3],
            s * x[2] + c * x[3],
            c * x[4] - s * x[5],
            s * x[4] + c * x[5],
        )
    }

    pub fn inverse(&self) -> Self {
        Self { block: self.block.transpose() }
    }
}

/// Transition matrix for a signed angular-rate integral `∫w dt` over the
/// interval of interest: a block rotation by the negated integral.
pub fn transition(omega_integral: f64) -> TransitionMatrix {
    TransitionMatrix {
        block: Rotation2::from_angle(-omega_integral),
    }
}

fn deriv(x: &StateVector, u: &VelocityInput) -> StateVector {
    let mut dx = apply_a(u.omega, x);
    dx[0] += u.v.x;
    dx[1] += u.v.y;
    dx
}

/// One classical RK4 step of the embedded kinematics.
pub fn rk4_step<F>(x: &StateVector, t: f64, dt: f64, u_of: &F) -> StateVector
where
    F: Fn(f64) -> VelocityInput,
{
    let u1 = u_of(t);
    let u2 = u_of(t + 0.5 * dt);
    let u4 = u_of(t + dt);
    let k1 = deriv(x, &u1);
    let k2 = deriv(&(x + 0.5 * dt * k1), &u2);
    let k3 = deriv(&(x + 0.5 * dt * k2), &u2);
    let k4 = deriv(&(x + dt * k3), &u4);
    x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Fixed-step RK4 integration of the pose kinematics from `t0` to `t1`,
/// re-projecting the rotation onto SO(2) after every step.
pub fn integrate_pose<F>(
    pose: &Pose,
    u_profile: F,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Pose, KinematicsError>
where
    F: Fn(f64) -> VelocityInput,
{
    assert!(dt > 0.0 && t1 >= t0, "need dt > 0 and t1 >= t0");
    let steps = ((t1 - t0) / dt).round() as usize;
    let mut x = pose.embed();
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        if !u_of_checked(&u_profile, t)? .is_finite() {
            return Err(KinematicsError::NonFiniteInput { t });
        }
        x = rk4_step(&x, t, dt, &u_profile);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFiniteState { t: t + dt });
        }
        // Pull the rotation block back onto the manifold.
        let p = Pose::unembed_unchecked(&x);
        x = p.embed();
    }
    Ok(Pose::unembed_unchecked(&x))
}

fn u_of_checked<F>(u_profile: &F, t: f64) -> Result<VelocityInput, KinematicsError>
where
    F: Fn(f64) -> VelocityInput,
{
    let u = u_profile(t);
    if u.is_finite() {
        Ok(u)
    } else {
        Err(KinematicsError::NonFiniteInput { t })
    }
}

impl Pose {
    /// Unpacks a state vector, re-projecting the rotation block.
    pub fn unembed_unchecked(x: &StateVector) -> Self {
        let raw = Matrix2::new(x[2], x[4], x[3], x[5]);
        Self {
            rotation: Rotation2::renormalized(&raw),
            position: Vector2::new(x[0], x[1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn skew_matches_convention() {
        assert_eq!(skew(0.0), Matrix2::zeros());
        assert_eq!(skew(1.0), Matrix2::new(0.0, -1.0, 1.0, 0.0));
        assert_eq!(skew(-2.0), Matrix2::new(0.0, 2.0, -2.0, 0.0));
        let s = skew(0.37);
        assert_eq!(s.transpose(), -s);
    }

    #[test]
    fn embed_identity_rotation() {
        let p = Pose::new(Rotation2::identity(), Vector2::new(2.0, 3.0));
        assert_eq!(p.embed(), Vector6::new(2.0, 3.0, 1.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn embed_paper_initial_state() {
        // 45-degree attitude with position (-5/sqrt2, 1/sqrt2).
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let p = Pose::new(
            Rotation2::from_angle(std::f64::consts::FRAC_PI_4),
            Vector2::new(-5.0 * s2, s2),
        );
        let x = p.embed();
        let expected = Vector6::new(-5.0 * s2, s2, s2, s2, -s2, s2);
        assert_abs_diff_eq!(x, expected, epsilon = 1e-15);
    }

    #[test]
    fn embed_quarter_turn() {
        let p = Pose::new(Rotation2::from_angle(std::f64::consts::FRAC_PI_2), Vector2::zeros());
        let x = p.embed();
        assert_abs_diff_eq!(x, Vector6::new(0.0, 0.0, 0.0, 1.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn embed_unembed_round_trip_exact() {
        let p = Pose::new(Rotation2::from_angle(0.83), Vector2::new(-1.5, 4.25));
        let x = p.embed();
        let x2 = Pose::unembed(&x).embed();
        assert_eq!(x, x2);
    }

    #[test]
    fn system_matrices_zero_input() {
        let (a, b) = system_matrices(&VelocityInput::new(0.0, 0.0, 0.0));
        assert_eq!(a, Matrix6::zeros());
        assert_eq!(b, Vector6::zeros());
    }

    #[test]
    fn system_matrices_unit_case() {
        let (a, b) = system_matrices(&VelocityInput::new(1.0, 1.0, 0.0));
        let s = skew(1.0);
        for blk in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(a[(2 * blk + i, 2 * blk + j)], -s[(i, j)]);
                }
            }
        }
        assert_eq!(b, Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn state_equation_matches_pose_kinematics() {
        // d/dt [P; r1; r2] from the matrix form must equal the blockwise
        // derivatives dR = -S(w) R, dP = -S(w) P + v.
        let mut rng = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..100 {
            let pose = Pose::new(Rotation2::from_angle(next()), Vector2::new(next(), next()));
            let u = VelocityInput::new(next(), next(), next());
            let x = pose.embed();
            let (a, b) = system_matrices(&u);
            let dx = a * x + b;

            let s = skew(u.omega);
            let dr = -s * pose.rotation.matrix();
            let dp = -s * pose.position + u.v;
            assert_abs_diff_eq!(dx[0], dp.x, epsilon = 1e-14);
            assert_abs_diff_eq!(dx[1], dp.y, epsilon = 1e-14);
            assert_abs_diff_eq!(dx[2], dr[(0, 0)], epsilon = 1e-14);
            assert_abs_diff_eq!(dx[3], dr[(1, 0)], epsilon = 1e-14);
            assert_abs_diff_eq!(dx[4], dr[(0, 1)], epsilon = 1e-14);
            assert_abs_diff_eq!(dx[5], dr[(1, 1)], epsilon = 1e-14);

            // apply_a agrees with the assembled matrix.
            assert_abs_diff_eq!(apply_a(u.omega, &x), a * x, epsilon = 1e-15);
        }
    }

    #[test]
    fn transition_identity_and_composition() {
        let id = transition(0.0);
        assert_abs_diff_eq!(id.matrix6(), Matrix6::identity(), epsilon = 1e-15);

        let quarter = transition(std::f64::consts::FRAC_PI_2);
        let expect = Rotation2::from_angle(-std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(quarter.block().matrix(), expect.matrix(), epsilon = 1e-15);

        let a = 0.7;
        let b = -1.3;
        let lhs = transition(a).matrix6() * transition(b).matrix6();
        let rhs = transition(a + b).matrix6();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
    }

    #[test]
    fn transition_norm_is_one() {
        for &ang in &[0.0, 0.3, -2.0, 11.7, 1e4] {
            let phi = transition(ang).matrix6();
            let sv = phi.svd(false, false);
            assert_abs_diff_eq!(sv.singular_values.max(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn planar_skew_blocks_commute_exactly() {
        // A(u(t)) and the accumulated integral of A commute bit-for-bit.
        for &(w1, w2) in &[(0.3, 1.7), (-2.0, 0.9), (1e-3, 4.2)] {
            let (a1, _) = system_matrices(&VelocityInput::new(w1, 0.0, 0.0));
            let (a2, _) = system_matrices(&VelocityInput::new(w2, 0.0, 0.0));
            assert_eq!(a1 * a2, a2 * a1);
        }
    }

    // Closed-form solution of the constant-input linear system, used as the
    // integration oracle: X(t) = Phi(t,0) X(0) + (integral of Phi) B.
    fn constant_input_solution(x0: &StateVector, u: &VelocityInput, t: f64) -> StateVector {
        let w = u.omega;
        let phi = transition(w * t);
        let homogeneous = phi.apply(x0);
        // integral_0^t rot(-w s) ds = (sin(wt)/w) I - ((1-cos(wt))/w) S(1)
        let (c0, c1) = if w.abs() < 1e-12 {
            (t, 0.0)
        } else {
            ((w * t).sin() / w, (1.0 - (w * t).cos()) / w)
        };
        let jv = Vector2::new(-u.v.y, u.v.x); // S(1) v
        let pv = c0 * u.v - c1 * jv;
        let mut out = homogeneous;
        out[0] += pv.x;
        out[1] += pv.y;
        out
    }

    #[test]
    fn integrate_pose_straight_line() {
        // w = 0, v = (1,0): the linear form gives P(1) = P(0) + (1,0).
        let p0 = Pose::identity();
        let u = VelocityInput::new(0.0, 1.0, 0.0);
        let p1 = integrate_pose(&p0, |_| u, 0.0, 1.0, 1e-3).unwrap();
        let oracle = constant_input_solution(&p0.embed(), &u, 1.0);
        assert_abs_diff_eq!(p1.embed(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(p1.position, Vector2::new(1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn integrate_pose_matches_variation_of_constants() {
        let p0 = Pose::new(Rotation2::from_angle(0.6), Vector2::new(1.0, -2.0));
        let u = VelocityInput::new(0.8, 0.5, -0.25);
        let t1 = 3.0;
        let p = integrate_pose(&p0, |_| u, 0.0, t1, 1e-3).unwrap();
        let oracle = constant_input_solution(&p0.embed(), &u, t1);
        assert_abs_diff_eq!(p.embed(), oracle, epsilon = 1e-10);

        // Pure rotation: position fixed only when v = 0.
        let spin = VelocityInput::new(1.3, 0.0, 0.0);
        let q = integrate_pose(&p0, |_| spin, 0.0, t1, 1e-3).unwrap();
        let oracle_spin = constant_input_solution(&p0.embed(), &spin, t1);
        assert_abs_diff_eq!(q.embed(), oracle_spin, epsilon = 1e-10);
    }

    #[test]
    fn integrate_pose_is_fourth_order() {
        let p0 = Pose::new(Rotation2::from_angle(-0.2), Vector2::new(0.3, 0.9));
        let profile = |t: f64| VelocityInput::new(2.0 * (0.5 * t).sin(), 1.0, 0.2 * t.cos());
        let t1 = 2.0;
        let fine = integrate_pose(&p0, profile, 0.0, t1, 1e-5).unwrap().embed();
        let e1 = (integrate_pose(&p0, profile, 0.0, t1, 4e-3).unwrap().embed() - fine).norm();
        let e2 = (integrate_pose(&p0, profile, 0.0, t1, 2e-3).unwrap().embed() - fine).norm();
        let ratio = e1 / e2;
        // Fourth order: halving dt should shrink the error by about 16x.
        assert!(ratio > 10.0 && ratio < 24.0, "observed ratio {ratio}");
    }

    #[test]
    fn integrate_pose_rejects_non_finite_input() {
        let p0 = Pose::identity();
        let res = integrate_pose(&p0, |_| VelocityInput::new(f64::NAN, 0.0, 0.0), 0.0, 1.0, 0.1);
        assert!(res.is_err());
    }

    #[test]
    fn rotation_stays_orthonormal_over_long_runs() {
        let p0 = Pose::identity();
        let profile = |t: f64| VelocityInput::new(2.0 * (0.04 * std::f64::consts::PI * t).sin(), 1.0, 0.0);
        let p = integrate_pose(&p0, profile, 0.0, 100.0, 1e-3).unwrap();
        assert!(Rotation2::defect(p.rotation.matrix()) < 1e-12);
    }
}
