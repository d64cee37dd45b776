//! Method-of-lines co-simulation of the observer in its coupled ODE/PDE
//! form, used to cross-validate the delay-line realization and to evaluate
//! the full error norm over the delay window.
//!
//! The delayed output is modeled as a transport equation on `x ∈ [0, D]`
//! moving toward `x = 0` at unit speed; its boundary value at `x = 0` is the
//! delayed signal. The observer copy adds a gain-weighted source along the
//! window and imposes `C x_hat` at the inflow boundary `x = D`.

use nalgebra::DVector;
use thiserror::Error;

use crate::delay::{rotate_blocks, DelayError, DelayLine, OmegaTable, PhiWindow};
use crate::landmarks::OutputMatrix;
use crate::observer::{ObserverContext, ObserverError};
use crate::riccati::{step_riccati, GainState};
use crate::se2::{StateVector, VelocityInput};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("CFL violation: dt = {dt} exceeds delta_x = {delta_x}")]
    Cfl { dt: f64, delta_x: f64 },
    #[error("grid needs at least 2 cells, got {0}")]
    TooCoarse(usize),
}

#[derive(Debug, Error)]
pub enum PdeError {
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Node values of the transported output signal over `[0, D]`.
#[derive(Debug, Clone)]
pub struct TransportGrid {
    delta_x: f64,
    /// `cells + 1` nodes; node `j` sits at `x = j * delta_x`, the last node
    /// carries the inflow boundary.
    nodes: Vec<DVector<f64>>,
}

impl TransportGrid {
    pub fn new(cells: usize, delay: f64, init: Vec<DVector<f64>>) -> Result<Self, TransportError> {
        if cells < 2 {
            return Err(TransportError::TooCoarse(cells));
        }
        assert_eq!(init.len(), cells + 1);
        Ok(Self { delta_x: delay / cells as f64, nodes: init })
    }

    pub fn zeroed(cells: usize, delay: f64, dim: usize) -> Result<Self, TransportError> {
        Self::new(cells, delay, vec![DVector::zeros(dim); cells + 1])
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn delta_x(&self) -> f64 {
        self.delta_x
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    /// Outflow value `U(0, t)`, the realized delayed signal.
    pub fn outflow(&self) -> &DVector<f64> {
        &self.nodes[0]
    }

    pub fn boundary(&self) -> &DVector<f64> {
        self.nodes.last().unwrap()
    }
}

/// One upwind Euler step: `U_j += dt ((U_{j+1} - U_j)/Δx + source_j)`,
/// then the inflow boundary is re-imposed.
///
/// `source_blocks` holds, per node, the output-space source (already mapped
/// through `C Φ(x_j, 0)`); pass an empty slice for a source-free grid.
pub fn step_transport(
    grid: &mut TransportGrid,
    boundary_next: DVector<f64>,
    source_blocks: &[DVector<f64>],
    dt: f64,
) -> Result<(), TransportError> {
    let dx = grid.delta_x;
    if dt > dx * (1.0 + 1e-12) {
        return Err(TransportError::Cfl { dt, delta_x: dx });
    }
    let m = grid.cells();
    let lambda = dt / dx;
    for j in 0..m {
        // Ascending sweep only reads the not-yet-updated neighbor j+1.
        let diff = (&grid.nodes[j + 1] - &grid.nodes[j]) * lambda;
        grid.nodes[j] += diff;
        if !source_blocks.is_empty() {
            grid.nodes[j] += &source_blocks[j] * dt;
        }
    }
    grid.nodes[m] = boundary_next;
    Ok(())
}

/// Exact delayed-output nodes from the truth history:
/// `U(x_j, t) = C X(t + x_j - D)` served by the measurement delay line.
pub fn exact_truth_nodes(
    meas_line: &DelayLine,
    t: f64,
    delay: f64,
    cells: usize,
) -> Result<Vec<DVector<f64>>, DelayError> {
    let dx = delay / cells as f64;
    (0..=cells)
        .map(|j| meas_line.query(t + j as f64 * dx - delay))
        .collect()
}

/// `( ||x_tilde||² + ∫_0^D ||U_tilde||² dx )^{1/2}` by trapezoid over nodes.
pub fn error_norm(
    truth_nodes: &[DVector<f64>],
    obs_nodes: &[DVector<f64>],
    x_tilde: &StateVector,
    delta_x: f64,
) -> f64 {
    assert_eq!(truth_nodes.len(), obs_nodes.len());
    let m = truth_nodes.len() - 1;
    let mut acc = 0.0;
    for j in 0..=m {
        let d2 = (&truth_nodes[j] - &obs_nodes[j]).norm_squared();
        let w = if j == 0 || j == m { 0.5 } else { 1.0 };
        acc += w * d2 * delta_x;
    }
    (x_tilde.norm_squared() + acc).sqrt()
}

/// Composite error `W(x_j) = U_tilde(x_j) - C Φ(x_j, D) x_tilde`; its
/// boundary node vanishes identically.
pub fn composite_error(
    truth_nodes: &[DVector<f64>],
    obs_nodes: &[DVector<f64>],
    x_tilde: &StateVector,
    omega: &OmegaTable,
    c: &OutputMatrix,
    delay: f64,
) -> Vec<DVector<f64>> {
    let m = truth_nodes.len() - 1;
    let dx = delay / m as f64;
    (0..=m)
        .map(|j| {
            let x = j as f64 * dx;
            let angle = -(omega.angle(x) - omega.angle(delay));
            let mapped = c.matrix() * DVector::from_column_slice(rotate_blocks(x_tilde, angle).as_slice());
            &truth_nodes[j] - &obs_nodes[j] - mapped
        })
        .collect()
}

/// The observer realized in coupled form: a state estimate plus a transport
/// grid for its output prediction.
#[derive(Debug, Clone)]
pub struct PdeObserver {
    pub x_hat: StateVector,
    pub gain: GainState,
    pub grid: TransportGrid,
    /// Per-node `C Φ(x_j, 0)` source angles for the literal window; rebuilt
    /// each step when sliding.
    literal_angles: Vec<f64>,
}

impl PdeObserver {
    pub fn new(
        x_hat0: StateVector,
        gain: GainState,
        ctx: &ObserverContext,
        cells: usize,
    ) -> Result<Self, TransportError> {
        let dim = ctx.c.output_dim();
        let mut grid = TransportGrid::zeroed(cells, ctx.delay, dim)?;
        let m = grid.cells();
        grid.nodes[m] = ctx.c.matrix() * DVector::from_column_slice(x_hat0.as_slice());
        let dx = ctx.delay / cells as f64;
        let literal_angles = (0..cells).map(|j| -ctx.omega.angle(j as f64 * dx)).collect();
        Ok(Self { x_hat: x_hat0, gain, grid, literal_angles })
    }

    /// Current predicted output `U_hat(0, t)`.
    pub fn output(&self) -> &DVector<f64> {
        self.grid.outflow()
    }

    pub fn step<F>(
        &mut self,
        ctx: &ObserverContext,
        y_measured: &DVector<f64>,
        u_of: &F,
        t: f64,
    ) -> Result<DVector<f64>, PdeError>
    where
        F: Fn(f64) -> VelocityInput,
    {
        let y_hat = self.grid.outflow().clone();
        let out_err = y_measured - &y_hat;
        let residual6 = self.gain.inverse() * (self.gain.ct_sigma() * &out_err);
        let residual = StateVector::from_column_slice(residual6.as_slice());

        // Source per interior node: C Φ(x_j, 0) f(t).
        let m = self.grid.cells();
        let dx = self.grid.delta_x();
        let mut sources = Vec::with_capacity(m);
        for j in 0..m {
            let angle = match ctx.phi_window {
                PhiWindow::Literal => self.literal_angles[j],
                PhiWindow::Sliding => -ctx.omega.window(t - j as f64 * dx, t),
            };
            let rotated = rotate_blocks(&residual, angle);
            sources.push(ctx.c.matrix() * DVector::from_column_slice(rotated.as_slice()));
        }

        let inj_angle = match ctx.phi_window {
            PhiWindow::Literal => -ctx.omega.angle(ctx.delay),
            PhiWindow::Sliding => -ctx.omega.window(t - ctx.delay, t),
        };
        let injection = rotate_blocks(&residual, inj_angle);
        self.x_hat = crate::observer::observer_rk4(&self.x_hat, &injection, t, ctx.dt, u_of);
        if !self.x_hat.iter().all(|v| v.is_finite()) {
            return Err(ObserverError::NonFinite { t: t + ctx.dt }.into());
        }
        step_riccati(&mut self.gain, u_of, t, ctx.dt).map_err(ObserverError::Gain)?;

        let boundary = ctx.c.matrix() * DVector::from_column_slice(self.x_hat.as_slice());
        step_transport(&mut self.grid, boundary, &sources, ctx.dt)?;
        Ok(y_hat)
    }
}
