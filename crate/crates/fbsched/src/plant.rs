//! Inverted-pendulum dynamics, sampled-data discretization, and LQG design.
//!
//! The linearized pendulum around the upright equilibrium is
//!
//!   dx = [[0, 1], [w0^2, 0]] x dt + [0, w0^2]' u dt + [0, 1]' dv
//!   y  = [1, 0] x + e
//!
//! with process-noise intensity 1/w0 on the angular acceleration and
//! measurement-noise variance 1e-4. For a sampling period h the plant,
//! the noise covariance, and the continuous quadratic cost
//! integral(y^2 + u^2) dt are discretized exactly through augmented matrix
//! exponentials, and a discrete LQG controller (state feedback plus a
//! current estimator) is designed for that period.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, RowVector2, Vector2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("non-positive natural frequency {0}")]
    NonPositiveOmega(f64),
    #[error("non-positive sampling period {0}")]
    NonPositivePeriod(f64),
    #[error("non-positive integration step {0}")]
    NonPositiveDt(f64),
    #[error("Riccati iteration still at residual {residual} after {iterations} steps")]
    RiccatiDivergence { iterations: usize, residual: f64 },
}

/// Variance of the position measurement noise.
pub const MEASUREMENT_NOISE_VAR: f64 = 1e-4;

/// Continuous-time linearized inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumModel {
    /// Natural frequency w0 = sqrt(g/l) in rad/s.
    pub omega0: f64,
}

impl PendulumModel {
    pub fn new(omega0: f64) -> Self {
        Self { omega0 }
    }

    pub fn a_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(0.0, 1.0, self.omega0 * self.omega0, 0.0)
    }

    pub fn b_vector(&self) -> Vector2<f64> {
        Vector2::new(0.0, self.omega0 * self.omega0)
    }

    pub fn c_vector(&self) -> RowVector2<f64> {
        RowVector2::new(1.0, 0.0)
    }

    /// Intensity of the white noise driving the angular acceleration;
    /// longer (slower) pendulums are disturbed harder.
    pub fn process_noise_intensity(&self) -> f64 {
        1.0 / self.omega0
    }

    fn validate(&self) -> Result<(), PlantError> {
        if !(self.omega0 > 0.0) {
            return Err(PlantError::NonPositiveOmega(self.omega0));
        }
        Ok(())
    }

    /// One deterministic RK4 step of dx/dt = Ax + Bu with u held.
    pub fn step(&self, x: &Vector2<f64>, u: f64, dt: f64) -> Result<Vector2<f64>, PlantError> {
        if !(dt > 0.0) {
            return Err(PlantError::NonPositiveDt(dt));
        }
        let a = self.a_matrix();
        let b = self.b_vector();
        let deriv = |x: &Vector2<f64>| a * x + b * u;
        let k1 = deriv(x);
        let k2 = deriv(&(x + k1 * (dt / 2.0)));
        let k3 = deriv(&(x + k2 * (dt / 2.0)));
        let k4 = deriv(&(x + k3 * dt));
        Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
    }

    /// RK4 step plus the process-noise increment on the velocity, with
    /// `xi` a standard normal draw supplied by the caller.
    pub fn step_with_noise(
        &self,
        x: &Vector2<f64>,
        u: f64,
        dt: f64,
        xi: f64,
    ) -> Result<Vector2<f64>, PlantError> {
        let mut next = self.step(x, u, dt)?;
        next[1] += (self.process_noise_intensity() * dt).sqrt() * xi;
        Ok(next)
    }

    /// Exact zero-order-hold discretization at period `h`, together with
    /// the discrete process-noise covariance and the lifted cost matrices.
    pub fn discretize(&self, h: f64) -> Result<DiscretePlant, PlantError> {
        self.validate()?;
        if !(h > 0.0) {
            return Err(PlantError::NonPositivePeriod(h));
        }
        let a = self.a_matrix();
        let b = self.b_vector();

        // [phi, gamma; 0, 1] = exp([A, B; 0, 0] h)
        let mut f = DMatrix::zeros(3, 3);
        f.view_mut((0, 0), (2, 2)).copy_from(&a);
        f.view_mut((0, 2), (2, 1)).copy_from(&b);
        let ef = expm(&(f.clone() * h));
        let phi = Matrix2::from(ef.fixed_view::<2, 2>(0, 0));
        let gamma = Vector2::from(ef.fixed_view::<2, 1>(0, 2));

        // noise_cov = integral over [0, h] of exp(As) G Rv G' exp(A's) ds,
        // from exp([-A, G Rv G'; 0, A'] h) = [., M12; 0, M22] as M22' M12.
        let g_rv_gt = Matrix2::new(0.0, 0.0, 0.0, self.process_noise_intensity());
        let mut n = DMatrix::zeros(4, 4);
        n.view_mut((0, 0), (2, 2)).copy_from(&(-a));
        n.view_mut((0, 2), (2, 2)).copy_from(&g_rv_gt);
        n.view_mut((2, 2), (2, 2)).copy_from(&a.transpose());
        let en = expm(&(n * h));
        let m12 = Matrix2::from(en.fixed_view::<2, 2>(0, 2));
        let m22 = Matrix2::from(en.fixed_view::<2, 2>(2, 2));
        let noise_cov = symmetrize(&(m22.transpose() * m12));

        // Lift the continuous cost x'C'Cx + u^2 over one hold interval:
        // W = integral of exp(F's) blkdiag(C'C, 1) exp(Fs) ds, from
        // exp([-F', Qa; 0, F] h); partition W into Q1, Q12, Q2.
        let c = self.c_vector();
        let mut qa = DMatrix::zeros(3, 3);
        qa.view_mut((0, 0), (2, 2))
            .copy_from(&(c.transpose() * c));
        qa[(2, 2)] = 1.0;
        let mut w6 = DMatrix::zeros(6, 6);
        w6.view_mut((0, 0), (3, 3)).copy_from(&(-f.transpose()));
        w6.view_mut((0, 3), (3, 3)).copy_from(&qa);
        w6.view_mut((3, 3), (3, 3)).copy_from(&f);
        let ew = expm(&(w6 * h));
        let w12 = ew.view((0, 3), (3, 3)).into_owned();
        let w22 = ew.view((3, 3), (3, 3)).into_owned();
        let w = w22.transpose() * w12;
        let q1 = symmetrize(&Matrix2::from(w.fixed_view::<2, 2>(0, 0)));
        let q12 = Vector2::from(w.fixed_view::<2, 1>(0, 2));
        let q2 = w[(2, 2)];

        Ok(DiscretePlant {
            h,
            phi,
            gamma,
            noise_cov,
            q1,
            q12,
            q2,
        })
    }
}

/// Matrix exponential by scaling and squaring with a Taylor series.
///
/// The argument is halved until its infinity norm is below 1/2, the series
/// is summed until a term falls under 1e-14 of the running sum, and the
/// result is squared back up.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = a.amax() * n as f64; // cheap upper bound on the infinity norm
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);

    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=120 {
        term = (&term * &scaled) / k as f64;
        sum += &term;
        if term.amax() <= 1e-14 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn symmetrize(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// The pendulum sampled at a fixed period.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub h: f64,
    pub phi: Matrix2<f64>,
    pub gamma: Vector2<f64>,
    /// Covariance of the process noise accumulated over one period.
    pub noise_cov: Matrix2<f64>,
    /// State block of the lifted cost.
    pub q1: Matrix2<f64>,
    /// State/input cross block of the lifted cost.
    pub q12: Vector2<f64>,
    /// Input block of the lifted cost.
    pub q2: f64,
}

/// LQG gains for one (pendulum, period) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgDesign {
    pub model: PendulumModel,
    pub plant: DiscretePlant,
    /// State-feedback gain: u = -K x_hat.
    pub k_gain: RowVector2<f64>,
    /// Current-estimator measurement gain.
    pub l_gain: Vector2<f64>,
    /// Stationary control Riccati solution.
    pub cost_to_go: Matrix2<f64>,
    /// Stationary one-step-ahead estimation-error covariance.
    pub est_cov: Matrix2<f64>,
}

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITERS: usize = 10_000;

/// Design the discrete LQG controller for `model` sampled at `h`.
///
/// Both Riccati equations are solved by fixed-point iteration to an
/// elementwise residual of 1e-10; the control one carries the cross term
/// of the lifted cost.
pub fn design_lqg(model: &PendulumModel, h: f64) -> Result<LqgDesign, PlantError> {
    let plant = model.discretize(h)?;
    let phi = plant.phi;
    let gamma = plant.gamma;
    let (q1, q12, q2) = (plant.q1, plant.q12, plant.q2);

    // Control Riccati with cross term.
    let mut s = q1;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let denom = q2 + (gamma.transpose() * s * gamma)[(0, 0)];
        let lin = (gamma.transpose() * s * phi).transpose() + q12; // column form
        let next = symmetrize(&(phi.transpose() * s * phi - lin * lin.transpose() / denom + q1));
        residual = (next - s).amax();
        s = next;
        if residual <= RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PlantError::RiccatiDivergence {
            iterations: RICCATI_MAX_ITERS,
            residual,
        });
    }
    let denom = q2 + (gamma.transpose() * s * gamma)[(0, 0)];
    let k_gain = ((gamma.transpose() * s * phi) + q12.transpose()) / denom;

    // Filter Riccati for the one-step-ahead error covariance.
    let c = model.c_vector();
    let r1 = plant.noise_cov;
    let mut p = r1;
    converged = false;
    for _ in 0..RICCATI_MAX_ITERS {
        let innov = (c * p * c.transpose())[(0, 0)] + MEASUREMENT_NOISE_VAR;
        let pc = p * c.transpose();
        let next = symmetrize(&(phi * (p - pc * pc.transpose() / innov) * phi.transpose() + r1));
        residual = (next - p).amax();
        p = next;
        if residual <= RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PlantError::RiccatiDivergence {
            iterations: RICCATI_MAX_ITERS,
            residual,
        });
    }
    let innov = (c * p * c.transpose())[(0, 0)] + MEASUREMENT_NOISE_VAR;
    let l_gain = p * c.transpose() / innov;

    Ok(LqgDesign {
        model: *model,
        plant,
        k_gain,
        l_gain,
        cost_to_go: s,
        est_cov: p,
    })
}

/// Memoizes [`design_lqg`] over (w0, h) pairs so that a feedback scheduler
/// revisiting the same period pays for the Riccati solves only once.
#[derive(Debug, Default)]
pub struct LqgCache {
    map: HashMap<(u64, u64), Arc<LqgDesign>>,
}

impl LqgCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn design(&mut self, model: &PendulumModel, h: f64) -> Result<Arc<LqgDesign>, PlantError> {
        // Periods within the same 0.1 ms bucket share a design; the
        // scheduler retunes every few hundred milliseconds and gains move
        // negligibly over so small a period difference.
        let key = (model.omega0.to_bits(), (h * 10_000.0).round() as u64);
        if let Some(hit) = self.map.get(&key) {
            return Ok(hit.clone());
        }
        let design = Arc::new(design_lqg(model, h)?);
        self.map.insert(key, design.clone());
        Ok(design)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Runtime state of one loop's controller: the current-estimator
/// prediction plus the gains it runs with.
#[derive(Debug, Clone)]
pub struct Controller {
    pub design: Arc<LqgDesign>,
    /// One-step-ahead state prediction x_bar.
    pub x_pred: Vector2<f64>,
}

impl Controller {
    pub fn new(design: Arc<LqgDesign>) -> Self {
        Self {
            design,
            x_pred: Vector2::zeros(),
        }
    }

    /// Consume one measurement and produce the next held control value:
    /// measurement update, feedback, then time update.
    pub fn step(&mut self, y: f64) -> f64 {
        let d = &self.design;
        let c = d.model.c_vector();
        let innovation = y - (c * self.x_pred)[(0, 0)];
        let x_hat = self.x_pred + d.l_gain * innovation;
        let u = -(d.k_gain * x_hat)[(0, 0)];
        self.x_pred = d.plant.phi * x_hat + d.plant.gamma * u;
        u
    }

    /// Switch to gains for a new period, carrying the prediction across;
    /// the estimate is still the best information available at the switch.
    pub fn retarget(&mut self, design: Arc<LqgDesign>) {
        self.design = design;
    }
}
