//! Time integration.
//!
//! * [`prefactorize`] / [`step_linear_implicit`]: linear elasticity with a
//!   single factorization of the scheme's constant system matrix.
//! * [`quasistatic_linear_sequence`] / [`QuasiStaticStepper`]: heavily damped
//!   backward Euler, used to produce lagging linear poses for training.
//! * [`NewmarkSolver`]: full nonlinear Newmark with Newton iterations, the
//!   reference simulator.
//!
//! Anchors are imposed by elimination: anchored rows and columns are dropped
//! and replaced by a unit diagonal, and the matching right-hand side entries
//! are zeroed.

use std::io::Write;

use nalgebra::DVector;
use thiserror::Error;

use crate::material::{assemble_stiffness, internal_force, MaterialError, MaterialModel, MaterialParams};
use crate::mesh::{dof_masses, lumped_mass, MeshError, TetMesh};
use crate::sparse::{Cholesky, CscMatrix, FactorError, Lu};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("system has no anchored DOFs; the stiffness has a rigid null space")]
    NoAnchors,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quasi-static sequence did not reach equilibrium in {steps} steps (relative residual {residual:e})")]
    NotConverged { steps: usize, residual: f64 },
    #[error("quasi-static acceleration {accel:e} exceeds bound {bound:e} at step {step}")]
    AccelerationBound { step: usize, accel: f64, bound: f64 },
    #[error("Newton failed after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    BackwardEuler,
    Newmark,
}

pub const NEWMARK_GAMMA: f64 = 0.5;
pub const NEWMARK_BETA: f64 = 0.25;

/// `C = αM + βK`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayleighDamping {
    pub alpha: f64,
    pub beta: f64,
}

impl RayleighDamping {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, DynamicsError> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(DynamicsError::InvalidParameter(format!("Rayleigh coefficients must be non-negative, got ({alpha}, {beta})")));
        }
        Ok(Self { alpha, beta })
    }
}

/// Displacement, velocity and acceleration (3n each) at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
    pub t: f64,
}

impl SimState {
    pub fn rest(n_dofs: usize) -> Self {
        Self { u: DVector::zeros(n_dofs), v: DVector::zeros(n_dofs), a: DVector::zeros(n_dofs), t: 0.0 }
    }
}

/// DOF mask: `true` for the three DOFs of every anchored node.
pub fn anchored_dofs(mesh: &TetMesh) -> Vec<bool> {
    (0..mesh.n_dofs()).map(|k| mesh.is_anchor(k / 3)).collect()
}

/// Zeroes anchored rows and columns and puts 1 on their diagonal.
pub fn apply_anchors(matrix: &CscMatrix, anchored: &[bool]) -> CscMatrix {
    let diag: Vec<usize> = (0..anchored.len()).filter(|&k| anchored[k]).collect();
    matrix.filtered(|r, c| !anchored[r] && !anchored[c], &diag)
}

fn strip_anchors(matrix: &CscMatrix, anchored: &[bool]) -> CscMatrix {
    matrix.filtered(|r, c| !anchored[r] && !anchored[c], &[])
}

pub fn zero_anchored(v: &mut DVector<f64>, anchored: &[bool]) {
    for (k, &a) in anchored.iter().enumerate() {
        if a {
            v[k] = 0.0;
        }
    }
}

fn check_len(v: &DVector<f64>, n: usize) -> Result<(), DynamicsError> {
    if v.len() == n {
        Ok(())
    } else {
        Err(DynamicsError::Dimension { expected: n, got: v.len() })
    }
}

/// Rest stiffness (linear model), lumped DOF masses and anchor mask of a mesh.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub stiffness: CscMatrix,
    pub mass: DVector<f64>,
    pub anchored: Vec<bool>,
}

impl LinearSystem {
    /// Uses the elastic constants of `params` with the linear model.
    pub fn new(mesh: &TetMesh, params: &MaterialParams, density: f64) -> Result<Self, DynamicsError> {
        let linear = params.with_model(MaterialModel::Linear);
        let stiffness = assemble_stiffness(mesh, &linear, &DVector::zeros(mesh.n_dofs()))?;
        let mass = dof_masses(&lumped_mass(mesh, density)?);
        Ok(Self { stiffness, mass, anchored: anchored_dofs(mesh) })
    }

    pub fn n_dofs(&self) -> usize {
        self.mass.len()
    }

    /// Anchored static solve `K u = f`.
    pub fn static_solve(&self, f: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        if !self.anchored.iter().any(|&a| a) {
            return Err(DynamicsError::NoAnchors);
        }
        let chol = Cholesky::factor(&apply_anchors(&self.stiffness, &self.anchored))?;
        let mut b = f.clone();
        zero_anchored(&mut b, &self.anchored);
        Ok(chol.solve(&b))
    }
}

/// Factorized constant system matrix of one scheme, step size and damping.
#[derive(Debug, Clone)]
pub struct Prefactorization {
    chol: Cholesky,
    k_free: CscMatrix,
    mass: DVector<f64>,
    anchored: Vec<bool>,
    damping: RayleighDamping,
    dt: f64,
    scheme: Scheme,
}

impl Prefactorization {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn damping(&self) -> RayleighDamping {
        self.damping
    }

    pub fn n_dofs(&self) -> usize {
        self.mass.len()
    }

    pub fn anchored(&self) -> &[bool] {
        &self.anchored
    }

    /// Number of numeric factorizations this handle performed (always 1).
    pub fn factorization_count(&self) -> usize {
        1
    }

    /// `A⁻¹ b` with anchored entries of `b` ignored.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut rhs = b.clone();
        zero_anchored(&mut rhs, &self.anchored);
        self.chol.solve(&rhs)
    }

    /// Anchored `K x`.
    pub fn stiffness_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.k_free.mul_vec(x)
    }

    fn damping_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = self.k_free.mul_vec(x) * self.damping.beta;
        out += self.mass.component_mul(x) * self.damping.alpha;
        out
    }
}

/// Factorizes `M + dt·C + dt²·K` (backward Euler) or `M + γdt·C + βdt²·K`
/// (Newmark). `mass` holds per-DOF lumped masses.
pub fn prefactorize(
    k: &CscMatrix,
    mass: &DVector<f64>,
    damping: RayleighDamping,
    dt: f64,
    scheme: Scheme,
    anchored: &[bool],
) -> Result<Prefactorization, DynamicsError> {
    let n = k.dim();
    check_len(mass, n)?;
    if anchored.len() != n {
        return Err(DynamicsError::Dimension { expected: n, got: anchored.len() });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    if !anchored.iter().any(|&a| a) {
        return Err(FactorError::NotPositiveDefinite.into());
    }
    let (c1, c2) = match scheme {
        Scheme::BackwardEuler => (dt, dt * dt),
        Scheme::Newmark => (NEWMARK_GAMMA * dt, NEWMARK_BETA * dt * dt),
    };
    let k_free = strip_anchors(k, anchored);
    let m = CscMatrix::from_diagonal(&(mass * (1.0 + c1 * damping.alpha)));
    let a = m.linear_combination(1.0, &k_free, c1 * damping.beta + c2);
    let chol = Cholesky::factor(&apply_anchors(&a, anchored))?;
    Ok(Prefactorization { chol, k_free, mass: mass.clone(), anchored: anchored.to_vec(), damping, dt, scheme })
}

/// One implicit linear step: a single back-substitution, no factorization.
pub fn step_linear_implicit(state: &SimState, f_ext: &DVector<f64>, pf: &Prefactorization) -> Result<SimState, DynamicsError> {
    let n = pf.n_dofs();
    check_len(&state.u, n)?;
    check_len(&state.v, n)?;
    check_len(f_ext, n)?;
    let dt = pf.dt;
    let mut next = match pf.scheme {
        Scheme::BackwardEuler => {
            let rhs = pf.mass.component_mul(&state.v) + (f_ext - pf.stiffness_mul(&state.u)) * dt;
            let v = pf.solve(&rhs);
            let u = &state.u + &v * dt;
            let a = (&v - &state.v) / dt;
            SimState { u, v, a, t: state.t + dt }
        }
        Scheme::Newmark => {
            let (g, b) = (NEWMARK_GAMMA, NEWMARK_BETA);
            let v_pred = &state.v + &state.a * ((1.0 - g) * dt);
            let u_pred = &state.u + &state.v * dt + &state.a * ((0.5 - b) * dt * dt);
            let rhs = f_ext - pf.damping_mul(&v_pred) - pf.stiffness_mul(&u_pred);
            let a = pf.solve(&rhs);
            let u = u_pred + &a * (b * dt * dt);
            let v = v_pred + &a * (g * dt);
            SimState { u, v, a, t: state.t + dt }
        }
    };
    zero_anchored(&mut next.u, &pf.anchored);
    zero_anchored(&mut next.v, &pf.anchored);
    zero_anchored(&mut next.a, &pf.anchored);
    Ok(next)
}

/// Acceleration consistent with `M a = f − C v − K u` for a Newmark start.
pub fn consistent_acceleration(state: &SimState, f_ext: &DVector<f64>, pf: &Prefactorization) -> DVector<f64> {
    let mut a = (f_ext - pf.damping_mul(&state.v) - pf.stiffness_mul(&state.u)).component_div(&pf.mass);
    zero_anchored(&mut a, &pf.anchored);
    a
}

/// Smallest angular frequency of `K φ = ω² M φ` over free DOFs (inverse iteration).
pub fn lowest_frequency(sys: &LinearSystem) -> Result<f64, DynamicsError> {
    if !sys.anchored.iter().any(|&a| a) {
        return Err(DynamicsError::NoAnchors);
    }
    let chol = Cholesky::factor(&apply_anchors(&sys.stiffness, &sys.anchored))?;
    let k_free = strip_anchors(&sys.stiffness, &sys.anchored);
    let n = sys.n_dofs();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    zero_anchored(&mut x, &sys.anchored);
    let mut lambda = f64::INFINITY;
    for _ in 0..200 {
        let mut rhs = sys.mass.component_mul(&x);
        zero_anchored(&mut rhs, &sys.anchored);
        let y = chol.solve(&rhs);
        let m_norm = y.dot(&sys.mass.component_mul(&y)).sqrt();
        x = y / m_norm;
        let next = x.dot(&k_free.mul_vec(&x));
        let done = (lambda - next).abs() <= 1e-10 * next;
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda.sqrt())
}

/// Damping and step size for a strongly overdamped quasi-static march.
///
/// Mass damping gives ratio ≥ `ratio` at the lowest mode and stiffness damping
/// gives ratio ≥ `ratio` at every higher mode.
pub fn overdamped_settings(omega1: f64, ratio: f64) -> (RayleighDamping, f64) {
    let damping = RayleighDamping { alpha: 2.0 * ratio * omega1, beta: 2.0 * ratio / omega1 };
    (damping, 20.0 / omega1)
}

/// One quasi-static linear pose and its linear internal force `K ũ`.
#[derive(Debug, Clone)]
pub struct QuasiStaticPose {
    pub u: DVector<f64>,
    pub f_int: DVector<f64>,
    pub acceleration: f64,
}

/// Overdamped backward-Euler marcher with one factorization.
#[derive(Debug, Clone)]
pub struct QuasiStaticStepper {
    pf: Prefactorization,
    state: SimState,
    omega1: f64,
}

pub const QUASISTATIC_DAMPING_RATIO: f64 = 5.0;

impl QuasiStaticStepper {
    pub fn new(sys: &LinearSystem) -> Result<Self, DynamicsError> {
        let omega1 = lowest_frequency(sys)?;
        let (damping, dt) = overdamped_settings(omega1, QUASISTATIC_DAMPING_RATIO);
        Self::with_settings(sys, damping, dt, omega1)
    }

    pub fn with_settings(sys: &LinearSystem, damping: RayleighDamping, dt: f64, omega1: f64) -> Result<Self, DynamicsError> {
        let pf = prefactorize(&sys.stiffness, &sys.mass, damping, dt, Scheme::BackwardEuler, &sys.anchored)?;
        Ok(Self { state: SimState::rest(sys.n_dofs()), pf, omega1 })
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }

    pub fn prefactorization(&self) -> &Prefactorization {
        &self.pf
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = SimState::rest(self.pf.n_dofs());
    }

    /// Restarts from a given displacement at rest.
    pub fn set_displacement(&mut self, u: DVector<f64>) {
        let n = u.len();
        self.state = SimState { u, v: DVector::zeros(n), a: DVector::zeros(n), t: self.state.t };
    }

    pub fn step(&mut self, f_ext: &DVector<f64>) -> Result<QuasiStaticPose, DynamicsError> {
        let next = step_linear_implicit(&self.state, f_ext, &self.pf)?;
        let accel = next.a.amax();
        self.state = next;
        Ok(QuasiStaticPose { f_int: self.pf.stiffness_mul(&self.state.u), u: self.state.u.clone(), acceleration: accel })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuasiStaticSettings {
    /// Relative distance to the static solution at which the march stops.
    pub tol: f64,
    /// Optional cap on the largest DOF acceleration of any step.
    pub accel_bound: Option<f64>,
}

impl Default for QuasiStaticSettings {
    fn default() -> Self {
        Self { tol: 1e-7, accel_bound: None }
    }
}

/// Overdamped march under the full load `f_ext` from rest until
/// `‖ũ − K⁻¹f‖ ≤ tol·‖K⁻¹f‖`, at most `max_steps` steps.
pub fn quasistatic_linear_sequence(
    mesh: &TetMesh,
    params: &MaterialParams,
    density: f64,
    f_ext: &DVector<f64>,
    max_steps: usize,
    settings: QuasiStaticSettings,
) -> Result<Vec<QuasiStaticPose>, DynamicsError> {
    if max_steps == 0 {
        return Err(DynamicsError::InvalidParameter("n_steps must be at least 1".into()));
    }
    mesh.require_anchors()?;
    let sys = LinearSystem::new(mesh, params, density)?;
    check_len(f_ext, sys.n_dofs())?;
    let target = sys.static_solve(f_ext)?;
    let scale = target.norm();
    let mut stepper = QuasiStaticStepper::new(&sys)?;
    let mut poses = Vec::new();
    for step in 0..max_steps {
        let pose = stepper.step(f_ext)?;
        if let Some(bound) = settings.accel_bound {
            if pose.acceleration > bound {
                return Err(DynamicsError::AccelerationBound { step, accel: pose.acceleration, bound });
            }
        }
        let gap = (&pose.u - &target).norm();
        poses.push(pose);
        if gap <= settings.tol * scale {
            return Ok(poses);
        }
    }
    let last = &poses[poses.len() - 1].u;
    Err(DynamicsError::NotConverged { steps: max_steps, residual: (last - &target).norm() / scale })
}

/// Newton settings shared by the nonlinear solvers.
#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-6, abs_tol: 1e-10, max_iters: 50 }
    }
}

/// Factorizes a tangent system, falling back to LU when it is not SPD.
pub(crate) enum TangentSolver {
    Chol(Cholesky),
    Lu(Lu),
}

impl TangentSolver {
    pub(crate) fn factor(a: &CscMatrix) -> Result<Self, FactorError> {
        match Cholesky::factor(a) {
            Ok(c) => Ok(Self::Chol(c)),
            Err(FactorError::NotPositiveDefinite) => Ok(Self::Lu(Lu::factor(a)?)),
            Err(e) => Err(e),
        }
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, FactorError> {
        match self {
            Self::Chol(c) => Ok(c.solve(b)),
            Self::Lu(l) => l.solve(b),
        }
    }
}

/// Nonlinear Newmark (γ = 1/2, β = 1/4) integrator; the reference simulator.
///
/// Rayleigh damping uses the rest stiffness `K₀`.
#[derive(Debug, Clone)]
pub struct NewmarkSolver {
    mesh: TetMesh,
    params: MaterialParams,
    mass: DVector<f64>,
    k0_free: CscMatrix,
    anchored: Vec<bool>,
    damping: RayleighDamping,
    dt: f64,
    pub newton: NewtonSettings,
}

impl NewmarkSolver {
    pub fn new(mesh: &TetMesh, params: &MaterialParams, density: f64, damping: RayleighDamping, dt: f64) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        mesh.require_anchors()?;
        let sys = LinearSystem::new(mesh, params, density)?;
        let anchored = sys.anchored.clone();
        Ok(Self {
            mesh: mesh.clone(),
            params: *params,
            k0_free: strip_anchors(&sys.stiffness, &anchored),
            mass: sys.mass,
            anchored,
            damping,
            dt,
            newton: NewtonSettings::default(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mass(&self) -> &DVector<f64> {
        &self.mass
    }

    fn damping_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        self.k0_free.mul_vec(x) * self.damping.beta + self.mass.component_mul(x) * self.damping.alpha
    }

    pub fn step(&self, state: &SimState, f_ext: &DVector<f64>) -> Result<SimState, DynamicsError> {
        let n = self.mass.len();
        check_len(&state.u, n)?;
        check_len(f_ext, n)?;
        let (g, b, dt) = (NEWMARK_GAMMA, NEWMARK_BETA, self.dt);
        let u_pred = &state.u + &state.v * dt + &state.a * ((0.5 - b) * dt * dt);
        let v_pred = &state.v + &state.a * ((1.0 - g) * dt);
        let kinematics = |u: &DVector<f64>| {
            let a = (u - &u_pred) / (b * dt * dt);
            let v = &v_pred + &a * (g * dt);
            (a, v)
        };
        let residual = |u: &DVector<f64>| -> Result<DVector<f64>, MaterialError> {
            let (a, v) = kinematics(u);
            let mut r = self.mass.component_mul(&a) + self.damping_mul(&v) + internal_force(&self.mesh, &self.params, u)? - f_ext;
            zero_anchored(&mut r, &self.anchored);
            Ok(r)
        };
        let tol = (self.newton.rel_tol * f_ext.norm()).max(self.newton.abs_tol);
        let mut u = state.u.clone();
        let mut r = residual(&u)?;
        let mut iters = 0;
        while r.norm() > tol {
            if iters == self.newton.max_iters {
                return Err(DynamicsError::NewtonFailed { iterations: iters, residual: r.norm() });
            }
            iters += 1;
            // Jacobian scaled by β dt²: M + γ dt C + β dt² K_t
            let kt = strip_anchors(&assemble_stiffness(&self.mesh, &self.params, &u)?, &self.anchored);
            let m = CscMatrix::from_diagonal(&(&self.mass * (1.0 + g * dt * self.damping.alpha)));
            let jac = m
                .linear_combination(1.0, &self.k0_free, g * dt * self.damping.beta)
                .linear_combination(1.0, &kt, b * dt * dt);
            let solver = TangentSolver::factor(&apply_anchors(&jac, &self.anchored))?;
            let du = solver.solve(&(-&r * (b * dt * dt)))?;
            let r0 = r.norm();
            let mut s = 1.0;
            loop {
                let trial = &u + &du * s;
                match residual(&trial) {
                    Ok(rt) if rt.norm() < r0 || s < 1e-3 && rt.norm() < 2.0 * r0 => {
                        u = trial;
                        r = rt;
                        break;
                    }
                    _ if s < 1e-12 => {
                        return Err(DynamicsError::NewtonFailed { iterations: iters, residual: r0 });
                    }
                    _ => s *= 0.5,
                }
            }
            if du.norm() * s <= 1e-14 * (1.0 + u.norm()) {
                break;
            }
        }
        let (mut a, mut v) = kinematics(&u);
        zero_anchored(&mut u, &self.anchored);
        zero_anchored(&mut v, &self.anchored);
        zero_anchored(&mut a, &self.anchored);
        Ok(SimState { u, v, a, t: state.t + dt })
    }

    /// Acceleration satisfying the equation of motion at `state`.
    pub fn consistent_acceleration(&self, state: &SimState, f_ext: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        let f = f_ext - self.damping_mul(&state.v) - internal_force(&self.mesh, &self.params, &state.u)?;
        let mut a = f.component_div(&self.mass);
        zero_anchored(&mut a, &self.anchored);
        Ok(a)
    }

    /// Kinetic plus elastic energy.
    pub fn energy(&self, state: &SimState) -> Result<f64, DynamicsError> {
        let kinetic = 0.5 * state.v.dot(&self.mass.component_mul(&state.v));
        Ok(kinetic + crate::material::total_energy(&self.mesh, &self.params, &state.u)?)
    }
}

/// Reference-simulator step; see [`NewmarkSolver::step`].
pub fn step_newmark_nonlinear(solver: &NewmarkSolver, state: &SimState, f_ext: &DVector<f64>) -> Result<SimState, DynamicsError> {
    solver.step(state, f_ext)
}

/// Writes `t,node,ux,uy,uz` rows for the tracked nodes of each state.
pub fn write_trajectory_csv<W: Write>(mut w: W, states: &[SimState], nodes: &[usize]) -> std::io::Result<()> {
    writeln!(w, "t,node,ux,uy,uz")?;
    for s in states {
        for &i in nodes {
            writeln!(w, "{},{},{},{},{}", s.t, i, s.u[3 * i], s.u[3 * i + 1], s.u[3 * i + 2])?;
        }
    }
    Ok(())
}
