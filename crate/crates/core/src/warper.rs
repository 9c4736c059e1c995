//! Runtime warping: DeepWarp stepping plus the modal-warping and
//! rotation-strain-warping baselines, and a side-by-side comparison driver.

use std::str::FromStr;

use nalgebra::DVector;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dynamics::{
    consistent_acceleration, prefactorize, step_linear_implicit, DynamicsError, LinearSystem, NewmarkSolver, Prefactorization, RayleighDamping,
    Scheme, SimState,
};
use crate::features::{
    align_kinematics, assemble_feature, geodesic_all, static_features_with, FeatureError, FeatureVector, ForceField, StaticFeatures, FEATURE_NAMES,
};
use crate::linalg::{exp_so3, node_vec, set_node_vec, sym, Mat3, Vec3};
use crate::material::{MaterialModel, MaterialParams};
use crate::mesh::{lumped_mass, TetMesh};
use crate::net::Network;
use crate::registration::{rotation_from_vector, GradientOperator, RegistrationError};
use crate::sparse::{Cholesky, FactorError, TripletBuilder};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("network feature order {0:?} does not match the expected inputs")]
    FeatureOrder(Vec<String>),
    #[error("mesh has no anchors; the warp is undetermined")]
    NoAnchors,
    #[error("method {0} needs a trained network")]
    MissingNetwork(&'static str),
    #[error("ground truth diverged at step {step}: {source}")]
    GroundTruth { step: usize, source: DynamicsError },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 1..=n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p2) / k as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const MW_POINTS: usize = 32;

/// `∫₀¹ exp(τ[w]×) dτ` by 32-point Gauss–Legendre quadrature.
pub fn mw_matrix(w: &Vec3) -> Mat3 {
    if *w == Vec3::zeros() {
        return Mat3::identity();
    }
    thread_local! {
        static RULE: (Vec<f64>, Vec<f64>) = gauss_legendre(MW_POINTS);
    }
    RULE.with(|(x, wt)| x.iter().zip(wt).map(|(xi, wi)| exp_so3(&(w * (0.5 * (xi + 1.0)))) * (0.5 * wi)).sum())
}

/// Modal warping: `u_i = W_MW(w_i) ũ_i`, anchored nodes zero.
pub fn mw_warp(mesh: &TetMesh, op: &GradientOperator, u_lin: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u_lin.len());
    for i in 0..mesh.n_nodes() {
        if !mesh.is_anchor(i) {
            let w = op.kinematics(u_lin, i).w;
            set_node_vec(&mut out, i, &(mw_matrix(&w) * node_vec(u_lin, i)));
        }
    }
    out
}

/// Rotation-strain warping with an anchored least-squares reconstruction.
///
/// Each node's gradient target `exp([w]×)(S + I) − I` is fitted by the
/// displacement field minimizing `Σ_i ‖G_i(u) − Ĝ_i‖²` with anchors at zero.
/// The normal matrix is factorized once at construction.
#[derive(Debug, Clone)]
pub struct RswWarper {
    mesh: TetMesh,
    op: GradientOperator,
    chol: Cholesky,
}

impl RswWarper {
    pub fn new(mesh: &TetMesh) -> Result<Self, WarpError> {
        if mesh.anchors().is_empty() {
            return Err(WarpError::NoAnchors);
        }
        let op = GradientOperator::new(mesh)?;
        let n = mesh.n_nodes();
        let mut tb = TripletBuilder::new(n);
        for i in 0..n {
            for d in 0..3 {
                let row = Self::row(&op, i, d);
                for &(a, va) in &row {
                    for &(b, vb) in &row {
                        if !mesh.is_anchor(a) && !mesh.is_anchor(b) {
                            tb.push(a, b, va * vb);
                        }
                    }
                }
            }
        }
        for &a in mesh.anchors() {
            tb.push(a, a, 1.0);
        }
        let chol = Cholesky::factor(&tb.build())?;
        Ok(Self { mesh: mesh.clone(), op, chol })
    }

    /// Coefficients of column `d` of `G_i` as a linear form in one displacement component.
    fn row(op: &GradientOperator, i: usize, d: usize) -> Vec<(usize, f64)> {
        let c = op.coefficients(i);
        let mut row: Vec<(usize, f64)> = c.iter().map(|(j, cj)| (*j, cj[d])).collect();
        row.push((i, -c.iter().map(|(_, cj)| cj[d]).sum::<f64>()));
        row
    }

    pub fn gradient_operator(&self) -> &GradientOperator {
        &self.op
    }

    pub fn warp(&self, u_lin: &DVector<f64>) -> DVector<f64> {
        let n = self.mesh.n_nodes();
        let targets: Vec<Mat3> = (0..n)
            .map(|i| {
                let k = self.op.kinematics(u_lin, i);
                exp_so3(&k.w) * (sym(&k.g) + Mat3::identity()) - Mat3::identity()
            })
            .collect();
        let mut out = DVector::zeros(3 * n);
        for comp in 0..3 {
            let mut rhs = DVector::zeros(n);
            for (i, g) in targets.iter().enumerate() {
                for d in 0..3 {
                    for (a, va) in Self::row(&self.op, i, d) {
                        rhs[a] += va * g[(comp, d)];
                    }
                }
            }
            for &a in self.mesh.anchors() {
                rhs[a] = 0.0;
            }
            let x = self.chol.solve(&rhs);
            for i in 0..n {
                out[3 * i + comp] = if self.mesh.is_anchor(i) { 0.0 } else { x[i] };
            }
        }
        out
    }
}

/// One-shot [`RswWarper`].
pub fn rsw_warp(mesh: &TetMesh, u_lin: &DVector<f64>) -> Result<DVector<f64>, WarpError> {
    Ok(RswWarper::new(mesh)?.warp(u_lin))
}

/// A linear displacement corrected by the network.
#[derive(Debug, Clone)]
pub struct Correction {
    pub u: DVector<f64>,
    /// Per-node rotation vectors of the input `ũ`.
    pub w: Vec<Vec3>,
    /// Nodes with a standardized feature beyond the extrapolation factor.
    pub extrapolated: usize,
}

/// Everything a DeepWarp simulation needs between steps.
#[derive(Debug, Clone)]
pub struct WarpContext {
    mesh: TetMesh,
    pf: Prefactorization,
    op: GradientOperator,
    geo: crate::features::Geodesics,
    net: Network,
    poisson: f64,
    field: ForceField,
    statics: Vec<StaticFeatures>,
    rest_output: Vec<Vec3>,
    rotations: Vec<Mat3>,
    warned: bool,
    /// Standardized features beyond this many deviations raise the extrapolation flag.
    pub extrapolation_factor: f64,
    pub last_extrapolated: usize,
}

impl WarpContext {
    /// Builds the linear system with the elastic constants of `params` and
    /// factorizes it once.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &TetMesh,
        params: &MaterialParams,
        density: f64,
        damping: RayleighDamping,
        dt: f64,
        scheme: Scheme,
        net: Network,
        field: ForceField,
    ) -> Result<Self, WarpError> {
        let sys = LinearSystem::new(mesh, params, density)?;
        let pf = prefactorize(&sys.stiffness, &sys.mass, damping, dt, scheme, &sys.anchored)?;
        Self::with_prefactorization(mesh, pf, net, field, params.poisson)
    }

    pub fn with_prefactorization(mesh: &TetMesh, pf: Prefactorization, net: Network, field: ForceField, poisson: f64) -> Result<Self, WarpError> {
        if net.mlp.spec().feature_order.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(WarpError::FeatureOrder(net.mlp.spec().feature_order.clone()));
        }
        if mesh.anchors().is_empty() {
            return Err(WarpError::NoAnchors);
        }
        let op = GradientOperator::new(mesh)?;
        let geo = geodesic_all(mesh)?;
        let mut ctx = Self {
            mesh: mesh.clone(),
            pf,
            op,
            geo,
            net,
            poisson,
            field,
            statics: Vec::new(),
            rest_output: Vec::new(),
            rotations: vec![Mat3::identity(); mesh.n_nodes()],
            warned: false,
            extrapolation_factor: 6.0,
            last_extrapolated: 0,
        };
        ctx.set_field(field);
        Ok(ctx)
    }

    /// Switches the load descriptor; static features and the rest calibration
    /// are recomputed, nothing is refactorized.
    pub fn set_field(&mut self, field: ForceField) {
        self.field = field;
        self.statics = static_features_with(&self.mesh, &self.geo, &field);
        let rest = crate::features::AlignedKinematics { m_u: 0.0, m_w: 0.0, theta: 0.0, q: Mat3::identity() };
        let xs: Vec<FeatureVector> = self.statics.iter().map(|s| assemble_feature(s, &rest, self.poisson)).collect();
        self.rest_output = self.net.predict_batch(&xs);
    }

    pub fn reset(&mut self) {
        self.rotations.iter_mut().for_each(|r| *r = Mat3::identity());
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn prefactorization(&self) -> &Prefactorization {
        &self.pf
    }

    pub fn field(&self) -> &ForceField {
        &self.field
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn rotations(&self) -> &[Mat3] {
        &self.rotations
    }

    /// Network correction of a linear displacement: `u_i = ũ_i + Qᵀ(N(x_i) − N(x_i⁰))`.
    pub fn correct(&self, u_lin: &DVector<f64>) -> Correction {
        let n = self.mesh.n_nodes();
        let w = self.op.rotation_vectors(u_lin);
        let free: Vec<usize> = (0..n).filter(|&i| !self.mesh.is_anchor(i)).collect();
        let mut qs = Vec::with_capacity(free.len());
        let mut xs = Vec::with_capacity(free.len());
        for &i in &free {
            let a = align_kinematics(&node_vec(u_lin, i), &w[i]);
            qs.push(a.q);
            xs.push(assemble_feature(&self.statics[i], &a, self.poisson));
        }
        let st = &self.net.standardization;
        let extrapolated = xs
            .iter()
            .filter(|x| st.apply(x).iter().any(|z| z.abs() > self.extrapolation_factor))
            .count();
        let out = self.net.predict_batch(&xs);
        let mut u = DVector::zeros(u_lin.len());
        for (k, &i) in free.iter().enumerate() {
            let delta = qs[k].transpose() * (out[k] - self.rest_output[i]);
            set_node_vec(&mut u, i, &(node_vec(u_lin, i) + delta));
        }
        Correction { u, w, extrapolated }
    }
}

/// One DeepWarp step: un-rotate the load with last step's rotations, take one
/// pre-factorized linear step, correct every node, refresh the rotations.
///
/// Returns the new linear state and the corrected displacement.
pub fn deepwarp_step(ctx: &mut WarpContext, state: &SimState, f_ext: &DVector<f64>) -> Result<(SimState, DVector<f64>), WarpError> {
    let mut f_hat = DVector::zeros(f_ext.len());
    for (i, r) in ctx.rotations.iter().enumerate() {
        set_node_vec(&mut f_hat, i, &(r.transpose() * node_vec(f_ext, i)));
    }
    let next = step_linear_implicit(state, &f_hat, &ctx.pf)?;
    let c = ctx.correct(&next.u);
    ctx.last_extrapolated = c.extrapolated;
    if c.extrapolated > 0 && !ctx.warned {
        log::warn!("{} nodes have features outside the trained range at t = {}", c.extrapolated, next.t);
        ctx.warned = true;
    }
    for (i, w) in c.w.iter().enumerate() {
        ctx.rotations[i] = if ctx.mesh.is_anchor(i) { Mat3::identity() } else { rotation_from_vector(w) };
    }
    Ok((next, c.u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GroundTruth,
    Linear,
    Mw,
    Rsw,
    DeepWarp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::GroundTruth, Method::Linear, Method::Mw, Method::Rsw, Method::DeepWarp];

    pub fn name(self) -> &'static str {
        match self {
            Method::GroundTruth => "groundtruth",
            Method::Linear => "linear",
            Method::Mw => "mw",
            Method::Rsw => "rsw",
            Method::DeepWarp => "deepwarp",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method '{s}' (expected one of linear, mw, rsw, deepwarp, groundtruth)"))
    }
}

/// A load field with a per-step magnitude schedule.
#[derive(Debug, Clone)]
pub struct LoadScript {
    pub field: ForceField,
    pub magnitudes: Vec<f64>,
}

impl LoadScript {
    pub fn constant(field: ForceField, steps: usize) -> Self {
        Self { magnitudes: vec![field.magnitude; steps], field }
    }

    /// Load held for `hold` steps, then released.
    pub fn release(field: ForceField, hold: usize, steps: usize) -> Self {
        Self { magnitudes: (0..steps).map(|k| if k < hold { field.magnitude } else { 0.0 }).collect(), field }
    }

    pub fn steps(&self) -> usize {
        self.magnitudes.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimSetup {
    pub params: MaterialParams,
    pub density: f64,
    pub damping: RayleighDamping,
    pub dt: f64,
    /// Scheme of the linear-based methods; the ground truth is always Newmark.
    pub scheme: Scheme,
}

/// Output displacements of `method`, one per step. `states[k].u` is the
/// method's displacement; velocities belong to the underlying integrator.
pub fn simulate_method(
    mesh: &TetMesh,
    setup: &SimSetup,
    method: Method,
    script: &LoadScript,
    net: Option<&Network>,
) -> Result<Vec<SimState>, WarpError> {
    let node_mass = lumped_mass(mesh, setup.density)?;
    let unit = script.field.with_magnitude(1.0).nodal_forces(mesh, &node_mass);
    let force = |k: usize| &unit * script.magnitudes[k];
    let n = mesh.n_dofs();
    let mut out = Vec::with_capacity(script.steps());
    if script.steps() == 0 {
        return Ok(out);
    }
    if method == Method::GroundTruth {
        let solver = NewmarkSolver::new(mesh, &setup.params, setup.density, setup.damping, setup.dt)?;
        let mut s = SimState::rest(n);
        s.a = solver.consistent_acceleration(&s, &force(0))?;
        for k in 0..script.steps() {
            s = solver.step(&s, &force(k)).map_err(|source| WarpError::GroundTruth { step: k, source })?;
            out.push(s.clone());
        }
        return Ok(out);
    }
    let sys = LinearSystem::new(mesh, &setup.params, setup.density)?;
    let pf = prefactorize(&sys.stiffness, &sys.mass, setup.damping, setup.dt, setup.scheme, &sys.anchored)?;
    let mut s = SimState::rest(n);
    if method == Method::DeepWarp {
        let net = net.ok_or(WarpError::MissingNetwork("deepwarp"))?.clone();
        let mut ctx = WarpContext::with_prefactorization(mesh, pf, net, script.field, setup.params.poisson)?;
        s.a = consistent_acceleration(&s, &force(0), ctx.prefactorization());
        for k in 0..script.steps() {
            let (next, u) = deepwarp_step(&mut ctx, &s, &force(k))?;
            out.push(SimState { u, ..next.clone() });
            s = next;
        }
        return Ok(out);
    }
    let (rsw, op) = match method {
        Method::Rsw => (Some(RswWarper::new(mesh)?), None),
        Method::Mw => (None, Some(GradientOperator::new(mesh)?)),
        _ => (None, None),
    };
    s.a = consistent_acceleration(&s, &force(0), &pf);
    for k in 0..script.steps() {
        s = step_linear_implicit(&s, &force(k), &pf)?;
        let u = match (&rsw, &op) {
            (Some(r), _) => r.warp(&s.u),
            (_, Some(op)) => mw_warp(mesh, op, &s.u),
            _ => s.u.clone(),
        };
        out.push(SimState { u, ..s.clone() });
    }
    Ok(out)
}

/// `‖u − u_ref‖ / ‖u_ref‖`, or the absolute gap when the reference vanishes.
pub fn relative_l2(u: &DVector<f64>, u_ref: &DVector<f64>) -> f64 {
    let gap = (u - u_ref).norm();
    let scale = u_ref.norm();
    if scale > 0.0 {
        gap / scale
    } else {
        gap
    }
}

/// Strongest non-DC frequency (Hz) of a uniformly sampled signal, refined by
/// parabolic interpolation of the log spectrum around the peak bin.
pub fn dominant_frequency(signal: &[f64], dt: f64) -> Option<f64> {
    let n = signal.len();
    if n < 4 {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    let (k, &peak) = mag.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0) {
        return None;
    }
    let mut bin = k as f64;
    if k + 1 < mag.len() && mag[k - 1] > 0.0 && mag[k + 1] > 0.0 {
        let (a, b, c) = (mag[k - 1].ln(), peak.ln(), mag[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            bin += 0.5 * (a - c) / denom;
        }
    }
    Some(bin / (n as f64 * dt))
}

/// Displacement component of `node` with the largest variance over a trajectory.
pub fn tracked_signal(states: &[SimState], node: usize) -> Vec<f64> {
    let comp = (0..3)
        .max_by(|&a, &b| {
            let var = |c: usize| {
                let xs: Vec<f64> = states.iter().map(|s| s.u[3 * node + c]).collect();
                let m = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
                xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            };
            var(a).total_cmp(&var(b))
        })
        .unwrap_or(0);
    states.iter().map(|s| s.u[3 * node + comp]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub method: Method,
    pub step: usize,
    pub rel_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_rel_l2: f64,
    pub max_rel_l2: f64,
    pub dominant_frequency: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub methods: Vec<Method>,
    pub rows: Vec<ErrorRow>,
    pub trajectories: Vec<(Method, Vec<SimState>)>,
    pub tracked: Vec<usize>,
    pub dt: f64,
    /// Set when the ground truth diverged; rows then cover the steps before it.
    pub failure: Option<String>,
}

impl ComparisonReport {
    pub fn summary(&self) -> Vec<MethodSummary> {
        self.methods
            .iter()
            .map(|&m| {
                let errs: Vec<f64> = self.rows.iter().filter(|r| r.method == m).map(|r| r.rel_l2).collect();
                let traj = &self.trajectories.iter().find(|t| t.0 == m).expect("every method has a trajectory").1;
                MethodSummary {
                    method: m,
                    mean_rel_l2: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                    max_rel_l2: errs.iter().copied().fold(0.0, f64::max),
                    dominant_frequency: self.tracked.first().and_then(|&i| dominant_frequency(&tracked_signal(traj, i), self.dt)),
                }
            })
            .collect()
    }
}

/// Runs the ground truth and each requested method on the same script and
/// scores every step against the ground truth.
pub fn compare_methods(
    mesh: &TetMesh,
    setup: &SimSetup,
    script: &LoadScript,
    net: Option<&Network>,
    methods: &[Method],
    tracked: &[usize],
) -> Result<ComparisonReport, WarpError> {
    let (gt, failure, steps) = match simulate_method(mesh, setup, Method::GroundTruth, script, None) {
        Ok(t) => (t, None, script.steps()),
        Err(WarpError::GroundTruth { step, source }) => {
            log::warn!("ground truth diverged at step {step}: {source}");
            let truncated = LoadScript { field: script.field, magnitudes: script.magnitudes[..step].to_vec() };
            let partial = simulate_method(mesh, setup, Method::GroundTruth, &truncated, None)?;
            (partial, Some(format!("ground truth diverged at step {step}: {source}")), step)
        }
        Err(e) => return Err(e),
    };
    let script = LoadScript { field: script.field, magnitudes: script.magnitudes[..steps].to_vec() };
    let mut rows = Vec::with_capacity(steps * methods.len());
    let mut trajectories = Vec::with_capacity(methods.len());
    for &m in methods {
        let traj = if m == Method::GroundTruth { gt.clone() } else { simulate_method(mesh, setup, m, &script, net)? };
        for (k, (s, g)) in traj.iter().zip(&gt).enumerate() {
            rows.push(ErrorRow { method: m, step: k, rel_l2: relative_l2(&s.u, &g.u) });
        }
        trajectories.push((m, traj));
    }
    Ok(ComparisonReport { methods: methods.to_vec(), rows, trajectories, tracked: tracked.to_vec(), dt: setup.dt, failure })
}

/// Material parameters with the model switched to linear (same constants).
pub fn linear_counterpart(params: &MaterialParams) -> MaterialParams {
    params.with_model(MaterialModel::Linear)
}
