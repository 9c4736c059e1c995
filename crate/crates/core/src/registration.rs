//! Linear → nonlinear pose registration.
//!
//! Each node gets a least-squares displacement gradient `G_i` over its one-ring,
//! a rotation vector `w_i` (axial part of `G_i`) and a rotation
//! `R_i = exp([w_i]×)`. A linear pose `ũ` is registered to the nonlinear pose
//! `u` solving `f_int(u) = ℛ K ũ`, with `ℛ = diag(R_i)` and anchors at `I`.

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{zero_anchored, LinearSystem, TangentSolver};
use crate::linalg::{axial, exp_so3, node_vec, set_node_vec, Mat3, Vec3};
use crate::material::{assemble_stiffness, internal_force, stiffness_product, MaterialError, MaterialParams};
use crate::mesh::TetMesh;
use crate::sparse::FactorError;

/// Neighborhoods whose scatter matrix has `λ_min ≤ RANK_TOL·λ_max` are rejected.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("node {node} has a rank-deficient (coplanar) neighborhood")]
    RankDeficient { node: usize },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error("registration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64, best: DVector<f64> },
    #[error("line search failed after {iterations} iterations (residual {residual:e})")]
    LineSearch { iterations: usize, residual: f64, best: DVector<f64> },
}

/// Least-squares displacement gradient, rotation vector and rotation at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalKinematics {
    pub g: Mat3,
    pub w: Vec3,
    pub r: Mat3,
}

/// Axial vector of `(G − Gᵀ)/2`.
pub fn rotation_vector(g: &Mat3) -> Vec3 {
    axial(g)
}

/// Rodrigues rotation `exp([w]×)`.
pub fn rotation_from_vector(w: &Vec3) -> Mat3 {
    exp_so3(w)
}

/// Per-node linear maps `u ↦ G_i`, precomputed from rest positions.
///
/// `G_i = Σ_j (u_j − u_i) c_ijᵀ` with `c_ij = (P Pᵀ)⁻¹ (x̄_j − x̄_i)`.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    coeffs: Vec<Vec<(usize, Vec3)>>,
}

impl GradientOperator {
    pub fn new(mesh: &TetMesh) -> Result<Self, RegistrationError> {
        let coeffs = (0..mesh.n_nodes())
            .map(|i| node_coefficients(mesh, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { coeffs })
    }

    pub fn n_nodes(&self) -> usize {
        self.coeffs.len()
    }

    /// `(j, c_ij)` pairs of node `i`.
    pub fn coefficients(&self, i: usize) -> &[(usize, Vec3)] {
        &self.coeffs[i]
    }

    pub fn gradient(&self, u: &DVector<f64>, i: usize) -> Mat3 {
        let ui = node_vec(u, i);
        self.coeffs[i].iter().map(|(j, c)| (node_vec(u, *j) - ui) * c.transpose()).sum()
    }

    pub fn kinematics(&self, u: &DVector<f64>, i: usize) -> LocalKinematics {
        let g = self.gradient(u, i);
        let w = rotation_vector(&g);
        LocalKinematics { g, w, r: rotation_from_vector(&w) }
    }

    pub fn rotation_vectors(&self, u: &DVector<f64>) -> Vec<Vec3> {
        (0..self.n_nodes()).map(|i| rotation_vector(&self.gradient(u, i))).collect()
    }
}

fn node_coefficients(mesh: &TetMesh, i: usize) -> Result<Vec<(usize, Vec3)>, RegistrationError> {
    let xi = mesh.node(i);
    let nbrs = mesh.neighbors(i);
    let scatter: Mat3 = nbrs.iter().map(|&j| (mesh.node(j) - xi) * (mesh.node(j) - xi).transpose()).sum();
    let eig = scatter.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if nbrs.len() < 3 || !(lo > RANK_TOL * hi) {
        return Err(RegistrationError::RankDeficient { node: i });
    }
    let inv = scatter.try_inverse().ok_or(RegistrationError::RankDeficient { node: i })?;
    Ok(nbrs.iter().map(|&j| (j, inv * (mesh.node(j) - xi))).collect())
}

/// Least-squares `G_i` of node `i`, computed directly from the mesh.
pub fn local_displacement_gradient(mesh: &TetMesh, u: &DVector<f64>, i: usize) -> Result<Mat3, RegistrationError> {
    let ui = node_vec(u, i);
    Ok(node_coefficients(mesh, i)?.iter().map(|(j, c)| (node_vec(u, *j) - ui) * c.transpose()).sum())
}

/// Per-node rotation blocks of `ℛ`; anchored nodes get the identity.
pub fn build_rotation_blockdiag(mesh: &TetMesh, op: &GradientOperator, u_lin: &DVector<f64>) -> Vec<Mat3> {
    (0..mesh.n_nodes())
        .map(|i| if mesh.is_anchor(i) { Mat3::identity() } else { op.kinematics(u_lin, i).r })
        .collect()
}

/// `ℛ v`.
pub fn apply_blockdiag(blocks: &[Mat3], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (i, r) in blocks.iter().enumerate() {
        set_node_vec(&mut out, i, &(r * node_vec(v, i)));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RegistrationSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    /// Wolfe sufficient-decrease constant.
    pub c1: f64,
    /// Wolfe curvature constant.
    pub c2: f64,
}

impl Default for RegistrationSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-6, abs_tol: 1e-10, max_iters: 50, c1: 1e-4, c2: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct Registered {
    pub u: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Holds the mesh, model, linear stiffness and gradient operator for repeated registrations.
#[derive(Debug, Clone)]
pub struct Registrar {
    mesh: TetMesh,
    params: MaterialParams,
    linear: LinearSystem,
    grad: GradientOperator,
    pub settings: RegistrationSettings,
}

impl Registrar {
    pub fn new(mesh: &TetMesh, params: &MaterialParams) -> Result<Self, RegistrationError> {
        mesh.require_anchors().map_err(crate::dynamics::DynamicsError::from)?;
        Ok(Self {
            mesh: mesh.clone(),
            params: *params,
            linear: LinearSystem::new(mesh, params, 1.0)?,
            grad: GradientOperator::new(mesh)?,
            settings: RegistrationSettings::default(),
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        &self.mesh
    }

    pub fn params(&self) -> &MaterialParams {
        &self.params
    }

    pub fn gradient_operator(&self) -> &GradientOperator {
        &self.grad
    }

    pub fn linear_system(&self) -> &LinearSystem {
        &self.linear
    }

    /// Right-hand side `ℛ K ũ` (anchored entries zero).
    pub fn target(&self, u_lin: &DVector<f64>) -> DVector<f64> {
        let rots = build_rotation_blockdiag(&self.mesh, &self.grad, u_lin);
        self.target_with(u_lin, &rots)
    }

    fn target_with(&self, u_lin: &DVector<f64>, rots: &[Mat3]) -> DVector<f64> {
        let mut k_u = self.linear.stiffness.mul_vec(u_lin);
        zero_anchored(&mut k_u, &self.linear.anchored);
        apply_blockdiag(rots, &k_u)
    }

    /// Solves `f_int(u) = ℛ K ũ` from `u_init`.
    pub fn register(&self, u_lin: &DVector<f64>, u_init: &DVector<f64>) -> Result<Registered, RegistrationError> {
        self.solve(&self.target(u_lin), u_init)
    }

    /// Same with explicitly given rotation blocks.
    pub fn register_with_rotations(&self, u_lin: &DVector<f64>, rots: &[Mat3], u_init: &DVector<f64>) -> Result<Registered, RegistrationError> {
        self.solve(&self.target_with(u_lin, rots), u_init)
    }

    fn residual(&self, u: &DVector<f64>, target: &DVector<f64>) -> Result<DVector<f64>, MaterialError> {
        let mut r = internal_force(&self.mesh, &self.params, u)? - target;
        zero_anchored(&mut r, &self.linear.anchored);
        Ok(r)
    }

    /// `ϕ = ½‖r‖²` and `ϕ' = rᵀ K_t d` along `d`, or `None` for an inverted trial.
    fn merit(&self, u: &DVector<f64>, d: &DVector<f64>, target: &DVector<f64>) -> Option<(f64, f64, DVector<f64>)> {
        let r = self.residual(u, target).ok()?;
        let mut kd = stiffness_product(&self.mesh, &self.params, u, d).ok()?;
        zero_anchored(&mut kd, &self.linear.anchored);
        Some((0.5 * r.norm_squared(), r.dot(&kd), r))
    }

    fn solve(&self, target: &DVector<f64>, u_init: &DVector<f64>) -> Result<Registered, RegistrationError> {
        let s = self.settings;
        let tol = (s.rel_tol * target.norm()).max(s.abs_tol);
        let anchored = &self.linear.anchored;
        let mut u = u_init.clone();
        zero_anchored(&mut u, anchored);
        let mut r = match self.residual(&u, target) {
            Ok(r) => r,
            Err(_) => {
                u = DVector::zeros(u.len());
                self.residual(&u, target)?
            }
        };
        let mut iterations = 0;
        while r.norm() > tol {
            if iterations == s.max_iters {
                return Err(RegistrationError::NotConverged { iterations, residual: r.norm(), best: u });
            }
            iterations += 1;
            let kt = crate::dynamics::apply_anchors(&assemble_stiffness(&self.mesh, &self.params, &u)?, anchored);
            let mut d = TangentSolver::factor(&kt)?.solve(&(-&r))?;
            zero_anchored(&mut d, anchored);
            let phi0 = 0.5 * r.norm_squared();
            let mut kd = stiffness_product(&self.mesh, &self.params, &u, &d)?;
            zero_anchored(&mut kd, anchored);
            let dphi0 = r.dot(&kd);
            match strong_wolfe(|t| self.merit(&(&u + &d * t), &d, target), phi0, dphi0, s.c1, s.c2) {
                Some((t, rt)) => {
                    u += &d * t;
                    r = rt;
                }
                None => {
                    return Err(RegistrationError::LineSearch { iterations, residual: r.norm(), best: u });
                }
            }
        }
        Ok(Registered { residual: r.norm(), u, iterations })
    }

    /// Warm-started chain over a linear sequence; stops at the first failure.
    pub fn register_sequence(&self, seq: &[DVector<f64>]) -> SequenceResult {
        let mut pairs = Vec::with_capacity(seq.len());
        let mut prev = DVector::zeros(self.mesh.n_dofs());
        for u_lin in seq {
            match self.register(u_lin, &prev) {
                Ok(reg) => {
                    prev = reg.u.clone();
                    pairs.push((u_lin.clone(), reg.u));
                }
                Err(e) => return SequenceResult { pairs, failure: Some(e) },
            }
        }
        SequenceResult { pairs, failure: None }
    }
}

#[derive(Debug)]
pub struct SequenceResult {
    pub pairs: Vec<(DVector<f64>, DVector<f64>)>,
    pub failure: Option<RegistrationError>,
}

/// One-shot registration; builds a [`Registrar`] internally.
pub fn register_nonlinear(
    mesh: &TetMesh,
    params: &MaterialParams,
    u_lin: &DVector<f64>,
    u_init: &DVector<f64>,
) -> Result<Registered, RegistrationError> {
    Registrar::new(mesh, params)?.register(u_lin, u_init)
}

pub fn register_sequence(mesh: &TetMesh, params: &MaterialParams, seq: &[DVector<f64>]) -> Result<SequenceResult, RegistrationError> {
    Ok(Registrar::new(mesh, params)?.register_sequence(seq))
}

/// Independent residual audit `‖f_int(u) − ℛKũ‖` over free DOFs.
pub fn registration_residual(mesh: &TetMesh, params: &MaterialParams, u_lin: &DVector<f64>, u: &DVector<f64>) -> Result<f64, RegistrationError> {
    let linear = LinearSystem::new(mesh, params, 1.0)?;
    let op = GradientOperator::new(mesh)?;
    let rots = build_rotation_blockdiag(mesh, &op, u_lin);
    let mut k_u = linear.stiffness.mul_vec(u_lin);
    zero_anchored(&mut k_u, &linear.anchored);
    let mut r = internal_force(mesh, params, u)? - apply_blockdiag(&rots, &k_u);
    zero_anchored(&mut r, &linear.anchored);
    Ok(r.norm())
}

/// Strong Wolfe line search on a merit `ϕ(t)` with derivative `ϕ'(t)`.
///
/// `eval(t)` returns `(ϕ, ϕ', payload)` or `None` if the trial point is
/// inadmissible (treated as an infinite merit). Returns the accepted step and
/// its payload, or `None` once the bracket shrinks below 1e-12.
pub fn strong_wolfe<P>(
    mut eval: impl FnMut(f64) -> Option<(f64, f64, P)>,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
) -> Option<(f64, P)> {
    const MIN_STEP: f64 = 1e-12;
    const MAX_STEP: f64 = 4.0;
    if !(dphi0 < 0.0) {
        return None;
    }
    let mut t_prev = 0.0;
    let mut phi_prev = phi0;
    let mut dphi_prev = dphi0;
    let mut t = 1.0;
    let mut first = true;
    loop {
        let Some((phi, dphi, payload)) = eval(t) else {
            // inadmissible trial: pull back toward the last good point
            if t - t_prev < MIN_STEP {
                return None;
            }
            return zoom(&mut eval, t_prev, phi_prev, dphi_prev, t_prev + 0.5 * (t - t_prev), phi0, dphi0, c1, c2);
        };
        if phi > phi0 + c1 * t * dphi0 || (!first && phi >= phi_prev) {
            return zoom_bracket(&mut eval, (t_prev, phi_prev, dphi_prev), (t, phi, dphi), phi0, dphi0, c1, c2);
        }
        if dphi.abs() <= -c2 * dphi0 {
            return Some((t, payload));
        }
        if dphi >= 0.0 {
            return zoom_bracket(&mut eval, (t, phi, dphi), (t_prev, phi_prev, dphi_prev), phi0, dphi0, c1, c2);
        }
        if t >= MAX_STEP {
            return Some((t, payload));
        }
        first = false;
        t_prev = t;
        phi_prev = phi;
        dphi_prev = dphi;
        t = (2.0 * t).min(MAX_STEP);
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<P>(
    eval: &mut impl FnMut(f64) -> Option<(f64, f64, P)>,
    t_lo: f64,
    phi_lo: f64,
    dphi_lo: f64,
    t_try: f64,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
) -> Option<(f64, P)> {
    // walk the trial back until it is admissible, then search the bracket
    let mut t = t_try;
    loop {
        if (t - t_lo).abs() < 1e-12 {
            return None;
        }
        match eval(t) {
            Some((phi, dphi, payload)) => {
                if phi > phi0 + c1 * t * dphi0 || phi >= phi_lo {
                    return zoom_bracket(eval, (t_lo, phi_lo, dphi_lo), (t, phi, dphi), phi0, dphi0, c1, c2);
                }
                if dphi.abs() <= -c2 * dphi0 {
                    return Some((t, payload));
                }
                if dphi * (t - t_lo) >= 0.0 {
                    return zoom_bracket(eval, (t, phi, dphi), (t_lo, phi_lo, dphi_lo), phi0, dphi0, c1, c2);
                }
                // still descending but admissible region ends before the old trial
                return Some((t, payload));
            }
            None => t = t_lo + 0.5 * (t - t_lo),
        }
    }
}

fn zoom_bracket<P>(
    eval: &mut impl FnMut(f64) -> Option<(f64, f64, P)>,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
) -> Option<(f64, P)> {
    for _ in 0..60 {
        if (hi.0 - lo.0).abs() < 1e-12 {
            return None;
        }
        let t = cubic_min(lo, hi).unwrap_or(0.5 * (lo.0 + hi.0));
        let Some((phi, dphi, payload)) = eval(t) else {
            hi = (t, f64::INFINITY, 0.0);
            continue;
        };
        if phi > phi0 + c1 * t * dphi0 || phi >= lo.1 {
            hi = (t, phi, dphi);
        } else {
            if dphi.abs() <= -c2 * dphi0 {
                return Some((t, payload));
            }
            if dphi * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, phi, dphi);
        }
    }
    None
}

/// Minimizer of the cubic interpolant, kept safely inside the bracket.
fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (t0, f0, g0) = a;
    let (t1, f1, g1) = b;
    if !f1.is_finite() {
        return None;
    }
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (t0 - t1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (t1 - t0).signum() * disc.sqrt();
    let t = t1 - (t1 - t0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::skew;
    use crate::material::MaterialModel;
    use crate::mesh::box_mesh;
    use proptest::prelude::*;

    fn beam() -> TetMesh {
        box_mesh(4, 2, 2, Vec3::new(4.0, 1.0, 1.0)).unwrap().anchored_where(|x| x.x < 1e-9)
    }

    fn field(mesh: &TetMesh, f: impl Fn(&Vec3) -> Vec3) -> DVector<f64> {
        let mut u = DVector::zeros(mesh.n_dofs());
        for i in 0..mesh.n_nodes() {
            set_node_vec(&mut u, i, &f(&mesh.node(i)));
        }
        u
    }

    #[test]
    fn gradient_examples() {
        let mesh = beam();
        let op = GradientOperator::new(&mesh).unwrap();
        let zero = DVector::zeros(mesh.n_dofs());
        assert_eq!(op.gradient(&zero, 5), Mat3::zeros());
        let a = Mat3::new(0.1, -0.3, 0.2, 0.5, 0.0, -0.1, 0.3, 0.7, -0.2);
        let u = field(&mesh, |x| a * x + Vec3::new(1.0, 2.0, 3.0));
        for i in 0..mesh.n_nodes() {
            assert!((op.gradient(&u, i) - a).norm() < 1e-10);
            assert!((local_displacement_gradient(&mesh, &u, i).unwrap() - a).norm() < 1e-10);
        }
        let r = exp_so3(&Vec3::new(0.0, 0.0, 1e-3));
        let u = field(&mesh, |x| r * x - x);
        for i in 0..mesh.n_nodes() {
            assert!((op.gradient(&u, i) - (r - Mat3::identity())).norm() < 1e-9);
        }
    }

    #[test]
    fn isolated_node_is_rank_deficient() {
        // node 4 belongs to no tet, so it has no neighborhood to fit
        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(3.0, 3.0, 3.0)];
        let mesh = TetMesh::new(nodes, vec![[0, 1, 2, 3]], vec![0]).unwrap();
        assert!(matches!(GradientOperator::new(&mesh), Err(RegistrationError::RankDeficient { node: 4 })));
    }

    #[test]
    fn rotation_vector_examples() {
        let s = Mat3::new(1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0);
        assert_eq!(rotation_vector(&s), Vec3::zeros());
        let theta = 0.7;
        assert!((rotation_vector(&skew(&Vec3::new(0.0, 0.0, theta))) - Vec3::new(0.0, 0.0, theta)).norm() < 1e-15);
        let r = rotation_from_vector(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!((r * Vec3::x() - Vec3::y()).norm() < 1e-12);
        assert_eq!(rotation_from_vector(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn rotation_blocks() {
        let mesh = beam();
        let op = GradientOperator::new(&mesh).unwrap();
        let blocks = build_rotation_blockdiag(&mesh, &op, &DVector::zeros(mesh.n_dofs()));
        assert!(blocks.iter().all(|b| *b == Mat3::identity()));
        let w = Vec3::new(0.01, -0.02, 0.015);
        let u = field(&mesh, |x| skew(&w) * x);
        let blocks = build_rotation_blockdiag(&mesh, &op, &u);
        for (i, b) in blocks.iter().enumerate() {
            if !mesh.is_anchor(i) {
                assert!((b - exp_so3(&w)).norm() < 1e-12);
            }
        }
        let v = DVector::from_fn(mesh.n_dofs(), |k, _| (k as f64).sin());
        let rv = apply_blockdiag(&blocks, &v);
        for i in 0..mesh.n_nodes() {
            assert!((node_vec(&rv, i).norm() - node_vec(&v, i).norm()).abs() < 1e-10);
        }
    }

    /// Linear tip-load pose scaled so that the largest nodal displacement is `amp`.
    fn bend(mesh: &TetMesh, amp: f64) -> DVector<f64> {
        let sys = LinearSystem::new(mesh, &MaterialParams::new(MaterialModel::Linear, 100.0, 0.3).unwrap(), 1.0).unwrap();
        let mut f = DVector::zeros(mesh.n_dofs());
        for i in 0..mesh.n_nodes() {
            if mesh.node(i).x > 4.0 - 1e-9 {
                f[3 * i + 1] = -1.0;
            }
        }
        let u = sys.static_solve(&f).unwrap();
        let m = crate::linalg::max_node_norm(&u);
        u * (amp / m)
    }

    #[test]
    fn zero_pose_registers_to_zero() {
        let mesh = beam();
        let p = MaterialParams::new(MaterialModel::NeoHookean, 100.0, 0.3).unwrap();
        let zero = DVector::zeros(mesh.n_dofs());
        let reg = register_nonlinear(&mesh, &p, &zero, &zero).unwrap();
        assert_eq!(reg.u.norm(), 0.0);
        let seq = register_sequence(&mesh, &p, &[zero.clone()]).unwrap();
        assert_eq!(seq.pairs.len(), 1);
        assert!(seq.failure.is_none());
    }

    #[test]
    fn linear_identity_is_self_consistent() {
        let mesh = beam();
        let p = MaterialParams::new(MaterialModel::Linear, 100.0, 0.3).unwrap();
        let reg = Registrar::new(&mesh, &p).unwrap();
        let u_lin = bend(&mesh, 1.0);
        let eye = vec![Mat3::identity(); mesh.n_nodes()];
        let out = reg.register_with_rotations(&u_lin, &eye, &DVector::zeros(mesh.n_dofs())).unwrap();
        assert!((&out.u - &u_lin).norm() < 1e-6 * u_lin.norm());
    }

    #[test]
    fn registered_residual_is_audited() {
        let mesh = beam();
        for model in [MaterialModel::StVK, MaterialModel::NeoHookean, MaterialModel::Corotational] {
            let p = MaterialParams::new(model, 100.0, 0.3).unwrap();
            let reg = Registrar::new(&mesh, &p).unwrap();
            let seq: Vec<_> = [0.3, 0.6, 1.0].iter().map(|&s| bend(&mesh, s)).collect();
            let out = reg.register_sequence(&seq);
            assert!(out.failure.is_none(), "{model:?}: {:?}", out.failure);
            let mut last = 0.0;
            for (u_lin, u) in &out.pairs {
                let tol = 1e-6 * reg.target(u_lin).norm();
                assert!(registration_residual(&mesh, &p, u_lin, u).unwrap() <= tol * 1.0001);
                assert!(u.norm() >= last - 1e-8);
                last = u.norm();
            }
        }
    }

    #[test]
    fn strong_wolfe_on_quadratic() {
        // ϕ(t) = (t − 0.3)², ϕ'(0) < 0
        let (t, _) = strong_wolfe(|t| Some(((t - 0.3) * (t - 0.3), 2.0 * (t - 0.3), ())), 0.09, -0.6, 1e-4, 0.1).unwrap();
        assert!((2.0 * (t - 0.3)).abs() <= 0.1 * 0.6);
        assert!(strong_wolfe(|t| Some((t, 1.0, ())), 0.0, 1.0, 1e-4, 0.9).is_none());
    }

    proptest! {
        #[test]
        fn skew_plus_sym_reconstructs(a in prop::array::uniform9(-1.0f64..1.0)) {
            let g = Mat3::from_row_slice(&a);
            let back = skew(&rotation_vector(&g)) + crate::linalg::sym(&g);
            prop_assert!((back - g).norm() < 1e-12);
        }

        #[test]
        fn exp_inverse(w in prop::array::uniform3(-3.0f64..3.0)) {
            let w = Vec3::from(w);
            let p = rotation_from_vector(&w) * rotation_from_vector(&(-w));
            prop_assert!((p - Mat3::identity()).norm() < 1e-12);
        }
    }
}
