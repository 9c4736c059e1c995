//! Hyperelastic constitutive models on linear tetrahedra.
//!
//! Sign conventions: [`element_internal_force`] and [`assemble_force`] return
//! the *restoring* force `f(x) = −∂E/∂x`. The stiffness `K = −∂f/∂u` is the
//! energy Hessian, so it is symmetric and, for the linear model with enough
//! anchors, positive definite. The internal force balancing an external load
//! is `f_int = −f`, which equals `K u` for the linear model.

use nalgebra::{DVector, SMatrix};
use thiserror::Error;

use crate::linalg::{axial, node_vec, polar_rotation, skew, Mat3, Vec3};
use crate::mesh::TetMesh;
use crate::sparse::{CscMatrix, TripletBuilder};

pub type Mat12 = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaterialModel {
    Linear,
    Corotational,
    StVK,
    NeoHookean,
}

impl MaterialModel {
    pub const ALL: [MaterialModel; 4] =
        [MaterialModel::Linear, MaterialModel::Corotational, MaterialModel::StVK, MaterialModel::NeoHookean];

    pub fn name(self) -> &'static str {
        match self {
            MaterialModel::Linear => "linear",
            MaterialModel::Corotational => "corotational",
            MaterialModel::StVK => "stvk",
            MaterialModel::NeoHookean => "neohookean",
        }
    }
}

impl std::str::FromStr for MaterialModel {
    type Err = MaterialError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "linear" => Ok(MaterialModel::Linear),
            "corotational" | "corot" => Ok(MaterialModel::Corotational),
            "stvk" => Ok(MaterialModel::StVK),
            "neohookean" | "nh" => Ok(MaterialModel::NeoHookean),
            _ => Err(MaterialError::InvalidParams(format!("unknown material model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaterialError {
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
    #[error("inverted element{}: det F = {det:e}", element.map(|e| format!(" {e}")).unwrap_or_default())]
    Inverted { element: Option<usize>, det: f64 },
}

impl MaterialError {
    fn at(self, t: usize) -> Self {
        match self {
            MaterialError::Inverted { det, .. } => MaterialError::Inverted { element: Some(t), det },
            other => other,
        }
    }
}

/// Model choice plus Young's modulus `k` and Poisson's ratio `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub model: MaterialModel,
    pub youngs: f64,
    pub poisson: f64,
}

impl MaterialParams {
    pub fn new(model: MaterialModel, youngs: f64, poisson: f64) -> Result<Self, MaterialError> {
        if !(youngs > 0.0 && youngs.is_finite()) {
            return Err(MaterialError::InvalidParams(format!("Young's modulus must be positive, got {youngs}")));
        }
        if !(poisson > 0.0 && poisson < 0.5) && poisson != 0.0 {
            return Err(MaterialError::InvalidParams(format!("Poisson's ratio must lie in [0, 0.5), got {poisson}")));
        }
        Ok(Self { model, youngs, poisson })
    }

    /// Same elastic constants, different model.
    pub fn with_model(&self, model: MaterialModel) -> Self {
        Self { model, ..*self }
    }

    /// `(μ, λ)`.
    pub fn lame(&self) -> (f64, f64) {
        let (k, nu) = (self.youngs, self.poisson);
        (k / (2.0 * (1.0 + nu)), k * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }
}

/// Rest-shape data of one tet: inverse rest edge matrix and volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementPrecomp {
    dm_inv: Mat3,
    volume: f64,
}

impl ElementPrecomp {
    /// Corners must be positively oriented and non-degenerate.
    pub fn new(rest: &[Vec3; 4]) -> Self {
        let dm = edge_matrix(rest);
        let volume = dm.determinant() / 6.0;
        let dm_inv = dm.try_inverse().expect("non-degenerate tet");
        Self { dm_inv, volume }
    }

    pub fn dm_inv(&self) -> &Mat3 {
        &self.dm_inv
    }

    pub fn rest_volume(&self) -> f64 {
        self.volume
    }
}

fn edge_matrix(x: &[Vec3; 4]) -> Mat3 {
    Mat3::from_columns(&[x[1] - x[0], x[2] - x[0], x[3] - x[0]])
}

pub fn deformation_gradient(pre: &ElementPrecomp, deformed: &[Vec3; 4]) -> Mat3 {
    edge_matrix(deformed) * pre.dm_inv
}

pub fn displacement_gradient(pre: &ElementPrecomp, deformed: &[Vec3; 4]) -> Mat3 {
    deformation_gradient(pre, deformed) - Mat3::identity()
}

pub fn cauchy_strain(f: &Mat3) -> Mat3 {
    let g = f - Mat3::identity();
    0.5 * (g + g.transpose())
}

/// `(FᵀF − I)/2`. Shares invariants with `(FFᵀ − I)/2`, so energies agree.
pub fn green_strain(f: &Mat3) -> Mat3 {
    0.5 * (f.transpose() * f - Mat3::identity())
}

fn checked_det(f: &Mat3) -> Result<f64, MaterialError> {
    let j = f.determinant();
    if j > 0.0 && j.is_finite() {
        Ok(j)
    } else {
        Err(MaterialError::Inverted { element: None, det: j })
    }
}

fn frob2(m: &Mat3) -> f64 {
    m.norm_squared()
}

pub fn energy_density(params: &MaterialParams, f: &Mat3) -> Result<f64, MaterialError> {
    let (mu, lambda) = params.lame();
    Ok(match params.model {
        MaterialModel::Linear => {
            let e = cauchy_strain(f);
            mu * frob2(&e) + 0.5 * lambda * e.trace().powi(2)
        }
        MaterialModel::Corotational => {
            let r = polar_rotation(f);
            let s = r.transpose() * f - Mat3::identity();
            mu * frob2(&s) + 0.5 * lambda * s.trace().powi(2)
        }
        MaterialModel::StVK => {
            let e = green_strain(f);
            mu * frob2(&e) + 0.5 * lambda * e.trace().powi(2)
        }
        MaterialModel::NeoHookean => {
            let ln_j = checked_det(f)?.ln();
            0.5 * mu * (frob2(f) - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j
        }
    })
}

/// First Piola–Kirchhoff stress `∂Ψ/∂F`.
pub fn piola_stress(params: &MaterialParams, f: &Mat3) -> Result<Mat3, MaterialError> {
    let (mu, lambda) = params.lame();
    let i = Mat3::identity();
    Ok(match params.model {
        MaterialModel::Linear => {
            let g = f - i;
            mu * (g + g.transpose()) + lambda * g.trace() * i
        }
        MaterialModel::Corotational => {
            let r = polar_rotation(f);
            let s = r.transpose() * f;
            2.0 * mu * (f - r) + lambda * (s.trace() - 3.0) * r
        }
        MaterialModel::StVK => {
            let e = green_strain(f);
            f * (2.0 * mu * e + lambda * e.trace() * i)
        }
        MaterialModel::NeoHookean => {
            let ln_j = checked_det(f)?.ln();
            let f_inv_t = f.try_inverse().expect("det > 0").transpose();
            mu * (f - f_inv_t) + lambda * ln_j * f_inv_t
        }
    })
}

/// Directional derivative `dP = (∂P/∂F) : dF`.
pub fn stress_differential(params: &MaterialParams, f: &Mat3, df: &Mat3) -> Result<Mat3, MaterialError> {
    let (mu, lambda) = params.lame();
    let i = Mat3::identity();
    Ok(match params.model {
        MaterialModel::Linear => mu * (df + df.transpose()) + lambda * df.trace() * i,
        MaterialModel::Corotational => {
            let r = polar_rotation(f);
            let s = crate::linalg::sym(&(r.transpose() * f));
            let a = r.transpose() * df;
            // RᵀdF − dFᵀR = [w]×S + S[w]× = [(tr S·I − S) w]×
            let m = s.trace() * i - s;
            let w = m.try_inverse().map_or_else(Vec3::zeros, |inv| inv * (2.0 * axial(&a)));
            let dr = r * skew(&w);
            2.0 * mu * df + lambda * a.trace() * r + (lambda * (s.trace() - 3.0) - 2.0 * mu) * dr
        }
        MaterialModel::StVK => {
            let e = green_strain(f);
            let s = 2.0 * mu * e + lambda * e.trace() * i;
            let de = crate::linalg::sym(&(df.transpose() * f));
            let ds = 2.0 * mu * de + lambda * de.trace() * i;
            df * s + f * ds
        }
        MaterialModel::NeoHookean => {
            let ln_j = checked_det(f)?.ln();
            let f_inv = f.try_inverse().expect("det > 0");
            let f_inv_t = f_inv.transpose();
            mu * df + (mu - lambda * ln_j) * f_inv_t * df.transpose() * f_inv_t
                + lambda * (f_inv * df).trace() * f_inv_t
        }
    })
}

/// Restoring corner forces `−∂(V·Ψ)/∂x`; they sum to zero.
pub fn element_internal_force(
    params: &MaterialParams,
    pre: &ElementPrecomp,
    deformed: &[Vec3; 4],
) -> Result<[Vec3; 4], MaterialError> {
    let f = deformation_gradient(pre, deformed);
    let p = piola_stress(params, &f)?;
    Ok(distribute(&(-pre.volume * p * pre.dm_inv.transpose())))
}

fn distribute(h: &Mat3) -> [Vec3; 4] {
    let f1: Vec3 = h.column(0).into();
    let f2: Vec3 = h.column(1).into();
    let f3: Vec3 = h.column(2).into();
    [-(f1 + f2 + f3), f1, f2, f3]
}

fn edge_differential(dx: &[Vec3; 4]) -> Mat3 {
    Mat3::from_columns(&[dx[1] - dx[0], dx[2] - dx[0], dx[3] - dx[0]])
}

/// `K_e · dx` without forming `K_e`, as four corner vectors.
pub fn element_stiffness_product(
    params: &MaterialParams,
    pre: &ElementPrecomp,
    deformed: &[Vec3; 4],
    dx: &[Vec3; 4],
) -> Result<[Vec3; 4], MaterialError> {
    let f = deformation_gradient(pre, deformed);
    let df = edge_differential(dx) * pre.dm_inv;
    let dp = stress_differential(params, &f, &df)?;
    Ok(distribute(&(pre.volume * dp * pre.dm_inv.transpose())))
}

/// 12×12 element stiffness `K_e = −∂f/∂x` (corner-major, xyz-minor ordering).
pub fn element_tangent_stiffness(
    params: &MaterialParams,
    pre: &ElementPrecomp,
    deformed: &[Vec3; 4],
) -> Result<Mat12, MaterialError> {
    let f = deformation_gradient(pre, deformed);
    let dm_inv_t = pre.dm_inv.transpose();
    let mut k = Mat12::zeros();
    for a in 0..4 {
        for c in 0..3 {
            let mut dx = [Vec3::zeros(); 4];
            dx[a][c] = 1.0;
            let df = edge_differential(&dx) * pre.dm_inv;
            let dp = stress_differential(params, &f, &df)?;
            let col = distribute(&(pre.volume * dp * dm_inv_t));
            for (b, v) in col.iter().enumerate() {
                for d in 0..3 {
                    k[(3 * b + d, 3 * a + c)] = v[d];
                }
            }
        }
    }
    Ok(k)
}

fn corners(mesh: &TetMesh, tet: &[usize; 4], u: &DVector<f64>) -> [Vec3; 4] {
    tet.map(|v| mesh.node(v) + node_vec(u, v))
}

/// Global restoring force at displacement `u`.
pub fn assemble_force(mesh: &TetMesh, params: &MaterialParams, u: &DVector<f64>) -> Result<DVector<f64>, MaterialError> {
    assert_eq!(u.len(), mesh.n_dofs(), "displacement has wrong length");
    let mut out = DVector::zeros(mesh.n_dofs());
    for (t, (tet, pre)) in mesh.tets().iter().zip(mesh.precomps()).enumerate() {
        let fe = element_internal_force(params, pre, &corners(mesh, tet, u)).map_err(|e| e.at(t))?;
        for (k, &v) in tet.iter().enumerate() {
            crate::linalg::add_node_vec(&mut out, v, &fe[k]);
        }
    }
    Ok(out)
}

/// Internal force that balances an external load at equilibrium: `−assemble_force`.
pub fn internal_force(mesh: &TetMesh, params: &MaterialParams, u: &DVector<f64>) -> Result<DVector<f64>, MaterialError> {
    Ok(-assemble_force(mesh, params, u)?)
}

/// Global tangent stiffness at `u` (no anchoring applied).
pub fn assemble_stiffness(mesh: &TetMesh, params: &MaterialParams, u: &DVector<f64>) -> Result<CscMatrix, MaterialError> {
    assert_eq!(u.len(), mesh.n_dofs(), "displacement has wrong length");
    let mut t = TripletBuilder::with_capacity(mesh.n_dofs(), 144 * mesh.n_tets());
    for (e, (tet, pre)) in mesh.tets().iter().zip(mesh.precomps()).enumerate() {
        let ke = element_tangent_stiffness(params, pre, &corners(mesh, tet, u)).map_err(|err| err.at(e))?;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..3 {
                    for d in 0..3 {
                        t.push(3 * tet[a] + c, 3 * tet[b] + d, ke[(3 * a + c, 3 * b + d)]);
                    }
                }
            }
        }
    }
    Ok(t.build())
}

/// `K(u)·d` assembled element by element.
pub fn stiffness_product(
    mesh: &TetMesh,
    params: &MaterialParams,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>, MaterialError> {
    let mut out = DVector::zeros(mesh.n_dofs());
    for (t, (tet, pre)) in mesh.tets().iter().zip(mesh.precomps()).enumerate() {
        let dx = tet.map(|v| node_vec(d, v));
        let ke_d = element_stiffness_product(params, pre, &corners(mesh, tet, u), &dx).map_err(|e| e.at(t))?;
        for (k, &v) in tet.iter().enumerate() {
            crate::linalg::add_node_vec(&mut out, v, &ke_d[k]);
        }
    }
    Ok(out)
}

/// Total elastic energy `Σ V·Ψ(F)`.
pub fn total_energy(mesh: &TetMesh, params: &MaterialParams, u: &DVector<f64>) -> Result<f64, MaterialError> {
    let mut e = 0.0;
    for (t, (tet, pre)) in mesh.tets().iter().zip(mesh.precomps()).enumerate() {
        let f = deformation_gradient(pre, &corners(mesh, tet, u));
        e += pre.volume * energy_density(params, &f).map_err(|err| err.at(t))?;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::exp_so3;
    use crate::mesh::box_mesh;
    use proptest::prelude::*;

    fn unit_rest() -> [Vec3; 4] {
        [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()]
    }

    fn params(model: MaterialModel) -> MaterialParams {
        MaterialParams::new(model, 10.0, 0.3).unwrap()
    }

    fn mat_from(v: &[f64]) -> Mat3 {
        Mat3::from_row_slice(v)
    }

    fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / scale.max(1e-12)
    }

    #[test]
    fn params_validation() {
        assert!(MaterialParams::new(MaterialModel::Linear, 1.0, 0.5).is_err());
        assert!(MaterialParams::new(MaterialModel::Linear, 0.0, 0.3).is_err());
        assert!(MaterialParams::new(MaterialModel::Linear, 1.0, -0.1).is_err());
        assert!(MaterialParams::new(MaterialModel::Linear, 1.0, 0.0).is_ok());
    }

    #[test]
    fn deformation_gradient_examples() {
        let rest = unit_rest();
        let pre = ElementPrecomp::new(&rest);
        assert!((deformation_gradient(&pre, &rest) - Mat3::identity()).norm() < 1e-15);
        let r = exp_so3(&Vec3::new(0.3, -0.2, 0.9));
        let rotated = rest.map(|x| r * x);
        assert!((deformation_gradient(&pre, &rotated) - r).norm() < 1e-12);
        let stretched = rest.map(|x| Vec3::new(2.0 * x.x, x.y, x.z));
        assert!((deformation_gradient(&pre, &stretched) - Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0))).norm() < 1e-15);
        assert!((pre.dm_inv() * edge_matrix(&rest) - Mat3::identity()).norm() < 1e-10);
    }

    #[test]
    fn rest_state_is_stress_free() {
        for model in MaterialModel::ALL {
            let p = params(model);
            assert!(energy_density(&p, &Mat3::identity()).unwrap().abs() < 1e-14);
            assert!(piola_stress(&p, &Mat3::identity()).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn stvk_uniaxial_energy() {
        let p = MaterialParams::new(MaterialModel::StVK, 1.0, 0.0).unwrap();
        let f = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        assert!((energy_density(&p, &f).unwrap() - 9.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn linear_stress_with_zero_poisson() {
        let p = MaterialParams::new(MaterialModel::Linear, 1.0, 0.0).unwrap();
        let s = 0.37;
        let f = Mat3::from_diagonal(&Vec3::new(1.0 + s, 1.0, 1.0));
        let stress = piola_stress(&p, &f).unwrap();
        assert!((stress - Mat3::from_diagonal(&Vec3::new(s, 0.0, 0.0))).norm() < 1e-15);
    }

    #[test]
    fn neohookean_rejects_inversion() {
        let p = params(MaterialModel::NeoHookean);
        let f = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(energy_density(&p, &f), Err(MaterialError::Inverted { .. })));
        assert!(piola_stress(&p, &f).is_err());
    }

    #[test]
    fn rigid_rotation_energy() {
        let r = exp_so3(&Vec3::new(0.5, 0.2, -0.4));
        for model in MaterialModel::ALL {
            let e = energy_density(&params(model), &r).unwrap();
            if model == MaterialModel::Linear {
                assert!(e > 1e-3);
            } else {
                assert!(e.abs() < 1e-10, "{model:?} {e}");
            }
        }
    }

    #[test]
    fn stvk_energy_is_quartic_in_s() {
        let p = params(MaterialModel::StVK);
        let g = mat_from(&[0.2, -0.1, 0.05, 0.3, 0.1, -0.2, 0.0, 0.15, -0.05]);
        let psi = |s: f64| energy_density(&p, &(Mat3::identity() + s * g)).unwrap();
        // degree-4 interpolation through s = 0..4, checked at s = 5.5
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|&s| psi(s)).collect();
        let x = 5.5;
        let mut interp = 0.0;
        for i in 0..5 {
            let mut l = 1.0;
            for j in 0..5 {
                if i != j {
                    l *= (x - xs[j]) / (xs[i] - xs[j]);
                }
            }
            interp += ys[i] * l;
        }
        assert!(rel_err(interp, psi(x), psi(x).abs()) < 1e-9);
    }

    #[test]
    fn element_forces_at_rest_vanish() {
        let rest = unit_rest();
        let pre = ElementPrecomp::new(&rest);
        for model in MaterialModel::ALL {
            for f in element_internal_force(&params(model), &pre, &rest).unwrap() {
                assert!(f.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_stiffness_is_constant() {
        let rest = unit_rest();
        let pre = ElementPrecomp::new(&rest);
        let p = params(MaterialModel::Linear);
        let k0 = element_tangent_stiffness(&p, &pre, &rest).unwrap();
        let moved = [rest[0], rest[1] + Vec3::new(0.3, 0.1, 0.0), rest[2], rest[3] - Vec3::new(0.0, 0.2, 0.4)];
        let k1 = element_tangent_stiffness(&p, &pre, &moved).unwrap();
        assert!((k0 - k1).norm() < 1e-12);
    }

    #[test]
    fn two_tet_assembly_matches_hand_sum() {
        let mesh = box_mesh(1, 1, 1, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let p = params(MaterialModel::NeoHookean);
        let u = DVector::from_fn(mesh.n_dofs(), |i, _| 0.05 * ((i * 7 % 11) as f64 - 5.0) / 5.0);
        let global = assemble_force(&mesh, &p, &u).unwrap();
        let mut hand = DVector::zeros(mesh.n_dofs());
        for (tet, pre) in mesh.tets().iter().zip(mesh.precomps()) {
            let x = tet.map(|v| mesh.node(v) + node_vec(&u, v));
            let fe = element_internal_force(&p, pre, &x).unwrap();
            for k in 0..4 {
                for c in 0..3 {
                    hand[3 * tet[k] + c] += fe[k][c];
                }
            }
        }
        assert!((global - hand).norm() < 1e-14);
        assert!(assemble_force(&mesh, &p, &DVector::zeros(mesh.n_dofs())).unwrap().norm() < 1e-12);
    }

    #[test]
    fn assembled_product_matches_matrix() {
        let mesh = box_mesh(2, 1, 1, Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let u = DVector::from_fn(mesh.n_dofs(), |i, _| 0.03 * (i as f64).sin());
        let d = DVector::from_fn(mesh.n_dofs(), |i, _| (i as f64 * 0.7).cos());
        for model in MaterialModel::ALL {
            let p = params(model);
            let k = assemble_stiffness(&mesh, &p, &u).unwrap();
            let kd = stiffness_product(&mesh, &p, &u, &d).unwrap();
            assert!((k.mul_vec(&d) - &kd).norm() < 1e-10 * kd.norm().max(1.0));
        }
    }

    #[test]
    fn inverted_error_names_element() {
        let mesh = box_mesh(1, 1, 1, Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let mut u = DVector::zeros(mesh.n_dofs());
        for i in 0..mesh.n_nodes() {
            u[3 * i + 2] = -2.0 * mesh.node(i).z;
        }
        let err = assemble_force(&mesh, &params(MaterialModel::NeoHookean), &u).unwrap_err();
        assert!(matches!(err, MaterialError::Inverted { element: Some(_), .. }));
    }

    #[test]
    fn tangent_matches_force_differences() {
        let rest = unit_rest();
        let pre = ElementPrecomp::new(&rest);
        let x = [
            rest[0] + Vec3::new(0.02, -0.05, 0.01),
            rest[1] + Vec3::new(0.3, 0.2, -0.1),
            rest[2] + Vec3::new(-0.15, 0.1, 0.2),
            rest[3] + Vec3::new(0.05, -0.2, 0.25),
        ];
        let h = 1e-6;
        for model in MaterialModel::ALL {
            let p = params(model);
            let k = element_tangent_stiffness(&p, &pre, &x).unwrap();
            let mut fd = Mat12::zeros();
            for col in 0..12 {
                let (mut xp, mut xm) = (x, x);
                xp[col / 3][col % 3] += h;
                xm[col / 3][col % 3] -= h;
                let fp = element_internal_force(&p, &pre, &xp).unwrap();
                let fm = element_internal_force(&p, &pre, &xm).unwrap();
                for row in 0..12 {
                    fd[(row, col)] = -(fp[row / 3][row % 3] - fm[row / 3][row % 3]) / (2.0 * h);
                }
            }
            assert!((k - fd).norm() / k.norm() < 1e-6, "{model:?} {}", (k - fd).norm() / k.norm());
        }
    }

    fn arb_f() -> impl Strategy<Value = Mat3> {
        prop::array::uniform9(-0.3f64..0.3).prop_map(|a| Mat3::identity() + Mat3::from_row_slice(&a))
    }

    fn arb_rot() -> impl Strategy<Value = Mat3> {
        prop::array::uniform3(-2.0f64..2.0).prop_map(|a| exp_so3(&Vec3::from(a)))
    }

    proptest! {
        #[test]
        fn rotation_invariance(f in arb_f(), r in arb_rot()) {
            prop_assume!(f.determinant() > 0.1);
            for model in [MaterialModel::Corotational, MaterialModel::StVK, MaterialModel::NeoHookean] {
                let p = params(model);
                let a = energy_density(&p, &f).unwrap();
                let b = energy_density(&p, &(r * f)).unwrap();
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn linear_stress_is_linear(g1 in prop::array::uniform9(-1.0f64..1.0), g2 in prop::array::uniform9(-1.0f64..1.0), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let p = params(MaterialModel::Linear);
            let (g1, g2) = (Mat3::from_row_slice(&g1), Mat3::from_row_slice(&g2));
            let i = Mat3::identity();
            let lhs = piola_stress(&p, &(i + a * g1 + b * g2)).unwrap();
            let rhs = a * piola_stress(&p, &(i + g1)).unwrap() + b * piola_stress(&p, &(i + g2)).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
        }

        #[test]
        fn forces_balance(d in prop::array::uniform12(-0.2f64..0.2)) {
            let rest = unit_rest();
            let pre = ElementPrecomp::new(&rest);
            let x = [0, 1, 2, 3].map(|k| rest[k] + Vec3::new(d[3 * k], d[3 * k + 1], d[3 * k + 2]));
            for model in MaterialModel::ALL {
                let f = element_internal_force(&params(model), &pre, &x).unwrap();
                prop_assert!(f.iter().sum::<Vec3>().norm() < 1e-10);
            }
        }

        #[test]
        fn stiffness_is_symmetric(d in prop::array::uniform12(-0.2f64..0.2)) {
            let rest = unit_rest();
            let pre = ElementPrecomp::new(&rest);
            let x = [0, 1, 2, 3].map(|k| rest[k] + Vec3::new(d[3 * k], d[3 * k + 1], d[3 * k + 2]));
            for model in MaterialModel::ALL {
                let k = element_tangent_stiffness(&params(model), &pre, &x).unwrap();
                let asym = (k - k.transpose()).amax();
                prop_assert!(asym <= 1e-8 * k.amax(), "{:?} {}", model, asym);
            }
        }
    }
}
