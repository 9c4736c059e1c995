//! Per-node input features.
//!
//! Static features depend only on the rest shape, the anchors and the force
//! field: geodesic distance to the anchors `g`, potential `p` and digression
//! `d`. Kinematic features come from aligning `(ũ_i, w_i)` to a canonical
//! frame, which leaves three rotation-invariant scalars `(|ũ|, |w|, θ)`.
//! The network input is `[m_u, m_w, θ, g, p, d, ν]`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{set_node_vec, Mat3, Vec3};
use crate::mesh::TetMesh;

/// Feature names in network input order.
pub const FEATURE_NAMES: [&str; 7] = ["m_u", "m_w", "theta", "g", "p", "d", "nu"];
pub const N_FEATURES: usize = 7;

pub type FeatureVector = [f64; N_FEATURES];

const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("mesh has no anchor nodes")]
    NoAnchors,
    #[error("node {0} cannot be reached from any anchor")]
    Unreachable(usize),
    #[error("force direction must be non-zero")]
    ZeroDirection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceKind {
    Directional { dir: Vec3 },
    Circular { axis_point: Vec3, axis_dir: Vec3 },
}

/// A load pattern; `magnitude` is force per unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceField {
    pub kind: ForceKind,
    pub magnitude: f64,
}

impl ForceField {
    pub fn directional(dir: Vec3, magnitude: f64) -> Result<Self, FeatureError> {
        let n = dir.norm();
        if !(n > DEGENERATE) {
            return Err(FeatureError::ZeroDirection);
        }
        Ok(Self { kind: ForceKind::Directional { dir: dir / n }, magnitude })
    }

    pub fn circular(axis_point: Vec3, axis_dir: Vec3, magnitude: f64) -> Result<Self, FeatureError> {
        let n = axis_dir.norm();
        if !(n > DEGENERATE) {
            return Err(FeatureError::ZeroDirection);
        }
        Ok(Self { kind: ForceKind::Circular { axis_point, axis_dir: axis_dir / n }, magnitude })
    }

    pub fn with_magnitude(&self, magnitude: f64) -> Self {
        Self { magnitude, ..*self }
    }

    pub fn is_circular(&self) -> bool {
        matches!(self.kind, ForceKind::Circular { .. })
    }

    /// Unit load direction at rest position `x` (zero on a circular axis).
    pub fn direction_at(&self, x: &Vec3) -> Vec3 {
        match self.kind {
            ForceKind::Directional { dir } => dir,
            ForceKind::Circular { axis_point, axis_dir } => {
                let r = x - axis_point;
                let r_perp = r - axis_dir * r.dot(&axis_dir);
                let t = axis_dir.cross(&r_perp);
                let n = t.norm();
                if n > DEGENERATE {
                    t / n
                } else {
                    Vec3::zeros()
                }
            }
        }
    }

    /// Per-node forces `m_i · magnitude · direction`.
    pub fn nodal_forces(&self, mesh: &TetMesh, node_mass: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(mesh.n_dofs());
        for i in 0..mesh.n_nodes() {
            set_node_vec(&mut f, i, &(self.direction_at(&mesh.node(i)) * (node_mass[i] * self.magnitude)));
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node index
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra on a weighted graph given as adjacency lists.
///
/// Returns per-node distances (`∞` if unreachable) and the source each node
/// was reached from (`usize::MAX` if unreachable).
pub fn dijkstra_multi_source(adjacency: &[Vec<(usize, f64)>], sources: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let n = adjacency.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut origin = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if dist[s] > 0.0 {
            dist[s] = 0.0;
            origin[s] = s;
            heap.push(HeapItem { dist: 0.0, node: s });
        }
    }
    let mut done = vec![false; n];
    while let Some(HeapItem { dist: d, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for &(nb, w) in &adjacency[node] {
            let nd = d + w;
            if nd < dist[nb] {
                dist[nb] = nd;
                origin[nb] = origin[node];
                heap.push(HeapItem { dist: nd, node: nb });
            }
        }
    }
    (dist, origin)
}

/// Normalized geodesic distances and geodesically nearest anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesics {
    pub g: Vec<f64>,
    pub distance: Vec<f64>,
    pub nearest_anchor: Vec<usize>,
}

/// Mesh node graph with Euclidean rest-length edge weights.
pub fn weighted_adjacency(mesh: &TetMesh) -> Vec<Vec<(usize, f64)>> {
    (0..mesh.n_nodes())
        .map(|i| mesh.neighbors(i).iter().map(|&j| (j, (mesh.node(j) - mesh.node(i)).norm())).collect())
        .collect()
}

pub fn geodesic_all(mesh: &TetMesh) -> Result<Geodesics, FeatureError> {
    if mesh.anchors().is_empty() {
        return Err(FeatureError::NoAnchors);
    }
    let (distance, nearest_anchor) = dijkstra_multi_source(&weighted_adjacency(mesh), mesh.anchors());
    if let Some(i) = distance.iter().position(|d| !d.is_finite()) {
        return Err(FeatureError::Unreachable(i));
    }
    let max = distance.iter().copied().fold(0.0, f64::max);
    let g = if max > 0.0 { distance.iter().map(|d| d / max).collect() } else { vec![0.0; distance.len()] };
    Ok(Geodesics { g, distance, nearest_anchor })
}

pub fn potential_all(mesh: &TetMesh, field: &ForceField) -> Vec<f64> {
    match field.kind {
        ForceKind::Directional { dir } => {
            let proj: Vec<f64> = mesh.nodes().iter().map(|x| x.dot(&dir)).collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let scale = lo.abs().max(hi.abs()).max(1.0);
            if !(hi - lo > DEGENERATE * scale) {
                log::warn!("potential: all nodes project to the same value; using p = 0");
                return vec![0.0; proj.len()];
            }
            proj.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        }
        ForceKind::Circular { axis_point, axis_dir } => {
            let r: Vec<f64> = mesh
                .nodes()
                .iter()
                .map(|x| {
                    let v = x - axis_point;
                    (v - axis_dir * v.dot(&axis_dir)).norm()
                })
                .collect();
            let max = r.iter().copied().fold(0.0, f64::max);
            if !(max > DEGENERATE) {
                log::warn!("potential: all nodes lie on the circular axis; using p = 0");
                return vec![0.0; r.len()];
            }
            r.iter().map(|v| v / max).collect()
        }
    }
}

/// Angle between the offset from the nearest anchor and the force direction.
pub fn digression_from(rest: &Vec3, anchor: &Vec3, field: &ForceField) -> f64 {
    match field.kind {
        ForceKind::Circular { .. } => -1.0,
        ForceKind::Directional { dir } => {
            let off = rest - anchor;
            let n = off.norm();
            if n < DEGENERATE {
                return 0.0;
            }
            (off / n).dot(&dir).clamp(-1.0, 1.0).acos()
        }
    }
}

pub fn digression(mesh: &TetMesh, geo: &Geodesics, field: &ForceField, i: usize) -> f64 {
    digression_from(&mesh.node(i), &mesh.node(geo.nearest_anchor[i]), field)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticFeatures {
    pub g: f64,
    pub p: f64,
    pub d: f64,
}

pub fn static_features_with(mesh: &TetMesh, geo: &Geodesics, field: &ForceField) -> Vec<StaticFeatures> {
    let p = potential_all(mesh, field);
    (0..mesh.n_nodes())
        .map(|i| StaticFeatures { g: geo.g[i], p: p[i], d: digression(mesh, geo, field, i) })
        .collect()
}

pub fn static_features(mesh: &TetMesh, field: &ForceField) -> Result<Vec<StaticFeatures>, FeatureError> {
    Ok(static_features_with(mesh, &geodesic_all(mesh)?, field))
}

/// Canonical triple plus the rotation `Q` that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedKinematics {
    pub m_u: f64,
    pub m_w: f64,
    pub theta: f64,
    pub q: Mat3,
}

/// Rotation taking unit vector `a` to `+y` by the shortest arc.
fn rotate_to_y(a: &Vec3) -> Mat3 {
    let y = Vec3::y();
    let c = a.dot(&y);
    let axis = a.cross(&y);
    let s = axis.norm();
    if s < DEGENERATE {
        return if c > 0.0 { Mat3::identity() } else { Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)) };
    }
    let k = crate::linalg::skew(&(axis / s));
    Mat3::identity() + s * k + (1.0 - c) * (k * k)
}

pub fn align_kinematics(u: &Vec3, w: &Vec3) -> AlignedKinematics {
    let m_u = u.norm();
    let m_w = w.norm();
    let q1 = if m_u < DEGENERATE { Mat3::identity() } else { rotate_to_y(&(u / m_u)) };
    let w1 = q1 * w;
    let (cx, cz) = (w1.x, w1.z);
    let c = cx.hypot(cz);
    let q2 = if c < DEGENERATE {
        Mat3::identity()
    } else {
        let (cos, sin) = (-cx / c, -cz / c);
        Mat3::new(cos, 0.0, sin, 0.0, 1.0, 0.0, -sin, 0.0, cos)
    };
    let theta = if m_u < DEGENERATE || m_w < DEGENERATE { 0.0 } else { u.cross(w).norm().atan2(u.dot(w)) };
    AlignedKinematics { m_u, m_w, theta, q: q2 * q1 }
}

/// `Qᵀ δu`: maps a canonical-frame correction back to the world frame.
pub fn unalign(delta: &Vec3, q: &Mat3) -> Vec3 {
    q.transpose() * delta
}

pub fn assemble_feature(s: &StaticFeatures, a: &AlignedKinematics, poisson: f64) -> FeatureVector {
    [a.m_u, a.m_w, a.theta, s.g, s.p, s.d, poisson]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::exp_so3;
    use crate::mesh::box_mesh;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn beam() -> TetMesh {
        box_mesh(4, 1, 1, Vec3::new(4.0, 1.0, 1.0)).unwrap().anchored_where(|x| x.x < 1e-9)
    }

    #[test]
    fn path_graph_geodesics() {
        let adj: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|i: usize| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push((i - 1, 1.0));
                }
                if i < 4 {
                    v.push((i + 1, 1.0));
                }
                v
            })
            .collect();
        let (d, o) = dijkstra_multi_source(&adj, &[0]);
        assert_eq!(d, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(o.iter().all(|&a| a == 0));
        let (d, o) = dijkstra_multi_source(&adj, &[0, 4]);
        assert_eq!(d, vec![0.0, 1.0, 2.0, 1.0, 0.0]);
        assert_eq!(o, vec![0, 0, 0, 4, 4]);
    }

    #[test]
    fn mesh_geodesics() {
        let mesh = beam();
        let geo = geodesic_all(&mesh).unwrap();
        for &a in mesh.anchors() {
            assert_eq!(geo.g[a], 0.0);
        }
        assert_eq!(geo.g.iter().copied().fold(0.0, f64::max), 1.0);
        let all = mesh.with_anchors(0..mesh.n_nodes()).unwrap();
        assert!(geodesic_all(&all).unwrap().g.iter().all(|&g| g == 0.0));
        let none = mesh.with_anchors([]).unwrap();
        assert_eq!(geodesic_all(&none).unwrap_err(), FeatureError::NoAnchors);
    }

    #[test]
    fn unreachable_node_is_reported() {
        let nodes = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(5.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0), Vec3::new(5.0, 1.0, 0.0), Vec3::new(5.0, 0.0, 1.0)];
        let mesh = TetMesh::new(nodes, vec![[0, 1, 2, 3], [4, 5, 6, 7]], vec![0]).unwrap();
        assert_eq!(geodesic_all(&mesh).unwrap_err(), FeatureError::Unreachable(4));
    }

    #[test]
    fn potential_examples() {
        let mesh = beam();
        let up = ForceField::directional(Vec3::y(), 1.0).unwrap();
        let p = potential_all(&mesh, &up);
        for i in 0..mesh.n_nodes() {
            let expected = if mesh.node(i).y > 0.5 { 1.0 } else { 0.0 };
            assert_eq!(p[i], expected);
        }
        let circ = ForceField::circular(Vec3::zeros(), Vec3::x(), 1.0).unwrap();
        let p = potential_all(&mesh, &circ);
        assert_eq!(p[0], 0.0);
        assert!((p.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn digression_endpoints() {
        let dir = ForceField::directional(Vec3::x(), 1.0).unwrap();
        let a = Vec3::new(0.3, 0.2, -0.1);
        assert_eq!(digression_from(&(a + Vec3::new(2.0, 0.0, 0.0)), &a, &dir), 0.0);
        assert_eq!(digression_from(&(a - Vec3::new(2.0, 0.0, 0.0)), &a, &dir), PI);
        assert_eq!(digression_from(&(a + Vec3::new(0.0, 0.5, 0.0)), &a, &dir), FRAC_PI_2);
        assert_eq!(digression_from(&a, &a, &dir), 0.0);
        let circ = ForceField::circular(Vec3::zeros(), Vec3::z(), 1.0).unwrap();
        let mesh = beam();
        let feats = static_features(&mesh, &circ).unwrap();
        assert!(feats.iter().all(|f| f.d == -1.0));
    }

    #[test]
    fn alignment_examples() {
        let s = 1.0 / 2f64.sqrt();
        let a = align_kinematics(&Vec3::y(), &Vec3::new(-s, s, 0.0));
        assert_eq!(a.q, Mat3::identity());
        assert_eq!(a.m_u, 1.0);
        assert!((a.m_w - 1.0).abs() < 1e-15);
        assert!((a.theta - FRAC_PI_4).abs() < 1e-15);
        let w = Vec3::new(0.3, -0.4, 1.2);
        let a = align_kinematics(&Vec3::zeros(), &w);
        assert_eq!((a.m_u, a.m_w, a.theta), (0.0, w.norm(), 0.0));
        let a = align_kinematics(&Vec3::new(0.0, -2.0, 0.0), &Vec3::zeros());
        assert!((a.q * Vec3::new(0.0, -2.0, 0.0) - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn anchor_rest_feature() {
        let mesh = beam();
        let field = ForceField::directional(Vec3::new(0.0, -1.0, 0.0), 1.0).unwrap();
        let feats = static_features(&mesh, &field).unwrap();
        let a = mesh.anchors()[0];
        let f = assemble_feature(&feats[a], &align_kinematics(&Vec3::zeros(), &Vec3::zeros()), 0.3);
        assert_eq!(f.len(), N_FEATURES);
        assert_eq!(f, [0.0, 0.0, 0.0, 0.0, feats[a].p, feats[a].d, 0.3]);
    }

    #[test]
    fn circular_forces_are_tangent() {
        let mesh = beam();
        let field = ForceField::circular(Vec3::new(0.0, 0.5, 0.5), Vec3::x(), 2.0).unwrap();
        let mass = crate::mesh::lumped_mass(&mesh, 1.0).unwrap();
        let f = field.nodal_forces(&mesh, &mass);
        for i in 0..mesh.n_nodes() {
            let fi = crate::linalg::node_vec(&f, i);
            let r = mesh.node(i) - Vec3::new(0.0, 0.5, 0.5);
            assert!(fi.dot(&Vec3::x()).abs() < 1e-14);
            assert!(fi.dot(&r).abs() < 1e-14);
        }
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-2.0f64..2.0).prop_map(Vec3::from)
    }

    proptest! {
        #[test]
        fn alignment_postconditions(u in arb_vec(), w in arb_vec()) {
            let a = align_kinematics(&u, &w);
            prop_assert!((a.q.transpose() * a.q - Mat3::identity()).norm() < 1e-12);
            prop_assert!((a.q.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((a.q * u - Vec3::new(0.0, a.m_u, 0.0)).norm() < 1e-9);
            let qw = a.q * w;
            prop_assert!(qw.z.abs() < 1e-9 && qw.x <= 1e-9);
            prop_assert!((0.0..=PI).contains(&a.theta));
        }

        #[test]
        fn alignment_invariance(u in arb_vec(), w in arb_vec(), r in arb_vec()) {
            let rot = exp_so3(&r);
            let a = align_kinematics(&u, &w);
            let b = align_kinematics(&(rot * u), &(rot * w));
            prop_assert!((a.m_u - b.m_u).abs() < 1e-9);
            prop_assert!((a.m_w - b.m_w).abs() < 1e-9);
            prop_assert!((a.theta - b.theta).abs() < 1e-9);
        }

        #[test]
        fn unalign_round_trip(u in arb_vec(), w in arb_vec(), v in arb_vec()) {
            let q = align_kinematics(&u, &w).q;
            prop_assert!((unalign(&(q * v), &q) - v).norm() < 1e-12);
        }

        #[test]
        fn potential_range(seed in 0u64..1000) {
            let dir = Vec3::new((seed as f64).sin(), (seed as f64 * 1.3).cos(), 0.4);
            let mesh = box_mesh(3, 2, 2, Vec3::new(1.5, 0.7, 1.1)).unwrap();
            let p = potential_all(&mesh, &ForceField::directional(dir, 1.0).unwrap());
            let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
    }
}
