//! Domain graphs, interface frames and hierarchical per-domain DeepWarp.
//!
//! Each domain is simulated in a frame attached to its parent's interface.
//! The frame follows the best rigid fit of the interface patch; the
//! frame's acceleration enters the domain as fictitious forces. A child's
//! mass is lumped onto its interface nodes in the parent, and its applied
//! loads reach the parent as an equivalent force and moment there.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DVector;
use thiserror::Error;

use crate::dynamics::{consistent_acceleration, prefactorize, DynamicsError, LinearSystem, RayleighDamping, Scheme, SimState};
use crate::features::ForceField;
use crate::linalg::{log_so3, node_vec, set_node_vec, Mat3, Vec3};
use crate::material::MaterialParams;
use crate::mesh::{dof_masses, lumped_mass, tet_face_neighbors, voxel_mesh, DomainPartition, MeshError, TetMesh};
use crate::net::Network;
use crate::warper::{deepwarp_step, LoadScript, WarpContext, WarpError};

/// Largest domain graph accepted by the isomorphism search.
pub const MAX_GRAPH_VERTICES: usize = 64;

#[derive(Debug, Error)]
pub enum SubstructureError {
    #[error("domain {0} has no tets")]
    EmptyDomain(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("graph with {0} vertices exceeds the supported {MAX_GRAPH_VERTICES}")]
    TooLarge(usize),
    #[error("domain graph is not a tree when rooted at {root}: {reason}")]
    NotATree { root: usize, reason: String },
    #[error("domains {parent} and {child} share no nodes")]
    EmptyInterface { parent: usize, child: usize },
    #[error("interface patch is rank deficient")]
    RankDeficient,
    #[error("interface transform has non-positive determinant {0}")]
    NonPositiveDeterminant(f64),
    #[error("need {expected} networks (one shared or one per domain), got {got}")]
    NetworkCount { expected: usize, got: usize },
    #[error("kinematics need at least 3 frames, got {0}")]
    ShortHistory(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Simple undirected graph over domain ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DomainGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, SubstructureError> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(SubstructureError::InvalidGraph(format!("edge ({a}, {b}) outside {n} vertices")));
            }
            if a == b {
                return Err(SubstructureError::InvalidGraph(format!("self-loop at {a}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(SubstructureError::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self { n, edges: set })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// Edges as `(lo, hi)` pairs in increasing order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
            .collect()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    /// Parent of every vertex in a BFS from `root` and the visiting order.
    /// Fails unless the graph is a connected tree.
    pub fn bfs_tree(&self, root: usize) -> Result<(Vec<Option<usize>>, Vec<usize>), SubstructureError> {
        let not_tree = |reason: String| SubstructureError::NotATree { root, reason };
        if root >= self.n {
            return Err(not_tree(format!("root outside {} domains", self.n)));
        }
        if self.edges.len() + 1 != self.n {
            return Err(not_tree(format!("{} edges for {} domains (cycle or disconnected)", self.edges.len(), self.n)));
        }
        let mut parent = vec![None; self.n];
        let mut seen = vec![false; self.n];
        let mut order = Vec::with_capacity(self.n);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    queue.push_back(w);
                }
            }
        }
        if order.len() != self.n {
            return Err(not_tree("disconnected".into()));
        }
        Ok((parent, order))
    }
}

/// Edge `(a, b)` iff a face is shared by a tet of `a` and a tet of `b`.
pub fn build_domain_graph(mesh: &TetMesh, partition: &DomainPartition) -> Result<DomainGraph, SubstructureError> {
    let labels = partition.labels();
    let n = partition.n_domains();
    let mut count = vec![0usize; n];
    for &l in labels {
        count[l] += 1;
    }
    if let Some(d) = count.iter().position(|&c| c == 0) {
        return Err(SubstructureError::EmptyDomain(d));
    }
    let mut edges = BTreeSet::new();
    for (t, nbrs) in tet_face_neighbors(mesh).iter().enumerate() {
        for &s in nbrs {
            let (a, b) = (labels[t], labels[s]);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    DomainGraph::new(n, edges)
}

/// Exact isomorphism test by degree-pruned backtracking. On success returns
/// `map` with `map[v]` the vertex of `g2` matched to vertex `v` of `g1`.
pub fn graphs_isomorphic(g1: &DomainGraph, g2: &DomainGraph) -> Result<Option<Vec<usize>>, SubstructureError> {
    for g in [g1, g2] {
        if g.n > MAX_GRAPH_VERTICES {
            return Err(SubstructureError::TooLarge(g.n));
        }
    }
    if g1.n != g2.n || g1.n_edges() != g2.n_edges() {
        return Ok(None);
    }
    let n = g1.n;
    let deg1: Vec<usize> = (0..n).map(|v| g1.degree(v)).collect();
    let deg2: Vec<usize> = (0..n).map(|v| g2.degree(v)).collect();
    let (mut s1, mut s2) = (deg1.clone(), deg2.clone());
    s1.sort_unstable();
    s2.sort_unstable();
    if s1 != s2 {
        return Ok(None);
    }
    // most constrained vertices first
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| deg1[b].cmp(&deg1[a]).then(a.cmp(&b)));
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];

    fn extend(
        k: usize,
        order: &[usize],
        g1: &DomainGraph,
        g2: &DomainGraph,
        deg1: &[usize],
        deg2: &[usize],
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if k == order.len() {
            return true;
        }
        let v = order[k];
        for w in 0..g2.n {
            if used[w] || deg1[v] != deg2[w] {
                continue;
            }
            let consistent = order[..k].iter().all(|&u| g1.has_edge(u, v) == g2.has_edge(map[u], w));
            if !consistent {
                continue;
            }
            map[v] = w;
            used[w] = true;
            if extend(k + 1, order, g1, g2, deg1, deg2, map, used) {
                return true;
            }
            used[w] = false;
            map[v] = usize::MAX;
        }
        false
    }

    Ok(extend(0, &order, g1, g2, &deg1, &deg2, &mut map, &mut used).then_some(map))
}

/// Nodes joining a parent domain to one of its children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterfacePatch {
    pub parent: usize,
    pub child: usize,
    /// Nodes belonging to both domains (global ids); the child's anchors.
    pub shared: Vec<usize>,
    /// `shared` plus their one-ring inside the parent, used for the frame fit.
    pub fit_nodes: Vec<usize>,
}

impl InterfacePatch {
    pub fn between(mesh: &TetMesh, partition: &DomainPartition, parent: usize, child: usize) -> Result<Self, SubstructureError> {
        let nodes_of = |d: usize| -> BTreeSet<usize> { partition.tets_of(d).iter().flat_map(|&t| mesh.tets()[t]).collect() };
        let pn = nodes_of(parent);
        let cn = nodes_of(child);
        let shared: Vec<usize> = pn.intersection(&cn).copied().collect();
        if shared.is_empty() {
            return Err(SubstructureError::EmptyInterface { parent, child });
        }
        let mut fit: BTreeSet<usize> = shared.iter().copied().collect();
        for &s in &shared {
            fit.extend(mesh.neighbors(s).iter().copied().filter(|j| pn.contains(j)));
        }
        Ok(Self { parent, child, shared, fit_nodes: fit.into_iter().collect() })
    }
}

/// Least-squares affine map `q ≈ A p + t` on centroid-centered coordinates.
pub fn interface_transform(rest: &[Vec3], deformed: &[Vec3]) -> Result<(Mat3, Vec3), SubstructureError> {
    if rest.len() != deformed.len() || rest.len() < 4 {
        return Err(SubstructureError::RankDeficient);
    }
    let n = rest.len() as f64;
    let pc = rest.iter().sum::<Vec3>() / n;
    let qc = deformed.iter().sum::<Vec3>() / n;
    let mut ppt = Mat3::zeros();
    let mut qpt = Mat3::zeros();
    for (p, q) in rest.iter().zip(deformed) {
        let (p, q) = (p - pc, q - qc);
        ppt += p * p.transpose();
        qpt += q * p.transpose();
    }
    let eig = ppt.symmetric_eigenvalues();
    if !(eig.min() > 1e-10 * eig.max()) {
        return Err(SubstructureError::RankDeficient);
    }
    let a = qpt * ppt.try_inverse().ok_or(SubstructureError::RankDeficient)?;
    Ok((a, qc - a * pc))
}

/// Rotation factor of `A = R S`; `A` must have positive determinant.
pub fn interface_rotation(a: &Mat3) -> Result<Mat3, SubstructureError> {
    let det = a.determinant();
    if !(det > 0.0) {
        return Err(SubstructureError::NonPositiveDeterminant(det));
    }
    Ok(crate::linalg::polar_rotation(a))
}

/// Motion of an interface frame; vectors in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceKinematics {
    pub r: Mat3,
    pub omega: Vec3,
    pub omega_dot: Vec3,
    pub accel: Vec3,
}

/// Kinematics at every frame of a history: central differences inside,
/// one-sided at both ends.
pub fn kinematics_series(rotations: &[Mat3], origins: &[Vec3], dt: f64) -> Result<Vec<InterfaceKinematics>, SubstructureError> {
    let n = rotations.len();
    if n < 3 || origins.len() != n {
        return Err(SubstructureError::ShortHistory(n.min(origins.len())));
    }
    let spin = |a: usize, b: usize| log_so3(&(rotations[b] * rotations[a].transpose())) / ((b - a) as f64 * dt);
    let omega: Vec<Vec3> = (0..n)
        .map(|k| match k {
            0 => spin(0, 1),
            k if k == n - 1 => spin(n - 2, n - 1),
            k => spin(k - 1, k + 1),
        })
        .collect();
    let diff = |v: &[Vec3], k: usize| match k {
        0 => (v[1] - v[0]) / dt,
        k if k == n - 1 => (v[n - 1] - v[n - 2]) / dt,
        k => (v[k + 1] - v[k - 1]) / (2.0 * dt),
    };
    Ok((0..n)
        .map(|k| {
            let c = k.clamp(1, n - 2);
            InterfaceKinematics {
                r: rotations[k],
                omega: omega[k],
                omega_dot: diff(&omega, k),
                accel: (origins[c + 1] - origins[c] * 2.0 + origins[c - 1]) / (dt * dt),
            }
        })
        .collect())
}

/// Kinematics at the latest frame, from backward differences.
pub fn interface_kinematics(rotations: &[Mat3], origins: &[Vec3], dt: f64) -> Result<InterfaceKinematics, SubstructureError> {
    let n = rotations.len();
    if n < 3 || origins.len() != n {
        return Err(SubstructureError::ShortHistory(n.min(origins.len())));
    }
    Ok(*kinematics_series(&rotations[n - 3..], &origins[n - 3..], dt)?.last().expect("three frames"))
}

/// `−m (a + ω̇×r + ω×(ω×r) + 2ω×v)`, all in the same frame.
pub fn fictitious_force(mass: f64, accel: &Vec3, omega: &Vec3, omega_dot: &Vec3, r: &Vec3, v: &Vec3) -> Vec3 {
    -mass * (accel + omega_dot.cross(r) + omega.cross(&omega.cross(r)) + 2.0 * omega.cross(v))
}

#[derive(Debug, Clone, Copy)]
pub struct SubstructureSetup {
    pub params: MaterialParams,
    pub density: f64,
    pub damping: RayleighDamping,
    pub dt: f64,
    pub scheme: Scheme,
    /// Couple children back into their parents: child mass lumped on the
    /// interface, child loads transmitted one step lagged.
    pub interface_forces: bool,
}

#[derive(Debug, Clone)]
struct DomainRuntime {
    parent: Option<usize>,
    local_to_global: Vec<usize>,
    global_to_local: BTreeMap<usize, usize>,
    ctx: WarpContext,
    node_mass: DVector<f64>,
    unit_force: DVector<f64>,
    state: SimState,
    started: bool,
    /// Rest positions of the frame-fit nodes (global ids) and their centroid.
    fit_nodes: Vec<usize>,
    rest_centroid: Vec3,
    /// Local ids of the interface nodes.
    shared_local: Vec<usize>,
    rotations: Vec<Mat3>,
    origins: Vec<Vec3>,
    /// World-frame loads from children, by local node.
    pending: DVector<f64>,
}

/// A partitioned mesh stepping all domains in BFS order.
#[derive(Debug, Clone)]
pub struct Substructured {
    mesh: TetMesh,
    setup: SubstructureSetup,
    graph: DomainGraph,
    order: Vec<usize>,
    domains: Vec<DomainRuntime>,
    owner: Vec<usize>,
    last_kinematics: Vec<Option<InterfaceKinematics>>,
}

impl Substructured {
    pub fn new(
        mesh: &TetMesh,
        partition: &DomainPartition,
        root: usize,
        nets: &[Network],
        field: ForceField,
        setup: SubstructureSetup,
    ) -> Result<Self, SubstructureError> {
        let graph = build_domain_graph(mesh, partition)?;
        let (parent, order) = graph.bfs_tree(root)?;
        let n_dom = graph.n_vertices();
        if nets.len() != 1 && nets.len() != n_dom {
            return Err(SubstructureError::NetworkCount { expected: n_dom, got: nets.len() });
        }
        struct Pieces {
            sub: TetMesh,
            l2g: Vec<usize>,
            sys: LinearSystem,
            node_mass: DVector<f64>,
            fit_nodes: Vec<usize>,
            shared: Vec<usize>,
        }
        let mut pieces = Vec::with_capacity(n_dom);
        for d in 0..n_dom {
            let (anchors, fit_nodes, shared) = match parent[d] {
                None => (mesh.anchors().to_vec(), Vec::new(), Vec::new()),
                Some(p) => {
                    let patch = InterfacePatch::between(mesh, partition, p, d)?;
                    (patch.shared.clone(), patch.fit_nodes, patch.shared)
                }
            };
            let (sub, l2g) = mesh.submesh(&partition.tets_of(d), &anchors)?;
            let sys = LinearSystem::new(&sub, &setup.params, setup.density)?;
            let node_mass = lumped_mass(&sub, setup.density)?;
            pieces.push(Pieces { sub, l2g, sys, node_mass, fit_nodes, shared });
        }
        // leaves first, so a child's added mass already carries its own subtree
        let mut added: Vec<DVector<f64>> = pieces.iter().map(|p| DVector::zeros(p.node_mass.len())).collect();
        if setup.interface_forces {
            for &d in order.iter().rev() {
                let Some(p) = parent[d] else { continue };
                let share = (pieces[d].node_mass.sum() + added[d].sum()) / pieces[d].shared.len() as f64;
                for g in &pieces[d].shared {
                    let l = pieces[p].l2g.binary_search(g).expect("interface node belongs to the parent");
                    added[p][l] += share;
                }
            }
        }
        let mut domains = Vec::with_capacity(n_dom);
        for (d, pc) in pieces.into_iter().enumerate() {
            let g2l: BTreeMap<usize, usize> = pc.l2g.iter().enumerate().map(|(l, &g)| (g, l)).collect();
            let mass = &pc.sys.mass + dof_masses(&added[d]);
            let pf = prefactorize(&pc.sys.stiffness, &mass, setup.damping, setup.dt, setup.scheme, &pc.sys.anchored)?;
            let net = nets[if nets.len() == 1 { 0 } else { d }].clone();
            let ctx = WarpContext::with_prefactorization(&pc.sub, pf, net, field, setup.params.poisson)?;
            let unit_force = field.with_magnitude(1.0).nodal_forces(&pc.sub, &pc.node_mass);
            let rest_centroid = if pc.fit_nodes.is_empty() {
                Vec3::zeros()
            } else {
                pc.fit_nodes.iter().map(|&g| mesh.node(g)).sum::<Vec3>() / pc.fit_nodes.len() as f64
            };
            let shared_local = pc.shared.iter().map(|g| g2l[g]).collect();
            let n = pc.sub.n_dofs();
            domains.push(DomainRuntime {
                parent: parent[d],
                local_to_global: pc.l2g,
                global_to_local: g2l,
                ctx,
                node_mass: pc.node_mass,
                unit_force,
                state: SimState::rest(n),
                started: false,
                fit_nodes: pc.fit_nodes,
                rest_centroid,
                shared_local,
                // the system starts at rest, so the history before t = 0 is the rest frame
                rotations: vec![Mat3::identity(); 2],
                origins: vec![rest_centroid; 2],
                pending: DVector::zeros(n),
            });
        }
        let mut owner = vec![usize::MAX; mesh.n_nodes()];
        for &d in &order {
            for &g in &domains[d].local_to_global {
                if owner[g] == usize::MAX {
                    owner[g] = d;
                }
            }
        }
        Ok(Self { mesh: mesh.clone(), setup, graph, order, domains, owner, last_kinematics: vec![None; n_dom] })
    }

    pub fn graph(&self) -> &DomainGraph {
        &self.graph
    }

    /// Domains in stepping order (every parent before its children).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent(&self, d: usize) -> Option<usize> {
        self.domains[d].parent
    }

    /// Interface kinematics each child saw in the last step.
    pub fn last_kinematics(&self, d: usize) -> Option<InterfaceKinematics> {
        self.last_kinematics[d]
    }

    /// Advances every domain by one step under `magnitude · field`; returns the
    /// global world displacement.
    pub fn step(&mut self, magnitude: f64) -> Result<DVector<f64>, SubstructureError> {
        let dt = self.setup.dt;
        let mut world = DVector::zeros(self.mesh.n_dofs());
        let mut written = vec![false; self.mesh.n_nodes()];
        for k in 0..self.order.len() {
            let d = self.order[k];
            let dom = &mut self.domains[d];
            let n_local = dom.local_to_global.len();
            let mut f = &dom.unit_force * magnitude;
            let (r, origin) = match dom.parent {
                None => {
                    f += &dom.pending;
                    (Mat3::identity(), Vec3::zeros())
                }
                Some(_) => {
                    let rest: Vec<Vec3> = dom.fit_nodes.iter().map(|&g| self.mesh.node(g)).collect();
                    let cur: Vec<Vec3> = dom.fit_nodes.iter().map(|&g| self.mesh.node(g) + node_vec(&world, g)).collect();
                    let (a, _) = interface_transform(&rest, &cur)?;
                    let r = interface_rotation(&a)?;
                    let origin = cur.iter().sum::<Vec3>() / cur.len() as f64;
                    dom.rotations.push(r);
                    dom.origins.push(origin);
                    let kin = interface_kinematics(&dom.rotations, &dom.origins, dt)?;
                    self.last_kinematics[d] = Some(kin);
                    // body-frame quantities
                    let (acc, om, om_dot) = (r.transpose() * kin.accel, r.transpose() * kin.omega, r.transpose() * kin.omega_dot);
                    for i in 0..n_local {
                        let x = self.mesh.node(dom.local_to_global[i]);
                        let applied = r.transpose() * (node_vec(&f, i) + node_vec(&dom.pending, i));
                        let fict = fictitious_force(dom.node_mass[i], &acc, &om, &om_dot, &(x - dom.rest_centroid), &node_vec(&dom.state.v, i));
                        set_node_vec(&mut f, i, &(applied + fict));
                    }
                    (r, origin)
                }
            };
            if !dom.started {
                dom.state.a = consistent_acceleration(&dom.state, &f, dom.ctx.prefactorization());
                dom.started = true;
            }
            let (next, u) = deepwarp_step(&mut dom.ctx, &dom.state, &f)?;
            dom.state = next;
            for i in 0..n_local {
                let g = dom.local_to_global[i];
                if written[g] || self.owner[g] != d {
                    continue;
                }
                let disp = if dom.parent.is_none() {
                    node_vec(&u, i)
                } else {
                    let x = self.mesh.node(g);
                    origin + r * (x - dom.rest_centroid + node_vec(&u, i)) - x
                };
                set_node_vec(&mut world, g, &disp);
                written[g] = true;
            }
            if let (Some(p), true) = (dom.parent, self.setup.interface_forces) {
                let pos = |g: usize| self.mesh.node(g) + node_vec(&world, g);
                let points: Vec<Vec3> = dom.shared_local.iter().map(|&i| pos(dom.local_to_global[i])).collect();
                let c = points.iter().sum::<Vec3>() / points.len() as f64;
                let (mut force, mut moment) = (Vec3::zeros(), Vec3::zeros());
                for i in 0..n_local {
                    let load = node_vec(&dom.unit_force, i) * magnitude + node_vec(&dom.pending, i);
                    force += load;
                    moment += (pos(dom.local_to_global[i]) - c).cross(&load);
                }
                let loads: Vec<(usize, Vec3)> =
                    dom.shared_local.iter().map(|&i| dom.local_to_global[i]).zip(rigid_equivalent(&points, &force, &moment)).collect();
                let parent = &mut self.domains[p];
                for (g, load) in loads {
                    let l = parent.global_to_local[&g];
                    let cur = node_vec(&parent.pending, l);
                    set_node_vec(&mut parent.pending, l, &(cur + load));
                }
            }
            self.domains[d].pending.fill(0.0);
        }
        Ok(world)
    }
}

/// Point forces on `points` whose resultant is `force` and whose moment about
/// the points' centroid is `moment` (least-norm when the points are collinear).
pub fn rigid_equivalent(points: &[Vec3], force: &Vec3, moment: &Vec3) -> Vec<Vec3> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut j = Mat3::zeros();
    for p in points {
        let r = p - c;
        j += Mat3::identity() * r.norm_squared() - r * r.transpose();
    }
    let w = j.pseudo_inverse(1e-12 * (1.0 + j.norm())).unwrap_or_else(|_| Mat3::zeros()) * moment;
    points.iter().map(|p| force / n + w.cross(&(p - c))).collect()
}

#[derive(Debug, Clone)]
pub struct SubstructuredRun {
    pub order: Vec<usize>,
    /// Global world displacement after each step.
    pub displacements: Vec<DVector<f64>>,
}

pub fn simulate_substructured(
    mesh: &TetMesh,
    partition: &DomainPartition,
    root: usize,
    nets: &[Network],
    script: &LoadScript,
    setup: SubstructureSetup,
) -> Result<SubstructuredRun, SubstructureError> {
    let mut sim = Substructured::new(mesh, partition, root, nets, script.field, setup)?;
    let displacements = script.magnitudes.iter().map(|&m| sim.step(m)).collect::<Result<Vec<_>, _>>()?;
    Ok(SubstructuredRun { order: sim.order().to_vec(), displacements })
}

/// A labeled voxel shape: mesh plus one domain label per tet.
#[derive(Debug, Clone)]
pub struct LabeledShape {
    pub mesh: TetMesh,
    pub labels: Vec<usize>,
}

impl LabeledShape {
    fn from_cells(cells: BTreeMap<[i64; 3], usize>, spacing: f64) -> Result<Self, MeshError> {
        let keys: Vec<[i64; 3]> = cells.keys().copied().collect();
        let mesh = voxel_mesh(&keys, Vec3::repeat(spacing))?;
        let labels = cells.values().flat_map(|&l| [l; 6]).collect();
        Ok(Self { mesh, labels })
    }

    pub fn partition(&self) -> Result<DomainPartition, MeshError> {
        DomainPartition::new(&self.mesh, self.labels.clone())
    }
}

fn add_column(cells: &mut BTreeMap<[i64; 3], usize>, x: i64, ys: impl Iterator<Item = i64>, depth: i64, label: usize) {
    for y in ys {
        for z in 0..depth {
            cells.insert([x, y, z], label);
        }
    }
}

/// T shape: a stem of `stem` cells (domain 0, including the junction) with
/// straight arms of `arm` cells on both sides (domains 1 and 2).
pub fn t_shape(stem: usize, arm: usize, depth: usize) -> Result<LabeledShape, MeshError> {
    let (s, a, d) = (stem as i64, arm as i64, depth as i64);
    let mut cells = BTreeMap::new();
    add_column(&mut cells, 0, 0..=s, d, 0);
    for k in 1..=a {
        add_column(&mut cells, -k, s..s + 1, d, 1);
        add_column(&mut cells, k, s..s + 1, d, 2);
    }
    LabeledShape::from_cells(cells, 1.0)
}

/// Y shape: stem plus two staircase arms rising diagonally.
pub fn y_shape(stem: usize, arm: usize, depth: usize) -> Result<LabeledShape, MeshError> {
    let (s, a, d) = (stem as i64, arm as i64, depth as i64);
    let mut cells = BTreeMap::new();
    add_column(&mut cells, 0, 0..=s, d, 0);
    for k in 1..=a {
        add_column(&mut cells, -k, s + k - 1..s + k + 1, d, 1);
        add_column(&mut cells, k, s + k - 1..s + k + 1, d, 2);
    }
    LabeledShape::from_cells(cells, 1.0)
}

/// Arrow: a shaft with two barbs falling back from its tip.
pub fn arrow_shape(shaft: usize, barb: usize, depth: usize) -> Result<LabeledShape, MeshError> {
    let (s, b, d) = (shaft as i64, barb as i64, depth as i64);
    let mut cells = BTreeMap::new();
    add_column(&mut cells, 0, 0..=s, d, 0);
    for k in 1..=b {
        add_column(&mut cells, -k, s - k..s - k + 2, d, 1);
        add_column(&mut cells, k, s - k..s - k + 2, d, 2);
    }
    LabeledShape::from_cells(cells, 1.0)
}

/// Plus-shaped cross: a center cell (domain 0) and four arms.
pub fn cross_shape(arm: usize, depth: usize) -> Result<LabeledShape, MeshError> {
    let (a, d) = (arm as i64, depth as i64);
    let mut cells = BTreeMap::new();
    add_column(&mut cells, 0, 0..1, d, 0);
    for k in 1..=a {
        add_column(&mut cells, -k, 0..1, d, 1);
        add_column(&mut cells, k, 0..1, d, 2);
        add_column(&mut cells, 0, k..k + 1, d, 3);
        add_column(&mut cells, 0, -k..-k + 1, d, 4);
    }
    LabeledShape::from_cells(cells, 1.0)
}
