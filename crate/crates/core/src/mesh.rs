//! Tetrahedral meshes: text I/O, validation, normalization, adjacency and
//! lumped masses.
//!
//! A [`TetMesh`] is immutable once built. Construction validates indices,
//! repairs inverted tets by swapping their last two corners, rejects
//! degenerate ones, and caches per-element rest data and node adjacency.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::Vec3;
use crate::material::ElementPrecomp;

/// Rest volumes at or below this are rejected as degenerate.
const MIN_VOLUME: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{file} line {line}: {msg}")]
    Parse { file: &'static str, line: usize, msg: String },
    #[error("tet {tet} references node {node}, but the mesh has {n_nodes} nodes")]
    IndexOutOfRange { tet: usize, node: usize, n_nodes: usize },
    #[error("anchor {node} is not a node index (mesh has {n_nodes} nodes)")]
    AnchorOutOfRange { node: usize, n_nodes: usize },
    #[error("tet {tet} has zero volume")]
    DegenerateTet { tet: usize },
    #[error("tet {tet} repeats a node index")]
    RepeatedIndex { tet: usize },
    #[error("mesh has no nodes")]
    Empty,
    #[error("all nodes coincide; cannot normalize")]
    ZeroExtent,
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("mesh has no anchor nodes")]
    NoAnchors,
    #[error("non-finite coordinate at node {0}")]
    NonFinite(usize),
    #[error("partition has {got} labels but the mesh has {expected} tets")]
    PartitionLength { expected: usize, got: usize },
    #[error("domain {0} is not face-connected")]
    DisconnectedDomain(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct TetMesh {
    nodes: Vec<Vec3>,
    tets: Vec<[usize; 4]>,
    anchors: Vec<usize>,
    is_anchor: Vec<bool>,
    scale_factor: f64,
    precomps: Vec<ElementPrecomp>,
    adjacency: Vec<Vec<usize>>,
}

impl TetMesh {
    pub fn new(nodes: Vec<Vec3>, tets: Vec<[usize; 4]>, anchors: Vec<usize>) -> Result<Self, MeshError> {
        Self::build(nodes, tets, anchors, 1.0)
    }

    fn build(
        nodes: Vec<Vec3>,
        mut tets: Vec<[usize; 4]>,
        anchors: Vec<usize>,
        scale_factor: f64,
    ) -> Result<Self, MeshError> {
        let n = nodes.len();
        if n == 0 {
            return Err(MeshError::Empty);
        }
        if let Some(i) = nodes.iter().position(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        let mut precomps = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter_mut().enumerate() {
            if let Some(&node) = tet.iter().find(|&&v| v >= n) {
                return Err(MeshError::IndexOutOfRange { tet: t, node, n_nodes: n });
            }
            let distinct: BTreeSet<_> = tet.iter().collect();
            if distinct.len() != 4 {
                return Err(MeshError::RepeatedIndex { tet: t });
            }
            let vol = signed_volume(&nodes, tet);
            let scale = edge_scale(&nodes, tet);
            if vol.abs() <= MIN_VOLUME * scale.powi(3).max(1e-300) || vol == 0.0 {
                return Err(MeshError::DegenerateTet { tet: t });
            }
            if vol < 0.0 {
                tet.swap(2, 3);
            }
            let corners = tet.map(|v| nodes[v]);
            precomps.push(ElementPrecomp::new(&corners));
        }
        let mut is_anchor = vec![false; n];
        for &a in &anchors {
            if a >= n {
                return Err(MeshError::AnchorOutOfRange { node: a, n_nodes: n });
            }
            is_anchor[a] = true;
        }
        let anchors = (0..n).filter(|&i| is_anchor[i]).collect();
        let adjacency = build_adjacency(n, &tets);
        Ok(Self { nodes, tets, anchors, is_anchor, scale_factor, precomps, adjacency })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Vec3 {
        self.nodes[i]
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    /// Sorted anchor node indices.
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        self.is_anchor[i]
    }

    /// Product of all scales applied by [`normalize_to_unit_sphere`].
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn precomps(&self) -> &[ElementPrecomp] {
        &self.precomps
    }

    /// Sorted neighbors of node `i` (nodes sharing a tet with it).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        self.precomps[t].rest_volume()
    }

    pub fn total_volume(&self) -> f64 {
        self.precomps.iter().map(ElementPrecomp::rest_volume).sum()
    }

    pub fn tet_centroid(&self, t: usize) -> Vec3 {
        self.tets[t].iter().map(|&v| self.nodes[v]).sum::<Vec3>() / 4.0
    }

    pub fn require_anchors(&self) -> Result<(), MeshError> {
        if self.anchors.is_empty() {
            Err(MeshError::NoAnchors)
        } else {
            Ok(())
        }
    }

    /// Same geometry with a new anchor set.
    pub fn with_anchors(&self, anchors: impl IntoIterator<Item = usize>) -> Result<Self, MeshError> {
        let anchors: Vec<usize> = anchors.into_iter().collect();
        let n = self.nodes.len();
        let mut is_anchor = vec![false; n];
        for &a in &anchors {
            if a >= n {
                return Err(MeshError::AnchorOutOfRange { node: a, n_nodes: n });
            }
            is_anchor[a] = true;
        }
        Ok(Self {
            anchors: (0..n).filter(|&i| is_anchor[i]).collect(),
            is_anchor,
            ..self.clone()
        })
    }

    /// Anchors every node whose rest position satisfies `pred`.
    pub fn anchored_where(&self, pred: impl Fn(&Vec3) -> bool) -> Self {
        let anchors: Vec<usize> = (0..self.n_nodes()).filter(|&i| pred(&self.nodes[i])).collect();
        self.with_anchors(anchors).expect("indices come from the mesh")
    }

    /// Applies `x ↦ f(x)` to every rest position (e.g. a rigid motion).
    pub fn map_nodes(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self, MeshError> {
        let nodes = self.nodes.iter().map(f).collect();
        Self::build(nodes, self.tets.clone(), self.anchors.clone(), self.scale_factor)
    }

    /// Mesh made of the given tets, with nodes renumbered in increasing
    /// global order. Returns the mesh and the local → global node map.
    pub fn submesh(&self, tet_ids: &[usize], anchors_global: &[usize]) -> Result<(Self, Vec<usize>), MeshError> {
        let used: BTreeSet<usize> = tet_ids.iter().flat_map(|&t| self.tets[t]).collect();
        let global: Vec<usize> = used.into_iter().collect();
        let local: BTreeMap<usize, usize> = global.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let nodes = global.iter().map(|&g| self.nodes[g]).collect();
        let tets = tet_ids.iter().map(|&t| self.tets[t].map(|g| local[&g])).collect();
        let anchors = anchors_global.iter().filter_map(|g| local.get(g).copied()).collect();
        Ok((Self::build(nodes, tets, anchors, self.scale_factor)?, global))
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for x in &self.nodes {
            lo = lo.inf(x);
            hi = hi.sup(x);
        }
        (lo, hi)
    }
}

fn signed_volume(nodes: &[Vec3], tet: &[usize; 4]) -> f64 {
    let [a, b, c, d] = tet.map(|v| nodes[v]);
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

fn edge_scale(nodes: &[Vec3], tet: &[usize; 4]) -> f64 {
    let mut s: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            s = s.max((nodes[tet[i]] - nodes[tet[j]]).norm());
        }
    }
    s
}

fn build_adjacency(n: usize, tets: &[[usize; 4]]) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); n];
    for tet in tets {
        for &a in tet {
            for &b in tet {
                if a != b {
                    sets[a].insert(b);
                }
            }
        }
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

/// Per-node neighbor lists: `j ∈ adj(i)` iff `i` and `j` share a tet.
pub fn node_adjacency(mesh: &TetMesh) -> Vec<Vec<usize>> {
    mesh.adjacency.clone()
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Vec<String>), std::io::Error>> {
    reader.lines().enumerate().filter_map(|(k, line)| match line {
        Err(e) => Some(Err(e)),
        Ok(line) => {
            let content = line.split('#').next().unwrap_or("").trim().to_string();
            if content.is_empty() {
                None
            } else {
                Some(Ok((k + 1, content.split_whitespace().map(str::to_string).collect())))
            }
        }
    })
}

fn parse_num<T: std::str::FromStr>(file: &'static str, line: usize, tok: &str) -> Result<T, MeshError> {
    tok.parse()
        .map_err(|_| MeshError::Parse { file, line, msg: format!("cannot parse '{tok}'") })
}

fn expect_index(file: &'static str, line: usize, tok: &str, expected: usize) -> Result<(), MeshError> {
    let idx: usize = parse_num(file, line, tok)?;
    if idx != expected {
        return Err(MeshError::Parse {
            file,
            line,
            msg: format!("expected index {expected}, found {idx} (indices are 0-based and contiguous)"),
        });
    }
    Ok(())
}

/// Parses `index x y z` node lines.
pub fn parse_nodes<R: BufRead>(reader: R) -> Result<Vec<Vec3>, MeshError> {
    let mut nodes = Vec::new();
    for item in data_lines(reader) {
        let (line, toks) = item?;
        if toks.len() != 4 {
            return Err(MeshError::Parse { file: "node", line, msg: format!("expected 4 fields, found {}", toks.len()) });
        }
        expect_index("node", line, &toks[0], nodes.len())?;
        let x: f64 = parse_num("node", line, &toks[1])?;
        let y: f64 = parse_num("node", line, &toks[2])?;
        let z: f64 = parse_num("node", line, &toks[3])?;
        nodes.push(Vec3::new(x, y, z));
    }
    Ok(nodes)
}

/// Parses `index n0 n1 n2 n3` tet lines.
pub fn parse_tets<R: BufRead>(reader: R) -> Result<Vec<[usize; 4]>, MeshError> {
    let mut tets = Vec::new();
    for item in data_lines(reader) {
        let (line, toks) = item?;
        if toks.len() != 5 {
            return Err(MeshError::Parse { file: "ele", line, msg: format!("expected 5 fields, found {}", toks.len()) });
        }
        expect_index("ele", line, &toks[0], tets.len())?;
        let mut tet = [0usize; 4];
        for (k, slot) in tet.iter_mut().enumerate() {
            *slot = parse_num("ele", line, &toks[k + 1])?;
        }
        tets.push(tet);
    }
    Ok(tets)
}

fn parse_index_list<R: BufRead>(reader: R, file: &'static str) -> Result<Vec<usize>, MeshError> {
    let mut out = Vec::new();
    for item in data_lines(reader) {
        let (line, toks) = item?;
        if toks.len() != 1 {
            return Err(MeshError::Parse { file, line, msg: format!("expected 1 field, found {}", toks.len()) });
        }
        out.push(parse_num(file, line, &toks[0])?);
    }
    Ok(out)
}

pub fn parse_anchors<R: BufRead>(reader: R) -> Result<Vec<usize>, MeshError> {
    parse_index_list(reader, "anchor")
}

/// Reads node, ele and anchor streams into a validated mesh.
pub fn load_mesh<N: BufRead, E: BufRead, A: BufRead>(node_text: N, ele_text: E, anchor_text: A) -> Result<TetMesh, MeshError> {
    let nodes = parse_nodes(node_text)?;
    let tets = parse_tets(ele_text)?;
    let anchors = parse_anchors(anchor_text)?;
    TetMesh::new(nodes, tets, anchors)
}

pub fn write_nodes<W: Write>(mut w: W, mesh: &TetMesh) -> std::io::Result<()> {
    for (i, x) in mesh.nodes.iter().enumerate() {
        writeln!(w, "{i} {:e} {:e} {:e}", x.x, x.y, x.z)?;
    }
    Ok(())
}

pub fn write_tets<W: Write>(mut w: W, mesh: &TetMesh) -> std::io::Result<()> {
    for (i, t) in mesh.tets.iter().enumerate() {
        writeln!(w, "{i} {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    Ok(())
}

pub fn write_anchors<W: Write>(mut w: W, mesh: &TetMesh) -> std::io::Result<()> {
    for a in &mesh.anchors {
        writeln!(w, "{a}")?;
    }
    Ok(())
}

/// Centers the nodes on their centroid and scales them so that the farthest
/// node lies on the unit sphere.
pub fn normalize_to_unit_sphere(mesh: &TetMesh) -> Result<TetMesh, MeshError> {
    let n = mesh.n_nodes() as f64;
    let centroid = mesh.nodes.iter().sum::<Vec3>() / n;
    let radius = mesh.nodes.iter().map(|x| (x - centroid).norm()).fold(0.0, f64::max);
    if radius <= f64::EPSILON * (1.0 + centroid.norm()) {
        return Err(MeshError::ZeroExtent);
    }
    let s = 1.0 / radius;
    let nodes = mesh.nodes.iter().map(|x| (x - centroid) * s).collect();
    TetMesh::build(nodes, mesh.tets.clone(), mesh.anchors.clone(), mesh.scale_factor * s)
}

/// Per-node lumped mass: each tet contributes `density·volume/4` to its corners.
pub fn lumped_mass(mesh: &TetMesh, density: f64) -> Result<DVector<f64>, MeshError> {
    if !(density > 0.0) {
        return Err(MeshError::NonPositiveDensity(density));
    }
    let mut m = DVector::zeros(mesh.n_nodes());
    for (t, tet) in mesh.tets.iter().enumerate() {
        let share = density * mesh.precomps[t].rest_volume() / 4.0;
        for &v in tet {
            m[v] += share;
        }
    }
    Ok(m)
}

/// Expands per-node masses to the 3n DOF layout.
pub fn dof_masses(node_mass: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(3 * node_mass.len(), |k, _| node_mass[k / 3])
}

/// Tet whose centroid is closest to the lumped-mass center (lowest index on ties).
pub fn select_pseudo_anchor(mesh: &TetMesh) -> usize {
    let m = lumped_mass(mesh, 1.0).expect("unit density is positive");
    let total: f64 = m.iter().sum();
    let center = mesh.nodes.iter().zip(m.iter()).map(|(x, &w)| x * w).sum::<Vec3>() / total;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for t in 0..mesh.n_tets() {
        let d = (mesh.tet_centroid(t) - center).norm();
        if d < best_d {
            best = t;
            best_d = d;
        }
    }
    best
}

/// Anchors the four nodes of [`select_pseudo_anchor`]'s tet.
pub fn with_pseudo_anchor(mesh: &TetMesh) -> TetMesh {
    let t = select_pseudo_anchor(mesh);
    mesh.with_anchors(mesh.tets[t]).expect("tet indices are valid")
}

// Kuhn subdivision of the unit cube: paths 000 → 111 along each axis order.
const KUHN: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Conforming tet mesh of a set of grid cells, six tets per cell.
///
/// Cell `(i, j, k)` spans `[i·h.x, (i+1)·h.x] × …`. Nodes are numbered in
/// lexicographic `(i, j, k)` order of their grid coordinates. No anchors.
pub fn voxel_mesh(cells: &[[i64; 3]], spacing: Vec3) -> Result<TetMesh, MeshError> {
    let cells: BTreeSet<[i64; 3]> = cells.iter().copied().collect();
    let mut grid = BTreeSet::new();
    for c in &cells {
        for corner in 0..8 {
            grid.insert([c[0] + (corner & 1) as i64, c[1] + ((corner >> 1) & 1) as i64, c[2] + ((corner >> 2) & 1) as i64]);
        }
    }
    let index: BTreeMap<[i64; 3], usize> = grid.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let nodes = grid
        .iter()
        .map(|g| Vec3::new(g[0] as f64 * spacing.x, g[1] as f64 * spacing.y, g[2] as f64 * spacing.z))
        .collect();
    let mut tets = Vec::with_capacity(6 * cells.len());
    for c in &cells {
        for order in KUHN {
            let mut p = *c;
            let mut tet = [index[&p]; 4];
            for (slot, &axis) in order.iter().enumerate() {
                p[axis] += 1;
                tet[slot + 1] = index[&p];
            }
            tets.push(tet);
        }
    }
    TetMesh::new(nodes, tets, Vec::new())
}

/// Box `[0, size.x] × [0, size.y] × [0, size.z]` split into `nx × ny × nz` cells.
pub fn box_mesh(nx: usize, ny: usize, nz: usize, size: Vec3) -> Result<TetMesh, MeshError> {
    let mut cells = Vec::with_capacity(nx * ny * nz);
    for i in 0..nx as i64 {
        for j in 0..ny as i64 {
            for k in 0..nz as i64 {
                cells.push([i, j, k]);
            }
        }
    }
    voxel_mesh(&cells, Vec3::new(size.x / nx as f64, size.y / ny as f64, size.z / nz as f64))
}

/// Per-tet domain labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainPartition {
    labels: Vec<usize>,
}

impl DomainPartition {
    /// Validates that every tet is labeled and that each domain is face-connected.
    pub fn new(mesh: &TetMesh, labels: Vec<usize>) -> Result<Self, MeshError> {
        if labels.len() != mesh.n_tets() {
            return Err(MeshError::PartitionLength { expected: mesh.n_tets(), got: labels.len() });
        }
        let faces = tet_face_neighbors(mesh);
        let n_domains = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; mesh.n_tets()];
        let mut visited_domain = vec![false; n_domains];
        for start in 0..mesh.n_tets() {
            if seen[start] {
                continue;
            }
            let d = labels[start];
            if visited_domain[d] {
                return Err(MeshError::DisconnectedDomain(d));
            }
            visited_domain[d] = true;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(t) = stack.pop() {
                for &nb in &faces[t] {
                    if !seen[nb] && labels[nb] == d {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        Ok(Self { labels })
    }

    pub fn single(mesh: &TetMesh) -> Self {
        Self { labels: vec![0; mesh.n_tets()] }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_domains(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn tets_of(&self, domain: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&t| self.labels[t] == domain).collect()
    }
}

/// One domain label per non-comment line.
pub fn load_partition<R: BufRead>(mesh: &TetMesh, reader: R) -> Result<DomainPartition, MeshError> {
    DomainPartition::new(mesh, parse_index_list(reader, "partition")?)
}

/// For each tet, the tets sharing one of its faces.
pub fn tet_face_neighbors(mesh: &TetMesh) -> Vec<Vec<usize>> {
    let mut by_face: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (t, tet) in mesh.tets.iter().enumerate() {
        for skip in 0..4 {
            let mut face = [0usize; 3];
            let mut k = 0;
            for (c, &v) in tet.iter().enumerate() {
                if c != skip {
                    face[k] = v;
                    k += 1;
                }
            }
            face.sort_unstable();
            by_face.entry(face).or_default().push(t);
        }
    }
    let mut out = vec![Vec::new(); mesh.n_tets()];
    for tets in by_face.values() {
        for &a in tets {
            for &b in tets {
                if a != b {
                    out[a].push(b);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const UNIT_NODES: &str = "# unit tet\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n";

    fn unit_tet() -> TetMesh {
        load_mesh(Cursor::new(UNIT_NODES), Cursor::new("0 0 1 2 3\n"), Cursor::new("0\n")).unwrap()
    }

    #[test]
    fn loads_unit_tet() {
        let m = unit_tet();
        assert_eq!(m.n_tets(), 1);
        assert!((m.total_volume() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.anchors(), &[0]);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = load_mesh(Cursor::new(UNIT_NODES), Cursor::new("0 0 1 2 99\n"), Cursor::new("")).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { node: 99, .. }));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_nodes(Cursor::new("0 0 0 0\n\n1 1 x 0\n")).unwrap_err();
        match err {
            MeshError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_tet_is_reordered_and_flat_rejected() {
        let m = load_mesh(Cursor::new(UNIT_NODES), Cursor::new("0 0 1 3 2\n"), Cursor::new("")).unwrap();
        assert!(m.tet_volume(0) > 0.0);
        assert_eq!(m.tets()[0], [0, 1, 2, 3]);
        let flat = "0 0 0 0\n1 1 0 0\n2 0 1 0\n3 1 1 0\n";
        let err = load_mesh(Cursor::new(flat), Cursor::new("0 0 1 2 3\n"), Cursor::new("")).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateTet { tet: 0 }));
    }

    #[test]
    fn beam_volume_and_mass() {
        let m = box_mesh(2, 1, 1, Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(m.n_tets(), 12);
        assert!((m.total_volume() - 2.0).abs() < 1e-12);
        let mass = lumped_mass(&m, 3.0).unwrap();
        assert!((mass.sum() - 6.0).abs() < 1e-10);
    }

    #[test]
    fn unit_tet_masses() {
        let mass = lumped_mass(&unit_tet(), 6.0).unwrap();
        for v in mass.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!(matches!(lumped_mass(&unit_tet(), 0.0), Err(MeshError::NonPositiveDensity(_))));
    }

    #[test]
    fn adjacency_single_and_shared_face() {
        let m = unit_tet();
        for i in 0..4 {
            assert_eq!(m.neighbors(i).len(), 3);
        }
        let nodes = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let two = TetMesh::new(nodes, vec![[0, 1, 2, 3], [1, 2, 3, 4]], vec![]).unwrap();
        for shared in [1, 2, 3] {
            assert_eq!(two.neighbors(shared).len(), 4);
        }
        assert_eq!(two.neighbors(0), &[1, 2, 3]);
        assert_eq!(two.neighbors(4), &[1, 2, 3]);
    }

    #[test]
    fn normalization() {
        let m = box_mesh(3, 1, 1, Vec3::new(8.0, 2.0, 2.0)).unwrap();
        let n = normalize_to_unit_sphere(&m).unwrap();
        let r = n.nodes().iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
        let again = normalize_to_unit_sphere(&n).unwrap();
        for (a, b) in n.nodes().iter().zip(again.nodes()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((again.scale_factor() - n.scale_factor()).abs() < 1e-12);
    }

    #[test]
    fn normalization_scale_factor_quarter() {
        // every node at distance 4 from the centroid
        let nodes = vec![
            Vec3::new(4.0, 0.0, 0.0),
            Vec3::new(-4.0, 0.0, 0.0),
            Vec3::new(0.0, 4.0, 0.0),
            Vec3::new(0.0, 0.0, 4.0),
            Vec3::new(0.0, -4.0, 0.0),
            Vec3::new(0.0, 0.0, -4.0),
        ];
        let centroid_offset = nodes.iter().sum::<Vec3>() / 6.0;
        assert!(centroid_offset.norm() < 1e-15);
        let m = TetMesh::new(nodes, vec![[0, 2, 3, 1], [0, 4, 5, 1]], vec![]).unwrap();
        let n = normalize_to_unit_sphere(&m).unwrap();
        assert!((n.scale_factor() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn coincident_nodes_cannot_normalize() {
        let m = unit_tet().map_nodes(|_| Vec3::zeros());
        // degenerate tets fail on construction before normalization
        assert!(m.is_err());
    }

    #[test]
    fn pseudo_anchor() {
        assert_eq!(select_pseudo_anchor(&unit_tet()), 0);
        let beam = box_mesh(4, 2, 2, Vec3::new(4.0, 2.0, 2.0)).unwrap();
        let t = select_pseudo_anchor(&beam);
        let center = Vec3::new(2.0, 1.0, 1.0);
        let best = (0..beam.n_tets()).map(|k| (beam.tet_centroid(k) - center).norm()).fold(f64::INFINITY, f64::min);
        assert!(((beam.tet_centroid(t) - center).norm() - best).abs() < 1e-12);
        assert!((beam.tet_centroid(t) - center).norm() < 3f64.sqrt());
    }

    #[test]
    fn pseudo_anchor_tie_picks_lowest() {
        // two mirror-image tets around the origin
        let nodes = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(-2.0, 0.0, 0.0),
            Vec3::new(-1.0, 1.0, 0.0),
            Vec3::new(-1.0, 0.0, 1.0),
        ];
        let m = TetMesh::new(nodes, vec![[4, 5, 6, 7], [0, 1, 2, 3]], vec![]).unwrap();
        assert_eq!(select_pseudo_anchor(&m), 0);
    }

    #[test]
    fn round_trip_text_io() {
        let m = box_mesh(2, 2, 1, Vec3::new(1.0, 1.0, 0.5)).unwrap().anchored_where(|x| x.x == 0.0);
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        write_nodes(&mut a, &m).unwrap();
        write_tets(&mut b, &m).unwrap();
        write_anchors(&mut c, &m).unwrap();
        let back = load_mesh(Cursor::new(a), Cursor::new(b), Cursor::new(c)).unwrap();
        assert_eq!(back.tets(), m.tets());
        assert_eq!(back.anchors(), m.anchors());
        assert_eq!(back.nodes(), m.nodes());
    }

    #[test]
    fn partition_validation() {
        let m = box_mesh(2, 1, 1, Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let labels: Vec<usize> = (0..12).map(|t| t / 6).collect();
        assert!(DomainPartition::new(&m, labels).is_ok());
        assert!(matches!(DomainPartition::new(&m, vec![0; 3]), Err(MeshError::PartitionLength { .. })));
        let m3 = box_mesh(3, 1, 1, Vec3::new(3.0, 1.0, 1.0)).unwrap();
        let split: Vec<usize> = (0..18).map(|t| usize::from(t / 6 == 1)).collect();
        assert!(matches!(DomainPartition::new(&m3, split), Err(MeshError::DisconnectedDomain(0))));
    }

    #[test]
    fn adjacency_is_symmetric_and_connected() {
        let m = box_mesh(3, 2, 2, Vec3::new(3.0, 2.0, 2.0)).unwrap();
        for i in 0..m.n_nodes() {
            assert!(!m.neighbors(i).contains(&i));
            for &j in m.neighbors(i) {
                assert!(m.neighbors(j).contains(&i));
            }
        }
        let mut seen = vec![false; m.n_nodes()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in m.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
