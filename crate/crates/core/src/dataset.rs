//! Training-pose generation, per-node record extraction and the dataset file.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufReader, Read, Write};

use nalgebra::{DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{apply_anchors, zero_anchored, DynamicsError, LinearSystem};
use crate::features::{
    align_kinematics, assemble_feature, geodesic_all, static_features_with, FeatureError, FeatureVector, ForceField, StaticFeatures,
};
use crate::linalg::{max_node_norm, node_vec, Mat3, Vec3};
use crate::material::MaterialParams;
use crate::mesh::{lumped_mass, MeshError, TetMesh};
use crate::net::Example;
use crate::registration::{GradientOperator, Registrar, RegistrationError, RegistrationSettings};
use crate::sparse::{Cholesky, FactorError};

const MAGIC: &[u8; 4] = b"DWTP";
const VERSION: u32 = 1;
/// Magic, version and record count.
pub const HEADER_BYTES: u64 = 16;
pub const RECORD_BYTES: u64 = 80;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no converged poses for {0}")]
    NoPoses(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split leaves the {0} set empty")]
    EmptySplit(&'static str),
    #[error("not a dataset file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset version {0}")]
    BadVersion(u32),
    #[error("dataset truncated after {read} of {expected} records")]
    Truncated { read: u64, expected: u64 },
    #[error("record {0} contains a non-finite value")]
    NonFinite(u64),
    #[error("record {record}: {msg}")]
    InvalidRecord { record: u64, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingRecord {
    pub features: FeatureVector,
    /// `Q (u_i − ũ_i)` in the canonical frame.
    pub target: Vec3,
    /// `(pose id, node id)`; not stored on disk.
    pub provenance: Option<(usize, usize)>,
}

impl Example for TrainingRecord {
    fn features(&self) -> &FeatureVector {
        &self.features
    }

    fn target(&self) -> Vec3 {
        self.target
    }
}

#[derive(Debug, Clone)]
pub struct Pose {
    pub field_index: usize,
    /// Field at this pose's magnitude.
    pub field: ForceField,
    pub step: usize,
    pub u_lin: DVector<f64>,
    pub u: DVector<f64>,
    pub converged: bool,
    pub residual: f64,
}

/// Directions `[sinβ cosα, cosβ, sinβ sinα]` on a uniform `n_α × n_β` grid
/// over `[0, π/2]²`, endpoints included. Repeats (every α at β = 0) are
/// emitted once.
pub fn sample_directions(n_alpha: usize, n_beta: usize) -> Vec<Vec3> {
    let grid = |n: usize, k: usize| if n > 1 { FRAC_PI_2 * k as f64 / (n - 1) as f64 } else { 0.0 };
    let mut out: Vec<Vec3> = Vec::new();
    for ia in 0..n_alpha {
        let a = grid(n_alpha, ia);
        for ib in 0..n_beta {
            let b = grid(n_beta, ib);
            let e = Vec3::new(b.sin() * a.cos(), b.cos(), b.sin() * a.sin());
            if !out.iter().any(|x| (x - e).norm() < 1e-12) {
                out.push(e);
            }
        }
    }
    out
}

/// Longest principal axis of the node cloud, through the anchor centroid.
pub fn principal_axis(mesh: &TetMesh) -> (Vec3, Vec3) {
    let n = mesh.n_nodes() as f64;
    let c = mesh.nodes().iter().sum::<Vec3>() / n;
    let cov = mesh.nodes().iter().fold(Mat3::zeros(), |acc, x| acc + (x - c) * (x - c).transpose()) / n;
    let eig = SymmetricEigen::new(cov);
    let k = eig.eigenvalues.imax();
    let mut axis: Vec3 = eig.eigenvectors.column(k).into_owned();
    // deterministic orientation: largest component positive
    if axis[axis.iamax()] < 0.0 {
        axis = -axis;
    }
    let anchors = mesh.anchors();
    let point = if anchors.is_empty() { c } else { anchors.iter().map(|&a| mesh.node(a)).sum::<Vec3>() / anchors.len() as f64 };
    (point, axis)
}

/// Unit-magnitude training fields: sampled directions plus, optionally,
/// twisting fields of both senses about the principal axis.
pub fn training_fields(mesh: &TetMesh, n_alpha: usize, n_beta: usize, circular: bool) -> Result<Vec<ForceField>, DatasetError> {
    if n_alpha == 0 || n_beta == 0 {
        return Err(DatasetError::Config("direction grid needs n_alpha, n_beta ≥ 1".into()));
    }
    let mut fields = sample_directions(n_alpha, n_beta)
        .into_iter()
        .map(|e| ForceField::directional(e, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    if circular {
        let (p, a) = principal_axis(mesh);
        fields.push(ForceField::circular(p, a, 1.0)?);
        fields.push(ForceField::circular(p, -a, 1.0)?);
    }
    Ok(fields)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampConfig {
    /// Geometric growth between consecutive magnitudes.
    pub factor: f64,
    /// First magnitude. `None` picks it so that the first pose has
    /// `max_i |ũ_i| = first_displacement`; `Some(0.0)` emits the rest pose
    /// first and then continues as `None`.
    pub start: Option<f64>,
    pub first_displacement: f64,
    /// The ramp ends with the first pose reaching `max_i |ũ_i| ≥ cap`.
    pub cap: f64,
    pub max_steps: usize,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self { factor: 1.3, start: Some(0.0), first_displacement: 0.02, cap: 2.0, max_steps: 64 }
    }
}

impl RampConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        if !(self.factor > 1.0) {
            return Err(DatasetError::Config(format!("ramp factor must exceed 1, got {}", self.factor)));
        }
        if !(self.cap > 0.0) || !(self.first_displacement > 0.0) || self.first_displacement >= self.cap {
            return Err(DatasetError::Config("need 0 < first_displacement < cap".into()));
        }
        if matches!(self.start, Some(s) if !(s >= 0.0)) {
            return Err(DatasetError::Config("start magnitude must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(DatasetError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Magnitudes for a field whose unit-magnitude static response peaks at `unit_peak`.
    pub fn magnitudes(&self, unit_peak: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut m = match self.start {
            Some(s) if s > 0.0 => s,
            Some(_) => {
                out.push(0.0);
                self.first_displacement / unit_peak
            }
            None => self.first_displacement / unit_peak,
        };
        while out.len() < self.max_steps {
            out.push(m);
            if m * unit_peak >= self.cap {
                break;
            }
            m *= self.factor;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PoseSet {
    pub poses: Vec<Pose>,
    pub attempted: usize,
    pub dropped: usize,
}

/// Static linear response to `field` at unit magnitude (unit density).
fn unit_response(mesh: &TetMesh, chol: &Cholesky, anchored: &[bool], node_mass: &DVector<f64>, field: &ForceField) -> DVector<f64> {
    let mut f = field.with_magnitude(1.0).nodal_forces(mesh, node_mass);
    zero_anchored(&mut f, anchored);
    chol.solve(&f)
}

fn describe(field: &ForceField, index: usize) -> String {
    match field.kind {
        crate::features::ForceKind::Directional { dir } => format!("field {index} (direction {:.4} {:.4} {:.4})", dir.x, dir.y, dir.z),
        crate::features::ForceKind::Circular { axis_dir, .. } => {
            format!("field {index} (circular about {:.4} {:.4} {:.4})", axis_dir.x, axis_dir.y, axis_dir.z)
        }
    }
}

/// Ramps every field through geometric magnitudes and registers each linear
/// equilibrium `ũ` to its nonlinear counterpart. Poses whose registration
/// fails are dropped and counted.
pub fn generate_poses(
    mesh: &TetMesh,
    params: &MaterialParams,
    fields: &[ForceField],
    ramp: &RampConfig,
    settings: RegistrationSettings,
) -> Result<PoseSet, DatasetError> {
    ramp.validate()?;
    let mut registrar = Registrar::new(mesh, params)?;
    registrar.settings = settings;
    let sys = LinearSystem::new(mesh, params, 1.0)?;
    let chol = Cholesky::factor(&apply_anchors(&sys.stiffness, &sys.anchored))?;
    let node_mass = lumped_mass(mesh, 1.0)?;
    let mut set = PoseSet { poses: Vec::new(), attempted: 0, dropped: 0 };
    for (fi, field) in fields.iter().enumerate() {
        let unit = unit_response(mesh, &chol, &sys.anchored, &node_mass, field);
        let peak = max_node_norm(&unit);
        if !(peak > 0.0) {
            return Err(DatasetError::NoPoses(format!("{} (no response)", describe(field, fi))));
        }
        let mut prev: Option<(f64, DVector<f64>)> = None;
        let mut kept = 0;
        for (step, m) in ramp.magnitudes(peak).into_iter().enumerate() {
            set.attempted += 1;
            let u_lin = &unit * m;
            let init = match &prev {
                Some((pm, pu)) if *pm > 0.0 => pu * (m / pm),
                _ => u_lin.clone(),
            };
            match registrar.register(&u_lin, &init) {
                Ok(reg) => {
                    prev = Some((m, reg.u.clone()));
                    kept += 1;
                    set.poses.push(Pose {
                        field_index: fi,
                        field: field.with_magnitude(m),
                        step,
                        u_lin,
                        u: reg.u,
                        converged: true,
                        residual: reg.residual,
                    });
                }
                Err(e) => {
                    log::debug!("{} step {step}: dropped ({e})", describe(field, fi));
                    set.dropped += 1;
                }
            }
        }
        if kept == 0 {
            return Err(DatasetError::NoPoses(describe(field, fi)));
        }
    }
    log::info!("poses: {} kept, {} dropped of {} attempted", set.poses.len(), set.dropped, set.attempted);
    Ok(set)
}

/// One record per free node: canonical features and `Q (u_i − ũ_i)`.
pub fn extract_records(
    mesh: &TetMesh,
    op: &GradientOperator,
    pose: &Pose,
    pose_id: usize,
    statics: &[StaticFeatures],
    poisson: f64,
) -> Vec<TrainingRecord> {
    let w = op.rotation_vectors(&pose.u_lin);
    let mut out = Vec::with_capacity(mesh.n_nodes() - mesh.anchors().len());
    for i in 0..mesh.n_nodes() {
        if mesh.is_anchor(i) {
            continue;
        }
        let ul = node_vec(&pose.u_lin, i);
        let a = align_kinematics(&ul, &w[i]);
        let target = a.q * (node_vec(&pose.u, i) - ul);
        out.push(TrainingRecord { features: assemble_feature(&statics[i], &a, poisson), target, provenance: Some((pose_id, i)) });
    }
    out
}

/// Records of every pose, with per-field static features computed once.
pub fn extract_all(mesh: &TetMesh, params: &MaterialParams, set: &PoseSet) -> Result<Vec<TrainingRecord>, DatasetError> {
    let op = GradientOperator::new(mesh)?;
    let geo = geodesic_all(mesh)?;
    let mut cache: Option<(usize, Vec<StaticFeatures>)> = None;
    let mut records = Vec::new();
    for (pid, pose) in set.poses.iter().enumerate() {
        if cache.as_ref().map(|c| c.0) != Some(pose.field_index) {
            cache = Some((pose.field_index, static_features_with(mesh, &geo, &pose.field)));
        }
        let statics = &cache.as_ref().expect("filled above").1;
        records.extend(extract_records(mesh, &op, pose, pid, statics, params.poisson));
    }
    log::info!("{} records from {} poses", records.len(), set.poses.len());
    Ok(records)
}

/// Seeded shuffle, then `floor(n·val)` validation and `floor(n·test)` test
/// records; the remainder trains.
pub fn split<T: Clone>(records: &[T], val_fraction: f64, test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>), DatasetError> {
    let ok = |f: f64| f > 0.0 && f < 1.0;
    if !ok(val_fraction) || !ok(test_fraction) || val_fraction + test_fraction >= 1.0 {
        return Err(DatasetError::Config(format!("bad split fractions {val_fraction}, {test_fraction}")));
    }
    let n = records.len();
    // the epsilon absorbs representation error such as 1000 · 0.01
    let n_val = (n as f64 * val_fraction + 1e-9).floor() as usize;
    let n_test = (n as f64 * test_fraction + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(DatasetError::EmptySplit("training"));
    }
    if n_val == 0 {
        return Err(DatasetError::EmptySplit("validation"));
    }
    if n_test == 0 {
        return Err(DatasetError::EmptySplit("test"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| records[i].clone()).collect::<Vec<T>>();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..n_train + n_val]), pick(&idx[n_train + n_val..])))
}

/// Range checks shared by the reader and the generator.
pub fn validate_record(r: &TrainingRecord) -> Result<(), String> {
    let f = &r.features;
    if f.iter().chain(r.target.iter()).any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    let tol = 1e-9;
    if f[0] < 0.0 || f[1] < 0.0 {
        return Err("negative magnitude".into());
    }
    if f[2] < -tol || f[2] > PI + tol {
        return Err(format!("theta {} outside [0, π]", f[2]));
    }
    for (k, name) in [(3, "g"), (4, "p")] {
        if f[k] < -tol || f[k] > 1.0 + tol {
            return Err(format!("{name} {} outside [0, 1]", f[k]));
        }
    }
    if f[5] != -1.0 && (f[5] < -tol || f[5] > PI + tol) {
        return Err(format!("digression {} outside [0, π] ∪ {{−1}}", f[5]));
    }
    if f[6] < 0.0 || f[6] >= 0.5 {
        return Err(format!("poisson ratio {} outside [0, 0.5)", f[6]));
    }
    Ok(())
}

pub fn write_dataset<W: Write>(mut w: W, records: &[TrainingRecord]) -> Result<(), DatasetError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        for v in r.features.iter().chain(r.target.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader; yields records one at a time.
pub struct DatasetReader<R: Read> {
    inner: BufReader<R>,
    count: u64,
    read: u64,
    failed: bool,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(r: R) -> Result<Self, DatasetError> {
        let mut inner = BufReader::new(r);
        let mut header = [0u8; HEADER_BYTES as usize];
        inner.read_exact(&mut header).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => DatasetError::Truncated { read: 0, expected: 0 },
            _ => DatasetError::Io(e),
        })?;
        let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(DatasetError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(DatasetError::BadVersion(version));
        }
        let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        Ok(Self { inner, count, read: 0, failed: false })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<TrainingRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.read == self.count {
            return None;
        }
        let mut buf = [0u8; RECORD_BYTES as usize];
        if let Err(e) = self.inner.read_exact(&mut buf) {
            self.failed = true;
            return Some(Err(match e.kind() {
                std::io::ErrorKind::UnexpectedEof => DatasetError::Truncated { read: self.read, expected: self.count },
                _ => DatasetError::Io(e),
            }));
        }
        let vals: [f64; 10] = std::array::from_fn(|k| f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().expect("8 bytes")));
        let record = TrainingRecord {
            features: std::array::from_fn(|k| vals[k]),
            target: Vec3::new(vals[7], vals[8], vals[9]),
            provenance: None,
        };
        let id = self.read;
        self.read += 1;
        if vals.iter().any(|v| !v.is_finite()) {
            self.failed = true;
            return Some(Err(DatasetError::NonFinite(id)));
        }
        if let Err(msg) = validate_record(&record) {
            self.failed = true;
            return Some(Err(DatasetError::InvalidRecord { record: id, msg }));
        }
        Some(Ok(record))
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<TrainingRecord>, DatasetError> {
    DatasetReader::new(r)?.collect()
}

/// Everything needed to produce a training set from one mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub circular: bool,
    pub ramp: RampConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_alpha: 8, n_beta: 8, circular: true, ramp: RampConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub records: Vec<TrainingRecord>,
    pub n_fields: usize,
    pub attempted: usize,
    pub dropped: usize,
    pub n_poses: usize,
}

pub fn generate_dataset(mesh: &TetMesh, params: &MaterialParams, cfg: &DatasetConfig) -> Result<GeneratedData, DatasetError> {
    let fields = training_fields(mesh, cfg.n_alpha, cfg.n_beta, cfg.circular)?;
    let set = generate_poses(mesh, params, &fields, &cfg.ramp, RegistrationSettings::default())?;
    let records = extract_all(mesh, params, &set)?;
    Ok(GeneratedData { records, n_fields: fields.len(), attempted: set.attempted, dropped: set.dropped, n_poses: set.poses.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{exp_so3, set_node_vec};
    use crate::material::MaterialModel;
    use crate::mesh::box_mesh;

    fn beam() -> TetMesh {
        box_mesh(6, 2, 2, Vec3::new(3.0, 1.0, 1.0)).unwrap().anchored_where(|x| x.x < 1e-9)
    }

    #[test]
    fn direction_grid() {
        let d = sample_directions(1, 1);
        assert_eq!(d, vec![Vec3::new(0.0, 1.0, 0.0)]);
        let d = sample_directions(3, 2);
        assert!((d[1] - Vec3::x()).norm() < 1e-15);
        assert!(d.iter().any(|e| (e - Vec3::z()).norm() < 1e-15));
        let d = sample_directions(7, 9);
        assert_eq!(d.len(), 7 * 8 + 1);
        assert!(d.iter().all(|e| (e.norm() - 1.0).abs() < 1e-12 && e.min() >= -1e-15));
    }

    #[test]
    fn ramp_magnitudes() {
        let r = RampConfig { start: None, ..RampConfig::default() };
        let m = r.magnitudes(0.5);
        assert!((m[0] * 0.5 - 0.02).abs() < 1e-15);
        assert!(m.windows(2).all(|w| (w[1] / w[0] - 1.3).abs() < 1e-12));
        assert!(m[..m.len() - 1].iter().all(|v| v * 0.5 < 2.0));
        assert!(m[m.len() - 1] * 0.5 >= 2.0);
        let z = RampConfig::default().magnitudes(0.5);
        assert_eq!(z[0], 0.0);
        assert_eq!(&z[1..], &m[..]);
        assert!(RampConfig { factor: 1.0, ..r }.validate().is_err());
    }

    #[test]
    fn poses_and_records() {
        let mesh = beam();
        let params = MaterialParams::new(MaterialModel::NeoHookean, 10.0, 0.3).unwrap();
        let fields = training_fields(&mesh, 2, 2, true).unwrap();
        assert_eq!(fields.len(), 5);
        let ramp = RampConfig { start: Some(0.0), factor: 2.0, first_displacement: 0.1, ..RampConfig::default() };
        let set = generate_poses(&mesh, &params, &fields, &ramp, RegistrationSettings::default()).unwrap();
        assert_eq!(set.poses.len() + set.dropped, set.attempted);
        assert_eq!(set.poses[0].u.norm(), 0.0);
        assert_eq!(set.poses[0].u_lin.norm(), 0.0);
        for f in 0..fields.len() {
            let ps: Vec<&Pose> = set.poses.iter().filter(|p| p.field_index == f).collect();
            for p in &ps[..ps.len() - 1] {
                assert!(max_node_norm(&p.u_lin) < 2.0);
            }
        }
        let records = extract_all(&mesh, &params, &set).unwrap();
        let free = mesh.n_nodes() - mesh.anchors().len();
        assert_eq!(records.len(), set.poses.len() * free);
        assert!(records[..free].iter().all(|r| r.target == Vec3::zeros()));
        let op = GradientOperator::new(&mesh).unwrap();
        for r in &records {
            validate_record(r).unwrap();
            let (pid, i) = r.provenance.unwrap();
            assert!(!mesh.is_anchor(i));
            let pose = &set.poses[pid];
            let ul = node_vec(&pose.u_lin, i);
            let q = align_kinematics(&ul, &op.kinematics(&pose.u_lin, i).w).q;
            assert!((q.transpose() * r.target + ul - node_vec(&pose.u, i)).norm() < 1e-12);
        }
    }

    #[test]
    fn canonical_records_survive_rigid_rotation() {
        let mesh = beam();
        let n = mesh.n_dofs();
        let mut u_lin = DVector::zeros(n);
        let mut u = DVector::zeros(n);
        for i in 0..mesh.n_nodes() {
            let x = mesh.node(i);
            set_node_vec(&mut u_lin, i, &Vec3::new(0.02 * x.y, 0.1 * x.x * x.x, 0.03 * x.x));
            set_node_vec(&mut u, i, &Vec3::new(-0.01 * x.x * x.x, 0.09 * x.x * x.x, 0.03 * x.x * x.y));
        }
        let field = ForceField::directional(Vec3::new(0.3, 1.0, 0.2), 1.0).unwrap();
        let pose = Pose { field_index: 0, field, step: 0, u_lin: u_lin.clone(), u: u.clone(), converged: true, residual: 0.0 };
        let statics = static_features_with(&mesh, &geodesic_all(&mesh).unwrap(), &field);
        let base = extract_records(&mesh, &GradientOperator::new(&mesh).unwrap(), &pose, 0, &statics, 0.3);

        let r = exp_so3(&Vec3::new(0.7, -1.1, 0.4));
        let rot = mesh.map_nodes(|x| r * x).unwrap();
        let rotate = |v: &DVector<f64>| {
            let mut out = DVector::zeros(v.len());
            for i in 0..mesh.n_nodes() {
                set_node_vec(&mut out, i, &(r * node_vec(v, i)));
            }
            out
        };
        let field_r = ForceField::directional(r * Vec3::new(0.3, 1.0, 0.2), 1.0).unwrap();
        let pose_r = Pose { field: field_r, u_lin: rotate(&u_lin), u: rotate(&u), ..pose };
        let statics_r = static_features_with(&rot, &geodesic_all(&rot).unwrap(), &field_r);
        let turned = extract_records(&rot, &GradientOperator::new(&rot).unwrap(), &pose_r, 0, &statics_r, 0.3);
        for (a, b) in base.iter().zip(&turned) {
            for k in 0..7 {
                assert!((a.features[k] - b.features[k]).abs() < 1e-9, "feature {k}");
            }
            assert!((a.target - b.target).norm() < 1e-9);
        }
    }

    fn dummy(n: usize) -> Vec<TrainingRecord> {
        (0..n)
            .map(|i| TrainingRecord {
                features: [0.1 * i as f64, 0.2, 1.0, 0.5, 0.25, 2.0, 0.3],
                target: Vec3::new(i as f64, -1.0, 0.5),
                provenance: None,
            })
            .collect()
    }

    #[test]
    fn split_floor_rule() {
        let recs: Vec<usize> = (0..1000).collect();
        let (tr, va, te) = split(&recs, 0.01, 1.0 / 8.0, 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (865, 10, 125));
        assert_eq!(split(&recs, 0.01, 1.0 / 8.0, 5).unwrap().0, tr);
        let mut all: Vec<usize> = tr.into_iter().chain(va).chain(te).collect();
        all.sort();
        assert_eq!(all, recs);
        assert!(matches!(split(&recs[..50], 0.01, 0.1, 1), Err(DatasetError::EmptySplit("validation"))));
        assert!(split(&recs, 0.6, 0.5, 1).is_err());
    }

    #[test]
    fn file_round_trip_and_errors() {
        let recs = dummy(37);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &recs).unwrap();
        assert_eq!(buf.len() as u64, HEADER_BYTES + 37 * RECORD_BYTES);
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), recs);

        let mut bad = buf.clone();
        bad[1] = b'?';
        assert!(matches!(read_dataset(bad.as_slice()), Err(DatasetError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 2;
        assert!(matches!(read_dataset(bad.as_slice()), Err(DatasetError::BadVersion(2))));
        assert!(matches!(read_dataset(&buf[..buf.len() - 3]), Err(DatasetError::Truncated { read: 36, expected: 37 })));
        let mut bad = buf.clone();
        let at = (HEADER_BYTES + 5 * RECORD_BYTES + 8) as usize;
        bad[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_dataset(bad.as_slice()), Err(DatasetError::NonFinite(5))));
        let mut bad = buf.clone();
        let at = (HEADER_BYTES + 2 * RECORD_BYTES + 3 * 8) as usize;
        bad[at..at + 8].copy_from_slice(&7.0f64.to_le_bytes());
        assert!(matches!(read_dataset(bad.as_slice()), Err(DatasetError::InvalidRecord { record: 2, .. })));
    }
}
