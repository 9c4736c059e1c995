use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepwarp::dataset::{generate_dataset, read_dataset, split, write_dataset, DatasetConfig, RampConfig};
use deepwarp::dynamics::{write_trajectory_csv, RayleighDamping, Scheme};
use deepwarp::features::{geodesic_all, static_features_with, ForceField, FEATURE_NAMES, N_FEATURES};
use deepwarp::mesh::{box_mesh, load_mesh, load_partition, normalize_to_unit_sphere, DomainPartition};
use deepwarp::net::{load_network, save_network, train, AdamConfig, MlpSpec, Network};
use deepwarp::substructure::{arrow_shape, build_domain_graph, cross_shape, graphs_isomorphic, t_shape, y_shape, DomainGraph};
use deepwarp::warper::{compare_methods, simulate_method, LoadScript, Method, SimSetup};
use deepwarp::{MaterialModel, MaterialParams, TetMesh, Vec3};

use crate::config::RunConfig;
use crate::failure::Failure;

type Outcome = Result<(), Failure>;

/// Writes through `<path>.partial` and renames once `body` succeeds.
fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Outcome) -> Outcome {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let file = File::create(&partial).map_err(|e| Failure::Io(format!("{}: {e}", partial.display())))?;
    let mut w = BufWriter::new(file);
    let result = body(&mut w).and_then(|_| w.flush().map_err(Failure::from));
    drop(w);
    match result {
        Ok(()) => std::fs::rename(&partial, path).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
        Err(e) => {
            let _ = std::fs::remove_file(&partial);
            Err(e)
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::Io(format!("{path}: {e}")))
}

fn parse_model(name: &str) -> Result<MaterialModel, Failure> {
    MaterialModel::ALL
        .into_iter()
        .find(|m| m.name() == name.to_ascii_lowercase())
        .ok_or_else(|| Failure::Validation(format!("unknown material model `{name}`")))
}

fn material(cfg: &RunConfig) -> Result<MaterialParams, Failure> {
    MaterialParams::new(parse_model(cfg.str("material.model"))?, cfg.parse("material.youngs")?, cfg.parse("material.poisson")?)
        .map_err(|e| Failure::Validation(e.to_string()))
}

fn shape_mesh(cfg: &RunConfig, shape: &str) -> Result<(TetMesh, Option<Vec<usize>>), Failure> {
    let labeled = match shape {
        "t" => t_shape(4, 3, 1),
        "y" => y_shape(4, 3, 1),
        "arrow" => arrow_shape(5, 2, 1),
        "cross" => cross_shape(2, 1),
        "box" => {
            let n: Vec<usize> = cfg.list("mesh.box")?;
            let [nx, ny, nz] = n[..] else { return Err(Failure::Validation("mesh.box needs three cell counts".into())) };
            let size = cfg.triple("mesh.size")?;
            let mesh = box_mesh(nx, ny, nz, Vec3::from(size)).map_err(|e| Failure::Validation(e.to_string()))?;
            return Ok((mesh, None));
        }
        other => return Err(Failure::Validation(format!("unknown mesh.shape `{other}`"))),
    }
    .map_err(|e| Failure::Validation(e.to_string()))?;
    Ok((labeled.mesh, Some(labeled.labels)))
}

/// The configured mesh and, for built-in articulated shapes, its domain labels.
fn mesh_and_labels(cfg: &RunConfig) -> Result<(TetMesh, Option<Vec<usize>>), Failure> {
    let (mesh, labels) = match (cfg.opt("mesh.nodes"), cfg.opt("mesh.tets")) {
        (Some(nodes), Some(tets)) => {
            let anchors: Box<dyn std::io::BufRead> = match cfg.opt("mesh.anchors") {
                Some(p) => Box::new(open(p)?),
                None => Box::new(std::io::empty()),
            };
            (load_mesh(open(nodes)?, open(tets)?, anchors).map_err(|e| Failure::Validation(e.to_string()))?, None)
        }
        (None, None) => shape_mesh(cfg, cfg.str("mesh.shape"))?,
        _ => return Err(Failure::Validation("mesh.nodes and mesh.tets must be given together".into())),
    };
    let mesh = if cfg.parse("mesh.normalize")? { normalize_to_unit_sphere(&mesh).map_err(|e| Failure::Validation(e.to_string()))? } else { mesh };
    let mesh = match cfg.str("mesh.anchor") {
        "file" | "none" => mesh,
        face @ ("xmin" | "xmax" | "ymin" | "ymax" | "zmin" | "zmax") => {
            let (lo, hi) = mesh.bounding_box();
            let axis = usize::from(face.as_bytes()[0] - b'x');
            let (target, tol) = if face.ends_with("min") { (lo[axis], 1e-9) } else { (hi[axis], 1e-9) };
            if mesh.anchors().is_empty() {
                mesh.anchored_where(|x| (x[axis] - target).abs() < tol)
            } else {
                mesh
            }
        }
        other => return Err(Failure::Validation(format!("unknown mesh.anchor `{other}`"))),
    };
    Ok((mesh, labels))
}

pub fn build_mesh(cfg: &RunConfig) -> Result<TetMesh, Failure> {
    Ok(mesh_and_labels(cfg)?.0)
}

fn load_field(cfg: &RunConfig) -> Result<ForceField, Failure> {
    let mag: f64 = cfg.parse("load.magnitude")?;
    match cfg.str("load.kind") {
        "directional" => ForceField::directional(Vec3::from(cfg.triple("load.dir")?), mag),
        "circular" => ForceField::circular(Vec3::from(cfg.triple("load.point")?), Vec3::from(cfg.triple("load.axis")?), mag),
        other => return Err(Failure::Validation(format!("unknown load.kind `{other}`"))),
    }
    .map_err(|e| Failure::Validation(e.to_string()))
}

fn load_script(cfg: &RunConfig) -> Result<LoadScript, Failure> {
    let field = load_field(cfg)?;
    let steps: usize = cfg.parse("sim.steps")?;
    if steps == 0 {
        return Err(Failure::Validation("sim.steps must be at least 1".into()));
    }
    Ok(match cfg.opt("load.release") {
        Some(_) => LoadScript::release(field, cfg.parse("load.release")?, steps),
        None => LoadScript::constant(field, steps),
    })
}

fn sim_setup(cfg: &RunConfig) -> Result<SimSetup, Failure> {
    let scheme = match cfg.str("sim.scheme") {
        "newmark" => Scheme::Newmark,
        "backward-euler" | "euler" => Scheme::BackwardEuler,
        other => return Err(Failure::Validation(format!("unknown sim.scheme `{other}`"))),
    };
    let dt: f64 = cfg.parse("sim.dt")?;
    let density: f64 = cfg.parse("material.density")?;
    if !(dt > 0.0) || !(density > 0.0) {
        return Err(Failure::Validation("sim.dt and material.density must be positive".into()));
    }
    Ok(SimSetup {
        params: material(cfg)?,
        density,
        damping: RayleighDamping::new(cfg.parse("sim.alpha")?, cfg.parse("sim.beta")?).map_err(|e| Failure::Validation(e.to_string()))?,
        dt,
        scheme,
    })
}

/// Tracked nodes: a list, or `auto` for the node geodesically farthest from the anchors.
fn tracked_nodes(cfg: &RunConfig, mesh: &TetMesh) -> Result<Vec<usize>, Failure> {
    let nodes = if cfg.str("sim.track") == "auto" {
        let geo = geodesic_all(mesh).map_err(|e| Failure::Validation(e.to_string()))?;
        vec![(0..mesh.n_nodes()).max_by(|&a, &b| geo.g[a].total_cmp(&geo.g[b])).unwrap_or(0)]
    } else {
        cfg.list("sim.track")?
    };
    if let Some(&bad) = nodes.iter().find(|&&i| i >= mesh.n_nodes()) {
        return Err(Failure::Validation(format!("tracked node {bad} out of range (mesh has {} nodes)", mesh.n_nodes())));
    }
    Ok(nodes)
}

fn read_net(path: &str) -> Result<Network, Failure> {
    load_network(open(path)?).map_err(Failure::from)
}

/// Loads the network a method needs; a network given to a method that does not use it is ignored.
fn network_for(cfg: &RunConfig, methods: &[Method]) -> Result<Option<Network>, Failure> {
    let needs = methods.contains(&Method::DeepWarp);
    match (cfg.opt("sim.net"), needs) {
        (Some(p), true) => Ok(Some(read_net(p)?)),
        (None, true) => Err(Failure::Validation("method deepwarp needs --net".into())),
        (Some(p), false) => {
            log::warn!("network {p} ignored: no requested method uses it");
            Ok(None)
        }
        (None, false) => Ok(None),
    }
}

pub fn info(cfg: &RunConfig) -> Outcome {
    let mesh = build_mesh(cfg)?;
    let (lo, hi) = mesh.bounding_box();
    println!("mesh: {} nodes, {} tets, {} anchors", mesh.n_nodes(), mesh.n_tets(), mesh.anchors().len());
    println!("bounding box: [{:.4}, {:.4}, {:.4}] .. [{:.4}, {:.4}, {:.4}]", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
    println!("volume: {:.6e}, scale factor: {:.6e}", mesh.total_volume(), mesh.scale_factor());
    println!("features ({N_FEATURES}): {}", FEATURE_NAMES.join(", "));
    if let Some(p) = cfg.opt("sim.net") {
        let net = read_net(p)?;
        println!("network {p}: layers {:?}, {} parameters", net.mlp.spec().layer_sizes, net.mlp.n_params());
    }
    if let Some(p) = cfg.opt("data.path") {
        let records = read_dataset(open(p)?)?;
        println!("dataset {p}: {} records", records.len());
    }
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Outcome {
    let mesh = build_mesh(cfg)?;
    let params = material(cfg)?;
    let ramp = RampConfig {
        factor: cfg.parse("ramp.factor")?,
        start: if cfg.parse("ramp.include_rest")? { Some(0.0) } else { None },
        first_displacement: cfg.parse("ramp.first")?,
        cap: cfg.parse("ramp.cap")?,
        max_steps: cfg.parse("ramp.max_steps")?,
    };
    let dcfg = DatasetConfig { n_alpha: cfg.parse("data.n_alpha")?, n_beta: cfg.parse("data.n_beta")?, circular: cfg.parse("data.circular")?, ramp };
    let start = Instant::now();
    let data = generate_dataset(&mesh, &params, &dcfg)?;
    let seconds = start.elapsed().as_secs_f64();
    write_atomic(out, |w| write_dataset(w, &data.records).map_err(Failure::from))?;

    let mut lo = [f64::INFINITY; N_FEATURES];
    let mut hi = [f64::NEG_INFINITY; N_FEATURES];
    for r in &data.records {
        for k in 0..N_FEATURES {
            lo[k] = lo[k].min(r.features[k]);
            hi[k] = hi[k].max(r.features[k]);
        }
    }
    let report = with_suffix(out, ".report.txt");
    write_atomic(&report, |w| {
        write!(w, "{}", cfg.echo())?;
        writeln!(w, "mesh_nodes = {}", mesh.n_nodes())?;
        writeln!(w, "mesh_tets = {}", mesh.n_tets())?;
        writeln!(w, "fields = {}", data.n_fields)?;
        writeln!(w, "poses_attempted = {}", data.attempted)?;
        writeln!(w, "poses_dropped = {}", data.dropped)?;
        writeln!(w, "poses_kept = {}", data.n_poses)?;
        writeln!(w, "records = {}", data.records.len())?;
        for k in 0..N_FEATURES {
            writeln!(w, "range.{} = {:.6e} {:.6e}", FEATURE_NAMES[k], lo[k], hi[k])?;
        }
        writeln!(w, "wall_seconds = {seconds:.3}")?;
        Ok(())
    })?;
    log::info!(
        "wrote {} records from {} poses ({} of {} dropped) to {} in {seconds:.1}s",
        data.records.len(),
        data.n_poses,
        data.dropped,
        data.attempted,
        out.display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let path = cfg.opt("data.path").ok_or_else(|| Failure::Validation("train needs --data".into()))?;
    let seed: u64 = cfg.parse("seed")?;
    let adam = AdamConfig { lr: cfg.parse("train.lr")?, batch: cfg.parse("train.batch")?, epochs: cfg.parse("train.epochs")?, seed, ..AdamConfig::default() };
    adam.validate()?;
    let (hidden, width): (usize, usize) = (cfg.parse("train.hidden")?, cfg.parse("train.width")?);
    if width == 0 {
        return Err(Failure::Validation("train.width must be positive".into()));
    }
    let records = read_dataset(open(path)?)?;
    // split and shuffle streams both derive from the one root seed
    let (tr, va, te) = split(&records, cfg.parse("split.val")?, cfg.parse("split.test")?, seed.wrapping_add(1))?;
    log::info!("training on {} records, validating on {}, holding out {}", tr.len(), va.len(), te.len());
    let result = train(&MlpSpec::tanh(hidden, width), &tr, &va, &adam)?;
    write_atomic(out, |w| save_network(w, &result.best).map_err(Failure::from))?;
    write_atomic(&with_suffix(out, ".loss.csv"), |w| {
        write!(w, "{}", cfg.echo())?;
        writeln!(w, "epoch,train_mse,val_mse")?;
        for e in &result.history {
            writeln!(w, "{},{:.9e},{:.9e}", e.epoch, e.train_mse, e.val_mse)?;
        }
        Ok(())
    })?;
    if let (Some(first), Some(last)) = (result.history.first(), result.history.last()) {
        log::info!("val mse {:.4e} -> {:.4e}; network written to {}", first.val_mse, last.val_mse, out.display());
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let method: Method = cfg.str("sim.method").parse().map_err(Failure::Validation)?;
    let mesh = build_mesh(cfg)?;
    let setup = sim_setup(cfg)?;
    let script = load_script(cfg)?;
    let tracked = tracked_nodes(cfg, &mesh)?;
    let net = network_for(cfg, &[method])?;
    let states = simulate_method(&mesh, &setup, method, &script, net.as_ref())?;
    write_atomic(out, |w| {
        write!(w, "{}", cfg.echo())?;
        write_trajectory_csv(w, &states, &tracked).map_err(Failure::from)
    })?;
    log::info!("{} steps of {} written to {}", states.len(), method.name(), out.display());
    Ok(())
}

pub fn compare(cfg: &RunConfig, out: &Path) -> Outcome {
    let methods: Vec<Method> = cfg.list::<String>("compare.methods")?.iter().map(|m| m.parse().map_err(Failure::Validation)).collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(Failure::Validation("compare.methods is empty".into()));
    }
    let mesh = build_mesh(cfg)?;
    let setup = sim_setup(cfg)?;
    let script = load_script(cfg)?;
    let tracked = tracked_nodes(cfg, &mesh)?;
    let net = network_for(cfg, &methods)?;
    let report = compare_methods(&mesh, &setup, &script, net.as_ref(), &methods, &tracked)?;
    let summary = report.summary();
    let mut block = String::from("method,mean_rel_l2,max_rel_l2,dominant_frequency_hz\n");
    for s in &summary {
        let freq = s.dominant_frequency.map_or_else(|| "nan".to_string(), |f| format!("{f:.6}"));
        block.push_str(&format!("{},{:.6e},{:.6e},{freq}\n", s.method.name(), s.mean_rel_l2, s.max_rel_l2));
    }
    if let Some(f) = &report.failure {
        block.push_str(&format!("partial: {f}\n"));
    }
    write_atomic(out, |w| {
        write!(w, "{}", cfg.echo())?;
        writeln!(w, "method,step,rel_l2_error")?;
        for r in &report.rows {
            writeln!(w, "{},{},{:.9e}", r.method.name(), r.step, r.rel_l2)?;
        }
        Ok(())
    })?;
    write_atomic(&with_suffix(out, ".summary.txt"), |w| {
        write!(w, "{}{block}", cfg.echo())?;
        Ok(())
    })?;
    print!("{block}");
    match report.failure {
        Some(f) => Err(Failure::Numerical(f)),
        None => Ok(()),
    }
}

pub fn features(cfg: &RunConfig, out: &Path) -> Outcome {
    let mesh = build_mesh(cfg)?;
    let field = load_field(cfg)?;
    let geo = geodesic_all(&mesh).map_err(|e| Failure::Validation(e.to_string()))?;
    let feats = static_features_with(&mesh, &geo, &field);
    write_atomic(out, |w| {
        write!(w, "{}", cfg.echo())?;
        writeln!(w, "node,g,p,d")?;
        for (i, s) in feats.iter().enumerate() {
            writeln!(w, "{i},{:.9e},{:.9e},{:.9e}", s.g, s.p, s.d)?;
        }
        Ok(())
    })
}

fn partition_for(mesh: &TetMesh, labels: Option<Vec<usize>>, file: Option<&str>) -> Result<DomainPartition, Failure> {
    match (file, labels) {
        (Some(p), _) => load_partition(mesh, open(p)?),
        (None, Some(l)) => DomainPartition::new(mesh, l),
        (None, None) => Ok(DomainPartition::single(mesh)),
    }
    .map_err(|e| Failure::Validation(e.to_string()))
}

fn domain_graph(mesh: &TetMesh, part: &DomainPartition) -> Result<DomainGraph, Failure> {
    build_domain_graph(mesh, part).map_err(|e| Failure::Validation(e.to_string()))
}

pub fn partition_graph(cfg: &RunConfig) -> Outcome {
    let (mesh, labels) = mesh_and_labels(cfg)?;
    let graph = domain_graph(&mesh, &partition_for(&mesh, labels, cfg.opt("partition.file"))?)?;
    println!("domains: {}", graph.n_vertices());
    for (a, b) in graph.edges() {
        println!("edge {a} {b}");
    }
    let other = match (cfg.opt("partition.other_mesh"), cfg.opt("partition.other")) {
        (None, None) => return Ok(()),
        (Some(other_mesh), file) => {
            let (m, l) = match other_mesh.strip_prefix("shape:") {
                Some(shape) => shape_mesh(cfg, shape)?,
                None => {
                    let mut c = cfg.clone();
                    for (k, v) in [("mesh.nodes", format!("{other_mesh}.node")), ("mesh.tets", format!("{other_mesh}.ele")), ("mesh.anchors", String::new())] {
                        c.set(k, &v).map_err(Failure::Validation)?;
                    }
                    mesh_and_labels(&c)?
                }
            };
            domain_graph(&m, &partition_for(&m, l, file)?)?
        }
        (None, Some(file)) => domain_graph(&mesh, &partition_for(&mesh, None, Some(file))?)?,
    };
    match graphs_isomorphic(&graph, &other).map_err(|e| Failure::Validation(e.to_string()))? {
        Some(map) => {
            println!("isomorphic: yes");
            for (a, b) in map.iter().enumerate() {
                println!("map {a} -> {b}");
            }
        }
        None => println!("isomorphic: no"),
    }
    Ok(())
}
