use deepwarp::dynamics::{RayleighDamping, Scheme};
use deepwarp::features::ForceField;
use deepwarp::linalg::node_vec;
use deepwarp::material::{MaterialModel, MaterialParams};
use deepwarp::mesh::DomainPartition;
use deepwarp::net::{init_weights, MlpSpec, Network, Standardization};
use deepwarp::substructure::{simulate_substructured, t_shape, SubstructureSetup};
use deepwarp::warper::{simulate_method, LoadScript, Method, SimSetup};
use deepwarp::Vec3;

fn zero_net() -> Network {
    let mut mlp = init_weights(&MlpSpec::tanh(2, 16), 0);
    mlp.set_params(&vec![0.0; mlp.n_params()]);
    Network { mlp, standardization: Standardization::identity() }
}

fn peak(us: impl Iterator<Item = f64>) -> f64 {
    us.fold(0.0, f64::max)
}

#[test]
fn coupled_t_shape_follows_monolithic_run() {
    let shape = t_shape(4, 3, 1).unwrap();
    let mesh = shape.mesh.anchored_where(|x| x.y < 1e-9);
    let part = DomainPartition::new(&mesh, shape.labels.clone()).unwrap();
    let params = MaterialParams::new(MaterialModel::NeoHookean, 2000.0, 0.3).unwrap();
    let damping = RayleighDamping { alpha: 0.1, beta: 0.01 };
    let setup = |coupled| SubstructureSetup { params, density: 1.0, damping, dt: 0.02, scheme: Scheme::Newmark, interface_forces: coupled };
    let script = LoadScript::release(ForceField::directional(Vec3::new(1.0, -0.5, 0.0), 0.4).unwrap(), 60, 200);

    let sim = SimSetup { params, density: 1.0, damping, dt: 0.02, scheme: Scheme::Newmark };
    let mono = simulate_method(&mesh, &sim, Method::DeepWarp, &script, Some(&zero_net())).unwrap();
    let mono_peak = peak(mono.iter().map(|s| s.u.amax()));

    let run = simulate_substructured(&mesh, &part, 0, &[zero_net()], &script, setup(true)).unwrap();
    assert_eq!(run.order[0], 0);
    assert_eq!(run.order.len(), 3);
    assert_eq!(run.displacements.len(), 200);
    for u in &run.displacements {
        for &a in mesh.anchors() {
            assert_eq!(node_vec(u, a), Vec3::zeros());
        }
    }
    let coupled_peak = peak(run.displacements.iter().map(|u| u.amax()));
    assert!(coupled_peak.is_finite() && (coupled_peak / mono_peak - 1.0).abs() < 0.2, "coupled {coupled_peak} mono {mono_peak}");

    // without the coupling the arms' weight never reaches the stem
    let loose = simulate_substructured(&mesh, &part, 0, &[zero_net()], &script, setup(false)).unwrap();
    let loose_peak = peak(loose.displacements.iter().map(|u| u.amax()));
    assert!(loose_peak < 0.5 * mono_peak, "uncoupled {loose_peak} mono {mono_peak}");
}
