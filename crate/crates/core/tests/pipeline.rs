use rieszflow::config::{parse_config, parse_with_overrides};
use rieszflow::dynamics::{run_flow, RunParams};
use rieszflow::energy::{mmd_energy, DiagonalPolicy};
use rieszflow::io::{emit_plotdata, read_particles, write_particles, write_trajectory, PlotKind};
use rieszflow::setup::{build, initial_state};

fn params(text: &str) -> RunParams {
    let cfg = parse_config(text).unwrap();
    RunParams { dt: cfg.dt, t_end: cfg.t_end, record_every: cfg.record_every, gamma: cfg.gamma }
}

#[test]
fn euclidean_cloud_run_round_trips_through_files() {
    let text = "\
domain = euclidean 2
kernel = energy_distance
init = gaussian 0 1
target = gaussian 1.5 1   # shifted along the first axis
n_particles = 64
seed = 3
dt = 0.01
t_end = 0.5
record_every = 5
";
    let cfg = parse_config(text).unwrap();
    let (problem, dens) = build(&cfg).unwrap();
    let state = initial_state(&problem.init, dens.as_deref()).unwrap();
    let traj = run_flow(&problem.kernel, state, &problem.target, &params(text)).unwrap();
    assert!(traj.abort.is_none());
    assert_eq!(traj.records.len(), 11);
    let e: Vec<f64> = traj.records.iter().map(|r| r.report.energy).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");

    let dir = tempfile::tempdir().unwrap();
    let last = traj.final_state.as_ref().unwrap().measure().unwrap();
    let path = dir.path().join("final.csv");
    write_particles(&path, &last).unwrap();
    let back = read_particles(&path, cfg.domain).unwrap();
    assert_eq!(back, last);
    // The recorded energy is the energy of the stored cloud.
    let again = mmd_energy(&problem.kernel, &back.into(), &problem.target, DiagonalPolicy::Include).unwrap();
    assert!((again - e[e.len() - 1]).abs() <= 1e-12 * again.abs());

    write_trajectory(&dir.path().join("trajectory.csv"), &traj).unwrap();
    let files = emit_plotdata(&traj, PlotKind::Energy, &dir.path().join("plots")).unwrap();
    assert!(files.iter().all(|f| f.exists()));
}

#[test]
fn overrides_change_the_problem_not_the_seeded_draws() {
    let text = "domain = euclidean 2\nkernel = coulomb\ninit = gaussian 0 1\ntarget = gaussian 2 1\nn_particles = 16\nseed = 9\n";
    let (a, _) = build(&parse_config(text).unwrap()).unwrap();
    let cfg = parse_with_overrides(text, &[("kernel".into(), "energy_distance".into())]).unwrap();
    let (b, _) = build(&cfg).unwrap();
    assert_eq!(a.init, b.init);
    assert_eq!(a.target, b.target);
    assert_ne!(a.kernel, b.kernel);
}

#[test]
fn torus_grid_problem_starts_from_lattice_particles() {
    let cfg = parse_config("grid = 32\n").unwrap();
    let (problem, dens) = build(&cfg).unwrap();
    assert!(dens.is_none());
    let state = initial_state(&problem.init, None).unwrap();
    assert_eq!(state.len(), 32);
    assert_eq!(state.transport_defect(), 0.0);
}
