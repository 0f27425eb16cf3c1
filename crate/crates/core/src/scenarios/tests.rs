use nalgebra::{DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ssm::dynamics::{lorenz_matrix, spherical};
use crate::ssm::trajectory::write_csv;
use crate::ssm::StateModel;

fn matrix_of(t: &Transition) -> DMatrix<f64> {
    match t {
        Transition::Linear { matrix } => matrix.clone(),
        other => panic!("not linear: {other:?}"),
    }
}

#[test]
fn linear2_defaults() {
    let sc = ScenarioSpec::linear2().build().unwrap();
    match &sc.system.mode_process {
        ModeProcess::MarkovChain { transition, .. } => {
            assert_eq!(transition, &vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        }
        other => panic!("unexpected process {other:?}"),
    }
    let ct = matrix_of(&sc.system.modes[1].transition);
    assert!((ct[(0, 1)] - 0.998334).abs() < 1e-6);
    assert_eq!(matrix_of(&sc.system.modes[0].transition), constant_velocity(1.0));
    assert_eq!(sc.system.modes[0].process_noise, NoiseModel::isotropic(0.5, 4));
    assert_eq!(sc.system.modes[1].process_noise, NoiseModel::isotropic(2.0, 4));
    assert_eq!(sc.system.modes[0].obs_noise, NoiseModel::isotropic(5.0, 2));
    assert_eq!(sc.system.initial.mean().as_slice(), &[0.0, 10.0, 0.0, 10.0]);
    assert_eq!(sc.spec.horizon, 50);
    assert!(sc.linear);
}

#[test]
fn small_turn_rate_approaches_constant_velocity() {
    let ct = constant_turn(1e-9, 1.0);
    let cv = constant_velocity(1.0);
    assert!((ct - cv).abs().max() < 1e-6);
}

#[test]
fn linear4_defaults() {
    let sc = ScenarioSpec::linear4(NoiseFamily::Gaussian).build().unwrap();
    let p = Linear4Params::default();
    assert_eq!(
        matrix_of(&sc.system.modes[3].transition),
        constant_turn(-p.omega, p.dt)
    );
    assert_eq!(matrix_of(&sc.system.modes[2].transition), constant_velocity(-0.01));
    match &sc.system.mode_process {
        ModeProcess::MarkovChain { transition, .. } => {
            for (i, row) in transition.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert!((v - if i == j { 0.7 } else { 0.1 }).abs() < 1e-12);
                }
            }
        }
        other => panic!("unexpected process {other:?}"),
    }
    assert_eq!(sc.spec.horizon, 2000);
    assert_eq!(sc.spec.segment_len, Some(20));
}

#[test]
fn variance_matched_noise_variants() {
    for family in [NoiseFamily::Laplacian, NoiseFamily::Gmm] {
        let sc = ScenarioSpec::linear4(family).build().unwrap();
        for v in sc.system.modes[0].obs_noise.total_variance() {
            assert!((v - 5.0).abs() < 1e-9, "{family:?}");
        }
        assert!(!sc.linear);
    }
}

#[test]
fn quadratic_without_mismatch_shows_the_true_model() {
    let sc = ScenarioSpec::quadratic(0.0).build().unwrap();
    assert_eq!(sc.filter_modes, sc.system.modes);
    let biased = ScenarioSpec::quadratic(0.2).build().unwrap();
    assert_ne!(biased.filter_modes, biased.system.modes);
    let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
    let truth = biased.system.modes[0].transition(&x, 1);
    let model = biased.filter_modes[0].transition(&x, 1);
    // Velocity bias 0.2·dt plus half the acceleration bias on position; 0.2 on velocity.
    assert!((model[0] - truth[0] - 0.3).abs() < 1e-12);
    assert!((model[1] - truth[1] - 0.2).abs() < 1e-12);
    assert!(ScenarioSpec::quadratic(-1.0).build().is_err());
}

#[test]
fn quadratic_acceleration_at_origin_is_the_constant_term() {
    let p = QuadraticParams::default();
    let law = AccelerationLaw::Quadratic {
        c2: p.coefficients[0],
        c1: p.coefficients[1],
        c0: p.coefficients[2],
        max_accel: p.max_accel,
    };
    assert_eq!(law.eval(0.0, 0).0, 1.0);
}

#[test]
fn quadratic_trajectories_stay_finite() {
    let sc = ScenarioSpec::quadratic(0.0).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = sc.generate(10_000, &mut rng).unwrap();
    assert!(data
        .iter()
        .all(|t| t.states.iter().chain(&t.observations).all(|v| v.iter().all(|c| c.is_finite()))));
}

fn pendulum_motion(law: PendulumLaw) -> PendulumMotion {
    let p = PendulumParams::default();
    PendulumMotion {
        dt: p.dt,
        g: p.g,
        length: p.length,
        law,
    }
}

#[test]
fn pendulum_mode_laws() {
    let driven = pendulum_motion(PendulumLaw::Driven {
        amplitude: 1.0,
        omega: 2.0,
    });
    assert!((driven.acceleration(0.0, 0.0, 0.0) - 1.0).abs() < 1e-12);
    let damped = pendulum_motion(PendulumLaw::Damped { gamma: 0.2 });
    assert!((damped.acceleration(0.0, 1.0, 0.0) + 0.2).abs() < 1e-12);
    let free = pendulum_motion(PendulumLaw::Free);
    assert!((free.acceleration(std::f64::consts::FRAC_PI_2, 0.0, 0.0) + 0.981).abs() < 1e-12);

    let sc = ScenarioSpec::pendulum(0.1).build().unwrap();
    match &sc.system.mode_process {
        ModeProcess::MarkovChain { transition, .. } => {
            for row in transition {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row.iter().cloned().fold(0.0, f64::max), 0.7);
            }
        }
        other => panic!("unexpected process {other:?}"),
    }
    assert_eq!(sc.system.modes[0].process_noise, NoiseModel::isotropic(0.1, 3));
}

#[test]
fn free_pendulum_energy_drift_is_bounded() {
    let p = PendulumParams::default();
    let tr = Transition::Pendulum(pendulum_motion(PendulumLaw::Free));
    let energy = |x: &DVector<f64>| 0.5 * p.length * p.length * x[1] * x[1] + p.g * p.length * (1.0 - x[0].cos());
    let mut x = DVector::from_vec(p.x0.clone());
    let mut energies = vec![energy(&x)];
    for t in 1..=1000 {
        x = tr.apply(&x, t);
        energies.push(energy(&x));
    }
    // Drift is the change of the energy averaged over one oscillation period, which
    // removes the bounded within-period oscillation of the Euler pair.
    let period = (2.0 * std::f64::consts::PI * (p.length / p.g).sqrt() / p.dt).round() as usize;
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let first = mean(&energies[..period]);
    let last = mean(&energies[energies.len() - period..]);
    let drift = (last - first).abs() / first;
    assert!(drift < 0.05, "relative energy drift {drift}");
    let e0 = energies[0];
    assert!(energies.iter().all(|e| (e - e0).abs() / e0 < 0.06));
}

#[test]
fn lorenz_defaults_and_observations() {
    let sc = ScenarioSpec::lorenz(-10.0).build().unwrap();
    assert_eq!(sc.system.modes.len(), 3);
    assert_eq!(sc.system.modes[0].obs_noise, NoiseModel::isotropic(0.1, 3));
    assert!(matches!(sc.system.modes[2].observation, Observation::Spherical { .. }));
    let (pole, clamped) = spherical(&DVector::from_vec(vec![0.0, 0.0, 1.0]), 1e-9);
    assert_eq!(pole.as_slice(), &[1.0, 0.0, 0.0]);
    assert!(!clamped);
}

#[test]
fn lorenz_second_order_step_is_the_taylor_polynomial() {
    let x = DVector::from_vec(vec![1.0, 1.0, 1.0]);
    let a = lorenz_matrix(&x);
    assert_eq!(a.row(0).iter().cloned().collect::<Vec<_>>(), vec![-10.0, 10.0, 0.0]);
    let ad = a * 0.02;
    let f2 = Matrix3::identity() + ad + ad * ad / 2.0;
    let want = f2 * nalgebra::Vector3::new(1.0, 1.0, 1.0);
    let got = Transition::LorenzTaylor { order: 2, dtau: 0.02 }.apply(&x, 1);
    for i in 0..3 {
        assert!((got[i] - want[i]).abs() < 1e-14);
    }
}

/// RK4 on `dx/dτ = A(x₀)·x` over one interval, with `A` frozen at the start point.
fn frozen_rk4(x0: &DVector<f64>, dtau: f64, h: f64) -> DVector<f64> {
    let a = lorenz_matrix(x0);
    let f = |x: &nalgebra::Vector3<f64>| a * x;
    let mut x = nalgebra::Vector3::new(x0[0], x0[1], x0[2]);
    let steps = (dtau / h).round() as usize;
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (h / 2.0)));
        let k3 = f(&(x + k2 * (h / 2.0)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    DVector::from_column_slice(x.as_slice())
}

#[test]
fn lorenz_fifth_order_step_matches_fine_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tr = Transition::LorenzTaylor { order: 5, dtau: 0.02 };
    for _ in 0..100 {
        let x = DVector::from_fn(3, |_, _| rng.random_range(-20.0..20.0));
        let got = tr.apply(&x, 1);
        let want = frozen_rk4(&x, 0.02, 1e-4);
        let rel = (&got - &want).norm() / want.norm();
        assert!(rel < 1e-3, "relative disagreement {rel}");
    }
}

#[test]
fn specs_are_pure_and_round_trip_through_json() {
    for name in ["linear2", "linear4", "linear4_laplacian", "linear4_gmm", "quadratic", "pendulum", "lorenz"] {
        let spec = ScenarioSpec::by_name(name).unwrap();
        assert_eq!(spec.build().unwrap(), spec.build().unwrap());
        let json = spec.to_json().unwrap();
        assert_eq!(ScenarioSpec::from_json(&json).unwrap(), spec);
    }
    assert!(ScenarioSpec::by_name("nope").is_err());
}

#[test]
fn serialized_spec_lists_every_constant() {
    let json = ScenarioSpec::pendulum(0.05).to_json().unwrap();
    for key in ["\"dt\"", "\"g\"", "\"length\"", "\"gamma\"", "\"kick_probability\"", "\"stay\""] {
        assert!(json.contains(key), "{key}");
    }
}

#[test]
fn csv_round_trip_and_errors() {
    let sc = ScenarioSpec::linear2().build().unwrap();
    let data = sc.generate(3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut buf = Vec::new();
    write_csv(&mut buf, &data).unwrap();
    std::fs::write(&path, &buf).unwrap();
    let cols = ColumnMap::default_for(4, 2);
    let back = ingest_csv(&path, &cols).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in back.iter().zip(&data) {
        assert_eq!(a.states, b.states);
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.x0, b.x0);
        assert!(a.modes.is_empty());
    }

    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    let last = cells.len() - 2;
    cells[last] = "oops".into();
    lines[3] = cells.join(",");
    std::fs::write(&path, lines.join("\n")).unwrap();
    match ingest_csv(&path, &cols) {
        Err(Error::Parse { row, column, .. }) => {
            assert_eq!(row, 4);
            assert_eq!(column, "y2");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    std::fs::write(&path, "").unwrap();
    assert!(matches!(ingest_csv(&path, &cols), Err(Error::EmptyDataset)));
}
