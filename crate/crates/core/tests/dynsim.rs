use flowpce::dynsim::cache::SimCache;
use flowpce::dynsim::{run_batch, Event, Injection, State, SwingConfig, SwingSystem};
use flowpce::Error;
use ndarray::{array, Array2};
use proptest::prelude::*;

fn bench() -> SwingSystem {
    SwingSystem::benchmark()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn inject_interpolates_each_range() {
    let sys = bench();
    let cfg = sys.config().clone();
    let lows: Vec<f64> = cfg.uncertain.iter().map(|u| u.low).collect();
    let mids: Vec<f64> = cfg.uncertain.iter().map(|u| 0.5 * (u.low + u.high)).collect();
    let at = |xi: &[f64]| sys.inject(xi).unwrap();
    let pick = |pm: Vec<f64>| -> Vec<f64> { cfg.uncertain.iter().map(|u| pm[u.generator]).collect() };
    assert_eq!(pick(at(&[0.0; 3])), lows);
    assert!(sup(&pick(at(&[0.5; 3])), &mids) < 1e-15);
    let xi = [0.2, 0.7, 0.4];
    let expect: Vec<f64> = cfg.uncertain.iter().zip(xi).map(|(u, x)| u.low + x * (u.high - u.low)).collect();
    assert!(sup(&pick(at(&xi)), &expect) < 1e-15);
    // clamping outside the cube
    assert_eq!(at(&[-0.3, 1.4, 0.0]), at(&[0.0, 1.0, 0.0]));
    assert!(sys.inject(&[0.1, 0.2]).is_err());
    assert!(sys.inject(&[f64::NAN, 0.2, 0.3]).is_err());
}

#[test]
fn construction_rejects_bad_configs() {
    let base = bench().config().clone();
    let bad = [
        SwingConfig { uncertain: vec![Injection { generator: 0, low: 1.0, high: 1.0 }], ..base.clone() },
        SwingConfig { inertia: vec![0.1, -0.1, 0.1], ..base.clone() },
        SwingConfig { events: vec![Event { time: 1.0025, network: 1 }], ..base.clone() },
        SwingConfig { events: vec![Event { time: 1.2, network: 1 }, Event { time: 1.0, network: 2 }], ..base.clone() },
        SwingConfig { monitored: 3, ..base.clone() },
        SwingConfig { format_version: 99, ..base.clone() },
    ];
    for c in bad {
        assert!(matches!(SwingSystem::new(c), Err(Error::Config(_))));
    }
    let mut asym = base.clone();
    asym.networks[0][0][1][1] += 0.1;
    assert!(SwingSystem::new(asym).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let c = bench().config().clone();
    assert_eq!(SwingConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
}

/// Two identical machines joined by a lossless line.
fn two_machine(pm: f64, damping: f64) -> SwingSystem {
    let y = vec![vec![[0.0, -2.0], [0.0, 2.0]], vec![[0.0, 2.0], [0.0, -2.0]]];
    SwingSystem::new(SwingConfig {
        format_version: 1,
        name: "pair".into(),
        inertia: vec![0.1, 0.1],
        damping: vec![damping, damping],
        emf: vec![1.0, 1.0],
        p_mech: vec![pm, pm],
        networks: vec![y],
        events: vec![],
        uncertain: vec![],
        monitored: 0,
        step: 0.005,
        horizon: 5.0,
    })
    .unwrap()
}

#[test]
fn symmetric_pair_sits_at_equal_angles() {
    for d in [0.0, 0.2] {
        let sys = two_machine(0.0, d);
        let eq = sys.equilibrium(&[0.0, 0.0]).unwrap();
        assert!(eq.delta.iter().all(|v| v.abs() < 1e-12), "{eq:?}");
        assert_eq!(eq.omega, 0.0);
    }
}

fn balance_residual(sys: &SwingSystem, pm: &[f64], delta: &[f64], omega: f64) -> f64 {
    let c = sys.config();
    let n = delta.len();
    let y = &c.networks[0];
    (0..n)
        .map(|i| {
            let pe: f64 = (0..n)
                .map(|j| {
                    let (s, co) = (delta[i] - delta[j]).sin_cos();
                    c.emf[i] * c.emf[j] * (y[i][j][0] * co + y[i][j][1] * s)
                })
                .sum();
            (pm[i] - pe - c.damping[i] * omega).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn equilibrium_residual_and_reference() {
    let sys = bench();
    for xi in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, 0.9, 0.1], [0.5, 0.5, 0.5]] {
        let pm = sys.inject(&xi).unwrap();
        let eq = sys.equilibrium(&pm).unwrap();
        assert!(eq.residual < 1e-10 && eq.iterations <= 50);
        assert!(balance_residual(&sys, &pm, &eq.delta, eq.omega) < 1e-10);
        assert!(sys.coi(&eq.delta).abs() < 1e-12);
    }
}

#[test]
fn infeasible_operating_point_is_reported() {
    let sys = two_machine(0.0, 0.1);
    // the line carries at most 2 p.u., so 5 p.u. of transfer has no solution
    assert!(matches!(sys.equilibrium(&[5.0, -5.0]), Err(Error::Infeasible(_))));
}

/// Equilibrium by brute force: the COI fixes the heavy machine's angle,
/// machine 0's balance fixes the common speed, and the two remaining residuals
/// are driven to zero by a grid search over the light machines' angles,
/// refined through repeated bracketing. Only stable points (pairwise angle
/// gaps below π/2) are searched.
fn brute_force_equilibrium(sys: &SwingSystem, pm: &[f64]) -> Vec<f64> {
    let c = sys.config();
    let m = &c.inertia;
    let y = &c.networks[0];
    let pe = |d: &[f64], i: usize| -> f64 {
        (0..3)
            .map(|j| {
                let (s, co) = (d[i] - d[j]).sin_cos();
                c.emf[i] * c.emf[j] * (y[i][j][0] * co + y[i][j][1] * s)
            })
            .sum()
    };
    let angles = |a: f64, b: f64| [-(m[1] * a + m[2] * b) / m[0], a, b];
    let cost = |a: f64, b: f64| {
        let d = angles(a, b);
        if (0..3).any(|i| (0..3).any(|j| (d[i] - d[j]).abs() >= std::f64::consts::FRAC_PI_2)) {
            return f64::INFINITY;
        }
        let omega = (pm[0] - pe(&d, 0)) / c.damping[0];
        let r1 = pm[1] - pe(&d, 1) - c.damping[1] * omega;
        let r2 = pm[2] - pe(&d, 2) - c.damping[2] * omega;
        r1 * r1 + r2 * r2
    };
    let (mut ca, mut cb, mut half) = (0.0, 0.0, 1.5);
    let k = 40;
    for _ in 0..60 {
        let mut best = (f64::INFINITY, ca, cb);
        for i in 0..=k {
            for j in 0..=k {
                let a = ca - half + 2.0 * half * i as f64 / k as f64;
                let b = cb - half + 2.0 * half * j as f64 / k as f64;
                let v = cost(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        ca = best.1;
        cb = best.2;
        half *= 0.25;
    }
    angles(ca, cb).to_vec()
}

#[test]
fn equilibrium_matches_brute_force_search() {
    let sys = bench();
    for xi in [[0.5, 0.5, 0.5], [0.1, 0.8, 0.3]] {
        let pm = sys.inject(&xi).unwrap();
        let eq = sys.equilibrium(&pm).unwrap();
        let brute = brute_force_equilibrium(&sys, &pm);
        assert!(sup(&eq.delta, &brute) < 1e-6, "{:?} vs {brute:?}", eq.delta);
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let sys = bench().without_events();
    for xi in [[0.5, 0.5, 0.5], [0.0, 1.0, 0.2]] {
        let out = sys.simulate(&xi).unwrap();
        assert!(!out.unstable);
        let dev = out.y.iter().fold(0.0f64, |m, v| m.max((v - out.y[0]).abs()));
        assert!(dev < 1e-8, "{dev}");
    }
}

#[test]
fn lossless_undamped_energy_is_conserved() {
    let base = bench();
    let mut c = base.config().clone();
    c.damping = vec![0.0; 3];
    c.events.clear();
    for row in c.networks.iter_mut().flatten() {
        for y in row.iter_mut() {
            y[0] = 0.0;
        }
    }
    // balanced injections keep the COI at rest
    let mean = c.p_mech.iter().sum::<f64>() / 3.0;
    let pm: Vec<f64> = c.p_mech.iter().map(|p| p - mean).collect();
    let sys = SwingSystem::new(c.clone()).unwrap();
    let eq = sys.equilibrium(&pm).unwrap();
    let delta: Vec<f64> = eq.delta.iter().zip([0.3, -0.2, 0.1]).map(|(d, k)| d + k).collect();
    let omega = vec![0.5, -1.0, 0.8];

    let b = &c.networks[0];
    let energy = |s: &State| {
        let mut e = 0.0;
        for i in 0..3 {
            e += 0.5 * c.inertia[i] * s.omega[i] * s.omega[i] - pm[i] * s.delta[i];
            for j in i + 1..3 {
                e -= c.emf[i] * c.emf[j] * b[i][j][1] * (s.delta[i] - s.delta[j]).cos();
            }
        }
        e
    };
    let e0 = energy(&State { delta: delta.clone(), omega: omega.clone() });
    let mut drift = 0.0f64;
    let mut steps = 0;
    sys.integrate(&pm, State { delta, omega }, |_, s| {
        drift = drift.max((energy(s) - e0).abs());
        steps += 1;
        true
    })
    .unwrap();
    assert_eq!(steps, sys.time_grid().len());
    assert!(drift / e0.abs() < 1e-6, "relative drift {}", drift / e0.abs());
}

#[test]
fn halving_the_step_changes_little() {
    let sys = bench();
    let fine = sys.with_step(0.0025).unwrap();
    for xi in [[0.5, 0.5, 0.5], [1.0, 0.0, 1.0], [0.2, 0.7, 0.4]] {
        let a = sys.simulate(&xi).unwrap();
        let b = fine.simulate(&xi).unwrap();
        let b_even: Vec<f64> = b.y.iter().step_by(2).cloned().collect();
        assert_eq!(b_even.len(), a.y.len());
        assert!(sup(&a.y, &b_even) < 1e-6);
    }
}

#[test]
fn grid_length_and_finiteness() {
    let sys = bench();
    let out = sys.simulate(&[0.5, 0.5, 0.5]).unwrap();
    assert_eq!(out.time.len(), (10.0f64 / 0.005).floor() as usize + 1);
    assert!(out.y.iter().all(|v| v.is_finite()));
    // the trips move the trajectory off its initial value
    assert!(sup(&out.y, &vec![out.y[0]; out.y.len()]) > 1e-3);
}

#[test]
fn instability_is_flagged_not_raised() {
    let sys = two_machine(0.0, 0.0);
    // a large speed difference slips the pair
    let out = sys.simulate_from(&[0.0, 0.0], State { delta: vec![0.0, 0.0], omega: vec![20.0, -20.0] }).unwrap();
    assert!(out.unstable);
    assert!(out.y.last().unwrap().is_nan());
    let batch = flowpce::dynsim::BatchOutcome::collect(vec![Ok(out)], sys.time_grid().len());
    assert_eq!(batch.ok.len(), 0);
    assert!(matches!(batch.partial_error(), Error::PartialBatch { failed: 1, total: 1, .. }));
}

#[test]
fn batch_of_one_equals_simulate() {
    let sys = bench();
    let xi = array![[0.3, 0.6, 0.9]];
    let out = run_batch(&sys, xi.view(), None).into_result().unwrap();
    assert_eq!(out.row(0).to_vec(), sys.simulate(&[0.3, 0.6, 0.9]).unwrap().y);
}

#[test]
fn batch_gives_reference_statistics() {
    let sys = bench();
    let xi = flowpce::flow::standard_normal(500, 3, 4).mapv(flowpce::special::norm_cdf);
    let ys = run_batch(&sys, xi.view(), None).into_result().unwrap();
    let st = flowpce::metrics::TrajectoryStats::from_runs(sys.time_grid(), ys.view()).unwrap();
    assert_eq!(st.count, 500);
    assert!(st.std.iter().all(|s| s.is_finite() && *s >= 0.0));
    assert!(st.std.iter().any(|s| *s > 0.0));
}

#[test]
fn cache_returns_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cache = SimCache::open(dir.path()).unwrap();
    let sys = bench();
    let xi = array![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]];
    let first = run_batch(&sys, xi.view(), Some(&cache)).into_result().unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    let second = run_batch(&sys, xi.view(), Some(&cache)).into_result().unwrap();
    let bits = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&first), bits(&second));
    assert_eq!(bits(&first), bits(&run_batch(&sys, xi.view(), None).trajectories));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permuting_rows_permutes_outputs(seed in 0u64..1000) {
        let sys = bench();
        let xi = flowpce::flow::standard_normal(5, 3, seed).mapv(flowpce::special::norm_cdf);
        let perm = [3usize, 0, 4, 1, 2];
        let shuffled = xi.select(ndarray::Axis(0), &perm);
        let a = run_batch(&sys, xi.view(), None).into_result().unwrap();
        let b = run_batch(&sys, shuffled.view(), None).into_result().unwrap();
        for (k, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.row(k).to_vec(), a.row(p).to_vec());
        }
    }

    #[test]
    fn simulation_is_deterministic(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
        let sys = bench();
        let a = sys.simulate(&[x, y, z]).unwrap();
        let b = sys.simulate(&[x, y, z]).unwrap();
        prop_assert_eq!(
            a.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn trajectories_are_lipschitz_in_the_inputs(
        x in prop::array::uniform3(0.02f64..0.98),
        d in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let sys = bench();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        let dx: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + 0.01 * b / norm).collect();
        let a = sys.simulate(&x).unwrap();
        let b = sys.simulate(&dx).unwrap();
        let kappa = sup(&a.y, &b.y) / 0.01;
        prop_assert!(kappa <= KAPPA, "κ = {}", kappa);
    }
}

/// Empirical Lipschitz bound of the map `ξ ↦ y` on the benchmark.
const KAPPA: f64 = 2.0;
