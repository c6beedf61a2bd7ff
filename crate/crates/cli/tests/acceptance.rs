//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured runtime (visible under `--nocapture`). Tolerances and
//! budgets are pinned in the assertions.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use invariant_dp::artifacts::ArtifactDir;
use invariant_dp::config::{
    ExperimentConfig, ExperimentKind, PendulumConfig, PipelineConfig, RunningExampleConfig,
};
use invariant_dp::RunStatus;

use invariant_dp_core::grid::{sample_discounted_state, GridValueFn, OutOfRange};
use invariant_dp_core::mdp::{
    evaluate_policy_on_grid, policy_improve, value_iterate, vi_sweep, MpopSpec, PolicyFn,
};
use invariant_dp_core::models;
use invariant_dp_core::restriction::{build_action_hull, check_nonemptiness, restrict, BoxRegion};
use invariant_dp_core::robotics::{
    coriolis, dynamics, fbl_controller, inertia_rate, make_robotic_mpop, reachable_closure,
    stabilizing_policy,
};
use invariant_dp_core::running_example;
use invariant_dp_core::sampled_data::{integrate_zoh, linear_zoh_exact, LinearSystem, ZohConfig};
use invariant_dp_core::tabular::TabularMpop;
use invariant_dp_core::CompactSet;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    v[n - 1] = hi;
    v
}

fn candidates_1d(values: &[f64]) -> Vec<Vec<f64>> {
    values.iter().map(|&v| vec![v]).collect()
}

fn report(criterion: &str, start: Instant, budget_s: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    println!("[PASS] {criterion} ({elapsed:.2}s, budget {budget_s}s)");
    assert!(
        elapsed < budget_s,
        "{criterion}: runtime {elapsed:.2}s exceeded budget {budget_s}s"
    );
}

#[test]
fn criterion_01_running_example_oracle_reproduction() {
    let start = Instant::now();
    let restricted = running_example::restricted(0.9).unwrap();
    let grid = linspace(-1.0, 1.0, 401);
    let mut mismatches = 0usize;
    for &s in &grid {
        for &a in &grid {
            let image = s + a.tanh();
            if (image.abs() - 1.0).abs() <= 1e-9 {
                continue;
            }
            if restricted.is_admissible(&[s], &[a]) != running_example::admissible(s, a).unwrap() {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0, "401x401 admissibility grid disagreed");

    let expected = [
        (-0.9, (-0.1f64).atanh(), 1.0),
        (0.0, -1.0, 1.0),
        (0.9, -1.0, 0.1f64.atanh()),
    ];
    for (s, lo, hi) in expected {
        let (clo, chi) = running_example::c0_interval(s).unwrap();
        assert!((clo - lo).abs() <= 1e-12, "lo endpoint at s = {s}");
        assert!((chi - hi).abs() <= 1e-12, "hi endpoint at s = {s}");
    }

    // The experiment runner reproduces the same agreement end to end.
    let dir = tempfile::tempdir().unwrap();
    let out = ArtifactDir::create(dir.path()).unwrap();
    let status =
        invariant_dp::run_example::run_example(&RunningExampleConfig::default(), 11, &out).unwrap();
    assert_eq!(status, RunStatus::Success);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["oracle"]["mismatches"], 0);
    assert_eq!(summary["oracle"]["pass"], true);
    report("criterion 1: running-example oracle reproduction", start, 5.0);
}

#[test]
fn criterion_02_contraction_suite() {
    let start = Instant::now();
    let mdp = running_example::restricted(0.9).unwrap().to_mpop();
    let nodes = 201;
    let axes = vec![linspace(-1.0, 1.0, nodes)];
    let actions = candidates_1d(&linspace(-1.0, 1.0, 201));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let va: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-15.0..15.0)).collect();
        let vb: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-15.0..15.0)).collect();
        let input_gap = va
            .iter()
            .zip(&vb)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let ga = GridValueFn::new(axes.clone(), va, OutOfRange::Clamp).unwrap();
        let gb = GridValueFn::new(axes.clone(), vb, OutOfRange::Clamp).unwrap();
        let sa = vi_sweep(&mdp, &ga, &actions).unwrap();
        let sb = vi_sweep(&mdp, &gb, &actions).unwrap();
        let output_gap = sa
            .values()
            .iter()
            .zip(sb.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            output_gap <= 0.9 * input_gap + 1e-12,
            "trial {trial}: {output_gap} > 0.9 * {input_gap} + 1e-12"
        );
    }
    report("criterion 2: contraction suite (100 sweep pairs)", start, 30.0);
}

#[test]
fn criterion_03_tabular_brute_force_equivalence() {
    let start = Instant::now();
    for trial in 0..50u64 {
        let n_states = 2 + (trial as usize) % 4; // 2..=5
        let n_actions = 2 + (trial as usize / 4) % 3; // 2..=4
        let discount = if trial % 2 == 0 { 0.5 } else { 0.9 };
        let t = TabularMpop::random(n_states, n_actions, discount, 1000 + trial).unwrap();
        let (vstar, _) = t.enumerate_optimal().unwrap();
        let mdp = t.to_mpop();
        let (v, _) = value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), 1e-10, 50_000)
            .unwrap();
        for s in 0..n_states {
            assert!(
                (v.values()[s] - vstar[s]).abs() <= 1e-8,
                "trial {trial} state {s}: vi {} enum {}",
                v.values()[s],
                vstar[s]
            );
        }
        let greedy =
            invariant_dp_core::mdp::extract_greedy(&mdp, Arc::new(v), &t.action_list());
        let indices: Vec<usize> = (0..n_states)
            .map(|s| greedy.act(&[s as f64]).unwrap()[0].round() as usize)
            .collect();
        let vg = t.policy_value(&indices).unwrap();
        for s in 0..n_states {
            assert!(
                (vg[s] - vstar[s]).abs() <= 1e-8,
                "trial {trial}: greedy policy suboptimal at state {s}"
            );
        }
    }
    report("criterion 3: tabular brute-force equivalence (50 MDPs)", start, 10.0);
}

#[test]
fn criterion_04_boundedness_and_monotonicity() {
    let start = Instant::now();
    let discount = 0.9;
    let mdp = running_example::restricted(discount).unwrap().to_mpop();
    let axes = vec![linspace(-1.0, 1.0, 201)];
    let actions = candidates_1d(&linspace(-1.0, 1.0, 201));

    // Reward bound over the compact admissible graph, by grid scan.
    let mut m = 0.0f64;
    for &s in &axes[0] {
        for a in &actions {
            if mdp.is_admissible(&[s], a) {
                m = m.max(mdp.reward(&[s], a).abs());
            }
        }
    }
    assert!(m > 1.0, "reward bound {m} implausibly small");
    let band = m / (1.0 - discount);

    // Iterates from zero stay inside the band.
    let mut v = GridValueFn::zeros(axes.clone()).unwrap();
    for _ in 0..100 {
        v = vi_sweep(&mdp, &v, &actions).unwrap();
        assert!(v.values().iter().all(|x| x.abs() <= band + 1e-9));
    }

    // Starting at the upper bound, sweeps are pointwise nonincreasing.
    let mut upper = GridValueFn::constant(axes, band).unwrap();
    for sweep in 0..100 {
        let next = vi_sweep(&mdp, &upper, &actions).unwrap();
        for (new, old) in next.values().iter().zip(upper.values()) {
            assert!(
                new <= &(old + 1e-12),
                "sweep {sweep}: iterate increased ({new} > {old})"
            );
        }
        assert!(next.values().iter().all(|x| x.abs() <= band + 1e-9));
        upper = next;
    }
    report("criterion 4: boundedness and monotone iterates", start, 10.0);
}

#[test]
fn criterion_05_sampled_data_accuracy() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let d = 1 + trial % 4;
        let m = 1 + trial % 2;
        let raw = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let rho = raw
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        // Scale into the unit disk, then shift left: strictly stable.
        let a = raw / (rho + 0.01) - nalgebra::DMatrix::identity(d, d) * 1.1;
        let b = nalgebra::DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.0..1.0));
        let sys = LinearSystem::new(a, b).unwrap();
        let x = nalgebra::DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let u = nalgebra::DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let h = 0.5;
        let exact = linear_zoh_exact(&sys, &x, &u, h).unwrap();
        let numeric = integrate_zoh(
            &sys.to_control_affine(),
            &x,
            &u,
            &ZohConfig::new(h, 1000).unwrap(),
        )
        .unwrap();
        let gap = (exact - numeric).abs().max();
        assert!(gap <= 1e-8, "trial {trial}: exact-vs-RK4 gap {gap}");
    }

    // Fourth-order refinement on the scalar decay test.
    let scalar = LinearSystem::from_rows(&[vec![-1.0]], &[vec![0.0]]).unwrap();
    let affine = scalar.to_control_affine();
    let h = 0.5f64;
    let error_at = |substeps: usize| {
        let next = integrate_zoh(
            &affine,
            &nalgebra::DVector::from_vec(vec![1.0]),
            &nalgebra::DVector::from_vec(vec![0.0]),
            &ZohConfig::new(h, substeps).unwrap(),
        )
        .unwrap();
        (next[0] - (-h).exp()).abs()
    };
    let errors: Vec<f64> = [2usize, 4, 8, 16].iter().map(|&k| error_at(k)).collect();
    for pair in errors.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!(
            (14.0..=18.0).contains(&ratio),
            "refinement ratio {ratio} outside [14, 18]"
        );
    }
    report("criterion 5: sampled-data accuracy (20 systems + order test)", start, 5.0);
}

#[test]
fn criterion_06_robotics_identities() {
    let start = Instant::now();
    let pendulum = models::pendulum(&models::PendulumParams::default()).unwrap();
    let arm = models::two_link_arm(&models::TwoLinkArmParams::default()).unwrap();

    // Exact feedback-linearization residual on 1000 random (x, v) per system.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (sys, n) in [(&pendulum, 1usize), (&arm, 2usize)] {
        for trial in 0..1000 {
            let x = nalgebra::DVector::from_fn(2 * n, |_, _| rng.gen_range(-2.0..2.0));
            let v = nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let u = fbl_controller(sys, &x, &v).unwrap();
            let xdot = dynamics(sys, &x, &u).unwrap();
            for k in 0..n {
                let qdot_residual = (xdot[k] - x[n + k]).abs();
                let accel_residual = (xdot[n + k] - v[k]).abs();
                assert!(
                    qdot_residual <= 1e-9 && accel_residual <= 1e-9,
                    "trial {trial}: residuals {qdot_residual} / {accel_residual}"
                );
            }
        }
    }

    // Passivity: the quadratic form of Ddot - 2C vanishes for random x.
    for trial in 0..500 {
        let q = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
        let qd = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let x = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let skew = inertia_rate(&arm, &q, &qd) - 2.0 * coriolis(&arm, &q, &qd);
        let quad = (x.transpose() * skew * &x)[(0, 0)].abs();
        assert!(
            quad <= 1e-6 * x.norm_squared(),
            "trial {trial}: quadratic form residual {quad}"
        );
    }

    // Free pendulum swing conserves energy over 10 s at substeps = 20.
    let params = models::PendulumParams::default();
    let affine = models::robotic_to_control_affine(&pendulum);
    let cfg = ZohConfig::new(0.01, 20).unwrap();
    let u = nalgebra::DVector::zeros(1);
    let mut x = nalgebra::DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]);
    let e0 = models::pendulum_energy(&params, x.as_slice());
    let mut drift = 0.0f64;
    for _ in 0..1000 {
        x = integrate_zoh(&affine, &x, &u, &cfg).unwrap();
        drift = drift.max((models::pendulum_energy(&params, x.as_slice()) - e0).abs());
    }
    assert!(drift <= 1e-6, "energy drift {drift}");
    report("criterion 6: robotics identities", start, 10.0);
}

#[test]
fn criterion_07_empirical_invariance_pendulum() {
    let start = Instant::now();
    let sys = models::pendulum(&models::PendulumParams::default()).unwrap();
    let spec = models::pd_stabilizer(1, &[1.0], &[1.0]).unwrap();
    let policy = stabilizing_policy(&sys, &spec).unwrap();
    let zoh = ZohConfig::new(0.005, 5).unwrap();
    let mdp = make_robotic_mpop(
        &sys,
        |s: &[f64], a: &[f64]| -(s[0] * s[0] + s[1] * s[1] + 0.01 * a[0] * a[0]),
        0.9,
        &zoh,
        BoxRegion::symmetric(25.0, 1).unwrap(),
    )
    .unwrap();
    let n_box = BoxRegion::symmetric(0.3, 2).unwrap();
    let margin = 0.02;
    let closure = reachable_closure(&mdp, &policy, &n_box, 2000, 400, margin, 71).unwrap();
    let CompactSet::SampledClosure(sc) = &closure else {
        panic!("expected sampled closure")
    };

    // Re-rollouts from 500 stored closure points over 200 steps stay within
    // the closure inflated by two margins.
    let inflated = closure.inflated(2.0 * margin).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut checked = 0usize;
    for _ in 0..500 {
        let idx = rng.gen_range(0..sc.len());
        let mut state = sc.point(idx).to_vec();
        for step in 0..200 {
            let action = policy.act(&state).unwrap();
            state = mdp.transition(&state, &action);
            assert!(
                inflated.contains(&state),
                "re-rollout from point {idx} left closure+2*margin at step {step}: {state:?}"
            );
        }
        checked += 1;
    }
    assert_eq!(checked, 500);

    // Nonemptiness of the derived restriction at sampled members.
    let hull = build_action_hull(std::slice::from_ref(&policy), &closure, 1000, 73, 0.01).unwrap();
    let restricted = restrict(&mdp, closure.clone(), vec![policy.clone()], hull).unwrap();
    let report_ne = check_nonemptiness(&restricted, 500, 74).unwrap();
    assert!(
        report_ne.pass,
        "nonemptiness failures: {} of {} ({:?})",
        report_ne.failures, report_ne.checks, report_ne.first_failure
    );
    report("criterion 7: empirical invariance (pendulum closure)", start, 60.0);
}

#[test]
fn criterion_08_discounted_state_sampler() {
    let start = Instant::now();
    // Counter dynamics encode the sampled horizon in the endpoint state.
    let counter = |discount: f64| {
        MpopSpec::new(
            1,
            1,
            discount,
            |s: &[f64], _a: &[f64]| vec![s[0] + 1.0],
            |_s: &[f64], _a: &[f64]| 0.0,
            |_s: &[f64], _a: &[f64]| true,
        )
        .unwrap()
    };
    let policy = PolicyFn::new("zero", |_s| vec![0.0]);
    let draws = 100_000usize;
    for (discount, seed) in [(0.5, 81u64), (0.9, 82u64)] {
        let mdp = counter(discount);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = [0usize; 12]; // t = 0..=10 plus tail
        let mut sum = 0.0f64;
        for _ in 0..draws {
            let t = sample_discounted_state(&mdp, &policy, |_r| vec![0.0], discount, &mut rng)
                .unwrap()[0];
            sum += t;
            let bin = (t as usize).min(11);
            counts[bin] += 1;
        }
        let mean = sum / draws as f64;
        let expected_mean = discount / (1.0 - discount);
        assert!(
            (mean - expected_mean).abs() <= 0.02 * expected_mean,
            "discount {discount}: mean {mean} vs {expected_mean}"
        );
        let mut chi2 = 0.0f64;
        for (t, &observed) in counts.iter().enumerate() {
            let p = if t <= 10 {
                (1.0 - discount) * discount.powi(t as i32)
            } else {
                discount.powi(11)
            };
            let expected = draws as f64 * p;
            chi2 += (observed as f64 - expected).powi(2) / expected;
        }
        let p_value = 1.0 - ChiSquared::new(11.0).unwrap().cdf(chi2);
        assert!(
            p_value > 0.001,
            "discount {discount}: chi-squared {chi2} gives p = {p_value}"
        );
    }
    report("criterion 8: discounted-state sampler distribution", start, 10.0);
}

#[test]
fn criterion_09_policy_improvement_monotonicity() {
    let start = Instant::now();
    let mdp = running_example::restricted(0.9).unwrap().to_mpop();
    let axes = vec![linspace(-1.0, 1.0, 201)];
    let actions = candidates_1d(&linspace(-1.0, 1.0, 201));
    // The invariance policy clipped to the closed-form admissible interval.
    let base = PolicyFn::new("negate-clipped", |s: &[f64]| {
        let (lo, hi) = running_example::c0_interval(s[0].clamp(-1.0, 1.0)).unwrap();
        vec![(-s[0]).clamp(lo, hi)]
    });
    let eval_tol = 1e-10;
    let improved = policy_improve(&mdp, &base, &axes, &actions, eval_tol).unwrap();
    let (v_base, _) = evaluate_policy_on_grid(&mdp, &base, &axes, eval_tol, 1_000_000).unwrap();
    let (v_improved, _) =
        evaluate_policy_on_grid(&mdp, &improved, &axes, eval_tol, 1_000_000).unwrap();
    for (flat, (new, old)) in v_improved.values().iter().zip(v_base.values()).enumerate() {
        assert!(
            new >= &(old - 1e-6),
            "node {flat}: improved {new} < base {old} - 1e-6"
        );
    }
    report("criterion 9: one-step policy improvement monotonicity", start, 30.0);
}

fn run_twice_and_compare(config: &ExperimentConfig) {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let status_a = invariant_dp::run(config, Some(dir_a.path()), None).unwrap();
    let status_b = invariant_dp::run(config, Some(dir_b.path()), None).unwrap();
    assert_eq!(status_a, status_b);
    let mut names: Vec<String> = std::fs::read_dir(dir_a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b_path = dir_b.path().join(name);
        assert!(b_path.exists(), "{name} missing from second run");
        let b = std::fs::read(&b_path).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let start = Instant::now();
    let example = ExperimentConfig {
        schema: 1,
        kind: ExperimentKind::RunningExample,
        seed: 9001,
        out_dir: Path::new("unused").to_path_buf(),
        running_example: Some(RunningExampleConfig::default()),
        tabular: None,
        linear: None,
        pendulum: None,
        custom: None,
    };
    run_twice_and_compare(&example);

    let pendulum = ExperimentConfig {
        schema: 1,
        kind: ExperimentKind::Pendulum,
        seed: 9002,
        out_dir: Path::new("unused").to_path_buf(),
        running_example: None,
        tabular: None,
        linear: None,
        pendulum: Some(PendulumConfig {
            pipeline: PipelineConfig {
                closure_samples: 150,
                closure_steps: 800,
                invariance_samples: 80,
                invariance_steps: 120,
                nonemptiness_samples: 120,
                trajectory_count: 2,
                trajectory_steps: 200,
                rollout_checks: 4,
                ..PipelineConfig::default()
            },
            ..PendulumConfig::default()
        }),
        custom: None,
    };
    run_twice_and_compare(&pendulum);
    report("criterion 10: byte-identical reruns (example + pendulum)", start, 120.0);
}
