use approx::assert_relative_eq;
use dmech_core::analysis::{asymptotic_ic_sweep, deviation_experiment, ArmStatus, DEFAULT_DELTA1};
use dmech_core::dd::{default_step_size, dual_update, project_feasible};
use dmech_core::oracle::solve_social_optimum;
use dmech_core::protocol::{ReportPayload, RunConfig};
use dmech_core::scenario::{bundled, bundled_names, Scenario};
use dmech_core::{Error, MechanismKind, StrategyKind};
use nalgebra::DVector;

fn with_cap(name: &str, cap: usize) -> Scenario {
    let mut s = bundled(name).unwrap();
    s.set_round_cap(cap);
    s
}

#[test]
fn honest_follower_matches_monolithic_iteration() {
    let s = bundled("resource3").unwrap();
    let problem = s.problem().unwrap();
    let gamma = default_step_size(&problem);
    let run = s.run(&s.honest_profile(), 1000).unwrap();

    let coupling = problem.coupling();
    let mut p = DVector::zeros(coupling.rows());
    let mut x_hat = problem.unconstrained_minimizers();
    for round in &run.transcript.rounds[1..] {
        let proposals: Vec<f64> = round
            .reports
            .iter()
            .flat_map(|r| match &r.payload {
                ReportPayload::Dual { x_hat, .. } => x_hat.clone(),
                other => panic!("unexpected report {other:?}"),
            })
            .collect();
        for (a, b) in proposals.iter().zip(x_hat.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12, max_relative = 1e-12);
        }
        p = dual_update(&p, &x_hat, coupling, gamma);
        x_hat = DVector::from_iterator(
            coupling.dim(),
            (0..problem.agents()).flat_map(|i| {
                let q = coupling.r_block(i).transpose() * &p;
                problem.cost(i).argmin_augmented(&q).unwrap().iter().copied().collect::<Vec<_>>()
            }),
        );
    }
    let x_final = project_feasible(&x_hat, coupling);
    let oracle = solve_social_optimum(&problem).unwrap();
    assert!((x_final - oracle.x_vector()).amax() < 0.1);
}

#[test]
fn groves_sweep_passes_for_stackelberg() {
    let s = bundled("example1").unwrap();
    let report = asymptotic_ic_sweep(&s, 0, &StrategyKind::Stackelberg, &[10, 100, 1000], DEFAULT_DELTA1).unwrap();
    assert!(report.pass, "{report:#?}");
    for row in &report.rows {
        assert!(row.gain.unwrap() <= row.bound + 1e-9);
        assert_eq!(row.status, ArmStatus::Terminated);
    }
}

#[test]
fn price_tax_sweep_fails_with_persistent_gain() {
    let s = bundled("example1-price").unwrap();
    let report = asymptotic_ic_sweep(&s, 0, &StrategyKind::Stackelberg, &[10, 100, 1000], DEFAULT_DELTA1).unwrap();
    assert!(!report.pass);
    let last = report.rows.last().unwrap();
    assert_relative_eq!(last.gain.unwrap(), 1.0 / 24.0, epsilon = 1e-3);
    assert!(last.gain.unwrap() > last.bound);
}

#[test]
fn honest_distance_shrinks_on_bundled_scenarios() {
    for name in bundled_names() {
        let s = bundled(name).unwrap();
        if s.mechanism() == MechanismKind::Direct {
            continue;
        }
        let target = s.target().unwrap();
        let dist: Vec<f64> = [100, 1000, 10_000]
            .iter()
            .map(|&n| s.run(&s.honest_profile(), n).unwrap().choice.distance(&target))
            .collect();
        assert!(dist[2] <= dist[1] + 1e-12 && dist[1] <= dist[0] + 1e-12, "{name}: {dist:?}");
        // The paper's scenarios close their gap quickly; a generic one only
        // shrinks like the square root of the gap (see below).
        if name != "resource3" {
            assert!(dist[2] < 1e-3, "{name}: {dist:?}");
        }
    }
}

#[test]
fn constant_proposal_still_terminates_in_dual_decomposition() {
    // The projection absorbs a stuck proposal: the others settle on the rest.
    let s = with_cap("example1", 100_000);
    let r = deviation_experiment(&s, 0, &StrategyKind::Constant { value: vec![0.0] }, 1000).unwrap();
    assert_eq!(r.status, ArmStatus::Terminated);
    let x = r.deviant.clone().unwrap().x;
    assert_relative_eq!(x[0], 0.0, epsilon = 1e-2);
    assert_relative_eq!(x[1], 1.0, epsilon = 1e-2);
    assert!(r.gain().unwrap() <= 1e-3 + 1e-9);
}

#[test]
fn stubborn_agent_drags_linear_consensus_along() {
    let s = with_cap("path3-consensus", 100_000);
    let r = deviation_experiment(&s, 0, &StrategyKind::Constant { value: vec![5.0] }, 100).unwrap();
    assert_eq!(r.status, ArmStatus::Terminated);
    for x in r.deviant.unwrap().x {
        assert!((x - 5.0).abs() < 0.1);
    }
}

#[test]
fn frozen_edge_dual_never_terminates() {
    let s = with_cap("path3-dual", 5_000);
    let profile = s.deviant_profile(0, StrategyKind::Constant { value: vec![0.0] }).unwrap();
    match s.run(&profile, 100) {
        Err(Error::NonConvergence { rounds, transcript }) => {
            assert_eq!(rounds, 5_000);
            assert_eq!(transcript.len(), 5_001);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
    let r = deviation_experiment(&s, 0, &StrategyKind::Constant { value: vec![0.0] }, 100).unwrap();
    assert_eq!(r.status, ArmStatus::DeviantNonTerminating);
    assert!(r.gain().is_none());
}

#[test]
fn non_terminating_deviant_is_flagged_not_failed() {
    let s = with_cap("path3-dual", 2_000);
    let dev = StrategyKind::Constant { value: vec![0.0] };
    let report = asymptotic_ic_sweep(&s, 0, &dev, &[10, 100, 1000], DEFAULT_DELTA1).unwrap();
    assert!(report.rows.iter().all(|r| r.status == ArmStatus::DeviantNonTerminating));
    assert!(report.pass);
}

#[test]
fn consensus_misreports_respect_the_gain_bound() {
    for name in ["path3-consensus", "path3-dual", "star4-consensus"] {
        let s = bundled(name).unwrap();
        for agent in 0..s.agents() {
            for fake in [-3.0, 0.5, 4.0] {
                let dev = StrategyKind::Misreport { theta: vec![fake] };
                let r = deviation_experiment(&s, agent, &dev, 1000).unwrap();
                let g = r.gain().unwrap();
                assert!(g <= 1e-2, "{name} agent {agent} fake {fake}: gain {g}");
            }
        }
    }
}

#[test]
fn multi_dimensional_scenario_matches_oracle() {
    let s = bundled("resource3").unwrap();
    let problem = s.problem().unwrap();
    let oracle = solve_social_optimum(&problem).unwrap();
    for n in [100, 10_000, 1_000_000] {
        let run = s.run(&s.honest_profile(), n).unwrap();
        let x = run.choice.x_vector();
        assert!(problem.coupling().residual(&x) < 1e-9);
        let gap = problem.social_cost(&x).unwrap() - oracle.value;
        assert!(gap <= 1.0 / n as f64);
        let bound = (2.0 * gap / problem.min_curvature()).sqrt();
        assert!((&x - oracle.x_vector()).norm() <= bound + 1e-12);
    }
    let run = s.run(&s.honest_profile(), 1_000_000).unwrap();
    assert!(run.choice.distance(&s.target().unwrap()) < 1e-3);
}

#[test]
fn round_cap_applies_to_scenarios() {
    let s = with_cap("path3-consensus", 3);
    assert!(matches!(s.run(&s.honest_profile(), 1_000_000), Err(Error::NonConvergence { .. })));
    let cfg = RunConfig {
        round_cap: 3,
        ..RunConfig::default()
    };
    assert_eq!(s.run_config(), cfg);
}
