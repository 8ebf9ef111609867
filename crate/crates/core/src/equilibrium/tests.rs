use super::*;
use crate::game::{kkt_residuals, CostMode};
use crate::network::{Network, OdPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn parallel_arcs() -> Network {
    Network::from_one_based_arcs("parallel", 2, &[(1, 2), (1, 2)]).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, mode: CostMode, n: usize, players: usize) -> CostParameterization {
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..=hi)).collect() };
    match mode {
        CostMode::SharedAcrossPlayers => {
            let c = draw(1.0, 5.0);
            let cb = draw(5.0, 20.0);
            CostParameterization::shared(c, cb, players).unwrap()
        }
        CostMode::PerPlayer => {
            let c = (0..players).map(|_| draw(1.0, 5.0)).collect();
            let cb = (0..players).map(|_| draw(5.0, 20.0)).collect();
            CostParameterization::per_player(c, cb).unwrap()
        }
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "entry {k}: {x} vs {y}");
    }
}

#[test]
fn parallel_arcs_split_evenly() {
    let net = parallel_arcs();
    let inst = GameInstance::uniform(&net, 1, 2.0, OdPair::new(0, 1).unwrap()).unwrap();
    let params = CostParameterization::shared(vec![1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
    let sol = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
    assert_close(&sol.flows, &[0.5, 0.5], 1e-9);
    assert!(sol.kkt_residual <= 1e-8);
}

#[test]
fn expensive_parallel_arc_stays_empty() {
    let net = parallel_arcs();
    let inst = GameInstance::uniform(&net, 1, 2.0, OdPair::new(0, 1).unwrap()).unwrap();
    let params = CostParameterization::shared(vec![1.0, 1.0], vec![0.0, 2.0], 1).unwrap();
    let sol = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
    assert_close(&sol.flows, &[1.0, 0.0], 1e-9);
    // the costs tie exactly at x = (1, 0), so arc 2's multiplier is zero
    assert!(sol.u[1].abs() <= 1e-8);
}

#[test]
fn corner_paths_carry_equal_flow() {
    let net = Network::grid(2).unwrap();
    // symmetric costs: every arc identical
    let params = CostParameterization::shared(vec![2.0; 8], vec![7.0; 8], 2).unwrap();
    for od in [OdPair::new(0, 3).unwrap(), OdPair::new(1, 2).unwrap()] {
        let inst = GameInstance::uniform(&net, 2, 2.0, od).unwrap();
        let sol = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
        for i in 0..2 {
            let used: Vec<f64> = sol.flow(i).iter().copied().filter(|v| *v > 1e-6).collect();
            assert_eq!(used.len(), 4, "{:?}", sol.flow(i));
            assert_close(&used, &[0.5; 4], 1e-8);
        }
    }
}

#[test]
fn solutions_meet_tolerance_on_small_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for side in [2, 3] {
        let net = Network::grid(side).unwrap();
        for players in [1, 2, 5] {
            for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
                for scale in [0.5 * players as f64, players as f64] {
                    let params = random_params(&mut rng, mode, net.arc_count(), players);
                    for od in net.od_pairs().into_iter().step_by(side + 1) {
                        let inst = GameInstance::uniform(&net, players, scale, od).unwrap();
                        let sol = solve_equilibrium(&inst, &params, &SolverSettings::default())
                            .unwrap_or_else(|e| panic!("side {side} N {players} {od}: {e}"));
                        let report = kkt_residuals(&inst, &params, &sol).unwrap();
                        assert!(report.max() <= 1e-8, "{}", report.describe());
                        for (t, a) in sol.total_flow().iter().zip(&inst.capacity) {
                            assert!(*t <= a + 1e-8);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn newton_and_oracle_agree_on_2x2() {
    let net = Network::grid(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for scale in [1.0, 2.0] {
        let params = random_params(&mut rng, CostMode::SharedAcrossPlayers, 8, 2);
        for od in net.od_pairs().into_iter().filter(|o| o.origin == 14 && o.destination == 1) {
            let inst = GameInstance::uniform(&net, 2, scale, od).unwrap();
            let sol = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
            let oracle = solve_potential_oracle(&inst, &params, &OracleSettings::default()).unwrap();
            assert!(oracle.gap <= 1e-9);
            assert_close(&sol.flows, &oracle.flows, 1e-5);
        }
    }
}

#[test]
fn oracle_on_parallel_arcs() {
    let net = parallel_arcs();
    let inst = GameInstance::uniform(&net, 1, 2.0, OdPair::new(0, 1).unwrap()).unwrap();
    let params = CostParameterization::shared(vec![1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
    let oracle = solve_potential_oracle(&inst, &params, &OracleSettings::default()).unwrap();
    assert_close(&oracle.flows, &[0.5, 0.5], 1e-9);
    // single player: potential is xᵀCx + c̄ᵀx
    assert!((oracle.potential - 0.5).abs() < 1e-9);
}

#[test]
fn oracle_rejects_per_player_costs() {
    let net = parallel_arcs();
    let inst = GameInstance::uniform(&net, 2, 2.0, OdPair::new(0, 1).unwrap()).unwrap();
    let params =
        CostParameterization::per_player(vec![vec![1.0, 1.0], vec![2.0, 1.0]], vec![vec![0.0; 2]; 2]).unwrap();
    assert_eq!(
        solve_potential_oracle(&inst, &params, &OracleSettings::default()),
        Err(EquilibriumError::NotShared)
    );
}

#[test]
fn scaling_costs_leaves_flows_unchanged() {
    let net = Network::grid(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let params = random_params(&mut rng, mode, net.arc_count(), 2);
        for od in [OdPair::new(0, 8).unwrap(), OdPair::new(4, 1).unwrap()] {
            let inst = GameInstance::uniform(&net, 2, 1.0, od).unwrap();
            let base = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
            for theta in [0.5, 2.0, 10.0] {
                let scaled = solve_equilibrium(&inst, &params.scaled(theta), &SolverSettings::default()).unwrap();
                assert_close(&base.flows, &scaled.flows, 1e-6);
            }
        }
    }
}

fn certificate_is_valid(inst: &GameInstance<'_>, certificate: &[f64]) {
    let polytope = JointPolytope::new(inst);
    let lp = &polytope.lp;
    let by: f64 = lp.rhs().iter().zip(certificate).map(|(b, y)| b * y).sum();
    assert!(by > 1e-9);
    for j in 0..lp.num_variables() {
        let ay: f64 = lp.column(j).iter().map(|&(r, c)| c * certificate[r]).sum();
        assert!(ay <= 1e-9, "column {j}: {ay}");
    }
}

#[test]
fn feasibility_follows_the_origin_cut() {
    let net = Network::grid(2).unwrap();
    let od = OdPair::new(0, 3).unwrap();
    // two arcs leave the corner origin, so capacity 0.9 each cannot carry 2 units
    let tight = GameInstance::uniform(&net, 2, 0.9, od).unwrap();
    match feasibility_check(&tight).unwrap() {
        Feasibility::Infeasible { certificate, infeasibility } => {
            assert!((infeasibility - 0.2).abs() < 1e-9);
            certificate_is_valid(&tight, &certificate);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
    let params = CostParameterization::shared(vec![1.0; 8], vec![5.0; 8], 2).unwrap();
    assert!(matches!(
        solve_equilibrium(&tight, &params, &SolverSettings::default()),
        Err(EquilibriumError::Infeasible { .. })
    ));
    for scale in [1.0, 2.0] {
        let inst = GameInstance::uniform(&net, 2, scale, od).unwrap();
        assert!(feasibility_check(&inst).unwrap().is_feasible());
    }
    let huge = GameInstance::uniform(&net, 1, 1e6, od).unwrap();
    assert!(feasibility_check(&huge).unwrap().is_feasible());
}

#[test]
fn full_capacity_is_always_feasible() {
    for side in [2, 3, 4] {
        let net = Network::grid(side).unwrap();
        for players in [1, 3] {
            for od in net.od_pairs().into_iter().step_by(5) {
                let inst = GameInstance::uniform(&net, players, players as f64, od).unwrap();
                assert!(feasibility_check(&inst).unwrap().is_feasible());
            }
        }
    }
}

#[test]
fn every_start_point_converges_alone() {
    let net = Network::grid(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = random_params(&mut rng, CostMode::PerPlayer, net.arc_count(), 5);
    let inst = GameInstance::uniform(&net, 5, 2.5, OdPair::new(0, 15).unwrap()).unwrap();
    for start in StartPoint::ALL {
        let settings = SolverSettings {
            start_points: vec![start],
            ..SolverSettings::default()
        };
        let outcome = solve_equilibrium_detailed(&inst, &params, &settings).unwrap();
        assert_eq!(outcome.start, start);
        assert!(outcome.report.max() <= 1e-8);
    }
}

#[test]
fn multistart_agrees_when_unique() {
    let net = Network::grid(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let params = random_params(&mut rng, mode, net.arc_count(), 2);
        let inst = GameInstance::uniform(&net, 2, 2.0, OdPair::new(0, 8).unwrap()).unwrap();
        let report = multistart(&inst, &params, &SolverSettings::default()).unwrap();
        assert_eq!(report.runs.len(), 3);
        assert!(report.runs.iter().all(|r| r.converged));
        if report.uniqueness_expected {
            assert!(report.consistent(1e-6), "{}", report.max_flow_disagreement);
        }
    }
}

#[test]
fn multistart_records_indefinite_games() {
    let net = parallel_arcs();
    let factors = [1.0, 500.1, 600.7, 700.8];
    let params = CostParameterization::per_player(
        factors.iter().map(|f| vec![*f, *f]).collect(),
        factors.iter().map(|_| vec![1.0, 1.0]).collect(),
    )
    .unwrap();
    let inst = GameInstance::uniform(&net, 4, 4.0, OdPair::new(0, 1).unwrap()).unwrap();
    let report = multistart(&inst, &params, &SolverSettings::default()).unwrap();
    assert!(!report.uniqueness_expected);
    assert!(report.min_eig_symmetric_part < 0.0);
    // disagreement would be legal here, so the report is always consistent
    assert!(report.consistent(0.0));
}

#[test]
fn iteration_limit_returns_best_iterate() {
    let net = Network::grid(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let params = random_params(&mut rng, CostMode::PerPlayer, net.arc_count(), 2);
    let inst = GameInstance::uniform(&net, 2, 1.0, OdPair::new(0, 8).unwrap()).unwrap();
    let settings = SolverSettings {
        max_iterations: 1,
        tolerance: 1e-14,
        ..SolverSettings::default()
    };
    match solve_equilibrium(&inst, &params, &settings) {
        Err(EquilibriumError::DidNotConverge { best, report }) => {
            assert_eq!(best.kkt_residual, report.max());
            assert_eq!(best.flows.len(), 2 * net.arc_count());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn settings_are_validated() {
    let net = parallel_arcs();
    let inst = GameInstance::uniform(&net, 1, 2.0, OdPair::new(0, 1).unwrap()).unwrap();
    let params = CostParameterization::shared(vec![1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
    for settings in [
        SolverSettings::with_tolerance(0.0),
        SolverSettings {
            start_points: Vec::new(),
            ..SolverSettings::default()
        },
        SolverSettings {
            line_search_shrink: 1.0,
            ..SolverSettings::default()
        },
    ] {
        assert!(matches!(
            solve_equilibrium(&inst, &params, &settings),
            Err(EquilibriumError::InvalidSettings(_))
        ));
    }
    let wrong = CostParameterization::shared(vec![1.0, 1.0], vec![0.0, 0.0], 2).unwrap();
    assert!(matches!(
        solve_equilibrium(&inst, &wrong, &SolverSettings::default()),
        Err(EquilibriumError::Game(_))
    ));
}

#[test]
fn trace_has_a_line_per_iteration() {
    let net = Network::grid(2).unwrap();
    let params = CostParameterization::shared(vec![1.0; 8], vec![5.0; 8], 2).unwrap();
    let inst = GameInstance::uniform(&net, 2, 1.0, OdPair::new(0, 3).unwrap()).unwrap();
    let settings = SolverSettings {
        trace: true,
        ..SolverSettings::default()
    };
    let outcome = solve_equilibrium_detailed(&inst, &params, &settings).unwrap();
    assert_eq!(outcome.trace.len(), outcome.iterations + 1);
    assert!(outcome.trace[0].starts_with("start "));
    assert!(outcome.trace.iter().skip(1).all(|l| l.starts_with("iter ") && l.contains("kkt")));
}

#[test]
fn repeated_solves_are_identical() {
    let net = Network::grid(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let params = random_params(&mut rng, CostMode::PerPlayer, net.arc_count(), 3);
    let inst = GameInstance::uniform(&net, 3, 1.5, OdPair::new(1, 7).unwrap()).unwrap();
    let a = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
    let b = solve_equilibrium(&inst, &params, &SolverSettings::default()).unwrap();
    assert_eq!(a, b);
}
