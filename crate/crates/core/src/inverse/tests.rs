use super::*;
use crate::equilibrium::{solve_equilibrium, SolverSettings};
use crate::game::GameInstance;
use crate::lp::SimplexSolver;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn parallel_arcs() -> Network {
    Network::from_one_based_arcs("parallel", 2, &[(1, 2), (1, 2)]).unwrap()
}

fn draw_params(rng: &mut ChaCha8Rng, mode: CostMode, n: usize, players: usize) -> CostParameterization {
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
    match mode {
        CostMode::SharedAcrossPlayers => {
            let (c, cb) = (draw(1.0, 5.0), draw(5.0, 20.0));
            CostParameterization::shared(c, cb, players).unwrap()
        }
        CostMode::PerPlayer => {
            let c = (0..players).map(|_| draw(1.0, 5.0)).collect();
            let cb = (0..players).map(|_| draw(5.0, 20.0)).collect();
            CostParameterization::per_player(c, cb).unwrap()
        }
    }
}

/// Equilibrium observations for every OD pair of `net`.
fn observe(net: &Network, players: usize, scale: f64, params: &CostParameterization) -> ObservationSet {
    let pairs = net.od_pairs();
    let flows = pairs
        .iter()
        .map(|od| {
            let inst = GameInstance::uniform(net, players, scale, *od).unwrap();
            solve_equilibrium(&inst, params, &SolverSettings::default()).unwrap().flows
        })
        .collect();
    ObservationSet::new(net.clone(), players, vec![scale; net.arc_count()], pairs, flows).unwrap()
}

fn desk_bounds(n: usize) -> ParameterBounds {
    ParameterBounds::uniform(n, (1.0, 5.0), (5.0, 20.0)).unwrap()
}

fn single_parallel_observation(x: [f64; 2], capacity: f64) -> ObservationSet {
    ObservationSet::new(
        parallel_arcs(),
        1,
        vec![capacity; 2],
        vec![OdPair::new(0, 1).unwrap()],
        vec![x.to_vec()],
    )
    .unwrap()
}

#[test]
fn smallest_program_has_eighteen_variables() {
    let obs = single_parallel_observation([0.5, 0.5], 2.0);
    let (lp, index) = build_residual_program(&obs, &desk_bounds(2), CostMode::SharedAcrossPlayers).unwrap();
    let count = actual_variable_count(&index);
    assert_eq!(
        count,
        VariableCount {
            c_int: 2,
            c_base: 2,
            v: 2,
            u: 2,
            ubar: 2,
            stationarity_split: 4,
            complementarity_flow_split: 2,
            complementarity_capacity_split: 2,
        }
    );
    assert_eq!(count.total(), 18);
    assert_eq!(lp.num_variables(), 18);
}

#[test]
fn per_observation_families_scale_with_observations() {
    let net = Network::grid(2).unwrap();
    let params = CostParameterization::shared(vec![2.0; 8], vec![10.0; 8], 2).unwrap();
    let obs = observe(&net, 2, 2.0, &params);
    let doubled = ObservationSet::new(
        net.clone(),
        2,
        vec![2.0; 8],
        obs.pairs().iter().chain(obs.pairs()).copied().collect(),
        (0..2 * obs.len()).map(|k| obs.flows(k % obs.len()).to_vec()).collect(),
    )
    .unwrap();
    let bounds = desk_bounds(8);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let (lp1, i1) = build_residual_program(&obs, &bounds, mode).unwrap();
        let (lp2, i2) = build_residual_program(&doubled, &bounds, mode).unwrap();
        let (c1, c2) = (actual_variable_count(&i1), actual_variable_count(&i2));
        assert_eq!(c1.total(), lp1.num_variables());
        assert_eq!(c2.total(), lp2.num_variables());
        assert_eq!((c2.c_int, c2.c_base), (c1.c_int, c1.c_base));
        for (a, b) in [
            (c1.v, c2.v),
            (c1.u, c2.u),
            (c1.ubar, c2.ubar),
            (c1.stationarity_split, c2.stationarity_split),
            (c1.complementarity_flow_split, c2.complementarity_flow_split),
            (c1.complementarity_capacity_split, c2.complementarity_capacity_split),
        ] {
            assert_eq!(2 * a, b);
        }
    }
    let shared = actual_variable_count(&build_residual_program(&obs, &bounds, CostMode::SharedAcrossPlayers).unwrap().1);
    let per = actual_variable_count(&build_residual_program(&obs, &bounds, CostMode::PerPlayer).unwrap().1);
    assert_eq!((shared.c_int, shared.c_base), (8, 8));
    assert_eq!((per.c_int, per.c_base), (16, 16));
    assert_eq!(shared.total() + 16, per.total());
}

#[test]
fn one_capacity_multiplier_per_observation() {
    let net = Network::grid(2).unwrap();
    let params = CostParameterization::shared(vec![2.0; 8], vec![10.0; 8], 3).unwrap();
    let obs = observe(&net, 3, 1.5, &params);
    let (_, index) = build_residual_program(&obs, &desk_bounds(8), CostMode::PerPlayer).unwrap();
    assert_eq!(index.ubar.len(), obs.len());
    assert!(index.ubar.iter().all(|r| r.len() == 8));
    assert_eq!(index.v.len(), 3 * obs.len());
}

#[test]
fn stationarity_rows_are_the_direct_expression() {
    let net = Network::grid(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = draw_params(&mut rng, CostMode::PerPlayer, 8, 2);
    let obs = observe(&net, 2, 1.0, &params);
    let (n, m, players) = (8, 4, 2);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let (lp, index) = build_residual_program(&obs, &desk_bounds(n), mode).unwrap();
        for _ in 0..20 {
            let mut z: Vec<f64> = (0..lp.num_variables()).map(|_| rng.random_range(-3.0..3.0)).collect();
            // with the split variables at zero the row activity is the expression itself
            for g in index.stationarity.iter() {
                z[g.plus.clone()].iter_mut().for_each(|v| *v = 0.0);
                z[g.minus.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
            let activity = lp.row_activity(&z);
            for (k, group) in index.stationarity.iter().enumerate() {
                let x = obs.flows(k);
                for i in 0..players {
                    let row = if mode == CostMode::PerPlayer { i } else { 0 };
                    let c = &z[index.c_int[row].clone()];
                    let cb = &z[index.c_base[row].clone()];
                    let v = &z[index.v[k * players + i].clone()];
                    let u = &z[index.u[k * players + i].clone()];
                    let ubar = &z[index.ubar[k].clone()];
                    assert_eq!(v.len(), m);
                    for (a, arc) in net.arcs().iter().enumerate() {
                        let others: f64 = (0..players).filter(|&j| j != i).map(|j| x[j * n + a]).sum();
                        let direct = c[a] * (2.0 * x[i * n + a] + others) + cb[a] + v[arc.head] - v[arc.tail]
                            - u[a]
                            + ubar[a];
                        let r = group.rows.start + i * n + a;
                        assert!((activity[r] - direct).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn zero_flows_drop_out_of_flow_complementarity() {
    let obs = single_parallel_observation([1.0, 0.0], 2.0);
    let (lp, index) = build_residual_program(&obs, &desk_bounds(2), CostMode::SharedAcrossPlayers).unwrap();
    let u = index.u[0].clone();
    let row = index.complementarity_flow[0].rows.start;
    assert!(lp.column(u.start).iter().any(|&(r, c)| r == row && c == 1.0));
    assert!(lp.column(u.start + 1).iter().all(|&(r, _)| r != row));
}

#[test]
fn tight_capacity_removes_capacity_complementarity() {
    let obs = single_parallel_observation([0.5, 0.5], 0.5);
    let (lp, index) = build_residual_program(&obs, &desk_bounds(2), CostMode::SharedAcrossPlayers).unwrap();
    let row = index.complementarity_capacity[0].rows.start;
    for var in index.ubar[0].clone() {
        assert!(lp.column(var).iter().all(|&(r, _)| r != row));
    }
}

#[test]
fn exact_observations_give_tiny_objective() {
    let net = Network::grid(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        for scale in [1.0, 2.0] {
            let params = draw_params(&mut rng, mode, 8, 2);
            let obs = observe(&net, 2, scale, &params);
            let bounds = desk_bounds(8);
            assert!(bounds.contains(&params));
            let rec = recover_parameters(&obs, &bounds, mode, &SimplexSolver::default()).unwrap();
            let (lp, _) = build_residual_program(&obs, &bounds, mode).unwrap();
            let limit = 10.0 * 1e-8 * lp.num_rows() as f64;
            assert!(rec.io_objective <= limit, "{mode:?} α={scale}: {}", rec.io_objective);
            assert!(rec.io_objective <= 1e-5);
            assert!(!rec.negative_objective);
            assert!(bounds.contains(&rec.params));
            assert!(rec.u.iter().flatten().chain(rec.ubar.iter().flatten()).all(|v| *v >= 0.0));
            let sum = rec.stationarity + rec.complementarity_flow + rec.complementarity_capacity;
            assert!((sum - rec.io_objective).abs() < 1e-9);
        }
    }
}

#[test]
fn objective_ignores_observation_order() {
    let net = Network::grid(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = draw_params(&mut rng, CostMode::PerPlayer, 8, 2);
    let obs = observe(&net, 2, 1.0, &params);
    // bounds that exclude the true costs, so the optimum is not simply zero
    let bounds = ParameterBounds::uniform(8, (4.9, 5.0), (5.0, 5.1)).unwrap();
    let base = recover_parameters(&obs, &bounds, CostMode::PerPlayer, &SimplexSolver::default()).unwrap();
    assert!(base.io_objective > 1e-6);
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for shift in [1, 5] {
        order.rotate_left(shift);
        order.swap(0, 3);
        let again = recover_parameters(&obs.permuted(&order), &bounds, CostMode::PerPlayer, &SimplexSolver::default())
            .unwrap();
        assert!((again.io_objective - base.io_objective).abs() <= 1e-9);
    }
}

#[test]
fn recovered_costs_reproduce_an_interior_flow() {
    let net = parallel_arcs();
    let od = OdPair::new(0, 1).unwrap();
    let truth = CostParameterization::shared(vec![2.0, 3.0], vec![8.0, 7.5], 1).unwrap();
    let inst = GameInstance::uniform(&net, 1, 2.0, od).unwrap();
    let observed = solve_equilibrium(&inst, &truth, &SolverSettings::default()).unwrap().flows;
    assert!(observed.iter().all(|&v| v > 0.1));
    let obs = ObservationSet::new(net.clone(), 1, vec![2.0; 2], vec![od], vec![observed.clone()]).unwrap();
    let rec = recover_parameters(&obs, &desk_bounds(2), CostMode::SharedAcrossPlayers, &SimplexSolver::default())
        .unwrap();
    assert!(rec.io_objective <= 1e-9);
    let again = solve_equilibrium(&inst, &rec.params, &SolverSettings::default()).unwrap().flows;
    for (a, b) in again.iter().zip(&observed) {
        assert!((a - b).abs() <= 1e-8);
    }
}

#[test]
fn infeasible_or_empty_observations_are_rejected() {
    let net = parallel_arcs();
    let od = OdPair::new(0, 1).unwrap();
    let make = |x: Vec<f64>, cap: f64| ObservationSet::new(net.clone(), 1, vec![cap; 2], vec![od], vec![x]);
    assert!(matches!(make(vec![0.5, 0.4], 2.0), Err(InverseError::InvalidObservation { index: 0, .. })));
    assert!(matches!(make(vec![1.5, -0.5], 2.0), Err(InverseError::InvalidObservation { .. })));
    assert!(matches!(make(vec![1.0, 0.0], 0.5), Err(InverseError::InvalidObservation { .. })));
    assert!(matches!(make(vec![1.0], 2.0), Err(InverseError::InvalidObservation { .. })));
    assert!(make(vec![1.0 + 1e-7, 0.0], 1.0).is_ok());
    assert_eq!(
        ObservationSet::new(net.clone(), 1, vec![1.0; 2], vec![], vec![]),
        Err(InverseError::Empty)
    );
}

#[test]
fn bounds_are_validated() {
    assert!(ParameterBounds::uniform(3, (1.0, 5.0), (5.0, 20.0)).is_ok());
    assert!(ParameterBounds::uniform(3, (0.0, 5.0), (5.0, 20.0)).is_err());
    assert!(ParameterBounds::uniform(3, (2.0, 1.0), (5.0, 20.0)).is_err());
    assert!(ParameterBounds::uniform(3, (1.0, 5.0), (5.0, f64::INFINITY)).is_err());
    assert!(ParameterBounds::new(vec![1.0], vec![2.0, 3.0], vec![1.0], vec![2.0]).is_err());
    let obs = single_parallel_observation([0.5, 0.5], 2.0);
    assert!(matches!(
        build_residual_program(&obs, &desk_bounds(3), CostMode::PerPlayer),
        Err(InverseError::InvalidBounds(_))
    ));
}

#[test]
fn grid_count_examples() {
    let shared = CostMode::SharedAcrossPlayers;
    assert_eq!(predicted_variable_count(16, 10, 0, shared, GraphKind::Grid).unwrap(), 430_080);
    assert_eq!(predicted_variable_count(4, 2, 0, shared, GraphKind::Grid).unwrap(), 1_056);
    assert_eq!(
        predicted_variable_count(10, 2, 0, shared, GraphKind::Grid),
        Err(InverseError::NotSquare(10))
    );
}

/// The closed forms in factored shape: every one is `(m² − m)` times a
/// per-pair term.
fn factored(m: i128, n: i128, a: i128, mode: CostMode, kind: GraphKind) -> i128 {
    let pairs = m * m - m;
    let s = (1..=m).find(|s| s * s == m).unwrap_or(0);
    pairs
        * match (kind, mode) {
            (GraphKind::Grid, CostMode::SharedAcrossPlayers) => n * (13 * m - 12 * s) + 16 * (m - s),
            (GraphKind::Grid, CostMode::PerPlayer) => n * (21 * m - 20 * s) + 8 * (m - s),
            (GraphKind::General, CostMode::SharedAcrossPlayers) => 3 * a * n + m * n + 4 * a,
            (GraphKind::General, CostMode::PerPlayer) => 5 * a * n + m * n + 2 * a,
        }
}

#[test]
fn closed_forms_on_the_reference_table() {
    for m in [4u64, 9, 16, 25] {
        for n in [2u64, 5, 10] {
            let side = (m as f64).sqrt() as u64;
            let arcs = 4 * (side - 1) * side;
            for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
                for kind in [GraphKind::Grid, GraphKind::General] {
                    let got = predicted_variable_count(m, n, arcs, mode, kind).unwrap();
                    assert_eq!(got, factored(m as i128, n as i128, arcs as i128, mode, kind));
                }
            }
        }
    }
}

#[test]
fn grid_counts_grow_cubically() {
    // m = 10⁸ against the nearest square to 2m
    let (small, large) = (10_000u64, 14_142u64);
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let count = |side: u64| predicted_variable_count(side * side, 5, 0, mode, GraphKind::Grid).unwrap() as f64;
        let ratio = count(large) / count(small);
        assert!((ratio - 8.0).abs() < 1e-2, "{ratio}");
    }
}

proptest! {
    #[test]
    fn grid_is_general_with_grid_arcs(side in 2u64..200, n in 1u64..50) {
        let m = side * side;
        let arcs = 4 * m - 4 * side;
        for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
            prop_assert_eq!(
                predicted_variable_count(m, n, 0, mode, GraphKind::Grid).unwrap(),
                predicted_variable_count(m, n, arcs, mode, GraphKind::General).unwrap()
            );
        }
    }
}
