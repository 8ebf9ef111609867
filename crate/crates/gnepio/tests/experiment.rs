use std::time::Duration;

use gnepio::experiment::*;
use gnepio::formats;
use gnepio_core::equilibrium::SolverSettings;
use gnepio_core::game::{CostMode, CostParameterization};
use gnepio_core::inverse::ObservationSet;
use gnepio_core::network::Network;

fn shared_costs(net: &Network, players: usize) -> CostParameterization {
    let n = net.arc_count();
    let c = (0..n).map(|a| 1.0 + (a % 4) as f64).collect();
    let cb = (0..n).map(|a| 5.0 + (a % 7) as f64 * 2.0).collect();
    CostParameterization::shared(c, cb, players).unwrap()
}

/// Net outflow at `node` summed over players, straight from the arc list.
fn net_outflow(net: &Network, players: usize, x: &[f64], node: usize) -> f64 {
    let n = net.arc_count();
    let mut total = 0.0;
    for i in 0..players {
        for (a, arc) in net.arcs().iter().enumerate() {
            if arc.tail == node {
                total += x[i * n + a];
            }
            if arc.head == node {
                total -= x[i * n + a];
            }
        }
    }
    total
}

#[test]
fn small_grid_observes_every_pair() {
    let net = Network::grid(2).unwrap();
    let params = shared_costs(&net, 2);
    let batch = generate_observations(&net, &params, 2, &[2.0; 8], &SolverSettings::default()).unwrap();
    assert_eq!(batch.pairs.len(), 12);
    assert!(batch.all_converged());
    for (od, x) in batch.pairs.iter().zip(&batch.flows) {
        let x = x.as_ref().unwrap();
        assert!((net_outflow(&net, 2, x, od.origin) - 2.0).abs() < 1e-8);
        assert!((net_outflow(&net, 2, x, od.destination) + 2.0).abs() < 1e-8);
    }
    let obs = batch.observation_set(&net, 2, &[2.0; 8]).unwrap();
    assert_eq!(obs.len(), 12);
}

#[test]
fn sixteen_node_grid_has_240_pairs() {
    let net = Network::grid(4).unwrap();
    assert_eq!(net.arc_count(), 48);
    assert_eq!(net.od_pairs().len(), 240);
}

#[test]
fn half_capacity_binds_somewhere_on_the_small_grid() {
    let net = Network::grid(2).unwrap();
    for seed in 0..3 {
        let mut rng = trial_rng(seed, "tight", 0);
        let params = randomize_costs(&mut rng, CostMode::SharedAcrossPlayers, &CostIntervals::default(), 2, 8).unwrap();
        let batch = generate_observations(&net, &params, 2, &[1.0; 8], &SolverSettings::default()).unwrap();
        assert!(batch.all_converged());
        let tight = batch.flows.iter().flatten().any(|x| (0..8).any(|a| 1.0 - (x[a] + x[8 + a]) <= 1e-6));
        assert!(tight, "seed {seed}");
    }
}

#[test]
fn parallel_threads_give_the_same_batch() {
    let net = Network::grid(3).unwrap();
    let params = shared_costs(&net, 2);
    let settings = SolverSettings::default();
    let cap = vec![1.0; net.arc_count()];
    let pairs = net.od_pairs();
    let run = |threads| {
        ForwardBatch { network: &net, players: 2, capacity: &cap, settings: &settings, threads, deadline: None }
            .run(&params, &pairs)
            .unwrap()
    };
    assert_eq!(run(1), run(4));
}

fn parallel_arc_config(dir: &std::path::Path) -> ExperimentConfig {
    let net = Network::from_one_based_arcs("parallel", 2, &[(1, 2), (1, 2)]).unwrap();
    let path = dir.join("parallel.json");
    formats::write_network(&path, &net).unwrap();
    let mut config = ExperimentConfig::desk(CostMode::SharedAcrossPlayers, 9);
    config.networks = vec![NetworkSpec::File(path)];
    config.players = vec![1];
    config.alpha_rules = vec![AlphaRule::FullN];
    config.trials = 1;
    config
}

#[test]
fn trivial_network_trial_completes() {
    let dir = tempfile::tempdir().unwrap();
    for backend in [LpBackend::Highs, LpBackend::Simplex] {
        let mut config = parallel_arc_config(dir.path());
        config.lp_backend = backend;
        let groups = config.groups().unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].label, "parallel/1/1.0");
        let record = run_trial(&config, &groups[0], 0).unwrap();
        assert!(record.is_complete(), "{:?}", record.issues);
        assert!(record.io_objective.unwrap() <= 1e-6);
        assert!(record.flow_error.unwrap() <= 1e-6);
        assert!(record.c_gap.unwrap() >= 0.0 && record.c_base_gap.unwrap() >= 0.0);
        assert_eq!(record.observed.len(), 1);
    }
}

#[test]
fn trials_repeat_exactly() {
    let mut config = ExperimentConfig::desk(CostMode::PerPlayer, 42);
    config.networks = vec![NetworkSpec::Grid(2)];
    config.players = vec![2];
    config.alpha_rules = vec![AlphaRule::HalfN];
    let group = &config.groups().unwrap()[0];
    let a = run_trial(&config, group, 1).unwrap();
    config.threads = 1;
    let b = run_trial(&config, group, 1).unwrap();
    assert!(a.is_complete(), "{:?}", a.issues);
    assert_eq!(a.without_timings(), b.without_timings());
    assert_eq!(
        serde_json::to_string(&a.without_timings()).unwrap(),
        serde_json::to_string(&b.without_timings()).unwrap()
    );
    let c = run_trial(&config, group, 2).unwrap();
    assert_ne!(a.true_params, c.true_params);
}

#[test]
fn recovered_costs_give_feasible_flows() {
    let mut config = ExperimentConfig::desk(CostMode::SharedAcrossPlayers, 4);
    config.networks = vec![NetworkSpec::Grid(2)];
    config.players = vec![2];
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.groups.len(), 2);
    for group in &report.groups {
        let cfg = config.groups().unwrap().into_iter().find(|g| g.label == group.label).unwrap();
        for r in &group.records {
            assert!(r.is_complete(), "{:?}", r.issues);
            let params = r.recovered_params.clone().unwrap().into_params(std::path::Path::new("-")).unwrap();
            let batch =
                generate_observations(&cfg.network, &params, cfg.players, &cfg.capacity, &SolverSettings::default())
                    .unwrap();
            // ObservationSet::new checks conservation and capacity to 1e-6
            let flows: Vec<Vec<f64>> = batch.flows.into_iter().map(Option::unwrap).collect();
            ObservationSet::new(cfg.network.clone(), cfg.players, cfg.capacity.clone(), batch.pairs, flows).unwrap();
        }
    }
}

#[test]
fn exhausted_budget_marks_trials_incomplete() {
    let mut config = ExperimentConfig::desk(CostMode::SharedAcrossPlayers, 1);
    config.networks = vec![NetworkSpec::Grid(3)];
    config.players = vec![2];
    config.alpha_rules = vec![AlphaRule::FullN];
    config.trials = 2;
    config.time_budget = Duration::from_nanos(1);
    let report = run_experiment(&config).unwrap();
    let g = &report.groups[0];
    assert_eq!(g.records.len(), 2);
    assert_eq!(g.completed + g.incomplete, 2);
    assert_eq!(g.incomplete, 2);
    for r in &g.records {
        assert!(!r.is_complete());
        assert!(!r.issues.is_empty());
        assert!(r.observed.iter().any(|o| o.timed_out));
    }
    // no completed trials, so nothing to summarise
    assert!(report.summaries.is_empty());
}

#[test]
fn desk_configuration_has_36_records_per_mode() {
    for mode in [CostMode::SharedAcrossPlayers, CostMode::PerPlayer] {
        let config = ExperimentConfig::desk(mode, 0);
        assert_eq!(config.groups().unwrap().len() * config.trials, 36);
    }
    let mut config = ExperimentConfig::desk(CostMode::PerPlayer, 0);
    config.players.clear();
    assert!(matches!(run_experiment(&config), Err(ExperimentError::Config(_))));
}

#[test]
fn infeasible_capacity_aborts_the_batch() {
    let net = Network::grid(2).unwrap();
    let params = shared_costs(&net, 2);
    let err = generate_observations(&net, &params, 2, &[0.5; 8], &SolverSettings::default()).unwrap_err();
    assert!(matches!(err, ExperimentError::InfeasiblePair { .. }), "{err}");
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = parallel_arc_config(dir.path());
    config.trials = 3;
    config.output_dir = Some(dir.path().join("out"));
    let report = run_experiment(&config).unwrap();
    let path = dir.path().join("out").join("group_parallel_1_1.0.json");
    let back = read_group_report(&path).unwrap();
    assert_eq!(back, report.groups[0]);
    let summary = formats::read_summary(&dir.path().join("out").join("summary.csv")).unwrap();
    assert_eq!(summary, report.summaries);
    assert!(summary.iter().any(|r| r.metric == "flow_error" && r.group == "parallel/1/1.0"));
}

#[test]
fn unreachable_pairs_are_not_observed() {
    let net = Network::from_one_based_arcs("parallel", 2, &[(1, 2), (1, 2)]).unwrap();
    assert_eq!(routable_pairs(&net), vec![gnepio_core::network::OdPair::new(0, 1).unwrap()]);
    let grid = Network::grid(3).unwrap();
    assert_eq!(routable_pairs(&grid), grid.od_pairs());
}
