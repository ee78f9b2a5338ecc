use nalgebra::{DMatrix, DVector};

use netvi::bellman::{NodalData, QFunction};
use netvi::consensus::QEnsemble;
use netvi::env::{EnvKind, Pendulum};
use netvi::graph::{Graph, Topology};
use netvi::harness::{
    closed_form_bytes, distance_to_fixed_point, evaluate, metrics_csv, run_centralized, run_centralized_in, run_distributed,
    run_distributed_in, Problem, RunConfig, RunOptions,
};
use netvi::features::RffMap;
use netvi::Error;

fn tiny() -> RunConfig {
    RunConfig {
        topology: Topology::Path(3),
        samples_per_node: 20,
        feature_dim: 4,
        vi_steps: 1,
        inner_steps: 1,
        cov_period: 1,
        episode_steps: 10,
        ..RunConfig::defaults(EnvKind::Pendulum)
    }
}

fn desk(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        vi_steps: 6,
        episode_steps: 20,
        ..RunConfig::desk_pendulum()
    }
}

#[test]
fn smoke_run_emits_one_record() {
    let m = run_distributed(&tiny(), RunOptions::default()).unwrap();
    assert_eq!(m.records.len(), 1);
    assert_eq!(m.records[0].k, 1);
    assert!(m.final_q.is_finite());
}

#[test]
fn zero_losses_fix_zero() {
    let cfg = tiny();
    let mut problem = Problem::build(Pendulum::new(cfg.action_points), &cfg).unwrap();
    problem.data = problem
        .data
        .iter()
        .map(|d| NodalData::new(d.phi().clone(), DVector::zeros(d.sample_count()), d.next_phi().to_vec()).unwrap())
        .collect();
    let report = run_centralized_in(&problem, &cfg).unwrap();
    assert!(report.q.coeffs().iter().all(|&c| c == 0.0));
}

#[test]
fn centralized_is_bitwise_deterministic() {
    let cfg = desk(3);
    let a = run_centralized(&cfg).unwrap();
    let b = run_centralized(&cfg).unwrap();
    assert_eq!(a.q, b.q);
    assert_eq!(a.residuals, b.residuals);
}

#[test]
fn desk_residuals_contract_over_ten_iterations() {
    for seed in 0..5 {
        let r = run_centralized(&desk(seed)).unwrap();
        assert!(r.iterations > 20);
        for i in 2..r.residuals.len() - 10 {
            assert!(r.residuals[i + 10] < 0.8 * r.residuals[i], "seed {seed}, iteration {}", i + 1);
        }
    }
}

// Greedy-action switches make single steps grow by up to ~5% on four of
// these five seeds.
#[test]
#[ignore = "fails at desk scale: isolated residual upticks"]
fn desk_residuals_strictly_decrease_after_third_iteration() {
    for seed in 0..5 {
        let r = run_centralized(&desk(seed)).unwrap();
        for (i, w) in r.residuals.windows(2).enumerate().skip(2) {
            assert!(w[1] < w[0], "seed {seed}, iteration {}: {} -> {}", i + 2, w[0], w[1]);
        }
    }
}

#[test]
fn distributed_is_bitwise_deterministic() {
    let cfg = desk(1);
    let opts = RunOptions {
        trace_rounds: true,
        track_fixed_point: true,
    };
    let a = run_distributed(&cfg, opts).unwrap();
    let b = run_distributed(&cfg, opts).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.rounds, b.rounds);
    assert_eq!(a.final_q, b.final_q);
    assert_eq!(metrics_csv(&a), metrics_csv(&b));
}

#[test]
fn bytes_match_closed_form_every_step() {
    for (m, jc) in [(50, 50), (10, 3), (7, 7), (5, 1)] {
        let cfg = RunConfig {
            inner_steps: m,
            cov_period: jc,
            feature_dim: 12,
            samples_per_node: 30,
            vi_steps: 4,
            episode_steps: 5,
            ..RunConfig::desk_pendulum()
        };
        let metrics = run_distributed(&cfg, RunOptions::default()).unwrap();
        let graph = Graph::build(&cfg.topology).unwrap();
        let c_per_step = m.div_ceil(jc) as u64;
        let mut last = 0;
        for r in &metrics.records {
            let k = r.k as u64;
            assert_eq!(r.cum_bytes, closed_form_bytes(&graph, 12, k * (m as u64 + 1), k * c_per_step));
            assert!(r.cum_bytes >= last);
            last = r.cum_bytes;
        }
        assert_eq!(metrics.total_bytes(), last);
    }
}

#[test]
fn trace_bytes_end_at_step_totals() {
    let cfg = RunConfig {
        inner_steps: 10,
        cov_period: 5,
        vi_steps: 3,
        feature_dim: 8,
        samples_per_node: 20,
        episode_steps: 5,
        ..RunConfig::desk_pendulum()
    };
    let metrics = run_distributed(&cfg, RunOptions { trace_rounds: true, track_fixed_point: false }).unwrap();
    assert_eq!(metrics.rounds.len(), 3 * 11);
    for r in &metrics.records {
        let last = metrics.rounds.iter().rfind(|x| x.k + 1 == r.k).unwrap();
        assert_eq!(last.m, 10);
        assert_eq!(last.cum_bytes, r.cum_bytes);
    }
    assert!(metrics.rounds.windows(2).all(|w| w[1].cum_bytes > w[0].cum_bytes));
}

#[test]
fn covariance_blocks_reach_network_sum() {
    let cfg = RunConfig {
        feature_dim: 20,
        samples_per_node: 40,
        inner_steps: 50,
        cov_period: 1,
        vi_steps: 10,
        episode_steps: 1,
        ..RunConfig::desk_pendulum()
    };
    let problem = Problem::build(Pendulum::new(cfg.action_points), &cfg).unwrap();
    let metrics = run_distributed_in(&problem, &cfg, RunOptions::default()).unwrap();
    let direct: DMatrix<f64> = problem.data.iter().map(|d| d.phi() * d.phi().transpose()).sum();
    for block in metrics.final_c.blocks() {
        assert!((block - &direct).norm() < 1e-5, "{}", (block - &direct).norm());
    }
}

#[test]
fn each_step_reaches_consensus() {
    let cfg = RunConfig {
        vi_steps: 5,
        episode_steps: 5,
        ..RunConfig::desk_pendulum()
    };
    let metrics = run_distributed(&cfg, RunOptions { trace_rounds: true, track_fixed_point: false }).unwrap();
    for k in 0..cfg.vi_steps {
        let at = |m: usize| metrics.rounds.iter().find(|r| r.k == k && r.m == m).unwrap().consensus_loss;
        assert!(at(50) <= 1e-3 * at(0), "k={k}: {} vs {}", at(50), at(0));
    }
}

#[test]
fn distance_examples() {
    let q = QFunction::new(DVector::from_vec(vec![1.0, -2.0, 0.5]));
    let same = QEnsemble::consensual(&q, 4).unwrap();
    assert_eq!(distance_to_fixed_point(&same, &q).unwrap(), 0.0);

    let doubled = QEnsemble::consensual(&QFunction::new(q.coeffs() * 2.0), 1).unwrap();
    assert!((distance_to_fixed_point(&doubled, &q).unwrap() - 1.0).abs() < 1e-15);

    let cols = DMatrix::from_row_slice(3, 2, &[0.3, 1.0, -1.0, 2.0, 0.0, 4.0]);
    let ens = QEnsemble::from_columns(cols.clone()).unwrap();
    let base = distance_to_fixed_point(&ens, &q).unwrap();
    for c in [-3.0, 0.1, 7.0] {
        let scaled = QEnsemble::from_columns(&cols * c).unwrap();
        let v = distance_to_fixed_point(&scaled, &QFunction::new(q.coeffs() * c)).unwrap();
        assert!((v - base).abs() < 1e-12 * base);
    }

    assert!(matches!(distance_to_fixed_point(&ens, &QFunction::zeros(3)), Err(Error::ZeroFixedPoint)));
}

#[test]
fn cartpole_in_bounds_episode_scores_minus_one() {
    let cfg = RunConfig {
        topology: Topology::Path(3),
        feature_dim: 8,
        episode_steps: 5,
        ..RunConfig::defaults(EnvKind::Cartpole)
    };
    let rff = RffMap::sample(EnvKind::Cartpole.input_dim(), 8, cfg.bandwidth, cfg.rff_seed()).unwrap();
    let ens = QEnsemble::zeros(8, 3).unwrap();
    let report = evaluate(&cfg, &ens, &rff).unwrap();
    assert_eq!(report.episodic_loss, -1.0);
    assert!(report.per_node.iter().all(|&v| v == -1.0));
}

#[test]
fn invalid_consensus_parameters_are_rejected() {
    let cfg = RunConfig {
        eta: Some(1.5),
        ..tiny()
    };
    let err = run_distributed(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.is_usage_error());
    let cfg = RunConfig {
        inner_steps: 5,
        cov_period: 6,
        ..tiny()
    };
    assert!(run_distributed(&cfg, RunOptions::default()).unwrap_err().is_usage_error());
}
