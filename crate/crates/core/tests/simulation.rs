//! End-to-end simulator checks against a deliberately naive reference
//! implementation, plus ledger and synchronization properties.

use adaalter::cluster::{
    read_records, run, synchronize, Algorithm, CommLedger, SimOptions, SyncSchedule, Trace,
    WorkerState,
};
use adaalter::config::RunConfig;
use adaalter::experiment::compare_baselines;
use adaalter::math::ParamVector;
use adaalter::optimizers::AccumulatorState;
use adaalter::problems::{worker_rng, Problem, ProblemKind, ProblemSpec};

/// Straight-line simulator: plain nested vectors, no shared code with the
/// library except the problem's gradient oracle (so both consume the same
/// random draws). Returns the loss of the averaged model before each step
/// and the final averaged model.
#[allow(clippy::too_many_arguments)]
fn reference(
    problem: &Problem,
    algo: Algorithm,
    n: usize,
    iterations: u64,
    period: Option<u64>,
    eta: f64,
    b0sq: f64,
    epssq: f64,
    seed: u64,
    x0: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = x0.len();
    let mut x: Vec<Vec<f64>> = vec![x0.to_vec(); n];
    let mut acc: Vec<Vec<f64>> = vec![vec![b0sq; d]; n];
    let mut snap: Vec<Vec<f64>> = vec![vec![b0sq; d]; n];
    let mean_of = |vs: &Vec<Vec<f64>>| -> Vec<f64> {
        let mut m = vec![0.0; d];
        for v in vs {
            for j in 0..d {
                m[j] += v[j];
            }
        }
        m.iter().map(|s| s / n as f64).collect()
    };
    let mut losses = Vec::new();
    for t in 1..=iterations {
        let xbar = mean_of(&x);
        losses.push(problem.loss(&ParamVector::new(xbar)).unwrap());
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = worker_rng(seed, i, t);
                problem
                    .stochastic_gradient(&ParamVector::new(x[i].clone()), i, &mut rng)
                    .unwrap()
                    .into_inner()
            })
            .collect();
        match algo {
            Algorithm::Sgd | Algorithm::Adagrad => {
                let g = mean_of(&grads);
                for i in 0..n {
                    for j in 0..d {
                        if algo == Algorithm::Adagrad {
                            acc[i][j] += g[j] * g[j];
                            x[i][j] -= eta * g[j] / (acc[i][j] + epssq).sqrt();
                        } else {
                            x[i][j] -= eta * g[j];
                        }
                    }
                }
            }
            Algorithm::LocalSgd | Algorithm::LocalAdaalter => {
                let since = match period {
                    Some(h) => (t - 1) % h + 1,
                    None => t,
                };
                for i in 0..n {
                    for j in 0..d {
                        let g = grads[i][j];
                        if algo == Algorithm::LocalAdaalter {
                            x[i][j] -= eta * g / (snap[i][j] + since as f64 * epssq).sqrt();
                            acc[i][j] += g * g;
                        } else {
                            x[i][j] -= eta * g;
                        }
                    }
                }
                if period.is_some_and(|h| t % h == 0) {
                    let xm = mean_of(&x);
                    let am = mean_of(&acc);
                    for i in 0..n {
                        x[i] = xm.clone();
                        acc[i] = am.clone();
                        snap[i] = am.clone();
                    }
                }
            }
        }
    }
    (losses, mean_of(&x))
}

fn opts(algo: Algorithm, n: usize, t: u64, schedule: SyncSchedule, x0: ParamVector) -> SimOptions {
    SimOptions {
        algo,
        workers: n,
        iterations: t,
        schedule,
        eta: 0.3,
        warm_up_steps: 0,
        b0sq: algo.default_b0sq(),
        epssq: 1.0,
        seed: 21,
        x0,
        threads: 1,
    }
}

fn quadratic(d: usize, n: usize, kind: ProblemKind) -> Problem {
    ProblemSpec {
        kind,
        dim: d,
        workers: n,
        l_max: 2.0,
        l_min: 0.5,
        beta: 0.5,
        noise: 0.3,
        hetero: 1.0,
        alpha: 0.7,
        samples: 0,
        batch: 0,
        l2: 0.0,
        separation: 0.0,
        clip: Some(2.0),
        seed: 5,
    }
    .build()
    .unwrap()
}

fn check_against_reference(problem: &Problem, o: &SimOptions, tol: f64) -> Trace {
    let trace = run(problem, o).unwrap();
    let (losses, xbar) = reference(
        problem,
        o.algo,
        o.workers,
        o.iterations,
        o.schedule.local_period(),
        o.eta,
        o.b0sq,
        o.epssq,
        o.seed,
        o.x0.as_slice(),
    );
    assert_eq!(trace.records.len(), losses.len());
    for (r, l) in trace.records.iter().zip(&losses) {
        assert!((r.loss - l).abs() <= tol, "{} t={}: {} vs {l}", o.algo, r.t, r.loss);
    }
    let final_ref = problem.loss(&ParamVector::new(xbar.clone())).unwrap();
    assert!((trace.final_loss - final_ref).abs() <= tol, "{}: final {} vs {final_ref}", o.algo, trace.final_loss);
    for (a, b) in trace.final_model.iter().zip(&xbar) {
        assert!((a - b).abs() <= tol);
    }
    trace
}

#[test]
fn every_algorithm_matches_the_reference_simulator() {
    let problem = quadratic(2, 2, ProblemKind::Quadratic);
    let x0 = ParamVector::new(vec![1.5, -2.0]);
    for (algo, schedule) in [
        (Algorithm::LocalAdaalter, SyncSchedule::periodic(4).unwrap()),
        (Algorithm::LocalAdaalter, SyncSchedule::periodic(3).unwrap()),
        (Algorithm::LocalAdaalter, SyncSchedule::never()),
        (Algorithm::LocalSgd, SyncSchedule::periodic(5).unwrap()),
        (Algorithm::Adagrad, SyncSchedule::every_step()),
        (Algorithm::Sgd, SyncSchedule::every_step()),
    ] {
        check_against_reference(&problem, &opts(algo, 2, 400, schedule, x0.clone()), 1e-10);
    }
}

#[test]
fn reference_agreement_on_the_perturbed_quadratic() {
    let problem = quadratic(5, 3, ProblemKind::SinQuadratic);
    let x0 = ParamVector::filled(5, 1.0);
    check_against_reference(
        &problem,
        &opts(Algorithm::LocalAdaalter, 3, 300, SyncSchedule::periodic(4).unwrap(), x0),
        1e-10,
    );
}

#[test]
fn period_one_is_synchronous_lazy_adagrad() {
    let problem = quadratic(3, 4, ProblemKind::Quadratic);
    let x0 = ParamVector::new(vec![0.5, -1.0, 2.0]);
    check_against_reference(
        &problem,
        &opts(Algorithm::LocalAdaalter, 4, 500, SyncSchedule::every_step(), x0),
        1e-12,
    );
}

#[test]
fn single_worker_runs_ignore_the_period_for_local_sgd() {
    let problem = quadratic(3, 1, ProblemKind::Quadratic);
    let x0 = ParamVector::filled(3, 1.0);
    let sgd = run(&problem, &opts(Algorithm::Sgd, 1, 300, SyncSchedule::every_step(), x0.clone())).unwrap();
    for schedule in [SyncSchedule::periodic(7).unwrap(), SyncSchedule::never()] {
        let local = run(&problem, &opts(Algorithm::LocalSgd, 1, 300, schedule, x0.clone())).unwrap();
        assert_eq!(local.final_model, sgd.final_model);
        assert_eq!(local.ledger.floats_sent_per_worker, 0);
    }
    // A single AdaAlter worker still refreshes its denominator snapshot.
    let trace = check_against_reference(
        &problem,
        &opts(Algorithm::LocalAdaalter, 1, 300, SyncSchedule::periodic(6).unwrap(), x0),
        1e-12,
    );
    assert_eq!(trace.ledger.floats_sent_per_worker, 0);
    assert_eq!(trace.ledger.sync_rounds, 50);
}

#[test]
fn synchronization_leaves_workers_identical() {
    let d = 4;
    let mut workers: Vec<WorkerState> = (0..3)
        .map(|id| {
            let mut acc = AccumulatorState::new(d, 1.0, 1.0).unwrap();
            acc.a2 = ParamVector::new((0..d).map(|j| 1.0 + (id * d + j) as f64).collect());
            WorkerState {
                id,
                x: ParamVector::new((0..d).map(|j| (id as f64 - 1.0) * (j as f64 + 0.5)).collect()),
                acc,
            }
        })
        .collect();
    let mut ledger = CommLedger::new(d);
    synchronize(&mut workers, Algorithm::LocalAdaalter, &mut ledger).unwrap();
    for w in &workers {
        assert_eq!(w.x, workers[0].x);
        assert_eq!(w.acc.a2, workers[0].acc.a2);
        assert_eq!(w.acc.b2_sync, w.acc.a2);
    }
    assert_eq!(workers[0].x.as_slice(), &[0.0; 4]);
    assert_eq!(workers[0].acc.a2.as_slice(), &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(ledger.floats_sent_per_worker, 2 * d as u64);
    assert_eq!(ledger.sync_rounds, 1);

    synchronize(&mut workers, Algorithm::LocalSgd, &mut ledger).unwrap();
    assert_eq!(ledger.floats_sent_per_worker, 3 * d as u64);
}

#[test]
fn ledger_counts_floor_t_over_h_rounds() {
    let d = 3;
    let problem = quadratic(d, 2, ProblemKind::Quadratic);
    let x0 = ParamVector::filled(d, 1.0);
    for t in [1u64, 7, 64, 101] {
        for h in [1u64, 2, 3, 8, 200] {
            for (algo, c) in [(Algorithm::LocalAdaalter, 2), (Algorithm::LocalSgd, 1)] {
                let trace = run(&problem, &opts(algo, 2, t, SyncSchedule::periodic(h).unwrap(), x0.clone())).unwrap();
                assert_eq!(trace.ledger.floats_sent_per_worker, (t / h) * d as u64 * c);
                assert_eq!(trace.ledger.sync_rounds, t / h);
                let flagged = trace.records.iter().filter(|r| r.sync).count() as u64;
                assert_eq!(flagged, t / h);
                let cum: Vec<u64> = trace.records.iter().map(|r| r.comm_floats_cum).collect();
                assert!(cum.windows(2).all(|w| w[0] <= w[1]));
            }
        }
        for algo in [Algorithm::Sgd, Algorithm::Adagrad] {
            let trace = run(&problem, &opts(algo, 2, t, SyncSchedule::every_step(), x0.clone())).unwrap();
            assert_eq!(trace.ledger.floats_sent_per_worker, t * d as u64);
        }
        let never = run(&problem, &opts(Algorithm::LocalAdaalter, 2, t, SyncSchedule::never(), x0.clone())).unwrap();
        assert_eq!(never.ledger.floats_sent_per_worker, 0);
        assert_eq!(never.ledger.sync_rounds, 0);
    }
}

#[test]
fn trace_csv_round_trips() {
    let problem = quadratic(2, 2, ProblemKind::Quadratic);
    let trace = run(
        &problem,
        &opts(Algorithm::LocalAdaalter, 2, 50, SyncSchedule::periodic(4).unwrap(), ParamVector::filled(2, 1.0)),
    )
    .unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let back = read_records(buf.as_slice()).unwrap();
    assert_eq!(back, trace.records);
}

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text).unwrap()
}

const SHARED: &str = "n=4\nT=2000\nd=10\neta=0.5\nnoise=0.3\nalpha=0.5\nl_max=1\nl_min=0.2\nx0=2\n";

#[test]
fn lazy_local_method_needs_at_most_half_the_floats_of_adagrad() {
    let report = compare_baselines(
        &[
            cfg(&format!("algo=adagrad\n{SHARED}")),
            cfg(&format!("algo=local_adaalter\nH=4\n{SHARED}")),
        ],
        &[0, 1, 2],
    )
    .unwrap();
    let (adagrad, local) = (&report.curves[0], &report.curves[1]);
    let target = adagrad.final_loss();
    let needed = local.floats_to_reach(target).expect("local method reaches the adagrad loss");
    assert!(
        2 * needed <= adagrad.total_floats(),
        "needed {needed} floats vs adagrad's {}",
        adagrad.total_floats()
    );
    assert_eq!(2 * local.total_floats(), adagrad.total_floats());
}

#[test]
fn lazy_local_method_syncs_twice_the_floats_of_local_sgd() {
    let report = compare_baselines(
        &[
            cfg(&format!("algo=local_sgd\nH=4\n{SHARED}")),
            cfg(&format!("algo=local_adaalter\nH=4\n{SHARED}")),
        ],
        &[0],
    )
    .unwrap();
    let (sgd, ada) = (&report.curves[0], &report.curves[1]);
    assert_eq!(ada.total_floats(), 2 * sgd.total_floats());
    for (a, s) in ada.comm_floats.iter().zip(&sgd.comm_floats) {
        assert_eq!(*a, 2 * s);
    }
}

#[test]
fn identical_configs_give_identical_curves() {
    let c = cfg(&format!("algo=local_adaalter\nH=4\n{SHARED}"));
    let report = compare_baselines(&[c.clone(), c], &[3, 4]).unwrap();
    assert_eq!(report.curves[0].loss, report.curves[1].loss);
    assert_eq!(report.curves[0].comm_floats, report.curves[1].comm_floats);
}
