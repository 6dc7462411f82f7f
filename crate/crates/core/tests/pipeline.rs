use dpmeb::dp::{dp_meb, dp_mmeb, search_slots, DpSolveParams};
use dpmeb::geometry::{count_outside, minimum_enclosing_ball};
use dpmeb::harness::{generate, run_experiment, Algorithm, ExperimentConfig, GenKind, GenSpec, RMode};
use dpmeb::init::{good_center, InitParams};
use dpmeb::ldp::{ldp_meb, TranscriptMode};
use dpmeb::meb::{meb, SolveConfig};
use dpmeb::trace::{read_jsonl, StopReason, TraceRecord};
use dpmeb::Point;

fn cloud(n: usize, d: usize, seed: u64) -> dpmeb::Dataset {
    let mut spec = GenSpec::new(GenKind::SphericalGaussian, n, d, seed);
    spec.shift = Some(vec![1.0; d]);
    generate(&spec).unwrap().data
}

#[test]
fn non_private_search_covers_everything() {
    let p = cloud(2000, 4, 1);
    let opt = minimum_enclosing_ball(&p).unwrap().ball;
    let ball = meb(&p, &SolveConfig::from_data(&p, 0.2).unwrap()).unwrap();
    assert_eq!(count_outside(&p, &ball.center, ball.radius), 0);
    assert!(ball.radius <= 1.6 * opt.radius);
}

#[test]
fn init_then_private_search() {
    let p = cloud(3000, 2, 2);
    let params = InitParams::new(20.0, 0.05, Point::origin(2), 0.05, 5.0, 3).unwrap();
    let init = good_center(&p, &params).unwrap();
    let cfg = SolveConfig::new(0.5, init.ball.radius, init.ball.center.clone()).unwrap();
    let res = dp_meb(&p, &cfg, 0.5, 1e6, 4).unwrap();
    assert_eq!(res.slots, search_slots(0.5).unwrap());
    assert!((res.ledger.spent() - 1e6).abs() <= 1e-12 * 1e6);
    let ball = res.ball.expect("large budget finds a ball");
    let opt = minimum_enclosing_ball(&p).unwrap().ball;
    assert!(ball.radius <= 4.0 * opt.radius, "{} vs {}", ball.radius, opt.radius);
}

#[test]
fn local_driver_keeps_budget_and_transcript() {
    let p = cloud(4000, 2, 5);
    let cfg = SolveConfig::new(0.5, 4.0, Point::new(vec![1.0, 1.0]).unwrap()).unwrap();
    let res = ldp_meb(&p, &cfg, 0.1, 2.0, 6).unwrap();
    assert!((res.result.ledger.spent() - 2.0).abs() <= 1e-12 * 2.0);
    assert!(!res.transcript.rounds.is_empty());
    assert_eq!(res.transcript.mode, TranscriptMode::Digest);
    assert!(res.transcript.rounds.iter().all(|r| r.messages.is_none()));
}

#[test]
fn curator_solver_stops_for_a_documented_reason() {
    let p = cloud(5000, 3, 7);
    let opt = minimum_enclosing_ball(&p).unwrap().ball;
    let params = DpSolveParams {
        gamma: 0.5,
        beta: 0.1,
        rho: 1e9,
        r: opt.radius,
        theta0: Point::origin(3),
        seed: 8,
    };
    let out = dp_mmeb(&p, &params).unwrap();
    assert!(matches!(
        out.stop_reason,
        StopReason::BelowThreshold | StopReason::FinalGatePassed | StopReason::AllRepsExhausted
    ));
    let events: u64 = out.trace.iter().map(TraceRecord::noise_events).sum();
    assert_eq!(events, out.ledger.used_queries());
}

#[test]
fn experiment_files_are_reproducible() {
    let mut c = ExperimentConfig::protocol_scaled(GenKind::ConditionalGaussian, 0.5, 0.5, 2000, vec![3, 4]).unwrap();
    c.algorithm = Algorithm::DpMmeb;
    c.r_mode = RMode::TrueROpt;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&c, a.path()).unwrap();
    run_experiment(&c, b.path()).unwrap();
    for name in ["summary.csv", "trace_seed3.jsonl", "trace_seed4.jsonl", "ledger_seed3.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let trace: Vec<TraceRecord> = read_jsonl(&a.path().join("trace_seed3.jsonl")).unwrap();
    assert!(!trace.is_empty());
}
