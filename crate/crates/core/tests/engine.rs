use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use duospace::ingest::{
    load_scenario, parse_scenario_table, set_dotted_key, ConfigError, Scenario,
};
use duospace::metrics::{summarize, FrameRecord};
use duospace::pipeline::{
    build_task_graph, run_simulation, run_simulation_logged, AuditAction, Mode, Side,
    SimulationError,
};
use duospace::time::SimTime;
use proptest::prelude::*;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> Scenario {
    load_scenario(&scenarios().join(name)).unwrap()
}

fn edited(name: &str, edits: &[(&str, &str)]) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(scenarios().join(name)).unwrap();
    let mut table = parse_scenario_table(&text)?;
    for (k, v) in edits {
        set_dotted_key(&mut table, k, v)?;
    }
    Scenario::from_table(table, &scenarios())
}

struct OracleStep {
    task: String,
    release: u64,
    finish: u64,
}

fn oracle() -> (Vec<OracleStep>, BTreeMap<String, u64>) {
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fixed_delay_oracle.csv"),
    )
    .unwrap();
    let mut steps = Vec::new();
    let mut totals = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            for part in rest.split(", ") {
                if let Some((k, v)) = part.split_once(" = ") {
                    if let Ok(v) = v.parse() {
                        totals.insert(k.to_string(), v);
                    }
                }
            }
            continue;
        }
        if line.starts_with('#') || line.starts_with("step") {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        steps.push(OracleStep {
            task: f[1].to_string(),
            release: f[2].parse().unwrap(),
            finish: f[3].parse().unwrap(),
        });
    }
    (steps, totals)
}

#[test]
fn fixed_delay_matches_hand_trace() {
    let s = scenario("fixed_delay.toml");
    let (trace, log, graph) = run_simulation_logged(&s, Mode::Baseline, 1).unwrap();
    let (steps, totals) = oracle();
    for step in &steps {
        let found = log.runs.iter().any(|r| {
            graph.tasks[r.task].name == step.task
                && r.release.as_nanos() == step.release
                && r.finish.as_nanos() == step.finish
        });
        assert!(
            found,
            "no run of {} over [{}, {}]",
            step.task, step.release, step.finish
        );
    }
    let first = trace.frames.iter().find(|f| f.origin.is_some()).unwrap();
    assert_eq!(first.submit.as_nanos(), totals["submit_ns"]);
    assert_eq!(first.origin.unwrap().as_nanos(), totals["origin_ns"]);
    assert_eq!(first.aoi, Some(totals["aoi_ns"]));
}

#[test]
fn one_record_per_frame() {
    let s = edited("fixed_delay.toml", &[("horizon", "\"1s\"")]).unwrap();
    for mode in [Mode::Baseline, Mode::Duo] {
        let trace = run_simulation(&s, mode, 0).unwrap();
        assert_eq!(trace.frames.len(), 90);
        assert!(trace.frames.windows(2).all(|w| w[0].submit < w[1].submit));
        assert_eq!(
            trace.frames.last().unwrap().submit,
            SimTime::from_millis(1000)
        );
    }
}

#[test]
fn same_seed_same_trace() {
    let s = scenario("reference.toml");
    for mode in [Mode::Baseline, Mode::Duo] {
        assert_eq!(
            run_simulation(&s, mode, 9).unwrap(),
            run_simulation(&s, mode, 9).unwrap()
        );
    }
    assert_ne!(
        run_simulation(&s, Mode::Baseline, 9).unwrap().frames,
        run_simulation(&s, Mode::Baseline, 10).unwrap().frames
    );
}

#[test]
fn task_counts() {
    let s = scenario("reference.toml");
    let base = build_task_graph(&s, Mode::Baseline).unwrap();
    assert_eq!((base.count(Side::Xr), base.count(Side::Agent)), (10, 6));
    let duo = build_task_graph(&s, Mode::Duo).unwrap();
    assert_eq!((duo.count(Side::Xr), duo.count(Side::Agent)), (13, 7));
}

#[test]
fn calibration_send_on_its_period() {
    let s = edited("reference.toml", &[("horizon", "\"2s\"")]).unwrap();
    let (_, log, graph) = run_simulation_logged(&s, Mode::Duo, 1).unwrap();
    let releases: Vec<u64> = log
        .runs
        .iter()
        .filter(|r| graph.tasks[r.task].name == "calibration_send")
        .map(|r| r.release.as_nanos())
        .collect();
    assert_eq!(releases, vec![0, 500_000_000, 1_000_000_000, 1_500_000_000]);
}

#[test]
fn periodic_releases_follow_the_period() {
    let s = edited(
        "reference.toml",
        &[
            ("horizon", "\"100ms\""),
            ("tasks.vio.trigger", "periodic:11111111ns"),
        ],
    )
    .unwrap();
    let (_, log, graph) = run_simulation_logged(&s, Mode::Baseline, 1).unwrap();
    let releases: Vec<u64> = log
        .runs
        .iter()
        .filter(|r| graph.tasks[r.task].name == "vio")
        .map(|r| r.release.as_nanos())
        .take(3)
        .collect();
    assert_eq!(releases, vec![0, 11_111_111, 22_222_222]);
}

#[test]
fn unknown_topic_is_a_config_error() {
    let err = edited(
        "reference.toml",
        &[
            ("tasks.atw.exec", "1ms"),
            ("tasks.cam_feed.trigger", "on:xr/nowhere"),
        ],
    )
    .map(|s| build_task_graph(&s, Mode::Baseline))
    .unwrap()
    .unwrap_err();
    assert!(err.to_string().contains("tasks.cam_feed.trigger"), "{err}");
    let err = run_simulation(
        &edited(
            "reference.toml",
            &[("tasks.cam_feed.trigger", "on:xr/nowhere")],
        )
        .unwrap(),
        Mode::Duo,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, SimulationError::Config(_)));
}

#[test]
fn chain_longer_than_a_frame_is_rejected() {
    let s = edited(
        "reference.toml",
        &[("tasks.scene_reconstruction.exec", "12ms")],
    )
    .unwrap();
    let err = build_task_graph(&s, Mode::Baseline).unwrap_err();
    assert!(
        err.to_string().contains("tasks.scene_reconstruction.exec"),
        "{err}"
    );
}

#[test]
fn trajectory_must_cover_horizon() {
    let err = edited("reference.toml", &[("horizon", "\"40s\"")]).unwrap_err();
    assert!(err.to_string().contains("trajectories.head"), "{err}");
}

#[test]
fn reads_see_the_latest_publish() {
    let s = edited("reference.toml", &[("horizon", "\"3s\"")]).unwrap();
    for mode in [Mode::Baseline, Mode::Duo] {
        let (_, log, _) = run_simulation_logged(&s, mode, 4).unwrap();
        let mut latest: BTreeMap<&str, SimTime> = BTreeMap::new();
        let mut reads = 0;
        for entry in &log.audit {
            match entry.action {
                AuditAction::Publish => {
                    latest.insert(entry.topic.as_str(), entry.time);
                }
                AuditAction::Read(seen) => {
                    reads += 1;
                    assert_eq!(seen, latest.get(entry.topic.as_str()).copied(), "{entry:?}");
                    if let Some(t) = seen {
                        assert!(t <= entry.time);
                    }
                }
            }
        }
        assert!(reads > 1000);
        assert!(log.runs.iter().all(|r| r.finish >= r.release));
    }
}

#[test]
fn baseline_provenance_predates_round_trip() {
    let s = scenario("fixed_delay.toml");
    let two_way = s.uplink.base_delay + s.downlink.base_delay;
    let trace = run_simulation(&s, Mode::Baseline, 0).unwrap();
    let shown: Vec<&FrameRecord> = trace.frames.iter().filter(|f| f.origin.is_some()).collect();
    assert!(!shown.is_empty());
    for f in shown {
        assert!(f.origin.unwrap().as_nanos() < f.submit.as_nanos() - two_way);
    }
}

#[test]
fn static_baseline_pose_error_settles() {
    let s = scenario("zero_delay.toml");
    let trace = run_simulation(&s, Mode::Baseline, 0).unwrap();
    let tail = &trace.frames[trace.frames.len() - 50..];
    // transform strings carry joint angles to 1e-6 rad
    assert!(tail.iter().all(|f| f.pose_error.unwrap() < 1e-6));
}

#[test]
fn duo_latency_ignores_base_delay() {
    let mut means = Vec::new();
    for delay in ["0ms", "2s"] {
        let s = edited("delay_sweep.toml", &[("network.base_delay", delay)]).unwrap();
        let trace = run_simulation(&s, Mode::Duo, 5).unwrap();
        means.push(trace.mean_aoi_since(SimTime::from_millis(2500)).unwrap());
    }
    assert!((means[0] - means[1]).abs() < 1.0 / 90.0);
}

#[test]
fn reference_run_is_fast() {
    let s = scenario("reference.toml");
    let start = std::time::Instant::now();
    let report = summarize(&run_simulation(&s, Mode::Baseline, 7).unwrap()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(report.frame_count, 2700);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frame_invariants_hold(
        seed in 0u64..1000,
        duo in any::<bool>(),
        delay_ms in 0u64..600,
        jitter_ms in 0u64..80,
        cal_ms in 50u64..800,
    ) {
        let s = edited("desk_reach.toml", &[
            ("horizon", "3s"),
            ("network.base_delay", &format!("{delay_ms}ms")),
            ("network.jitter", &format!("uniform:0ms:{jitter_ms}ms")),
            ("calibration_period", &format!("{cal_ms}ms")),
        ]).unwrap();
        let mode = if duo { Mode::Duo } else { Mode::Baseline };
        let trace = run_simulation(&s, mode, seed).unwrap();
        prop_assert_eq!(trace.frames.len(), 270);
        let mut last_origin = SimTime::ZERO;
        for (k, f) in trace.frames.iter().enumerate() {
            prop_assert_eq!(f.submit, s.frame_deadline(k as u64 + 1));
            if let Some(origin) = f.origin {
                prop_assert!(origin <= f.submit);
                prop_assert!(origin >= last_origin);
                prop_assert_eq!(f.aoi, Some(f.submit.as_nanos() - origin.as_nanos()));
                if !duo {
                    prop_assert!(f.aoi.unwrap() >= 2 * delay_ms * 1_000_000);
                }
                last_origin = origin;
            }
        }
        for m in &trace.merges {
            prop_assert!(m.max_step <= m.delta_d + 1e-9);
        }
    }
}
