//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use duospace::geometry::Pose;
use duospace::ingest::{load_scenario, parse_scenario_table, set_dotted_key, Scenario};
use duospace::kinematics::{
    decode_transform_string, encode_transform_string, forward_kinematics, inverse_kinematics,
    jacobian, IkParams, JointVector, KinematicChain,
};
use duospace::metrics::{summarize, RunTrace};
use duospace::pipeline::{run_simulation, Mode};
use duospace::time::SimTime;
use duospace_cli::{
    cmd_compare, cmd_run, cmd_sweep, CompareArgs, FormatArg, ModeArg, RunArgs, SweepArgs,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REFERENCE_AOI_FLOOR_S: f64 = 1.2;
const REFERENCE_RUNTIME_S: f64 = 5.0;
const REDUCTION_BAND_PCT: (f64, f64) = (80.0, 95.0);
const SWEEP_DELAYS_MS: [u64; 4] = [0, 250, 500, 1000];
const SWEEP_STEADY_FROM_NS: u64 = 2_500_000_000;
const SWEEP_RUNTIME_S: f64 = 20.0;
const POSE_MATCH_M: f64 = 1e-6;
const ORACLE_AOI_NS: u64 = 1_022_222_222;
const MERGE_NOISE_FLOOR_M: f64 = 1e-3;
const FK_TOL_M: f64 = 1e-12;
const JACOBIAN_TOL: f64 = 1e-5;
const IK_HIT_RATE: f64 = 0.99;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_path(name: &str) -> PathBuf {
    root().join("scenarios").join(name)
}

fn variant(name: &str, overrides: &[(&str, &str)]) -> anyhow::Result<Scenario> {
    let path = scenario_path(name);
    let mut table = parse_scenario_table(&fs::read_to_string(&path)?)?;
    for (k, v) in overrides {
        set_dotted_key(&mut table, k, v)?;
    }
    Ok(Scenario::from_table(table, path.parent().unwrap())?)
}

fn run(s: &Scenario, mode: Mode) -> anyhow::Result<RunTrace> {
    Ok(run_simulation(s, mode, s.seed)?)
}

fn reference_latency() -> anyhow::Result<Outcome> {
    let s = load_scenario(&scenario_path("reference.toml"))?;
    let start = Instant::now();
    let trace = run(&s, Mode::Baseline)?;
    let secs = start.elapsed().as_secs_f64();
    let mean = summarize(&trace)?.mean_aoi_s.unwrap_or(0.0);
    Ok(outcome(
        mean > REFERENCE_AOI_FLOOR_S && secs < REFERENCE_RUNTIME_S,
        format!("baseline mean AoI {mean:.4} s (> {REFERENCE_AOI_FLOOR_S} s), runtime {secs:.2} s (< {REFERENCE_RUNTIME_S} s)"),
    ))
}

fn scene_reductions(tmp: &Path) -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for scene in ["desk_slow", "desk_reach", "room_walk"] {
        let out = tmp.join(format!("compare_{scene}"));
        cmd_compare(&CompareArgs {
            scenario: scenario_path(&format!("{scene}.toml")),
            seed: None,
            out: out.clone(),
            format: FormatArg::Csv,
        })?;
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("comparison.json"))?)?;
        let pct = json["latency_reduction_pct"].as_f64().unwrap_or(f64::NAN);
        pass &= (REDUCTION_BAND_PCT.0..=REDUCTION_BAND_PCT.1).contains(&pct);
        parts.push(format!("{scene} {pct:.1}%"));
    }
    Ok(outcome(
        pass,
        format!(
            "{} (band {}..{}%)",
            parts.join(", "),
            REDUCTION_BAND_PCT.0,
            REDUCTION_BAND_PCT.1
        ),
    ))
}

/// Steady-state AoI sum and count, in integer nanoseconds.
fn steady_sum(trace: &RunTrace) -> (u128, u64) {
    trace
        .frames
        .iter()
        .filter(|f| f.submit >= SimTime::from_nanos(SWEEP_STEADY_FROM_NS))
        .filter_map(|f| f.aoi)
        .fold((0, 0), |(s, n), a| (s + u128::from(a), n + 1))
}

fn delay_sweep() -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let mut base = Vec::new();
    let mut duo = Vec::new();
    for ms in SWEEP_DELAYS_MS {
        let s = variant(
            "delay_sweep.toml",
            &[("network.base_delay", &format!("{ms}ms"))],
        )?;
        base.push(steady_sum(&run(&s, Mode::Baseline)?));
        duo.push(steady_sum(&run(&s, Mode::Duo)?));
    }
    let secs = start.elapsed().as_secs_f64();
    let period = load_scenario(&scenario_path("delay_sweep.toml"))?.frame_period_nanos();

    let means = |v: &[(u128, u64)]| -> Vec<f64> {
        v.iter()
            .map(|&(s, n)| s as f64 / n.max(1) as f64 / 1e9)
            .collect()
    };
    let duo_means = means(&duo);
    let spread = duo_means.iter().cloned().fold(f64::MIN, f64::max)
        - duo_means.iter().cloned().fold(f64::MAX, f64::min);
    let duo_ok = spread * 1e9 < period as f64;

    // exact integer check: each delay step raises the baseline mean by at least twice the step
    let mut base_ok = base.iter().all(|&(_, n)| n > 0);
    for i in 1..base.len() {
        let step_ns = u128::from((SWEEP_DELAYS_MS[i] - SWEEP_DELAYS_MS[i - 1]) * 1_000_000);
        let (sa, na) = base[i - 1];
        let (sb, nb) = base[i];
        // sb/nb - sa/na >= 2 step  <=>  sb*na - sa*nb >= 2 step na nb
        base_ok &= sb * u128::from(na)
            >= sa * u128::from(nb) + 2 * step_ns * u128::from(na) * u128::from(nb);
    }
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|m| format!("{m:.4}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    Ok(outcome(
        duo_ok && base_ok && secs < SWEEP_RUNTIME_S,
        format!(
            "delays {:?} ms: baseline {} s (step >= 2x delay step: {base_ok}), duo {} s (spread {:.3} ms < {:.3} ms), runtime {secs:.2} s (< {SWEEP_RUNTIME_S} s)",
            SWEEP_DELAYS_MS,
            fmt(&means(&base)),
            fmt(&duo_means),
            spread * 1e3,
            period as f64 / 1e6
        ),
    ))
}

fn zero_delay() -> anyhow::Result<Outcome> {
    let s = load_scenario(&scenario_path("zero_delay.toml"))?;
    let b = run(&s, Mode::Baseline)?;
    let d = run(&s, Mode::Duo)?;
    let mb = summarize(&b)?.mean_aoi_s.unwrap_or(f64::NAN);
    let md = summarize(&d)?.mean_aoi_s.unwrap_or(f64::NAN);
    let period_s = s.frame_period_nanos() as f64 / 1e9;
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (fb, fd) in b.frames.iter().zip(&d.frames) {
        if let (Some(eb), Some(ed)) = (fb.pose_error, fd.pose_error) {
            worst = worst.max((eb - ed).abs());
            compared += 1;
        }
    }
    let aoi_ok = (mb - md).abs() < period_s;
    let pose_ok = compared > 0 && worst <= POSE_MATCH_M;
    Ok(outcome(
        aoi_ok && pose_ok,
        format!(
            "mean AoI baseline {mb:.7} s vs duo {md:.7} s (diff < {period_s:.7} s), max pose error diff {worst:.2e} m over {compared} frames (<= {POSE_MATCH_M:e} m)"
        ),
    ))
}

fn fixed_delay_oracle() -> anyhow::Result<Outcome> {
    let fixture =
        fs::read_to_string(root().join("crates/core/tests/fixtures/fixed_delay_oracle.csv"))?;
    let pinned: u64 = fixture
        .lines()
        .find_map(|l| l.strip_prefix("# aoi_ns = "))
        .ok_or_else(|| anyhow::anyhow!("fixture lacks aoi_ns"))?
        .trim()
        .parse()?;
    let s = load_scenario(&scenario_path("fixed_delay.toml"))?;
    let trace = run(&s, Mode::Baseline)?;
    let first = trace.frames.iter().find(|f| f.aoi.is_some());
    let got = first.and_then(|f| f.aoi);
    Ok(outcome(
        got == Some(ORACLE_AOI_NS) && pinned == ORACLE_AOI_NS,
        format!(
            "first AoI {:?} ns at submit {:?} ns, expected {ORACLE_AOI_NS} ns (fixture {pinned})",
            got,
            first.map(|f| f.submit.as_nanos())
        ),
    ))
}

fn orbit_merges() -> anyhow::Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for merge in ["snap", "blend:0.3", "interp:300ms"] {
        let mut means = Vec::new();
        for period in ["1s", "500ms", "100ms"] {
            let s = variant(
                "orbit.toml",
                &[("merge", merge), ("calibration_period", period)],
            )?;
            let trace = run(&s, Mode::Duo)?;
            let moved: Vec<_> = trace
                .merges
                .iter()
                .filter(|m| m.delta_d > MERGE_NOISE_FLOOR_M)
                .collect();
            let shape_ok = !moved.is_empty()
                && moved.iter().all(|m| {
                    if merge == "snap" {
                        m.max_step == m.delta_d
                    } else {
                        m.max_step < m.delta_d
                    }
                });
            if period == "500ms" {
                pass &= shape_ok;
                parts.push(format!(
                    "{merge}: {} events {}",
                    moved.len(),
                    if merge == "snap" {
                        "max_step == delta_d"
                    } else {
                        "max_step < delta_d"
                    }
                ));
            }
            let n = trace.merges.len().max(1) as f64;
            means.push(trace.merges.iter().map(|m| m.delta_d).sum::<f64>() / n);
        }
        let decreasing = means.windows(2).all(|w| w[1] < w[0]);
        pass &= decreasing;
        parts.push(format!(
            "{merge} mean delta_d 1s/500ms/100ms {:.4}/{:.4}/{:.4} m",
            means[0], means[1], means[2]
        ));
    }
    Ok(outcome(pass, parts.join("; ")))
}

fn random_q(rng: &mut ChaCha8Rng, chain: &KinematicChain) -> Vec<f64> {
    chain
        .joints()
        .iter()
        .map(|j| rng.random_range(j.lo.max(-3.0)..j.hi.min(3.0)))
        .collect()
}

fn kinematics_suite() -> anyhow::Result<Outcome> {
    let two = KinematicChain::planar(&[1.0, 1.0])?;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut fk_err = 0.0f64;
    for (q, xy) in [
        ([0.0, 0.0], [2.0, 0.0]),
        ([half_pi, 0.0], [0.0, 2.0]),
        ([half_pi, -half_pi], [1.0, 1.0]),
    ] {
        let p = forward_kinematics(&two, &JointVector::new(q.to_vec()))?.position;
        fk_err = fk_err.max((p - Vector3::new(xy[0], xy[1], 0.0)).norm());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut jac_err = 0.0f64;
    for chain in [KinematicChain::planar3(), KinematicChain::kinova_j2n6s300()] {
        for _ in 0..100 {
            let q = random_q(&mut rng, &chain);
            let j = jacobian(&chain, &JointVector::new(q.clone()))?;
            for col in 0..q.len() {
                let (mut plus, mut minus) = (q.clone(), q.clone());
                plus[col] += h;
                minus[col] -= h;
                let fd = (forward_kinematics(&chain, &JointVector::new(plus))?.position
                    - forward_kinematics(&chain, &JointVector::new(minus))?.position)
                    / (2.0 * h);
                for row in 0..3 {
                    jac_err = jac_err.max((j[(row, col)] - fd[row]).abs());
                }
            }
        }
    }

    let chain = KinematicChain::planar3();
    let params = IkParams::default();
    let mut hits = 0;
    let trials = 1000;
    for _ in 0..trials {
        let q = random_q(&mut rng, &chain);
        let target: Pose = forward_kinematics(&chain, &JointVector::new(q.clone()))?;
        let seed: Vec<f64> = q.iter().map(|a| a + rng.random_range(-0.3..0.3)).collect();
        let sol = inverse_kinematics(&chain, &target, &JointVector::new(seed), &params)?;
        let reached = forward_kinematics(&chain, &sol.joints)?.position;
        if sol.converged && (reached - target.position).norm() < params.tol_pos * 10.0 {
            hits += 1;
        }
    }

    let mut round_trip_ok = true;
    for _ in 0..10_000 {
        let n = rng.random_range(1..8);
        let q: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-7_000_000i64..7_000_000) as f64 / 1e6)
            .collect();
        let stamp = SimTime::from_nanos(rng.random_range(0..u64::MAX / 2));
        let origin = SimTime::from_nanos(rng.random_range(0..u64::MAX / 2));
        let text = encode_transform_string(&JointVector::new(q.clone()), stamp, origin);
        round_trip_ok &= decode_transform_string(text.as_str())
            .map(|d| {
                d.joints.as_slice() == q.as_slice()
                    && d.stamp == stamp
                    && d.origin_user_stamp == origin
            })
            .unwrap_or(false);
    }

    let rate = hits as f64 / trials as f64;
    Ok(outcome(
        fk_err <= FK_TOL_M && jac_err <= JACOBIAN_TOL && rate >= IK_HIT_RATE && round_trip_ok,
        format!(
            "FK table err {fk_err:.1e} (<= {FK_TOL_M:e}), Jacobian err {jac_err:.1e} (<= {JACOBIAN_TOL:e}), IK {hits}/{trials} (>= {:.0}%), transform-string round trip {round_trip_ok}",
            IK_HIT_RATE * 100.0
        ),
    ))
}

fn tree(dir: &Path) -> anyhow::Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir)?.to_path_buf(), fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn determinism(tmp: &Path) -> anyhow::Result<Outcome> {
    let run_args = |out: PathBuf| RunArgs {
        scenario: scenario_path("reference.toml"),
        mode: Some(ModeArg::Duo),
        seed: Some(7),
        out,
        format: FormatArg::Csv,
    };
    cmd_run(&run_args(tmp.join("det_a")))?;
    cmd_run(&run_args(tmp.join("det_b")))?;
    let a = tree(&tmp.join("det_a"))?;
    let runs_equal = !a.is_empty() && a == tree(&tmp.join("det_b"))?;

    let sweep_args = |jobs: usize, out: PathBuf| SweepArgs {
        scenario: scenario_path("orbit.toml"),
        param: "calibration_period=100ms,250ms,500ms,1s".into(),
        mode: Some(ModeArg::Duo),
        seed: None,
        out,
        format: FormatArg::Jsonl,
        jobs,
    };
    cmd_sweep(&sweep_args(1, tmp.join("sweep_j1")))?;
    cmd_sweep(&sweep_args(8, tmp.join("sweep_j8")))?;
    let s1 = tree(&tmp.join("sweep_j1"))?;
    let sweeps_equal = !s1.is_empty() && s1 == tree(&tmp.join("sweep_j8"))?;
    Ok(outcome(
        runs_equal && sweeps_equal,
        format!(
            "repeated run identical: {runs_equal} ({} files), sweep --jobs 1 vs 8 identical: {sweeps_equal} ({} files)",
            a.len(),
            s1.len()
        ),
    ))
}

type Check<'a> = Box<dyn Fn() -> anyhow::Result<Outcome> + 'a>;

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let checks: Vec<(&str, Check)> = vec![
        ("reference baseline latency", Box::new(reference_latency)),
        (
            "duo latency reduction per scene",
            Box::new(|| scene_reductions(tmp.path())),
        ),
        ("network delay sweep", Box::new(delay_sweep)),
        ("zero-delay equivalence", Box::new(zero_delay)),
        ("fixed-delay AoI oracle", Box::new(fixed_delay_oracle)),
        ("calibration merge behavior", Box::new(orbit_merges)),
        ("kinematics suite", Box::new(kinematics_suite)),
        ("determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {}: {name}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
