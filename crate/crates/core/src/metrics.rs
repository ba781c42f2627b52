//! Frame traces, age-of-information latency and summary reports.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Mode;
use crate::spaces::{MergeEvent, MergeStrategy};
use crate::time::{Nanos, SimTime, NANOS_PER_SEC};

pub const FRAME_CSV_HEADER: &str = "submit_ns,origin_ns,aoi_ns,pose_error_m";
pub const MERGE_CSV_HEADER: &str = "time_ns,id,delta_d_m,delta_angle_rad,max_step_m,strategy";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("frame at {0} shows no user-derived state")]
    MissingProvenance(SimTime),
    #[error("trace has no frames")]
    EmptyTrace,
    #[error("baseline mean latency is zero")]
    DivisionByZero,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Rounds to the 9 fractional digits used on disk, so exported values
/// re-import to the same `f64`.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.9}").parse().expect("formatted float parses")
}

/// One submitted frame.
///
/// `origin` is the birth stamp of the user pose behind the displayed agent
/// state; frames drawn before any such state exists carry no origin and are
/// left out of statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    #[serde(rename = "submit_ns")]
    pub submit: SimTime,
    #[serde(rename = "origin_ns")]
    pub origin: Option<SimTime>,
    #[serde(rename = "aoi_ns")]
    pub aoi: Option<Nanos>,
    /// Distance between displayed and agent-side end effector, in meters.
    #[serde(rename = "pose_error_m")]
    pub pose_error: Option<f64>,
}

impl FrameRecord {
    pub fn new(submit: SimTime, origin: Option<SimTime>, pose_error: f64) -> Self {
        match origin {
            Some(o) => FrameRecord {
                submit,
                origin,
                aoi: Some(submit - o),
                pose_error: Some(quantize(pose_error)),
            },
            None => FrameRecord::warmup(submit),
        }
    }

    pub fn warmup(submit: SimTime) -> Self {
        FrameRecord {
            submit,
            origin: None,
            aoi: None,
            pose_error: None,
        }
    }
}

/// Age of the displayed user pose at submission, in seconds.
pub fn aoi_latency(frame: &FrameRecord) -> Result<f64, MetricsError> {
    let origin = frame
        .origin
        .ok_or(MetricsError::MissingProvenance(frame.submit))?;
    Ok((frame.submit - origin) as f64 / NANOS_PER_SEC as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    #[serde(rename = "time_ns")]
    pub time: SimTime,
    pub id: String,
    #[serde(rename = "delta_d_m")]
    pub delta_d: f64,
    /// Orientation gap at the merge instant; supplementary to `delta_d`.
    #[serde(rename = "delta_angle_rad")]
    pub delta_angle: f64,
    #[serde(rename = "max_step_m")]
    pub max_step: f64,
    pub strategy: String,
}

impl From<&MergeEvent> for MergeRecord {
    fn from(e: &MergeEvent) -> Self {
        MergeRecord {
            time: e.time,
            id: e.id.clone(),
            delta_d: quantize(e.delta_d),
            delta_angle: quantize(
                e.pre_merge
                    .orientation
                    .angle_to(&e.ground_truth.orientation),
            ),
            max_step: quantize(e.max_step),
            strategy: e.strategy.to_string(),
        }
    }
}

impl MergeRecord {
    pub fn strategy(&self) -> Option<MergeStrategy> {
        self.strategy.parse().ok()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub stale_transforms: u64,
    pub stale_calibrations: u64,
    pub dropped_messages: u64,
    pub unconverged_ik: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mode: Mode,
    pub seed: u64,
    pub fingerprint: String,
    pub frames: Vec<FrameRecord>,
    pub merges: Vec<MergeRecord>,
    pub counters: Counters,
}

impl RunTrace {
    /// AoI values of frames with provenance, in submission order.
    pub fn aoi_values(&self) -> Vec<Nanos> {
        self.frames.iter().filter_map(|f| f.aoi).collect()
    }

    /// Mean AoI in seconds over frames submitted at or after `from`.
    pub fn mean_aoi_since(&self, from: SimTime) -> Option<f64> {
        let (sum, n) = self
            .frames
            .iter()
            .filter(|f| f.submit >= from)
            .filter_map(|f| f.aoi)
            .fold((0u128, 0u64), |(s, n), a| (s + u128::from(a), n + 1));
        (n > 0).then(|| sum as f64 / n as f64 / NANOS_PER_SEC as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: Mode,
    pub seed: u64,
    pub fingerprint: String,
    pub frame_count: usize,
    pub aoi_frames: usize,
    pub mean_aoi_s: Option<f64>,
    pub median_aoi_s: Option<f64>,
    pub p95_aoi_s: Option<f64>,
    pub p99_aoi_s: Option<f64>,
    pub mean_pose_error_m: Option<f64>,
    pub max_pose_error_m: Option<f64>,
    pub merge_count: usize,
    pub mean_delta_d_m: Option<f64>,
    pub p95_delta_d_m: Option<f64>,
    pub max_delta_d_m: Option<f64>,
    pub mean_delta_angle_rad: Option<f64>,
    pub max_delta_angle_rad: Option<f64>,
    pub mean_max_step_m: Option<f64>,
    pub p95_max_step_m: Option<f64>,
    pub max_max_step_m: Option<f64>,
    pub counters: Counters,
}

/// Nearest-rank percentile of sorted values, `p` in (0, 100].
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn max(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::max)
}

fn sorted_f64(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn summarize(trace: &RunTrace) -> Result<Report, MetricsError> {
    if trace.frames.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let secs = |ns: Nanos| ns as f64 / NANOS_PER_SEC as f64;
    let mut aoi = trace.aoi_values();
    aoi.sort_unstable();
    let aoi_mean = (!aoi.is_empty()).then(|| {
        aoi.iter().map(|&a| u128::from(a)).sum::<u128>() as f64
            / aoi.len() as f64
            / NANOS_PER_SEC as f64
    });
    let errors = sorted_f64(trace.frames.iter().filter_map(|f| f.pose_error).collect());
    let deltas = sorted_f64(trace.merges.iter().map(|m| m.delta_d).collect());
    let angles = sorted_f64(trace.merges.iter().map(|m| m.delta_angle).collect());
    let steps = sorted_f64(trace.merges.iter().map(|m| m.max_step).collect());
    Ok(Report {
        mode: trace.mode,
        seed: trace.seed,
        fingerprint: trace.fingerprint.clone(),
        frame_count: trace.frames.len(),
        aoi_frames: aoi.len(),
        mean_aoi_s: aoi_mean,
        median_aoi_s: nearest_rank(&aoi, 50.0).map(secs),
        p95_aoi_s: nearest_rank(&aoi, 95.0).map(secs),
        p99_aoi_s: nearest_rank(&aoi, 99.0).map(secs),
        mean_pose_error_m: mean(&errors),
        max_pose_error_m: max(&errors),
        merge_count: trace.merges.len(),
        mean_delta_d_m: mean(&deltas),
        p95_delta_d_m: nearest_rank(&deltas, 95.0),
        max_delta_d_m: max(&deltas),
        mean_delta_angle_rad: mean(&angles),
        max_delta_angle_rad: max(&angles),
        mean_max_step_m: mean(&steps),
        p95_max_step_m: nearest_rank(&steps, 95.0),
        max_max_step_m: max(&steps),
        counters: trace.counters,
    })
}

/// Percentage by which duo mode lowers mean AoI.
pub fn latency_reduction(baseline: &Report, duo: &Report) -> Result<f64, MetricsError> {
    let base = baseline.mean_aoi_s.ok_or(MetricsError::EmptyTrace)?;
    let duo = duo.mean_aoi_s.ok_or(MetricsError::EmptyTrace)?;
    if base == 0.0 {
        return Err(MetricsError::DivisionByZero);
    }
    Ok(100.0 * (1.0 - duo / base))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Jsonl => "jsonl",
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_frames_csv<W: Write>(frames: &[FrameRecord], mut out: W) -> Result<(), MetricsError> {
    writeln!(out, "{FRAME_CSV_HEADER}")?;
    for f in frames {
        writeln!(
            out,
            "{},{},{},{}",
            f.submit.as_nanos(),
            opt(f.origin.map(SimTime::as_nanos)),
            opt(f.aoi),
            f.pose_error.map(|e| format!("{e:.9}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn write_merges_csv<W: Write>(merges: &[MergeRecord], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = MERGE_CSV_HEADER.split(',').collect();
    w.write_record(&header).map_err(csv_err)?;
    for m in merges {
        w.write_record([
            m.time.as_nanos().to_string(),
            m.id.clone(),
            format!("{:.9}", m.delta_d),
            format!("{:.9}", m.delta_angle),
            format!("{:.9}", m.max_step),
            m.strategy.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> MetricsError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MetricsError::Io(io),
        other => MetricsError::Format {
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn field<T: std::str::FromStr>(
    line: usize,
    name: &str,
    raw: &str,
) -> Result<Option<T>, MetricsError> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| MetricsError::Format {
        line,
        reason: format!("bad {name} `{raw}`"),
    })
}

fn reader<R: Read>(src: R, header: &str) -> Result<csv::Reader<R>, MetricsError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(src);
    let found: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if found.join(",") != header {
        return Err(MetricsError::Format {
            line: 1,
            reason: format!("expected header `{header}`"),
        });
    }
    Ok(r)
}

pub fn read_frames_csv<R: Read>(src: R) -> Result<Vec<FrameRecord>, MetricsError> {
    let mut r = reader(src, FRAME_CSV_HEADER)?;
    let mut frames = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let submit: u64 =
            field(line, "submit_ns", &rec[0])?.ok_or_else(|| MetricsError::Format {
                line,
                reason: "missing submit_ns".into(),
            })?;
        frames.push(FrameRecord {
            submit: SimTime::from_nanos(submit),
            origin: field::<u64>(line, "origin_ns", &rec[1])?.map(SimTime::from_nanos),
            aoi: field(line, "aoi_ns", &rec[2])?,
            pose_error: field(line, "pose_error_m", &rec[3])?,
        });
    }
    Ok(frames)
}

pub fn read_merges_csv<R: Read>(src: R) -> Result<Vec<MergeRecord>, MetricsError> {
    let mut r = reader(src, MERGE_CSV_HEADER)?;
    let mut merges = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let missing = |name: &str| MetricsError::Format {
            line,
            reason: format!("missing {name}"),
        };
        merges.push(MergeRecord {
            time: SimTime::from_nanos(
                field(line, "time_ns", &rec[0])?.ok_or_else(|| missing("time_ns"))?,
            ),
            id: rec[1].to_string(),
            delta_d: field(line, "delta_d_m", &rec[2])?.ok_or_else(|| missing("delta_d_m"))?,
            delta_angle: field(line, "delta_angle_rad", &rec[3])?
                .ok_or_else(|| missing("delta_angle_rad"))?,
            max_step: field(line, "max_step_m", &rec[4])?.ok_or_else(|| missing("max_step_m"))?,
            strategy: rec[5].to_string(),
        });
    }
    Ok(merges)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<(), MetricsError> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: Read>(src: R) -> Result<Vec<T>, MetricsError> {
    let mut items = Vec::new();
    for (i, line) in BufReader::new(src).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| MetricsError::Format {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(items)
}

/// Writes `frames.<ext>` and `merges.<ext>` into `dir`.
pub fn export_trace(trace: &RunTrace, format: TraceFormat, dir: &Path) -> Result<(), MetricsError> {
    fs::create_dir_all(dir)?;
    let ext = format.extension();
    let mut frames = Vec::new();
    let mut merges = Vec::new();
    match format {
        TraceFormat::Csv => {
            write_frames_csv(&trace.frames, &mut frames)?;
            write_merges_csv(&trace.merges, &mut merges)?;
        }
        TraceFormat::Jsonl => {
            write_jsonl(&trace.frames, &mut frames)?;
            write_jsonl(&trace.merges, &mut merges)?;
        }
    }
    fs::write(dir.join(format!("frames.{ext}")), frames)?;
    fs::write(dir.join(format!("merges.{ext}")), merges)?;
    Ok(())
}

/// Reads back the frames and merges written by [`export_trace`].
pub fn import_trace(
    format: TraceFormat,
    dir: &Path,
) -> Result<(Vec<FrameRecord>, Vec<MergeRecord>), MetricsError> {
    let ext = format.extension();
    let frames = fs::File::open(dir.join(format!("frames.{ext}")))?;
    let merges = fs::File::open(dir.join(format!("merges.{ext}")))?;
    match format {
        TraceFormat::Csv => Ok((read_frames_csv(frames)?, read_merges_csv(merges)?)),
        TraceFormat::Jsonl => Ok((read_jsonl(frames)?, read_jsonl(merges)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MS: Nanos = 1_000_000;

    fn trace(aois_ms: &[u64]) -> RunTrace {
        let frames = aois_ms
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let submit = SimTime::from_millis(10_000 + i as u64);
                FrameRecord::new(
                    submit,
                    Some(SimTime::from_nanos(submit.as_nanos() - a * MS)),
                    0.0,
                )
            })
            .collect();
        RunTrace {
            mode: Mode::Baseline,
            seed: 0,
            fingerprint: String::new(),
            frames,
            merges: Vec::new(),
            counters: Counters::default(),
        }
    }

    #[test]
    fn aoi_of_a_frame() {
        let f = FrameRecord::new(SimTime::from_nanos(1_022_222_222), Some(SimTime::ZERO), 0.0);
        assert_eq!(aoi_latency(&f).unwrap(), 1.022222222);
        let f = FrameRecord::new(SimTime::from_millis(5), Some(SimTime::from_millis(5)), 0.0);
        assert_eq!(aoi_latency(&f).unwrap(), 0.0);
        assert!(matches!(
            aoi_latency(&FrameRecord::warmup(SimTime::ZERO)),
            Err(MetricsError::MissingProvenance(_))
        ));
    }

    #[test]
    fn constant_latency_summary() {
        let r = summarize(&trace(&[1000; 20])).unwrap();
        assert_eq!(r.mean_aoi_s, Some(1.0));
        assert_eq!(r.median_aoi_s, Some(1.0));
        assert_eq!(r.p99_aoi_s, Some(1.0));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let values: Vec<u64> = (1..=100).collect();
        let r = summarize(&trace(&values)).unwrap();
        assert_eq!(r.median_aoi_s, Some(0.05));
        assert_eq!(r.p99_aoi_s, Some(0.099));
        assert_eq!(r.p95_aoi_s, Some(0.095));
    }

    #[test]
    fn empty_trace() {
        assert!(matches!(
            summarize(&trace(&[])),
            Err(MetricsError::EmptyTrace)
        ));
    }

    #[test]
    fn reduction() {
        let mk = |ms: u64| summarize(&trace(&[ms])).unwrap();
        assert!((latency_reduction(&mk(1200), &mk(132)).unwrap() - 89.0).abs() < 1e-9);
        assert!((latency_reduction(&mk(1000), &mk(170)).unwrap() - 83.0).abs() < 1e-9);
        assert_eq!(latency_reduction(&mk(500), &mk(500)).unwrap(), 0.0);
        assert!(matches!(
            latency_reduction(&mk(0), &mk(0)),
            Err(MetricsError::DivisionByZero)
        ));
    }

    #[test]
    fn csv_shape() {
        let mut t = trace(&[10; 90]);
        t.frames[0] = FrameRecord::warmup(SimTime::from_nanos(11_111_111));
        let mut out = Vec::new();
        write_frames_csv(&t.frames, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 91);
        assert_eq!(text.lines().next(), Some(FRAME_CSV_HEADER));
        assert_eq!(text.lines().nth(1), Some("11111111,,,"));
        assert_eq!(
            text.lines().nth(2),
            Some("10001000000,9991000000,10000000,0.000000000")
        );
    }

    #[test]
    fn rejects_wrong_header() {
        let err = read_frames_csv("submit,origin\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MetricsError::Format { line: 1, .. }));
    }

    fn frame_strategy() -> impl Strategy<Value = FrameRecord> {
        (
            0u64..1 << 40,
            proptest::option::of((0u64..1 << 30, 0.0f64..10.0)),
        )
            .prop_map(|(submit, rest)| match rest {
                Some((age, err)) => FrameRecord::new(
                    SimTime::from_nanos(submit + age),
                    Some(SimTime::from_nanos(submit)),
                    err,
                ),
                None => FrameRecord::warmup(SimTime::from_nanos(submit)),
            })
    }

    fn merge_strategy() -> impl Strategy<Value = MergeRecord> {
        (0u64..1 << 40, "[a-z_]{1,8}", 0.0f64..5.0, 0.0f64..5.0).prop_map(|(t, id, d, s)| {
            MergeRecord {
                time: SimTime::from_nanos(t),
                id,
                delta_d: quantize(d),
                delta_angle: quantize(d * 0.5),
                max_step: quantize(s),
                strategy: "blend:0.3".into(),
            }
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(frames in proptest::collection::vec(frame_strategy(), 0..40),
                          merges in proptest::collection::vec(merge_strategy(), 0..10)) {
            let mut out = Vec::new();
            write_frames_csv(&frames, &mut out).unwrap();
            prop_assert_eq!(read_frames_csv(out.as_slice()).unwrap(), frames.clone());
            let mut out = Vec::new();
            write_merges_csv(&merges, &mut out).unwrap();
            prop_assert_eq!(read_merges_csv(out.as_slice()).unwrap(), merges.clone());
            let mut out = Vec::new();
            write_jsonl(&frames, &mut out).unwrap();
            prop_assert_eq!(read_jsonl::<FrameRecord, _>(out.as_slice()).unwrap(), frames);
        }

        #[test]
        fn summary_ignores_order(aois in proptest::collection::vec(0u64..5000, 1..60), seed in any::<u64>()) {
            let t = trace(&aois);
            let mut shuffled = t.clone();
            let n = shuffled.frames.len();
            for i in 0..n {
                let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
                shuffled.frames.swap(i, j);
            }
            shuffled.frames.sort_by_key(|f| f.submit);
            prop_assert_eq!(summarize(&t).unwrap(), summarize(&shuffled).unwrap());
            // and without re-sorting too: statistics depend on the multiset only
            shuffled.frames.reverse();
            prop_assert_eq!(summarize(&t).unwrap(), summarize(&shuffled).unwrap());
        }
    }
}
