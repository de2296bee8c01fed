//! Traffic measurement: per-direction write traces, ECDFs, the two-sample
//! Kolmogorov–Smirnov test and overhead accounting.

mod sim;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sim::{run_trial, HandshakeMode, SimOptions, TrialOutcome};

/// Modeled IP + TCP header cost per recorded segment.
pub const SEGMENT_HEADER_BYTES: u64 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    C2S,
    S2C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts_us: u64,
    pub dir: Direction,
    pub bytes: u64,
}

/// Wire writes in timestamp order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    records: Vec<TraceRecord>,
}

impl FlowTrace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record. Timestamps must not go backwards and every write
    /// carries at least one byte.
    pub fn push(&mut self, ts_us: u64, dir: Direction, bytes: u64) -> Result<()> {
        if bytes == 0 {
            return Err(Error::Stats("empty wire write"));
        }
        if self.records.last().is_some_and(|r| r.ts_us > ts_us) {
            return Err(Error::Stats("trace timestamps must be non-decreasing"));
        }
        self.records.push(TraceRecord { ts_us, dir, bytes });
        Ok(())
    }

    /// Builds a trace from records in any order; ties keep their order.
    pub fn from_unsorted(mut records: Vec<TraceRecord>) -> Result<Self> {
        if records.iter().any(|r| r.bytes == 0) {
            return Err(Error::Stats("empty wire write"));
        }
        records.sort_by_key(|r| r.ts_us);
        Ok(FlowTrace { records })
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn direction(&self, dir: Direction) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.dir == dir)
    }

    /// Write lengths in one direction.
    pub fn lengths(&self, dir: Direction) -> Vec<f64> {
        self.direction(dir).map(|r| r.bytes as f64).collect()
    }

    /// Gaps between consecutive writes in one direction, in microseconds.
    pub fn inter_arrival_us(&self, dir: Direction) -> Vec<f64> {
        let ts: Vec<u64> = self.direction(dir).map(|r| r.ts_us).collect();
        ts.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
    }

    pub fn wire_bytes(&self, dir: Direction) -> u64 {
        self.direction(dir).map(|r| r.bytes).sum()
    }

    pub fn duration_us(&self) -> u64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.ts_us - a.ts_us,
            _ => 0,
        }
    }
}

/// Thread-safe recorder for live connections, timestamped against a
/// monotonic clock started at construction.
#[derive(Debug, Clone)]
pub struct Tap {
    start: Instant,
    trace: Arc<Mutex<FlowTrace>>,
}

impl Default for Tap {
    fn default() -> Self {
        Self::new()
    }
}

impl Tap {
    pub fn new() -> Self {
        Tap { start: Instant::now(), trace: Arc::default() }
    }

    pub fn record(&self, dir: Direction, bytes: usize) {
        if bytes == 0 {
            return;
        }
        let now = self.start.elapsed().as_micros() as u64;
        let mut trace = self.trace.lock().expect("tap lock");
        // Writers racing for the lock may arrive slightly out of order.
        let ts = trace.records.last().map_or(now, |r| r.ts_us.max(now));
        trace.records.push(TraceRecord { ts_us: ts, dir, bytes: bytes as u64 });
    }

    pub fn snapshot(&self) -> FlowTrace {
        self.trace.lock().expect("tap lock").clone()
    }
}

/// Empirical CDF as a right-continuous step function.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    support: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn ecdf(samples: &[f64]) -> Result<Ecdf> {
    if samples.is_empty() {
        return Err(Error::Stats("ECDF of an empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Stats("NaN sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut support = Vec::new();
    let mut cumulative = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if support.last() == Some(&x) {
            *cumulative.last_mut().unwrap() = (i + 1) as f64 / n;
        } else {
            support.push(x);
            cumulative.push((i + 1) as f64 / n);
        }
    }
    Ok(Ecdf { support, cumulative })
}

impl Ecdf {
    pub fn eval(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s <= x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Distinct sample values, ascending.
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// `F` at each support point.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }
}

/// Asymptotic critical coefficient `c(alpha)` of the two-sample K-S test.
pub fn ks_critical_coefficient(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov–Smirnov test of `a` and `b` at level `alpha`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Stats("alpha must lie in (0, 1)"));
    }
    let fa = ecdf(a)?;
    let fb = ecdf(b)?;
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < fa.support.len() || j < fb.support.len() {
        let xa = fa.support.get(i).copied().unwrap_or(f64::INFINITY);
        let xb = fb.support.get(j).copied().unwrap_or(f64::INFINITY);
        let x = xa.min(xb);
        if xa == x {
            ca = fa.cumulative[i];
            i += 1;
        }
        if xb == x {
            cb = fb.cumulative[j];
            j += 1;
        }
        d = d.max((ca - cb).abs());
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let critical = ks_critical_coefficient(alpha) * ((na + nb) / (na * nb)).sqrt();
    Ok(KsOutcome { statistic: d, critical, reject: d > critical })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Application bytes per second over the trace's span; zero for a
    /// trace without duration.
    pub goodput: f64,
    /// Kilobytes (1000 bytes), headers included.
    pub c2s_kbytes: f64,
    pub s2c_kbytes: f64,
    pub total_overhead: f64,
    pub app_bytes: u64,
    pub segments: u64,
}

pub fn overhead_report(trace: &FlowTrace, app_bytes_delivered: u64) -> OverheadReport {
    let cost = |dir| {
        trace.direction(dir).map(|r| r.bytes + SEGMENT_HEADER_BYTES).sum::<u64>()
    };
    let (c2s, s2c) = (cost(Direction::C2S), cost(Direction::S2C));
    let total = c2s + s2c;
    let total_overhead = if total == 0 {
        0.0
    } else {
        (total as f64 - app_bytes_delivered as f64) / total as f64
    };
    let span = trace.duration_us();
    let goodput = if span == 0 { 0.0 } else { app_bytes_delivered as f64 / (span as f64 / 1e6) };
    OverheadReport {
        goodput,
        c2s_kbytes: c2s as f64 / 1000.0,
        s2c_kbytes: s2c as f64 / 1000.0,
        total_overhead,
        app_bytes: app_bytes_delivered,
        segments: trace.len() as u64,
    }
}

/// One measured transfer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: String,
    pub size: u64,
    #[serde(flatten)]
    pub overhead: OverheadReport,
    pub mean_delay_ms: f64,
}

/// K-S comparison of two trials' write lengths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsComparison {
    pub a: usize,
    pub b: usize,
    pub direction: Direction,
    pub alpha: f64,
    #[serde(flatten)]
    pub outcome: KsOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub trials: Vec<TrialSummary>,
    pub ks: Vec<KsComparison>,
    pub mean_overhead: f64,
    pub sd_overhead: f64,
    pub mean_goodput: f64,
}

impl RunReport {
    /// Summarizes trials and compares each consecutive pair's write lengths
    /// per direction.
    pub fn new(trials: Vec<TrialSummary>, traces: &[FlowTrace], alpha: f64) -> Result<Self> {
        let mut ks = Vec::new();
        for (i, pair) in traces.windows(2).enumerate() {
            for dir in [Direction::C2S, Direction::S2C] {
                let outcome = ks_two_sample(&pair[0].lengths(dir), &pair[1].lengths(dir), alpha)?;
                ks.push(KsComparison { a: i, b: i + 1, direction: dir, alpha, outcome });
            }
        }
        let n = trials.len().max(1) as f64;
        let mean_overhead = trials.iter().map(|t| t.overhead.total_overhead).sum::<f64>() / n;
        let var = trials
            .iter()
            .map(|t| (t.overhead.total_overhead - mean_overhead).powi(2))
            .sum::<f64>()
            / (n - 1.0).max(1.0);
        let mean_goodput = trials.iter().map(|t| t.overhead.goodput).sum::<f64>() / n;
        Ok(RunReport { trials, ks, mean_overhead, sd_overhead: var.sqrt(), mean_goodput })
    }
}

/// Writes `report.json`, one `trace-N.ndjson` and one `ecdf-N.tsv` per trace
/// into `out_dir`, creating it if needed.
///
/// ECDF rows are `metric  direction  x  F` where metric is `length` (bytes)
/// or `iat_us` (inter-arrival time).
pub fn emit_report(report: &RunReport, traces: &[FlowTrace], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out_dir.join("report.json"), json + "\n")?;

    for (i, trace) in traces.iter().enumerate() {
        let mut w = BufWriter::new(fs::File::create(out_dir.join(format!("trace-{i}.ndjson")))?);
        for r in trace.records() {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(out_dir.join(format!("ecdf-{i}.tsv")))?);
        writeln!(w, "metric\tdirection\tx\tF")?;
        for dir in [Direction::C2S, Direction::S2C] {
            for (metric, samples) in
                [("length", trace.lengths(dir)), ("iat_us", trace.inter_arrival_us(dir))]
            {
                if samples.is_empty() {
                    continue;
                }
                let f = ecdf(&samples)?;
                for (x, p) in f.support().iter().zip(f.cumulative()) {
                    writeln!(w, "{metric}\t{dir:?}\t{x}\t{p}")?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Direct definition: largest gap at any point of the merged support.
    fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
        let frac = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (frac(a, x) - frac(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ecdf_examples() {
        let f = ecdf(&[5.0]).unwrap();
        assert_eq!(f.eval(4.999), 0.0);
        assert_eq!(f.eval(5.0), 1.0);
        assert_eq!(f.eval(1e9), 1.0);

        let f = ecdf(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(f.eval(2.0), 0.75);
        assert_eq!(f.eval(1.5), 0.25);
        assert_eq!(f.eval(3.9), 0.75);
        assert_eq!(f.support(), &[1.0, 2.0, 4.0]);
        assert_eq!(*f.cumulative().last().unwrap(), 1.0);
        assert!(ecdf(&[]).is_err());
        assert!(ecdf(&[f64::NAN]).is_err());
    }

    #[test]
    fn ecdf_of_uniform_lengths_within_dkw_band() {
        let mut rng = ChaCha20Rng::from_seed([4; 32]);
        let n = 10_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(1..=1460) as f64).collect();
        let f = ecdf(&samples).unwrap();
        let eps = ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt();
        for x in 0..=1461 {
            let truth = (x.clamp(0, 1460) as f64) / 1460.0;
            assert!((f.eval(x as f64) - truth).abs() <= eps, "x={x}");
        }
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..500).map(|i| (i % 37) as f64).collect();
        let r = ks_two_sample(&a, &a, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);

        let r = ks_two_sample(&[100.0; 1000], &[200.0; 1000], 0.05).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.reject);
    }

    #[test]
    fn ks_critical_value_at_five_percent() {
        assert!((ks_critical_coefficient(0.05) - 1.358_1).abs() < 1e-4);
        let r = ks_two_sample(&[1.0; 100], &[1.0; 100], 0.05).unwrap();
        assert!((r.critical - 1.358_1 * (0.02f64).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn ks_matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha20Rng::from_seed([8; 32]);
        for _ in 0..50 {
            let na = rng.random_range(1..200);
            let nb = rng.random_range(1..200);
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..60) as f64).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..60) as f64 + 0.5).collect();
            let ab = ks_two_sample(&a, &b, 0.05).unwrap();
            let ba = ks_two_sample(&b, &a, 0.05).unwrap();
            assert!((ab.statistic - brute_force_d(&a, &b)).abs() < 1e-12);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab.statistic));
        }
    }

    #[test]
    fn ks_rejects_bad_input() {
        assert!(ks_two_sample(&[], &[1.0], 0.05).is_err());
        assert!(ks_two_sample(&[1.0], &[], 0.05).is_err());
        assert!(ks_two_sample(&[1.0], &[1.0], 0.0).is_err());
        assert!(ks_two_sample(&[1.0], &[1.0], 1.5).is_err());
    }

    #[test]
    fn overhead_arithmetic() {
        let mut t = FlowTrace::new();
        t.push(0, Direction::C2S, 1021).unwrap();
        let r = overhead_report(&t, 1000);
        assert_eq!(r.total_overhead, (1061.0 - 1000.0) / 1061.0);
        assert_eq!(r.c2s_kbytes, 1.061);
        assert_eq!(r.s2c_kbytes, 0.0);
        assert_eq!(r.goodput, 0.0);

        let r = overhead_report(&t, 0);
        assert_eq!(r.total_overhead, 1.0);

        t.push(2_000_000, Direction::S2C, 60).unwrap();
        let r = overhead_report(&t, 1000);
        assert_eq!(r.goodput, 500.0);
        assert_eq!(r.segments, 2);
    }

    #[test]
    fn trace_invariants() {
        let mut t = FlowTrace::new();
        t.push(10, Direction::C2S, 5).unwrap();
        assert!(t.push(9, Direction::C2S, 5).is_err());
        assert!(t.push(10, Direction::C2S, 0).is_err());
        t.push(10, Direction::S2C, 7).unwrap();
        t.push(30, Direction::C2S, 9).unwrap();
        assert_eq!(t.lengths(Direction::C2S), vec![5.0, 9.0]);
        assert_eq!(t.inter_arrival_us(Direction::C2S), vec![20.0]);
        assert_eq!(t.wire_bytes(Direction::S2C), 7);

        let sorted = FlowTrace::from_unsorted(t.records().iter().rev().copied().collect()).unwrap();
        assert!(sorted.records().windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
    }

    #[test]
    fn tap_records_monotonic_timestamps() {
        let tap = Tap::new();
        let handles: Vec<_> = (0..4)
            .map(|i| {
                let tap = tap.clone();
                std::thread::spawn(move || {
                    for n in 1..200 {
                        let dir = if i % 2 == 0 { Direction::C2S } else { Direction::S2C };
                        tap.record(dir, n);
                    }
                    tap.record(Direction::C2S, 0);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let trace = tap.snapshot();
        assert_eq!(trace.len(), 4 * 199);
        assert!(trace.records().windows(2).all(|w| w[0].ts_us <= w[1].ts_us));
    }

    #[test]
    fn emitted_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = FlowTrace::new();
        t.push(0, Direction::C2S, 100).unwrap();
        t.push(5, Direction::S2C, 200).unwrap();
        t.push(9, Direction::C2S, 300).unwrap();
        let summary = TrialSummary {
            trial: 0,
            seed: "00".into(),
            size: 10,
            overhead: overhead_report(&t, 10),
            mean_delay_ms: 0.0,
        };
        let traces = vec![t.clone(), t];
        let report = RunReport::new(vec![summary.clone(), summary], &traces, 0.05).unwrap();
        assert_eq!(report.ks.len(), 2);
        emit_report(&report, &traces, dir.path()).unwrap();

        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["trials"].as_array().unwrap().len(), 2);
        assert!(json["trials"][0]["total_overhead"].is_number());

        let lines = fs::read_to_string(dir.path().join("trace-1.ndjson")).unwrap();
        let first: TraceRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first, TraceRecord { ts_us: 0, dir: Direction::C2S, bytes: 100 });

        let tsv = fs::read_to_string(dir.path().join("ecdf-0.tsv")).unwrap();
        assert!(tsv.starts_with("metric\tdirection\tx\tF\n"));
        assert!(tsv.contains("length\tC2S\t300\t1\n"));
        assert!(tsv.contains("iat_us\tC2S\t9\t1\n"));
    }
}
