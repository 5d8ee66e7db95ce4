//! Counters and latency histograms in a Prometheus-style text format.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Mutex;

/// Upper bounds in milliseconds.
const LATENCY_BUCKETS_MS: &[f64] = &[0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2500.0];
const BATCH_BUCKETS: &[f64] = &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0];

pub struct Histogram {
    bounds: &'static [f64],
    counts: Vec<AtomicU64>,
    /// Sum in the histogram's unit, scaled by 1000 to keep integer atomics.
    sum_milli: AtomicU64,
    count: AtomicU64,
}

impl Histogram {
    fn new(bounds: &'static [f64]) -> Self {
        Self {
            bounds,
            counts: bounds.iter().map(|_| AtomicU64::new(0)).collect(),
            sum_milli: AtomicU64::new(0),
            count: AtomicU64::new(0),
        }
    }

    pub fn observe(&self, value: f64) {
        if let Some(i) = self.bounds.iter().position(|b| value <= *b) {
            self.counts[i].fetch_add(1, Ordering::Relaxed);
        }
        self.sum_milli
            .fetch_add((value * 1000.0).round() as u64, Ordering::Relaxed);
        self.count.fetch_add(1, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    fn render(&self, out: &mut String, name: &str, labels: &str) {
        let sep = if labels.is_empty() { "" } else { "," };
        let mut cumulative = 0;
        for (b, c) in self.bounds.iter().zip(&self.counts) {
            cumulative += c.load(Ordering::Relaxed);
            let _ = writeln!(out, "{name}_bucket{{{labels}{sep}le=\"{b}\"}} {cumulative}");
        }
        let count = self.count();
        let _ = writeln!(out, "{name}_bucket{{{labels}{sep}le=\"+Inf\"}} {count}");
        let sum = self.sum_milli.load(Ordering::Relaxed) as f64 / 1000.0;
        let braces = |s: &str| if s.is_empty() { String::new() } else { format!("{{{s}}}") };
        let _ = writeln!(out, "{name}_sum{} {sum}", braces(labels));
        let _ = writeln!(out, "{name}_count{} {count}", braces(labels));
    }
}

pub const PHASES: [&str; 5] = ["tokenize", "window", "score", "aggregate", "total"];

pub struct Metrics {
    phases: Vec<Histogram>,
    batch_windows: Histogram,
    responses: Mutex<BTreeMap<u16, u64>>,
    windows_scored: AtomicU64,
    input_tokens: AtomicU64,
    rejected: AtomicU64,
    in_flight: AtomicI64,
}

impl Default for Metrics {
    fn default() -> Self {
        Self {
            phases: PHASES.iter().map(|_| Histogram::new(LATENCY_BUCKETS_MS)).collect(),
            batch_windows: Histogram::new(BATCH_BUCKETS),
            responses: Mutex::new(BTreeMap::new()),
            windows_scored: AtomicU64::new(0),
            input_tokens: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
            in_flight: AtomicI64::new(0),
        }
    }
}

impl Metrics {
    /// `phase_us` in the order of [`PHASES`].
    pub fn record_latency(&self, phase_us: [u64; 5]) {
        for (h, us) in self.phases.iter().zip(phase_us) {
            h.observe(us as f64 / 1000.0);
        }
    }

    pub fn record_batch(&self, windows: usize) {
        self.batch_windows.observe(windows as f64);
        self.windows_scored
            .fetch_add(windows as u64, Ordering::Relaxed);
    }

    pub fn record_response(&self, status: u16) {
        *self.responses.lock().expect("metrics lock").entry(status).or_default() += 1;
    }

    pub fn record_input_tokens(&self, n: usize) {
        self.input_tokens.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub fn record_rejected(&self) {
        self.rejected.fetch_add(1, Ordering::Relaxed);
    }

    pub fn in_flight_delta(&self, d: i64) {
        self.in_flight.fetch_add(d, Ordering::Relaxed);
    }

    pub fn responses(&self, status: u16) -> u64 {
        self.responses
            .lock()
            .expect("metrics lock")
            .get(&status)
            .copied()
            .unwrap_or(0)
    }

    pub fn batches(&self) -> u64 {
        self.batch_windows.count()
    }

    pub fn windows_scored(&self) -> u64 {
        self.windows_scored.load(Ordering::Relaxed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# TYPE spanguard_requests_total counter\n");
        for (status, n) in self.responses.lock().expect("metrics lock").iter() {
            let _ = writeln!(out, "spanguard_requests_total{{status=\"{status}\"}} {n}");
        }
        for (name, v) in [
            ("spanguard_rejected_total", self.rejected.load(Ordering::Relaxed)),
            ("spanguard_windows_scored_total", self.windows_scored()),
            ("spanguard_batches_total", self.batches()),
            ("spanguard_input_tokens_total", self.input_tokens.load(Ordering::Relaxed)),
        ] {
            let _ = writeln!(out, "# TYPE {name} counter\n{name} {v}");
        }
        let _ = writeln!(
            out,
            "# TYPE spanguard_in_flight gauge\nspanguard_in_flight {}",
            self.in_flight.load(Ordering::Relaxed)
        );
        out.push_str("# TYPE spanguard_phase_latency_ms histogram\n");
        for (phase, h) in PHASES.iter().zip(&self.phases) {
            h.render(&mut out, "spanguard_phase_latency_ms", &format!("phase=\"{phase}\""));
        }
        out.push_str("# TYPE spanguard_batch_windows histogram\n");
        self.batch_windows.render(&mut out, "spanguard_batch_windows", "");
        out
    }
}
