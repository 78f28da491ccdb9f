//! The steering proxy between operator commands and the vehicle, and the
//! three-stage (parse / infer / control) runtime that hosts it.
//!
//! Stages are joined by single-slot latest-wins mailboxes: a producer never
//! waits, it replaces whatever the consumer has not picked up yet. A slow
//! inference stage therefore skips frames instead of queueing them.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::datapipe::{frame_input, Class, DEFAULT_FLOW_SCALE};
use crate::error::{invalid, Result};
use crate::flowcore::MaskSpec;
use crate::mvcodec::{FrameStreamReader, GridSpec, MotionVectorFrame};
use crate::tinynet::{argmax, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub klass: Class,
    pub probs: [f64; 3],
    pub final_steer: f64,
    pub source_seq: u32,
    /// Time from frame arrival to the decision being produced.
    pub inference_age_us: u64,
}

impl Decision {
    /// Pass the operator's steer through untouched.
    pub fn passthrough(desired_steer: f64, source_seq: u32) -> Self {
        Self {
            klass: Class::None,
            probs: [0.0, 1.0, 0.0],
            final_steer: desired_steer.clamp(0.0, 1.0),
            source_seq,
            inference_age_us: 0,
        }
    }

    pub fn is_override(&self) -> bool {
        self.klass != Class::None
    }
}

/// Argmax class (ties to the lower index); left/right override to full lock.
pub fn decide_classification(probs: [f64; 3], desired_steer: f64) -> Decision {
    let klass = Class::from_index(argmax(&probs)).unwrap_or(Class::None);
    let final_steer = match klass {
        Class::Left => 0.0,
        Class::Right => 1.0,
        Class::None => desired_steer.clamp(0.0, 1.0),
    };
    Decision { klass, probs, final_steer, source_seq: 0, inference_age_us: 0 }
}

pub fn decide_regression(net_output: f64) -> Decision {
    Decision {
        klass: Class::None,
        probs: [0.0, 1.0, 0.0],
        final_steer: if net_output.is_nan() { 0.5 } else { net_output.clamp(0.0, 1.0) },
        source_seq: 0,
        inference_age_us: 0,
    }
}

/// Optional hysteresis: an override must be predicted on `confirm_frames`
/// consecutive inferences before it is applied. `confirm_frames <= 1` is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverrideFilter {
    pub confirm_frames: u32,
    streak: u32,
    last: Option<Class>,
}

impl OverrideFilter {
    pub fn new(confirm_frames: u32) -> Self {
        Self { confirm_frames, streak: 0, last: None }
    }

    pub fn apply(&mut self, d: Decision, desired_steer: f64) -> Decision {
        if self.last == Some(d.klass) {
            self.streak += 1;
        } else {
            self.streak = 1;
            self.last = Some(d.klass);
        }
        if d.is_override() && self.streak < self.confirm_frames {
            Decision { klass: Class::None, final_steer: desired_steer.clamp(0.0, 1.0), ..d }
        } else {
            d
        }
    }
}

/// A frame ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFrame {
    pub seq: u32,
    pub desired_steer: f64,
    /// Masked, scaled flow tensor.
    pub input: Vec<f32>,
}

/// Anything that can turn a parsed frame into a decision.
pub trait Model: Send {
    fn decide(&mut self, frame: &ParsedFrame) -> Result<Decision>;

    /// True if `final_steer` is the model's own output (regression), so a
    /// held "none" decision must not be replaced by the live desired steer.
    fn steers_directly(&self) -> bool {
        false
    }
}

impl<F: FnMut(&ParsedFrame) -> Result<Decision> + Send> Model for F {
    fn decide(&mut self, frame: &ParsedFrame) -> Result<Decision> {
        self(frame)
    }
}

/// Trained network plus the decision rule for its head.
#[derive(Debug, Clone)]
pub struct ProxyModel {
    pub net: Network<f32>,
}

impl ProxyModel {
    pub fn new(net: Network<f32>) -> Result<Self> {
        match (net.output_len(), net.arch().side_inputs) {
            (3, 0) | (1, 1) => Ok(Self { net }),
            (o, s) => Err(invalid(format!("proxy needs a 3-class or 1-output steer network, got {o} outputs, {s} side inputs"))),
        }
    }

    pub fn is_regression(&self) -> bool {
        self.net.output_len() == 1
    }
}

impl Model for ProxyModel {
    fn decide(&mut self, frame: &ParsedFrame) -> Result<Decision> {
        let d = if self.is_regression() {
            let y = self.net.predict(&frame.input, &[frame.desired_steer as f32])?;
            decide_regression(f64::from(y[0]))
        } else {
            let y = self.net.predict(&frame.input, &[])?;
            decide_classification([y[0].into(), y[1].into(), y[2].into()], frame.desired_steer)
        };
        Ok(Decision { source_seq: frame.seq, ..d })
    }

    fn steers_directly(&self) -> bool {
        self.is_regression()
    }
}

/// Single-slot mailbox where `put` replaces any unread item.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self { slot: Mutex::new((None, false)), ready: Condvar::new() }
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store `item`; returns true if an unread item was overwritten.
    pub fn put(&self, item: T) -> bool {
        let mut g = self.slot.lock().unwrap();
        let replaced = g.0.replace(item).is_some();
        self.ready.notify_one();
        replaced
    }

    pub fn try_take(&self) -> Option<T> {
        self.slot.lock().unwrap().0.take()
    }

    /// Wait up to `timeout` for an item. `Err(())` once closed and empty.
    pub fn take_timeout(&self, timeout: Duration) -> std::result::Result<Option<T>, ()> {
        let g = self.slot.lock().unwrap();
        let (mut g, _) = self.ready.wait_timeout_while(g, timeout, |s| s.0.is_none() && !s.1).unwrap();
        match g.0.take() {
            Some(v) => Ok(Some(v)),
            None if g.1 => Err(()),
            None => Ok(None),
        }
    }

    /// No more items will be put; waiting consumers wake up.
    pub fn close(&self) {
        self.slot.lock().unwrap().1 = true;
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.slot.lock().unwrap().1
    }

    /// Items currently held (0 or 1).
    pub fn len(&self) -> usize {
        usize::from(self.slot.lock().unwrap().0.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One unit from the frame source: FGMV-framed bytes (any chunking) plus the
/// operator's desired steer at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceChunk {
    pub bytes: Vec<u8>,
    pub desired_steer: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Wire grid of incoming frames.
    pub grid: GridSpec,
    pub mask: MaskSpec,
    pub flow_scale: f64,
    /// Minimum spacing between inference starts (rate limit), if any.
    pub inference_min_interval: Option<Duration>,
    pub filter: OverrideFilter,
    /// Cooperative stop; all stages exit within one iteration once set.
    pub stop: Arc<AtomicBool>,
}

impl PipelineConfig {
    pub fn new(grid: GridSpec, mask: MaskSpec) -> Self {
        Self {
            grid,
            mask,
            flow_scale: DEFAULT_FLOW_SCALE,
            inference_min_interval: None,
            filter: OverrideFilter::default(),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub frames_parsed: u64,
    pub frames_inferred: u64,
    /// Parsed frames replaced in the mailbox before inference saw them.
    pub frames_skipped: u64,
    pub decisions_applied: u64,
    /// Decisions replaced before the control stage applied them.
    pub decisions_superseded: u64,
    pub inference_errors: u64,
    pub resync_bytes: u64,
    /// Applied decisions whose seq was lower than an earlier applied one.
    pub freshness_violations: u64,
    pub max_mailbox_items: usize,
    /// Arrival-to-apply latency of each applied decision (us).
    pub latencies_us: Vec<u64>,
    /// Whole run, including the drain after the source ends.
    pub elapsed_s: f64,
    /// Time the parse stage was running.
    pub parse_elapsed_s: f64,
}

impl PipelineStats {
    pub fn parse_rate(&self) -> f64 {
        self.frames_parsed as f64 / self.parse_elapsed_s.max(1e-9)
    }

    pub fn inference_rate(&self) -> f64 {
        self.frames_inferred as f64 / self.elapsed_s.max(1e-9)
    }

    pub fn skip_rate(&self) -> f64 {
        self.frames_skipped as f64 / self.parse_elapsed_s.max(1e-9)
    }

    pub fn latency_percentile_us(&self, p: f64) -> u64 {
        if self.latencies_us.is_empty() {
            return 0;
        }
        let mut v = self.latencies_us.clone();
        v.sort_unstable();
        let k = ((v.len() - 1) as f64 * p.clamp(0.0, 1.0)).round() as usize;
        v[k]
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "frames_parsed={}\nframes_inferred={}\nframes_skipped={}\ndecisions_applied={}\ndecisions_superseded={}\n\
             inference_errors={}\nresync_bytes={}\nfreshness_violations={}\nmax_mailbox_items={}\nelapsed_s={:.3}\n\
             parse_rate={:.2}\ninference_rate={:.2}\nskip_rate={:.2}\nlatency_p50_us={}\nlatency_p99_us={}\n",
            self.frames_parsed,
            self.frames_inferred,
            self.frames_skipped,
            self.decisions_applied,
            self.decisions_superseded,
            self.inference_errors,
            self.resync_bytes,
            self.freshness_violations,
            self.max_mailbox_items,
            self.elapsed_s,
            self.parse_rate(),
            self.inference_rate(),
            self.skip_rate(),
            self.latency_percentile_us(0.5),
            self.latency_percentile_us(0.99),
        )
    }
}

struct Timed<T> {
    item: T,
    arrived: Instant,
}

/// How long a blocked stage waits before re-checking the stop flag.
const POLL: Duration = Duration::from_millis(20);

/// Run parse, inference and control on three threads until the source is
/// exhausted (then drain) or `cfg.stop` is set. `sink` receives every applied
/// decision; between decisions the vehicle keeps the last one.
pub fn run_pipeline<S, M, K>(source: S, model: M, mut sink: K, cfg: PipelineConfig) -> PipelineStats
where
    S: Iterator<Item = SourceChunk> + Send,
    M: Model,
    K: FnMut(&Decision) + Send,
{
    let frames: Mailbox<Timed<ParsedFrame>> = Mailbox::new();
    let decisions: Mailbox<Timed<Decision>> = Mailbox::new();
    let start = Instant::now();
    let stop = cfg.stop.clone();

    let (parse, infer, control) = thread::scope(|s| {
        let parse = s.spawn(|| {
            let mut st = PipelineStats::default();
            let mut reader = FrameStreamReader::new(cfg.grid);
            for chunk in source {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                reader.push(&chunk.bytes);
                while let Some(frame) = reader.next_frame() {
                    let arrived = Instant::now();
                    let input = match frame_input(&frame, &cfg.mask, cfg.flow_scale) {
                        Ok(v) => v,
                        Err(_) => continue,
                    };
                    st.frames_parsed += 1;
                    let parsed = ParsedFrame { seq: frame.seq, desired_steer: chunk.desired_steer, input };
                    if frames.put(Timed { item: parsed, arrived }) {
                        st.frames_skipped += 1;
                    }
                    st.max_mailbox_items = st.max_mailbox_items.max(frames.len());
                }
            }
            st.resync_bytes = reader.skipped_bytes();
            st.parse_elapsed_s = start.elapsed().as_secs_f64();
            frames.close();
            st
        });

        let infer = s.spawn(|| {
            let mut model = model;
            let mut filter = cfg.filter;
            let mut st = PipelineStats::default();
            let mut next_slot = Instant::now();
            loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                if cfg.inference_min_interval.is_some() {
                    let now = Instant::now();
                    if now < next_slot {
                        thread::sleep(next_slot - now);
                    }
                }
                let t = match frames.take_timeout(POLL) {
                    Ok(Some(t)) => t,
                    Ok(None) => continue,
                    Err(()) => break,
                };
                if let Some(interval) = cfg.inference_min_interval {
                    next_slot = Instant::now() + interval;
                }
                st.frames_inferred += 1;
                let d = match model.decide(&t.item) {
                    Ok(d) => filter.apply(d, t.item.desired_steer),
                    Err(_) => {
                        st.inference_errors += 1;
                        Decision::passthrough(t.item.desired_steer, t.item.seq)
                    }
                };
                let d = Decision { source_seq: t.item.seq, inference_age_us: t.arrived.elapsed().as_micros() as u64, ..d };
                if decisions.put(Timed { item: d, arrived: t.arrived }) {
                    st.decisions_superseded += 1;
                }
                st.max_mailbox_items = st.max_mailbox_items.max(decisions.len());
            }
            decisions.close();
            st
        });

        let control = s.spawn(|| {
            let mut st = PipelineStats::default();
            let mut last_seq: Option<u32> = None;
            loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let t = match decisions.take_timeout(POLL) {
                    Ok(Some(t)) => t,
                    Ok(None) => continue,
                    Err(()) => break,
                };
                if last_seq.is_some_and(|l| t.item.source_seq < l) {
                    st.freshness_violations += 1;
                }
                last_seq = Some(t.item.source_seq);
                sink(&t.item);
                st.decisions_applied += 1;
                st.latencies_us.push(t.arrived.elapsed().as_micros() as u64);
            }
            st
        });

        (parse.join().unwrap(), infer.join().unwrap(), control.join().unwrap())
    });

    PipelineStats {
        frames_parsed: parse.frames_parsed,
        // A frame still in the mailbox at shutdown was parsed but never inferred.
        frames_skipped: parse.frames_skipped + frames.len() as u64,
        resync_bytes: parse.resync_bytes,
        frames_inferred: infer.frames_inferred,
        inference_errors: infer.inference_errors,
        decisions_superseded: infer.decisions_superseded + decisions.len() as u64,
        decisions_applied: control.decisions_applied,
        freshness_violations: control.freshness_violations,
        latencies_us: control.latencies_us,
        max_mailbox_items: parse.max_mailbox_items.max(infer.max_mailbox_items),
        elapsed_s: start.elapsed().as_secs_f64(),
        parse_elapsed_s: parse.parse_elapsed_s,
    }
}

/// Iterator adaptor that releases items at a fixed rate (wall clock).
pub struct Paced<I> {
    inner: I,
    interval: Duration,
    next: Option<Instant>,
}

pub fn paced<I: Iterator>(inner: I, rate_hz: f64) -> Paced<I> {
    Paced { inner, interval: Duration::from_secs_f64(1.0 / rate_hz), next: None }
}

impl<I: Iterator> Iterator for Paced<I> {
    type Item = I::Item;
    fn next(&mut self) -> Option<I::Item> {
        let due = *self.next.get_or_insert_with(Instant::now);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        self.next = Some(due + self.interval);
        self.inner.next()
    }
}

/// Deterministic single-threaded rendition of the same stages for simulation:
/// every tick a frame is parsed; every `inference_every` ticks the newest
/// frame is inferred; in between the last decision is held. Skipped frames
/// are counted exactly as the threaded runtime would.
#[derive(Debug)]
pub struct SyncProxy<M> {
    pub model: M,
    pub grid: GridSpec,
    pub mask: MaskSpec,
    pub flow_scale: f64,
    pub inference_every: u32,
    pub filter: OverrideFilter,
    pending: Option<ParsedFrame>,
    held: Option<Decision>,
    tick: u64,
    pub stats: PipelineStats,
}

impl<M: Model> SyncProxy<M> {
    pub fn new(model: M, grid: GridSpec, mask: MaskSpec) -> Self {
        Self {
            model,
            grid,
            mask,
            flow_scale: DEFAULT_FLOW_SCALE,
            inference_every: 1,
            filter: OverrideFilter::default(),
            pending: None,
            held: None,
            tick: 0,
            stats: PipelineStats::default(),
        }
    }

    /// Feed one framed FGMV chunk and the operator's desired steer; returns
    /// the decision in force after this tick.
    pub fn step(&mut self, framed: &[u8], desired_steer: f64) -> Decision {
        let mut reader = FrameStreamReader::new(self.grid);
        reader.push(framed);
        while let Some(frame) = reader.next_frame() {
            self.stats.frames_parsed += 1;
            match self.parse(&frame, desired_steer) {
                Ok(p) => {
                    if self.pending.replace(p).is_some() {
                        self.stats.frames_skipped += 1;
                    }
                }
                Err(_) => self.stats.inference_errors += 1,
            }
        }
        self.stats.resync_bytes += reader.skipped_bytes();
        if self.tick % u64::from(self.inference_every.max(1)) == 0 {
            if let Some(p) = self.pending.take() {
                self.stats.frames_inferred += 1;
                let d = match self.model.decide(&p) {
                    Ok(d) => self.filter.apply(d, p.desired_steer),
                    Err(_) => {
                        self.stats.inference_errors += 1;
                        Decision::passthrough(p.desired_steer, p.seq)
                    }
                };
                self.held = Some(Decision { source_seq: p.seq, ..d });
                self.stats.decisions_applied += 1;
            }
        }
        self.tick += 1;
        match self.held {
            // A held "none" decision follows the operator's current steer.
            Some(d) if d.klass == Class::None && !self.model.steers_directly() => {
                Decision { final_steer: desired_steer.clamp(0.0, 1.0), ..d }
            }
            Some(d) => d,
            None => Decision::passthrough(desired_steer, 0),
        }
    }

    fn parse(&self, frame: &MotionVectorFrame, desired_steer: f64) -> Result<ParsedFrame> {
        Ok(ParsedFrame { seq: frame.seq, desired_steer, input: frame_input(frame, &self.mask, self.flow_scale)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_rule() {
        let d = decide_classification([0.1, 0.8, 0.1], 0.7);
        assert_eq!((d.klass, d.final_steer), (Class::None, 0.7));
        let d = decide_classification([0.9, 0.05, 0.05], 0.7);
        assert_eq!((d.klass, d.final_steer), (Class::Left, 0.0));
        let d = decide_classification([0.2, 0.2, 0.6], 0.3);
        assert_eq!((d.klass, d.final_steer), (Class::Right, 1.0));
        assert_eq!(decide_classification([0.4, 0.4, 0.2], 0.5).klass, Class::Left);
        assert_eq!(decide_classification([0.2, 0.4, 0.4], 0.5).klass, Class::None);
    }

    #[test]
    fn regression_rule() {
        assert_eq!(decide_regression(0.5).final_steer, 0.5);
        assert_eq!(decide_regression(1.3).final_steer, 1.0);
        assert_eq!(decide_regression(-0.2).final_steer, 0.0);
        assert_eq!(decide_regression(0.5).klass, Class::None);
    }

    #[test]
    fn mailbox_latest_wins() {
        let m = Mailbox::new();
        assert!(!m.put(1));
        assert!(m.put(2));
        assert_eq!(m.len(), 1);
        assert_eq!(m.try_take(), Some(2));
        assert_eq!(m.take_timeout(Duration::from_millis(1)), Ok(None));
        m.put(3);
        m.close();
        assert_eq!(m.take_timeout(Duration::from_millis(1)), Ok(Some(3)));
        assert_eq!(m.take_timeout(Duration::from_millis(1)), Err(()));
    }

    #[test]
    fn filter_needs_consecutive_overrides() {
        let mut f = OverrideFilter::new(2);
        let left = decide_classification([0.9, 0.05, 0.05], 0.6);
        assert_eq!(f.apply(left, 0.6).klass, Class::None);
        assert_eq!(f.apply(left, 0.6).klass, Class::Left);
        let mut off = OverrideFilter::default();
        assert_eq!(off.apply(left, 0.6).klass, Class::Left);
    }
}
