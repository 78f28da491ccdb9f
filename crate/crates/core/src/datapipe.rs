//! Recorded samples, the FGDS dataset file, labeling, balancing, splitting
//! and conversion to network examples.
//!
//! FGDS layout (little-endian):
//! ```text
//! "FGDS" | u16 version | u16 cols | u16 rows | u32 count
//! per sample: u64 timestamp_us | u16 desired (0..=10000) | u16 corrected
//!             | u8 override | i8 manual_label | i16 speed_mm_s
//!             | rows*cols x {i8 dx, i8 dy, u16 sad}   (no pad column)
//! ```

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flowcore::{apply_mask, mv_to_flowfield, MaskSpec};
use crate::mvcodec::{GridSpec, MotionVector, MotionVectorFrame, RECORD_BYTES};
use crate::tinynet::Example;

pub const MAGIC: &[u8; 4] = b"FGDS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 2 + 2 + 4;
/// Per-sample bytes before the flow payload.
pub const SAMPLE_META_BYTES: usize = 8 + 2 + 2 + 1 + 1 + 2;
/// Steering fixed-point denominator.
pub const STEER_SCALE: f64 = 10000.0;
pub const DEFAULT_DEADBAND: f64 = 0.1;

/// Steering decision class; the discriminant is the one-hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Left = 0,
    None = 1,
    Right = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Left, Class::None, Class::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> Vec<f32> {
        let mut v = vec![0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Left => "left",
            Class::None => "none",
            Class::Right => "right",
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Class {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "0" => Ok(Class::Left),
            "none" | "1" => Ok(Class::None),
            "right" | "2" => Ok(Class::Right),
            _ => Err(invalid(format!("unknown class '{s}' (left | none | right)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub flow: MotionVectorFrame,
    pub desired_steer: f64,
    pub corrected_steer: f64,
    pub override_active: bool,
    /// m/s.
    pub speed: f64,
    pub manual_label: Option<Class>,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    /// Grid of every sample's flow (no pad column).
    pub grid: GridSpec,
    /// In recording order.
    pub samples: Vec<Sample>,
}

impl DatasetFile {
    pub fn new(grid: GridSpec) -> Self {
        Self { grid: grid.without_pad(), samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Bytes of one stored sample.
pub fn sample_bytes(grid: GridSpec) -> usize {
    SAMPLE_META_BYTES + grid.cells() * RECORD_BYTES
}

fn steer_to_fixed(s: f64) -> Result<u16> {
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(format!("steer {s} outside [0, 1]")));
    }
    Ok((s * STEER_SCALE).round() as u16)
}

pub fn encode_dataset(ds: &DatasetFile) -> Result<Vec<u8>> {
    let grid = ds.grid.without_pad();
    let dim = |v: usize, what: &str| u16::try_from(v).map_err(|_| invalid(format!("{what} {v} exceeds u16")));
    let count = u32::try_from(ds.samples.len()).map_err(|_| invalid("too many samples"))?;
    let mut out = Vec::with_capacity(HEADER_BYTES + ds.samples.len() * sample_bytes(grid));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&dim(grid.cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&dim(grid.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (i, s) in ds.samples.iter().enumerate() {
        if s.flow.grid.cols != grid.cols || s.flow.grid.rows != grid.rows || s.flow.vectors.len() != grid.cells() {
            return Err(invalid(format!("sample {i} grid differs from the dataset grid")));
        }
        let speed_mm = (s.speed * 1000.0).round();
        if !(i16::MIN as f64..=i16::MAX as f64).contains(&speed_mm) {
            return Err(invalid(format!("sample {i} speed {} m/s out of range", s.speed)));
        }
        out.extend_from_slice(&s.timestamp_us.to_le_bytes());
        out.extend_from_slice(&steer_to_fixed(s.desired_steer)?.to_le_bytes());
        out.extend_from_slice(&steer_to_fixed(s.corrected_steer)?.to_le_bytes());
        out.push(u8::from(s.override_active));
        out.push(s.manual_label.map_or(-1i8, |c| c.index() as i8) as u8);
        out.extend_from_slice(&(speed_mm as i16).to_le_bytes());
        for mv in &s.flow.vectors {
            out.push(mv.dx as u8);
            out.push(mv.dy as u8);
            out.extend_from_slice(&mv.sad.to_le_bytes());
        }
    }
    Ok(out)
}

fn le16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

/// Decode an FGDS image. Errors carry byte offsets; a short file reports the
/// index of the first incomplete sample.
pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetFile> {
    let fmt = |offset: usize, reason: String| Error::Format { offset, reason };
    if bytes.len() < HEADER_BYTES {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(fmt(0, "bad magic (expected FGDS)".into()));
        }
        return Err(fmt(bytes.len(), format!("header truncated ({} of {HEADER_BYTES} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt(0, "bad magic (expected FGDS)".into()));
    }
    let version = le16(bytes, 4);
    if version != VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let (cols, rows) = (le16(bytes, 6) as usize, le16(bytes, 8) as usize);
    if cols == 0 || rows == 0 {
        return Err(fmt(6, format!("grid {cols}x{rows} is empty")));
    }
    let grid = GridSpec::new(cols, rows, false)?;
    let count = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    let per = sample_bytes(grid);
    let body = bytes.len() - HEADER_BYTES;
    if body < count.saturating_mul(per) {
        let index = body / per;
        return Err(Error::TruncatedSample { index, offset: HEADER_BYTES + index * per });
    }
    if body > count * per {
        return Err(fmt(HEADER_BYTES + count * per, format!("{} bytes after the last sample", body - count * per)));
    }
    let mut samples = Vec::with_capacity(count);
    for (index, rec) in bytes[HEADER_BYTES..].chunks_exact(per).enumerate() {
        let at = HEADER_BYTES + index * per;
        let timestamp_us = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let steer = |off: usize| -> Result<f64> {
            let v = le16(rec, off);
            if f64::from(v) > STEER_SCALE {
                return Err(fmt(at + off, format!("sample {index}: steer {v} above {STEER_SCALE}")));
            }
            Ok(f64::from(v) / STEER_SCALE)
        };
        let desired_steer = steer(8)?;
        let corrected_steer = steer(10)?;
        let override_active = match rec[12] {
            0 => false,
            1 => true,
            v => return Err(fmt(at + 12, format!("sample {index}: override flag {v}"))),
        };
        let manual_label = match rec[13] as i8 {
            -1 => None,
            v @ 0..=2 => Class::from_index(v as usize),
            v => return Err(fmt(at + 13, format!("sample {index}: label {v}"))),
        };
        let speed = f64::from(i16::from_le_bytes([rec[14], rec[15]])) / 1000.0;
        let vectors = rec[SAMPLE_META_BYTES..]
            .chunks_exact(RECORD_BYTES)
            .map(|r| MotionVector::new(r[0] as i8, r[1] as i8, u16::from_le_bytes([r[2], r[3]])))
            .collect();
        samples.push(Sample {
            flow: MotionVectorFrame { grid, vectors, seq: index as u32, timestamp_us },
            desired_steer,
            corrected_steer,
            override_active,
            speed,
            manual_label,
            timestamp_us,
        });
    }
    Ok(DatasetFile { grid, samples })
}

pub fn write_dataset(ds: &DatasetFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(format!("dataset {}", path.display())),
        _ => e.into(),
    })?;
    decode_dataset(&bytes)
}

/// Class implied by the steering channels.
pub fn auto_label(s: &Sample, deadband: f64) -> Class {
    if !s.override_active {
        Class::None
    } else if s.corrected_steer < 0.5 - deadband {
        Class::Left
    } else if s.corrected_steer > 0.5 + deadband {
        Class::Right
    } else {
        Class::None
    }
}

pub fn regression_label(s: &Sample) -> f64 {
    if s.override_active {
        s.corrected_steer
    } else {
        s.desired_steer
    }
}

/// Undersample every present class to the smallest class count. Kept items
/// stay in input order. `class_of` maps an item to a class index.
pub fn balance<T: Clone>(items: &[T], class_of: impl Fn(&T) -> usize, seed: u64) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(invalid("cannot balance an empty set"));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, it) in items.iter().enumerate() {
        by_class.entry(class_of(it)).or_default().push(i);
    }
    let min = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::with_capacity(min * by_class.len());
    for members in by_class.values() {
        keep.extend(index::sample(&mut rng, members.len(), min).into_iter().map(|k| members[k]));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| items[i].clone()).collect())
}

/// `N / (K * n_c)` per class.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(invalid("class weights need a positive count for every class"));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&c| n as f64 / (k * c as f64)).collect())
}

/// Seeded shuffle, then the first `round(n * test_fraction)` items form the
/// test set.
pub fn split<T: Clone>(items: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(invalid("cannot split an empty set"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (items.len() as f64 * test_fraction).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&order[n_test..]), pick(&order[..n_test])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    ClassificationAuto,
    ClassificationManual,
    Regression,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" | "classification_auto" => Ok(Self::ClassificationAuto),
            "manual" | "classification_manual" => Ok(Self::ClassificationManual),
            "regression" => Ok(Self::Regression),
            _ => Err(invalid(format!("unknown label mode '{s}' (auto | manual | regression)"))),
        }
    }
}

/// How samples become network examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleSpec {
    pub mask: MaskSpec,
    pub mode: LabelMode,
    pub deadband: f64,
    /// Motion-vector units to network input units.
    pub flow_scale: f64,
}

impl ExampleSpec {
    pub fn new(mask: MaskSpec, mode: LabelMode) -> Self {
        Self { mask, mode, deadband: DEFAULT_DEADBAND, flow_scale: DEFAULT_FLOW_SCALE }
    }
}

/// Network inputs are motion vectors times this; keeps typical magnitudes near 1.
pub const DEFAULT_FLOW_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltExamples {
    pub examples: Vec<Example>,
    /// Source sample index of each example.
    pub source: Vec<usize>,
    /// Samples dropped for lacking a manual label.
    pub skipped: usize,
}

/// Masked flow tensor for one frame, as the network sees it.
pub fn frame_input(flow: &MotionVectorFrame, mask: &MaskSpec, flow_scale: f64) -> Result<Vec<f32>> {
    Ok(apply_mask(&mv_to_flowfield(flow, flow_scale), mask)?.data)
}

pub fn build_examples(ds: &DatasetFile, spec: &ExampleSpec) -> Result<BuiltExamples> {
    if !(0.0..0.5).contains(&spec.deadband) {
        return Err(invalid(format!("deadband {} outside [0, 0.5)", spec.deadband)));
    }
    spec.mask.validate(ds.grid.rows, ds.grid.cols)?;
    let mut out = BuiltExamples { examples: Vec::with_capacity(ds.len()), source: Vec::with_capacity(ds.len()), skipped: 0 };
    for (i, s) in ds.samples.iter().enumerate() {
        let (side, target) = match spec.mode {
            LabelMode::ClassificationAuto => (vec![], auto_label(s, spec.deadband).one_hot()),
            LabelMode::ClassificationManual => match s.manual_label {
                Some(c) => (vec![], c.one_hot()),
                None => {
                    out.skipped += 1;
                    continue;
                }
            },
            LabelMode::Regression => (vec![s.desired_steer as f32], vec![regression_label(s) as f32]),
        };
        out.examples.push(Example::new(frame_input(&s.flow, &spec.mask, spec.flow_scale)?, side, target));
        out.source.push(i);
    }
    Ok(out)
}

/// Per-class counts of classification examples.
pub fn class_counts(examples: &[Example]) -> [usize; 3] {
    let mut c = [0; 3];
    for ex in examples {
        c[ex.class().min(2)] += 1;
    }
    c
}

/// Scale each example's loss by its class weight.
pub fn apply_class_weights(examples: &mut [Example]) -> Result<Vec<f64>> {
    let counts = class_counts(examples);
    let present: Vec<usize> = counts.iter().copied().filter(|c| *c > 0).collect();
    let w = class_weights(&present)?;
    let mut full = [0.0; 3];
    let mut k = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            full[c] = w[k];
            k += 1;
        }
    }
    for ex in examples.iter_mut() {
        ex.weight = full[ex.class().min(2)] as f32;
    }
    Ok(full.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(override_active: bool, desired: f64, corrected: f64) -> Sample {
        let grid = GridSpec::new(2, 2, false).unwrap();
        Sample {
            flow: MotionVectorFrame::zeros(grid),
            desired_steer: desired,
            corrected_steer: corrected,
            override_active,
            speed: 1.0,
            manual_label: None,
            timestamp_us: 0,
        }
    }

    #[test]
    fn auto_labels() {
        assert_eq!(auto_label(&sample(false, 0.0, 0.0), 0.1), Class::None);
        assert_eq!(auto_label(&sample(false, 0.3, 1.0), 0.1), Class::None);
        assert_eq!(auto_label(&sample(true, 0.5, 0.0), 0.1), Class::Left);
        assert_eq!(auto_label(&sample(true, 0.5, 1.0), 0.1), Class::Right);
        assert_eq!(auto_label(&sample(true, 0.2, 0.5), 0.1), Class::None);
        assert_eq!(auto_label(&sample(true, 0.2, 0.45), 0.1), Class::None);
    }

    #[test]
    fn regression_labels() {
        assert_eq!(regression_label(&sample(false, 0.62, 0.0)), 0.62);
        assert_eq!(regression_label(&sample(true, 0.62, 0.0)), 0.0);
        assert_eq!(regression_label(&sample(true, 0.4, 0.4)), 0.4);
    }

    #[test]
    fn balance_counts_two_class_arithmetic() {
        let items: Vec<usize> = (0..11742).map(|_| 0).chain((0..40145).map(|_| 1)).collect();
        let out = balance(&items, |c| *c, 1).unwrap();
        assert_eq!(out.len(), 23484);
        assert_eq!(out.iter().filter(|c| **c == 0).count(), 11742);
    }

    #[test]
    fn balance_is_stable_and_seeded() {
        let items: Vec<(usize, usize)> = (0..60).map(|i| (i, if i % 4 == 0 { 0 } else { 1 + i % 2 })).collect();
        let a = balance(&items, |x| x.1, 5).unwrap();
        let b = balance(&items, |x| x.1, 5).unwrap();
        let c = balance(&items, |x| x.1, 6).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), c.len());
        assert_ne!(a, c);
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
        let already: Vec<usize> = (0..30).map(|i| i % 3).collect();
        assert_eq!(balance(&already, |x| *x, 9).unwrap(), already);
        assert!(balance::<usize>(&[], |x| *x, 0).is_err());
    }

    #[test]
    fn weights() {
        assert_eq!(class_weights(&[5, 5, 5]).unwrap(), vec![1.0; 3]);
        let w = class_weights(&[10, 30]).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(class_weights(&[3, 0]).is_err());
    }

    #[test]
    fn split_sizes() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, te) = split(&items, 0.2, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let mut all: Vec<u32> = tr.into_iter().chain(te).collect();
        all.sort();
        assert_eq!(all, items);
        let (tr, te) = split(&[1, 2, 3, 4, 5], 0.2, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        assert_eq!(split(&items, 0.2, 3).unwrap(), split(&items, 0.2, 3).unwrap());
        assert!(split::<u32>(&[], 0.2, 0).is_err());
        assert!(split(&items, 1.0, 0).is_err());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = DatasetFile::new(GridSpec::new(40, 30, true).unwrap());
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        assert_eq!(&bytes[10..14], &[0, 0, 0, 0]);
        assert_eq!(decode_dataset(&bytes).unwrap(), ds);
    }
}
