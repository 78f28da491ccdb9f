//! Macroblock motion-vector frames: the per-frame `{dx, dy, sad}` grid that a
//! hardware H.264 encoder emits next to its bitstream, and the `FGMV` framed
//! stream that carries those grids over a pipe or a file.
//!
//! Wire record: `dx: i8, dy: i8, sad: u16le`, row-major. Real encoders append
//! one padding column per row; it is validated for length and dropped.

use std::io::Read;

use crate::error::{invalid, Error, Result};

/// Macroblock edge length in pixels.
pub const MACROBLOCK_PX: u32 = 16;
/// Bytes per wire record.
pub const RECORD_BYTES: usize = 4;
/// Magic that prefixes every framed motion-vector payload.
pub const FRAME_MAGIC: [u8; 4] = *b"FGMV";
/// Magic + seq (u32le) + timestamp (u64le).
pub const FRAME_HEADER_BYTES: usize = 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub has_pad_column: bool,
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize, has_pad_column: bool) -> Result<Self> {
        if cols == 0 || rows == 0 {
            return Err(invalid(format!("grid must be non-empty, got {cols}x{rows}")));
        }
        Ok(Self {
            cols,
            rows,
            has_pad_column,
        })
    }

    /// Records per row as laid out on the wire.
    pub fn wire_cols(&self) -> usize {
        self.cols + usize::from(self.has_pad_column)
    }

    pub fn wire_records(&self) -> usize {
        self.rows * self.wire_cols()
    }

    pub fn payload_len(&self) -> usize {
        self.wire_records() * RECORD_BYTES
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Same grid without the wire pad column (for synthetic sources).
    pub fn without_pad(self) -> Self {
        Self {
            has_pad_column: false,
            ..self
        }
    }
}

/// Grid of macroblocks covering a `width_px` x `height_px` frame.
pub fn grid_for_resolution(width_px: i64, height_px: i64) -> Result<GridSpec> {
    if width_px <= 0 || height_px <= 0 {
        return Err(invalid(format!(
            "resolution must be positive, got {width_px}x{height_px}"
        )));
    }
    let mb = i64::from(MACROBLOCK_PX);
    let cols = (width_px + mb - 1) / mb;
    let rows = (height_px + mb - 1) / mb;
    GridSpec::new(cols as usize, rows as usize, true)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MotionVector {
    pub dx: i8,
    pub dy: i8,
    pub sad: u16,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { dx: 0, dy: 0, sad: 0 };

    pub fn new(dx: i8, dy: i8, sad: u16) -> Self {
        Self { dx, dy, sad }
    }

    fn decode(b: &[u8]) -> Self {
        Self {
            dx: b[0] as i8,
            dy: b[1] as i8,
            sad: u16::from_le_bytes([b[2], b[3]]),
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.dx as u8);
        out.push(self.dy as u8);
        out.extend_from_slice(&self.sad.to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionVectorFrame {
    pub grid: GridSpec,
    /// Row-major, `grid.rows * grid.cols` entries (pad column excluded).
    pub vectors: Vec<MotionVector>,
    pub seq: u32,
    pub timestamp_us: u64,
}

impl MotionVectorFrame {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            vectors: vec![MotionVector::ZERO; grid.cells()],
            seq: 0,
            timestamp_us: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> MotionVector {
        self.vectors[row * self.grid.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, mv: MotionVector) {
        self.vectors[row * self.grid.cols + col] = mv;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[MotionVector]> {
        self.vectors.chunks(self.grid.cols)
    }
}

/// Decode one payload. Every byte pattern of the right length is a valid frame.
pub fn parse_mv_frame(payload: &[u8], grid: GridSpec) -> Result<MotionVectorFrame> {
    let expected = grid.payload_len();
    if payload.len() != expected {
        return Err(Error::FrameSize {
            expected,
            actual: payload.len(),
        });
    }
    let row_bytes = grid.wire_cols() * RECORD_BYTES;
    let mut vectors = Vec::with_capacity(grid.cells());
    for row in payload.chunks_exact(row_bytes) {
        vectors.extend(
            row[..grid.cols * RECORD_BYTES]
                .chunks_exact(RECORD_BYTES)
                .map(MotionVector::decode),
        );
    }
    Ok(MotionVectorFrame {
        grid,
        vectors,
        seq: 0,
        timestamp_us: 0,
    })
}

/// Encode a frame's payload; pad records are written as zeros.
pub fn serialize_mv_frame(frame: &MotionVectorFrame) -> Vec<u8> {
    let grid = frame.grid;
    let mut out = Vec::with_capacity(grid.payload_len());
    for row in frame.rows() {
        for mv in row {
            mv.encode_into(&mut out);
        }
        if grid.has_pad_column {
            out.extend_from_slice(&[0; RECORD_BYTES]);
        }
    }
    out
}

/// Payload with its `FGMV` framing header.
pub fn encode_framed(frame: &MotionVectorFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + frame.grid.payload_len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    out.extend_from_slice(&serialize_mv_frame(frame));
    out
}

/// Incremental `FGMV` stream decoder. Feed bytes in any chunking; frames come
/// out identically. A magic mismatch scans forward to the next magic.
#[derive(Debug)]
pub struct FrameStreamReader {
    grid: GridSpec,
    buf: Vec<u8>,
    skipped_bytes: u64,
    frames: u64,
}

impl FrameStreamReader {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            buf: Vec::new(),
            skipped_bytes: 0,
            frames: 0,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes discarded during resynchronization so far.
    pub fn skipped_bytes(&self) -> u64 {
        self.skipped_bytes
    }

    pub fn frames_decoded(&self) -> u64 {
        self.frames
    }

    /// Next complete frame from the buffered bytes, if any.
    pub fn next_frame(&mut self) -> Option<MotionVectorFrame> {
        let frame_len = FRAME_HEADER_BYTES + self.grid.payload_len();
        loop {
            if self.buf.len() < FRAME_MAGIC.len() {
                return None;
            }
            if self.buf[..4] != FRAME_MAGIC {
                self.resync();
                continue;
            }
            if self.buf.len() < frame_len {
                return None;
            }
            let seq = u32::from_le_bytes(self.buf[4..8].try_into().unwrap());
            let ts = u64::from_le_bytes(self.buf[8..16].try_into().unwrap());
            let mut frame = parse_mv_frame(&self.buf[FRAME_HEADER_BYTES..frame_len], self.grid)
                .expect("payload slice has the grid's exact length");
            frame.seq = seq;
            frame.timestamp_us = ts;
            self.buf.drain(..frame_len);
            self.frames += 1;
            return Some(frame);
        }
    }

    // Drop bytes up to the next magic occurrence after position 0. Without one,
    // keep only a tail that could still be a magic prefix.
    fn resync(&mut self) {
        let next = self.buf[1..]
            .windows(FRAME_MAGIC.len())
            .position(|w| w == FRAME_MAGIC)
            .map(|p| p + 1);
        let cut = match next {
            Some(p) => p,
            None => self.buf.len() - (FRAME_MAGIC.len() - 1),
        };
        self.skipped_bytes += cut as u64;
        self.buf.drain(..cut);
    }

    /// Declare end of stream; a partially buffered frame is an error.
    pub fn finish(&mut self) -> Result<()> {
        while self.next_frame().is_some() {}
        if self.buf.is_empty() {
            return Ok(());
        }
        let frame_len = FRAME_HEADER_BYTES + self.grid.payload_len();
        let missing = frame_len.saturating_sub(self.buf.len());
        self.buf.clear();
        Err(Error::TruncatedFrame { missing })
    }
}

/// Blocking iterator of frames read from `source`. Yields a single
/// [`Error::TruncatedFrame`] at the end if the stream stops mid-frame.
pub struct FrameStream<R> {
    source: R,
    reader: FrameStreamReader,
    chunk: Vec<u8>,
    done: bool,
}

pub fn stream_frames<R: Read>(source: R, grid: GridSpec) -> FrameStream<R> {
    FrameStream {
        source,
        reader: FrameStreamReader::new(grid),
        chunk: vec![0; 64 * 1024],
        done: false,
    }
}

impl<R: Read> FrameStream<R> {
    pub fn reader(&self) -> &FrameStreamReader {
        &self.reader
    }
}

impl<R: Read> Iterator for FrameStream<R> {
    type Item = Result<MotionVectorFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(f) = self.reader.next_frame() {
                return Some(Ok(f));
            }
            if self.done {
                return None;
            }
            match self.source.read(&mut self.chunk) {
                Ok(0) => {
                    self.done = true;
                    return self.reader.finish().err().map(Err);
                }
                Ok(n) => self.reader.push(&self.chunk[..n]),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
    }
}
