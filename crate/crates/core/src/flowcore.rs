//! Real-valued flow fields, input masks and HSV rendering.

use crate::error::{invalid, Error, Result};
use crate::mvcodec::{GridSpec, MotionVectorFrame};

/// Default dequantization: one count is one pixel per frame.
pub const DEFAULT_SCALE: f64 = 1.0;

/// Dense per-macroblock flow in px/frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            u: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.cols + col;
        (self.u[i], self.v[i])
    }

    pub fn magnitude(&self, row: usize, col: usize) -> f64 {
        let (u, v) = self.at(row, col);
        u.hypot(v)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.u.len().max(1) as f64;
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).sum::<f64>() / n
    }
}

pub fn mv_to_flowfield(frame: &MotionVectorFrame, scale: f64) -> FlowField {
    debug_assert!(scale > 0.0);
    let GridSpec { rows, cols, .. } = frame.grid;
    FlowField {
        rows,
        cols,
        u: frame.vectors.iter().map(|m| f64::from(m.dx) * scale).collect(),
        v: frame.vectors.iter().map(|m| f64::from(m.dy) * scale).collect(),
    }
}

/// Crop + stride gather over a flow field, in macroblock units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub row_start: usize,
    pub row_count: usize,
    pub row_stride: usize,
    pub col_start: usize,
    pub col_count: usize,
    pub col_stride: usize,
}

impl MaskSpec {
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            row_start: 0,
            row_count: rows,
            row_stride: 1,
            col_start: 0,
            col_count: cols,
            col_stride: 1,
        }
    }

    /// `(h, w)` of the gathered tensor.
    pub fn output_shape(&self) -> (usize, usize) {
        (
            self.row_count.div_ceil(self.row_stride),
            self.col_count.div_ceil(self.col_stride),
        )
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.row_stride == 0 || self.col_stride == 0 {
            return Err(invalid("mask strides must be >= 1"));
        }
        if self.row_count == 0 || self.col_count == 0 {
            return Err(invalid("mask selects no cells"));
        }
        if self.row_start + self.row_count > rows || self.col_start + self.col_count > cols {
            return Err(invalid(format!(
                "mask rows {}..{} cols {}..{} exceed field {rows}x{cols}",
                self.row_start,
                self.row_start + self.row_count,
                self.col_start,
                self.col_start + self.col_count
            )));
        }
        Ok(())
    }

    /// Source `(row, col)` for each output cell, row-major.
    pub fn source_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (h, w) = self.output_shape();
        (0..h).flat_map(move |i| {
            (0..w).map(move |j| {
                (
                    self.row_start + i * self.row_stride,
                    self.col_start + j * self.col_stride,
                )
            })
        })
    }
}

/// Network input, HWC with two channels `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl InputTensor {
    pub const CHANNELS: usize = 2;

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w * Self::CHANNELS],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, Self::CHANNELS)
    }
}

pub fn apply_mask(field: &FlowField, mask: &MaskSpec) -> Result<InputTensor> {
    mask.validate(field.rows, field.cols)?;
    let (h, w) = mask.output_shape();
    let mut data = Vec::with_capacity(h * w * 2);
    for (r, c) in mask.source_cells() {
        let (u, v) = field.at(r, c);
        data.push(u as f32);
        data.push(v as f32);
    }
    Ok(InputTensor { h, w, data })
}

/// Named mask presets over the 30x40 field. Geometries other than
/// `full30x40` and `best15x20` are documented approximations.
pub const PRESET_MASKS: [(&str, MaskSpec); 11] = [
    ("full30x40", mask(0, 30, 1, 0, 40, 1)),
    ("center30x20", mask(0, 30, 1, 10, 20, 1)),
    ("stride15x40", mask(0, 30, 2, 0, 40, 1)),
    ("lower15x20", mask(15, 15, 1, 10, 20, 1)),
    ("lower15x40", mask(15, 15, 1, 0, 40, 1)),
    ("best15x20", mask(0, 30, 2, 10, 20, 1)),
    ("band5x40", mask(12, 5, 1, 0, 40, 1)),
    ("lowband5x40", mask(17, 5, 1, 0, 40, 1)),
    ("band2x40", mask(13, 2, 1, 0, 40, 1)),
    ("center8x14", mask(10, 8, 1, 13, 14, 1)),
    ("center3x6", mask(12, 3, 1, 17, 6, 1)),
];

const fn mask(rs: usize, rc: usize, rst: usize, cs: usize, cc: usize, cst: usize) -> MaskSpec {
    MaskSpec {
        row_start: rs,
        row_count: rc,
        row_stride: rst,
        col_start: cs,
        col_count: cc,
        col_stride: cst,
    }
}

pub fn preset_mask(name: &str) -> Result<MaskSpec> {
    PRESET_MASKS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, m)| *m)
        .ok_or_else(|| Error::NotFound(format!("mask preset '{name}'")))
}

/// HSV-encoded RGB triplets, one per macroblock: hue is flow direction,
/// value is speed relative to `max_magnitude`.
pub fn hsv_pixels(field: &FlowField, max_magnitude: f64) -> Vec<[u8; 3]> {
    field
        .u
        .iter()
        .zip(&field.v)
        .map(|(&u, &v)| {
            let mut hue = v.atan2(u).to_degrees();
            if hue < 0.0 {
                hue += 360.0;
            }
            if hue >= 360.0 {
                hue -= 360.0;
            }
            let value = (u.hypot(v) / max_magnitude).min(1.0);
            hsv_to_rgb(hue, 1.0, value)
        })
        .collect()
}

pub fn hsv_to_rgb(hue_deg: f64, sat: f64, value: f64) -> [u8; 3] {
    let c = value * sat;
    let hp = hue_deg / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    let q = |ch: f64| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Binary P6 PPM, one pixel per macroblock.
pub fn render_hsv(field: &FlowField, max_magnitude: f64) -> Result<Vec<u8>> {
    if !(max_magnitude > 0.0) {
        return Err(invalid("max_magnitude must be > 0"));
    }
    let mut out = format!("P6\n{} {}\n255\n", field.cols, field.rows).into_bytes();
    for px in hsv_pixels(field, max_magnitude) {
        out.extend_from_slice(&px);
    }
    Ok(out)
}
