//! FGNN weight files.
//!
//! ```text
//! "FGNN" | u16 version | u16 side_inputs | u16 layer_count
//! layer descriptors (u8 tag + fields, below)
//! u32 param_count | param_count x f32le (per layer: weights then biases)
//! ```
//! Descriptor tags: 0 Input{u16 h, u16 w, u16 c}, 1 Conv{u16 filters, u8 padding,
//! u8 activation}, 2 MaxPool{u8 mode}, 3 Flatten, 4 Dense{u16 units, u8 activation}.
//! Padding 0 valid / 1 same; pool 0 floor / 1 ceil; activation 0 relu / 1 linear / 2 softmax.
//! All integers little-endian.

use super::arch::{Activation, ArchSpec, LayerSpec, Padding, PoolMode};
use super::network::{LayerParams, Network, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FGNN";
pub const VERSION: u16 = 1;

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Linear => 1,
        Activation::Softmax => 2,
    }
}

fn u16_of(v: usize) -> [u8; 2] {
    u16::try_from(v).expect("dimension fits u16").to_le_bytes()
}

pub fn encode_arch(arch: &ArchSpec, out: &mut Vec<u8>) {
    out.extend_from_slice(&u16_of(arch.side_inputs));
    out.extend_from_slice(&u16_of(arch.layers.len()));
    for l in &arch.layers {
        match *l {
            LayerSpec::Input { h, w, c } => {
                out.push(0);
                for v in [h, w, c] {
                    out.extend_from_slice(&u16_of(v));
                }
            }
            LayerSpec::Conv { filters, padding, activation } => {
                out.push(1);
                out.extend_from_slice(&u16_of(filters));
                out.push(u8::from(padding == Padding::Same));
                out.push(act_code(activation));
            }
            LayerSpec::MaxPool { mode } => {
                out.push(2);
                out.push(u8::from(mode == PoolMode::Ceil));
            }
            LayerSpec::Flatten => out.push(3),
            LayerSpec::Dense { units, activation } => {
                out.push(4);
                out.extend_from_slice(&u16_of(units));
                out.push(act_code(activation));
            }
        }
    }
}

pub fn save_weights(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    encode_arch(net.arch(), &mut out);
    out.extend_from_slice(&(net.param_count() as u32).to_le_bytes());
    for v in net.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos, reason: format!("file truncated in {what}") });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn bad(&self, back: usize, reason: String) -> Error {
        Error::Format { offset: self.pos - back, reason }
    }
}

fn decode_act(c: &mut Cursor, layer: usize) -> Result<Activation> {
    match c.u8("activation")? {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Linear),
        2 => Ok(Activation::Softmax),
        v => Err(c.bad(1, format!("layer {layer}: unknown activation code {v}"))),
    }
}

fn decode_flag<T>(c: &mut Cursor, layer: usize, what: &str, zero: T, one: T) -> Result<T> {
    match c.u8(what)? {
        0 => Ok(zero),
        1 => Ok(one),
        v => Err(c.bad(1, format!("layer {layer}: unknown {what} code {v}"))),
    }
}

fn decode_header(c: &mut Cursor) -> Result<ArchSpec> {
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad magic (expected FGNN)".into() });
    }
    let version = c.u16("version")?;
    if version != VERSION as usize {
        return Err(c.bad(2, format!("unsupported version {version}")));
    }
    let side_inputs = c.u16("side input count")?;
    let n = c.u16("layer count")?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let layer = match c.u8("layer tag")? {
            0 => LayerSpec::Input { h: c.u16("input")?, w: c.u16("input")?, c: c.u16("input")? },
            1 => LayerSpec::Conv {
                filters: c.u16("conv")?,
                padding: decode_flag(c, i, "padding", Padding::Valid, Padding::Same)?,
                activation: decode_act(c, i)?,
            },
            2 => LayerSpec::MaxPool { mode: decode_flag(c, i, "pool mode", PoolMode::Floor, PoolMode::Ceil)? },
            3 => LayerSpec::Flatten,
            4 => LayerSpec::Dense { units: c.u16("dense")?, activation: decode_act(c, i)? },
            t => return Err(c.bad(1, format!("layer {i}: unknown layer tag {t}"))),
        };
        layers.push(layer);
    }
    Ok(ArchSpec { layers, side_inputs })
}

/// Decode a weight file, taking the architecture from the file itself.
pub fn load_weights_any(bytes: &[u8]) -> Result<Network<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let arch = decode_header(&mut c)?;
    let header_end = c.pos;
    let template = Network::<f32>::zeros(arch.clone())
        .map_err(|e| Error::Format { offset: header_end, reason: format!("architecture descriptor invalid: {e}") })?;
    let count = {
        let b = c.take(4, "parameter count")?;
        u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize
    };
    if count != template.param_count() {
        return Err(c.bad(4, format!("parameter count {count}, architecture needs {}", template.param_count())));
    }
    let values = c.take(4 * count, "parameter values")?;
    if c.pos != bytes.len() {
        return Err(c.bad(0, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let mut floats = values.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f32>>();
    let layers = template
        .params
        .layers
        .iter()
        .map(|l| LayerParams { w: take(l.w.len()), b: take(l.b.len()) })
        .collect();
    Network::from_params(arch, Params { layers })
}

/// Decode a weight file that must hold exactly `spec`.
pub fn load_weights(bytes: &[u8], spec: &ArchSpec) -> Result<Network<f32>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let arch = decode_header(&mut c)?;
    if arch.side_inputs != spec.side_inputs {
        return Err(Error::ArchMismatch {
            layer: spec.layers.iter().position(|l| matches!(l, LayerSpec::Flatten)).unwrap_or(0),
            reason: format!("file has {} side inputs, expected {}", arch.side_inputs, spec.side_inputs),
        });
    }
    for i in 0..arch.layers.len().max(spec.layers.len()) {
        match (arch.layers.get(i), spec.layers.get(i)) {
            (Some(a), Some(b)) if a == b => {}
            (a, b) => {
                return Err(Error::ArchMismatch {
                    layer: i,
                    reason: format!("file has {a:?}, expected {b:?}"),
                })
            }
        }
    }
    load_weights_any(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::arch::{base_architecture, final_architecture, Head};

    #[test]
    fn round_trip_exact() {
        let net = Network::<f32>::new(final_architecture(), 4).unwrap();
        let bytes = save_weights(&net);
        // header, input, 3 convs, 2 pools, flatten, 3 denses, count, values
        assert_eq!(bytes.len(), 10 + 7 + 3 * 5 + 2 * 2 + 1 + 3 * 4 + 4 + 4 * 9235);
        let back = load_weights(&bytes, &final_architecture()).unwrap();
        assert_eq!(back, net);
        assert_eq!(save_weights(&back), bytes);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let net = Network::<f32>::new(base_architecture(Head::Steer), 1).unwrap();
        let bytes = save_weights(&net);
        for cut in [0, 3, 5, 9, 20, 40, bytes.len() - 1] {
            assert!(matches!(load_weights_any(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }

    #[test]
    fn mismatch_names_first_bad_layer() {
        let arch = final_architecture();
        let bytes = save_weights(&Network::<f32>::new(arch.clone(), 1).unwrap());
        // Conv filter count of layer 3 lives at: 4+2+2+2 | Input 7 | Conv 5 | Pool 2 | tag.
        let mut bad = bytes.clone();
        bad[10 + 7 + 5 + 2 + 1] = 9;
        match load_weights(&bad, &arch) {
            Err(Error::ArchMismatch { layer, .. }) => assert_eq!(layer, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_weights(&bytes, &base_architecture(Head::Classes3)), Err(Error::ArchMismatch { layer: 0, .. })));
    }
}
