use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution kernel edge (all convolutions are 3x3, stride 1).
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// How a 2x2 stride-2 pool treats an odd trailing row/column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Drop it.
    Floor,
    /// Pool it as a partial window.
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Input { h: usize, w: usize, c: usize },
    Conv { filters: usize, padding: Padding, activation: Activation },
    MaxPool { mode: PoolMode },
    Flatten,
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Spatial { h, w, c } => write!(f, "({h}, {w}, {c})"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Ordered layer list. `side_inputs` extra scalars are appended to the
/// output of the `Flatten` layer (the regression head's desired steer).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub side_inputs: usize,
}

/// One row of a layer table: type, output shape, parameter count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub kind: &'static str,
    pub shape: Shape,
    pub params: usize,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "Input",
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::MaxPool { .. } => "Pool",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Dense",
        }
    }
}

impl ArchSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers, side_inputs: 0 }
    }

    pub fn with_side_inputs(mut self, n: usize) -> Self {
        self.side_inputs = n;
        self
    }

    pub fn input_shape(&self) -> Option<(usize, usize, usize)> {
        match self.layers.first() {
            Some(LayerSpec::Input { h, w, c }) => Some((*h, *w, *c)),
            _ => None,
        }
    }

    /// Output shape of every layer, validating the stack as it goes.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |layer: usize, reason: String| Error::InvalidArchitecture { layer, reason };
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().saturating_sub(1);
        if self.layers.is_empty() {
            return Err(bad(0, "empty architecture".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().copied();
            let shape = match (*layer, prev) {
                (LayerSpec::Input { h, w, c }, None) => {
                    if h == 0 || w == 0 || c == 0 {
                        return Err(bad(i, "input dimensions must be >= 1".into()));
                    }
                    Shape::Spatial { h, w, c }
                }
                (LayerSpec::Input { .. }, Some(_)) => return Err(bad(i, "Input must be the first layer only".into())),
                (_, None) => return Err(bad(i, "first layer must be Input".into())),
                (LayerSpec::Conv { filters, padding, activation }, Some(Shape::Spatial { h, w, .. })) => {
                    if filters == 0 {
                        return Err(bad(i, "conv needs >= 1 filter".into()));
                    }
                    if activation == Activation::Softmax {
                        return Err(bad(i, "softmax is only allowed on the final dense layer".into()));
                    }
                    match padding {
                        Padding::Same => Shape::Spatial { h, w, c: filters },
                        Padding::Valid => {
                            if h < KERNEL || w < KERNEL {
                                return Err(bad(i, format!("valid 3x3 conv on {h}x{w} input")));
                            }
                            Shape::Spatial { h: h - KERNEL + 1, w: w - KERNEL + 1, c: filters }
                        }
                    }
                }
                (LayerSpec::MaxPool { mode }, Some(Shape::Spatial { h, w, c })) => {
                    let (oh, ow) = match mode {
                        PoolMode::Floor => (h / 2, w / 2),
                        PoolMode::Ceil => (h.div_ceil(2), w.div_ceil(2)),
                    };
                    if oh == 0 || ow == 0 {
                        return Err(bad(i, format!("2x2 pool on {h}x{w} input leaves nothing")));
                    }
                    Shape::Spatial { h: oh, w: ow, c }
                }
                (LayerSpec::Flatten, Some(Shape::Spatial { .. })) => Shape::Flat(prev.unwrap().len() + self.side_inputs),
                (LayerSpec::Dense { units, activation }, Some(Shape::Flat(_))) => {
                    if units == 0 {
                        return Err(bad(i, "dense needs >= 1 unit".into()));
                    }
                    if activation == Activation::Softmax && i != last {
                        return Err(bad(i, "softmax is only allowed on the final layer".into()));
                    }
                    Shape::Flat(units)
                }
                (l, Some(s)) => return Err(bad(i, format!("{} cannot follow shape {s}", l.kind()))),
            };
            shapes.push(shape);
        }
        if self.side_inputs > 0 && !self.layers.iter().any(|l| matches!(l, LayerSpec::Flatten)) {
            return Err(bad(last, "side inputs need a Flatten layer".into()));
        }
        if !matches!(shapes.last(), Some(Shape::Flat(_))) {
            return Err(bad(last, "network must end in a dense layer".into()));
        }
        Ok(shapes)
    }

    /// Per-layer rows (type, output shape, parameter count).
    pub fn rows(&self) -> Result<Vec<LayerRow>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| !matches!(l, LayerSpec::Flatten))
            .map(|(i, l)| {
                let fan_in = if i == 0 { 0 } else { input_channels(shapes[i - 1]) };
                LayerRow {
                    kind: l.kind(),
                    shape: shapes[i],
                    params: layer_params(l, fan_in),
                }
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.rows()?.iter().map(|r| r.params).sum())
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map(Shape::len).unwrap_or(0))
    }

    pub fn output_activation(&self) -> Option<Activation> {
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Dense { activation, .. } => Some(*activation),
            _ => None,
        })
    }
}

/// Channels (conv) or features (dense) feeding a layer.
pub(crate) fn input_channels(prev: Shape) -> usize {
    match prev {
        Shape::Spatial { c, .. } => c,
        Shape::Flat(n) => n,
    }
}

pub(crate) fn layer_params(l: &LayerSpec, fan_in: usize) -> usize {
    match *l {
        LayerSpec::Conv { filters, .. } => KERNEL * KERNEL * fan_in * filters + filters,
        LayerSpec::Dense { units, .. } => fan_in * units + units,
        _ => 0,
    }
}

fn conv(filters: usize, padding: Padding) -> LayerSpec {
    LayerSpec::Conv { filters, padding, activation: Activation::Relu }
}

fn pool(mode: PoolMode) -> LayerSpec {
    LayerSpec::MaxPool { mode }
}

fn dense(units: usize) -> LayerSpec {
    LayerSpec::Dense { units, activation: Activation::Relu }
}

/// Output head: three-way softmax or one linear steer neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Classes3,
    Steer,
}

impl Head {
    fn layer(self) -> LayerSpec {
        match self {
            Head::Classes3 => LayerSpec::Dense { units: 3, activation: Activation::Softmax },
            Head::Steer => LayerSpec::Dense { units: 1, activation: Activation::Linear },
        }
    }
}

/// Shared template: conv block, pool, conv block, pool, two dense layers, head.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSpec {
    pub input: (usize, usize),
    pub first_block: Vec<usize>,
    pub second_block: Vec<usize>,
    pub dense: [usize; 2],
    pub padding: Padding,
    pub pool: PoolMode,
    pub head: Head,
}

impl TemplateSpec {
    /// Base layout on the full 30x40 field: valid convs, floor pooling.
    pub fn base(head: Head) -> Self {
        Self {
            input: (30, 40),
            first_block: vec![32],
            second_block: vec![8, 8],
            dense: [16, 16],
            padding: Padding::Valid,
            pool: PoolMode::Floor,
            head,
        }
    }

    pub fn build(&self) -> ArchSpec {
        let mut layers = vec![LayerSpec::Input { h: self.input.0, w: self.input.1, c: 2 }];
        layers.extend(self.first_block.iter().map(|&f| conv(f, self.padding)));
        layers.push(pool(self.pool));
        layers.extend(self.second_block.iter().map(|&f| conv(f, self.padding)));
        layers.push(pool(self.pool));
        layers.push(LayerSpec::Flatten);
        layers.extend(self.dense.iter().map(|&u| dense(u)));
        layers.push(self.head.layer());
        let side = usize::from(self.head == Head::Steer);
        ArchSpec::new(layers).with_side_inputs(side)
    }
}

/// Base architecture (30x40 input, valid padding, floor pooling).
pub fn base_architecture(head: Head) -> ArchSpec {
    TemplateSpec::base(head).build()
}

/// Final deployed architecture: 15x20 input, same padding, ceil pooling.
pub fn final_architecture() -> ArchSpec {
    TemplateSpec {
        input: (15, 20),
        dense: [32, 16],
        padding: Padding::Same,
        pool: PoolMode::Ceil,
        ..TemplateSpec::base(Head::Classes3)
    }
    .build()
}

/// Single-layer manipulations of the base architecture, with their ids.
pub fn layer_variants() -> Vec<(&'static str, &'static str, ArchSpec)> {
    let b = || TemplateSpec::base(Head::Classes3);
    vec![
        ("base", "Base architecture", b().build()),
        (
            "first3x16",
            "Three convolutions with 16 filters each in first layer",
            TemplateSpec { first_block: vec![16, 16, 16], ..b() }.build(),
        ),
        (
            "second5x8",
            "Five convolutions with 8 filters each in second layer",
            TemplateSpec { second_block: vec![8; 5], ..b() }.build(),
        ),
        ("dense1_32", "32 neurons in the first dense layer", TemplateSpec { dense: [32, 16], ..b() }.build()),
        ("dense2_32", "32 neurons in the second dense layer", TemplateSpec { dense: [16, 32], ..b() }.build()),
        (
            "first16_same",
            "16-filter first convolution, same padding, ceil pooling",
            TemplateSpec { first_block: vec![16], padding: Padding::Same, pool: PoolMode::Ceil, ..b() }.build(),
        ),
        ("first8", "8 filters in the first convolution", TemplateSpec { first_block: vec![8], ..b() }.build()),
        (
            "first8_nosecond",
            "8 filters in the first convolution, second convolutions removed",
            TemplateSpec { first_block: vec![8], second_block: vec![], ..b() }.build(),
        ),
    ]
}

pub fn layer_variant(id: &str) -> Result<ArchSpec> {
    layer_variants()
        .into_iter()
        .find(|(i, _, _)| *i == id)
        .map(|(_, _, a)| a)
        .ok_or_else(|| Error::NotFound(format!("architecture variant '{id}'")))
}

/// Base layout resized for a masked input, with the padding/pooling mode the
/// input size needs.
pub fn masked_architecture(h: usize, w: usize, padding: Padding, pool: PoolMode) -> ArchSpec {
    TemplateSpec { input: (h, w), padding, pool, ..TemplateSpec::base(Head::Classes3) }.build()
}
