use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datapipe::{balance, build_examples, class_counts, split, DatasetFile, ExampleSpec, LabelMode};
use crate::error::{invalid, Result};
use crate::flowcore::preset_mask;
use crate::tinynet::{
    final_architecture, layer_variant, layer_variants, masked_architecture, train, ArchSpec, Example, Network, Padding,
    PoolMode, StopReason, TrainConfig,
};

/// Padding and pooling each mask preset needs for the base layout at its
/// input size.
pub const MASK_ROWS: [(&str, Padding, PoolMode); 11] = [
    ("full30x40", Padding::Valid, PoolMode::Floor),
    ("center30x20", Padding::Valid, PoolMode::Floor),
    ("stride15x40", Padding::Valid, PoolMode::Floor),
    ("lower15x40", Padding::Valid, PoolMode::Floor),
    ("lower15x20", Padding::Valid, PoolMode::Floor),
    ("best15x20", Padding::Same, PoolMode::Ceil),
    ("band5x40", Padding::Same, PoolMode::Floor),
    ("lowband5x40", Padding::Same, PoolMode::Floor),
    ("band2x40", Padding::Same, PoolMode::Ceil),
    ("center8x14", Padding::Same, PoolMode::Ceil),
    ("center3x6", Padding::Same, PoolMode::Ceil),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArchChoice {
    /// A layer-variant id, or `final`.
    Variant(String),
    /// Base layout resized for the mask, per `MASK_ROWS`.
    ForMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub table: String,
    pub label: String,
    pub label_mode: LabelMode,
    pub balanced: bool,
    pub mask: String,
    pub arch: ArchChoice,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(table: &str, label: &str, mode: LabelMode, balanced: bool, mask: &str, arch: ArchChoice, train: TrainConfig) -> Self {
        Self {
            table: table.into(),
            label: label.into(),
            label_mode: mode,
            balanced,
            mask: mask.into(),
            arch,
            train,
            test_fraction: 0.2,
            repetitions: 1,
            seed: 0,
        }
    }

    pub fn architecture(&self) -> Result<ArchSpec> {
        match &self.arch {
            ArchChoice::Variant(id) if id == "final" => Ok(final_architecture()),
            ArchChoice::Variant(id) => layer_variant(id),
            ArchChoice::ForMask => {
                let m = preset_mask(&self.mask)?;
                let (_, pad, pool) = MASK_ROWS
                    .iter()
                    .find(|(n, _, _)| *n == self.mask)
                    .ok_or_else(|| invalid(format!("no architecture row for mask '{}'", self.mask)))?;
                let (h, w) = m.output_shape();
                Ok(masked_architecture(h, w, *pad, *pool))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        preset_mask(&self.mask)?;
        let arch = self.architecture()?;
        let (h, w) = preset_mask(&self.mask)?.output_shape();
        if arch.input_shape() != Some((h, w, 2)) {
            return Err(invalid(format!("architecture input {:?} does not fit mask {} ({h}x{w})", arch.input_shape(), self.mask)));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be > 0"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub table: String,
    pub label: String,
    pub label_mode: String,
    pub balanced: bool,
    pub mask: String,
    pub params: usize,
    /// Epoch with the best test loss, under this harness's early-stopping rule.
    pub epochs: usize,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub overall: f64,
    pub per_class: [Option<f64>; 3],
    pub train_counts: [usize; 3],
    pub test_counts: [usize; 3],
    pub train_seconds: f64,
    pub repetition: usize,
}

/// Examples for one run: build, optionally balance, then split 80/20 within
/// each class so balanced runs keep equal class counts on both sides.
pub fn prepare_sets(datasets: &[DatasetFile], spec: &ExperimentSpec, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    let ex_spec = ExampleSpec::new(preset_mask(&spec.mask)?, spec.label_mode);
    let mut all = Vec::new();
    for ds in datasets {
        all.extend(build_examples(ds, &ex_spec)?.examples);
    }
    if all.is_empty() {
        return Err(invalid("no labeled examples"));
    }
    if spec.balanced {
        all = balance(&all, Example::class, seed)?;
    }
    let classify = spec.label_mode != LabelMode::Regression;
    let groups: Vec<Vec<Example>> = if classify {
        (0..3).map(|c| all.iter().filter(|e| e.class() == c).cloned().collect()).collect()
    } else {
        vec![all]
    };
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let (a, b) = split(g, spec.test_fraction, seed.wrapping_add(i as u64 + 1))?;
        tr.extend(a);
        te.extend(b);
    }
    if tr.is_empty() || te.is_empty() {
        return Err(invalid("split left an empty training or test set"));
    }
    Ok((tr, te))
}

/// Train and evaluate one spec; one row per repetition.
pub fn run_experiment(datasets: &[DatasetFile], spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    (0..spec.repetitions).map(|rep| run_once(datasets, spec, rep).map(|(_, row)| row)).collect()
}

/// First repetition of `spec`, keeping the trained network.
pub fn train_spec(datasets: &[DatasetFile], spec: &ExperimentSpec) -> Result<(Network<f32>, ExperimentRow)> {
    spec.validate()?;
    run_once(datasets, spec, 0)
}

fn run_once(datasets: &[DatasetFile], spec: &ExperimentSpec, rep: usize) -> Result<(Network<f32>, ExperimentRow)> {
    let arch = spec.architecture()?;
    let params = arch.param_count()?;
    let seed = spec.seed.wrapping_add(rep as u64 * 1_000_003);
    let (tr, te) = prepare_sets(datasets, spec, seed)?;
    let t0 = Instant::now();
    let net = Network::<f32>::new(arch, seed)?;
    let (net, report) = train(net, &tr, &te, &TrainConfig { seed, ..spec.train.clone() })?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let m = crate::tinynet::evaluate(&net, &te, spec.train.loss)?;
    let pc = |i: usize| m.per_class.get(i).copied().flatten();
    let row = ExperimentRow {
        table: spec.table.clone(),
        label: spec.label.clone(),
        label_mode: format!("{:?}", spec.label_mode),
        balanced: spec.balanced,
        mask: spec.mask.clone(),
        params,
        epochs: report.best_epoch,
        epochs_run: report.epochs_run,
        early_stopped: report.stop_reason == StopReason::EarlyStop,
        overall: m.overall,
        per_class: [pc(0), pc(1), pc(2)],
        train_counts: class_counts(&tr),
        test_counts: class_counts(&te),
        train_seconds,
        repetition: rep,
    };
    Ok((net, row))
}

/// Label mode x balancing grid on the base layout.
pub fn table2_specs(train: &TrainConfig) -> Vec<ExperimentSpec> {
    let mut out = Vec::new();
    for (mode, m) in [(LabelMode::ClassificationManual, "Manual"), (LabelMode::ClassificationAuto, "Auto")] {
        for (balanced, b) in [(true, "Balanced"), (false, "Unbalanced")] {
            out.push(ExperimentSpec::new(
                "II",
                &format!("{m}, {b}"),
                mode,
                balanced,
                "full30x40",
                ArchChoice::Variant("base".into()),
                train.clone(),
            ));
        }
    }
    out
}

/// Single-layer manipulations, manual labels, balanced.
pub fn table3_specs(train: &TrainConfig) -> Vec<ExperimentSpec> {
    layer_variants()
        .into_iter()
        .map(|(id, desc, _)| {
            ExperimentSpec::new("III", desc, LabelMode::ClassificationManual, true, "full30x40", ArchChoice::Variant(id.into()), train.clone())
        })
        .collect()
}

/// Every mask preset with its resized base layout, manual labels, balanced.
pub fn table4_specs(train: &TrainConfig) -> Vec<ExperimentSpec> {
    MASK_ROWS
        .iter()
        .map(|(mask, _, _)| {
            ExperimentSpec::new("IV", mask, LabelMode::ClassificationManual, true, mask, ArchChoice::ForMask, train.clone())
        })
        .collect()
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text table. Epochs are best-test-loss epochs under early stopping.
pub fn format_rows(rows: &[ExperimentRow]) -> String {
    let mut s = format!(
        "{:<5} {:<62} {:>7} {:>6} {:>8} {:>7} {:>7} {:>7} {:>16}\n",
        "table", "run", "params", "epochs", "overall", "left", "none", "right", "train (l/n/r)"
    );
    for r in rows {
        s += &format!(
            "{:<5} {:<62} {:>7} {:>6} {:>8} {:>7} {:>7} {:>7} {:>16}\n",
            r.table,
            r.label,
            r.params,
            r.epochs,
            pct(Some(r.overall)),
            pct(r.per_class[0]),
            pct(r.per_class[1]),
            pct(r.per_class[2]),
            format!("{}/{}/{}", r.train_counts[0], r.train_counts[1], r.train_counts[2]),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rows_parameter_counts() {
        let train = TrainConfig::default();
        let counts: Vec<(String, usize)> =
            table4_specs(&train).iter().map(|s| (s.mask.clone(), s.architecture().unwrap().param_count().unwrap())).collect();
        let get = |m: &str| counts.iter().find(|(n, _)| n == m).unwrap().1;
        assert_eq!(get("full30x40"), 8323);
        assert_eq!(get("best15x20"), 6403);
        assert_eq!(get("center8x14"), 4867);
        assert_eq!(get("band5x40"), 5123);
        assert_eq!(get("center30x20"), 5123);
        assert_eq!(get("stride15x40"), 4739);
        assert_eq!(get("lower15x20"), 4099);
        for s in table4_specs(&train).iter().chain(&table3_specs(&train)).chain(&table2_specs(&train)) {
            s.validate().unwrap();
        }
    }

    #[test]
    fn variant_counts() {
        let train = TrainConfig::default();
        let got: Vec<usize> = table3_specs(&train).iter().map(|s| s.architecture().unwrap().param_count().unwrap()).collect();
        assert_eq!(got, vec![8323, 10099, 6619, 13075, 8643, 12627, 6139, 8555]);
        let spec = ExperimentSpec { arch: ArchChoice::Variant("final".into()), mask: "best15x20".into(), ..table3_specs(&train)[0].clone() };
        assert_eq!(spec.architecture().unwrap().param_count().unwrap(), 9235);
        let bad = ExperimentSpec { mask: "best15x20".into(), ..table3_specs(&train)[0].clone() };
        assert!(bad.validate().is_err());
    }
}
