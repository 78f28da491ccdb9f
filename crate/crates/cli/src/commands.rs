use std::fs;
use std::net::{TcpListener, UdpSocket};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::json;

use flowguard::avoidproxy::{paced, run_pipeline, PipelineConfig, ProxyModel, SourceChunk};
use flowguard::datapipe::{
    auto_label, balance, build_examples, read_dataset, split, write_dataset, Class, DatasetFile, ExampleSpec,
    LabelMode, DEFAULT_DEADBAND,
};
use flowguard::flowcore::{mv_to_flowfield, preset_mask, render_hsv, FlowField, MaskSpec};
use flowguard::harness::{
    closed_loop_eval, format_rows, generate_data, run_experiment, serve_inference, table2_specs, table3_specs,
    table4_specs, train_spec, ArchChoice, ClosedLoopConfig, DriveConfig, DriveSession, ExperimentSpec, GenConfig,
    KvConfig, Policy, ServeConfig,
};
use flowguard::mvcodec::{encode_framed, grid_for_resolution, stream_frames, GridSpec, MotionVectorFrame};
use flowguard::simworld::DriverConfig;
use flowguard::tinynet::{evaluate, load_weights_any, save_weights, LossKind, Network, Optimizer, TrainConfig};

use crate::ws::{run_drive_server, DriveServerConfig};

fn write_json(kv: &KvConfig, value: &serde_json::Value) -> Result<()> {
    if let Some(p) = kv.get_str("json") {
        fs::write(p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {p}"))?;
    }
    Ok(())
}

pub fn load_datasets(kv: &KvConfig, key: &str) -> Result<Vec<DatasetFile>> {
    let paths = kv.get_list(key).filter(|v| !v.is_empty()).with_context(|| format!("missing required key '{key}'"))?;
    paths.iter().map(|p| read_dataset(p).with_context(|| format!("reading {p}"))).collect()
}

fn load_net(path: &str) -> Result<Network<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading network {path}"))?;
    Ok(load_weights_any(&bytes)?)
}

fn mask(kv: &KvConfig) -> Result<MaskSpec> {
    Ok(preset_mask(kv.get_str("mask").unwrap_or("best15x20"))?)
}

fn train_config(kv: &KvConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let optimizer = match kv.get_str("optimizer").unwrap_or("adam") {
        "adam" => d.optimizer,
        "sgd" => Optimizer::Sgd,
        o => bail!("unknown optimizer '{o}' (adam | sgd)"),
    };
    Ok(TrainConfig {
        loss: kv.get_or("loss", LossKind::Mse)?,
        optimizer,
        learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
        patience: kv.get_or("patience", d.patience)?,
        seed: kv.get_or("seed", d.seed)?,
    })
}

fn experiment_spec(kv: &KvConfig) -> Result<ExperimentSpec> {
    let mode: LabelMode = kv.get_or("mode", LabelMode::ClassificationAuto)?;
    let balanced = kv.get_or("balanced", true)?;
    let mask = kv.get_str("mask").unwrap_or("best15x20");
    let arch = match kv.get_str("arch").unwrap_or("final") {
        "for_mask" => ArchChoice::ForMask,
        id => ArchChoice::Variant(id.into()),
    };
    let mut spec = ExperimentSpec::new("-", "train", mode, balanced, mask, arch, train_config(kv)?);
    spec.test_fraction = kv.get_or("test_fraction", spec.test_fraction)?;
    spec.repetitions = kv.get_or("repetitions", spec.repetitions)?;
    spec.seed = kv.get_or("seed", spec.seed)?;
    Ok(spec)
}

fn label_of(s: &flowguard::datapipe::Sample, mode: &str, deadband: f64) -> Result<Option<Class>> {
    Ok(match mode {
        "auto" => Some(auto_label(s, deadband)),
        "manual" => s.manual_label,
        m => bail!("unknown label source '{m}' (auto | manual)"),
    })
}

fn class_counts_line(labels: impl Iterator<Item = Option<Class>>) -> [usize; 4] {
    let mut c = [0usize; 4];
    for l in labels {
        c[l.map_or(3, Class::index)] += 1;
    }
    c
}

pub fn gen_data(kv: &KvConfig) -> Result<()> {
    let cfg = GenConfig::from_kv(kv)?;
    let out = kv.require_str("out")?;
    let (ds, stats) = generate_data(&cfg)?;
    write_dataset(&ds, out).with_context(|| format!("writing {out}"))?;
    if let Some(p) = kv.get_str("stream_out") {
        let bytes: Vec<u8> = ds.samples.iter().flat_map(|s| encode_framed(&s.flow)).collect();
        fs::write(p, bytes).with_context(|| format!("writing {p}"))?;
    }
    println!(
        "wrote {} samples to {out}: {} episodes, {} collisions, {} timeouts, {} override frames",
        ds.len(),
        stats.episodes,
        stats.collisions,
        stats.timeouts,
        stats.override_frames
    );
    write_json(
        kv,
        &json!({"samples": ds.len(), "episodes": stats.episodes, "collisions": stats.collisions,
                "timeouts": stats.timeouts, "override_frames": stats.override_frames}),
    )
}

/// Fill each sample's label slot from the steering channels.
pub fn label_auto(kv: &KvConfig) -> Result<()> {
    let input = kv.require_str("in")?;
    let out = kv.require_str("out")?;
    let deadband = kv.get_or("deadband", DEFAULT_DEADBAND)?;
    let overwrite = kv.get_or("overwrite", false)?;
    let mut ds = read_dataset(input)?;
    let (mut filled, mut agree, mut compared) = (0usize, 0usize, 0usize);
    for s in &mut ds.samples {
        let a = auto_label(s, deadband);
        if let Some(m) = s.manual_label {
            compared += 1;
            agree += usize::from(m == a);
        }
        if overwrite || s.manual_label.is_none() {
            s.manual_label = Some(a);
            filled += 1;
        }
    }
    write_dataset(&ds, out)?;
    let c = class_counts_line(ds.samples.iter().map(|s| s.manual_label));
    let agreement = if compared == 0 { None } else { Some(agree as f64 / compared as f64) };
    println!("labeled {filled} of {} samples; left/none/right = {}/{}/{}", ds.len(), c[0], c[1], c[2]);
    if let Some(a) = agreement {
        println!("auto vs existing labels agree on {:.2}% of {compared}", 100.0 * a);
    }
    write_json(kv, &json!({"filled": filled, "counts": &c[..3], "agreement": agreement}))
}

pub fn balance_cmd(kv: &KvConfig) -> Result<()> {
    let input = kv.require_str("in")?;
    let out = kv.require_str("out")?;
    let source = kv.get_str("labels").unwrap_or("manual");
    let deadband = kv.get_or("deadband", DEFAULT_DEADBAND)?;
    let ds = read_dataset(input)?;
    let mut labeled = Vec::new();
    for s in &ds.samples {
        if let Some(c) = label_of(s, source, deadband)? {
            labeled.push((c, s.clone()));
        }
    }
    let kept = balance(&labeled, |(c, _)| c.index(), kv.get_or("seed", 0u64)?)?;
    let before = class_counts_line(labeled.iter().map(|(c, _)| Some(*c)));
    let after = class_counts_line(kept.iter().map(|(c, _)| Some(*c)));
    let out_ds = DatasetFile { grid: ds.grid, samples: kept.into_iter().map(|(_, s)| s).collect() };
    write_dataset(&out_ds, out)?;
    println!(
        "balanced {} -> {} samples; before {}/{}/{}, after {}/{}/{}",
        labeled.len(),
        out_ds.len(),
        before[0],
        before[1],
        before[2],
        after[0],
        after[1],
        after[2]
    );
    write_json(kv, &json!({"before": &before[..3], "after": &after[..3], "total": out_ds.len()}))
}

pub fn split_cmd(kv: &KvConfig) -> Result<()> {
    let ds = read_dataset(kv.require_str("in")?)?;
    let frac = kv.get_or("test_fraction", 0.2)?;
    let (tr, te) = split(&ds.samples, frac, kv.get_or("seed", 0u64)?)?;
    let (a, b) = (kv.require_str("train_out")?, kv.require_str("test_out")?);
    let (tr, te) = (DatasetFile { grid: ds.grid, samples: tr }, DatasetFile { grid: ds.grid, samples: te });
    write_dataset(&tr, a)?;
    write_dataset(&te, b)?;
    println!("split {} samples: {} train -> {a}, {} test -> {b}", ds.len(), tr.len(), te.len());
    write_json(kv, &json!({"train": tr.len(), "test": te.len()}))
}

pub fn train_cmd(kv: &KvConfig) -> Result<()> {
    let datasets = load_datasets(kv, "data")?;
    let spec = experiment_spec(kv)?;
    let out = kv.require_str("out")?;
    let (net, row) = train_spec(&datasets, &spec)?;
    fs::write(out, save_weights(&net)).with_context(|| format!("writing {out}"))?;
    print!("{}", format_rows(std::slice::from_ref(&row)));
    println!("saved {} parameters to {out}", net.param_count());
    write_json(kv, &serde_json::to_value(&row)?)
}

fn closed_loop_config(kv: &KvConfig) -> Result<ClosedLoopConfig> {
    let d = ClosedLoopConfig::default();
    Ok(ClosedLoopConfig {
        runs: kv.get_or("runs", d.runs)?,
        max_ticks: kv.get_or("max_ticks", d.max_ticks)?,
        speed: kv.get_or("speed", d.speed)?,
        desired_steer: kv.get_or("desired_steer", d.desired_steer)?,
        noise_counts: kv.get_or("noise_counts", d.noise_counts)?,
        clear_distance: kv.get_or("clear_distance", d.clear_distance)?,
        seed: kv.get_or("seed", d.seed)?,
        ..d
    })
}

/// Offline metrics on a dataset, or closed-loop runs when `scenario` is set.
pub fn eval_cmd(kv: &KvConfig) -> Result<()> {
    if let Some(scenario) = kv.get_str("scenario") {
        let policy = match kv.get_str("policy").unwrap_or("proxy") {
            "proxy" => Policy::Proxy {
                net: load_net(kv.require_str("net")?)?,
                mask: mask(kv)?,
                inference_every: kv.get_or("inference_every", 1)?,
            },
            "oracle" | "oracle_driver" => Policy::Oracle(DriverConfig {
                trigger_distance: kv.get_or("trigger_distance", DriverConfig::default().trigger_distance)?,
                ..DriverConfig::default()
            }),
            "passthrough" => Policy::Passthrough,
            p => bail!("unknown policy '{p}' (proxy | oracle | passthrough)"),
        };
        let report = closed_loop_eval(scenario, &policy, &closed_loop_config(kv)?)?;
        println!("{}", report.summary());
        if let Some(t) = report.mean_time_to_first_collision_s {
            println!("mean time to first collision {t:.2} s");
        }
        return write_json(kv, &serde_json::to_value(&report)?);
    }
    let net = load_net(kv.require_str("net")?)?;
    let datasets = load_datasets(kv, "data")?;
    let mut spec = ExampleSpec::new(mask(kv)?, kv.get_or("mode", LabelMode::ClassificationManual)?);
    spec.deadband = kv.get_or("deadband", DEFAULT_DEADBAND)?;
    let mut examples = Vec::new();
    for ds in &datasets {
        examples.extend(build_examples(ds, &spec)?.examples);
    }
    let m = evaluate(&net, &examples, kv.get_or("loss", LossKind::Mse)?)?;
    println!("{} examples: overall {:.2}%, mean loss {:.5}", examples.len(), 100.0 * m.overall, m.mean_loss);
    for (c, acc) in m.per_class.iter().enumerate() {
        let name = Class::from_index(c).map_or("-", Class::name);
        match acc {
            Some(a) => println!("  {name:<5} {:.2}% of {}", 100.0 * a, m.class_counts[c]),
            None => println!("  {name:<5} absent"),
        }
    }
    write_json(kv, &serde_json::to_value(&m)?)
}

pub fn experiment_cmd(kv: &KvConfig) -> Result<()> {
    let datasets = load_datasets(kv, "data")?;
    let train = train_config(kv)?;
    let tables = kv.get_list("tables").unwrap_or_else(|| vec!["2".into(), "3".into(), "4".into()]);
    let mut specs = Vec::new();
    for t in &tables {
        specs.extend(match t.as_str() {
            "2" | "II" => table2_specs(&train),
            "3" | "III" => table3_specs(&train),
            "4" | "IV" => table4_specs(&train),
            t => bail!("unknown table '{t}' (2 | 3 | 4)"),
        });
    }
    let mut rows = Vec::new();
    for mut spec in specs {
        spec.repetitions = kv.get_or("repetitions", 1)?;
        spec.seed = kv.get_or("seed", 0)?;
        let r = run_experiment(&datasets, &spec)?;
        print!("{}", format_rows(&r).lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
        rows.extend(r);
    }
    println!();
    print!("{}", format_rows(&rows));
    println!("epochs: best test-loss epoch, early stopping with patience {}", train.patience);
    write_json(kv, &serde_json::to_value(&rows)?)
}

fn install_stop() -> Arc<std::sync::atomic::AtomicBool> {
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let s = stop.clone();
    // A second handler cannot be installed; the flag still works for the first.
    let _ = ctrlc::set_handler(move || s.store(true, Ordering::Relaxed));
    stop
}

pub fn drive_cmd(kv: &KvConfig) -> Result<()> {
    let mut cfg = DriveConfig::new(kv.get_str("scenario").unwrap_or("frontal_wall"), mask(kv)?);
    cfg.inference_every = kv.get_or("inference_every", cfg.inference_every)?;
    cfg.stats_every = kv.get_or("stats_every", cfg.stats_every)?;
    cfg.seed = kv.get_or("seed", cfg.seed)?;
    let net = kv.get_str("net").map(load_net).transpose()?;
    let session = DriveSession::new(cfg, net)?;
    let listen = kv.get_str("listen").unwrap_or("127.0.0.1:8765");
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    let server = DriveServerConfig {
        tick_hz: kv.get_or("tick_hz", 30.0)?,
        record_out: kv.get_str("record_out").map(Into::into),
        max_ticks: kv.get("max_ticks")?,
        stop: install_stop(),
    };
    println!("drive service on ws://{}", listener.local_addr()?);
    let session = run_drive_server(listener, session, &server)?;
    let s = session.stats();
    println!("{} ticks, {} collisions, {} overrides, {} recorded, {} labeled", s.ticks, s.collisions, s.overrides, s.recorded, s.labeled);
    Ok(())
}

fn grid(kv: &KvConfig) -> Result<GridSpec> {
    if kv.contains("width") || kv.contains("height") {
        return Ok(grid_for_resolution(kv.get_or("width", 640)?, kv.get_or("height", 480)?)?);
    }
    Ok(GridSpec::new(kv.get_or("cols", 40)?, kv.get_or("rows", 30)?, kv.get_or("pad", false)?)?)
}

pub fn serve_infer_cmd(kv: &KvConfig) -> Result<()> {
    let net = load_net(kv.require_str("net")?)?;
    let g = if kv.contains("cols") || kv.contains("width") { grid(kv)? } else { grid_for_resolution(640, 480)? };
    let mut cfg = ServeConfig::new(g, mask(kv)?);
    cfg.desired_steer = kv.get_or("desired_steer", cfg.desired_steer)?;
    cfg.stop = install_stop();
    let listen = kv.get_str("listen").unwrap_or("127.0.0.1:9870");
    let socket = UdpSocket::bind(listen).with_context(|| format!("binding {listen}"))?;
    println!("inference server on udp://{}", socket.local_addr()?);
    let stats = serve_inference(socket, ProxyModel::new(net)?, cfg)?;
    println!(
        "{} datagrams, {} inferred, {} replies, {} malformed, {} duplicates, {} superseded",
        stats.datagrams, stats.inferred, stats.replies, stats.malformed, stats.duplicates, stats.superseded
    );
    write_json(kv, &serde_json::to_value(&stats)?)
}

/// Decode an FGMV stream; with `net` set, run it through the threaded
/// pipeline at `rate_hz`.
pub fn parse_cmd(kv: &KvConfig) -> Result<()> {
    let path = kv.require_str("in")?;
    let g = grid(kv)?;
    let bytes = fs::read(path).with_context(|| format!("reading {path}"))?;
    if let Some(net) = kv.get_str("net") {
        let model = ProxyModel::new(load_net(net)?)?;
        let mut cfg = PipelineConfig::new(g, mask(kv)?);
        if let Some(ms) = kv.get::<f64>("inference_interval_ms")? {
            cfg.inference_min_interval = Some(Duration::from_secs_f64(ms / 1000.0));
        }
        let chunk = kv.get_or("chunk_bytes", g.payload_len() + 16)?.max(1);
        let desired = kv.get_or("desired_steer", 0.5)?;
        let chunks: Vec<SourceChunk> =
            bytes.chunks(chunk).map(|c| SourceChunk { bytes: c.to_vec(), desired_steer: desired }).collect();
        let stats = match kv.get::<f64>("rate_hz")? {
            Some(hz) => run_pipeline(paced(chunks.into_iter(), hz), model, |_| {}, cfg),
            None => run_pipeline(chunks.into_iter(), model, |_| {}, cfg),
        };
        print!("{}", stats.to_kv());
        return write_json(kv, &serde_json::to_value(&stats)?);
    }
    let mut frames = stream_frames(bytes.as_slice(), g);
    let mut rows = Vec::new();
    for f in frames.by_ref() {
        let f = f?;
        let field = mv_to_flowfield(&f, kv.get_or("scale", 1.0)?);
        println!("seq {:>6} t {:>10} us  mean |flow| {:.3}", f.seq, f.timestamp_us, field.mean_magnitude());
        rows.push(json!({"seq": f.seq, "timestamp_us": f.timestamp_us, "mean_magnitude": field.mean_magnitude()}));
    }
    let skipped = frames.reader().skipped_bytes();
    println!("{} frames, {} bytes skipped", rows.len(), skipped);
    write_json(kv, &json!({"frames": rows, "skipped_bytes": skipped}))
}

fn upscale(field: &FlowField, k: usize) -> FlowField {
    let mut out = FlowField::zeros(field.rows * k, field.cols * k);
    for r in 0..out.rows {
        for c in 0..out.cols {
            let (u, v) = field.at(r / k, c / k);
            out.u[r * out.cols + c] = u;
            out.v[r * out.cols + c] = v;
        }
    }
    out
}

/// One frame to a P6 PPM: `index` into an FGDS file, or `frame` into an
/// FGMV stream.
pub fn render_cmd(kv: &KvConfig) -> Result<()> {
    let path = kv.require_str("in")?;
    let out = kv.require_str("out")?;
    let frame: MotionVectorFrame = if path.ends_with(".fgmv") || kv.contains("frame") {
        let n: usize = kv.get_or("frame", 0)?;
        let bytes = fs::read(path).with_context(|| format!("reading {path}"))?;
        let f = stream_frames(bytes.as_slice(), grid(kv)?).nth(n);
        match f {
            Some(f) => f?,
            None => bail!("{path} has no frame {n}"),
        }
    } else {
        let ds = read_dataset(path)?;
        let i: usize = kv.get_or("index", 0)?;
        match ds.samples.get(i) {
            Some(s) => s.flow.clone(),
            None => bail!("{path} has {} samples, no index {i}", ds.len()),
        }
    };
    let field = mv_to_flowfield(&frame, kv.get_or("scale", 1.0)?);
    let k = kv.get_or("upscale", 1usize)?.max(1);
    let ppm = render_hsv(&upscale(&field, k), kv.get_or("max_magnitude", 8.0)?)?;
    fs::write(out, &ppm).with_context(|| format!("writing {out}"))?;
    println!("wrote {}x{} PPM to {out}", field.cols * k, field.rows * k);
    Ok(())
}
