use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowguard::harness::KvConfig;
use flowguard_cli::commands;

#[derive(Parser)]
#[command(name = "flowguard", version, about = "Optical-flow collision avoidance toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Opts {
    /// key=value config file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides applied after the config file
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn load(&self) -> anyhow::Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        for pair in &self.set {
            kv.set_pair(pair)?;
        }
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Record scripted-operator drives into an FGDS file
    #[command(after_help = "keys: out, scenarios, n_frames, trigger_distance, hold_extra_frames, speed, episode_ticks, noise_counts, seed, stream_out, json")]
    GenData(Opts),
    /// Fill label slots from the steering channels
    #[command(after_help = "keys: in, out, deadband, overwrite, json")]
    LabelAuto(Opts),
    /// Downsample every class to the smallest class count
    #[command(after_help = "keys: in, out, labels (manual | auto), deadband, seed, json")]
    Balance(Opts),
    /// Shuffle and split a dataset
    #[command(after_help = "keys: in, train_out, test_out, test_fraction, seed, json")]
    Split(Opts),
    /// Train a network and save its weights (FGNN)
    #[command(after_help = "keys: data, out, mode (auto | manual | regression), balanced, mask, arch (variant id | final | for_mask), \
                            loss, optimizer, learning_rate, batch_size, max_epochs, patience, test_fraction, seed, json")]
    Train(Opts),
    /// Evaluate a network on datasets, or a policy in closed loop (scenario=...)
    #[command(after_help = "keys: net, data, mode, mask, deadband, loss | scenario, policy (proxy | oracle | passthrough), \
                            runs, max_ticks, speed, desired_steer, inference_every, clear_distance, seed, json")]
    Eval(Opts),
    /// Run the label-mode, layer-variant and mask tables
    #[command(after_help = "keys: data, tables (2,3,4), max_epochs, patience, learning_rate, batch_size, repetitions, seed, json")]
    Experiment(Opts),
    /// Interactive drive service over a websocket (newline-delimited JSON)
    #[command(after_help = "keys: scenario, net, mask, listen, tick_hz, inference_every, stats_every, record_out, max_ticks, seed")]
    Drive(Opts),
    /// Remote inference over UDP (FGRI datagrams)
    #[command(after_help = "keys: net, listen, mask, width/height or cols/rows/pad, desired_steer, json")]
    ServeInfer(Opts),
    /// Decode an FGMV stream, optionally through the threaded pipeline
    #[command(after_help = "keys: in, width/height or cols/rows/pad, scale | net, mask, rate_hz, inference_interval_ms, chunk_bytes, json")]
    Parse(Opts),
    /// Render one frame as an HSV-coded P6 PPM
    #[command(after_help = "keys: in (.fgds or .fgmv), out, index | frame, width/height or cols/rows/pad, scale, max_magnitude, upscale")]
    Render(Opts),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, run): (&Opts, fn(&KvConfig) -> anyhow::Result<()>) = match &cli.cmd {
        Cmd::GenData(o) => (o, commands::gen_data),
        Cmd::LabelAuto(o) => (o, commands::label_auto),
        Cmd::Balance(o) => (o, commands::balance_cmd),
        Cmd::Split(o) => (o, commands::split_cmd),
        Cmd::Train(o) => (o, commands::train_cmd),
        Cmd::Eval(o) => (o, commands::eval_cmd),
        Cmd::Experiment(o) => (o, commands::experiment_cmd),
        Cmd::Drive(o) => (o, commands::drive_cmd),
        Cmd::ServeInfer(o) => (o, commands::serve_infer_cmd),
        Cmd::Parse(o) => (o, commands::parse_cmd),
        Cmd::Render(o) => (o, commands::render_cmd),
    };
    match opts.load().and_then(|kv| run(&kv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
