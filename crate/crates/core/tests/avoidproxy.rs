use std::sync::atomic::Ordering;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use flowguard::avoidproxy::*;
use flowguard::datapipe::Class;
use flowguard::flowcore::preset_mask;
use flowguard::mvcodec::{encode_framed, GridSpec, MotionVector, MotionVectorFrame};
use flowguard::tinynet::{final_architecture, Network};
use flowguard::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Timing-sensitive tests share the machine; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn grid() -> GridSpec {
    GridSpec::new(40, 30, true).unwrap()
}

fn frames(n: usize) -> Vec<SourceChunk> {
    (0..n)
        .map(|i| {
            let mut f = MotionVectorFrame::zeros(grid());
            f.seq = i as u32;
            f.set(i % 30, i % 40, MotionVector::new(3, -2, 100));
            SourceChunk { bytes: encode_framed(&f), desired_steer: 0.6 }
        })
        .collect()
}

fn cfg() -> PipelineConfig {
    PipelineConfig::new(grid(), preset_mask("best15x20").unwrap())
}

#[test]
fn fast_inference_skips_nothing() {
    let _g = SERIAL.lock().unwrap();
    let model = ProxyModel::new(Network::new(final_architecture(), 1).unwrap()).unwrap();
    let mut applied = Vec::new();
    let stats = run_pipeline(paced(frames(45).into_iter(), 30.0), model, |d: &Decision| applied.push(d.source_seq), cfg());
    assert_eq!(stats.frames_parsed, 45);
    assert_eq!(stats.frames_skipped, 0, "{}", stats.to_kv());
    assert_eq!(stats.frames_inferred, 45);
    assert_eq!(applied, (0..45).collect::<Vec<u32>>());
}

#[test]
fn stalled_inference_does_not_slow_parsing() {
    let _g = SERIAL.lock().unwrap();
    let n = 60;
    let run = |stall: Duration| {
        let model = move |f: &ParsedFrame| {
            std::thread::sleep(stall);
            Ok(Decision { source_seq: f.seq, ..decide_classification([0.2, 0.6, 0.2], f.desired_steer) })
        };
        run_pipeline(paced(frames(n).into_iter(), 30.0), model, |_: &Decision| {}, cfg())
    };
    let free = run(Duration::ZERO);
    let stalled = run(Duration::from_millis(400));
    println!("parse rate free {:.2}/s, stalled {:.2}/s", free.parse_rate(), stalled.parse_rate());
    assert_eq!(stalled.frames_parsed, n as u64);
    assert!(stalled.parse_rate() >= 0.97 * free.parse_rate());
    assert!(stalled.frames_skipped > 40);
    assert!(stalled.max_mailbox_items <= 1);
}

#[test]
fn decisions_are_monotone_under_random_delays() {
    let _g = SERIAL.lock().unwrap();
    for seed in 0..3u64 {
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
        let model = |f: &ParsedFrame| {
            let ms = rng.lock().unwrap().gen_range(0..60);
            std::thread::sleep(Duration::from_millis(ms));
            Ok(Decision { source_seq: f.seq, ..decide_classification([0.5, 0.3, 0.2], f.desired_steer) })
        };
        let mut seqs = Vec::new();
        let mut sink_rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let stats = run_pipeline(
            paced(frames(60).into_iter(), 60.0),
            model,
            |d: &Decision| {
                seqs.push(d.source_seq);
                std::thread::sleep(Duration::from_millis(sink_rng.gen_range(0..40)));
            },
            cfg(),
        );
        assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
        assert_eq!(stats.freshness_violations, 0);
        assert_eq!(stats.frames_parsed, 60);
        assert_eq!(stats.frames_inferred + stats.frames_skipped, 60);
    }
}

#[test]
fn inference_errors_fail_safe_to_desired() {
    let _g = SERIAL.lock().unwrap();
    let model = |_: &ParsedFrame| -> flowguard::Result<Decision> { Err(Error::InvalidArgument("boom".into())) };
    let mut applied = Vec::new();
    let stats = run_pipeline(frames(5).into_iter(), model, |d: &Decision| applied.push(*d), cfg());
    assert!(stats.inference_errors >= 1);
    assert_eq!(stats.inference_errors, stats.frames_inferred);
    for d in applied {
        assert_eq!(d.klass, Class::None);
        assert_eq!(d.final_steer, 0.6);
    }
}

#[test]
fn stop_flag_shuts_down_promptly() {
    let _g = SERIAL.lock().unwrap();
    let c = cfg();
    let stop = c.stop.clone();
    let endless = std::iter::repeat_with(|| frames(1).remove(0));
    let t0 = Instant::now();
    std::thread::scope(|s| {
        s.spawn(|| {
            std::thread::sleep(Duration::from_millis(200));
            stop.store(true, Ordering::Relaxed);
        });
        let model = |f: &ParsedFrame| Ok(decide_classification([0.0, 1.0, 0.0], f.desired_steer));
        let stats = run_pipeline(paced(endless, 100.0), model, |_: &Decision| {}, c.clone());
        assert!(stats.frames_parsed > 5);
    });
    assert!(t0.elapsed() < Duration::from_secs(2));
}

#[test]
fn noise_between_frames_is_skipped() {
    let _g = SERIAL.lock().unwrap();
    let mut chunks = frames(4);
    for c in &mut chunks {
        c.bytes.splice(0..0, [0xde, 0xad, 0xbe, 0xef, b'F', b'G']);
    }
    let mut seqs = Vec::new();
    let model = |f: &ParsedFrame| Ok(Decision { source_seq: f.seq, ..decide_classification([0.0, 1.0, 0.0], 0.5) });
    let stats = run_pipeline(paced(chunks.into_iter(), 20.0), model, |d: &Decision| seqs.push(d.source_seq), cfg());
    assert_eq!(stats.frames_parsed, 4);
    assert_eq!(stats.resync_bytes, 4 * 6);
    assert_eq!(seqs, vec![0, 1, 2, 3]);
}

#[test]
fn sync_proxy_holds_and_skips() {
    let model = |f: &ParsedFrame| {
        let probs = if f.seq % 2 == 0 { [0.9, 0.05, 0.05] } else { [0.1, 0.8, 0.1] };
        Ok(Decision { source_seq: f.seq, ..decide_classification(probs, f.desired_steer) })
    };
    let mut p = SyncProxy::new(model, grid(), preset_mask("best15x20").unwrap());
    p.inference_every = 3;
    let out: Vec<Decision> = frames(9).iter().map(|c| p.step(&c.bytes, 0.4)).collect();
    // Inference on ticks 0, 3, 6 (frames 0, 3, 6); held in between.
    let seqs: Vec<u32> = out.iter().map(|d| d.source_seq).collect();
    assert_eq!(seqs, vec![0, 0, 0, 3, 3, 3, 6, 6, 6]);
    assert_eq!(out[0].final_steer, 0.0);
    assert_eq!(out[4].final_steer, 0.4);
    assert_eq!(p.stats.frames_inferred, 3);
    // Frames 1, 2, 4, 5 and 7 are replaced before inference reaches them.
    assert_eq!(p.stats.frames_skipped, 5);
}
