use std::path::Path;
use std::process::{Command, Output};

use flowguard::datapipe::{read_dataset, Class};
use flowguard::tinynet::load_weights_any;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowguard")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{args:?} failed:\n{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn data_train_eval_render_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "gen.cfg");
    std::fs::write(&cfg, "# small run\nn_frames = 600\nscenarios = frontal_wall, spheres\nseed = 3\n").unwrap();
    let ds_path = p(d, "a.fgds");
    let stream = p(d, "a.fgmv");
    let out = ok(&["gen-data", "-c", &cfg, &format!("out={ds_path}"), &format!("stream_out={stream}"), "n_frames=500"]);
    assert!(out.contains("wrote 500 samples"), "{out}");
    let ds = read_dataset(&ds_path).unwrap();
    assert_eq!(ds.len(), 500);

    let labeled = p(d, "auto.fgds");
    let out = ok(&["label-auto", &format!("in={ds_path}"), &format!("out={labeled}"), "overwrite=true"]);
    assert!(out.contains("labeled 500 of 500"), "{out}");
    let auto = read_dataset(&labeled).unwrap();
    let expect: Vec<Option<Class>> = ds.samples.iter().map(|s| Some(flowguard::datapipe::auto_label(s, 0.1))).collect();
    assert_eq!(auto.samples.iter().map(|s| s.manual_label).collect::<Vec<_>>(), expect);

    let bal = p(d, "bal.fgds");
    let json = p(d, "bal.json");
    ok(&["balance", &format!("in={ds_path}"), &format!("out={bal}"), &format!("json={json}")]);
    let b = read_dataset(&bal).unwrap();
    let mut counts = [0usize; 3];
    for s in &b.samples {
        counts[s.manual_label.unwrap().index()] += 1;
    }
    // Classes that occur at all end up with the same count.
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    assert!(present.len() >= 2 && present.iter().all(|&c| c == present[0]), "{counts:?}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["total"], present.iter().sum::<usize>());

    let (tr, te) = (p(d, "tr.fgds"), p(d, "te.fgds"));
    ok(&["split", &format!("in={ds_path}"), &format!("train_out={tr}"), &format!("test_out={te}"), "test_fraction=0.2"]);
    assert_eq!(read_dataset(&tr).unwrap().len(), 400);
    assert_eq!(read_dataset(&te).unwrap().len(), 100);

    let net = p(d, "net.fgnn");
    let out = ok(&["train", &format!("data={ds_path}"), &format!("out={net}"), "mode=manual", "max_epochs=3"]);
    assert!(out.contains("saved 9235 parameters"), "{out}");
    assert_eq!(load_weights_any(&std::fs::read(&net).unwrap()).unwrap().param_count(), 9235);

    let out = ok(&["eval", &format!("net={net}"), &format!("data={te}")]);
    assert!(out.contains("100 examples"), "{out}");
    let cl = p(d, "cl.json");
    let out = ok(&["eval", "scenario=frontal_wall", "policy=passthrough", "runs=5", &format!("json={cl}")]);
    assert!(out.contains("0/5 collision-free"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cl).unwrap()).unwrap();
    assert_eq!(report["collisions"], 5);
    ok(&["eval", "scenario=frontal_wall", &format!("net={net}"), "runs=2"]);

    let ppm = p(d, "f.ppm");
    ok(&["render", &format!("in={ds_path}"), "index=10", &format!("out={ppm}"), "upscale=4"]);
    let bytes = std::fs::read(&ppm).unwrap();
    let header = b"P6\n160 120\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 160 * 120 * 3);
    let ppm2 = p(d, "g.ppm");
    ok(&["render", &format!("in={stream}"), "frame=10", &format!("out={ppm2}"), "upscale=4"]);
    assert_eq!(std::fs::read(&ppm2).unwrap(), bytes, "stream frame 10 is dataset sample 10");

    let out = ok(&["parse", &format!("in={stream}")]);
    assert!(out.contains("500 frames, 0 bytes skipped"), "{out}");
    let pj = p(d, "pipe.json");
    let out = ok(&["parse", &format!("in={stream}"), &format!("net={net}"), &format!("json={pj}")]);
    assert!(out.contains("frames_parsed=500"), "{out}");
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&pj).unwrap()).unwrap();
    assert_eq!(stats["frames_inferred"].as_u64().unwrap() + stats["frames_skipped"].as_u64().unwrap(), 500);
    assert_eq!(stats["freshness_violations"], 0);
}

#[test]
fn missing_inputs_fail_cleanly() {
    let out = run(&["train", "data=/nonexistent/x.fgds", "out=/tmp/never.fgnn"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not found"), "{err}");

    let out = run(&["experiment", "-c", "/nonexistent/exp.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));

    let out = run(&["gen-data", "n_frames=10"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing required key 'out'"));

    let out = run(&["gen-data", "oops"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected key=value"));
}

#[test]
fn experiment_emits_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = p(dir.path(), "e.fgds");
    ok(&["gen-data", &format!("out={ds}"), "n_frames=300"]);
    let json = p(dir.path(), "rows.json");
    let out = ok(&["experiment", &format!("data={ds}"), "tables=3", "max_epochs=1", &format!("json={json}")]);
    for n in ["8323", "10099", "6619", "13075", "8643", "12627", "6139", "8555"] {
        assert!(out.contains(n), "missing {n}:\n{out}");
    }
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r["table"] == "III" && r["balanced"] == true));
}
