use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn geonet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geonet")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geonet(args);
    assert!(
        out.status.success(),
        "geonet {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_writes_grids_and_manifest_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--n", "2", "--grid", "8", "--seed", "1", "--out", s(d)]);
    }
    let files = listing(&a);
    assert_eq!(files.len(), 5);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".geogrid")).count(), 4);
    assert_eq!(files, listing(&b));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("k0 = 5") && manifest.contains("k1 = 2") && manifest.contains("seed = 1"));

    let c = tmp.path().join("c");
    ok(&["gen-data", "--family", "image", "--channels", "3", "--n", "1", "--grid", "6", "--out", s(&c)]);
    assert_eq!(listing(&c).len(), 7);
}

#[test]
fn invalid_config_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "train.lr = 1e-3\ntrain.bogus = 4\n").unwrap();
    let run = tmp.path().join("run");
    let out = geonet(&["train", "--config", s(&cfg), "--data", "nowhere", "--out", s(&run)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.bogus"));
    assert!(!run.exists());

    std::fs::write(&cfg, "arch.p = 0\n").unwrap();
    assert!(!geonet(&["train", "--config", s(&cfg), "--data", "nowhere", "--out", s(&run)]).status.success());
    assert!(!run.exists());
}

#[test]
fn paper_default_config_parses_and_echoes() {
    let p = configs().join("paper_default.cfg");
    let text = ok(&["train", "--config", s(&p), "--out", "unused", "--dry-run"]);
    for line in ["train.n_pairs = 1500", "train.lr = 0.00005", "arch.trunk_depth = 7", "weights.alpha1 = 30"] {
        assert!(text.contains(line), "missing {line:?} in\n{text}");
    }
    assert!(!Path::new("unused").exists());
}

#[test]
fn smoke_training_then_inference_eval_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["gen-data", "--n", "2", "--grid", "8", "--k0", "1", "--k1", "1", "--identity", "--seed", "3", "--out", s(&data)]);
    let start = std::time::Instant::now();
    let text = ok(&["train", "--deterministic", "--config", s(&configs().join("smoke.cfg")), "--data", s(&data), "--out", s(&run)]);
    assert!(start.elapsed().as_secs() < 60);
    assert!(text.contains("epoch    50"));
    assert!(text.contains("reached the epoch cap") || text.contains("converged"));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.lines().any(|l| l == "epoch,l_cty,l_hj,l_bc,l_ge,l_total,wall_time"));
    assert!(log.contains("# train.epochs_max = 50"));
    let model = run.join("model.ckpt");
    assert!(std::fs::read_to_string(&model).unwrap().starts_with("GEONET-CKPT 1"));

    // Super-resolution: 8x8 inputs rendered on a 20x16 mesh.
    let frames = tmp.path().join("frames");
    let mu = data.join("pair_0000_mu0.geogrid");
    ok(&["infer", "--model", s(&model), "--mu0", s(&mu), "--mu1", s(&mu), "--t", "0,0.5", "--res", "20", "16", "--out", s(&frames)]);
    let files = listing(&frames);
    assert_eq!(files.len(), 4);
    let grid = String::from_utf8(files.iter().find(|(n, _)| n == "frame_t0.50.geogrid").unwrap().1.clone()).unwrap();
    assert!(grid.lines().nth(1).unwrap() == "20 16");

    let csv = tmp.path().join("eval.csv");
    ok(&["eval", "--model", s(&model), "--testset", s(&data), "--reference", "bures", "--res", "12", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "time,mean_mse,std_mse,n_pairs,reference,mesh");
    assert!(lines[1..].iter().all(|l| l.contains(",2,bures-closed-form,12x12")));

    let csv = tmp.path().join("sink.csv");
    ok(&["eval", "--model", s(&model), "--testset", s(&data), "--reference", "sinkhorn", "--res", "12", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains("sinkhorn-displacement(eps=0.003;splat=1cell;tol=1e-6)")));

    let csv = tmp.path().join("bench.csv");
    ok(&["bench", "--model", s(&model), "--meshes", "32,64", "--reps", "3", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().starts_with("1024,operator-inference"));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--n", "2", "--grid", "8", "--k0", "1", "--k1", "1", "--seed", "4", "--out", s(&data)]);
    let cfg = configs().join("smoke.cfg");
    let (full, part) = (tmp.path().join("full"), tmp.path().join("part"));
    ok(&["train", "--deterministic", "--config", s(&cfg), "--set", "train.epochs_max=12", "--data", s(&data), "--out", s(&full)]);
    ok(&["train", "--deterministic", "--config", s(&cfg), "--set", "train.epochs_max=5", "--data", s(&data), "--out", s(&part)]);
    let text = ok(&["train", "--deterministic", "--resume", "--set", "train.epochs_max=12", "--data", s(&data), "--out", s(&part)]);
    assert!(text.contains("override train.epochs_max = 12 (was 5)"));
    let a = std::fs::read_to_string(full.join("model.ckpt")).unwrap();
    let b = std::fs::read_to_string(part.join("model.ckpt")).unwrap();
    // Only the recorded epoch cap may differ.
    let strip = |t: &str| t.lines().filter(|l| !l.contains("train.epochs_max")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a), strip(&b));

    let out = geonet(&["train", "--resume", "--set", "arch.p=4", "--data", s(&data), "--out", s(&part)]);
    assert!(!out.status.success());
}

#[test]
fn malformed_grid_is_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    ok(&["gen-data", "--n", "2", "--grid", "8", "--k0", "1", "--k1", "1", "--seed", "3", "--out", s(&data)]);
    ok(&["train", "--config", s(&configs().join("smoke.cfg")), "--set", "train.epochs_max=1", "--data", s(&data), "--out", s(&run)]);
    let bad = tmp.path().join("bad.geogrid");
    std::fs::write(&bad, "GEOGRID 1\n2 2\n0 5 0 5\ndensity\n1 2 3\n").unwrap();
    let out = geonet(&[
        "infer",
        "--model",
        s(&run.join("model.ckpt")),
        "--mu0",
        s(&bad),
        "--mu1",
        s(&bad),
        "--out",
        s(&tmp.path().join("f")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.geogrid"), "{err}");
    assert!(!tmp.path().join("f").exists());
}
