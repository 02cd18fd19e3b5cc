use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use ilv_model::RunConfig;
use ilv_tomo::io::{decode_projections, decode_volume};

fn ilv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilv")).args(args).output().unwrap()
}

fn ilv_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ilv"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: Output) -> Vec<u8> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_project_recon_pipeline() {
    let vol = ok(ilv(&["phantom", "--size", "16"]));
    let proj = ok(ilv_stdin(&["project", "--views", "10", "--det", "24"], &vol));
    let p = decode_projections(&proj).unwrap();
    assert_eq!(p.n_images(), 10);
    let rec = ok(ilv_stdin(&["recon", "--algo", "fdk", "--size", "16"], &proj));
    assert_eq!(decode_volume(&rec).unwrap().dims, [16, 16, 16]);
    let rec = ok(ilv_stdin(&["recon", "--algo", "sart", "--views", "5", "--iters", "2", "--size", "12"], &proj));
    assert_eq!(decode_volume(&rec).unwrap().dims, [12, 12, 12]);
}

#[test]
fn eval_identical_and_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ilv");
    let b = dir.path().join("b.ilv");
    ok(ilv(&["phantom", "--size", "16", "--out", path(&a)]));
    ok(ilv(&["phantom", "--size", "16", "--kind", "random", "--seed", "3", "--out", path(&b)]));
    let same = String::from_utf8(ok(ilv(&["eval", path(&a), path(&a)]))).unwrap();
    assert_eq!(same, "psnr_db,ssim\n99.000000,1.000000\n");
    let ab = String::from_utf8(ok(ilv(&["eval", "--no-header", path(&a), path(&b)]))).unwrap();
    let ba = String::from_utf8(ok(ilv(&["eval", "--no-header", path(&b), path(&a)]))).unwrap();
    assert_eq!(ab, ba);
    assert!(ab.lines().count() == 1 && ab.split(',').count() == 2);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let v = dir.path().join(format!("v{tag}.ilv"));
        let p = dir.path().join(format!("p{tag}.ilv"));
        let r = dir.path().join(format!("r{tag}.ilv"));
        ok(ilv(&["phantom", "--size", "16", "--kind", "random", "--seed", "11", "--out", path(&v)]));
        ok(ilv(&["project", "-i", path(&v), "--views", "6", "--det", "24", "--noise", "0.01", "--seed", "5", "-o", path(&p)]));
        ok(ilv(&["recon", "-i", path(&p), "--algo", "asdpocs", "--iters", "2", "--size", "16", "-o", path(&r)]));
        [v, p, r].map(|f| std::fs::read(f).unwrap())
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn resolved_parameters_written_next_to_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let v = dir.path().join("v.ilv");
    let p = dir.path().join("p.ilv");
    ok(ilv(&["phantom", "--size", "16", "--out", path(&v)]));
    ok(ilv(&["project", "-i", path(&v), "--views", "4", "--det", "20", "-o", path(&p)]));
    let params = std::fs::read_to_string(dir.path().join("p.ilv.params.toml")).unwrap();
    assert!(params.contains("command = \"project\"") && params.contains("views = 4"), "{params}");
    // the written geometry reproduces the projections
    let geometry = dir.path().join("p.ilv.geometry.toml");
    let q = dir.path().join("q.ilv");
    ok(ilv(&["project", "-i", path(&v), "--geometry", path(&geometry), "-o", path(&q)]));
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn export_slice_writes_pgm() {
    let vol = ok(ilv(&["phantom", "--size", "16"]));
    let pgm = ok(ilv_stdin(&["export-slice", "--axis", "1", "--index", "3"], &vol));
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);
    let bad = ilv_stdin(&["export-slice", "--index", "16"], &vol);
    assert!(!bad.status.success());
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = ilv(&["frobnicate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage") && err.contains("error kind: usage"), "{err}");
    let out = ilv(&["phantom", "--colour", "red"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn failures_report_machine_readable_kind() {
    let out = ilv_stdin(&["recon", "--algo", "fdk"], b"not a volume at all");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind: bad_magic"));
    let vol = ok(ilv(&["phantom", "--size", "16"]));
    let out = ilv_stdin(&["recon", "--algo", "fdk"], &vol);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind: wrong_kind"));
    let out = Command::new(env!("CARGO_BIN_EXE_ilv")).args(["phantom", "--size", "8"]).env("ILV_THREADS", "zero").output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind: usage"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let vol = ok(ilv(&["phantom", "--size", "16"]));
    let one = Command::new(env!("CARGO_BIN_EXE_ilv"))
        .args(["phantom", "--size", "16"])
        .env("ILV_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ok(one), vol);
}

#[test]
fn train_then_infer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, RunConfig::tiny().to_toml()).unwrap();
    let run = dir.path().join("run");
    ok(ilv(&["train-ilv", "--config", path(&cfg_path), "--steps", "3", "--out", path(&run)]));
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    assert!(trace.starts_with("step,lr,L_img,L_vol,L_refined,total,val_psnr\n"));
    let saved = RunConfig::from_toml(&std::fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    assert_eq!(saved.train.steps, 3);

    let refined = dir.path().join("refined.ilv");
    let coarse = dir.path().join("coarse.ilv");
    let gaussians = dir.path().join("g.ilvg");
    let render = dir.path().join("novel.pgm");
    ok(ilv(&[
        "infer-ilv",
        "--checkpoint",
        path(&run.join("checkpoint.bin")),
        "-o",
        path(&refined),
        "--coarse-out",
        path(&coarse),
        "--gaussians-out",
        path(&gaussians),
        "--render-angle",
        "17",
        "--render-out",
        path(&render),
    ]));
    let n = saved.model.vol_size;
    for f in [&refined, &coarse] {
        assert_eq!(decode_volume(&std::fs::read(f).unwrap()).unwrap().dims, [n; 3]);
    }
    let g = ilv_model::gsplat::load_gaussians(&gaussians).unwrap();
    assert_eq!(g.len(), saved.model.gaussian_side().pow(3));
    let side = saved.model.image_size;
    assert!(std::fs::read(&render).unwrap().starts_with(format!("P5\n{side} {side}\n255\n").as_bytes()));

    // projections from the CLI feed the model too
    let v = dir.path().join("v.ilv");
    let p = dir.path().join("p.ilv");
    ok(ilv(&["phantom", "--size", "16", "--voxel", "1.0", "--out", path(&v)]));
    let geometry = format!(
        "[geometry]\ndso = 1000.0\ndsd = 1500.0\ndet_rows = {side}\ndet_cols = {side}\ndet_pixel = 1.0\nn_views = 8\nbbox_half = {}\n",
        saved.data.bbox_half
    );
    let gpath = dir.path().join("geom.toml");
    std::fs::write(&gpath, geometry).unwrap();
    ok(ilv(&["project", "-i", path(&v), "--geometry", path(&gpath), "-o", path(&p)]));
    let out = ok(ilv(&["infer-ilv", "--checkpoint", path(&run.join("checkpoint.bin")), "-i", path(&p), "--views", "2"]));
    assert_eq!(decode_volume(&out).unwrap().dims, [n; 3]);
}

#[test]
fn bench_csv_shape_and_ordering() {
    let out = String::from_utf8(ok(ilv(&["bench", "--views", "10", "--size", "32", "--det", "48"]))).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("method,n_views,psnr_db,ssim,wall_seconds"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let psnr = |m: &str| rows.iter().find(|r| r[0] == m).unwrap()[2].parse::<f64>().unwrap();
    assert!(rows.iter().all(|r| r[1] == "10" && r.len() == 5));
    println!("{out}");
    assert!(psnr("SART") > psnr("FDK"));
}
