use std::path::Path;
use std::process::{Command, Output};

fn xlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set",
    "profile=desk",
    "--set",
    "per_class=20",
    "--set",
    "size=32",
    "--set",
    "input_size=32",
    "--set",
    "epochs=2",
    "--set",
    "batch_size=8",
    "--set",
    "nc_samples=16",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(TINY);
    v
}

fn gen(dir: &Path) {
    let d = dir.to_str().unwrap();
    let o = xlm(&with_tiny(&["gen-data", "--seed", "5", "--out", d]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("train=28 val=6 test=6"), "{}", stdout(&o));
}

#[test]
fn pipeline_is_reproducible_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let (d, r1, r2) = (data.to_str().unwrap(), tmp.path().join("r1"), tmp.path().join("r2"));
    for r in [&r1, &r2] {
        let o =
            xlm(&with_tiny(&["train", "--data", d, "--seed", "3", "--precision", "f64", "--out", r.to_str().unwrap()]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("epoch=2 "));
    }
    for name in ["epochs.log", "metrics.txt", "nc.txt", "model.xlmc", "config.txt"] {
        let (a, b) = (std::fs::read(r1.join(name)).unwrap(), std::fs::read(r2.join(name)).unwrap());
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let cfg = std::fs::read_to_string(r1.join("config.txt")).unwrap();
    assert!(cfg.contains("precision=f64") && cfg.contains("seed=3") && cfg.contains("epochs=2"));
    let nc = std::fs::read_to_string(r1.join("nc.txt")).unwrap();
    assert!(nc.contains("epoch1.within_class_variance=") && nc.contains("final.within_class_variance="));

    let ckpt = r1.join("model.xlmc");
    let (c, k) = (r1.join("config.txt"), ckpt.to_str().unwrap().to_string());
    let cs = c.to_str().unwrap();
    let o = xlm(&["eval", "--config", cs, "--data", d, "--checkpoint", &k]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = std::fs::read_to_string(r1.join("metrics.txt")).unwrap();
    let accuracy = |t: &str| t.lines().find(|l| l.starts_with("accuracy=")).map(str::to_string);
    assert_eq!(accuracy(&stdout(&o)), accuracy(&m));

    let o = xlm(&["nc-metrics", "--config", cs, "--data", d, "--checkpoint", &k, "--samples", "16"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("etf_gram"));

    let tile = data.join("c1-00000.xlmt");
    let cam = tmp.path().join("cam");
    let o = xlm(&[
        "gradcam",
        "--config",
        cs,
        "--tile",
        tile.to_str().unwrap(),
        "--checkpoint",
        &k,
        "--layer",
        "stage2",
        "--target",
        "1",
        "--out",
        cam.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = std::fs::read(cam.join("c1-00000-cam-stage2-c1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert!(cam.join("c1-00000-cam-stage2-c1.xlmt").exists());

    // A config with another architecture must not load the checkpoint.
    let o = xlm(&["eval", "--config", cs, "--set", "head=AllFNO", "--data", d, "--checkpoint", &k]);
    assert_eq!(code(&o), 2);

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 3);
    let bad = tmp.path().join("bad.xlmc");
    std::fs::write(&bad, bytes).unwrap();
    let o = xlm(&["eval", "--config", cs, "--data", d, "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn split_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let d = data.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        let o = xlm(&["split", "--data", d, "--seed", seed, "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).starts_with("train=28 val=6 test=6"));
    }
    let read = |p: &Path| std::fs::read_to_string(p.join("manifest.txt")).unwrap();
    assert_ne!(read(&a), read(&b));
    let c = tmp.path().join("c");
    let o = xlm(&["split", "--data", d, "--seed", "1", "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&a), read(&c));
}

#[test]
fn audit_params_exit_codes() {
    let o = xlm(&["audit-params"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("within band") && out.contains("trainable=33319"), "{out}");
    assert!(out.contains("stage4.mamba"));
    let o =
        xlm(&["audit-params", "--set", "stage_channels=16,32,48,64,96,128", "--set", "head_widths=384,16,16,16,8,2"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_single_seed_passes() {
    let o = xlm(&["gradcheck", "--seeds", "1"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("selective_scan\t1\t"));
    assert!(stdout(&o).contains("head_3L2FNO"));
}

#[test]
fn config_and_io_errors_map_to_exit_codes() {
    assert_eq!(code(&xlm(&["audit-params", "--set", "epoch=3"])), 1);
    assert_eq!(code(&xlm(&["audit-params", "--set", "stage_channels=8,16,24,30,48,64"])), 1);
    assert_eq!(code(&xlm(&["audit-params", "--config", "/nonexistent/cfg.txt"])), 2);
    assert_eq!(code(&xlm(&["train", "--data", "/nonexistent/data"])), 2);
    assert_eq!(code(&xlm(&["frobnicate"])), 1);
    assert_eq!(code(&xlm(&["--help"])), 0);
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("cfg.txt");
    std::fs::write(&bad, "momentum=lots\n").unwrap();
    assert_eq!(code(&xlm(&["audit-params", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn sweep_skips_invalid_values_and_reports_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let out = tmp.path().join("sweep");
    let mut args = with_tiny(&["sweep", "--data", data.to_str().unwrap(), "--axis", "momentum", "--values", "0.9,2.5"]);
    args.extend(["--set", "epochs=1", "--out", out.to_str().unwrap()]);
    let o = xlm(&args);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("sweep.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "value\taccuracy\tf1\tprecision\trecall\tparam_count");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.9\t") && lines[1].ends_with("\t33319"));
    assert!(std::fs::read_to_string(out.join("skipped.txt")).unwrap().contains("2.5="));
}
