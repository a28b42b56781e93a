use std::path::Path;
use std::process::{Command, Output};

fn fq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framequant"))
        .args(args)
        .current_dir(dir)
        .env("FQ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = fq(args, dir);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stderr),
        stdout(&o)
    );
    stdout(&o)
}

/// Value after `key=` on the first line starting with `prefix`.
fn field(out: &str, prefix: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(prefix)).unwrap_or_else(|| panic!("no {prefix:?} in {out}"));
    let v = line.split_whitespace().find_map(|t| t.strip_prefix(&format!("{key}="))).unwrap();
    v.trim_end_matches('x').parse().unwrap()
}

fn demo(dir: &Path, spec: &str, seed: &str) {
    ok(
        &[
            "demo", "--spec", spec, "--seed", seed, "--weights-out", "w.fqt", "--calib-out", "c.fqt",
            "--data-out", "x.fqt",
        ],
        dir,
    );
}

#[test]
fn frame_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["frame", "--dim", "4", "--redundancy", "1.5", "--out", "f.json"], dir.path());
    assert!(out.starts_with("k=3 rho=2 d=4"), "{out}");
    let dev: f64 = out.lines().nth(1).unwrap().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(dev <= 1e-9);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
    assert_eq!((json["k"].as_u64(), json["rho"].as_u64(), json["d"].as_u64()), (Some(3), Some(2), Some(4)));

    let out = ok(&["frame", "--dim", "8", "--redundancy", "1.0"], dir.path());
    assert!(out.starts_with("k=1 rho=8 d=8") && out.contains("orthonormal"), "{out}");

    let out = ok(&["frame", "--dim", "11", "--redundancy", "1.9"], dir.path());
    assert!(out.starts_with("k=4 rho=5 d=11 r=20/11"), "{out}");
}

#[test]
fn quantize_is_deterministic_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    demo(d, "mlp:16,24,8", "5");
    let args = ["quantize", "--weights", "w.fqt", "--calib", "c.fqt", "--redundancy", "1.1", "--seed", "3"];
    ok(&[&args[..], &["--out", "a.fqnt"]].concat(), d);
    ok(&[&args[..], &["--out", "b.fqnt"]].concat(), d);
    let a = std::fs::read(d.join("a.fqnt")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.fqnt")).unwrap());

    let out = ok(&["inspect", "--model", "a.fqnt"], d);
    assert_eq!(out.lines().filter(|l| l.ends_with("crc=OK")).count(), 2, "{out}");

    // flip one byte near the end of the second record body
    let mut bad = a.clone();
    let n = bad.len();
    bad[n - 6] ^= 0x40;
    std::fs::write(d.join("bad.fqnt"), &bad).unwrap();
    let o = fq(&["inspect", "--model", "bad.fqnt"], d);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.contains("name=layer1") && l.contains("crc=FAIL")), "{out}");
    assert!(out.lines().any(|l| l.contains("name=layer0") && l.ends_with("crc=OK")), "{out}");
}

#[test]
fn empty_model_inspects_as_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = b"FQNT".to_vec();
    bytes.extend(1u16.to_le_bytes());
    bytes.extend(0u32.to_le_bytes());
    std::fs::write(dir.path().join("e.fqnt"), bytes).unwrap();
    let out = ok(&["inspect", "--model", "e.fqnt"], dir.path());
    assert_eq!(out.lines().count(), 1, "{out}");
}

#[test]
fn storage_bits_follow_redundancy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    demo(d, "mlp:40,40", "1");
    let base = ["quantize", "--weights", "w.fqt", "--calib", "c.fqt"];
    let r1 = ok(&[&base[..], &["--redundancy", "1.0", "--out", "r1.fqnt"]].concat(), d);
    let r11 = ok(&[&base[..], &["--redundancy", "1.1", "--out", "r11.fqnt"]].concat(), d);
    assert_eq!(field(&r1, "storage layer0", "nominal_bits"), 2.0);
    assert_eq!(field(&r1, "storage layer0", "exact_bits"), 2.0);
    // 40 * 1.1 = 44 columns on both sides
    assert!((field(&r11, "storage layer0", "nominal_bits") - 2.2).abs() < 1e-9);
    assert!((field(&r11, "storage layer0", "exact_bits") - 2.42).abs() < 1e-9);
}

#[test]
fn clipping_lowers_proxy_loss_on_wide_layers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    demo(d, "mlp:128,128", "2");
    let base = ["quantize", "--weights", "w.fqt", "--calib", "c.fqt", "--redundancy", "1.1"];
    let clip = ok(&[&base[..], &["--out", "a.fqnt"]].concat(), d);
    let noclip = ok(&[&base[..], &["--no-clip", "--out", "b.fqnt"]].concat(), d);
    let (a, b) = (field(&clip, "total", "proxy_loss"), field(&noclip, "total", "proxy_loss"));
    assert!(a < b, "clip {a} vs no clip {b}");
}

#[test]
fn eval_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    demo(d, "mlp:24,32,8", "4");
    ok(&["quantize", "--weights", "w.fqt", "--calib", "c.fqt", "--out", "q.fqnt"], d);
    let out = ok(
        &[
            "eval", "--quantized", "q.fqnt", "--reference-weights", "w.fqt", "--data", "x.fqt",
            "--report", "r.json", "--activation-bits", "8",
        ],
        d,
    );
    assert!(field(&out, "output_mse", "output_mse") > 0.0);
    let text = std::fs::read_to_string(d.join("r.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["layers"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["activation_bits"], 8);
    assert_eq!(report["storage"]["total_bytes"].as_u64().unwrap(), std::fs::metadata(d.join("q.fqnt")).unwrap().len());
}

#[test]
fn benches_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(&["bench-noise", "--dim", "4", "--redundancies", "1,1.5,2", "--snr-db", "10", "--trials", "4000"], d);
    let rows: Vec<Vec<f64>> = out.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(out.lines().next(), Some("r,trials,mse,ratio,slope"));
    assert!((1.0 - rows[1][3] - 0.33).abs() <= 0.05, "{out}");
    assert!((1.0 - rows[2][3] - 0.50).abs() <= 0.05, "{out}");

    let once = ok(&["bench-noise", "--redundancies", "1", "--trials", "1", "--seed", "9"], d);
    assert_eq!(once, ok(&["bench-noise", "--redundancies", "1", "--trials", "1", "--seed", "9"], d));
    assert_eq!(once.lines().count(), 2);

    let out = ok(&["bench-consistent", "--trials", "500"], d);
    let slope: f64 = out.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!(slope <= -1.2, "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(fq(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(fq(&["--help"], d).status.code(), Some(0));
    assert_eq!(fq(&["frame", "--dim", "0"], d).status.code(), Some(1));
    assert_eq!(fq(&["frame", "--dim", "4", "--redundancy", "0.5"], d).status.code(), Some(1));
    let o = fq(&["quantize", "--weights", "missing.fqt", "--calib", "c.fqt", "--out", "q"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.fqt"));
    std::fs::write(d.join("junk.fqnt"), b"not a model").unwrap();
    assert_eq!(fq(&["inspect", "--model", "junk.fqnt"], d).status.code(), Some(2));

    // calibration width does not match the first layer
    demo(d, "mlp:8,4", "0");
    ok(&["demo", "--spec", "mlp:6,4", "--weights-out", "w6.fqt", "--calib-out", "c6.fqt"], d);
    let o = fq(&["quantize", "--weights", "w.fqt", "--calib", "c6.fqt", "--out", "q"], d);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fq(&["quantize", "--demo", "mlp:8,4", "--bits", "9", "--out", "q"], d).status.code(), Some(1));
}

#[test]
fn demo_quantize_needs_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["quantize", "--demo", "mlp:16,8", "--redundancy", "1.25", "--out", "q.fqnt"], dir.path());
    assert!(out.contains("total proxy_loss="), "{out}");
    assert!(dir.path().join("q.fqnt").exists());
}
