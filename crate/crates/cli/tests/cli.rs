use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn structpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structpose")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = structpose(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_pgm(path: &Path) -> (usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20]);
    let mut fields = text.split_whitespace();
    assert_eq!(fields.next(), Some("P5"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    (w, bytes[bytes.len() - w * w..].to_vec())
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ini");
    fs::write(&bad, "[model]\nno_such_key = 1\n").unwrap();
    let out = structpose(&["print-config", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:") && err.contains("line 2"), "{err}");

    assert_eq!(structpose(&["print-config", "--preset", "huge"]).status.code(), Some(2));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = structpose(&["train", "--preset", "tiny", "--data", s(&empty), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("m").exists());
}

#[test]
fn demo_shift_translates_the_blob() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo");
    ok(&["demo-shift", "--out", s(&out), "--size", "24"]);
    let (w, input) = read_pgm(&out.join("input.pgm"));
    for (name, dx, dy) in [("shift_3_0", 3i64, 0i64), ("shift_0_-3", 0, -3), ("shift_-2_2", -2, 2)] {
        let (_, shifted) = read_pgm(&out.join(format!("output_{name}.pgm")));
        for y in 3..w as i64 - 3 {
            for x in 3..w as i64 - 3 {
                let src = ((y - dy) * w as i64 + x - dx) as usize;
                assert_eq!(shifted[(y * w as i64 + x) as usize], input[src], "{name} at ({x}, {y})");
            }
        }
    }
    let csv = fs::read_to_string(out.join("shifts.csv")).unwrap();
    // The blob loses a sliver past the border, so the centroid moves slightly less.
    let row: Vec<f64> = csv.lines().find(|l| l.starts_with("shift_3_0,")).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!((row[0] - 3.0).abs() < 0.05 && row[1].abs() < 1e-9, "{csv}");
}

#[test]
fn tiny_pipeline_emits_every_file_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["--seed", "4", "gen-data", "--preset", "tiny", "--out", s(&p("train"))]);
    ok(&["--seed", "5", "gen-data", "--preset", "tiny", "--out", s(&p("test")), "--count", "6"]);
    for run in ["a", "b"] {
        ok(&[
            "--seed", "7", "--threads", "1", "train", "--preset", "tiny", "--data", s(&p("train")), "--val",
            s(&p("test")), "--out", s(&p(run)),
        ]);
    }
    for f in ["model.spl", "loss.csv", "config.ini", "pairwise.csv"] {
        assert_eq!(fs::read(p("a").join(f)).unwrap(), fs::read(p("b").join(f)).unwrap(), "{f} differs between runs");
    }
    let loss = fs::read_to_string(p("a").join("loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,train_loss,val_pcp\n"), "{loss}");

    let ckpt = p("a").join("model.spl");
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&p("test")), "--out", s(&p("eval"))]);
    for f in ["pcp.csv", "pdj.csv", "estimates.csv"] {
        assert!(p("eval").join(f).is_file(), "missing {f}");
    }
    let estimates = fs::read_to_string(p("eval").join("estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 1 + 6 * 14);

    let image = p("test").join("images/000000.pgm");
    ok(&["predict", "--checkpoint", s(&ckpt), "--image", s(&image), "--out", s(&p("pred")), "--raw", "--decode", "gdt"]);
    assert!(p("pred").join("maps/background.pgm").is_file());
    assert!(p("pred").join("maps/head.f32").is_file());
    let ranges = fs::read_to_string(p("pred").join("maps/ranges.csv")).unwrap();
    assert_eq!(ranges.lines().count(), 1 + 15);
}

#[test]
fn rf_report_on_the_reference_layer_table() {
    let out = ok(&["rf-report", "--preset", "paper-table1"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let last = |layer: &str| {
        text.lines().find(|l| l.split_whitespace().next() == Some(layer)).unwrap().split_whitespace().last().unwrap().to_string()
    };
    assert_eq!(last("fcn7"), "188");
    assert_eq!(last("msp3"), "332");
}
