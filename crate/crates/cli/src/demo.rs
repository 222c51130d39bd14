use std::fmt::Write as _;
use std::path::Path;

use structpose::fsutil::{self, StagedDir};
use structpose::synth::io::encode_pgm;
use structpose::tensor::{conv2d_forward, ConvParams, Tensor};
use structpose::{Error, Result};

pub const KERNEL: usize = 7;

/// Named 7x7 kernels. The first three are single off-center taps that move
/// the map by `(dx, dy)`; the others spread it asymmetrically.
pub fn demo_kernels() -> Vec<(String, Vec<f64>)> {
    let r = KERNEL / 2;
    let tap = |dx: i64, dy: i64| {
        let mut k = vec![0.0; KERNEL * KERNEL];
        k[(r as i64 - dy) as usize * KERNEL + (r as i64 - dx) as usize] = 1.0;
        (format!("shift_{dx}_{dy}"), k)
    };
    let mut out = vec![tap(3, 0), tap(0, -3), tap(-2, 2)];
    // A tail of taps pulling the map rightwards with decaying weight.
    let mut smear = vec![0.0; KERNEL * KERNEL];
    let total: f64 = (0..=r).map(|d| 0.5f64.powi(d as i32)).sum();
    for d in 0..=r {
        smear[r * KERNEL + r - d] = 0.5f64.powi(d as i32) / total;
    }
    out.push(("smear_right".into(), smear));
    // Two taps: one copy stays, a weaker one moves down-left.
    let mut split = vec![0.0; KERNEL * KERNEL];
    split[r * KERNEL + r] = 0.6;
    split[(r - 2) * KERNEL + r + 2] = 0.4;
    out.push(("split_down_left".into(), split));
    out
}

pub fn gaussian_blob(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64 - c, (i / size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Same-padded correlation of a `size x size` map with one kernel.
pub fn apply_kernel(map: &[f64], size: usize, kernel: &[f64]) -> Result<Vec<f64>> {
    let mut p = ConvParams::<f64>::same(1, 1, KERNEL);
    p.weight.data_mut().copy_from_slice(kernel);
    let x = Tensor::from_vec(&[1, 1, size, size], map.to_vec())?;
    Ok(conv2d_forward(&x, &p)?.into_data())
}

/// Intensity `v` in `[0, 1]` to a byte, clamped.
fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn centroid(map: &[f64], size: usize) -> [f64; 2] {
    let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
    for (i, v) in map.iter().enumerate() {
        sx += v * (i % size) as f64;
        sy += v * (i / size) as f64;
        s += v;
    }
    [sx / s, sy / s]
}

pub fn demo_shift(out: &Path, size: usize, sigma: f64) -> Result<()> {
    if size < KERNEL || !(sigma > 0.0) {
        return Err(Error::Config(format!("demo-shift needs size >= {KERNEL} and sigma > 0")));
    }
    let blob = gaussian_blob(size, sigma);
    let stage = StagedDir::new(out)?;
    let write = |name: &str, w: usize, px: Vec<u8>| fsutil::write_atomic(&stage.path().join(name), &encode_pgm(w, w, &px));
    write("input.pgm", size, blob.iter().map(|&v| to_byte(v)).collect())?;
    let c0 = centroid(&blob, size);
    let mut csv = String::from("kernel,centroid_dx,centroid_dy\n");
    for (name, k) in demo_kernels() {
        let peak = k.iter().copied().fold(0.0, f64::max);
        write(&format!("kernel_{name}.pgm"), KERNEL, k.iter().map(|&v| to_byte(v / peak)).collect())?;
        let shifted = apply_kernel(&blob, size, &k)?;
        write(&format!("output_{name}.pgm"), size, shifted.iter().map(|&v| to_byte(v)).collect())?;
        let c = centroid(&shifted, size);
        let _ = writeln!(csv, "{name},{:.4},{:.4}", c[0] - c0[0], c[1] - c0[1]);
    }
    fsutil::write_atomic(&stage.path().join("shifts.csv"), csv.as_bytes())?;
    stage.commit()?;
    print!("{csv}");
    Ok(())
}
