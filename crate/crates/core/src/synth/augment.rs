use super::render::PoseSample;
use super::skeleton::quantize;
use crate::structured::JointTree;

/// Geometric augmentation of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    HFlip,
    /// Rotation about the canvas center by this many radians (positive turns
    /// x towards y, i.e. clockwise on screen).
    Rotate(f64),
}

pub fn augment(sample: &PoseSample, tree: &JointTree, op: Augment) -> PoseSample {
    match op {
        Augment::HFlip => hflip(sample, tree),
        Augment::Rotate(theta) => rotate(sample, theta),
    }
}

/// Mirrors the image left to right, maps `x -> size - x`, and swaps each
/// left joint with its right partner.
pub fn hflip(sample: &PoseSample, tree: &JointTree) -> PoseSample {
    let s = sample.size;
    let mut image = vec![0u8; s * s];
    for (dst, src) in image.chunks_mut(s).zip(sample.image.chunks(s)) {
        for (d, v) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *v;
        }
    }
    let size = s as f64;
    let k = sample.joints.len();
    let mut out = PoseSample { size: s, image, joints: vec![[0.0; 2]; k], visible: vec![false; k], mixture: vec![0; k] };
    for j in 0..k {
        let m = tree.mirror(j);
        let [x, y] = sample.joints[j];
        out.joints[m] = [size - x, y];
        out.visible[m] = sample.visible[j];
        out.mixture[m] = sample.mixture[j];
    }
    out
}

fn rotate_point(p: [f64; 2], c: f64, cos: f64, sin: f64) -> [f64; 2] {
    let (dx, dy) = (p[0] - c, p[1] - c);
    [c + cos * dx - sin * dy, c + sin * dx + cos * dy]
}

/// Rotates image (bilinear, border filled with the mean border intensity)
/// and joints about the canvas center. Joints that leave the canvas become
/// invisible.
pub fn rotate(sample: &PoseSample, theta: f64) -> PoseSample {
    let s = sample.size;
    let c = s as f64 / 2.0;
    let (sin, cos) = theta.sin_cos();
    let border: Vec<f64> = (0..s)
        .flat_map(|i| [sample.image[i], sample.image[(s - 1) * s + i], sample.image[i * s], sample.image[i * s + s - 1]])
        .map(f64::from)
        .collect();
    let fill = border.iter().sum::<f64>() / border.len().max(1) as f64;
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= s as isize || y >= s as isize {
            fill
        } else {
            sample.image[y as usize * s + x as usize] as f64
        }
    };
    let mut image = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            // Inverse map of the destination pixel center.
            let [sx, sy] = rotate_point([x as f64 + 0.5, y as f64 + 0.5], c, cos, -sin);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - ay) * ((1.0 - ax) * at(x0, y0) + ax * at(x0 + 1, y0))
                + ay * ((1.0 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
            image[y * s + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    let size = s as f64;
    let joints: Vec<[f64; 2]> = sample
        .joints
        .iter()
        .map(|&p| {
            let [x, y] = rotate_point(p, c, cos, sin);
            [quantize(x), quantize(y)]
        })
        .collect();
    let visible = joints
        .iter()
        .zip(&sample.visible)
        .map(|(p, &v)| v && p[0] >= 0.0 && p[1] >= 0.0 && p[0] < size && p[1] < size)
        .collect();
    PoseSample { size: s, image, joints, visible, mixture: sample.mixture.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_sample, SkeletonSpec};
    use std::f64::consts::FRAC_PI_2;

    fn sample(seed: u64) -> PoseSample {
        render_sample(&SkeletonSpec::preset("desk14", 64).unwrap(), seed, 0).unwrap()
    }

    #[test]
    fn hflip_is_an_involution() {
        let tree = JointTree::desk14();
        for seed in 0..20 {
            let mut s = sample(seed);
            s.mixture = (0..14).collect();
            s.visible[3] = false;
            let once = hflip(&s, &tree);
            assert_ne!(once, s);
            assert_eq!(once.mixture[tree.index_of("l_wrist").unwrap()], tree.index_of("r_wrist").unwrap() as u16);
            assert_eq!(hflip(&once, &tree), s);
        }
    }

    #[test]
    fn hflip_mirrors_pixels_and_coordinates() {
        let tree = JointTree::desk14();
        let s = sample(3);
        let f = hflip(&s, &tree);
        assert_eq!(f.image[5 * 64 + 10], s.image[5 * 64 + 53]);
        let (r, l) = (tree.index_of("r_elbow").unwrap(), tree.index_of("l_elbow").unwrap());
        assert_eq!(f.joints[l][0], 64.0 - s.joints[r][0]);
        assert_eq!(f.joints[l][1], s.joints[r][1]);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let s = sample(1);
        let r = rotate(&s, 0.0);
        assert_eq!(r.joints, s.joints);
        assert_eq!(r.image, s.image);
    }

    #[test]
    fn quarter_turn_matches_closed_form() {
        let s = sample(2);
        let r = rotate(&s, FRAC_PI_2);
        for (p, q) in s.joints.iter().zip(&r.joints) {
            // (x, y) -> (c - (y - c), c + (x - c)) with c = 32
            assert_eq!(*q, [64.0 - p[1], p[0]]);
        }
        // Pixel (row y, col x) moves to (row x, col 63 - y).
        assert_eq!(r.image[10 * 64 + (63 - 20)], s.image[20 * 64 + 10]);
    }

    #[test]
    fn rotation_hides_joints_that_leave_the_canvas() {
        let mut s = sample(4);
        s.joints[0] = [1.0, 1.0];
        let r = rotate(&s, 0.7);
        assert!(!r.visible[0]);
        assert!(r.visible[1]);
    }
}
