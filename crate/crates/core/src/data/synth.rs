//! Synthetic datasets: isotropic Gaussians and stroke-rendered digits.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::{scale_byte, Dataset};

/// `n` samples from `N(mean, std² I)`, clipped to `[-1, 1]`; shape `[n, d]`.
pub fn synth_gaussian(n: usize, mean: &[f64], std: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || mean.is_empty() {
        return Err(Error::Param { key: "n".into(), message: "need at least one sample of at least one dimension".into() });
    }
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::Param { key: "std".into(), message: format!("std must be positive, got {std}") });
    }
    let d = mean.len();
    let mut data = vec![0.0; n * d];
    rng.fill_normal(&mut data, 0.0, std);
    for (i, v) in data.iter_mut().enumerate() {
        *v = (*v + mean[i % d]).clamp(-1.0, 1.0);
    }
    Dataset::new(Tensor::new(&[n, d], data)?, None, "synthetic:gaussian")
}

// Seven-segment layout in a unit box (x right, y down).
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // top
    ((1.0, 0.0), (1.0, 0.5)), // upper right
    ((1.0, 0.5), (1.0, 1.0)), // lower right
    ((0.0, 1.0), (1.0, 1.0)), // bottom
    ((0.0, 0.5), (0.0, 1.0)), // lower left
    ((0.0, 0.0), (0.0, 0.5)), // upper left
    ((0.0, 0.5), (1.0, 0.5)), // middle
];

const DIGIT_SEGMENTS: [u8; 10] = [
    0b011_1111, 0b000_0110, 0b101_1011, 0b100_1111, 0b110_0110,
    0b110_1101, 0b111_1101, 0b000_0111, 0b111_1111, 0b110_1111,
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// Renders `digit` into a `side x side` byte image with a random slant,
/// scale, offset and stroke width drawn from `rng`.
pub fn render_digit(digit: usize, side: usize, rng: &mut RngStream) -> Vec<u8> {
    let s = side as f64;
    let width = s * (0.22 + 0.08 * rng.uniform());
    let height = s * (0.55 + 0.1 * rng.uniform());
    let x0 = (s - width) / 2.0 + (rng.uniform() - 0.5) * s * 0.1;
    let y0 = (s - height) / 2.0 + (rng.uniform() - 0.5) * s * 0.1;
    let slant = (rng.uniform() - 0.5) * 0.4;
    let stroke = s * (0.045 + 0.03 * rng.uniform());
    let mask = DIGIT_SEGMENTS[digit % 10];
    let place = |(u, v): (f64, f64)| (x0 + u * width + slant * (0.5 - v) * height, y0 + v * height);
    let strokes: Vec<_> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, &(a, b))| (place(a), place(b)))
        .collect();
    let mut out = vec![0u8; side * side];
    for r in 0..side {
        for c in 0..side {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = strokes.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let ink = (stroke + 0.5 - d).clamp(0.0, 1.0);
            out[r * side + c] = (ink * 255.0).round() as u8;
        }
    }
    out
}

/// `n` labelled digit images `[n, 1, side, side]`, labels cycling 0..9 in a
/// shuffled order. Also returns the raw bytes, for writing IDX files.
pub fn synth_digits(n: usize, side: usize, rng: &mut RngStream) -> Result<(Dataset, Vec<u8>)> {
    if n == 0 || side < 8 {
        return Err(Error::Param { key: "n".into(), message: format!("need n ≥ 1 and side ≥ 8, got n={n}, side={side}") });
    }
    let order = rng.permutation(n);
    let labels: Vec<usize> = order.iter().map(|i| i % 10).collect();
    let mut bytes = Vec::with_capacity(n * side * side);
    for &label in &labels {
        bytes.extend(render_digit(label, side, rng));
    }
    let images = Tensor::new(&[n, 1, side, side], bytes.iter().map(|&b| scale_byte(b)).collect())?;
    Ok((Dataset::new(images, Some(labels), "synthetic:digits")?, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_statistics() {
        let ds = synth_gaussian(10_000, &[0.5, 0.5], 0.1, &mut RngStream::new(3)).unwrap();
        assert_eq!(ds.data_shape(), &[2]);
        for c in 0..2 {
            let m: f64 = ds.images.data().iter().skip(c).step_by(2).sum::<f64>() / 10_000.0;
            assert!((m - 0.5).abs() < 0.01, "{m}");
        }
        let tight = synth_gaussian(50, &[0.1, -0.2], 1e-6, &mut RngStream::new(3)).unwrap();
        assert!(tight.images.data().chunks(2).all(|p| (p[0] - 0.1).abs() < 1e-4 && (p[1] + 0.2).abs() < 1e-4));
        assert_eq!(synth_gaussian(7, &[0.0], 0.3, &mut RngStream::new(9)).unwrap(), synth_gaussian(7, &[0.0], 0.3, &mut RngStream::new(9)).unwrap());
        assert!(synth_gaussian(7, &[0.0], 0.0, &mut RngStream::new(9)).is_err());
        assert!(synth_gaussian(0, &[0.0], 0.1, &mut RngStream::new(9)).is_err());
    }

    #[test]
    fn digits_are_distinct_and_inked() {
        let (ds, bytes) = synth_digits(20, 28, &mut RngStream::new(1)).unwrap();
        assert_eq!(ds.images.shape(), &[20, 1, 28, 28]);
        assert_eq!(bytes.len(), 20 * 784);
        let ink = |i: usize| bytes[i * 784..(i + 1) * 784].iter().filter(|&&b| b > 128).count();
        for i in 0..20 {
            assert!(ink(i) > 20 && ink(i) < 400, "sample {i} ink {}", ink(i));
        }
        // a one lights two segments, an eight lights all seven
        let mut rng = RngStream::new(2);
        let one: usize = render_digit(1, 28, &mut rng).iter().map(|&b| b as usize).sum();
        let mut rng = RngStream::new(2);
        let eight: usize = render_digit(8, 28, &mut rng).iter().map(|&b| b as usize).sum();
        assert!(eight > 2 * one);
    }
}
