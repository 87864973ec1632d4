use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::models::one_hot;
use crate::rng::RngStream;
use crate::spec::ResolvedModel;
use crate::tensor::Tensor;

/// Generated samples tiled into a near-square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    /// Pixel values in `[0, 255]`: `[H', W']` for one channel, `[H', W', 3]` for three.
    pub pixels: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub png: Vec<u8>,
}

fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Encodes row-major 8-bit pixels (1 or 3 channels) as PNG.
pub fn encode_png(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::Contract(format!("cannot encode {c}-channel images"))),
    };
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(bytes, width as u32, height as u32, color)?;
    Ok(out)
}

/// Draws `n` latents, runs the generator in eval mode and tiles the results
/// (`ceil(sqrt(n))` columns, empty cells black). Conditional generators get
/// labels `i mod label_count`.
pub fn sample_grid(model: &mut ResolvedModel, n: usize, rng: &mut RngStream) -> Result<SampleGrid> {
    let &[c, h, w] = model.data_shape.as_slice() else {
        return Err(Error::Contract(format!("sample grids need [C, H, W] data, model produces {:?}", model.data_shape)));
    };
    if c != 1 && c != 3 {
        return Err(Error::Contract(format!("sample grids need 1 or 3 channels, got {c}")));
    }
    if n == 0 {
        return Err(Error::Contract("sample grid needs n ≥ 1".into()));
    }
    let z = rng.normal(&[n, model.latent_dim], 0.0, 1.0)?;
    let cond = model
        .conditioning
        .map(|cd| one_hot(&(0..n).map(|i| i % cd.label_count).collect::<Vec<_>>(), cd.label_count))
        .transpose()?;
    let images = model.generator.predict(&z, cond.as_ref(), Mode::Eval, Some(rng))?;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut bytes = vec![0u8; gh * gw * c];
    let data = images.data();
    for i in 0..n {
        let (tr, tc) = (i / cols, i % cols);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = data[((i * c + ch) * h + y) * w + x];
                    bytes[((tr * h + y) * gw + tc * w + x) * c + ch] = to_byte(v);
                }
            }
        }
    }
    let shape: Vec<usize> = if c == 1 { vec![gh, gw] } else { vec![gh, gw, 3] };
    let pixels = Tensor::new(&shape, bytes.iter().map(|&b| b as f64).collect())?;
    let png = encode_png(gw, gh, c, &bytes)?;
    Ok(SampleGrid { pixels, rows, cols, png })
}

/// [`sample_grid`] written to `path` via write-then-rename.
pub fn write_sample_grid(model: &mut ResolvedModel, n: usize, rng: &mut RngStream, path: &Path) -> Result<SampleGrid> {
    let grid = sample_grid(model, n, rng)?;
    write_atomic(path, &grid.png)?;
    Ok(grid)
}
