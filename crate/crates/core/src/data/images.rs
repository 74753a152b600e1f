use std::path::Path;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;

use super::{DatasetManifest, Record};
use crate::error::{Error, Result};
use crate::numerics::tensor::{Dims, Tensor4};
use crate::scalar::Scalar;

/// Decoded images with their labels and hazard weights, in manifest order.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: Tensor4<T>,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
}

/// Bilinear resize of an interleaved `channels`-plane image with half-pixel
/// centers: destination pixel `d` samples source coordinate
/// `(d + 0.5)·in/out − 0.5`, clamped to the valid range.
pub fn resize_bilinear(src: &[f64], in_h: usize, in_w: usize, channels: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), in_h * in_w * channels);
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ry = taps(out_h, in_h);
    let rx = taps(out_w, in_w);
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    for &(y0, y1, fy) in &ry {
        for &(x0, x1, fx) in &rx {
            for c in 0..channels {
                let p = |y: usize, x: usize| src[(y * in_w + x) * channels + c];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn decode_resized(path: &Path, size: [usize; 2]) -> Result<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    Ok(resize_bilinear(&src, h, w, 3, size[0], size[1]))
}

/// The image at `size`, quantized back to 8 bits (round half-up).
pub fn load_rgb(path: &Path, size: [usize; 2]) -> Result<RgbImage> {
    let px = decode_resized(path, size)?;
    let bytes = px.iter().map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8).collect();
    Ok(RgbImage::from_raw(size[1] as u32, size[0] as u32, bytes).expect("buffer sized for image"))
}

/// Binary mask (non-zero = inside), nearest-neighbour resized to `size`.
pub fn load_mask(path: &Path, size: [usize; 2]) -> Result<Vec<bool>> {
    let img: GrayImage = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode mask {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(size[0] * size[1]);
    for y in 0..size[0] {
        let sy = (y * h / size[0]).min(h - 1);
        for x in 0..size[1] {
            let sx = (x * w / size[1]).min(w - 1);
            out.push(img.get_pixel(sx as u32, sy as u32)[0] > 0);
        }
    }
    Ok(out)
}

/// Decodes `records` (resolved against `manifest.root`), resizes to `size`
/// and scales channels to `[0, 1]`. Files decode in parallel; output order is
/// the record order.
pub fn load_batch<T: Scalar>(manifest: &DatasetManifest, records: &[&Record], size: [usize; 2]) -> Result<Batch<T>> {
    let decoded: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| decode_resized(&manifest.resolve(r), size))
        .collect::<Result<_>>()?;
    let (h, w) = (size[0], size[1]);
    let dims = Dims::new(records.len(), 3, h, w);
    let mut data = Vec::with_capacity(dims.len());
    for px in &decoded {
        for c in 0..3 {
            for i in 0..h * w {
                data.push(T::of(px[i * 3 + c] / 255.0));
            }
        }
    }
    Ok(Batch {
        images: Tensor4::from_vec(dims, data)?,
        ids: records.iter().map(|r| r.image_id.clone()).collect(),
        labels: records.iter().map(|r| r.label).collect(),
        weights: records.iter().map(|r| r.hazard_weight).collect(),
    })
}
