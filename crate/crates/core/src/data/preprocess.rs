//! Slice preprocessing: decode, optional histogram equalization, bilinear
//! resize, [0,1] normalization, channel replication.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enhancement {
    None,
    HistEq,
}

#[derive(Debug, Clone)]
pub struct PreprocessSpec {
    pub enhancement: Enhancement,
    /// Output side length; must match the model's input resolution.
    pub resolution: usize,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            enhancement: Enhancement::HistEq,
            resolution: 224,
        }
    }
}

/// Decode an 8- or 16-bit grayscale image to [0,1] floats, row-major.
pub fn load_gray(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| f32::from(v) / 65535.0)
        .collect();
    Ok((data, h, w))
}

const BINS: usize = 256;

/// Global histogram equalization over 256 bins. Input and output are in
/// [0,1]; an image occupying a single bin is returned unchanged.
pub fn equalize(img: &[f32]) -> Vec<f32> {
    let mut hist = [0usize; BINS];
    for &v in img {
        let bin = ((v * BINS as f32) as usize).min(BINS - 1);
        hist[bin] += 1;
    }
    let mut cdf = [0usize; BINS];
    let mut acc = 0;
    for (c, &h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc;
    }
    let total = img.len();
    let cdf_min = *cdf.iter().find(|&&c| c > 0).unwrap_or(&0);
    if cdf_min == total {
        return img.to_vec(); // constant image: nothing to spread
    }
    let scale = 1.0 / (total - cdf_min) as f64;
    img.iter()
        .map(|&v| {
            let bin = ((v * BINS as f32) as usize).min(BINS - 1);
            ((cdf[bin] - cdf_min) as f64 * scale) as f32
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (corner alignment disabled):
/// source coordinate = (dst + 0.5) * src_len / dst_len - 0.5, clamped.
pub fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    assert_eq!(src.len(), sh * sw);
    let mut out = vec![0.0f32; dh * dw];
    let sy = sh as f32 / dh as f32;
    let sx = sw as f32 / dw as f32;
    for dy in 0..dh {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f32;
        for dx in 0..dw {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bottom = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[dy * dw + dx] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// One preprocessed slice as a single channel of `resolution^2` values in
/// [0,1]; shared by all three replicated channels.
pub fn preprocess_plane(img: &[f32], h: usize, w: usize, spec: &PreprocessSpec) -> Result<Vec<f32>> {
    if h == 0 || w == 0 || img.len() != h * w {
        return Err(Error::Shape(format!(
            "preprocess expects a non-empty {h}x{w} image, got {} values",
            img.len()
        )));
    }
    let enhanced = match spec.enhancement {
        Enhancement::None => img.to_vec(),
        Enhancement::HistEq => equalize(img),
    };
    let resized = resize_bilinear(&enhanced, h, w, spec.resolution, spec.resolution);
    Ok(resized.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Full contract form: [3, resolution, resolution] with the gray plane
/// replicated across channels.
pub fn preprocess_slice(img: &[f32], h: usize, w: usize, spec: &PreprocessSpec) -> Result<Tensor> {
    let plane = preprocess_plane(img, h, w, spec)?;
    let mut data = Vec::with_capacity(3 * plane.len());
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Ok(Tensor::raw(
        vec![3, spec.resolution, spec.resolution],
        data,
        false,
    ))
}

/// Stack preprocessed planes into a [B, 3, r, r] batch.
pub fn batch_tensor(planes: &[&[f32]], resolution: usize) -> Tensor {
    let area = resolution * resolution;
    let mut data = Vec::with_capacity(planes.len() * 3 * area);
    for plane in planes {
        assert_eq!(plane.len(), area);
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
    }
    Tensor::raw(vec![planes.len(), 3, resolution, resolution], data, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant_and_bounded() {
        let img = vec![0.37f32; 40 * 30];
        let spec = PreprocessSpec {
            enhancement: Enhancement::HistEq,
            resolution: 16,
        };
        let out = preprocess_slice(&img, 40, 30, &spec).unwrap();
        assert_eq!(out.shape(), &[3, 16, 16]);
        let first = out.data()[0];
        assert!((0.0..=1.0).contains(&first));
        assert!(out.data().iter().all(|&v| v == first));
    }

    #[test]
    fn output_always_within_unit_range() {
        let mut rng = crate::rng::stream(3, "pre");
        let img: Vec<f32> = (0..64 * 48)
            .map(|_| (crate::rng::normal(&mut rng) * 0.4 + 0.5).clamp(0.0, 1.0) as f32)
            .collect();
        for enhancement in [Enhancement::None, Enhancement::HistEq] {
            let spec = PreprocessSpec {
                enhancement,
                resolution: 32,
            };
            let out = preprocess_slice(&img, 64, 48, &spec).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn equalized_gradient_has_nearly_flat_histogram() {
        // uniform gradient: 4096 evenly spaced values. The CDF remap and
        // 256-bin quantization must keep the histogram near-flat (a bin
        // collision would double a count and break the 2x bound).
        let (h, w) = (64, 64);
        let n = h * w;
        let img: Vec<f32> = (0..n).map(|i| i as f32 / (n - 1) as f32).collect();
        let eq = equalize(&img);
        let mut hist = [0usize; 256];
        for &v in &eq {
            hist[((v * 256.0) as usize).min(255)] += 1;
        }
        let mean = (h * w) as f64 / 256.0;
        let max = *hist.iter().max().unwrap() as f64;
        assert!(max < 2.0 * mean, "max bin {max}, mean {mean}");
    }

    #[test]
    fn resize_preserves_constant_and_interpolates_midpoints() {
        let c = resize_bilinear(&[0.5; 16], 4, 4, 7, 7);
        assert!(c.iter().all(|&v| (v - 0.5).abs() < 1e-6));
        // 1x2 image upscaled to 1x4: interior samples interpolate linearly
        let r = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert!((r[0] - 0.0).abs() < 1e-6); // clamped at the left edge
        assert!((r[1] - 0.25).abs() < 1e-6);
        assert!((r[2] - 0.75).abs() < 1e-6);
        assert!((r[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_sized_image_is_rejected() {
        let spec = PreprocessSpec::default();
        assert!(preprocess_slice(&[], 0, 0, &spec).is_err());
    }

    #[test]
    fn batch_tensor_replicates_channels() {
        let a = vec![0.1f32; 4];
        let b = vec![0.9f32; 4];
        let batch = batch_tensor(&[&a, &b], 2);
        assert_eq!(batch.shape(), &[2, 3, 2, 2]);
        assert!(batch.data()[..12].iter().all(|&v| v == 0.1));
        assert!(batch.data()[12..].iter().all(|&v| v == 0.9));
    }
}
