use std::path::Path;

use half::f16;
use image::{DynamicImage, ImageReader};

use super::{DataError, GrayImage, Grid, Mask};

fn image_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Reads an 8-bit image as intensities `v / 255`. Colour inputs are reduced
/// to luminance; 16-bit and float images are rejected.
pub fn load_slice_image(path: &Path) -> Result<GrayImage, DataError> {
    let reader = ImageReader::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|e| image_err(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    let luma = match img {
        DynamicImage::ImageLuma8(l) => l,
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img.to_luma8(),
        other => {
            return Err(DataError::BitDepth {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok(Grid {
        height: h as usize,
        width: w as usize,
        data,
    })
}

/// Width and height from the image header, without decoding pixels.
pub fn image_size(path: &Path) -> Result<(usize, usize), DataError> {
    let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
    Ok((h as usize, w as usize))
}

/// Inverse of the `v / 255` normalization.
pub fn quantize_u8(img: &GrayImage) -> Vec<u8> {
    img.data
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn corner_aligned(i: usize, out: usize, src: usize) -> f64 {
    if out <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (out - 1) as f64
    }
}

/// Bilinear resize sampling with corners aligned: output pixel `i` reads
/// source coordinate `i·(src−1)/(out−1)`.
pub fn resize_bilinear(img: &GrayImage, height: usize, width: usize) -> Result<GrayImage, DataError> {
    if img.height < 2 || img.width < 2 || height == 0 || width == 0 {
        return Err(DataError::Degenerate {
            op: "resize_bilinear",
            height: img.height,
            width: img.width,
        });
    }
    if (height, width) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        let sy = corner_aligned(i, height, img.height);
        let y0 = (sy.floor() as usize).min(img.height - 2);
        let fy = sy - y0 as f64;
        for j in 0..width {
            let sx = corner_aligned(j, width, img.width);
            let x0 = (sx.floor() as usize).min(img.width - 2);
            let fx = sx - x0 as f64;
            let p = |y: usize, x: usize| f64::from(img.get(y, x));
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x0 + 1) * fx;
            let bottom = p(y0 + 1, x0) * (1.0 - fx) + p(y0 + 1, x0 + 1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(Grid {
        height,
        width,
        data: out,
    })
}

/// Nearest-neighbour resize with the same corner-aligned sampling, so a
/// binary mask stays binary.
pub fn resize_nearest<T: Copy>(img: &Grid<T>, height: usize, width: usize) -> Grid<T> {
    let mut data = Vec::with_capacity(height * width);
    for i in 0..height {
        let y = corner_aligned(i, height, img.height).round() as usize;
        for j in 0..width {
            let x = corner_aligned(j, width, img.width).round() as usize;
            data.push(img.get(y, x));
        }
    }
    Grid { height, width, data }
}

/// Writes a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask_png(mask: &Mask, path: &Path) -> Result<(), DataError> {
    let raw = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, raw).expect("mask buffer size");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Reads a mask PNG; pixels ≥ 128 become 1.
pub fn load_mask_png(path: &Path) -> Result<Mask, DataError> {
    let img = load_slice_image(path)?;
    Ok(Grid {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| u8::from(v >= 128.0 / 255.0)).collect(),
    })
}

/// Optional half-precision cache encoding, little-endian.
pub fn encode_f16(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|&v| f16::from_f32(v).to_le_bytes()).collect()
}

pub fn decode_f16(bytes: &[u8]) -> Result<Vec<f32>, DataError> {
    if !bytes.len().is_multiple_of(2) {
        return Err(DataError::Invalid(format!("f16 buffer has odd length {}", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, v: &[f32]) -> GrayImage {
        Grid::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn corner_aligned_row_interpolation() {
        let img = grid(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let out = resize_bilinear(&img, 2, 4).unwrap();
        for row in out.data.chunks(4) {
            for (a, b) in row.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
                assert!((f64::from(*a) - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_size_is_identity_and_constant_stays_constant() {
        let img = grid(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(resize_bilinear(&img, 3, 2).unwrap(), img);
        let c = Grid::filled(5, 7, 0.25f32);
        let out = resize_bilinear(&c, 9, 3).unwrap();
        assert!(out.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn degenerate_input_rejected() {
        let img = grid(1, 3, &[0.0, 0.5, 1.0]);
        assert!(matches!(resize_bilinear(&img, 4, 4), Err(DataError::Degenerate { .. })));
    }

    #[test]
    fn nearest_keeps_binary() {
        let m = Grid::new(2, 2, vec![0u8, 1, 1, 0]).unwrap();
        let out = resize_nearest(&m, 5, 5);
        assert!(out.data.iter().all(|&v| v <= 1));
        assert_eq!(out.get(0, 4), 1);
        assert_eq!(out.get(4, 4), 0);
    }

    #[test]
    fn f16_round_trip() {
        let v = [0.0f32, 1.0, 0.5, 0.25, 128.0 / 255.0];
        let back = decode_f16(&encode_f16(&v)).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(decode_f16(&[0]).is_err());
    }
}
