//! Planar `[3, H, W]` float images and PNG conversion.

use std::path::Path;

use msgnet_autograd::Tensor;
use ndarray::IxDyn;

use crate::error::{Error, Result};

/// Checks the `[3, H, W]` layout and that every value lies in `[0, 1]`.
pub fn check_image(img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 {
        return Err(Error::shape(format!("expected a [3, H, W] image, got {s:?}")));
    }
    if let Some(v) = img.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
    }
    Ok(())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let rgb = image::open(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Tensor::zeros(IxDyn(&[3, h, w]));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

pub fn save_image(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    check_image(img)?;
    let path = path.as_ref();
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| (img[[c, y as usize, x as usize]] * 255.0).round() as u8))
    });
    buf.save(path).map_err(|e| Error::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Bilinear resize of a `[3, H, W]` image to `(height, width)`.
pub fn resize_image(img: &Tensor, size: (usize, usize)) -> Result<Tensor> {
    check_image(img)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if (h, w) == size {
        return Ok(img.clone());
    }
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::shape("resize target must be non-empty"));
    }
    let buf = image::Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| img[[c, y as usize, x as usize]] as f32))
    });
    let out = image::imageops::resize(&buf, size.1 as u32, size.0 as u32, image::imageops::FilterType::Triangle);
    Ok(Tensor::from_shape_fn(IxDyn(&[3, size.0, size.1]), |d| {
        (out.get_pixel(d[2] as u32, d[1] as u32).0[d[0]] as f64).clamp(0.0, 1.0)
    }))
}

/// Stacks equally sized images into an `[N, 3, H, W]` batch.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    let views: Vec<_> = images.iter().map(|t| t.view()).collect();
    ndarray::stack(ndarray::Axis(0), &views).map_err(|e| Error::shape(format!("cannot stack images: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::from_shape_fn(IxDyn(&[3, 5, 7]), |d| ((d[0] * 35 + d[1] * 7 + d[2]) % 256) as f64 / 255.0);
        let p = dir.path().join("x.png");
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn layout_and_range_checks() {
        assert!(check_image(&Tensor::zeros(IxDyn(&[1, 4, 4]))).is_err());
        assert!(check_image(&Tensor::from_elem(IxDyn(&[3, 2, 2]), 1.5)).is_err());
        assert!(check_image(&Tensor::from_elem(IxDyn(&[3, 2, 2]), f64::NAN)).is_err());
        assert!(load_image("/definitely/missing.png").is_err());
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let img = Tensor::from_elem(IxDyn(&[3, 6, 10]), 0.25);
        let out = resize_image(&img, (3, 4)).unwrap();
        assert_eq!(out.shape(), &[3, 3, 4]);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
        assert_eq!(resize_image(&img, (6, 10)).unwrap(), img);
    }
}
