use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

use super::PerturbError;

/// Cyclic horizontal shift: output column `c` takes input column `(c - n) mod width`.
pub fn shift_cyclic(image: &RgbImage, n: i32) -> Result<RgbImage, PerturbError> {
    let (w, h) = image.dimensions();
    if n.unsigned_abs() >= w {
        return Err(PerturbError::TooSmall {
            op: "shift_cyclic",
            width: w,
            height: h,
            param: n,
        });
    }
    if n == 0 {
        return Ok(image.clone());
    }
    let w_i = w as i64;
    let mut out = RgbImage::new(w, h);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let src = (x as i64 - n as i64).rem_euclid(w_i) as u32;
        *px = *image.get_pixel(src, y);
    }
    Ok(out)
}

/// Zero-pad `n` pixels on every side (`n > 0`) or crop `|n|` pixels around
/// the centre (`n < 0`).
pub fn pad_or_crop(image: &RgbImage, n: i32) -> Result<RgbImage, PerturbError> {
    let (w, h) = image.dimensions();
    if n == 0 {
        return Ok(image.clone());
    }
    if n > 0 {
        let n = n as u32;
        let mut out = RgbImage::new(w + 2 * n, h + 2 * n);
        imageops::replace(&mut out, image, n as i64, n as i64);
        return Ok(out);
    }
    let cut = n.unsigned_abs();
    if w <= 2 * cut || h <= 2 * cut {
        return Err(PerturbError::TooSmall {
            op: "pad_or_crop",
            width: w,
            height: h,
            param: n,
        });
    }
    Ok(imageops::crop_imm(image, cut, cut, w - 2 * cut, h - 2 * cut).to_image())
}

fn scaled_dim(d: u32, factor: f64) -> u32 {
    // f64::round rounds half away from zero
    (d as f64 * factor).round() as u32
}

/// Bicubic (Catmull-Rom) downscale to `round(dim * factor)` on each axis.
pub fn scale_image(image: &RgbImage, factor: f64) -> Result<RgbImage, PerturbError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(PerturbError::BadParameter(format!(
            "scale factor {factor} outside (0, 1]"
        )));
    }
    let (w, h) = image.dimensions();
    let (nw, nh) = (scaled_dim(w, factor), scaled_dim(h, factor));
    if nw == 0 || nh == 0 {
        return Err(PerturbError::TooSmall {
            op: "scale_image",
            width: w,
            height: h,
            param: (factor * 100.0).round() as i32,
        });
    }
    if (nw, nh) == (w, h) {
        return Ok(image.clone());
    }
    Ok(imageops::resize(image, nw, nh, FilterType::CatmullRom))
}

/// Padding colour for [`scale_with_pad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Background {
    Black,
    White,
}

impl Background {
    pub fn pixel(self) -> Rgb<u8> {
        match self {
            Background::Black => Rgb([0, 0, 0]),
            Background::White => Rgb([255, 255, 255]),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Background::Black => "black",
            Background::White => "white",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "black" => Some(Background::Black),
            "white" => Some(Background::White),
            _ => None,
        }
    }
}

/// Downscale, then centre on a canvas of the original size filled with `background`.
pub fn scale_with_pad(
    image: &RgbImage,
    factor: f64,
    background: Background,
) -> Result<RgbImage, PerturbError> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(PerturbError::BadParameter(format!(
            "padded scale factor {factor} outside (0, 1)"
        )));
    }
    let scaled = scale_image(image, factor)?;
    let (w, h) = image.dimensions();
    let mut out = RgbImage::from_pixel(w, h, background.pixel());
    let x0 = (w - scaled.width()) / 2;
    let y0 = (h - scaled.height()) / 2;
    imageops::replace(&mut out, &scaled, x0 as i64, y0 as i64);
    Ok(out)
}

/// Canvas size of a `w`x`h` rectangle rotated by `theta` degrees.
pub fn rotated_canvas(w: u32, h: u32, theta: f64) -> (u32, u32) {
    let rad = theta.to_radians();
    let (s, c) = (rad.sin().abs(), rad.cos().abs());
    // absorb float noise at right angles (cos 90 is ~6e-17, not 0)
    let fit = |v: f64| ((v - 1e-9).ceil().max(1.0)) as u32;
    (
        fit(w as f64 * c + h as f64 * s),
        fit(w as f64 * s + h as f64 * c),
    )
}

/// Counter-clockwise rotation by `theta` degrees on an expanded canvas.
/// Uncovered pixels are black; interpolation is bilinear.
pub fn rotate_expand(image: &RgbImage, theta: f64) -> Result<RgbImage, PerturbError> {
    if !(theta > -360.0 && theta < 360.0) {
        return Err(PerturbError::BadParameter(format!(
            "rotation {theta} outside (-360, 360)"
        )));
    }
    let norm = theta.rem_euclid(360.0);
    if norm == 0.0 {
        return Ok(image.clone());
    }
    if norm == 90.0 {
        return Ok(imageops::rotate270(image));
    }
    if norm == 180.0 {
        return Ok(imageops::rotate180(image));
    }
    if norm == 270.0 {
        return Ok(imageops::rotate90(image));
    }

    let (w, h) = image.dimensions();
    let (cw, ch) = rotated_canvas(w, h, theta);
    let rad = theta.to_radians();
    let (s, c) = (rad.sin(), rad.cos());
    let (src_cx, src_cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (dst_cx, dst_cy) = (cw as f64 / 2.0, ch as f64 / 2.0);

    let fetch = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            [0.0; 3]
        } else {
            let p = image.get_pixel(x as u32, y as u32).0;
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    };

    let mut out = RgbImage::new(cw, ch);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let dx = x as f64 + 0.5 - dst_cx;
        let dy = y as f64 + 0.5 - dst_cy;
        // inverse of the forward map (dx, dy) = (u c + v s, -u s + v c)
        let u = dx * c - dy * s;
        let v = dx * s + dy * c;
        let sx = u + src_cx - 0.5;
        let sy = v + src_cy - 0.5;
        if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
            continue;
        }
        let x0 = sx.floor();
        let y0 = sy.floor();
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p00 = fetch(x0, y0);
        let p10 = fetch(x0 + 1, y0);
        let p01 = fetch(x0, y0 + 1);
        let p11 = fetch(x0 + 1, y0 + 1);
        let mut rgb = [0u8; 3];
        for k in 0..3 {
            let top = p00[k] * (1.0 - fx) + p10[k] * fx;
            let bottom = p01[k] * (1.0 - fx) + p11[k] * fx;
            rgb[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(rgb);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 17 % 256) as u8, (y * 29 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn shift_hand_evaluated() {
        let img = RgbImage::from_fn(4, 1, |x, _| Rgb([b'A' + x as u8, 0, 0]));
        let out = shift_cyclic(&img, 1).unwrap();
        let row: Vec<u8> = out.pixels().map(|p| p.0[0]).collect();
        assert_eq!(row, b"DABC");
        let left = shift_cyclic(&img, -1).unwrap();
        let row: Vec<u8> = left.pixels().map(|p| p.0[0]).collect();
        assert_eq!(row, b"BCDA");
    }

    #[test]
    fn shift_zero_and_inverse() {
        let img = ramp(37, 11);
        assert_eq!(shift_cyclic(&img, 0).unwrap(), img);
        let there = shift_cyclic(&img, 12).unwrap();
        assert_eq!(shift_cyclic(&there, -12).unwrap(), img);
    }

    #[test]
    fn shift_rejects_full_width() {
        let img = ramp(4, 4);
        assert!(shift_cyclic(&img, 4).is_err());
        assert!(shift_cyclic(&img, -4).is_err());
        assert!(shift_cyclic(&img, 3).is_ok());
    }

    #[test]
    fn pad_border_ring_is_black() {
        let img = RgbImage::from_pixel(10, 10, Rgb([255, 255, 255]));
        let out = pad_or_crop(&img, 2).unwrap();
        assert_eq!(out.dimensions(), (14, 14));
        let black = out.pixels().filter(|p| p.0 == [0, 0, 0]).count();
        let white = out.pixels().filter(|p| p.0 == [255, 255, 255]).count();
        // 14*14 - 10*10 = 96 border pixels
        assert_eq!(black, 96);
        assert_eq!(white, 100);
        for (x, y, p) in out.enumerate_pixels() {
            let border = x < 2 || y < 2 || x >= 12 || y >= 12;
            assert_eq!(p.0 == [0, 0, 0], border, "({x},{y})");
        }
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let img = ramp(9, 13);
        let padded = pad_or_crop(&img, 4).unwrap();
        assert_eq!(pad_or_crop(&padded, -4).unwrap(), img);
        assert_eq!(pad_or_crop(&img, 0).unwrap(), img);
    }

    #[test]
    fn crop_cannot_empty_the_image() {
        let img = ramp(8, 20);
        assert!(pad_or_crop(&img, -4).is_err());
        assert_eq!(pad_or_crop(&img, -3).unwrap().dimensions(), (2, 14));
    }

    #[test]
    fn scale_dimensions() {
        let img = ramp(100, 50);
        assert_eq!(scale_image(&img, 0.9).unwrap().dimensions(), (90, 45));
        assert_eq!(scale_image(&img, 1.0).unwrap(), img);
        assert!(scale_image(&img, 0.0).is_err());
        assert!(scale_image(&img, 1.5).is_err());
        assert!(scale_image(&ramp(1, 1), 0.4).is_err());
    }

    #[test]
    fn scale_keeps_constant_images_constant() {
        for v in [0u8, 1, 77, 128, 254, 255] {
            let img = RgbImage::from_pixel(61, 47, Rgb([v, v / 2, 255 - v]));
            let out = scale_image(&img, 0.9).unwrap();
            assert!(out.pixels().all(|p| p.0 == [v, v / 2, 255 - v]));
        }
    }

    #[test]
    fn scale_pad_geometry() {
        let img = RgbImage::from_pixel(100, 100, Rgb([200, 100, 50]));
        let black = scale_with_pad(&img, 0.9, Background::Black).unwrap();
        assert_eq!(black.dimensions(), (100, 100));
        assert_eq!(black.get_pixel(0, 0).0, [0, 0, 0]);
        // content block starts at floor((100 - 90) / 2) = 5
        assert_eq!(black.get_pixel(4, 4).0, [0, 0, 0]);
        assert_eq!(black.get_pixel(5, 5).0, [200, 100, 50]);
        assert_eq!(black.get_pixel(94, 94).0, [200, 100, 50]);
        assert_eq!(black.get_pixel(95, 95).0, [0, 0, 0]);
        let content = black.pixels().filter(|p| p.0 == [200, 100, 50]).count();
        assert_eq!(content, 90 * 90);
        let white = scale_with_pad(&img, 0.9, Background::White).unwrap();
        assert_eq!(white.get_pixel(99, 0).0, [255, 255, 255]);
        assert!(scale_with_pad(&img, 1.0, Background::White).is_err());
    }

    #[test]
    fn rotation_canvas_sizes() {
        assert_eq!(rotated_canvas(100, 100, 30.0), (137, 137));
        assert_eq!(rotated_canvas(100, 100, -30.0), (137, 137));
        assert_eq!(rotated_canvas(120, 80, 90.0), (80, 120));
        assert_eq!(rotated_canvas(120, 80, 180.0), (120, 80));
        let img = ramp(100, 100);
        assert_eq!(rotate_expand(&img, 30.0).unwrap().dimensions(), (137, 137));
    }

    #[test]
    fn rotation_identity_and_right_angles() {
        let img = ramp(12, 7);
        assert_eq!(rotate_expand(&img, 0.0).unwrap(), img);
        let quarter = rotate_expand(&img, 90.0).unwrap();
        assert_eq!(quarter.dimensions(), (7, 12));
        // counter-clockwise: the top-right source pixel lands top-left
        assert_eq!(quarter.get_pixel(0, 0), img.get_pixel(11, 0));
        let back = rotate_expand(&quarter, -90.0).unwrap();
        assert_eq!(back, img);
        assert!(rotate_expand(&img, 360.0).is_err());
    }

    #[test]
    fn rotation_fills_corners_black_and_keeps_centre() {
        let img = RgbImage::from_pixel(40, 40, Rgb([90, 180, 30]));
        let out = rotate_expand(&img, 30.0).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [0, 0, 0]);
        let (cw, ch) = out.dimensions();
        assert_eq!(out.get_pixel(cw / 2, ch / 2).0, [90, 180, 30]);
    }
}
