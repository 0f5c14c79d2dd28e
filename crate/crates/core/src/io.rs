//! PNG reading and writing for textures, masks and depth maps.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb as PixRgb};

use crate::error::{Error, Result};
use crate::grid::{clamp01, Grid, LabelImage, RgbImage, ScalarImage};

/// Background sentinel in 16-bit depth PNGs.
pub const DEPTH_SENTINEL: u16 = 0;
/// Depth PNG value per scene unit.
pub const DEPTH_SCALE: f64 = 1e4;

pub fn to_u8(v: f64) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::image(path, other),
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// Reads any supported image as float RGB in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 255.0))
            .collect(),
        _ => img
            .to_rgb32f()
            .pixels()
            .map(|p| p.0.map(f64::from))
            .collect(),
    };
    Grid::from_vec(w, h, data)
}

pub fn rgb_to_image(img: &RgbImage) -> ImageBuffer<PixRgb<u8>, Vec<u8>> {
    let mut buf = ImageBuffer::new(img.width() as u32, img.height() as u32);
    for (p, v) in buf.pixels_mut().zip(img.iter()) {
        *p = PixRgb(v.map(to_u8));
    }
    buf
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    rgb_to_image(img)
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// Reads an 8-bit single-channel image verbatim (color images are converted
/// to luma first).
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelImage> {
    let path = path.as_ref();
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw())
}

/// Reads a binary mask: any nonzero pixel becomes 1.
pub fn load_binary(path: impl AsRef<Path>) -> Result<LabelImage> {
    Ok(load_labels(path)?.map(|&v| u8::from(v != 0)))
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelImage) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.as_slice().to_vec(),
    )
    .expect("buffer size matches");
    buf.save(path).map_err(|e| Error::image(path, e))
}

/// Writes an 8-bit palette PNG; pixel values index into `palette`.
pub fn save_indexed(
    path: impl AsRef<Path>,
    labels: &LabelImage,
    palette: &[[u8; 3]],
) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        labels.width() as u32,
        labels.height() as u32,
    );
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    let mut pal: Vec<u8> = palette.iter().flatten().copied().collect();
    // every index that occurs must exist in the palette
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    for i in palette.len()..=max {
        pal.extend_from_slice(&fallback_color(i));
    }
    enc.set_palette(pal);
    let mut writer = enc.write_header().map_err(|e| Error::image(path, e))?;
    writer
        .write_image_data(labels.as_slice())
        .map_err(|e| Error::image(path, e))?;
    writer.finish().map_err(|e| Error::image(path, e))
}

fn fallback_color(i: usize) -> [u8; 3] {
    // golden-ratio hue walk, stable per index
    let h = (i as f64 * 0.618_033_988_75).fract();
    let k = |n: f64| {
        let v = ((n + h * 6.0) % 6.0 - 3.0).abs() - 1.0;
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    [k(0.0), k(4.0), k(2.0)]
}

/// Reads raw palette indices from an indexed PNG.
pub fn load_indexed(path: impl AsRef<Path>) -> Result<LabelImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::image(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::image(path, e))?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::image(path, "not an 8-bit indexed PNG"));
    }
    buf.truncate(info.buffer_size());
    Grid::from_vec(info.width as usize, info.height as usize, buf)
}

/// Encodes depth as `round(z × 10⁴)` in a 16-bit PNG, background as 0.
pub fn save_depth(path: impl AsRef<Path>, depth: &ScalarImage) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let raw: Vec<u16> = depth.iter().map(|&z| encode_depth(z)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
            .expect("buffer size matches");
    buf.save(path).map_err(|e| Error::image(path, e))
}

pub fn encode_depth(z: f64) -> u16 {
    if z > 0.0 {
        (z * DEPTH_SCALE).round().clamp(1.0, f64::from(u16::MAX)) as u16
    } else {
        DEPTH_SENTINEL
    }
}

pub fn load_depth_raw(path: impl AsRef<Path>) -> Result<Grid<u16>> {
    let path = path.as_ref();
    let img = open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Grid::from_vec(w, h, img.into_raw())
}

/// Center-crops `img` to the aspect ratio of `width × height`, then resizes
/// with bilinear filtering.
pub fn fit_to(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (sw, sh) = (img.width() as f64, img.height() as f64);
    let target = width as f64 / height as f64;
    let (cw, ch) = if sw / sh > target {
        ((sh * target).round().max(1.0), sh)
    } else {
        (sw, (sw / target).round().max(1.0))
    };
    let x0 = ((sw - cw) / 2.0).floor();
    let y0 = ((sh - ch) / 2.0).floor();
    resize_bilinear_region(img, [x0, y0, cw, ch], width, height)
}

/// Bilinear resample of the source rectangle `[x, y, w, h]` (pixel units)
/// onto a `width × height` grid, pixel-center aligned with edge clamping.
pub fn resize_bilinear_region(
    img: &RgbImage,
    rect: [f64; 4],
    width: usize,
    height: usize,
) -> RgbImage {
    let [rx, ry, rw, rh] = rect;
    let (iw, ih) = img.dims();
    Grid::from_fn(width, height, |x, y| {
        let sx = rx + (x as f64 + 0.5) * rw / width as f64 - 0.5;
        let sy = ry + (y as f64 + 0.5) * rh / height as f64 - 0.5;
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let cx = |v: f64| (v.max(0.0) as usize).min(iw - 1);
        let cy = |v: f64| (v.max(0.0) as usize).min(ih - 1);
        let p = |xx: f64, yy: f64| *img.get(cx(xx), cy(yy));
        let (a, b, c, d) = (
            p(x0, y0),
            p(x0 + 1.0, y0),
            p(x0, y0 + 1.0),
            p(x0 + 1.0, y0 + 1.0),
        );
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = a[k] * (1.0 - fx) * (1.0 - fy)
                + b[k] * fx * (1.0 - fy)
                + c[k] * (1.0 - fx) * fy
                + d[k] * fx * fy;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_jpeg() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bg.jpg");
        image::RgbImage::from_pixel(6, 4, image::Rgb([200, 100, 50]))
            .save(&p)
            .unwrap();
        let img = load_rgb(&p).unwrap();
        assert_eq!(img.dims(), (6, 4));
        assert!((img.get(2, 2)[0] - 200.0 / 255.0).abs() < 0.05);
    }

    #[test]
    fn rgb_roundtrip_is_lossless_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Grid::from_fn(5, 3, |x, y| {
            [x as f64 * 51.0 / 255.0, y as f64 / 255.0, 1.0]
        });
        let p = dir.path().join("a.png");
        save_rgb(&p, &img).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), img);
    }

    #[test]
    fn indexed_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = Grid::from_fn(4, 4, |x, y| ((x + y) % 9) as u8);
        let p = dir.path().join("m.png");
        save_indexed(&p, &labels, &[[0, 0, 0], [255, 0, 0]]).unwrap();
        assert_eq!(load_indexed(&p).unwrap(), labels);
    }

    #[test]
    fn depth_encoding() {
        assert_eq!(encode_depth(-1.0), 0);
        assert_eq!(encode_depth(0.51234), 5123);
        let dir = tempfile::tempdir().unwrap();
        let d = Grid::from_vec(2, 1, vec![-1.0, 1.25]).unwrap();
        let p = dir.path().join("d.png");
        save_depth(&p, &d).unwrap();
        assert_eq!(load_depth_raw(&p).unwrap().as_slice(), &[0, 12500]);
    }

    #[test]
    fn fit_to_identity_size() {
        let img = Grid::from_fn(6, 4, |x, y| [x as f64 / 6.0, y as f64 / 4.0, 0.5]);
        assert_eq!(fit_to(&img, 6, 4), img);
    }
}
