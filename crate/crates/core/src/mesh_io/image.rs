//! Raster containers and PNG/ORI1 file formats.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<T>,
}

pub type RgbImage = Image<[f64; 3]>;
pub type GrayImage = Image<f64>;
pub type Mask = Image<bool>;
pub type LabelMap = Image<u8>;

impl<T: Clone> Image<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: T) {
        let w = self.width;
        self.data[(y * w + x) as usize] = v;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_size<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn size_check<U>(&self, other: &Image<U>, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::SizeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixel containing the continuous position `q`, if any.
    pub fn at_point(&self, q: &Vec2) -> bool {
        if q.x < 0.0 || q.y < 0.0 {
            return false;
        }
        let (x, y) = (q.x.floor() as u64, q.y.floor() as u64);
        x < self.width as u64 && y < self.height as u64 && *self.get(x as u32, y as u32)
    }

    /// Linear indices of set pixels.
    pub fn indices(&self) -> Vec<u32> {
        (0..self.data.len() as u32)
            .filter(|&i| self.data[i as usize])
            .collect()
    }
}

/// Bilinear interpolation weights for continuous pixel coordinates, with
/// pixel centres at half-integers and clamped borders. Returns the four
/// sample indices, weights and the derivative of each weight with respect
/// to (x, y).
pub fn bilinear_taps(width: u32, height: u32, q: &Vec2) -> [(usize, f64, f64, f64); 4] {
    let u = q.x - 0.5;
    let v = q.y - 0.5;
    let (wm, hm) = (width as f64 - 1.0, height as f64 - 1.0);
    let (uc, du_dx) = if u < 0.0 {
        (0.0, 0.0)
    } else if u > wm {
        (wm, 0.0)
    } else {
        (u, 1.0)
    };
    let (vc, dv_dy) = if v < 0.0 {
        (0.0, 0.0)
    } else if v > hm {
        (hm, 0.0)
    } else {
        (v, 1.0)
    };
    let x0 = (uc.floor() as u32).min(width.saturating_sub(2));
    let y0 = (vc.floor() as u32).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = uc - x0 as f64;
    let fy = vc - y0 as f64;
    let idx = |x: u32, y: u32| (y * width + x) as usize;
    [
        (
            idx(x0, y0),
            (1.0 - fx) * (1.0 - fy),
            -(1.0 - fy) * du_dx,
            -(1.0 - fx) * dv_dy,
        ),
        (
            idx(x1, y0),
            fx * (1.0 - fy),
            (1.0 - fy) * du_dx,
            -fx * dv_dy,
        ),
        (
            idx(x0, y1),
            (1.0 - fx) * fy,
            -fy * du_dx,
            (1.0 - fx) * dv_dy,
        ),
        (idx(x1, y1), fx * fy, fy * du_dx, fx * dv_dy),
    ]
}

impl RgbImage {
    /// Bilinear sample with its derivatives with respect to x and y.
    pub fn sample(&self, q: &Vec2) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let mut v = [0.0; 3];
        let mut dx = [0.0; 3];
        let mut dy = [0.0; 3];
        for (i, w, wx, wy) in bilinear_taps(self.width, self.height, q) {
            let p = self.data[i];
            for c in 0..3 {
                v[c] += w * p[c];
                dx[c] += wx * p[c];
                dy[c] += wy * p[c];
            }
        }
        (v, dx, dy)
    }

    pub fn to_gray(&self) -> GrayImage {
        self.map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_png(path: &Path, img: image::DynamicImage) -> Result<()> {
    let mut buf = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn load_png(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().flat_map(|p| p.map(quantize)).collect();
    let buf = image::RgbImage::from_raw(img.width, img.height, raw).expect("buffer size");
    save_png(path, image::DynamicImage::ImageRgb8(buf))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = load_png(path)?.to_rgb8();
    Ok(Image {
        width: img.width(),
        height: img.height(),
        data: img
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect(),
    })
}

pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let buf = image::GrayImage::from_raw(img.width, img.height, raw).expect("buffer size");
    save_png(path, image::DynamicImage::ImageLuma8(buf))
}

pub fn save_labels(path: &Path, img: &LabelMap) -> Result<()> {
    let buf =
        image::GrayImage::from_raw(img.width, img.height, img.data.clone()).expect("buffer size");
    save_png(path, image::DynamicImage::ImageLuma8(buf))
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let img = load_png(path)?.to_luma8();
    Ok(Image {
        width: img.width(),
        height: img.height(),
        data: img.into_raw(),
    })
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    save_labels(path, &mask.map(|&b| if b { 255 } else { 0 }))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    Ok(load_labels(path)?.map(|&v| v >= 128))
}

const ORI_MAGIC: &[u8; 4] = b"ORI1";

/// Writes an orientation map: magic, u32 width, u32 height, then
/// row-major little-endian f32 (dx, dy) pairs.
pub fn save_orientation(path: &Path, map: &Image<[f64; 2]>) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + map.data.len() * 8);
    buf.extend_from_slice(ORI_MAGIC);
    buf.extend_from_slice(&map.width.to_le_bytes());
    buf.extend_from_slice(&map.height.to_le_bytes());
    for d in &map.data {
        buf.extend_from_slice(&(d[0] as f32).to_le_bytes());
        buf.extend_from_slice(&(d[1] as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_orientation(path: &Path) -> Result<Image<[f64; 2]>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Parse {
        path: path.into(),
        line: 0,
        message: message.into(),
    };
    if bytes.len() < 12 || &bytes[..4] != ORI_MAGIC {
        return Err(bad("missing ORI1 header"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n = width as usize * height as usize;
    if bytes.len() != 12 + 8 * n {
        return Err(bad("orientation payload size does not match the header"));
    }
    let f = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
    let data = (0..n).map(|k| [f(12 + 8 * k), f(16 + 8 * k)]).collect();
    Ok(Image {
        width,
        height,
        data,
    })
}
