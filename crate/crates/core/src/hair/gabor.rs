//! Even-symmetric Gabor filter bank and per-pixel orientation detection.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::mesh_io::{GrayImage, Image, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaborBank {
    pub n_orientations: usize,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub lambda: f64,
    pub half_width: usize,
}

impl Default for GaborBank {
    fn default() -> Self {
        Self {
            n_orientations: 32,
            sigma_u: 1.8,
            sigma_v: 2.4,
            lambda: 4.0,
            half_width: 8,
        }
    }
}

impl GaborBank {
    pub fn validate(&self) -> Result<()> {
        if self.n_orientations < 2 {
            return Err(Error::InvalidConfig(
                "Gabor bank needs at least two orientations".into(),
            ));
        }
        if !(self.sigma_u > 0.0 && self.sigma_v > 0.0 && self.lambda > 0.0) {
            return Err(Error::InvalidConfig(
                "Gabor widths and period must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn angle(&self, bin: usize) -> f64 {
        PI * bin as f64 / self.n_orientations as f64
    }

    pub fn size(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Kernel value before mean subtraction.
    pub fn raw(&self, theta: f64, u: f64, v: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let uh = u * c + v * s;
        let vh = -u * s + v * c;
        (-(uh * uh / (self.sigma_u * self.sigma_u) + vh * vh / (self.sigma_v * self.sigma_v)) / 2.0)
            .exp()
            * (2.0 * PI * uh / self.lambda).cos()
    }
}

/// Zero-mean kernel for orientation `theta`, row-major over
/// `v, u ∈ [−half_width, half_width]`.
pub fn gabor_kernel(bank: &GaborBank, theta: f64) -> Vec<f64> {
    let h = bank.half_width as i64;
    let mut k: Vec<f64> = (-h..=h)
        .flat_map(|v| (-h..=h).map(move |u| (u, v)))
        .map(|(u, v)| bank.raw(theta, u as f64, v as f64))
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|x| *x -= mean);
    k
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Detected orientations: unit `(−sin θ*, cos θ*)` per pixel, zero outside
/// the mask or where the best response is too weak.
#[derive(Clone, Debug)]
pub struct OrientationMap {
    pub dirs: Image<[f64; 2]>,
    /// Winning bin per pixel (0 outside the mask).
    pub bins: Image<u16>,
    /// Largest absolute response per pixel.
    pub confidence: GrayImage,
}

impl OrientationMap {
    pub fn dir(&self, x: u32, y: u32) -> Option<Vec2> {
        let d = self.dirs.get(x, y);
        (d[0] != 0.0 || d[1] != 0.0).then(|| Vec2::new(d[0], d[1]))
    }
}

/// Filters `image` with every kernel of the bank at each mask pixel and
/// keeps the orientation of largest absolute response. Responses within
/// 1e-12 of the running best count as ties and keep the smaller angle.
pub fn detect_orientation(
    image: &GrayImage,
    mask: &Mask,
    bank: &GaborBank,
) -> Result<OrientationMap> {
    image.size_check(mask, "hair mask")?;
    bank.validate()?;
    let kernels: Vec<Vec<f64>> = (0..bank.n_orientations)
        .map(|b| gabor_kernel(bank, bank.angle(b)))
        .collect();
    let (lo, hi) = image
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = if image.data.is_empty() { 0.0 } else { hi - lo };
    let threshold = 1e-6 * range;
    let (w, h) = (image.width as i64, image.height as i64);
    let r = bank.half_width as i64;
    let size = bank.size();
    let pixels: Vec<(u16, f64, [f64; 2])> = (0..(w * h) as usize)
        .into_par_iter()
        .map(|idx| {
            if !mask.data[idx] {
                return (0, 0.0, [0.0, 0.0]);
            }
            let (px, py) = (idx as i64 % w, idx as i64 / w);
            let mut patch = Vec::with_capacity(size * size);
            for v in -r..=r {
                let row = reflect(py + v, h) * w as usize;
                for u in -r..=r {
                    patch.push(image.data[row + reflect(px + u, w)]);
                }
            }
            let mut best = (0usize, f64::NEG_INFINITY);
            for (b, k) in kernels.iter().enumerate() {
                let resp = k.iter().zip(&patch).map(|(a, p)| a * p).sum::<f64>().abs();
                if resp > best.1 + 1e-12 {
                    best = (b, resp);
                }
            }
            let theta = bank.angle(best.0);
            let dir = if best.1 < threshold || range == 0.0 {
                [0.0, 0.0]
            } else {
                [-theta.sin(), theta.cos()]
            };
            (best.0 as u16, best.1, dir)
        })
        .collect();
    let (width, height) = (image.width, image.height);
    Ok(OrientationMap {
        dirs: Image {
            width,
            height,
            data: pixels.iter().map(|p| p.2).collect(),
        },
        bins: Image {
            width,
            height,
            data: pixels.iter().map(|p| p.0).collect(),
        },
        confidence: Image {
            width,
            height,
            data: pixels.iter().map(|p| p.1).collect(),
        },
    })
}

/// Colour-codes orientations by angle modulo π (hue); zero vectors are black.
pub fn orientation_hsv(dirs: &Image<[f64; 2]>) -> crate::mesh_io::RgbImage {
    dirs.map(|d| {
        if d[0] == 0.0 && d[1] == 0.0 {
            return [0.0; 3];
        }
        let angle = d[1].atan2(d[0]).rem_euclid(PI);
        let hue = angle / PI * 6.0;
        let x = 1.0 - (hue % 2.0 - 1.0).abs();
        match hue as u32 {
            0 => [1.0, x, 0.0],
            1 => [x, 1.0, 0.0],
            2 => [0.0, 1.0, x],
            3 => [0.0, x, 1.0],
            4 => [x, 0.0, 1.0],
            _ => [1.0, 0.0, x],
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stripes sampled at pixel centres.
    fn stripes(n: u32, phi: f64, lambda: f64) -> GrayImage {
        GrayImage::from_fn(n, n, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            (2.0 * PI * (px * phi.cos() + py * phi.sin()) / lambda).cos()
        })
    }

    /// Interior pixels: at least a kernel radius from the border.
    fn interior(n: u32, r: u32) -> Mask {
        Mask::from_fn(n, n, |x, y| x >= r && y >= r && x < n - r && y < n - r)
    }

    #[test]
    fn kernel_properties() {
        let bank = GaborBank::default();
        assert_eq!(bank.raw(0.3, 0.0, 0.0), 1.0);
        let k = gabor_kernel(&bank, 0.0);
        let s = bank.size();
        let h = bank.half_width;
        assert!(k.iter().sum::<f64>().abs() < 1e-12);
        for v in 0..s {
            for u in 0..s {
                assert!((k[v * s + u] - k[v * s + (s - 1 - u)]).abs() < 1e-15);
                assert!((k[v * s + u] - k[(s - 1 - v) * s + u]).abs() < 1e-15);
            }
        }
        // Rotating the grid by a quarter turn maps K_θ to K_{θ+π/2}.
        let theta = bank.angle(5);
        let (a, b) = (
            gabor_kernel(&bank, theta),
            gabor_kernel(&bank, theta + PI / 2.0),
        );
        for v in 0..s {
            for u in 0..s {
                let (uu, vv) = (u as i64 - h as i64, v as i64 - h as i64);
                // (u, v) rotated by −π/2 is (v, −u).
                let (ru, rv) = (vv + h as i64, -uu + h as i64);
                assert!((b[v * s + u] - a[rv as usize * s + ru as usize]).abs() < 1e-12);
            }
        }
    }

    /// Brute-force argmax of the 32 responses computed straight from the formula.
    fn brute_bin(img: &GrayImage, bank: &GaborBank, x: i64, y: i64) -> usize {
        let h = bank.half_width as i64;
        (0..bank.n_orientations)
            .map(|b| {
                let k = gabor_kernel(bank, bank.angle(b));
                let mut acc = 0.0;
                for v in -h..=h {
                    for u in -h..=h {
                        acc += k[((v + h) * (2 * h + 1) + u + h) as usize]
                            * img.get((x + u) as u32, (y + v) as u32);
                    }
                }
                (b, acc.abs())
            })
            .fold((0, f64::NEG_INFINITY), |best, (b, r)| {
                if r > best.1 + 1e-12 {
                    (b, r)
                } else {
                    best
                }
            })
            .0
    }

    #[test]
    fn vertical_stripes() {
        let bank = GaborBank::default();
        let img = stripes(48, 0.0, 4.0);
        let mask = interior(48, 8);
        let map = detect_orientation(&img, &mask, &bank).unwrap();
        let total = mask.count();
        let good = mask
            .indices()
            .iter()
            .filter(|&&i| map.bins.data[i as usize] == 0 && map.dirs.data[i as usize] == [0.0, 1.0])
            .count();
        assert!(good as f64 >= 0.95 * total as f64, "{good}/{total}");
        assert_eq!(brute_bin(&img, &bank, 20, 20) as u16, *map.bins.get(20, 20));
        assert_eq!(*map.dirs.get(0, 0), [0.0, 0.0]);
    }

    #[test]
    fn rotated_stripes_within_one_bin() {
        let bank = GaborBank::default();
        for k in [4usize, 8, 13, 24] {
            let phi = bank.angle(k);
            let img = stripes(48, phi, 4.0);
            let mask = interior(48, 8);
            let map = detect_orientation(&img, &mask, &bank).unwrap();
            let n = bank.n_orientations as i64;
            let good = mask
                .indices()
                .iter()
                .filter(|&&i| {
                    let d = (map.bins.data[i as usize] as i64 - k as i64).rem_euclid(n);
                    d <= 1 || d == n - 1
                })
                .count();
            assert!(good as f64 >= 0.95 * mask.count() as f64, "bin {k}: {good}");
            assert_eq!(brute_bin(&img, &bank, 24, 23) as u16, *map.bins.get(24, 23));
        }
    }

    #[test]
    fn constant_image_is_low_confidence() {
        let img = GrayImage::filled(20, 20, 0.4);
        let mask = Mask::filled(20, 20, true);
        let map = detect_orientation(&img, &mask, &GaborBank::default()).unwrap();
        assert!(map.bins.data.iter().all(|&b| b == 0));
        assert!(map.dirs.data.iter().all(|d| *d == [0.0, 0.0]));
        assert!(map.confidence.data.iter().all(|&c| c < 1e-6));
        assert!(matches!(
            detect_orientation(&img, &Mask::filled(3, 3, true), &GaborBank::default()),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(2, 1), 0);
    }
}
