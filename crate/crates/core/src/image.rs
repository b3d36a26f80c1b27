//! Dense `H x W x C` float images with values nominally in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::geometry::AffineBoxTransform;

/// Fill value for padding and out-of-frame samples (mid-gray).
pub const PAD_VALUE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, interleaved channels.
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at `i + 0.5`).
    /// Points outside the image return [`PAD_VALUE`].
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let w = self.width as f64;
        let h = self.height as f64;
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return PAD_VALUE;
        }
        let fx = (x - 0.5).clamp(0.0, w - 1.0);
        let fy = (y - 0.5).clamp(0.0, h - 1.0);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
        let bottom = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Image {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut out = Image::filled(new_w, new_h, self.channels, 0.0);
        for v in 0..new_h {
            let y = (v as f64 + 0.5) * sy;
            for u in 0..new_w {
                let x = (u as f64 + 0.5) * sx;
                for c in 0..self.channels {
                    out.set(u, v, c, self.sample_bilinear(x, y, c));
                }
            }
        }
        out
    }

    /// Resamples the image through a box transform into its destination frame.
    pub fn warp(&self, t: &AffineBoxTransform<f64>) -> Image {
        let out_w = t.frame_w.round().max(1.0) as usize;
        let out_h = t.frame_h.round().max(1.0) as usize;
        if t.is_identity() && out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let inv = t.invert();
        let mut out = Image::filled(out_w, out_h, self.channels, PAD_VALUE);
        for v in 0..out_h {
            let y = inv.apply_y(v as f64 + 0.5);
            for u in 0..out_w {
                let x = inv.apply_x(u as f64 + 0.5);
                for c in 0..self.channels {
                    out.set(u, v, c, self.sample_bilinear(x, y, c));
                }
            }
        }
        out
    }

    /// Copies `src` so its top-left pixel lands at `(dx, dy)`, restricted to
    /// the destination region `[rx0, rx1) x [ry0, ry1)`.
    pub fn blit(&mut self, src: &Image, dx: i64, dy: i64, region: (i64, i64, i64, i64)) {
        let (rx0, ry0, rx1, ry1) = region;
        let x_lo = dx.max(rx0).max(0);
        let y_lo = dy.max(ry0).max(0);
        let x_hi = (dx + src.width as i64).min(rx1).min(self.width as i64);
        let y_hi = (dy + src.height as i64).min(ry1).min(self.height as i64);
        for y in y_lo..y_hi {
            for x in x_lo..x_hi {
                let (sx, sy) = ((x - dx) as usize, (y - dy) as usize);
                for c in 0..self.channels {
                    let v = src.get(sx, sy, c);
                    self.set(x as usize, y as usize, c, v);
                }
            }
        }
    }

    /// 2x2 average pooling; odd trailing rows/columns are dropped.
    pub fn downscale2(&self) -> Image {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Image::filled(w, h, self.channels, 0.0);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let s = self.get(2 * x, 2 * y, c)
                        + self.get(2 * x + 1, 2 * y, c)
                        + self.get(2 * x, 2 * y + 1, c)
                        + self.get(2 * x + 1, 2 * y + 1, c);
                    out.set(x, y, c, s * 0.25);
                }
            }
        }
        out
    }

    /// Nested `[row][col][channel]` view used by the wire protocol.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| (0..self.channels).map(|c| self.get(x, y, c)).collect())
                    .collect()
            })
            .collect()
    }

    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Option<Image> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let channels = rows.first().and_then(|r| r.first()).map_or(0, |p| p.len());
        if height == 0 || width == 0 || channels == 0 {
            return None;
        }
        let mut data = Vec::with_capacity(width * height * channels);
        for row in rows {
            if row.len() != width {
                return None;
            }
            for px in row {
                if px.len() != channels {
                    return None;
                }
                data.extend_from_slice(px);
            }
        }
        Some(Image {
            width,
            height,
            channels,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        let data = (0..w * h).map(|i| i as f64 / (w * h) as f64).collect();
        Image::from_data(w, h, 1, data).unwrap()
    }

    #[test]
    fn hflip_warp_is_exact_permutation() {
        let img = ramp(5, 3);
        let f = img.warp(&AffineBoxTransform::hflip(5.0, 3.0));
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(f.get(x, y, 0), img.get(4 - x, y, 0));
            }
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp(4, 4);
        assert_eq!(img.resize_bilinear(4, 4), img);
    }

    #[test]
    fn downscale_averages_blocks() {
        let img = Image::from_data(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.downscale2().data, vec![0.5]);
    }

    #[test]
    fn nested_round_trip() {
        let img = ramp(3, 2);
        assert_eq!(Image::from_nested(&img.to_nested()).unwrap(), img);
    }
}
