use serde::{Deserialize, Serialize};

use super::template::Vec3;
use crate::error::{Error, Result};

/// Weak-perspective camera: `(x, y) ↦ s·(x, y) + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Camera {
    pub fn identity() -> Self {
        Self { s: 1.0, tx: 0.0, ty: 0.0 }
    }

    pub fn project(&self, p: Vec3) -> [f64; 2] {
        [self.s * p[0] + self.tx, self.s * p[1] + self.ty]
    }
}

pub fn project_weak_perspective(points: &[Vec3], cam: &Camera) -> Vec<[f64; 2]> {
    points.iter().map(|&p| cam.project(p)).collect()
}

/// Grayscale image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    /// First pixel (row-major) holding the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &p) in self.pixels.iter().enumerate() {
            if p > self.pixels[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Splat width in pixels.
pub const SPLAT_SIGMA_PX: f64 = 1.0;

/// Normalized coordinate of the centre of pixel column `c` (x grows right).
pub fn pixel_x(c: usize, width: usize) -> f64 {
    (c as f64 + 0.5) * 2.0 / width as f64 - 1.0
}

/// Normalized coordinate of the centre of pixel row `r` (y grows up).
pub fn pixel_y(r: usize, height: usize) -> f64 {
    1.0 - (r as f64 + 0.5) * 2.0 / height as f64
}

/// Projects every vertex and adds an isotropic Gaussian of unit peak and
/// `SPLAT_SIGMA_PX` width, truncated at 3σ, then clamps to `[0, 1]`.
pub fn rasterize_silhouette(vertices: &[Vec3], cam: &Camera, height: usize, width: usize) -> Result<Image> {
    if height < 8 || width < 8 {
        return Err(Error::Input(format!("image must be at least 8x8, got {height}x{width}")));
    }
    let mut pixels = vec![0.0; height * width];
    let px = 2.0 / width as f64;
    let py = 2.0 / height as f64;
    let reach = 3.0 * SPLAT_SIGMA_PX;
    for &v in vertices {
        let [x, y] = cam.project(v);
        // continuous pixel coordinates of the projected point
        let cx = (x + 1.0) / px - 0.5;
        let cy = (1.0 - y) / py - 0.5;
        if !cx.is_finite() || !cy.is_finite() {
            continue;
        }
        let c0 = (cx - reach).ceil().max(0.0);
        let c1 = (cx + reach).floor().min(width as f64 - 1.0);
        let r0 = (cy - reach).ceil().max(0.0);
        let r1 = (cy + reach).floor().min(height as f64 - 1.0);
        if c0 > c1 || r0 > r1 {
            continue;
        }
        for r in r0 as usize..=r1 as usize {
            let dy = r as f64 - cy;
            for c in c0 as usize..=c1 as usize {
                let dx = c as f64 - cx;
                let d2 = dx * dx + dy * dy;
                if d2 <= reach * reach {
                    pixels[r * width + c] += (-d2 / (2.0 * SPLAT_SIGMA_PX * SPLAT_SIGMA_PX)).exp();
                }
            }
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(Image { height, width, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_cases() {
        let id = Camera::identity();
        assert_eq!(id.project([0.3, -0.2, 9.0]), [0.3, -0.2]);
        let cam = Camera { s: 2.0, tx: 0.1, ty: -0.4 };
        assert_eq!(cam.project([0.0; 3]), [0.1, -0.4]);
        let k = 3.0;
        let p = [0.25, -0.5, 0.7];
        let scaled = Camera { s: 2.0 / k, ..cam }.project([k * p[0], k * p[1], k * p[2]]);
        let orig = cam.project(p);
        assert!((scaled[0] - orig[0]).abs() < 1e-15 && (scaled[1] - orig[1]).abs() < 1e-15);
    }

    #[test]
    fn nothing_in_view() {
        let img = rasterize_silhouette(&[[10.0, 10.0, 0.0]], &Camera::identity(), 16, 16).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
        let empty = rasterize_silhouette(&[], &Camera::identity(), 16, 16).unwrap();
        assert!(empty.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn centred_vertex_peaks_at_centre() {
        let img = rasterize_silhouette(&[[0.0; 3]], &Camera::identity(), 15, 15).unwrap();
        assert_eq!(img.argmax(), (7, 7));
        for d in 0..3 {
            assert!(img.at(7, 7 + d) > img.at(7, 8 + d));
            assert!(img.at(7 + d, 7) > img.at(8 + d, 7));
            assert_eq!(img.at(7, 7 + d), img.at(7, 7 - d));
            assert_eq!(img.at(7 + d, 7), img.at(7 - d, 7));
        }
    }

    #[test]
    fn translation_moves_argmax_one_pixel() {
        let base = Camera { s: 1.0, tx: pixel_x(9, 20), ty: pixel_y(6, 20) };
        let a = rasterize_silhouette(&[[0.0; 3]], &base, 20, 20).unwrap();
        assert_eq!(a.argmax(), (6, 9));
        let right = Camera { tx: base.tx + 2.0 / 20.0, ..base };
        assert_eq!(rasterize_silhouette(&[[0.0; 3]], &right, 20, 20).unwrap().argmax(), (6, 10));
        let up = Camera { ty: base.ty + 2.0 / 20.0, ..base };
        assert_eq!(rasterize_silhouette(&[[0.0; 3]], &up, 20, 20).unwrap().argmax(), (5, 9));
    }

    #[test]
    fn values_are_clamped() {
        let img = rasterize_silhouette(&vec![[0.0; 3]; 10], &Camera::identity(), 9, 9).unwrap();
        assert!(img.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_eq!(img.at(4, 4), 1.0);
    }

    #[test]
    fn too_small() {
        assert!(rasterize_silhouette(&[], &Camera::identity(), 7, 32).is_err());
    }
}
