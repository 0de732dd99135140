//! Small RGB drawing surface for plots and figure grids.

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::font::{glyph, GLYPH_W};

pub type Color = (u8, u8, u8);

pub const BLACK: Color = (20, 20, 20);
pub const GRAY: Color = (170, 170, 170);
pub const SERIES_COLORS: [Color; 4] = [(200, 60, 50), (50, 90, 210), (40, 150, 70), (150, 60, 180)];

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(w: u32, h: u32) -> Self {
        Canvas {
            img: RgbImage::from_pixel(w, h, Rgb([255, 255, 255])),
        }
    }

    pub fn px(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb([c.0, c.1, c.2]));
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.px(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Color) {
        for i in 0..h {
            for j in 0..w {
                self.px(x + j, y + i, c);
            }
        }
    }

    pub fn marker(&mut self, x: i64, y: i64, c: Color) {
        self.fill_rect(x - 2, y - 2, 5, 5, c);
    }

    /// Draw text with the 5x7 font at integer scale; returns the width used.
    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Color) -> i64 {
        let mut cx = x;
        for ch in s.chars() {
            let g = glyph(ch);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                        self.fill_rect(
                            cx + (col as i64) * scale,
                            y + (row as i64) * scale,
                            scale,
                            scale,
                            c,
                        );
                    }
                }
            }
            cx += (GLYPH_W as i64 + 1) * scale;
        }
        cx - x
    }

    pub fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * (GLYPH_W as i64 + 1) * scale
    }

    /// Blit a grayscale [0,1] image with integer zoom (nearest neighbor).
    pub fn blit_gray(&mut self, x: i64, y: i64, img: &Array2<f32>, zoom: i64) {
        let (h, w) = img.dim();
        for i in 0..h {
            for j in 0..w {
                let v = (img[[i, j]].clamp(0.0, 1.0) * 255.0).round() as u8;
                self.fill_rect(
                    x + (j as i64) * zoom,
                    y + (i as i64) * zoom,
                    zoom,
                    zoom,
                    (v, v, v),
                );
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> crate::error::Result<()> {
        self.img
            .save(path)
            .map_err(|e| crate::error::Error::Format(format!("png write: {e}")))
    }
}
