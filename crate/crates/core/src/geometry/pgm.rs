//! 8-bit binary PGM export with a min/max sidecar.

use ndarray::ArrayView2;
use std::io::{self, Write};

/// Linear window used to quantise an image to 8 bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() {
            (min, max) = (0.0, 0.0);
        }
        Self { min, max }
    }

    pub fn quantise(&self, v: f64) -> u8 {
        let span = self.max - self.min;
        if span <= 0.0 || !v.is_finite() {
            return 0;
        }
        (((v - self.min) / span).clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Encode `image` (`[row][col]`) as P5. Returns the window used.
pub fn encode(image: ArrayView2<f64>, window: Option<Window>) -> (Vec<u8>, Window) {
    let window = window.unwrap_or_else(|| Window::of(image.iter().copied()));
    let (h, w) = image.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| window.quantise(v)));
    (out, window)
}

pub fn write_pgm<W: Write>(mut out: W, image: ArrayView2<f64>, window: Option<Window>) -> io::Result<Window> {
    let (bytes, window) = encode(image, window);
    out.write_all(&bytes)?;
    Ok(window)
}

/// Sidecar text recorded next to each PGM.
pub fn sidecar(window: &Window) -> String {
    format!("min {:e}\nmax {:e}\n", window.min, window.max)
}
