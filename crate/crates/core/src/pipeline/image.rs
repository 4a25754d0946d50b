use serde::{Deserialize, Serialize};

use super::StageError;

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, StageError> {
        if width == 0 || height == 0 {
            return Err(StageError::EmptyImage);
        }
        if samples.len() != width * height {
            return Err(StageError::SampleCount {
                expected: width * height,
                found: samples.len(),
            });
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            samples,
        }
    }

    /// Quantizes real-valued samples: clamp to `[0, 255]`, round half up.
    pub fn from_real(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            samples: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.samples[y * self.width..(y + 1) * self.width]
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|&v| u64::from(v)).sum::<u64>() as f64 / self.samples.len() as f64
    }
}

/// Clamp to `[0, 255]` and round half up.
pub fn quantize(value: f64) -> u8 {
    if value.is_nan() {
        return 0;
    }
    (value.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

/// Symmetric border reflection (`... c b a | a b c ...`), valid for any offset.
pub fn reflect(index: isize, len: usize) -> usize {
    let len = len as isize;
    let period = 2 * len;
    let mut i = index.rem_euclid(period);
    if i >= len {
        i = period - 1 - i;
    }
    i as usize
}
