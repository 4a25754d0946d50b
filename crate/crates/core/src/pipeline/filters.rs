//! Concrete image operations used by the registered stages.
//!
//! All convolutions reflect at the border and work on `f64` samples;
//! results are quantized once at the end.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use super::image::{reflect, ImageBuffer};
use super::StageError;

pub const MAX_SIGMA: f64 = 16.0;

/// Normalized 1-D Gaussian of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, StageError> {
    if !(sigma > 0.0 && sigma <= MAX_SIGMA) {
        return Err(StageError::Parameter {
            name: "sigma",
            value: sigma,
            reason: "must lie in (0, 16]",
        });
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    Ok(kernel)
}

/// Separable Gaussian blur, horizontal pass then vertical pass.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer, StageError> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.to_real();

    let mut horizontal = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            horizontal[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, weight)| weight * row[reflect(x as isize + k as isize - radius, w)])
                .sum();
        }
    }

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, weight)| {
                    weight * horizontal[reflect(y as isize + k as isize - radius, h) * w + x]
                })
                .sum();
        }
    }
    Ok(ImageBuffer::from_real(w, h, &out))
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel gradient magnitude `sqrt(gx^2 + gy^2)`.
pub fn sobel_edges(img: &ImageBuffer) -> Result<ImageBuffer, StageError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(StageError::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (j, (row_x, row_y)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let sy = reflect(y as isize + j as isize - 1, h);
                for i in 0..3 {
                    let sx = reflect(x as isize + i as isize - 1, w);
                    let v = f64::from(img.get(sx, sy));
                    gx += row_x[i] * v;
                    gy += row_y[i] * v;
                }
            }
            out[y * w + x] = gx.hypot(gy);
        }
    }
    Ok(ImageBuffer::from_real(w, h, &out))
}

/// 255 where the sample exceeds `t`, 0 elsewhere.
pub fn binarize(img: &ImageBuffer, t: u8) -> ImageBuffer {
    ImageBuffer::from_fn(img.width(), img.height(), |x, y| {
        if img.get(x, y) > t {
            255
        } else {
            0
        }
    })
}

pub fn fixed_threshold(img: &ImageBuffer, t: i64) -> Result<ImageBuffer, StageError> {
    let t = u8::try_from(t).map_err(|_| StageError::Parameter {
        name: "t",
        value: t as f64,
        reason: "must lie in [0, 255]",
    })?;
    Ok(binarize(img, t))
}

pub fn histogram(img: &ImageBuffer) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.samples() {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu's threshold: the `t` maximizing between-class variance
/// `w0 w1 (mu0 - mu1)^2` for classes `<= t` and `> t`; smallest `t` on ties.
///
/// Scores are compared exactly. With `n0` samples and intensity sum `s0`
/// below the threshold (totals `n`, `s`), the variance is proportional to
/// `(s0 n - s n0)^2 / (n0 (n - n0))`.
pub fn otsu_threshold(img: &ImageBuffer) -> Result<(u8, ImageBuffer), StageError> {
    let hist = histogram(img);
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(StageError::Degenerate);
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    let (mut below, mut below_sum) = (0u64, 0u64);
    let mut best: Option<(u8, BigUint, BigUint)> = None;
    for (t, &count) in hist.iter().enumerate() {
        below += count;
        below_sum += t as u64 * count;
        let above = total - below;
        if below == 0 || above == 0 {
            continue;
        }
        let spread = (i128::from(below_sum) * i128::from(total)
            - i128::from(total_sum) * i128::from(below))
        .unsigned_abs();
        let numer = BigUint::from(spread).pow(2);
        let denom = BigUint::from(below) * above;
        let better = match &best {
            None => true,
            Some((_, best_numer, best_denom)) => &numer * best_denom > best_numer * &denom,
        };
        if better {
            best = Some((t as u8, numer, denom));
        }
    }
    // Two distinct values guarantee at least one split with both classes populated.
    let (t, _, _) = best.ok_or(StageError::Degenerate)?;
    Ok((t, binarize(img, t)))
}

/// Intensities of row `row`, left to right.
pub fn plot_profile(img: &ImageBuffer, row: i64) -> Result<Vec<f64>, StageError> {
    let y = usize::try_from(row)
        .ok()
        .filter(|&y| y < img.height())
        .ok_or(StageError::RowOutOfRange {
            row,
            height: img.height(),
        })?;
    Ok(img.row(y).iter().map(|&v| f64::from(v)).collect())
}

/// Block-mean height field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub cols: usize,
    pub rows: usize,
    pub block: usize,
    pub values: Vec<f64>,
}

impl SurfaceGrid {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Downsamples by averaging `block x block` tiles; edge tiles average
/// whatever pixels they cover.
pub fn surface_grid(img: &ImageBuffer, block: i64) -> Result<SurfaceGrid, StageError> {
    let block = usize::try_from(block)
        .ok()
        .filter(|&b| b >= 1)
        .ok_or(StageError::Parameter {
            name: "downsample",
            value: block as f64,
            reason: "must be a positive integer",
        })?;
    let (w, h) = (img.width(), img.height());
    let cols = w.div_ceil(block);
    let rows = h.div_ceil(block);
    let mut values = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let (x0, y0) = (col * block, row * block);
            let (x1, y1) = ((x0 + block).min(w), (y0 + block).min(h));
            let mut sum = 0u64;
            for y in y0..y1 {
                sum += img.row(y)[x0..x1]
                    .iter()
                    .map(|&v| u64::from(v))
                    .sum::<u64>();
            }
            values.push(sum as f64 / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    Ok(SurfaceGrid {
        cols,
        rows,
        block,
        values,
    })
}
