//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use vvv_core::codec::{ParamSchema, Settings};
use vvv_core::explorer::SessionConfig;
use vvv_core::pipeline::{ImageBuffer, PipelineStages, Stage, StageKind};

pub fn random_image<R: Rng>(rng: &mut R, width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |_, _| rng.gen())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Half the pixels drawn around 60, half around 190 (sd 12).
pub fn bimodal<R: Rng>(rng: &mut R, width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |x, _| {
        let mode = if x < width / 2 { 60.0 } else { 190.0 };
        (mode + 12.0 * normal(rng)).round().clamp(0.0, 255.0) as u8
    })
}

/// Deterministic test scene: shaded background with a few bright discs.
pub fn scene(width: usize, height: usize) -> ImageBuffer {
    let discs = [
        (0.3, 0.3, 0.12, 200.0),
        (0.7, 0.4, 0.18, 170.0),
        (0.45, 0.75, 0.1, 235.0),
    ];
    ImageBuffer::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let mut value = 30.0 + 50.0 * u + 20.0 * (7.0 * v).sin();
        for (cx, cy, r, level) in discs {
            if (u - cx).powi(2) + (v - cy).powi(2) < r * r {
                value = level;
            }
        }
        value.round().clamp(0.0, 255.0) as u8
    })
}

/// Border index by bouncing off the edges one step at a time.
pub fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D convolution with the full `(2r+1)^2` Gaussian, unquantized.
pub fn dense_gaussian(img: &ImageBuffer, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut weights = Vec::new();
    for j in -r..=r {
        for i in -r..=r {
            weights.push((
                i,
                j,
                (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp(),
            ));
        }
    }
    let total: f64 = weights.iter().map(|w| w.2).sum();
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &(i, j, weight) in &weights {
                let sx = mirror(x as isize + i, w);
                let sy = mirror(y as isize + j, h);
                acc += weight * f64::from(img.get(sx, sy));
            }
            out.push(acc / total);
        }
    }
    out
}

/// Direct Sobel magnitude, unquantized.
pub fn dense_sobel(img: &ImageBuffer) -> Vec<f64> {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0f64, 0.0f64);
            for (j, row) in kx.iter().enumerate() {
                for (i, &weight) in row.iter().enumerate() {
                    let v = f64::from(img.get(
                        mirror(x as isize + i as isize - 1, w),
                        mirror(y as isize + j as isize - 1, h),
                    ));
                    gx += weight * v;
                    // the y kernel is the transpose of the x kernel
                    gy += kx[i][j] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Largest `|implementation - clamp(oracle)|` over all pixels.
pub fn max_deviation(img: &ImageBuffer, oracle: &[f64]) -> f64 {
    img.samples()
        .iter()
        .zip(oracle)
        .map(|(&v, &o)| (f64::from(v) - o.clamp(0.0, 255.0)).abs())
        .fold(0.0, f64::max)
}

/// Otsu by brute force: for every threshold, split the pixels directly and
/// evaluate `w0 w1 (mu0 - mu1)^2` in exact rationals; first maximum wins.
pub fn brute_otsu(img: &ImageBuffer) -> u8 {
    let total = img.samples().len() as i64;
    let mut best: Option<(u8, BigRational)> = None;
    for t in 0..=255u8 {
        let (mut n0, mut s0, mut n1, mut s1) = (0i64, 0i64, 0i64, 0i64);
        for &v in img.samples() {
            if v <= t {
                n0 += 1;
                s0 += i64::from(v);
            } else {
                n1 += 1;
                s1 += i64::from(v);
            }
        }
        let score = if n0 == 0 || n1 == 0 {
            BigRational::from_integer(BigInt::from(0))
        } else {
            let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
            let diff = r(s0, n0) - r(s1, n1);
            r(n0, total) * r(n1, total) * &diff * &diff
        };
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((t, score));
        }
    }
    best.unwrap().0
}

/// Relative path -> contents for every file below `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Blur (8 sigmas), surface grid, fixed threshold (16 levels).
pub fn blur_surface_threshold() -> PipelineStages {
    PipelineStages {
        veni: Stage::with_params(
            StageKind::GaussianBlur,
            vec![ParamSchema::new("sigma", 0.5, 0.5, 8)],
        ),
        vidi: Stage::with_params(
            StageKind::SurfaceGrid,
            vec![ParamSchema::new("downsample", 1.0, 1.0, 8)],
        ),
        vici: Stage::with_params(
            StageKind::FixedThreshold,
            vec![ParamSchema::new("t", 0.0, 16.0, 16)],
        ),
    }
}

/// The scripted end-to-end session: 128x128 scene, range 6.
pub fn scripted_config(output_root: Option<&Path>) -> SessionConfig {
    let mut cfg = SessionConfig::new(
        blur_surface_threshold(),
        6,
        Settings::new(vec![2, 1, 8]),
        vec![scene(128, 128)],
    );
    cfg.output_root = output_root.map(Path::to_owned);
    cfg
}

/// Selection script for [`scripted_config`], frozen from its first run.
pub const SCRIPT: &str = "\
# five moves, then stop
8208
8209
8208
8211
8209
NONE
";

/// Settings visited by [`SCRIPT`], start state included.
pub fn scripted_trajectory() -> Vec<Settings> {
    [
        [2, 1, 8],
        [0, 3, 8],
        [1, 2, 8],
        [0, 3, 8],
        [2, 1, 8],
        [1, 2, 8],
    ]
    .iter()
    .map(|s| Settings::new(s.to_vec()))
    .collect()
}
