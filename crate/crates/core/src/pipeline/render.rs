//! Raster renderings of visualization outputs for the gallery.

use super::filters::SurfaceGrid;
use super::image::{quantize, ImageBuffer};

pub const CHART_HEIGHT: usize = 128;

/// Line chart of an intensity series: black trace on white, one column per sample.
pub fn profile_chart(series: &[f64]) -> ImageBuffer {
    let width = series.len().max(1);
    let mut samples = vec![255u8; width * CHART_HEIGHT];
    let to_row = |v: f64| {
        let scaled = (1.0 - v.clamp(0.0, 255.0) / 255.0) * (CHART_HEIGHT - 1) as f64;
        (scaled + 0.5).floor() as usize
    };
    let mut previous: Option<usize> = None;
    for (x, &v) in series.iter().enumerate() {
        let row = to_row(v);
        let (lo, hi) = match previous {
            Some(p) => (p.min(row), p.max(row)),
            None => (row, row),
        };
        for y in lo..=hi {
            samples[y * width + x] = 0;
        }
        previous = Some(row);
    }
    ImageBuffer::new(width, CHART_HEIGHT, samples).expect("chart dimensions are positive")
}

/// Shaded elevation map at the source resolution: half height, half
/// Lambertian term under a light from the upper left.
pub fn surface_shading(grid: &SurfaceGrid, width: usize, height: usize) -> ImageBuffer {
    let light = {
        let l = [-1.0f64, -1.0, 1.0];
        let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        [l[0] / norm, l[1] / norm, l[2] / norm]
    };
    let at = |c: isize, r: isize| {
        let c = c.clamp(0, grid.cols as isize - 1) as usize;
        let r = r.clamp(0, grid.rows as isize - 1) as usize;
        grid.get(c, r)
    };
    let mut cells = Vec::with_capacity(grid.cols * grid.rows);
    for r in 0..grid.rows as isize {
        for c in 0..grid.cols as isize {
            let dx = (at(c + 1, r) - at(c - 1, r)) / 2.0 / 255.0 * 4.0;
            let dy = (at(c, r + 1) - at(c, r - 1)) / 2.0 / 255.0 * 4.0;
            let n = [-dx, -dy, 1.0];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            let lambert = ((n[0] * light[0] + n[1] * light[1] + n[2] * light[2]) / len).max(0.0);
            cells.push(0.5 * at(c, r) + 0.5 * 255.0 * lambert);
        }
    }
    let values: Vec<f64> = (0..height)
        .flat_map(|y| {
            let cells = &cells;
            (0..width).map(move |x| cells[(y / grid.block) * grid.cols + x / grid.block])
        })
        .collect();
    let samples: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    ImageBuffer::new(width, height, samples).expect("dimensions match grid coverage")
}
