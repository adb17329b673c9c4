//! Camera image to network input.

use crate::image::{luminance, red_dominance, Image};
use crate::regressor::net::{Input, INPUT_SIZE};
use crate::scalar::Real;

/// Box-filter weights mapping `src` samples onto `dst` cells: for each output
/// cell, the `(source index, weight)` pairs of every overlapping source pixel.
/// Weights of one cell sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

fn resample(values: &[f64], w: usize, h: usize, cols: &[Vec<(usize, f64)>], rows: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let out_w = cols.len();
    let mut horiz = vec![0.0; h * out_w];
    for y in 0..h {
        let src = &values[y * w..(y + 1) * w];
        for (ox, taps) in cols.iter().enumerate() {
            horiz[y * out_w + ox] = taps.iter().map(|&(j, wt)| wt * src[j]).sum();
        }
    }
    let mut out = vec![0.0; rows.len() * out_w];
    for (oy, taps) in rows.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = taps.iter().map(|&(j, wt)| wt * horiz[j * out_w + ox]).sum();
        }
    }
    out
}

/// Two 64x64 channels: red dominance `max(0, r - max(g, b)) / 255` and
/// luminance `(0.299 r + 0.587 g + 0.114 b) / 255`, each area-averaged from
/// the full image. Values lie in `[0, 1]`.
pub fn preprocess<T: Real>(image: &Image) -> Input<T> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut red = Vec::with_capacity(w * h);
    let mut lum = Vec::with_capacity(w * h);
    for (_, _, c) in image.enumerate() {
        red.push(red_dominance(c));
        lum.push(luminance(c) / 255.0);
    }
    let cols = area_weights(w, INPUT_SIZE);
    let rows = area_weights(h, INPUT_SIZE);
    let data = resample(&red, w, h, &cols, &rows)
        .into_iter()
        .chain(resample(&lum, w, h, &cols, &rows))
        .map(|v| T::of(v.clamp(0.0, 1.0)))
        .collect();
    Input { data }
}
