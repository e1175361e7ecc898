use rayon::prelude::*;

use super::project::{Splat2D, SplatGrad};
use super::RenderSettings;
use crate::image::Image;

/// Forward compositing result plus what the backward pass needs to re-traverse each pixel.
#[derive(Clone, Debug)]
pub struct Raster {
    pub image: Image,
    /// Accumulated alpha `1 - T` per pixel.
    pub alpha: Vec<f64>,
    /// Transmittance left after the last composited splat.
    pub final_t: Vec<f64>,
    /// Per pixel, the number of entries of its tile list that were traversed.
    last: Vec<u32>,
    tiles_x: u32,
    tile: u32,
    bins: Vec<Vec<u32>>,
}

struct Contribution {
    dx: f64,
    dy: f64,
    alpha: f64,
    gauss: f64,
    clamped: bool,
}

#[inline]
fn contribution(s: &Splat2D, px: f64, py: f64, settings: &RenderSettings) -> Option<Contribution> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    if power > 0.0 {
        return None;
    }
    let gauss = power.exp();
    let raw = s.opacity * gauss;
    if raw < settings.alpha_min {
        return None;
    }
    let clamped = raw > settings.alpha_max;
    Some(Contribution {
        dx,
        dy,
        alpha: if clamped { settings.alpha_max } else { raw },
        gauss,
        clamped,
    })
}

fn bin_splats(splats: &[Splat2D], width: u32, height: u32, tile: u32) -> (u32, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, s) in splats.iter().enumerate() {
        // pixel centers sit at integer + 0.5
        let x0 = (s.mean2d[0] - s.extent[0] - 0.5).ceil().max(0.0);
        let x1 = (s.mean2d[0] + s.extent[0] - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (s.mean2d[1] - s.extent[1] - 0.5).ceil().max(0.0);
        let y1 = (s.mean2d[1] + s.extent[1] - 0.5).floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as u32 / tile, x1 as u32 / tile);
        let (ty0, ty1) = (y0 as u32 / tile, y1 as u32 / tile);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[(ty * tiles_x + tx) as usize].push(i as u32);
            }
        }
    }
    (tiles_x, bins)
}

fn tile_pixels(t: usize, tiles_x: u32, tile: u32, width: u32, height: u32) -> impl Iterator<Item = (u32, u32)> {
    let tx = t as u32 % tiles_x;
    let ty = t as u32 / tiles_x;
    let (x0, y0) = (tx * tile, ty * tile);
    let (x1, y1) = ((x0 + tile).min(width), (y0 + tile).min(height));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Front-to-back alpha compositing of depth-sorted splats over square tiles.
pub fn rasterize(splats: &[Splat2D], width: u32, height: u32, settings: &RenderSettings) -> Raster {
    let tile = settings.tile_size.max(1);
    let (tiles_x, bins) = bin_splats(splats, width, height, tile);
    let n = width as usize * height as usize;

    let per_tile: Vec<Vec<(usize, [f64; 3], f64, u32)>> = bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            tile_pixels(t, tiles_x, tile, width, height)
                .map(|(x, y)| {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut color = [0.0; 3];
                    let mut trans = 1.0;
                    let mut last = 0u32;
                    for (k, &si) in bin.iter().enumerate() {
                        let s = &splats[si as usize];
                        last = k as u32 + 1;
                        let Some(c) = contribution(s, px, py, settings) else {
                            continue;
                        };
                        let w = c.alpha * trans;
                        for ch in 0..3 {
                            color[ch] += s.color[ch] * w;
                        }
                        trans *= 1.0 - c.alpha;
                        if trans < settings.transmittance_min {
                            break;
                        }
                    }
                    for ch in 0..3 {
                        color[ch] += trans * settings.background[ch];
                    }
                    (y as usize * width as usize + x as usize, color, trans, last)
                })
                .collect()
        })
        .collect();

    let mut image = Image::new(width, height);
    let mut alpha = vec![0.0; n];
    let mut final_t = vec![1.0; n];
    let mut last = vec![0u32; n];
    for pixels in per_tile {
        for (p, color, trans, l) in pixels {
            image.data[3 * p..3 * p + 3].copy_from_slice(&color);
            alpha[p] = 1.0 - trans;
            final_t[p] = trans;
            last[p] = l;
        }
    }
    Raster {
        image,
        alpha,
        final_t,
        last,
        tiles_x,
        tile,
        bins,
    }
}

/// Screen-space gradients of a loss, given `dl_dimage` in the layout of [`Image::data`].
///
/// Each pixel's contributions are recomputed front to back and the adjoint is swept back
/// to front. Per-tile buffers are merged in tile order, so the result is independent of
/// thread scheduling.
pub fn rasterize_backward(
    splats: &[Splat2D],
    raster: &Raster,
    dl_dimage: &[f64],
    settings: &RenderSettings,
) -> Vec<SplatGrad> {
    let (width, height) = (raster.image.width, raster.image.height);
    let tile = raster.tile;
    let per_tile: Vec<Vec<SplatGrad>> = raster
        .bins
        .par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let mut local = vec![SplatGrad::default(); bin.len()];
            let mut stack: Vec<(usize, Contribution, f64)> = Vec::new();
            for (x, y) in tile_pixels(t, raster.tiles_x, tile, width, height) {
                let p = y as usize * width as usize + x as usize;
                let g = [dl_dimage[3 * p], dl_dimage[3 * p + 1], dl_dimage[3 * p + 2]];
                if g == [0.0; 3] {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                stack.clear();
                let mut trans = 1.0;
                for k in 0..raster.last[p] as usize {
                    let s = &splats[bin[k] as usize];
                    if let Some(c) = contribution(s, px, py, settings) {
                        let a = c.alpha;
                        stack.push((k, c, trans));
                        trans *= 1.0 - a;
                    }
                }
                // color accumulated behind the current splat, background included
                let mut behind = [0.0; 3];
                for ch in 0..3 {
                    behind[ch] = trans * settings.background[ch];
                }
                for (k, c, t_before) in stack.iter().rev() {
                    let s = &splats[bin[*k] as usize];
                    let out = &mut local[*k];
                    let w = c.alpha * t_before;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        out.color[ch] += w * g[ch];
                        d_alpha += g[ch] * (s.color[ch] * t_before - behind[ch] / (1.0 - c.alpha));
                        behind[ch] += s.color[ch] * w;
                    }
                    if c.clamped {
                        continue;
                    }
                    out.opacity += d_alpha * c.gauss;
                    let d_power = d_alpha * c.alpha;
                    out.mean2d[0] += d_power * (s.conic[0] * c.dx + s.conic[1] * c.dy);
                    out.mean2d[1] += d_power * (s.conic[1] * c.dx + s.conic[2] * c.dy);
                    out.conic[0] += d_power * (-0.5 * c.dx * c.dx);
                    out.conic[1] += d_power * (-c.dx * c.dy);
                    out.conic[2] += d_power * (-0.5 * c.dy * c.dy);
                }
            }
            local
        })
        .collect();

    let mut grads = vec![SplatGrad::default(); splats.len()];
    for (bin, local) in raster.bins.iter().zip(per_tile) {
        for (&si, g) in bin.iter().zip(local) {
            grads[si as usize].add(&g);
        }
    }
    grads
}
