//! Independent reference implementations used by the integration tests.
//! Written for clarity, not speed; none of them call into the crate's
//! algorithms.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use gmp_core::image::Image2D;
use gmp_core::segment::SegmentationMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> Image2D {
    Image2D::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// Bilinear interpolation written from the textbook formula: clamp the
/// position into the grid, then weight the four surrounding pixels.
pub fn bilinear(img: &Image2D, x: f64, y: f64) -> f64 {
    let (h, w) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |r: usize, c: usize| img.get(r, c);
    p(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + p(y0, x1) * fx * (1.0 - fy)
        + p(y1, x0) * (1.0 - fx) * fy
        + p(y1, x1) * fx * fy
}

/// The image shifted by (dx, dy): pixel (r, c) takes the input at
/// (c − dx, r − dy).
pub fn shifted(img: &Image2D, dx: f64, dy: f64) -> Image2D {
    Image2D::from_fn(img.height(), img.width(), |r, c| bilinear(img, c as f64 - dx, r as f64 - dy))
}

/// Materializes every shifted copy of every slice along `theta_deg` for
/// shifts j·δ, j = −D/δ ..= D/δ, and takes the pixelwise minimum.
pub fn gmp_stack_min(slices: &[&Image2D], theta_deg: f64, delta: f64, extent: f64) -> Image2D {
    let n = (extent / delta).round() as i64;
    let t = theta_deg.to_radians();
    let mut stack = Vec::new();
    for s in slices {
        for j in -n..=n {
            let d = j as f64 * delta;
            stack.push(shifted(s, d * t.cos(), d * t.sin()));
        }
    }
    let (h, w) = slices[0].dims();
    Image2D::from_fn(h, w, |r, c| stack.iter().map(|im| im.get(r, c)).fold(f64::INFINITY, f64::min))
}

fn smoothed_rof(u: &[f64], f: &[f64], h: usize, w: usize, weight: f64, eps: f64, grad: &mut [f64]) -> f64 {
    let eps2 = eps * eps;
    let mut e = 0.0;
    for i in 0..u.len() {
        let d = u[i] - f[i];
        e += d * d / (2.0 * weight);
        grad[i] = d / weight;
    }
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            // Replicate boundary: the difference leaving the grid is zero.
            let gx = if c + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            let gy = if r + 1 < h { u[i + w] - u[i] } else { 0.0 };
            let n = (gx * gx + gy * gy + eps2).sqrt();
            e += n;
            let (ax, ay) = (gx / n, gy / n);
            grad[i] -= ax + ay;
            if c + 1 < w {
                grad[i + 1] += ax;
            }
            if r + 1 < h {
                grad[i + w] += ay;
            }
        }
    }
    e
}

/// Minimizes the ROF energy by accelerated gradient descent on the primal,
/// with |∇u| smoothed to sqrt(|∇u|² + ε²) and ε driven from 1e-1 down to
/// 1e-7. Slow, but shares nothing with the dual solver under test.
pub fn rof_minimizer(img: &Image2D, weight: f64) -> Image2D {
    let (h, w) = img.dims();
    let f = img.data();
    let mut u = f.to_vec();
    let mut grad = vec![0.0; u.len()];
    let mut eps = 1e-1;
    while eps > 0.5e-7 {
        // Lipschitz bound of the smoothed objective's gradient.
        let step = 1.0 / (8.0 / eps + 1.0 / weight);
        let iters = (3.0 / eps.sqrt()) as usize + 500;
        let mut y = u.clone();
        let mut next = u.clone();
        let mut t = 1.0f64;
        let mut last = f64::INFINITY;
        for _ in 0..iters {
            let e = smoothed_rof(&y, f, h, w, weight, eps, &mut grad);
            if e > last {
                // Momentum overshot: restart from the last accepted point.
                t = 1.0;
                y.copy_from_slice(&u);
                last = f64::INFINITY;
                continue;
            }
            last = e;
            for ((n, a), g) in next.iter_mut().zip(&y).zip(&grad) {
                *n = a - step * g;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            for ((yv, n), p) in y.iter_mut().zip(&next).zip(&u) {
                *yv = n + beta * (n - p);
            }
            std::mem::swap(&mut u, &mut next);
            t = t_next;
        }
        eps /= 10.0;
    }
    Image2D::new(h, w, u).unwrap()
}

fn foreground(mask: &SegmentationMask) -> HashSet<(usize, usize, usize)> {
    let (d, h, w) = mask.dims();
    let mut set = HashSet::new();
    for s in 0..d {
        for r in 0..h {
            for c in 0..w {
                if mask.get(s, r, c) {
                    set.insert((s, r, c));
                }
            }
        }
    }
    set
}

/// Dice by set arithmetic.
pub fn dice_sets(a: &SegmentationMask, b: &SegmentationMask) -> f64 {
    let (sa, sb) = (foreground(a), foreground(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

fn fill(mask: &[u8], h: usize, w: usize, r: usize, c: usize, seen: &mut [bool], out: &mut BTreeSet<u32>) {
    let i = r * w + c;
    if mask[i] == 0 || seen[i] {
        return;
    }
    seen[i] = true;
    out.insert(i as u32);
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if (dr, dc) != (0, 0) && (0..h as i64).contains(&nr) && (0..w as i64).contains(&nc) {
                fill(mask, h, w, nr as usize, nc as usize, seen, out);
            }
        }
    }
}

/// 8-connected components by recursive flood fill, as pixel-index sets.
pub fn flood_fill_components(mask: &[u8], h: usize, w: usize) -> BTreeSet<BTreeSet<u32>> {
    let mut seen = vec![false; h * w];
    let mut parts = BTreeSet::new();
    for r in 0..h {
        for c in 0..w {
            let mut part = BTreeSet::new();
            fill(mask, h, w, r, c, &mut seen, &mut part);
            if !part.is_empty() {
                parts.insert(part);
            }
        }
    }
    parts
}

pub fn random_mask_slice(rng: &mut impl Rng, len: usize, density: f64) -> Vec<u8> {
    (0..len).map(|_| u8::from(rng.random_bool(density))).collect()
}
