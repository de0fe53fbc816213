//! Bilinear sampling with replicate borders, shared by resizing and translation.

use crate::error::{GmpError, Result};
use crate::image::Image2D;

/// Two clamped tap indices and the weight of the second tap.
#[derive(Debug, Clone, Copy)]
struct Taps {
    lo: usize,
    hi: usize,
    frac: f64,
}

#[inline]
fn taps(coord: f64, len: usize) -> Taps {
    let base = coord.floor();
    let frac = coord - base;
    let last = len as isize - 1;
    let i0 = base as isize;
    Taps {
        lo: i0.clamp(0, last) as usize,
        hi: (i0 + 1).clamp(0, last) as usize,
        frac,
    }
}

#[inline]
fn blend(img: &Image2D, ty: Taps, tx: Taps) -> f64 {
    let w = img.width();
    let d = img.data();
    let top = d[ty.lo * w + tx.lo] * (1.0 - tx.frac) + d[ty.lo * w + tx.hi] * tx.frac;
    let bottom = d[ty.hi * w + tx.lo] * (1.0 - tx.frac) + d[ty.hi * w + tx.hi] * tx.frac;
    top * (1.0 - ty.frac) + bottom * ty.frac
}

/// Samples `img` at the real-valued position (`x` = column, `y` = row).
/// Positions outside the grid take the value of the nearest edge pixel.
pub fn sample_bilinear(img: &Image2D, x: f64, y: f64) -> f64 {
    blend(img, taps(y, img.height()), taps(x, img.width()))
}

/// Corner-aligned bilinear resize: output corners sample input corners exactly.
pub fn resize_slice(img: &Image2D, target_h: usize, target_w: usize) -> Result<Image2D> {
    if target_h < 2 || target_w < 2 {
        return Err(GmpError::InvalidParameter(format!(
            "resize target {target_h}x{target_w} is degenerate (need at least 2x2)"
        )));
    }
    let (h, w) = img.dims();
    let sy = (h - 1) as f64 / (target_h - 1) as f64;
    let sx = (w - 1) as f64 / (target_w - 1) as f64;
    let col_taps: Vec<Taps> = (0..target_w).map(|c| taps(c as f64 * sx, w)).collect();
    let mut out = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let ty = taps(r as f64 * sy, h);
        out.extend(col_taps.iter().map(|&tx| blend(img, ty, tx)));
    }
    Ok(Image2D::from_raw(target_h, target_w, out))
}

/// Shifts `img` by (`dx`, `dy`): output pixel (r, c) samples the input at
/// (c − dx, r − dy). Integer offsets reproduce exact pixel shifts.
pub fn translate_image(img: &Image2D, dx: f64, dy: f64) -> Image2D {
    let mut out = vec![0.0; img.len()];
    translate_with(img, dx, dy, |slot, v| *slot = v, &mut out);
    Image2D::from_raw(img.height(), img.width(), out)
}

/// Pixelwise `acc = min(acc, translate(img, dx, dy))` without materializing
/// the shifted image.
pub(crate) fn translate_min_into(img: &Image2D, dx: f64, dy: f64, acc: &mut [f64]) {
    translate_with(
        img,
        dx,
        dy,
        |slot, v| *slot = slot.min(v),
        acc,
    );
}

/// The fractional part of a translation is the same for every pixel, so the
/// four tap weights are hoisted out of the loop. Columns whose taps both fall
/// inside the row take a contiguous fast path; only the few border columns
/// need clamped indices.
#[inline]
fn translate_with(
    img: &Image2D,
    dx: f64,
    dy: f64,
    mut store: impl FnMut(&mut f64, f64),
    out: &mut [f64],
) {
    let (h, w) = img.dims();
    debug_assert_eq!(out.len(), h * w);
    let d = img.data();

    let ox = -dx;
    let oy = -dy;
    let fx = ox.floor();
    let fy = oy.floor();
    let ax = ox - fx;
    let ay = oy - fy;
    let (bx, by) = (1.0 - ax, 1.0 - ay);
    let (ix, iy) = (fx as isize, fy as isize);
    let (lastx, lasty) = (w as isize - 1, h as isize - 1);

    // Columns c with 0 <= c+ix and c+ix+1 <= w-1.
    let inner_lo = (-ix).clamp(0, w as isize) as usize;
    let inner_hi = (w as isize - 1 - ix).clamp(inner_lo as isize, w as isize) as usize;
    let clamp_col = |c: usize| {
        let c = c as isize;
        ((c + ix).clamp(0, lastx) as usize, (c + ix + 1).clamp(0, lastx) as usize)
    };

    for (r, out_row) in out.chunks_exact_mut(w).enumerate() {
        let r = r as isize;
        let y0 = (r + iy).clamp(0, lasty) as usize;
        let y1 = (r + iy + 1).clamp(0, lasty) as usize;
        let row0 = &d[y0 * w..(y0 + 1) * w];
        let row1 = &d[y1 * w..(y1 + 1) * w];
        let mut edge = |c: usize, slot: &mut f64| {
            let (x0, x1) = clamp_col(c);
            let top = row0[x0] * bx + row0[x1] * ax;
            let bottom = row1[x0] * bx + row1[x1] * ax;
            store(slot, top * by + bottom * ay);
        };
        for c in 0..inner_lo {
            edge(c, &mut out_row[c]);
        }
        for c in inner_hi..w {
            edge(c, &mut out_row[c]);
        }
        if inner_lo < inner_hi {
            let start = (inner_lo as isize + ix) as usize;
            let len = inner_hi - inner_lo;
            let (t0, t1) = (&row0[start..start + len], &row0[start + 1..start + 1 + len]);
            let (b0, b1) = (&row1[start..start + len], &row1[start + 1..start + 1 + len]);
            for ((((slot, &p00), &p01), &p10), &p11) in
                out_row[inner_lo..inner_hi].iter_mut().zip(t0).zip(t1).zip(b0).zip(b1)
            {
                let top = p00 * bx + p01 * ax;
                let bottom = p10 * bx + p11 * ax;
                store(slot, top * by + bottom * ay);
            }
        }
    }
}
