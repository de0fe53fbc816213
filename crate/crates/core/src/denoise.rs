//! Total-variation (ROF) denoising by projected gradient on the dual
//! (Chambolle's dual formulation, optionally with Nesterov momentum), plus a
//! median filter baseline.
//!
//! The discrete gradient uses forward differences with a replicate
//! boundary: the difference leaving the last row or column is zero. The
//! divergence is its negative adjoint, so `u = f − weight·div p` keeps the
//! mean of `f` exactly (the divergence telescopes to zero).

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{GmpError, Result};
use crate::image::Image2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvParams {
    /// ROF fidelity weight: larger values smooth more.
    pub weight: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the dual field drops below this.
    pub tol: f64,
    /// Dual gradient step. The plain iteration is stable up to 1/4, the
    /// accelerated one up to 1/8.
    pub step: f64,
    /// Nesterov momentum with adaptive restart on top of the projection.
    pub accelerated: bool,
    /// Arithmetic of the dual iteration. The output image is always formed
    /// in double precision.
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            weight: 0.4,
            max_iters: 100,
            tol: 1e-4,
            step: 0.125,
            accelerated: true,
            precision: Precision::Single,
        }
    }
}

impl TvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(GmpError::InvalidParameter(format!(
                "tv weight must be positive, got {}",
                self.weight
            )));
        }
        if !(self.tol > 0.0) {
            return Err(GmpError::InvalidParameter(format!(
                "tv tolerance must be positive, got {}",
                self.tol
            )));
        }
        if !(self.step > 0.0 && self.step <= 0.25) {
            return Err(GmpError::InvalidParameter(format!(
                "tv step must lie in (0, 0.25], got {}",
                self.step
            )));
        }
        if self.accelerated && self.step > 0.125 {
            return Err(GmpError::InvalidParameter(format!(
                "accelerated tv step must not exceed 0.125, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TvOutcome {
    pub image: Image2D,
    pub iterations: usize,
    pub converged: bool,
    /// Primal ROF energy after each iteration; only filled by
    /// [`tv_denoise_traced`].
    pub energy_trace: Vec<f64>,
}

/// Total variation of `img` with forward differences and replicate boundary.
pub fn total_variation(img: &Image2D) -> f64 {
    let (h, w) = img.dims();
    let d = img.data();
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = d[r * w + c];
            let gx = if c + 1 < w { d[r * w + c + 1] - v } else { 0.0 };
            let gy = if r + 1 < h { d[(r + 1) * w + c] - v } else { 0.0 };
            tv += (gx * gx + gy * gy).sqrt();
        }
    }
    tv
}

/// `TV(candidate) + ‖candidate − original‖² / (2·weight)`.
pub fn rof_energy(original: &Image2D, candidate: &Image2D, weight: f64) -> Result<f64> {
    if original.dims() != candidate.dims() {
        return Err(GmpError::DimensionMismatch {
            expected: original.dims(),
            found: candidate.dims(),
        });
    }
    let fidelity: f64 = original
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total_variation(candidate) + fidelity / (2.0 * weight))
}

pub fn tv_denoise(img: &Image2D, params: &TvParams) -> Result<TvOutcome> {
    run_projection(img, params, false)
}

/// Like [`tv_denoise`] but records, after every iteration, the primal energy
/// of the best iterate so far (the one that would be returned).
pub fn tv_denoise_traced(img: &Image2D, params: &TvParams) -> Result<TvOutcome> {
    run_projection(img, params, true)
}

fn run_projection(img: &Image2D, params: &TvParams, trace: bool) -> Result<TvOutcome> {
    params.validate()?;
    match params.precision {
        Precision::Single => project::<f32>(img, params, trace),
        Precision::Double => project::<f64>(img, params, trace),
    }
}

/// Dual field, one component per axis. `px` is zero on the last column and
/// `py` on the last row throughout, because the gradient there is zero.
#[derive(Clone)]
struct DualField<T> {
    px: Vec<T>,
    py: Vec<T>,
}

impl<T: Float> DualField<T> {
    fn zeros(n: usize) -> Self {
        Self {
            px: vec![T::zero(); n],
            py: vec![T::zero(); n],
        }
    }

    /// `self = p + beta·(p − prev)`.
    fn extrapolate(&mut self, p: &Self, prev: &Self, beta: T) {
        for (dst, (a, b)) in [(&mut self.px, (&p.px, &prev.px)), (&mut self.py, (&p.py, &prev.py))] {
            for ((d, &x), &y) in dst.iter_mut().zip(a.iter()).zip(b.iter()) {
                *d = x + beta * (x - y);
            }
        }
    }

    /// Divergence in f64, the negative adjoint of the forward-difference
    /// gradient.
    fn divergence(&self, h: usize, w: usize) -> Vec<f64> {
        let v = |x: T| x.to_f64().unwrap_or(0.0);
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let mut d = v(self.px[i]) + v(self.py[i]);
                if c > 0 {
                    d -= v(self.px[i - 1]);
                }
                if r > 0 {
                    d -= v(self.py[i - w]);
                }
                out[i] = d;
            }
        }
        out
    }
}

/// `g = div q − f/weight` for row `r`.
fn g_row<T: Float>(q: &DualField<T>, f_scaled: &[T], w: usize, r: usize, out: &mut [T]) {
    let row = r * w..(r + 1) * w;
    let (px, py) = (&q.px[row.clone()], &q.py[row.clone()]);
    out[0] = px[0];
    for c in 1..w {
        out[c] = px[c] - px[c - 1];
    }
    for ((o, &y), &fv) in out.iter_mut().zip(py).zip(&f_scaled[row.clone()]) {
        *o = *o + y - fv;
    }
    if r > 0 {
        for (o, &y) in out.iter_mut().zip(&q.py[row.start - w..row.start]) {
            *o = *o - y;
        }
    }
}

const LANES: usize = 8;

/// Per-lane partial sums of one sweep; lanes are summed in a fixed order.
struct Sums<T> {
    /// Σ|∇g| at the evaluated point.
    tv: [T; LANES],
    /// Σ(div q)².
    div_sq: [T; LANES],
    /// Σ g², the dual objective up to a factor weight².
    g_sq: [T; LANES],
    /// Σ(p_new − p)².
    change_sq: [T; LANES],
    /// Σ p_new².
    norm_sq: [T; LANES],
}

impl<T: Float> Sums<T> {
    fn new() -> Self {
        let z = [T::zero(); LANES];
        Self {
            tv: z,
            div_sq: z,
            g_sq: z,
            change_sq: z,
            norm_sq: z,
        }
    }

    fn total(lanes: &[T; LANES]) -> f64 {
        lanes.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum()
    }
}

struct RowIn<'a, T> {
    qx: &'a [T],
    qy: &'a [T],
    px: &'a [T],
    py: &'a [T],
    g: &'a [T],
    /// `g` of the next row; `g` itself on the last row.
    g_below: &'a [T],
    f_scaled: &'a [T],
}

/// Projection step on `LANES` consecutive pixels starting at `base`, with
/// horizontal differences `gx` already formed.
#[inline(always)]
fn project_lanes<T: Float>(
    i: &RowIn<'_, T>,
    base: usize,
    gx: &[T; LANES],
    tau: T,
    sums: &mut Sums<T>,
    nx: &mut [T; LANES],
    ny: &mut [T; LANES],
) {
    let g: &[T; LANES] = i.g[base..base + LANES].try_into().unwrap();
    let gb: &[T; LANES] = i.g_below[base..base + LANES].try_into().unwrap();
    let qx: &[T; LANES] = i.qx[base..base + LANES].try_into().unwrap();
    let qy: &[T; LANES] = i.qy[base..base + LANES].try_into().unwrap();
    let px: &[T; LANES] = i.px[base..base + LANES].try_into().unwrap();
    let py: &[T; LANES] = i.py[base..base + LANES].try_into().unwrap();
    let fs: &[T; LANES] = i.f_scaled[base..base + LANES].try_into().unwrap();
    let one = T::one();
    for l in 0..LANES {
        let gy = gb[l] - g[l];
        let mag = (gx[l] * gx[l] + gy * gy).sqrt();
        let (ax, ay) = (qx[l] + tau * gx[l], qy[l] + tau * gy);
        let scale = one / (ax * ax + ay * ay).sqrt().max(one);
        nx[l] = ax * scale;
        ny[l] = ay * scale;
        let (dx, dy) = (nx[l] - px[l], ny[l] - py[l]);
        let div = g[l] + fs[l];
        sums.tv[l] = sums.tv[l] + mag;
        sums.div_sq[l] = sums.div_sq[l] + div * div;
        sums.g_sq[l] = sums.g_sq[l] + g[l] * g[l];
        sums.change_sq[l] = sums.change_sq[l] + dx * dx + dy * dy;
        sums.norm_sq[l] = sums.norm_sq[l] + nx[l] * nx[l] + ny[l] * ny[l];
    }
}

/// Projection step on one row, evaluated at `q` and written to `nx`/`ny`.
/// The row is processed in blocks of `LANES`; the tail block is padded by
/// copying it into a scratch row so that every pixel goes through the same
/// code and lands in the same lane.
fn project_row<T: Float>(i: &RowIn<'_, T>, tau: T, sums: &mut Sums<T>, nx: &mut [T], ny: &mut [T]) {
    let w = i.g.len();
    let full = w / LANES * LANES;
    for base in (0..full).step_by(LANES) {
        let mut gx = [T::zero(); LANES];
        for l in 0..LANES {
            let k = base + l;
            gx[l] = if k + 1 < w { i.g[k + 1] - i.g[k] } else { T::zero() };
        }
        let ox: &mut [T; LANES] = (&mut nx[base..base + LANES]).try_into().unwrap();
        let oy: &mut [T; LANES] = (&mut ny[base..base + LANES]).try_into().unwrap();
        project_lanes(i, base, &gx, tau, sums, ox, oy);
    }
    if full < w {
        let rest = w - full;
        let pad = |src: &[T]| {
            let mut a = [T::zero(); LANES];
            a[..rest].copy_from_slice(&src[full..]);
            a
        };
        let (g, gb, qx, qy, px, py, fs) = (
            pad(i.g),
            pad(i.g_below),
            pad(i.qx),
            pad(i.qy),
            pad(i.px),
            pad(i.py),
            pad(i.f_scaled),
        );
        let tail = RowIn {
            qx: &qx,
            qy: &qy,
            px: &px,
            py: &py,
            g: &g,
            g_below: &gb,
            f_scaled: &fs,
        };
        let mut gx = [T::zero(); LANES];
        for l in 0..rest.saturating_sub(1) {
            gx[l] = g[l + 1] - g[l];
        }
        // Padding lanes are all zero, so they add nothing to the sums.
        let (mut ox, mut oy) = ([T::zero(); LANES], [T::zero(); LANES]);
        project_lanes(&tail, 0, &gx, tau, sums, &mut ox, &mut oy);
        nx[full..].copy_from_slice(&ox[..rest]);
        ny[full..].copy_from_slice(&oy[..rest]);
    }
}

/// Accelerated dual projection: Chambolle's semi-implicit step applied at
/// an extrapolated point, with the momentum reset whenever the dual
/// objective rises. Every evaluated point also yields a primal candidate
/// `u = −weight·g`; the lowest-energy one is returned, so the reported
/// energy never increases and never exceeds that of the input.
fn project<T: Float>(img: &Image2D, params: &TvParams, trace: bool) -> Result<TvOutcome> {
    let (h, w) = img.dims();
    let n = h * w;
    let f = img.data();
    let inv_weight = 1.0 / params.weight;
    let cast = |v: f64| T::from(v).unwrap_or_else(T::nan);
    let f_scaled: Vec<T> = f.iter().map(|&v| cast(v * inv_weight)).collect();
    let tau = cast(params.step);

    let mut p = DualField::<T>::zeros(n);
    let mut prev = DualField::<T>::zeros(n);
    let mut q = DualField::<T>::zeros(n);
    let mut best = DualField::<T>::zeros(n);
    let mut best_energy = f64::INFINITY;
    let mut last_dual = f64::INFINITY;
    let mut t = 1.0f64;
    let mut g_cur = vec![T::zero(); w];
    let mut g_next = vec![T::zero(); w];
    let mut energy_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        iterations += 1;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        q.extrapolate(&p, &prev, cast((t - 1.0) / t_next));

        // The new iterate overwrites `prev`, which is no longer needed.
        let mut sums = Sums::new();
        g_row(&q, &f_scaled, w, 0, &mut g_cur);
        for r in 0..h {
            let row = r * w..(r + 1) * w;
            let last = r + 1 == h;
            if !last {
                g_row(&q, &f_scaled, w, r + 1, &mut g_next);
            }
            let input = RowIn {
                qx: &q.px[row.clone()],
                qy: &q.py[row.clone()],
                px: &p.px[row.clone()],
                py: &p.py[row.clone()],
                g: &g_cur,
                g_below: if last { &g_cur } else { &g_next },
                f_scaled: &f_scaled[row.clone()],
            };
            let (nx, ny) = (&mut prev.px[row.clone()], &mut prev.py[row]);
            project_row(&input, tau, &mut sums, nx, ny);
            std::mem::swap(&mut g_cur, &mut g_next);
        }
        std::mem::swap(&mut p, &mut prev);

        let energy = params.weight * (Sums::total(&sums.tv) + 0.5 * Sums::total(&sums.div_sq));
        if energy < best_energy {
            best_energy = energy;
            std::mem::swap(&mut best, &mut q);
        }
        if trace {
            energy_trace.push(best_energy);
        }

        let dual = Sums::total(&sums.g_sq);
        t = if !params.accelerated || dual > last_dual { 1.0 } else { t_next };
        last_dual = dual;

        let change_sq = Sums::total(&sums.change_sq);
        let norm_sq = Sums::total(&sums.norm_sq);
        if change_sq <= params.tol * params.tol * norm_sq {
            converged = true;
            break;
        }
    }

    let div = best.divergence(h, w);
    let u = f.iter().zip(&div).map(|(fv, dv)| fv - params.weight * dv).collect();
    Ok(TvOutcome {
        image: Image2D::from_raw(h, w, u),
        iterations,
        converged,
        energy_trace,
    })
}

/// Replaces every pixel by the median of its (2·radius+1)² neighbourhood,
/// with replicate padding.
pub fn median_filter(img: &Image2D, radius: usize) -> Result<Image2D> {
    if radius == 0 {
        return Err(GmpError::InvalidParameter(
            "median radius must be at least 1".into(),
        ));
    }
    let (h, w) = img.dims();
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mut window = Vec::with_capacity(side * side);
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h as isize {
        for col in 0..w as isize {
            window.clear();
            for dr in -r..=r {
                let rr = (row + dr).clamp(0, h as isize - 1) as usize;
                for dc in -r..=r {
                    let cc = (col + dc).clamp(0, w as isize - 1) as usize;
                    window.push(img.get(rr, cc));
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out.push(*m);
        }
    }
    Ok(Image2D::from_raw(h, w, out))
}
