//! Synthetic OCT-like volumes with known fluid ground truth.
//!
//! Each column carries a vertical Gaussian intensity profile (the bright
//! band) whose centre follows a gentle sinusoid across the width. Fluid
//! pockets are ellipsoids spanning several consecutive slices that darken
//! the band. Unit-mean gamma speckle multiplies the clean render, and the
//! result is clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{GmpError, Result};
use crate::image::{Image2D, Volume};
use crate::roi::RoiRecord;
use crate::segment::SegmentationMask;

/// Inclusive range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Span<T> {
    pub fn new(min: T, max: T) -> Self {
        Self { min, max }
    }

    fn is_valid(&self) -> bool {
        self.min <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    /// (depth, height, width)
    pub dims: (usize, usize, usize),
    /// Band centre row; `None` centres the band vertically.
    pub band_center: Option<f64>,
    pub band_sigma: f64,
    /// Intensity far from the band.
    pub background: f64,
    /// Intensity at the band centre.
    pub band_peak: f64,
    /// Peak deviation of the band centre across the width, in rows.
    pub curvature_rows: f64,
    pub pockets: Span<usize>,
    /// Semi-axes of pocket ellipsoids: across slices, rows and columns.
    pub pocket_slices: Span<f64>,
    pub pocket_rows: Span<f64>,
    pub pocket_cols: Span<f64>,
    /// Fraction of the band intensity removed inside a pocket.
    pub pocket_darkness: Span<f64>,
    /// Largest distance of a pocket centre from the band centre, in units
    /// of `band_sigma`.
    pub pocket_offset_sigmas: f64,
    /// Gamma shape of the speckle (number of looks).
    pub speckle_looks: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: (128, 256, 256),
            band_center: None,
            band_sigma: 48.0,
            background: 0.45,
            band_peak: 0.95,
            curvature_rows: 6.0,
            pockets: Span::new(1, 3),
            pocket_slices: Span::new(8.0, 20.0),
            pocket_rows: Span::new(10.0, 18.0),
            pocket_cols: Span::new(20.0, 40.0),
            pocket_darkness: Span::new(0.75, 0.9),
            pocket_offset_sigmas: 0.3,
            speckle_looks: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pocket {
    /// (slice, row, column) of the centre.
    pub center: (f64, f64, f64),
    /// Semi-axes (slices, rows, columns).
    pub axes: (f64, f64, f64),
    pub darkness: f64,
}

impl Pocket {
    #[inline]
    pub fn contains(&self, z: f64, r: f64, c: f64) -> bool {
        let dz = (z - self.center.0) / self.axes.0;
        let dr = (r - self.center.1) / self.axes.1;
        let dc = (c - self.center.2) / self.axes.2;
        dz * dz + dr * dr + dc * dc <= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume,
    pub truth: SegmentationMask,
    pub label: bool,
    pub pockets: Vec<Pocket>,
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.dims;
        let bad = |msg: String| Err(GmpError::Phantom(msg));
        if d == 0 || h < 2 || w < 2 {
            return bad(format!("degenerate dims {:?}", self.dims));
        }
        if !(self.band_sigma > 0.0) {
            return bad("band_sigma must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.background) || !(0.0..=1.0).contains(&self.band_peak) {
            return bad("band intensities must lie in [0, 1]".into());
        }
        if !(self.speckle_looks > 0.0) {
            return bad("speckle_looks must be positive".into());
        }
        let spans_ok = self.pockets.is_valid()
            && self.pocket_slices.is_valid()
            && self.pocket_rows.is_valid()
            && self.pocket_cols.is_valid()
            && self.pocket_darkness.is_valid();
        if !spans_ok {
            return bad("every range needs min <= max".into());
        }
        if !(self.pocket_slices.min > 0.0 && self.pocket_rows.min > 0.0 && self.pocket_cols.min > 0.0) {
            return bad("pocket axes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.pocket_darkness.min) || self.pocket_darkness.max > 1.0 {
            return bad("pocket darkness must lie in [0, 1]".into());
        }
        if self.pocket_darkness.min <= 0.0 && self.pockets.max > 0 {
            return bad("pockets need a positive darkness".into());
        }
        if self.pockets.max > 0 {
            // The largest pocket must fit in the volume, and its row extent
            // must stay inside the band ± 2σ.
            if 2.0 * self.pocket_slices.max >= d as f64 || 2.0 * self.pocket_cols.max >= w as f64 {
                return bad("pockets cannot fit the volume".into());
            }
            let reach = self.pocket_offset_sigmas * self.band_sigma + self.pocket_rows.max;
            if reach > 2.0 * self.band_sigma {
                return bad("pockets would extend beyond band ± 2σ".into());
            }
            let centre = self.band_center();
            let lo = centre - self.curvature_rows - reach;
            let hi = centre + self.curvature_rows + reach;
            if lo < 0.0 || hi > (h - 1) as f64 {
                return bad("pockets would leave the volume vertically".into());
            }
        }
        Ok(())
    }

    pub fn band_center(&self) -> f64 {
        self.band_center.unwrap_or((self.dims.1 - 1) as f64 / 2.0)
    }

    /// Band centre row at column `c`.
    pub fn band_row(&self, c: f64) -> f64 {
        let w = self.dims.2 as f64;
        self.band_center() + self.curvature_rows * (2.0 * std::f64::consts::PI * c / w).sin()
    }

    fn band_intensity(&self, r: f64, c: f64) -> f64 {
        let z = (r - self.band_row(c)) / self.band_sigma;
        self.background + (self.band_peak - self.background) * (-0.5 * z * z).exp()
    }

    /// Pocket geometry drawn from the seed.
    pub fn plan_pockets(&self) -> Result<Vec<Pocket>> {
        self.validate()?;
        let (d, _, w) = self.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let count = rng.random_range(self.pockets.min..=self.pockets.max);
        let uniform = |rng: &mut ChaCha8Rng, s: Span<f64>| {
            if s.max > s.min {
                rng.random_range(s.min..=s.max)
            } else {
                s.min
            }
        };
        let mut pockets = Vec::with_capacity(count);
        for _ in 0..count {
            let az = uniform(&mut rng, self.pocket_slices);
            let ar = uniform(&mut rng, self.pocket_rows);
            let ac = uniform(&mut rng, self.pocket_cols);
            let z = rng.random_range(az..=(d as f64 - 1.0 - az));
            let c = rng.random_range(ac..=(w as f64 - 1.0 - ac));
            let max_off = self.pocket_offset_sigmas * self.band_sigma;
            let off = if max_off > 0.0 {
                rng.random_range(-max_off..=max_off)
            } else {
                0.0
            };
            let darkness = uniform(&mut rng, self.pocket_darkness);
            pockets.push(Pocket {
                center: (z, self.band_row(c) + off, c),
                axes: (az, ar, ac),
                darkness,
            });
        }
        Ok(pockets)
    }

    /// Noise-free render of the band with the pockets stamped in.
    pub fn render_clean(&self, pockets: &[Pocket]) -> Vec<Image2D> {
        let (d, h, w) = self.dims;
        let band: Vec<f64> = (0..h * w)
            .map(|i| self.band_intensity((i / w) as f64, (i % w) as f64))
            .collect();
        (0..d)
            .map(|z| {
                let mut data = band.clone();
                for p in pockets {
                    if (z as f64 - p.center.0).abs() > p.axes.0 {
                        continue;
                    }
                    let (r0, r1) = row_span(p, h);
                    let (c0, c1) = col_span(p, w);
                    for r in r0..r1 {
                        for c in c0..c1 {
                            if p.contains(z as f64, r as f64, c as f64) {
                                data[r * w + c] *= 1.0 - p.darkness;
                            }
                        }
                    }
                }
                Image2D::from_raw(h, w, data)
            })
            .collect()
    }

    /// Union of pocket interiors.
    pub fn truth_mask(&self, pockets: &[Pocket]) -> SegmentationMask {
        let (d, h, w) = self.dims;
        let slices = (0..d)
            .map(|z| {
                let mut bits = vec![0u8; h * w];
                for p in pockets {
                    let (r0, r1) = row_span(p, h);
                    let (c0, c1) = col_span(p, w);
                    for r in r0..r1 {
                        for c in c0..c1 {
                            if p.contains(z as f64, r as f64, c as f64) {
                                bits[r * w + c] = 1;
                            }
                        }
                    }
                }
                bits
            })
            .collect();
        SegmentationMask::new(h, w, slices, RoiRecord::full_frame(h, w))
            .expect("truth mask has consistent dimensions")
    }

    pub fn generate(&self) -> Result<Phantom> {
        let pockets = self.plan_pockets()?;
        let clean = self.render_clean(&pockets);
        let gamma = Gamma::new(self.speckle_looks, 1.0 / self.speckle_looks)
            .map_err(|e| GmpError::Phantom(e.to_string()))?;
        // Speckle uses its own stream so pocket layout and noise stay
        // independent of each other.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let slices: Vec<Image2D> = clean
            .into_iter()
            .map(|s| {
                let (h, w) = s.dims();
                let data = s
                    .into_data()
                    .into_iter()
                    .map(|v| (v * gamma.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                Image2D::from_raw(h, w, data)
            })
            .collect();
        let volume = Volume::new(slices, format!("phantom-{}", self.seed))?;
        Ok(Phantom {
            truth: self.truth_mask(&pockets),
            label: !pockets.is_empty(),
            volume,
            pockets,
        })
    }
}

fn row_span(p: &Pocket, h: usize) -> (usize, usize) {
    let lo = (p.center.1 - p.axes.1).floor().max(0.0) as usize;
    let hi = ((p.center.1 + p.axes.1).ceil() as usize + 1).min(h);
    (lo, hi)
}

fn col_span(p: &Pocket, w: usize) -> (usize, usize) {
    let lo = (p.center.2 - p.axes.2).floor().max(0.0) as usize;
    let hi = ((p.center.2 + p.axes.2).ceil() as usize + 1).min(w);
    (lo, hi)
}
