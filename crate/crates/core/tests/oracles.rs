mod common;

use common::*;
use gmp_core::denoise::{rof_energy, tv_denoise, Precision, TvParams};
use gmp_core::eval::{dice, roc_auc, summarize, VolumeResult};
use gmp_core::gmp::{build_ensemble, coalesce_ensemble, gmp_single_angle, GmpConfig, Psi};
use gmp_core::image::{Image2D, Volume};
use gmp_core::phantom::{PhantomConfig, Span};
use gmp_core::resample::resize_slice;
use gmp_core::roi::RoiRecord;
use gmp_core::segment::{connected_components, SegmentationMask};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn converged() -> TvParams {
    TvParams {
        weight: 0.1,
        max_iters: 3000,
        tol: 1e-12,
        precision: Precision::Double,
        ..TvParams::default()
    }
}

#[test]
fn tv_step_edge_reaches_the_primal_minimum() {
    let mut r = rng(7);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let img = Image2D::from_fn(16, 16, |_, c| {
        (if c < 8 { 0.25f64 } else { 0.75 } + noise.sample(&mut r)).clamp(0.0, 1.0)
    });
    let out = tv_denoise(&img, &converged()).unwrap();
    let reference = rof_minimizer(&img, 0.1);
    let e = rof_energy(&img, &out.image, 0.1).unwrap();
    let e_ref = rof_energy(&img, &reference, 0.1).unwrap();
    assert!((e - e_ref).abs() <= 1e-4, "energy {e} vs reference {e_ref}");
}

#[test]
fn resize_matches_bilinear_formula() {
    let mut r = rng(1);
    let img = random_image(&mut r, 8, 8);
    let out = resize_slice(&img, 16, 16).unwrap();
    let s = 7.0 / 15.0;
    let expected = Image2D::from_fn(16, 16, |row, col| bilinear(&img, col as f64 * s, row as f64 * s));
    assert!(out.max_abs_diff(&expected) <= 1e-6);
}

fn config(extent: f64, angles: &[f64]) -> GmpConfig {
    GmpConfig {
        extent,
        angles: angles.to_vec(),
        ..GmpConfig::default()
    }
}

#[test]
fn single_slice_gmp_matches_translated_stack() {
    let mut r = rng(2);
    let img = random_image(&mut r, 16, 16);
    for theta in [0.0, 22.5, 45.0, 90.0, 135.0] {
        let got = gmp_single_angle(&[&img], theta, &config(3.0, &[theta])).unwrap();
        let want = gmp_stack_min(&[&img], theta, 1.0, 3.0);
        assert!(got.max_abs_diff(&want) <= 1e-6, "theta {theta}");
    }
}

#[test]
fn three_slice_ensemble_matches_translated_stack() {
    let mut r = rng(3);
    let slices: Vec<Image2D> = (0..3).map(|_| random_image(&mut r, 16, 16)).collect();
    let volume = Volume::new(slices.clone(), "random").unwrap();
    let cfg = config(2.0, &[0.0, 90.0]);
    let ens = build_ensemble(&volume, 1, &cfg).unwrap();
    let refs: Vec<&Image2D> = slices.iter().collect();
    for (k, theta) in [0.0, 90.0].into_iter().enumerate() {
        let want = gmp_stack_min(&refs, theta, 1.0, 2.0);
        assert!(ens.per_angle[k].max_abs_diff(&want) <= 1e-6);
    }
}

#[test]
fn mean_coalescing_matches_per_pixel_mean() {
    let mut r = rng(4);
    let slices: Vec<Image2D> = (0..3).map(|_| random_image(&mut r, 12, 12)).collect();
    let volume = Volume::new(slices, "random").unwrap();
    let ens = build_ensemble(&volume, 0, &GmpConfig::default()).unwrap();
    assert_eq!(ens.per_angle.len(), 8);
    let got = coalesce_ensemble(&ens, Psi::Mean).unwrap();
    let want = Image2D::from_fn(12, 12, |row, col| {
        ens.per_angle.iter().map(|im| im.get(row, col)).sum::<f64>() / 8.0
    });
    assert!(got.max_abs_diff(&want) <= 1e-6);
}

/// Mean and standard deviation over the pixels where `keep` holds.
fn stats(img: &Image2D, keep: impl Fn(usize, usize) -> bool) -> (f64, f64) {
    let v: Vec<f64> = (0..img.height())
        .flat_map(|r| (0..img.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| keep(r, c))
        .map(|(r, c)| img.get(r, c))
        .collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

#[test]
fn default_gmp_raises_blob_contrast_to_noise() {
    let cfg = PhantomConfig {
        dims: (24, 96, 96),
        band_sigma: 24.0,
        curvature_rows: 0.0,
        pockets: Span::new(1, 1),
        pocket_slices: Span::new(8.0, 8.0),
        pocket_rows: Span::new(8.0, 8.0),
        pocket_cols: Span::new(16.0, 16.0),
        pocket_offset_sigmas: 0.0,
        seed: 5,
        ..PhantomConfig::default()
    };
    let p = cfg.generate().unwrap();
    let pocket = p.pockets[0];
    let z = pocket.center.0.round() as usize;
    let out = coalesce_ensemble(&build_ensemble(&p.volume, z, &GmpConfig::default()).unwrap(), Psi::Min).unwrap();
    let input = p.volume.slice(z);

    let blob = |r: usize, c: usize| pocket.contains(z as f64, r as f64, c as f64);
    // Band pixels beyond the translation reach of the blob.
    let (_, cr, cc) = pocket.center;
    let band = |r: usize, c: usize| {
        let near_centre = (r as f64 - cfg.band_center()).abs() < cfg.band_sigma / 2.0;
        let dr = (r as f64 - cr).abs() - pocket.axes.1;
        let dc = (c as f64 - cc).abs() - pocket.axes.2;
        near_centre && dr.max(dc) > 7.0
    };
    let cnr = |img: &Image2D| {
        let (mb, _) = stats(img, blob);
        let (mk, sk) = stats(img, band);
        (mk - mb) / sk
    };
    let (blob_in, _) = stats(input, blob);
    let (blob_out, _) = stats(&out, blob);
    assert!(blob_out < blob_in);
    let (before, after) = (cnr(input), cnr(&out));
    assert!(after > before, "contrast-to-noise {before} -> {after}");
}

#[test]
fn labeling_matches_flood_fill() {
    let mut r = rng(6);
    let source = Image2D::filled(16, 16, 0.5);
    for _ in 0..20 {
        let mask = random_mask_slice(&mut r, 256, 0.45);
        let comps = connected_components(&mask, &source, 0).unwrap();
        let got: std::collections::BTreeSet<_> =
            comps.iter().map(|c| c.pixels.iter().copied().collect()).collect();
        assert_eq!(got, flood_fill_components(&mask, 16, 16));
    }
}

fn random_mask(r: &mut impl Rng, d: usize, h: usize, w: usize, density: f64) -> SegmentationMask {
    let slices = (0..d).map(|_| random_mask_slice(r, h * w, density)).collect();
    SegmentationMask::new(h, w, slices, RoiRecord::full_frame(h, w)).unwrap()
}

#[test]
fn metrics_match_set_and_pair_oracles() {
    let mut r = rng(8);
    for _ in 0..20 {
        let a = random_mask(&mut r, 2, 6, 6, 0.3);
        let b = random_mask(&mut r, 2, 6, 6, 0.3);
        assert!((dice(&a, &b).unwrap() - dice_sets(&a, &b)).abs() <= 1e-12);
    }
    let scores: Vec<f64> = (0..12).map(|_| (r.random::<f64>() * 4.0).round() / 4.0).collect();
    let mut labels: Vec<bool> = (0..12).map(|_| r.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    assert!((roc_auc(&scores, &labels).unwrap() - auc_pairwise(&scores, &labels)).abs() <= 1e-12);
}

#[test]
fn report_totals_match_recomputation() {
    let mut r = rng(9);
    let per_volume: Vec<VolumeResult> = (0..20)
        .map(|i| VolumeResult {
            id: format!("v{i}"),
            group: format!("g{}", i % 2),
            dice: r.random(),
            label: i % 4 < 2,
            score: r.random(),
            predicted_present: r.random_bool(0.5),
        })
        .collect();
    let report = summarize(per_volume.clone()).unwrap();
    let mut group_dice = Vec::new();
    let mut group_auc = Vec::new();
    for g in ["g0", "g1"] {
        let members: Vec<&VolumeResult> = per_volume.iter().filter(|v| v.group == g).collect();
        let mean = members.iter().map(|v| v.dice).sum::<f64>() / members.len() as f64;
        let scores: Vec<f64> = members.iter().map(|v| v.score).collect();
        let labels: Vec<bool> = members.iter().map(|v| v.label).collect();
        group_dice.push(mean);
        group_auc.push(auc_pairwise(&scores, &labels));
    }
    for (row, (d, a)) in report.per_group.iter().zip(group_dice.iter().zip(&group_auc)) {
        assert_eq!(row.volumes, 10);
        assert!((row.mean_dice - d).abs() < 1e-12);
        assert!((row.auc.unwrap() - a).abs() < 1e-12);
    }
    assert!((report.overall.mean_dice - (group_dice[0] + group_dice[1]) / 2.0).abs() < 1e-12);
    assert!((report.overall.mean_auc.unwrap() - (group_auc[0] + group_auc[1]) / 2.0).abs() < 1e-12);
}
