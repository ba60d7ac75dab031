//! Procedural desk-scale patch dataset.
//!
//! Each synthetic 3D point gets a distinctive texture; its patches are
//! renderings of that texture under small pose perturbations, optional
//! contrast jitter, and noise. Train and test splits use disjoint points.
//! The generator has its own bilinear canvas sampler so the fixtures stay
//! independent of the network code they exercise.

use super::{PairList, PatchPair, PatchStore, Role};
use crate::preprocess::{PATCH_PIXELS, PATCH_SIZE};
use crate::rng::Rng;

const CANVAS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_points: usize,
    pub patches_per_point: usize,
    pub seed: u64,
    /// Strength of the always-on pose jitter between same-point patches
    /// (1.0 ≈ a couple of degrees and a pixel of shift).
    pub base_warp: f64,
    /// 0 disables; 1 injects strong gain/offset/gamma differences between
    /// pair members.
    pub contrast_jitter: f64,
    /// 0 disables; 1 injects rotations up to ~20°, ±15% scale and ±4 px
    /// shifts into same-point patches.
    pub misalignment: f64,
    /// Additive uniform noise amplitude in gray levels.
    pub noise: f64,
    /// Fraction of points assigned to the train split.
    pub train_fraction: f64,
    /// Caps on emitted pairs; 0 means all available.
    pub max_train_pairs: usize,
    pub max_test_pairs: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_points: 50,
            patches_per_point: 4,
            seed: 1,
            base_warp: 1.0,
            contrast_jitter: 0.0,
            misalignment: 0.0,
            noise: 4.0,
            train_fraction: 0.6,
            max_train_pairs: 0,
            max_test_pairs: 0,
        }
    }
}

/// Texture canvas for one 3D point: coarse value noise for structure plus a
/// sinusoidal stripe pattern and fine value noise for detail.
fn render_canvas(rng: &mut Rng) -> Vec<f64> {
    let coarse_n = 6 + rng.below(4); // 6..9 grid
    let fine_n = 16 + rng.below(8);
    let coarse: Vec<f64> = (0..coarse_n * coarse_n)
        .map(|_| rng.uniform(0.0, 255.0))
        .collect();
    let fine: Vec<f64> = (0..fine_n * fine_n)
        .map(|_| rng.uniform(-30.0, 30.0))
        .collect();
    let stripe_angle = rng.uniform(0.0, std::f64::consts::PI);
    let stripe_freq = rng.uniform(0.05, 0.25);
    let stripe_phase = rng.uniform(0.0, std::f64::consts::TAU);
    let stripe_amp = rng.uniform(10.0, 45.0);
    let (sa, ca) = stripe_angle.sin_cos();

    let grid = |g: &[f64], n: usize, x: f64, y: f64| -> f64 {
        let gx = x / (CANVAS - 1) as f64 * (n - 1) as f64;
        let gy = y / (CANVAS - 1) as f64 * (n - 1) as f64;
        let x0 = (gx.floor() as usize).min(n - 2);
        let y0 = (gy.floor() as usize).min(n - 2);
        let wx = gx - x0 as f64;
        let wy = gy - y0 as f64;
        let v00 = g[y0 * n + x0];
        let v01 = g[y0 * n + x0 + 1];
        let v10 = g[(y0 + 1) * n + x0];
        let v11 = g[(y0 + 1) * n + x0 + 1];
        (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)
    };

    let mut canvas = vec![0.0f64; CANVAS * CANVAS];
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            let xf = x as f64;
            let yf = y as f64;
            let mut v = grid(&coarse, coarse_n, xf, yf);
            v += grid(&fine, fine_n, xf, yf);
            v += stripe_amp * (stripe_freq * (ca * xf + sa * yf) + stripe_phase).sin();
            canvas[y * CANVAS + x] = v;
        }
    }
    canvas
}

/// Bilinear read with clamp-to-edge.
fn canvas_at(canvas: &[f64], x: f64, y: f64) -> f64 {
    let m = (CANVAS - 1) as f64;
    let x = x.clamp(0.0, m);
    let y = y.clamp(0.0, m);
    let x0 = (x.floor() as usize).min(CANVAS - 2);
    let y0 = (y.floor() as usize).min(CANVAS - 2);
    let wx = x - x0 as f64;
    let wy = y - y0 as f64;
    let v00 = canvas[y0 * CANVAS + x0];
    let v01 = canvas[y0 * CANVAS + x0 + 1];
    let v10 = canvas[(y0 + 1) * CANVAS + x0];
    let v11 = canvas[(y0 + 1) * CANVAS + x0 + 1];
    (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)
}

fn render_patch(canvas: &[f64], rng: &mut Rng, cfg: &SyntheticConfig) -> Vec<u8> {
    let rot_amp = 0.03 * cfg.base_warp + 0.35 * cfg.misalignment;
    let scale_amp = 0.02 * cfg.base_warp + 0.15 * cfg.misalignment;
    let shift_amp = 0.8 * cfg.base_warp + 4.0 * cfg.misalignment;
    let rot = rng.uniform(-rot_amp, rot_amp);
    let scale = 1.0 + rng.uniform(-scale_amp, scale_amp);
    let dx = rng.uniform(-shift_amp, shift_amp);
    let dy = rng.uniform(-shift_amp, shift_amp);

    // Photometric jitter is a strictly monotone remap (gamma plus a range
    // compression) so no intensity information is clipped away — matching
    // how real contrast differences arise.
    let j = cfg.contrast_jitter;
    let gamma = (2.2f64).powf(rng.uniform(-1.0, 1.0) * j);
    let out_lo = rng.uniform(0.0, 70.0 * j);
    let out_hi = 255.0 - rng.uniform(0.0, 70.0 * j);

    let (sr, cr) = rot.sin_cos();
    let center = (CANVAS - 1) as f64 / 2.0;
    let half = (PATCH_SIZE - 1) as f64 / 2.0;
    let mut out = vec![0u8; PATCH_PIXELS];
    for py in 0..PATCH_SIZE {
        for px in 0..PATCH_SIZE {
            let u = (px as f64 - half) * scale;
            let v = (py as f64 - half) * scale;
            let sx = center + cr * u - sr * v + dx;
            let sy = center + sr * u + cr * v + dy;
            let mut val = canvas_at(canvas, sx, sy);
            if cfg.noise > 0.0 {
                val += rng.uniform(-cfg.noise, cfg.noise);
            }
            let norm = (val / 255.0).clamp(0.0, 1.0);
            let shaded = out_lo + (out_hi - out_lo) * norm.powf(gamma);
            out[py * PATCH_SIZE + px] = shaded.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// All same-point pairs plus an equal number of cross-point pairs over
/// `points`, deterministically shuffled and capped.
fn build_pairs(
    points: &[usize],
    patches_per_point: usize,
    rng: &mut Rng,
    cap: usize,
    role: Role,
) -> PairList {
    assert!(points.len() >= 2, "a split needs two points to form negatives");
    let patch_id = |point: usize, k: usize| (point * patches_per_point + k) as u32;
    let mut positives = Vec::new();
    for &pt in points {
        for a in 0..patches_per_point {
            for b in a + 1..patches_per_point {
                positives.push(PatchPair {
                    idx1: patch_id(pt, a),
                    idx2: patch_id(pt, b),
                    label: 1,
                });
            }
        }
    }
    let mut negatives = Vec::with_capacity(positives.len());
    let mut seen = std::collections::HashSet::new();
    while negatives.len() < positives.len() {
        let pa = points[rng.below(points.len())];
        let pb = points[rng.below(points.len())];
        if pa == pb {
            continue;
        }
        let i1 = patch_id(pa, rng.below(patches_per_point));
        let i2 = patch_id(pb, rng.below(patches_per_point));
        if seen.insert((i1.min(i2), i1.max(i2))) {
            negatives.push(PatchPair {
                idx1: i1,
                idx2: i2,
                label: 0,
            });
        }
    }
    let mut pairs: Vec<PatchPair> = positives.into_iter().chain(negatives).collect();
    rng.shuffle(&mut pairs);
    if cap > 0 && pairs.len() > cap {
        pairs.truncate(cap);
    }
    PairList { pairs, role }
}

/// Deterministic synthetic dataset: `(store, train pairs, test pairs)`.
pub fn make_synthetic_dataset(
    n_points: usize,
    patches_per_point: usize,
    seed: u64,
) -> (PatchStore, PairList, PairList) {
    make_synthetic_dataset_with(SyntheticConfig {
        n_points,
        patches_per_point,
        seed,
        ..SyntheticConfig::default()
    })
}

pub fn make_synthetic_dataset_with(cfg: SyntheticConfig) -> (PatchStore, PairList, PairList) {
    assert!(
        cfg.n_points >= 4,
        "need at least four 3D points so both splits can form negative pairs"
    );
    assert!(cfg.patches_per_point >= 2, "need at least two patches per point");
    let mut patches = Vec::with_capacity(cfg.n_points * cfg.patches_per_point * PATCH_PIXELS);
    let mut point_ids = Vec::with_capacity(cfg.n_points * cfg.patches_per_point);
    for point in 0..cfg.n_points {
        let mut rng = Rng::derive(cfg.seed, point as u64);
        let canvas = render_canvas(&mut rng);
        for _ in 0..cfg.patches_per_point {
            patches.extend_from_slice(&render_patch(&canvas, &mut rng, &cfg));
            point_ids.push(point as u32);
        }
    }
    let store = PatchStore::from_parts("synthetic".into(), patches, point_ids)
        .expect("generator emits consistent patches");

    let n_train_points = ((cfg.n_points as f64 * cfg.train_fraction).ceil() as usize)
        .clamp(2, cfg.n_points - 2);
    let train_points: Vec<usize> = (0..n_train_points).collect();
    let test_points: Vec<usize> = (n_train_points..cfg.n_points).collect();
    let mut pair_rng = Rng::derive(cfg.seed, 0xfeed);
    let train = build_pairs(
        &train_points,
        cfg.patches_per_point,
        &mut pair_rng,
        cfg.max_train_pairs,
        Role::Train,
    );
    let test = build_pairs(
        &test_points,
        cfg.patches_per_point,
        &mut pair_rng,
        cfg.max_test_pairs,
        Role::Test,
    );
    (store, train, test)
}
