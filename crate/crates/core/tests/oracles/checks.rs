//! The gradient-integrity and oracle-equivalence check bodies, shared
//! between the per-topic test targets and the acceptance suite. Each check
//! panics with a diagnostic on failure and returns a short summary line.

use super::*;
use patchdesc::arch::ArchSpec;
use patchdesc::eval::{fpr_at_recall, pr_curve, ScoredPairs};
use patchdesc::layers::*;
use patchdesc::loss::{contrastive_loss, contrastive_loss_backward, pair_distance};
use patchdesc::model::Model;
use patchdesc::optim::{adadelta_step_slice, AdadeltaConfig};
use patchdesc::rng::Rng;
use patchdesc::stn::{bilinear_sample_backward, bilinear_sample_forward, SamplingGrid};
use patchdesc::tensor::{col2im, im2col, matmul, Tensor};
use patchdesc::Mode;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const TOL_MODEL: f64 = 1e-3;
/// Denominator floor so near-zero gradient pairs compare absolutely.
pub const FLOOR: f64 = 1e-6;

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

fn proj(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- gradients

pub fn grad_conv() -> String {
    let mut rng = Rng::new(101);
    let x = rand_tensor(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
    let weights = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let bias = rand_tensor(&mut rng, &[4], -0.2, 0.2);
    let params = ConvParams {
        weights: weights.clone(),
        bias: bias.clone(),
        stride: 1,
        padding: 1,
    };
    let (y, cache) = conv_forward(&x, &params).unwrap();
    let w = proj(&mut rng, y.shape());
    let (dx, dw, db) = conv_backward(&w, &cache, &params).unwrap();

    let loss_x = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&conv_forward(&xv, &params).unwrap().0, &w)
    };
    let ex = fd_check_sampled(loss_x, x.data(), dx.data(), &sample_coords(x.len(), 24), STEP, FLOOR);
    assert!(ex <= TOL, "conv dx rel err {ex}");

    let loss_w = |vals: &[f64]| {
        let p = ConvParams {
            weights: Tensor::from_vec(weights.shape(), vals.to_vec()).unwrap(),
            bias: bias.clone(),
            stride: 1,
            padding: 1,
        };
        dot(&conv_forward(&x, &p).unwrap().0, &w)
    };
    let ew = fd_check_sampled(loss_w, weights.data(), dw.data(), &sample_coords(weights.len(), 24), STEP, FLOOR);
    assert!(ew <= TOL, "conv dw rel err {ew}");

    let loss_b = |vals: &[f64]| {
        let p = ConvParams {
            weights: weights.clone(),
            bias: Tensor::from_vec(bias.shape(), vals.to_vec()).unwrap(),
            stride: 1,
            padding: 1,
        };
        dot(&conv_forward(&x, &p).unwrap().0, &w)
    };
    let eb = fd_check_sampled(loss_b, bias.data(), db.data(), &sample_coords(bias.len(), 4), STEP, FLOOR);
    assert!(eb <= TOL, "conv db rel err {eb}");
    format!("conv dx/dw/db ≤ {:.1e}", ex.max(ew).max(eb))
}

pub fn grad_batchnorm() -> String {
    let mut rng = Rng::new(103);
    let x = rand_tensor(&mut rng, &[3, 2, 4, 4], -2.0, 2.0);
    let gamma = rand_tensor(&mut rng, &[2], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    let make = |g: &Tensor<f64>, b: &Tensor<f64>| {
        let mut p = BatchNormParams::new(2, 0.9, 1e-5);
        p.gamma = g.clone();
        p.beta = b.clone();
        p
    };
    let mut params = make(&gamma, &beta);
    let (y, cache) = batchnorm_forward(&x, &mut params, Mode::Train).unwrap();
    let w = proj(&mut rng, y.shape());
    let (dx, dgamma, dbeta) = batchnorm_backward(&w, &cache, &params).unwrap();

    let loss_x = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        let mut p = make(&gamma, &beta);
        dot(&batchnorm_forward(&xv, &mut p, Mode::Train).unwrap().0, &w)
    };
    let ex = fd_check_sampled(loss_x, x.data(), dx.data(), &sample_coords(x.len(), 24), STEP, FLOOR);
    assert!(ex <= TOL, "batchnorm dx rel err {ex}");

    let loss_g = |vals: &[f64]| {
        let mut p = make(&Tensor::from_vec(&[2], vals.to_vec()).unwrap(), &beta);
        dot(&batchnorm_forward(&x, &mut p, Mode::Train).unwrap().0, &w)
    };
    let eg = fd_check_sampled(loss_g, gamma.data(), dgamma.data(), &[0, 1], STEP, FLOOR);
    assert!(eg <= TOL, "batchnorm dgamma rel err {eg}");

    let loss_b = |vals: &[f64]| {
        let mut p = make(&gamma, &Tensor::from_vec(&[2], vals.to_vec()).unwrap());
        dot(&batchnorm_forward(&x, &mut p, Mode::Train).unwrap().0, &w)
    };
    let eb = fd_check_sampled(loss_b, beta.data(), dbeta.data(), &[0, 1], STEP, FLOOR);
    assert!(eb <= TOL, "batchnorm dbeta rel err {eb}");
    format!("batchnorm dx/dγ/dβ ≤ {:.1e}", ex.max(eg).max(eb))
}

pub fn grad_relu() -> String {
    let mut rng = Rng::new(105);
    // Exclude the kink: no |x| < 1e-3.
    let x = Tensor::<f64>::from_fn(&[40], |_| {
        let v = rng.uniform(-2.0, 2.0);
        if v.abs() < 1e-3 {
            v + 0.1
        } else {
            v
        }
    });
    let (y, cache) = relu_forward(&x);
    let w = proj(&mut rng, y.shape());
    let dx = relu_backward(&w, &cache);
    let loss = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&relu_forward(&xv).0, &w)
    };
    let e = fd_check_sampled(loss, x.data(), dx.data(), &sample_coords(x.len(), 40), STEP, FLOOR);
    assert!(e <= TOL, "relu dx rel err {e}");
    format!("relu dx ≤ {e:.1e}")
}

pub fn grad_maxpool() -> String {
    let mut rng = Rng::new(107);
    let x = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
    let (y, cache) = maxpool_forward(&x, 2, 2).unwrap();
    let w = proj(&mut rng, y.shape());
    let dx = maxpool_backward(&w, &cache).unwrap();
    let loss = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&maxpool_forward(&xv, 2, 2).unwrap().0, &w)
    };
    let e = fd_check_sampled(loss, x.data(), dx.data(), &sample_coords(x.len(), 36), STEP, FLOOR);
    assert!(e <= TOL, "maxpool dx rel err {e}");
    format!("maxpool dx ≤ {e:.1e}")
}

pub fn grad_fc() -> String {
    let mut rng = Rng::new(109);
    let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let weights = rand_tensor(&mut rng, &[5, 4], -0.7, 0.7);
    let bias = rand_tensor(&mut rng, &[4], -0.3, 0.3);
    let (y, cache) = fc_forward(&x, &weights, &bias).unwrap();
    let w = proj(&mut rng, y.shape());
    let (dx, dw, db) = fc_backward(&w, &cache, &weights).unwrap();

    let loss_x = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&fc_forward(&xv, &weights, &bias).unwrap().0, &w)
    };
    let ex = fd_check_sampled(loss_x, x.data(), dx.data(), &sample_coords(x.len(), 15), STEP, FLOOR);
    assert!(ex <= TOL, "fc dx rel err {ex}");

    let loss_w = |vals: &[f64]| {
        let wv = Tensor::from_vec(weights.shape(), vals.to_vec()).unwrap();
        dot(&fc_forward(&x, &wv, &bias).unwrap().0, &w)
    };
    let ew = fd_check_sampled(loss_w, weights.data(), dw.data(), &sample_coords(weights.len(), 20), STEP, FLOOR);
    assert!(ew <= TOL, "fc dw rel err {ew}");

    let loss_b = |vals: &[f64]| {
        let bv = Tensor::from_vec(bias.shape(), vals.to_vec()).unwrap();
        dot(&fc_forward(&x, &weights, &bv).unwrap().0, &w)
    };
    let eb = fd_check_sampled(loss_b, bias.data(), db.data(), &[0, 1, 2, 3], STEP, FLOOR);
    assert!(eb <= TOL, "fc db rel err {eb}");
    format!("fc dx/dw/db ≤ {:.1e}", ex.max(ew).max(eb))
}

pub fn grad_l2norm() -> String {
    let mut rng = Rng::new(111);
    let x = rand_tensor(&mut rng, &[3, 6], -1.0, 1.0);
    let (y, cache) = l2norm_forward(&x).unwrap();
    let w = proj(&mut rng, y.shape());
    let dx = l2norm_backward(&w, &cache).unwrap();
    let loss = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&l2norm_forward(&xv).unwrap().0, &w)
    };
    let e = fd_check_sampled(loss, x.data(), dx.data(), &sample_coords(x.len(), 18), STEP, FLOOR);
    assert!(e <= TOL, "l2norm dx rel err {e}");
    format!("l2norm dx ≤ {e:.1e}")
}

pub fn grad_gap() -> String {
    let mut rng = Rng::new(113);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let (y, cache) = global_avgpool_forward(&x).unwrap();
    let w = proj(&mut rng, y.shape());
    let dx = global_avgpool_backward(&w, &cache).unwrap();
    let loss = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&global_avgpool_forward(&xv).unwrap().0, &w)
    };
    let e = fd_check_sampled(loss, x.data(), dx.data(), &sample_coords(x.len(), 20), STEP, FLOOR);
    assert!(e <= TOL, "gap dx rel err {e}");
    format!("gap dx ≤ {e:.1e}")
}

pub fn grad_loss() -> String {
    let mut rng = Rng::new(115);
    let mut worst = 0.0f64;
    for label in [0u8, 1] {
        let f1: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f2: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let d = pair_distance(&f1, &f2).unwrap();
        // Keep the hinge kink |D − m| well clear of the FD step.
        let margin = d + if label == 0 { 0.5 } else { 1.0 };
        let (df1, df2) = contrastive_loss_backward(&f1, &f2, label, margin).unwrap();

        let loss1 = |vals: &[f64]| {
            let d = pair_distance(vals, &f2).unwrap();
            contrastive_loss(d, label, margin).unwrap()
        };
        let e1 = fd_check_sampled(loss1, &f1, &df1, &sample_coords(8, 8), STEP, FLOOR);
        assert!(e1 <= TOL, "loss df1 rel err {e1} (label {label})");

        let loss2 = |vals: &[f64]| {
            let d = pair_distance(&f1, vals).unwrap();
            contrastive_loss(d, label, margin).unwrap()
        };
        let e2 = fd_check_sampled(loss2, &f2, &df2, &sample_coords(8, 8), STEP, FLOOR);
        assert!(e2 <= TOL, "loss df2 rel err {e2} (label {label})");
        worst = worst.max(e1).max(e2);
    }
    format!("contrastive df1/df2 ≤ {worst:.1e}")
}

pub fn grad_sampler() -> String {
    let mut rng = Rng::new(117);
    let x = rand_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
    // Generic source coordinates, away from integer crossings.
    let px: Vec<f64> = (0..36).map(|_| rng.uniform(0.3, 4.6)).collect();
    let py: Vec<f64> = (0..36).map(|_| rng.uniform(0.3, 4.6)).collect();
    let grid = SamplingGrid::from_pixel_coords(6, 6, px.clone(), py.clone());
    let (y, cache) = bilinear_sample_forward(&x, &[grid.clone()]).unwrap();
    let w = proj(&mut rng, y.shape());
    let (dx, dgrids) = bilinear_sample_backward(&w, &cache).unwrap();

    let loss_x = |vals: &[f64]| {
        let xv = Tensor::from_vec(x.shape(), vals.to_vec()).unwrap();
        dot(&bilinear_sample_forward(&xv, &[grid.clone()]).unwrap().0, &w)
    };
    let ex = fd_check_sampled(loss_x, x.data(), dx.data(), &sample_coords(x.len(), 24), STEP, FLOOR);
    assert!(ex <= TOL, "sampler dx rel err {ex}");

    let loss_px = |vals: &[f64]| {
        let g = SamplingGrid::from_pixel_coords(6, 6, vals.to_vec(), py.clone());
        dot(&bilinear_sample_forward(&x, &[g]).unwrap().0, &w)
    };
    let epx = fd_check_sampled(loss_px, &px, &dgrids[0].dpx, &sample_coords(36, 18), STEP, FLOOR);
    assert!(epx <= TOL, "sampler dpx rel err {epx}");

    let loss_py = |vals: &[f64]| {
        let g = SamplingGrid::from_pixel_coords(6, 6, px.clone(), vals.to_vec());
        dot(&bilinear_sample_forward(&x, &[g]).unwrap().0, &w)
    };
    let epy = fd_check_sampled(loss_py, &py, &dgrids[0].dpy, &sample_coords(36, 18), STEP, FLOOR);
    assert!(epy <= TOL, "sampler dpy rel err {epy}");
    format!("sampler dx/dgrid ≤ {:.1e}", ex.max(epx).max(epy))
}

/// FD over every parameter slot of a model under the Siamese loss.
///
/// Kink avoidance: the margin sits beyond the reachable distance range
/// (the hinge at `D = m` is not differentiable), any zero-initialized
/// spatial-transformer head is nudged off zero so sampling does not sit
/// exactly on the bilinear interpolation kink at pixel centers, and
/// coordinates whose one-sided differences disagree (a ReLU/maxpool/
/// bilinear kink inside the step) are excluded with coverage asserted.
pub fn check_model_gradients(arch: &str, input: (usize, usize), seed: u64, tol: f64) -> String {
    let spec = ArchSpec::parse(arch).unwrap();
    let mut model = Model::<f64>::init_with_input(&spec, input, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xabcd);
    let metas = model.param_metas();
    model.visit_params_mut(|i, t| {
        if metas[i].name.contains("stn.loc.l6.fc") {
            for v in t.data_mut() {
                *v = rng.uniform(-0.04, 0.04);
            }
        }
    });
    let (h, w) = input;
    let p1 = rand_tensor(&mut rng, &[2, 1, h, w], -1.0, 1.0);
    let p2 = rand_tensor(&mut rng, &[2, 1, h, w], -1.0, 1.0);
    let labels = [1u8, 0];
    // Unit-norm descriptors keep D ≤ 2, so margin 3 leaves every negative
    // pair active while the hinge kink at D = m is unreachable.
    let margin = 3.0;
    let (_, grads) = model
        .siamese_forward_backward(&p1, &p2, &labels, margin)
        .unwrap();

    let mut bases: Vec<Tensor<f64>> = Vec::new();
    model.visit_params(|_, t| bases.push(t.clone()));
    let mut checked = 0usize;
    let mut excluded = 0usize;
    let mut worst = 0.0f64;
    for slot in 0..bases.len() {
        let loss = |vals: &[f64]| {
            let mut m = model.clone();
            m.visit_params_mut(|i, t| {
                if i == slot {
                    t.data_mut().copy_from_slice(vals);
                }
            });
            let (l, _) = m.siamese_forward_backward(&p1, &p2, &labels, margin).unwrap();
            l
        };
        let base = bases[slot].data();
        let coords = sample_coords(base.len(), 6);
        let out = fd_check_excluding_kinks(loss, base, grads.slot(slot).data(), &coords, 1e-7, FLOOR);
        checked += out.checked;
        excluded += out.excluded;
        assert!(
            out.worst <= tol,
            "slot {slot} rel err {} (arch {arch})",
            out.worst
        );
        worst = worst.max(out.worst);
    }
    assert!(
        checked >= 2 * excluded && checked > bases.len(),
        "kink exclusion removed too much: {checked} checked vs {excluded} excluded"
    );
    format!("{checked} coords ≤ {worst:.1e} ({excluded} kink-excluded)")
}

// -------------------------------------------------------------- equivalence

pub fn equiv_matmul() -> String {
    let mut rng = Rng::new(7);
    for (m, k, n) in [(7, 5, 3), (16, 16, 16), (1, 9, 4), (13, 2, 11)] {
        let a = rand_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let fast = matmul(&a, &b).unwrap();
        let slow = matmul_reference(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1.0), "{x} vs {y}");
        }
        let a32 = a.cast::<f32>();
        let b32 = b.cast::<f32>();
        let fast32 = matmul(&a32, &b32).unwrap();
        let slow32 = matmul_reference(&a32, &b32);
        let norm: f64 = slow32.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        let diff: f64 = fast32
            .data()
            .iter()
            .zip(slow32.data())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>();
        assert!(diff.sqrt() <= 1e-5 * norm.sqrt().max(1.0));
    }
    "matmul = triple loop (≤1e-6 f64, normwise 1e-5 f32)".into()
}

pub fn equiv_conv() -> String {
    let mut rng = Rng::new(11);
    for (b, c, n, hw, k, s, p) in [
        (2, 3, 4, 8, 3, 1, 1),
        (1, 1, 1, 5, 3, 1, 0),
        (2, 2, 3, 8, 3, 2, 1),
        (1, 3, 2, 7, 5, 1, 2),
    ] {
        let x = rand_tensor(&mut rng, &[b, c, hw, hw], -1.0, 1.0);
        let weights = rand_tensor(&mut rng, &[n, c, k, k], -0.5, 0.5);
        let bias = rand_tensor(&mut rng, &[n], -0.2, 0.2);
        let params = ConvParams {
            weights: weights.clone(),
            bias: bias.clone(),
            stride: s,
            padding: p,
        };
        let (fast, _) = conv_forward(&x, &params).unwrap();
        let slow = conv_reference(&x, &weights, &bias, s, p);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
    "conv = 6-loop reference (≤1e-5)".into()
}

pub fn equiv_adjoint() -> String {
    let mut rng = Rng::new(13);
    for (c, h, w, k, s, p) in [
        (1, 4, 4, 2, 1, 0),
        (2, 5, 7, 3, 1, 1),
        (3, 8, 8, 3, 2, 1),
        (2, 6, 5, 5, 2, 2),
    ] {
        let x = rand_tensor(&mut rng, &[c, h, w], -1.0, 1.0);
        let cols = im2col(&x, k, s, p).unwrap();
        let y = rand_tensor(&mut rng, cols.shape(), -1.0, 1.0);
        let lhs: f64 = cols.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let back = col2im(&y, (c, h, w), k, s, p).unwrap();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1.0),
            "adjoint identity violated at c={c} h={h} w={w} k={k} s={s} p={p}"
        );
    }
    "im2col/col2im adjoint identity (≤1e-6)".into()
}

pub fn equiv_maxpool() -> String {
    let mut rng = Rng::new(17);
    // 16×16 with k=3, s=3 exercises the floor rule: output must be 5×5.
    let x = rand_tensor(&mut rng, &[1, 2, 16, 16], -1.0, 1.0);
    let (fast, _) = maxpool_forward(&x, 3, 3).unwrap();
    assert_eq!(fast.shape(), &[1, 2, 5, 5]);
    assert_eq!(fast, maxpool_reference(&x, 3, 3));
    for (k, s) in [(2, 2), (3, 3), (2, 1)] {
        let x = rand_tensor(&mut rng, &[2, 3, 9, 11], -5.0, 5.0);
        let (fast, _) = maxpool_forward(&x, k, s).unwrap();
        assert_eq!(fast, maxpool_reference(&x, k, s));
    }
    "maxpool = window scan (exact, floor rule 16→5)".into()
}

pub fn equiv_adadelta() -> String {
    let cfg = AdadeltaConfig::default();
    let mut x = [0.0f64];
    let mut eg2 = [0.0f64];
    let mut edx2 = [0.0f64];
    let mut reference = AdadeltaReference::new(1, cfg.rho, cfg.eps, cfg.lr, cfg.weight_decay);
    let mut x_ref = [0.0f64];
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let g = [x[0] - 3.0];
        adadelta_step_slice(&mut x, &g, &mut eg2, &mut edx2, &cfg, true);
        let g_ref = [x_ref[0] - 3.0];
        reference.step(&mut x_ref, &g_ref);
        worst = worst.max((x[0] - x_ref[0]).abs());
        assert!((x[0] - x_ref[0]).abs() <= 1e-10, "{} vs {}", x[0], x_ref[0]);
    }
    let mut rng = Rng::new(23);
    let n = 16;
    let mut p: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let mut p_ref = p.clone();
    let mut eg2 = vec![0.0f64; n];
    let mut edx2 = vec![0.0f64; n];
    let mut reference = AdadeltaReference::new(n, cfg.rho, cfg.eps, cfg.lr, cfg.weight_decay);
    for _ in 0..25 {
        let g: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        adadelta_step_slice(&mut p, &g, &mut eg2, &mut edx2, &cfg, true);
        reference.step(&mut p_ref, &g);
        for (a, b) in p.iter().zip(&p_ref) {
            worst = worst.max((a - b).abs());
            assert!((a - b).abs() <= 1e-10);
        }
    }
    format!("adadelta = reference trajectory (≤{worst:.1e})")
}

pub fn equiv_ranking() -> String {
    let mut rng = Rng::new(29);
    let mut cases = 0;
    for trial in 0..5 {
        let n = 200 + trial * 190; // up to ~1000 pairs
        let distances: Vec<f64> = (0..n)
            .map(|_| (rng.uniform(0.0, 2.0) * 20.0).round() / 20.0)
            .collect();
        let labels: Vec<u8> = distances
            .iter()
            .map(|&d| u8::from(rng.next_f64() < 1.0 - d / 2.0))
            .collect();
        if labels.iter().all(|&l| l == 1) || labels.iter().all(|&l| l == 0) {
            continue;
        }
        let s = ScoredPairs::new(distances.clone(), labels.clone()).unwrap();
        for target in [0.5, 0.9, 0.95, 1.0] {
            let fast = fpr_at_recall(&s, target).unwrap();
            let slow = brute_force_fpr_at_recall(&distances, &labels, target);
            assert_eq!(fast, slow, "fpr@{target} trial {trial}");
            cases += 1;
        }
        let (_, auc) = pr_curve(&s).unwrap();
        assert_eq!(auc, brute_force_pr_auc(&distances, &labels), "pr auc trial {trial}");
        cases += 1;
    }
    format!("fpr@recall / pr-auc = brute-force sweep (exact, {cases} cases)")
}
