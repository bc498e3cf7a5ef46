//! Acceptance suite: every release criterion as one test, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`).

use parastitch::compose::{
    blend, boundary_loss, boundary_masks, optimize_seam, overlap_indices, seam_logits_energy,
    seam_masks_for_logits, smoothness_loss, CompositionInputs, CompositionWeights,
};
use parastitch::energy::{
    homography_alignment, homography_alignment_grad, inter_grid_grad, inter_grid_term,
    intra_grid_grad, intra_grid_term, label_nonoverlap_edges, tps_alignment_with_grad, EdgeLabels,
    WarpLossWeights,
};
use parastitch::geometry::{
    apply_homography, make_control_grid, mesh_from_homography, solve_homography_4pt, solve_tps,
    ControlMesh, Homography,
};
use parastitch::optim::{adapt, optimize_homography, optimize_tps, OptimizerConfig, WarpResult};
use parastitch::raster::{load_image, psnr, save_png, ImageF, SoftMask};
use parastitch::synth::{gen_pair, GtKind};
use parastitch::warp::{field_from_homography, field_from_mesh, warp, Canvas};
use parastitch::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::time::Instant;

fn criterion<F: FnOnce() + UnwindSafe>(n: usize, desc: &str, f: F) {
    let result = catch_unwind(f);
    match &result {
        Ok(()) => println!("ACCEPTANCE {n} PASS: {desc}"),
        Err(_) => println!("ACCEPTANCE {n} FAIL: {desc}"),
    }
    if let Err(e) = result {
        resume_unwind(e);
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Vec2> {
    (0..n)
        .map(|_| Vec2::new(rng.random::<f64>() * span, rng.random::<f64>() * span))
        .collect()
}

#[test]
fn acceptance_01_tps_solver_exactness() {
    criterion(1, "TPS solver exactness on 200 random correspondence sets", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let sizes = [4usize, 16, 169];
        for case in 0..200 {
            let n = sizes[case % sizes.len()];
            let p = random_points(&mut rng, n, 300.0);
            let q: Vec<Vec2> = p
                .iter()
                .map(|v| {
                    *v + Vec2::new(
                        (rng.random::<f64>() - 0.5) * 40.0,
                        (rng.random::<f64>() - 0.5) * 40.0,
                    )
                })
                .collect();
            let params = solve_tps(&p, &q).unwrap();
            // Every anchor maps to its target.
            for (src, want) in p.iter().zip(&q) {
                let got = params.transform_point(*src);
                assert!(
                    (got - *want).norm() < 1e-6,
                    "case {case}: anchor residual {}",
                    (got - *want).norm()
                );
            }
            // Side conditions.
            let mut sw = Vec2::ZERO;
            let mut spw = [0.0f64; 4];
            for (w, a) in params.w.iter().zip(&params.anchors) {
                sw = sw + *w;
                spw[0] += a.x * w.x;
                spw[1] += a.x * w.y;
                spw[2] += a.y * w.x;
                spw[3] += a.y * w.y;
            }
            assert!(sw.norm() < 1e-6, "case {case}: sum w = {sw:?}");
            for v in spw {
                assert!(v.abs() < 1e-4, "case {case}: moment condition {v:e}");
            }
        }
        let elapsed = start.elapsed();
        assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    });
}

#[test]
fn acceptance_02_tps_affine_reproduction() {
    criterion(2, "TPS reproduces 100 random affine maps with zero bending", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1002);
        for case in 0..100 {
            let n = 5 + (case % 26);
            let p = random_points(&mut rng, n, 200.0);
            let a = [
                [1.0 + (rng.random::<f64>() - 0.5), (rng.random::<f64>() - 0.5) * 0.8],
                [(rng.random::<f64>() - 0.5) * 0.8, 1.0 + (rng.random::<f64>() - 0.5)],
            ];
            let b = Vec2::new(
                (rng.random::<f64>() - 0.5) * 50.0,
                (rng.random::<f64>() - 0.5) * 50.0,
            );
            let q: Vec<Vec2> = p
                .iter()
                .map(|v| {
                    Vec2::new(
                        a[0][0] * v.x + a[0][1] * v.y + b.x,
                        a[1][0] * v.x + a[1][1] * v.y + b.y,
                    )
                })
                .collect();
            let params = solve_tps(&p, &q).unwrap();
            let w_inf = params
                .w
                .iter()
                .map(|w| w.x.abs().max(w.y.abs()))
                .fold(0.0f64, f64::max);
            assert!(w_inf < 1e-6, "case {case}: |w|inf = {w_inf:e}");
            for r in 0..2 {
                for c in 0..2 {
                    assert!(
                        (params.m[r][c] - a[r][c]).abs() < 1e-6,
                        "case {case}: m[{r}][{c}]"
                    );
                }
            }
            assert!((params.c.x - b.x).abs() < 1e-6 && (params.c.y - b.y).abs() < 1e-6);
        }
    });
}

#[test]
fn acceptance_03_dlt_round_trip() {
    criterion(3, "4-pt DLT round trip on 200 random convex quads", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1003);
        let src = [
            Vec2::new(0.0, 0.0),
            Vec2::new(100.0, 0.0),
            Vec2::new(100.0, 100.0),
            Vec2::new(0.0, 100.0),
        ];
        let mut done = 0;
        while done < 200 {
            let dst = src.map(|p| {
                p + Vec2::new(
                    (rng.random::<f64>() - 0.5) * 40.0,
                    (rng.random::<f64>() - 0.5) * 40.0,
                )
            });
            // Convexity filter keeps the configuration non-degenerate.
            let convex = (0..4).all(|i| {
                let e1 = dst[(i + 1) % 4] - dst[i];
                let e2 = dst[(i + 2) % 4] - dst[(i + 1) % 4];
                e1.cross(e2) > 1.0
            });
            if !convex {
                continue;
            }
            let h = solve_homography_4pt(&src, &dst).unwrap();
            for (s, d) in src.iter().zip(&dst) {
                let q = apply_homography(&h, *s).unwrap();
                assert!((q - *d).norm() < 1e-6, "corner residual {}", (q - *d).norm());
            }
            done += 1;
        }
    });
}

/// Smooth test image for gradient checks.
fn smooth_image(w: usize, h: usize, phase: f64) -> ImageF {
    ImageF::from_fn(w, h, 1, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let v = 0.4
            + 0.18 * ((xf / 3.1 + phase).sin() * (yf / 4.3).cos())
            + 0.14 * (((xf + yf) / 5.7 - phase).sin());
        [v.clamp(0.02, 0.9), 0.0, 0.0]
    })
}

fn vec_rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = fd.iter().zip(an).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(fd).max(1e-12)
}

#[test]
fn acceptance_04_gradient_correctness() {
    criterion(4, "analytic gradients match central differences", || {
        // Fixture: 32x32 smooth pair with a brightness offset (stable L1
        // signs), 3x3 grid expanded past the canvas.
        let reference = smooth_image(32, 32, 0.0);
        let target = ImageF::from_fn(32, 32, 1, |x, y| {
            [(reference.get(x, y, 0) + 0.1).min(1.0), 0.0, 0.0]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1004);
        let mut mesh = make_control_grid(3, 3, 32.0, 32.0).unwrap();
        let warped: Vec<Vec2> = mesh
            .source()
            .iter()
            .map(|p| {
                let c = Vec2::new(16.0, 16.0);
                let e = c + (*p - c) * 1.35;
                e + Vec2::new(
                    (rng.random::<f64>() - 0.5) * 1.5,
                    (rng.random::<f64>() - 0.5) * 1.5,
                )
            })
            .collect();
        mesh.set_warped(warped).unwrap();
        let canvas = Canvas::for_reference(32, 32);

        // Intra (relative error < 1e-3, step 1e-3 px). Use a stretched mesh so
        // the term is active.
        let mut stretched = mesh.clone();
        let wv: Vec<Vec2> = stretched
            .source()
            .iter()
            .map(|p| Vec2::new(p.x * 2.4, p.y * 2.3))
            .collect();
        stretched.set_warped(wv).unwrap();
        let (_, intra_grad) = intra_grid_grad(&stretched);
        let step = 1e-3;
        for i in 0..9 {
            for axis in 0..2 {
                let mut plus = stretched.clone();
                let mut minus = stretched.clone();
                if axis == 0 {
                    plus.warped_mut()[i].x += step;
                    minus.warped_mut()[i].x -= step;
                } else {
                    plus.warped_mut()[i].y += step;
                    minus.warped_mut()[i].y -= step;
                }
                let fd = (intra_grid_term(&plus) - intra_grid_term(&minus)) / (2.0 * step);
                let an = if axis == 0 { intra_grad[i].x } else { intra_grad[i].y };
                let denom = fd.abs().max(an.abs());
                if denom > 1e-9 {
                    assert!((fd - an).abs() <= 1e-3 * denom, "intra cp {i} axis {axis}");
                }
            }
        }

        // Inter (relative error < 1e-3).
        let labels = EdgeLabels::all_ones(3, 3);
        let (_, inter_grad) = inter_grid_grad(&mesh, &labels);
        for i in 0..9 {
            for axis in 0..2 {
                let mut plus = mesh.clone();
                let mut minus = mesh.clone();
                if axis == 0 {
                    plus.warped_mut()[i].x += step;
                    minus.warped_mut()[i].x -= step;
                } else {
                    plus.warped_mut()[i].y += step;
                    minus.warped_mut()[i].y -= step;
                }
                let fd = (inter_grid_term(&plus, &labels) - inter_grid_term(&minus, &labels))
                    / (2.0 * step);
                let an = if axis == 0 { inter_grad[i].x } else { inter_grad[i].y };
                let denom = fd.abs().max(an.abs());
                if denom > 1e-9 {
                    assert!((fd - an).abs() <= 1e-3 * denom, "inter cp {i} axis {axis}");
                }
            }
        }

        // Homography alignment wrt matrix entries (relative error < 1e-3).
        let h = Homography::from_rows([
            [1.02, 0.013, 0.8],
            [-0.008, 0.985, -0.6],
            [2e-4, -1.2e-4, 1.0],
        ])
        .unwrap();
        let (_, hbar) = homography_alignment_grad(&reference, &target, &h).unwrap();
        let mut fd_vec = Vec::new();
        let mut an_vec = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                if r == 2 && c == 2 {
                    continue;
                }
                let hstep = 1e-6;
                let mut mp = *h.rows();
                let mut mm = *h.rows();
                mp[r][c] += hstep;
                mm[r][c] -= hstep;
                let fp = homography_alignment(&reference, &target, &Homography::from_rows(mp).unwrap())
                    .unwrap();
                let fm = homography_alignment(&reference, &target, &Homography::from_rows(mm).unwrap())
                    .unwrap();
                fd_vec.push((fp - fm) / (2.0 * hstep));
                an_vec.push(hbar[r][c]);
            }
        }
        let rel = vec_rel_err(&fd_vec, &an_vec);
        assert!(rel < 1e-3, "homography alignment gradient rel err {rel:e}");

        // End-to-end TPS alignment chain (relative error < 1e-2, step 1e-2 px).
        let fused = tps_alignment_with_grad(&reference, &target, &mesh, &canvas).unwrap();
        let tstep = 1e-2;
        let mut fd_vec = Vec::new();
        let mut an_vec = Vec::new();
        for i in 0..9 {
            for axis in 0..2 {
                let mut plus = mesh.clone();
                let mut minus = mesh.clone();
                if axis == 0 {
                    plus.warped_mut()[i].x += tstep;
                    minus.warped_mut()[i].x -= tstep;
                } else {
                    plus.warped_mut()[i].y += tstep;
                    minus.warped_mut()[i].y -= tstep;
                }
                let fp = tps_alignment_with_grad(&reference, &target, &plus, &canvas)
                    .unwrap()
                    .loss;
                let fm = tps_alignment_with_grad(&reference, &target, &minus, &canvas)
                    .unwrap()
                    .loss;
                fd_vec.push((fp - fm) / (2.0 * tstep));
                an_vec.push(if axis == 0 { fused.grad[i].x } else { fused.grad[i].y });
            }
        }
        let rel = vec_rel_err(&fd_vec, &an_vec);
        assert!(rel < 1e-2, "tps alignment chain gradient rel err {rel:e}");

        // Boundary and smoothness terms wrt seam logits (relative error
        // < 1e-3), finite differences taken through the modular value path.
        let inputs = seam_fixture(1004, 32, 24, 13..17);
        let idx = overlap_indices(&inputs);
        let logits: Vec<f64> = idx
            .iter()
            .map(|_| (rng.random::<f64>() - 0.5) * 2.0)
            .collect();
        let (m_br, m_bt) = boundary_masks(&inputs.m_r, &inputs.m_t).unwrap();
        let d_map = ImageF::from_fn(32, 24, 1, |x, y| {
            let d = inputs.i_wr.get(x, y, 0) - inputs.i_wt.get(x, y, 0);
            [d * d, 0.0, 0.0]
        });
        for (wname, weights) in [
            ("boundary", CompositionWeights { alpha: 1.0, beta: 0.0 }),
            ("smoothness", CompositionWeights { alpha: 0.0, beta: 1.0 }),
        ] {
            let (total, grad) = seam_logits_energy(&inputs, &weights, &logits).unwrap();
            // Dual-route value check against the modular composition.
            let (m_cr, m_ct) = seam_masks_for_logits(&inputs, &logits).unwrap();
            let s = blend(&inputs.i_wr, &inputs.i_wt, &m_cr, &m_ct);
            let modular = weights.alpha
                * boundary_loss(&s, &inputs.i_wr, &inputs.i_wt, &m_br, &m_bt)
                + weights.beta * smoothness_loss(&m_cr, &d_map, &s);
            assert!(
                (total - modular).abs() < 1e-12,
                "{wname}: fused {total} vs modular {modular}"
            );
            let eval = |lg: &[f64]| -> f64 {
                let (m_cr, m_ct) = seam_masks_for_logits(&inputs, lg).unwrap();
                let s = blend(&inputs.i_wr, &inputs.i_wt, &m_cr, &m_ct);
                weights.alpha * boundary_loss(&s, &inputs.i_wr, &inputs.i_wt, &m_br, &m_bt)
                    + weights.beta * smoothness_loss(&m_cr, &d_map, &s)
            };
            let lstep = 1e-5;
            let mut fd_vec = Vec::new();
            let mut an_vec = Vec::new();
            for k in (0..logits.len()).step_by(5) {
                let mut plus = logits.clone();
                let mut minus = logits.clone();
                plus[k] += lstep;
                minus[k] -= lstep;
                fd_vec.push((eval(&plus) - eval(&minus)) / (2.0 * lstep));
                an_vec.push(grad[k]);
            }
            let rel = vec_rel_err(&fd_vec, &an_vec);
            assert!(rel < 1e-3, "{wname} gradient rel err {rel:e}");
        }
    });
}

#[test]
fn acceptance_05_homography_recovery() {
    criterion(5, "mean corner error < 1 px over 50 synthetic 256x256 pairs", || {
        let cfg = OptimizerConfig::warp_defaults();
        let mut total = 0.0;
        for seed in 0..50u64 {
            let t0 = Instant::now();
            let pair = gen_pair(2000 + seed, GtKind::Homography, 256, 256, 0.10, 0.6).unwrap();
            assert!(pair.overlap_fraction >= 0.6);
            let stage = optimize_homography(&pair.reference, &pair.target, &cfg).unwrap();
            let corners = [
                Vec2::new(0.0, 0.0),
                Vec2::new(256.0, 0.0),
                Vec2::new(256.0, 256.0),
                Vec2::new(0.0, 256.0),
            ];
            let mut err = 0.0;
            for (k, c) in corners.iter().enumerate() {
                let want = pair.gt.map_target_point(*c).unwrap() - *c;
                err += (stage.corner_motions[k] - want).norm();
            }
            total += err / 4.0;
            let dt = t0.elapsed().as_secs_f64();
            assert!(dt < 30.0, "pair {seed} took {dt:.1}s");
        }
        let mean = total / 50.0;
        assert!(mean < 1.0, "mean corner error {mean:.3} px");
        println!("  mean corner error: {mean:.3} px");
    });
}

fn overlap_psnr_for_h(pair: &parastitch::synth::SyntheticPair, h: &Homography) -> f64 {
    let size = pair.reference.width();
    let canvas = Canvas::for_reference(size, pair.reference.height());
    let f = field_from_homography(h, &canvas, size, pair.target.height()).unwrap();
    let (w, m) = warp(&pair.target, &f);
    psnr(&pair.reference, &w, &m).unwrap()
}

fn overlap_psnr_for_mesh(pair: &parastitch::synth::SyntheticPair, mesh: &ControlMesh) -> f64 {
    let canvas = Canvas::for_reference(pair.reference.width(), pair.reference.height());
    let f = field_from_mesh(mesh, &canvas).unwrap();
    let (w, m) = warp(&pair.target, &f);
    psnr(&pair.reference, &w, &m).unwrap()
}

#[test]
fn acceptance_06_parallax_benefit_of_tps() {
    criterion(6, "TPS beats homography by >= 2 dB on 20 two-plane pairs", || {
        let cfg = OptimizerConfig::warp_defaults();
        let weights = WarpLossWeights::default();
        let mut gap = 0.0;
        for seed in 0..20u64 {
            let pair = gen_pair(3000 + seed, GtKind::TwoPlane, 256, 256, 12.0, 0.65).unwrap();
            let stage = optimize_homography(&pair.reference, &pair.target, &cfg).unwrap();
            let psnr_h = overlap_psnr_for_h(&pair, &stage.homography);
            let tps = optimize_tps(
                &pair.reference,
                &pair.target,
                &stage.homography,
                &weights,
                &cfg,
            )
            .unwrap();
            let psnr_t = overlap_psnr_for_mesh(&pair, &tps.mesh);
            gap += psnr_t - psnr_h;
        }
        let mean = gap / 20.0;
        assert!(mean >= 2.0, "mean PSNR gain {mean:.2} dB");
        println!("  mean TPS-over-homography gain: {mean:.2} dB");
    });
}

/// Folds restricted to cells whose warped corners all lie outside the overlap.
fn nonoverlap_fold_count(mesh: &ControlMesh, overlap: &SoftMask) -> usize {
    let mut folds = 0;
    for r in 0..mesh.rows() - 1 {
        for c in 0..mesh.cols() - 1 {
            let vs = [
                mesh.warped_at(r, c),
                mesh.warped_at(r, c + 1),
                mesh.warped_at(r + 1, c + 1),
                mesh.warped_at(r + 1, c),
            ];
            let outside = vs.iter().all(|p| {
                let x = p.x.clamp(0.0, (overlap.width() - 1) as f64);
                let y = p.y.clamp(0.0, (overlap.height() - 1) as f64);
                overlap.sample(x, y) < 0.5
            });
            if !outside {
                continue;
            }
            for i in 0..4 {
                let (a, b, cc) = (vs[i], vs[(i + 1) % 4], vs[(i + 2) % 4]);
                if (b - a).cross(cc - b) <= 0.0 {
                    folds += 1;
                    break;
                }
            }
        }
    }
    folds
}

#[test]
fn acceptance_07_distortion_ablation() {
    criterion(
        7,
        "omega=10 keeps alignment within 0.5 dB and halves non-overlap distortion",
        || {
            // Parallax pairs are the non-saturated regime where dB means are
            // stable; exactly-recoverable kinds sit above 50 dB where dB noise
            // swamps the comparison.
            let cfg = OptimizerConfig::warp_defaults();
            let size = 192;
            let mut mean0 = 0.0;
            let mut mean10 = 0.0;
            let mut inter0 = 0.0;
            let mut inter10 = 0.0;
            let mut folds0 = 0usize;
            let mut folds10 = 0usize;
            let n = 8u64;
            for seed in 0..n {
                let disparity = 10.0 + 4.0 * (seed % 3) as f64;
                let pair =
                    gen_pair(4000 + seed, GtKind::TwoPlane, size, size, disparity, 0.6).unwrap();
                let stage = optimize_homography(&pair.reference, &pair.target, &cfg).unwrap();
                let mut run = |omega: f64| -> (f64, usize, f64) {
                    let weights = WarpLossWeights { omega, lambda: 3.0 };
                    let tps = optimize_tps(
                        &pair.reference,
                        &pair.target,
                        &stage.homography,
                        &weights,
                        &cfg,
                    )
                    .unwrap();
                    let p = overlap_psnr_for_mesh(&pair, &tps.mesh);
                    let canvas = Canvas::for_reference(size, size);
                    let f = field_from_mesh(&tps.mesh, &canvas).unwrap();
                    let overlap = SoftMask::from_fn(size, size, |x, y| {
                        if f.get(x, y).1 {
                            1.0
                        } else {
                            0.0
                        }
                    });
                    let labels = label_nonoverlap_edges(&tps.mesh, &overlap, &canvas);
                    let ie = inter_grid_term(&tps.mesh, &labels);
                    (p, nonoverlap_fold_count(&tps.mesh, &overlap), ie)
                };
                let (p0, f0, i0) = run(0.0);
                let (p10, f10, i10) = run(10.0);
                mean0 += p0 / n as f64;
                mean10 += p10 / n as f64;
                folds0 += f0;
                folds10 += f10;
                inter0 += i0;
                inter10 += i10;
            }
            let dpsnr = (mean10 - mean0).abs();
            assert!(dpsnr < 0.5, "mean PSNR changed by {dpsnr:.3} dB");
            // Fold-over count halves (trivially satisfied when the baseline
            // optimizer already produces none).
            assert!(
                2 * folds10 <= folds0 || (folds0 == 0 && folds10 == 0),
                "folds {folds0} -> {folds10}"
            );
            // Inter-grid energy of non-overlapping regions halves. Guard the
            // ratio with a floor so an already-zero baseline still passes.
            if inter0 > 1e-9 {
                assert!(
                    inter10 <= 0.5 * inter0,
                    "inter energy {inter0:.6} -> {inter10:.6}"
                );
            } else {
                assert!(inter10 <= inter0 + 1e-12);
            }
            println!(
                "  dPSNR {dpsnr:.3} dB, folds {folds0}->{folds10}, inter {inter0:.6}->{inter10:.6}"
            );
        },
    );
}

/// Offset footprints with a disagreement strip; half the cases push the strip
/// onto the boundary bands.
fn seam_fixture(seed: u64, w: usize, h: usize, strip: std::ops::Range<usize>) -> CompositionInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() * 0.5 + 0.2).collect();
    let base = ImageF::new(w, h, 1, base).unwrap();
    let m_r = SoftMask::from_fn(w, h, |x, _| if x < w * 3 / 4 { 1.0 } else { 0.0 });
    let m_t = SoftMask::from_fn(w, h, |x, _| if x >= w / 4 { 1.0 } else { 0.0 });
    let i_wr = ImageF::from_fn(w, h, 1, |x, y| {
        [
            if m_r.get(x, y) > 0.0 { base.get(x, y, 0) } else { 0.0 },
            0.0,
            0.0,
        ]
    });
    let i_wt = ImageF::from_fn(w, h, 1, |x, y| {
        let mut v = base.get(x, y, 0);
        if strip.contains(&x) {
            v = (v + 0.4).min(1.0);
        }
        [
            if m_t.get(x, y) > 0.0 { v } else { 0.0 },
            0.0,
            0.0,
        ]
    });
    CompositionInputs::new(i_wr, i_wt, m_r, m_t).unwrap()
}

#[test]
fn acceptance_08_seam_optimization() {
    criterion(8, "seam optimization halves the 0.5-blend energy on 20 cases", || {
        let weights = CompositionWeights::default();
        let cfg = OptimizerConfig::seam_defaults();
        for case in 0..20u64 {
            let w = 32 + (case as usize % 3) * 8;
            let h = 24 + (case as usize % 2) * 8;
            // Alternate interior strips with strips crossing the boundary
            // bands (near x = w/4 where the target's edge lives).
            let strip = if case % 2 == 0 {
                let mid = w / 2 + (case as usize % 5);
                mid..mid + 3 + (case as usize % 3)
            } else {
                let lo = w / 4 - 1;
                lo..lo + 4
            };
            let inputs = seam_fixture(5000 + case, w, h, strip);
            let seam = optimize_seam(&inputs, &weights, &cfg).unwrap();
            let init = seam.history.first().unwrap().total;
            let best = seam
                .history
                .iter()
                .map(|r| r.total)
                .fold(f64::INFINITY, f64::min);
            assert!(
                best <= 0.5 * init,
                "case {case}: energy {init:.5} -> {best:.5}"
            );
            // Partition of unity at every pixel (iterates are covered by the
            // same mask construction plus a debug assertion in the loop).
            let union = inputs.m_r.max_of(&inputs.m_t).unwrap();
            for i in 0..union.data().len() {
                assert!(
                    (seam.m_cr.data()[i] + seam.m_ct.data()[i] - union.data()[i]).abs() <= 1e-6,
                    "case {case}: partition violated at {i}"
                );
            }
            // Boundary pixels take their prescribed source where exactly one
            // boundary mask is set (shared intersections stay ambiguous by
            // design).
            let (m_br, m_bt) = boundary_masks(&inputs.m_r, &inputs.m_t).unwrap();
            let s = blend(&inputs.i_wr, &inputs.i_wt, &seam.m_cr, &seam.m_ct);
            for y in 0..h {
                for x in 0..w {
                    let br = m_br.get(x, y) > 0.5;
                    let bt = m_bt.get(x, y) > 0.5;
                    if br && !bt {
                        let d = (s.get(x, y, 0) - inputs.i_wr.get(x, y, 0)).abs();
                        assert!(d < 1e-3, "case {case}: |S - I_wr| = {d:.2e} at ({x},{y})");
                    }
                    if bt && !br {
                        let d = (s.get(x, y, 0) - inputs.i_wt.get(x, y, 0)).abs();
                        assert!(d < 1e-3, "case {case}: |S - I_wt| = {d:.2e} at ({x},{y})");
                    }
                }
            }
        }
    });
}

#[test]
fn acceptance_09_adaption_contract() {
    criterion(9, "adaption respects T=50 and never ends above iteration 1", || {
        let wcfg = OptimizerConfig {
            grid_rows: 7,
            grid_cols: 7,
            ..OptimizerConfig::warp_defaults()
        };
        let acfg = OptimizerConfig {
            grid_rows: 7,
            grid_cols: 7,
            ..OptimizerConfig::adapt_defaults()
        };
        assert_eq!(acfg.max_iters, 50);
        assert_eq!(acfg.tol, 1e-4);
        let kinds = [GtKind::Homography, GtKind::Tps, GtKind::TwoPlane];
        let mags: [(f64, f64, f64); 3] =
            [(0.05, 0.033, 6.7), (0.10, 0.067, 13.3), (0.15, 0.10, 20.0)];
        let mut checked = 0;
        for (si, (mh, mt, md)) in mags.iter().enumerate() {
            for (ki, kind) in kinds.iter().enumerate() {
                let mag = match kind {
                    GtKind::Homography => *mh,
                    GtKind::Tps => *mt,
                    GtKind::TwoPlane => *md,
                };
                let seed = 6000 + (si * 3 + ki) as u64;
                let pair = gen_pair(seed, *kind, 128, 128, mag, 0.6).unwrap();
                let stage = optimize_homography(&pair.reference, &pair.target, &wcfg).unwrap();
                let grid = make_control_grid(7, 7, 128.0, 128.0).unwrap();
                let warm = WarpResult::from_mesh(
                    mesh_from_homography(&grid, &stage.homography).unwrap(),
                );
                let res = adapt(&pair.reference, &pair.target, &warm, &acfg).unwrap();
                assert!(res.iterations_used <= 50, "{} iterations", res.iterations_used);
                assert!(res.loss_history.len() >= 2);
                let at_one = res.loss_history[1].align;
                let canvas = Canvas::for_reference(128, 128);
                let final_eval = parastitch::energy::tps_alignment_value(
                    &pair.reference,
                    &pair.target,
                    &res.mesh,
                    &canvas,
                )
                .unwrap();
                assert!(
                    final_eval <= at_one + 1e-12,
                    "kind {kind:?} stratum {si}: final {final_eval} > iter1 {at_one}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 9);
    });
}

#[test]
fn acceptance_10_bench_determinism() {
    criterion(10, "benchmark CSV is byte-identical across threaded runs", || {
        let bin = env!("CARGO_BIN_EXE_parastitch");
        let dir = std::env::temp_dir().join(format!("parastitch_acc10_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.join(format!("bench_{run}.csv"));
            let status = std::process::Command::new(bin)
                .args(["bench", "--pairs", "1", "--size", "128", "--seed", "42", "-o"])
                .arg(&out)
                .env("RAYON_NUM_THREADS", "4")
                .status()
                .unwrap();
            assert!(status.success());
            outputs.push(std::fs::read(&out).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "CSV outputs differ between runs");
        assert!(!outputs[0].is_empty());
        std::fs::remove_dir_all(&dir).ok();
    });
}

#[test]
fn acceptance_11_end_to_end_smoke() {
    criterion(11, "256x256 stitch under 60 s with overlap PSNR >= 30 dB", || {
        let bin = env!("CARGO_BIN_EXE_parastitch");
        let dir = std::env::temp_dir().join(format!("parastitch_acc11_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let pair = gen_pair(7001, GtKind::Homography, 256, 256, 0.05, 0.7).unwrap();
        let ref_path = dir.join("ref.png");
        let tgt_path = dir.join("tgt.png");
        save_png(&pair.reference, &ref_path).unwrap();
        save_png(&pair.target, &tgt_path).unwrap();
        let out = dir.join("pano.png");
        let t0 = Instant::now();
        let output = std::process::Command::new(bin)
            .args(["stitch"])
            .arg(&ref_path)
            .arg(&tgt_path)
            .args(["-o"])
            .arg(&out)
            .output()
            .unwrap();
        let elapsed = t0.elapsed().as_secs_f64();
        assert!(output.status.success());
        assert!(elapsed < 60.0, "stitch took {elapsed:.1}s");
        let stdout = String::from_utf8(output.stdout).unwrap();
        let line = stdout
            .lines()
            .find(|l| l.contains("overlap psnr"))
            .expect("summary line");
        let psnr_str = line
            .split("overlap psnr")
            .nth(1)
            .unwrap()
            .trim()
            .split_whitespace()
            .next()
            .unwrap();
        let psnr_db: f64 = psnr_str.parse().unwrap();
        assert!(psnr_db >= 30.0, "overlap psnr {psnr_db} dB");
        assert!(load_image(&out).unwrap().width() >= 256);
        println!("  stitched in {elapsed:.1}s at {psnr_db:.2} dB");
        std::fs::remove_dir_all(&dir).ok();
    });
}
