use parastitch::energy::{inter_grid_term, label_nonoverlap_edges, WarpLossWeights};
use parastitch::optim::*;
use parastitch::raster::psnr;
use parastitch::synth::{gen_pair, GtKind};
use parastitch::warp::{field_from_mesh, warp, Canvas};

fn main() {
    let size = 192;
    let cfg = OptimizerConfig::warp_defaults();
    let (mut dpsnr, mut folds0, mut folds1, mut inter0, mut inter1) = (0.0, 0, 0, 0.0, 0.0);
    let n = 8u64;
    for seed in 0..n {
        let pair = if seed % 2 == 0 { gen_pair(seed + 50, GtKind::Tps, size, size, 0.10, 0.5).unwrap() } else { gen_pair(seed + 50, GtKind::TwoPlane, size, size, 20.0, 0.5).unwrap() };
        let canvas = Canvas::for_reference(size, size);
        let hs = optimize_homography(&pair.reference, &pair.target, &cfg).unwrap();
        let run = |omega: f64| {
            let w = WarpLossWeights { omega, lambda: 3.0 };
            let tps = optimize_tps(&pair.reference, &pair.target, &hs.homography, &w, &cfg).unwrap();
            let f = field_from_mesh(&tps.mesh, &canvas).unwrap();
            let (wt, mt) = warp(&pair.target, &f);
            let p = psnr(&pair.reference, &wt, &mt).unwrap();
            // non-overlap inter energy with labels from the final mesh
            let overlap_mask = parastitch::raster::SoftMask::from_fn(size, size, |x, y| {
                if f.get(x, y).1 { 1.0 } else { 0.0 }
            });
            let labels = label_nonoverlap_edges(&tps.mesh, &overlap_mask, &canvas);
            let ie = inter_grid_term(&tps.mesh, &labels);
            // folds restricted to cells fully outside the overlap
            let m = &tps.mesh;
            let mut nfolds = 0;
            for r in 0..m.rows() - 1 {
                for c in 0..m.cols() - 1 {
                    let vs = [m.warped_at(r, c), m.warped_at(r, c + 1), m.warped_at(r + 1, c + 1), m.warped_at(r + 1, c)];
                    let outside = vs.iter().all(|p| {
                        let x = p.x.clamp(0.0, (size - 1) as f64);
                        let y = p.y.clamp(0.0, (size - 1) as f64);
                        overlap_mask.sample(x, y) < 0.5
                    });
                    if !outside { continue; }
                    let mut bad = false;
                    for i in 0..4 {
                        let (a, b, cc) = (vs[i], vs[(i + 1) % 4], vs[(i + 2) % 4]);
                        if (b - a).cross(cc - b) <= 0.0 { bad = true; break; }
                    }
                    if bad { nfolds += 1; }
                }
            }
            (p, nfolds, ie)
        };
        let (p0, f0, i0) = run(0.0);
        let (p1, f1, i1) = run(10.0);
        println!("seed {}: w=0 psnr {:.2} folds {} inter {:.5} | w=10 psnr {:.2} folds {} inter {:.5}",
                 seed, p0, f0, i0, p1, f1, i1);
        dpsnr += (p1 - p0).abs();
        folds0 += f0; folds1 += f1; inter0 += i0; inter1 += i1;
    }
    println!("mean |dPSNR| {:.3} dB; folds {} -> {}; inter {:.5} -> {:.5}",
             dpsnr / n as f64, folds0, folds1, inter0, inter1);
}
