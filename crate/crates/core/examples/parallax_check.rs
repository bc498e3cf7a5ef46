use parastitch::energy::WarpLossWeights;
use parastitch::optim::*;
use parastitch::raster::psnr;
use parastitch::synth::{gen_pair, GtKind};
use parastitch::warp::{field_from_homography, field_from_mesh, warp, Canvas};
use std::time::Instant;

fn main() {
    let size = 256;
    let cfg = OptimizerConfig::warp_defaults();
    let mut gaps = vec![];
    for seed in 0..5u64 {
        let t0 = Instant::now();
        let pair = gen_pair(seed, GtKind::TwoPlane, size, size, 12.0, 0.65).unwrap();
        let canvas = Canvas::for_reference(size, size);
        let hs = optimize_homography(&pair.reference, &pair.target, &cfg).unwrap();
        let t1 = Instant::now();
        let f = field_from_homography(&hs.homography, &canvas, size, size).unwrap();
        let (wh, mh) = warp(&pair.target, &f);
        let psnr_h = psnr(&pair.reference, &wh, &mh).unwrap();
        let tps = optimize_tps(&pair.reference, &pair.target, &hs.homography,
                               &WarpLossWeights::default(), &cfg).unwrap();
        let t2 = Instant::now();
        let f = field_from_mesh(&tps.mesh, &canvas).unwrap();
        let (wt, mt) = warp(&pair.target, &f);
        let psnr_t = psnr(&pair.reference, &wt, &mt).unwrap();
        println!("seed {seed}: H {:.2} dB ({:?}, {} iter) | TPS {:.2} dB ({:?}, {} iter, conv={}) gap {:.2}",
                 psnr_h, t1-t0, hs.iterations_used, psnr_t, t2-t1, tps.iterations_used, tps.converged, psnr_t-psnr_h);
        gaps.push(psnr_t - psnr_h);
    }
    println!("mean gap: {:.2} dB", gaps.iter().sum::<f64>() / gaps.len() as f64);
}
