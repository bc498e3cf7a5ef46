//! Gaussian image pyramid: separable binomial blur then 2x decimation.

use crate::raster::ImageF;

fn blur_binomial(img: &ImageF) -> ImageF {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let clamp_x = |x: i64| x.clamp(0, w as i64 - 1) as usize;
    let clamp_y = |y: i64| y.clamp(0, h as i64 - 1) as usize;
    // Horizontal pass.
    let mut tmp = vec![0.0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, kv) in K.iter().enumerate() {
                    acc += kv * img.get(clamp_x(x as i64 + k as i64 - 2), y, c);
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let tmp = ImageF::new(w, h, ch, tmp).expect("blur intermediate");
    // Vertical pass.
    let mut out = vec![0.0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, kv) in K.iter().enumerate() {
                    acc += kv * tmp.get(x, clamp_y(y as i64 + k as i64 - 2), c);
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    ImageF::new(w, h, ch, out).expect("blur output")
}

fn decimate(img: &ImageF) -> ImageF {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let nw = w.div_ceil(2);
    let nh = h.div_ceil(2);
    ImageF::from_fn(nw, nh, ch, |x, y| {
        let mut px = [0.0; 3];
        for (c, v) in px.iter_mut().enumerate().take(ch) {
            *v = img.get((x * 2).min(w - 1), (y * 2).min(h - 1), c);
        }
        px
    })
}

/// Build `levels` pyramid levels; index 0 is the original image.
pub fn gaussian_pyramid(img: &ImageF, levels: usize) -> Vec<ImageF> {
    let mut out = Vec::with_capacity(levels.max(1));
    out.push(img.clone());
    for _ in 1..levels.max(1) {
        let prev = out.last().unwrap();
        if prev.width() < 4 || prev.height() < 4 {
            break;
        }
        out.push(decimate(&blur_binomial(prev)));
    }
    out
}

/// Largest usable level count for a pair: every level keeps both images at
/// least `min_dim` on a side.
pub fn usable_levels(a: &ImageF, b: &ImageF, requested: usize, min_dim: usize) -> usize {
    let mut levels = 1usize;
    let mut dims = [a.width(), a.height(), b.width(), b.height()];
    while levels < requested.max(1) && dims.iter().all(|d| d.div_ceil(2) >= min_dim) {
        dims = dims.map(|d| d.div_ceil(2));
        levels += 1;
    }
    levels
}
