//! Seam-driven seamless composition.
//!
//! The hard seam label is relaxed to a soft mask: logits live on the overlap
//! pixels, pass through a sigmoid so gradients never truncate, and the
//! remaining mask values are forced by the partition-of-unity construction
//! (`m_cr + m_ct = max(m_r, m_t)` everywhere). The mask is optimized against
//! a boundary term pinning the overlap border to one source image and a
//! smoothness term routing the transition through low-difference territory.

use crate::optim::{adam_step, AdamState, OptimizerConfig};
use crate::par;
use crate::raster::{ImageF, SoftMask};
use crate::{Error, Result, Vec2};

/// Warped images plus their validity masks on a shared canvas.
#[derive(Debug, Clone)]
pub struct CompositionInputs {
    pub i_wr: ImageF,
    pub i_wt: ImageF,
    pub m_r: SoftMask,
    pub m_t: SoftMask,
}

impl CompositionInputs {
    pub fn new(i_wr: ImageF, i_wt: ImageF, m_r: SoftMask, m_t: SoftMask) -> Result<Self> {
        let (w, h) = (i_wr.width(), i_wr.height());
        if i_wt.width() != w
            || i_wt.height() != h
            || m_r.width() != w
            || m_r.height() != h
            || m_t.width() != w
            || m_t.height() != h
            || i_wr.channels() != i_wt.channels()
        {
            return Err(Error::ShapeMismatch(
                "composition inputs must share canvas dimensions".into(),
            ));
        }
        Ok(CompositionInputs { i_wr, i_wt, m_r, m_t })
    }

    pub fn overlap(&self) -> SoftMask {
        self.m_r.mul(&self.m_t).expect("dims checked at construction")
    }
}

/// Energy weights; defaults follow the composition stage setup.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompositionWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CompositionWeights {
    fn default() -> Self {
        CompositionWeights {
            alpha: 10_000.0,
            beta: 1_000.0,
        }
    }
}

/// Energy breakdown of one seam-optimization iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamEnergyRecord {
    pub iter: usize,
    pub boundary: f64,
    pub smoothness: f64,
    pub total: f64,
}

/// Soft composition masks plus the logits they came from.
#[derive(Debug, Clone)]
pub struct SeamMask {
    pub logits: Vec<f64>,
    pub m_cr: SoftMask,
    pub m_ct: SoftMask,
    pub history: Vec<SeamEnergyRecord>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// 3x3 Sobel gradient magnitude with replicated borders, thresholded at 0.1
/// to a 0/1 edge map. Constant masks produce all zeros.
pub fn sobel_edges(mask: &SoftMask) -> SoftMask {
    let (w, h) = (mask.width(), mask.height());
    let fetch = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        mask.get(xc, yc)
    };
    SoftMask::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let gx = -fetch(x - 1, y - 1) + fetch(x + 1, y - 1) - 2.0 * fetch(x - 1, y)
            + 2.0 * fetch(x + 1, y)
            - fetch(x - 1, y + 1)
            + fetch(x + 1, y + 1);
        let gy = -fetch(x - 1, y - 1) - 2.0 * fetch(x, y - 1) - fetch(x + 1, y - 1)
            + fetch(x - 1, y + 1)
            + 2.0 * fetch(x, y + 1)
            + fetch(x + 1, y + 1);
        if (gx * gx + gy * gy).sqrt() > 0.1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Boundary masks `m_br = m_r * E(m_t)` and `m_bt = m_t * E(m_r)`; they trace
/// the overlap border on each side and share the two intersection pixels.
pub fn boundary_masks(m_r: &SoftMask, m_t: &SoftMask) -> Result<(SoftMask, SoftMask)> {
    let m_br = m_r.mul(&sobel_edges(m_t))?;
    let m_bt = m_t.mul(&sobel_edges(m_r))?;
    Ok((m_br, m_bt))
}

fn mean_abs_masked(s: &ImageF, img: &ImageF, mask: &SoftMask) -> f64 {
    let ch = s.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..s.height() {
        for x in 0..s.width() {
            let m = mask.get(x, y);
            if m > 0.0 {
                for c in 0..ch {
                    sum += m * (s.get(x, y, c) - img.get(x, y, c)).abs();
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (count * ch) as f64
    }
}

/// Boundary energy: the stitched image must match the warped reference on
/// `m_br` pixels and the warped target on `m_bt` pixels, each term averaged
/// over its nonzero boundary pixels.
pub fn boundary_loss(
    s: &ImageF,
    i_wr: &ImageF,
    i_wt: &ImageF,
    m_br: &SoftMask,
    m_bt: &SoftMask,
) -> f64 {
    mean_abs_masked(s, i_wr, m_br) + mean_abs_masked(s, i_wt, m_bt)
}

/// Smoothness energy: mask gradients charged by the photometric difference
/// map (`l_D`) and by the stitched-image gradients (`l_S`), summed over both
/// axes and normalized by pixel count.
pub fn smoothness_loss(m_cr: &SoftMask, d: &ImageF, s: &ImageF) -> f64 {
    let (w, h) = (m_cr.width(), m_cr.height());
    let ch = s.channels();
    let mut total = 0.0;
    let s_diff = |x0: usize, y0: usize, x1: usize, y1: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..ch {
            acc += (s.get(x0, y0, c) - s.get(x1, y1, c)).abs();
        }
        acc / ch as f64
    };
    for y in 0..h {
        for x in 0..w {
            if y + 1 < h {
                let dm = (m_cr.get(x, y) - m_cr.get(x, y + 1)).abs();
                total += dm * (d.get(x, y, 0) + d.get(x, y + 1, 0));
                total += dm * s_diff(x, y, x, y + 1);
            }
            if x + 1 < w {
                let dm = (m_cr.get(x, y) - m_cr.get(x + 1, y)).abs();
                total += dm * (d.get(x, y, 0) + d.get(x + 1, y, 0));
                total += dm * s_diff(x, y, x + 1, y);
            }
        }
    }
    total / (w * h) as f64
}

/// Union-complement target mask: `m_ct = clamp(max(m_r, m_t) - m_cr, 0, 1)`,
/// enforcing partition of unity by construction.
pub fn derive_target_mask(m_cr: &SoftMask, m_r: &SoftMask, m_t: &SoftMask) -> Result<SoftMask> {
    let union = m_r.max_of(m_t)?;
    if union.width() != m_cr.width() || union.height() != m_cr.height() {
        return Err(Error::ShapeMismatch("derive_target_mask dims".into()));
    }
    Ok(SoftMask::from_fn(m_cr.width(), m_cr.height(), |x, y| {
        (union.get(x, y) - m_cr.get(x, y)).clamp(0.0, 1.0)
    }))
}

/// Per-pixel weighted sum `m_cr * i_wr + m_ct * i_wt`, clipped to `[0,1]`.
pub fn blend(i_wr: &ImageF, i_wt: &ImageF, m_cr: &SoftMask, m_ct: &SoftMask) -> ImageF {
    let ch = i_wr.channels();
    let (w, h) = (i_wr.width(), i_wr.height());
    let rows = par::map_rows(h, |y| {
        let mut row = vec![0.0f64; w * ch];
        for x in 0..w {
            for c in 0..ch {
                let v = m_cr.get(x, y) * i_wr.get(x, y, c) + m_ct.get(x, y) * i_wt.get(x, y, c);
                row[x * ch + c] = v.clamp(0.0, 1.0);
            }
        }
        row
    });
    let mut data = Vec::with_capacity(w * h * ch);
    for r in rows {
        data.extend(r);
    }
    ImageF::new(w, h, ch, data).expect("blend output")
}

/// Mask construction from logits: sigmoid on overlap pixels, forced values
/// elsewhere (`m_cr = m_r` outside the target footprint, 0 outside the
/// reference footprint).
fn masks_from_logits(
    logits: &[f64],
    overlap_idx: &[usize],
    base: &CompositionInputs,
) -> (SoftMask, SoftMask) {
    let (w, h) = (base.m_r.width(), base.m_r.height());
    let mut m_cr = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = base.m_r.get(x, y);
            let t = base.m_t.get(x, y);
            m_cr[i] = if r > 0.0 && t > 0.0 { 0.0 } else { r };
        }
    }
    for (k, &i) in overlap_idx.iter().enumerate() {
        let sig = 1.0 / (1.0 + (-logits[k]).exp());
        let r = base.m_r.data()[i];
        let t = base.m_t.data()[i];
        m_cr[i] = sig * r.max(t);
    }
    let m_cr = SoftMask::new(w, h, m_cr).expect("mask in range");
    let m_ct = derive_target_mask(&m_cr, &base.m_r, &base.m_t).expect("dims agree");
    (m_cr, m_ct)
}

struct SeamEnergy {
    boundary: f64,
    smoothness: f64,
    total: f64,
    /// d total / d m_cr at overlap pixels, in overlap-index order.
    grad_m: Vec<f64>,
}

fn seam_energy_and_grad(
    base: &CompositionInputs,
    weights: &CompositionWeights,
    d_map: &ImageF,
    m_br: &SoftMask,
    m_bt: &SoftMask,
    count_br: usize,
    count_bt: usize,
    overlap_idx: &[usize],
    m_cr: &SoftMask,
    m_ct: &SoftMask,
) -> SeamEnergy {
    let (w, h) = (m_cr.width(), m_cr.height());
    let ch = base.i_wr.channels();
    let s = blend(&base.i_wr, &base.i_wt, m_cr, m_ct);
    let mut grad_full = vec![0.0f64; w * h];
    let l1_sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    // Boundary term and its gradient (dS/dm_cr = i_wr - i_wt on the overlap).
    let mut boundary = 0.0;
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let br = m_br.get(x, y);
            let bt = m_bt.get(x, y);
            if br > 0.0 {
                let mut acc = 0.0;
                let mut g = 0.0;
                for c in 0..ch {
                    let diff = s.get(x, y, c) - base.i_wr.get(x, y, c);
                    acc += diff.abs();
                    g += l1_sign(diff)
                        * (base.i_wr.get(x, y, c) - base.i_wt.get(x, y, c));
                }
                boundary += br * acc / (count_br.max(1) * ch) as f64;
                grad_full[idx] += weights.alpha * br * g / (count_br.max(1) * ch) as f64;
            }
            if bt > 0.0 {
                let mut acc = 0.0;
                let mut g = 0.0;
                for c in 0..ch {
                    let diff = s.get(x, y, c) - base.i_wt.get(x, y, c);
                    acc += diff.abs();
                    g += l1_sign(diff)
                        * (base.i_wr.get(x, y, c) - base.i_wt.get(x, y, c));
                }
                boundary += bt * acc / (count_bt.max(1) * ch) as f64;
                grad_full[idx] += weights.alpha * bt * g / (count_bt.max(1) * ch) as f64;
            }
        }
    }
    // Smoothness term: both the direct |dm| path and the path through S.
    let norm = (w * h) as f64;
    let mut smoothness = 0.0;
    let mut pair = |x0: usize, y0: usize, x1: usize, y1: usize,
                    grad_full: &mut Vec<f64>| {
        let i0 = y0 * w + x0;
        let i1 = y1 * w + x1;
        let dm = m_cr.get(x0, y0) - m_cr.get(x1, y1);
        let d_sum = d_map.get(x0, y0, 0) + d_map.get(x1, y1, 0);
        let mut s_abs = 0.0;
        for c in 0..ch {
            s_abs += (s.get(x0, y0, c) - s.get(x1, y1, c)).abs();
        }
        s_abs /= ch as f64;
        smoothness += dm.abs() * (d_sum + s_abs) / norm;
        let sgn = l1_sign(dm);
        let w_term = weights.beta / norm;
        grad_full[i0] += w_term * sgn * (d_sum + s_abs);
        grad_full[i1] -= w_term * sgn * (d_sum + s_abs);
        // l_S through the stitched image.
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        for c in 0..ch {
            let sd = l1_sign(s.get(x0, y0, c) - s.get(x1, y1, c));
            g0 += sd * (base.i_wr.get(x0, y0, c) - base.i_wt.get(x0, y0, c));
            g1 -= sd * (base.i_wr.get(x1, y1, c) - base.i_wt.get(x1, y1, c));
        }
        grad_full[i0] += w_term * dm.abs() * g0 / ch as f64;
        grad_full[i1] += w_term * dm.abs() * g1 / ch as f64;
    };
    for y in 0..h {
        for x in 0..w {
            if y + 1 < h {
                pair(x, y, x, y + 1, &mut grad_full);
            }
            if x + 1 < w {
                pair(x, y, x + 1, y, &mut grad_full);
            }
        }
    }
    let total = weights.alpha * boundary + weights.beta * smoothness;
    let grad_m = overlap_idx.iter().map(|&i| grad_full[i]).collect();
    SeamEnergy {
        boundary,
        smoothness,
        total,
        grad_m,
    }
}

/// Overlap pixel indices in row-major order; the coordinate system for logit
/// vectors used by [`seam_masks_for_logits`] and [`seam_logits_energy`].
pub fn overlap_indices(inputs: &CompositionInputs) -> Vec<usize> {
    inputs
        .overlap()
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| if *v > 0.0 { Some(i) } else { None })
        .collect()
}

/// Masks induced by a logit vector (row-major overlap order): sigmoid inside
/// the overlap, forced values elsewhere.
pub fn seam_masks_for_logits(
    inputs: &CompositionInputs,
    logits: &[f64],
) -> Result<(SoftMask, SoftMask)> {
    let idx = overlap_indices(inputs);
    if idx.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} overlap pixels",
            logits.len(),
            idx.len()
        )));
    }
    Ok(masks_from_logits(logits, &idx, inputs))
}

/// Total seam energy at a logit vector together with its analytic gradient
/// (chained through the sigmoid). The value agrees with composing
/// [`blend`], [`boundary_loss`], and [`smoothness_loss`] directly.
pub fn seam_logits_energy(
    inputs: &CompositionInputs,
    weights: &CompositionWeights,
    logits: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let idx = overlap_indices(inputs);
    if idx.len() != logits.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {} overlap pixels",
            logits.len(),
            idx.len()
        )));
    }
    let (m_br, m_bt) = boundary_masks(&inputs.m_r, &inputs.m_t)?;
    let count_br = m_br.count_above(0.0);
    let count_bt = m_bt.count_above(0.0);
    let ch = inputs.i_wr.channels();
    let d_map = ImageF::from_fn(inputs.i_wr.width(), inputs.i_wr.height(), 1, |x, y| {
        let mut acc = 0.0;
        for c in 0..ch {
            let d = inputs.i_wr.get(x, y, c) - inputs.i_wt.get(x, y, c);
            acc += d * d;
        }
        [acc / ch as f64, 0.0, 0.0]
    });
    let (m_cr, m_ct) = masks_from_logits(logits, &idx, inputs);
    let e = seam_energy_and_grad(
        inputs, weights, &d_map, &m_br, &m_bt, count_br, count_bt, &idx, &m_cr, &m_ct,
    );
    let grad = logits
        .iter()
        .zip(&e.grad_m)
        .map(|(lg, gm)| {
            let sig = 1.0 / (1.0 + (-lg).exp());
            gm * sig * (1.0 - sig)
        })
        .collect();
    Ok((e.total, grad))
}

/// Optimize the soft seam mask. Logits exist on overlap pixels only and start
/// at 0 (a 0.5 blend); every iterate satisfies partition of unity by
/// construction. Keeps the best-energy iterate.
pub fn optimize_seam(
    inputs: &CompositionInputs,
    weights: &CompositionWeights,
    cfg: &OptimizerConfig,
) -> Result<SeamMask> {
    let overlap = inputs.overlap();
    let overlap_idx: Vec<usize> = overlap
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| if *v > 0.0 { Some(i) } else { None })
        .collect();
    if overlap_idx.is_empty() {
        return Err(Error::EmptyRegion("seam optimization needs overlap"));
    }
    let (m_br, m_bt) = boundary_masks(&inputs.m_r, &inputs.m_t)?;
    let count_br = m_br.count_above(0.0);
    let count_bt = m_bt.count_above(0.0);
    // Photometric difference map, per-channel squared difference averaged.
    let ch = inputs.i_wr.channels();
    let d_map = ImageF::from_fn(inputs.i_wr.width(), inputs.i_wr.height(), 1, |x, y| {
        let mut acc = 0.0;
        for c in 0..ch {
            let d = inputs.i_wr.get(x, y, c) - inputs.i_wt.get(x, y, c);
            acc += d * d;
        }
        [acc / ch as f64, 0.0, 0.0]
    });
    let mut logits = vec![0.0f64; overlap_idx.len()];
    let mut state = AdamState::new(logits.len());
    let adam_cfg = cfg.adam(cfg.learning_rate);
    let mut history = Vec::new();
    let mut best_logits = logits.clone();
    let mut best_total = f64::INFINITY;
    let mut prev_total = f64::INFINITY;
    let mut iterations_used = 0usize;
    let mut converged = false;
    for iter in 0..cfg.max_iters {
        let (m_cr, m_ct) = masks_from_logits(&logits, &overlap_idx, inputs);
        #[cfg(debug_assertions)]
        {
            // Partition of unity must hold at every iterate, not just the
            // final mask.
            let union = inputs.m_r.max_of(&inputs.m_t).expect("dims checked");
            for i in 0..union.data().len() {
                debug_assert!(
                    (m_cr.data()[i] + m_ct.data()[i] - union.data()[i]).abs() <= 1e-6,
                    "partition of unity violated at pixel {i} on iterate {iter}"
                );
            }
        }
        let e = seam_energy_and_grad(
            inputs,
            weights,
            &d_map,
            &m_br,
            &m_bt,
            count_br,
            count_bt,
            &overlap_idx,
            &m_cr,
            &m_ct,
        );
        if e.total < best_total {
            best_total = e.total;
            best_logits.copy_from_slice(&logits);
        }
        history.push(SeamEnergyRecord {
            iter,
            boundary: e.boundary,
            smoothness: e.smoothness,
            total: e.total,
        });
        iterations_used = iter + 1;
        if (prev_total - e.total).abs() < cfg.tol {
            converged = true;
            break;
        }
        prev_total = e.total;
        // Chain through the sigmoid.
        let mut grad = vec![0.0f64; logits.len()];
        for k in 0..logits.len() {
            let sig = 1.0 / (1.0 + (-logits[k]).exp());
            grad[k] = e.grad_m[k] * sig * (1.0 - sig);
        }
        adam_step(&mut logits, &grad, &mut state, &adam_cfg)?;
    }
    let (m_cr, m_ct) = masks_from_logits(&best_logits, &overlap_idx, inputs);
    // Expand logits onto the canvas raster for inspection (0 off-overlap).
    let mut logits_full = vec![0.0f64; inputs.m_r.width() * inputs.m_r.height()];
    for (k, &i) in overlap_idx.iter().enumerate() {
        logits_full[i] = best_logits[k];
    }
    Ok(SeamMask {
        logits: logits_full,
        m_cr,
        m_ct,
        history,
        iterations_used,
        converged,
    })
}

/// Marching-squares extraction of the `m_cr = 0.5` level set, returned as a
/// flat list of segment endpoints for inspection.
pub fn seam_polyline(m_cr: &SoftMask) -> Vec<Vec2> {
    let (w, h) = (m_cr.width(), m_cr.height());
    let mut pts = Vec::new();
    let t = 0.5;
    let lerp = |a: f64, b: f64| (t - a) / (b - a);
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let v = [
                m_cr.get(x, y),
                m_cr.get(x + 1, y),
                m_cr.get(x + 1, y + 1),
                m_cr.get(x, y + 1),
            ];
            let mut crossings = Vec::with_capacity(4);
            let edges = [
                (0usize, 1usize, x as f64, y as f64, 1.0, 0.0),
                (1, 2, (x + 1) as f64, y as f64, 0.0, 1.0),
                (3, 2, x as f64, (y + 1) as f64, 1.0, 0.0),
                (0, 3, x as f64, y as f64, 0.0, 1.0),
            ];
            for (a, b, ox, oy, dx, dy) in edges {
                let (va, vb) = (v[a], v[b]);
                if (va > t) != (vb > t) && (vb - va).abs() > 1e-12 {
                    let f = lerp(va, vb);
                    crossings.push(Vec2::new(ox + dx * f, oy + dy * f));
                }
            }
            if crossings.len() >= 2 {
                pts.push(crossings[0]);
                pts.push(crossings[1]);
            }
        }
    }
    pts
}
