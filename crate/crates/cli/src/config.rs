//! Run configuration: paper-default hyperparameters, overridable by a TOML
//! key = value file and then by command-line flags.

use parastitch::compose::CompositionWeights;
use parastitch::energy::WarpLossWeights;
use parastitch::optim::OptimizerConfig;
use parastitch::pipeline::StitchConfig;
use serde::Deserialize;

/// All tunables in one place. Defaults follow the reference hyperparameters:
/// omega 10, lambda 3, alpha 10000, beta 1000, 13x13 grid, tau 1e-4, T 50.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub omega: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Pyramid levels for the warp stages.
    pub levels: usize,
    /// Per-level iteration budget for the warp stages.
    pub iters: usize,
    /// Convergence tolerance tau on consecutive losses.
    pub tau: f64,
    /// Adaption budget T.
    pub t: usize,
    /// Learning rate in pixels at the coarsest level.
    pub lr: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub seed: u64,
    pub seam_iters: usize,
    pub seam_lr: f64,
    pub seam_tol: f64,
    /// Benchmark: pairs per stratum and square image size.
    pub pairs: usize,
    pub size: usize,
    /// Benchmark gate thresholds (CI mode); violation exits nonzero.
    pub gate_min_psnr: Option<f64>,
    pub gate_max_warp_err: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let warp = OptimizerConfig::warp_defaults();
        let adapt = OptimizerConfig::adapt_defaults();
        let seam = OptimizerConfig::seam_defaults();
        let w = WarpLossWeights::default();
        let c = CompositionWeights::default();
        RunConfig {
            omega: w.omega,
            lambda: w.lambda,
            alpha: c.alpha,
            beta: c.beta,
            levels: warp.pyramid_levels,
            iters: warp.max_iters,
            tau: warp.tol,
            t: adapt.max_iters,
            lr: warp.learning_rate,
            grid_rows: warp.grid_rows,
            grid_cols: warp.grid_cols,
            seed: 7,
            seam_iters: seam.max_iters,
            seam_lr: seam.learning_rate,
            seam_tol: seam.tol,
            pairs: 3,
            size: 256,
            gate_min_psnr: None,
            gate_max_warp_err: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn warp_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.lr,
            max_iters: self.iters,
            tol: self.tau,
            pyramid_levels: self.levels,
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            ..OptimizerConfig::warp_defaults()
        }
    }

    pub fn adapt_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iters: self.t,
            tol: self.tau,
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            ..OptimizerConfig::adapt_defaults()
        }
    }

    pub fn seam_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.seam_lr,
            max_iters: self.seam_iters,
            tol: self.seam_tol,
            ..OptimizerConfig::seam_defaults()
        }
    }

    pub fn warp_weights(&self) -> WarpLossWeights {
        WarpLossWeights {
            omega: self.omega,
            lambda: self.lambda,
        }
    }

    pub fn composition_weights(&self) -> CompositionWeights {
        CompositionWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn stitch_config(&self) -> StitchConfig {
        StitchConfig {
            optimizer: self.warp_optimizer(),
            warp_weights: self.warp_weights(),
            composition_weights: self.composition_weights(),
            seam_optimizer: self.seam_optimizer(),
        }
    }
}
