//! Batch stitching CLI: stitch an image pair, refine a warp by iterative
//! adaption, or run the synthetic benchmark suite.
//!
//! Exit codes: 0 success, 2 I/O, 3 degenerate geometry, 4 no overlap,
//! 5 benchmark gate failure, 6 malformed config/mesh, 1 anything else.

mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use parastitch::geometry::ControlMesh;
use parastitch::optim::{adapt, LossRecord, WarpResult};
use parastitch::pipeline::stitch_pair;
use parastitch::raster::{encode_mask_png, encode_png, load_image};
use parastitch::synth::{run_suite, SuiteConfig};
use parastitch::{warp, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_IO: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_NO_OVERLAP: u8 = 4;
const EXIT_GATE: u8 = 5;
const EXIT_PARSE: u8 = 6;

#[derive(Parser)]
#[command(name = "parastitch", about = "Parallax-tolerant image stitching", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct CommonOpts {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Control grid as ROWSxCOLS, e.g. 13x13.
    #[arg(long)]
    grid: Option<String>,
    /// Distortion weight.
    #[arg(long)]
    omega: Option<f64>,
    /// Homography-term weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Boundary-energy weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Smoothness-energy weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Iteration budget (per level for stitch, total T for adapt).
    #[arg(long)]
    iters: Option<usize>,
    /// Convergence tolerance tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Learning rate in pixels at the coarsest level.
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for synthetic generation.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stitch a reference/target pair into a panorama.
    Stitch {
        reference: PathBuf,
        target: PathBuf,
        /// Output panorama PNG.
        #[arg(short, long, default_value = "panorama.png")]
        out: PathBuf,
        /// Write the optimized control mesh as JSON.
        #[arg(long)]
        dump_mesh: Option<PathBuf>,
        /// Write composition/validity masks as PNGs with this path prefix.
        #[arg(long)]
        dump_masks: Option<PathBuf>,
        /// Write the per-iteration loss breakdown as CSV.
        #[arg(long)]
        dump_loss_csv: Option<PathBuf>,
        /// Write the backward warp field raster (UDISFIELD v1).
        #[arg(long)]
        dump_field: Option<PathBuf>,
        /// Write the seam level-set polyline as a JSON point list.
        #[arg(long)]
        dump_seam: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Refine a warm-start mesh by iterative adaption (alignment term only).
    Adapt {
        reference: PathBuf,
        target: PathBuf,
        /// Warm-start mesh JSON (e.g. from stitch --dump-mesh).
        #[arg(long)]
        warm_mesh: PathBuf,
        /// Output refined mesh JSON.
        #[arg(short, long, default_value = "mesh_refined.json")]
        out: PathBuf,
        #[arg(long)]
        dump_loss_csv: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the stratified synthetic benchmark and write a report.
    Bench {
        /// Output CSV report.
        #[arg(short, long, default_value = "bench.csv")]
        out: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Pairs per stratum.
        #[arg(long)]
        pairs: Option<usize>,
        /// Square image size.
        #[arg(long)]
        size: Option<usize>,
        /// Skip the composition stage for speed.
        #[arg(long)]
        no_composition: bool,
        /// Fail (exit 5) when mean TPS PSNR drops below this.
        #[arg(long)]
        gate_min_psnr: Option<f64>,
        /// Fail (exit 5) when mean warp error exceeds this.
        #[arg(long)]
        gate_max_warp_err: Option<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Image(_) => EXIT_IO,
        Error::Degenerate(_) | Error::PointAtInfinity(_) => EXIT_DEGENERATE,
        Error::NoOverlap(_) | Error::EmptyRegion(_) => EXIT_NO_OVERLAP,
        Error::Parse(_) | Error::InvalidParam(_) => EXIT_PARSE,
        _ => 1,
    }
}

/// Load config file then apply flag overrides.
fn resolve_config(common: &CommonOpts) -> Result<RunConfig, (String, u8)> {
    let mut cfg = if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| (format!("reading {}: {e}", path.display()), EXIT_IO))?;
        RunConfig::from_toml(&text).map_err(|e| (e, EXIT_PARSE))?
    } else {
        RunConfig::default()
    };
    if let Some(grid) = &common.grid {
        let parts: Vec<&str> = grid.split(['x', 'X']).collect();
        let parsed: Option<(usize, usize)> = match parts.as_slice() {
            [r, c] => r.parse().ok().zip(c.parse().ok()),
            _ => None,
        };
        let (rows, cols) =
            parsed.ok_or_else(|| (format!("bad --grid {grid}, expected RxC"), EXIT_PARSE))?;
        cfg.grid_rows = rows;
        cfg.grid_cols = cols;
    }
    macro_rules! over {
        ($field:ident) => {
            if let Some(v) = common.$field {
                cfg.$field = v;
            }
        };
    }
    over!(omega);
    over!(lambda);
    over!(alpha);
    over!(beta);
    over!(levels);
    over!(tau);
    over!(lr);
    over!(seed);
    if let Some(v) = common.iters {
        cfg.iters = v;
        cfg.t = v;
    }
    Ok(cfg)
}

/// Write via a temp file in the same directory, then rename: failed runs
/// leave no partial outputs behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[allow(clippy::too_many_arguments)]
fn cmd_stitch(
    reference: &Path,
    target: &Path,
    out: &Path,
    dump_mesh: Option<&Path>,
    dump_masks: Option<&Path>,
    dump_loss_csv: Option<&Path>,
    dump_field: Option<&Path>,
    dump_seam: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(), (String, u8)> {
    let map = |e: Error| (e.to_string(), exit_for(&e));
    let ref_img = load_image(reference).map_err(map)?;
    let tgt_img = load_image(target).map_err(map)?;
    let stitch_cfg = cfg.stitch_config();
    let output = stitch_pair(&ref_img, &tgt_img, &stitch_cfg).map_err(map)?;
    if output.homography_stage.no_overlap {
        return Err((
            "images do not overlap at identity placement".into(),
            EXIT_NO_OVERLAP,
        ));
    }
    write_atomic(out, &encode_png(&output.panorama).map_err(map)?)
        .map_err(|e| (format!("writing {}: {e}", out.display()), EXIT_IO))?;
    if let Some(path) = dump_mesh {
        write_atomic(path, output.warp_result.mesh.to_json().as_bytes())
            .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
    }
    if let Some(prefix) = dump_masks {
        let base = prefix.to_string_lossy();
        let mut masks: Vec<(String, &parastitch::raster::SoftMask)> = vec![
            (format!("{base}_mr.png"), &output.mask_reference),
            (format!("{base}_mt.png"), &output.mask_target),
        ];
        if let Some(seam) = &output.seam {
            masks.push((format!("{base}_mcr.png"), &seam.m_cr));
            masks.push((format!("{base}_mct.png"), &seam.m_ct));
        }
        for (path, mask) in masks {
            write_atomic(Path::new(&path), &encode_mask_png(mask).map_err(map)?)
                .map_err(|e| (format!("writing {path}: {e}"), EXIT_IO))?;
        }
    }
    if let Some(path) = dump_loss_csv {
        let mut csv = String::from(LossRecord::CSV_HEADER);
        csv.push('\n');
        for r in output
            .homography_stage
            .loss_history
            .iter()
            .chain(&output.warp_result.loss_history)
        {
            csv.push_str(&r.csv_line());
            csv.push('\n');
        }
        write_atomic(path, csv.as_bytes())
            .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
    }
    if let Some(path) = dump_field {
        let mesh_on_canvas = output
            .warp_result
            .mesh
            .translated(output.canvas.offset.0 as f64, output.canvas.offset.1 as f64);
        let field = warp::field_from_mesh(&mesh_on_canvas, &output.canvas).map_err(map)?;
        let mut bytes = Vec::new();
        warp::write_field(&field, &mut bytes).map_err(map)?;
        write_atomic(path, &bytes)
            .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
    }
    if let Some(path) = dump_seam {
        if let Some(seam) = &output.seam {
            let pts: Vec<[f64; 2]> = parastitch::compose::seam_polyline(&seam.m_cr)
                .iter()
                .map(|p| [p.x, p.y])
                .collect();
            let json = serde_json::to_string_pretty(&pts).expect("seam json");
            write_atomic(path, json.as_bytes())
                .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
        }
    }
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    let final_loss = output
        .warp_result
        .loss_history
        .last()
        .map(|r| r.total)
        .unwrap_or(f64::NAN);
    println!(
        "stitched {}x{} canvas | overlap psnr {:.2} dB ssim {:.4} | final warp loss {:.6} | timings: homography {:.2}s, tps {:.2}s, composition {:.2}s",
        output.canvas.width,
        output.canvas.height,
        output.overlap_psnr,
        output.overlap_ssim,
        final_loss,
        output.timings.homography_s,
        output.timings.tps_s,
        output.timings.composition_s,
    );
    Ok(())
}

fn cmd_adapt(
    reference: &Path,
    target: &Path,
    warm_mesh: &Path,
    out: &Path,
    dump_loss_csv: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(), (String, u8)> {
    let map = |e: Error| (e.to_string(), exit_for(&e));
    let ref_img = load_image(reference).map_err(map)?;
    let tgt_img = load_image(target).map_err(map)?;
    let text = std::fs::read_to_string(warm_mesh)
        .map_err(|e| (format!("reading {}: {e}", warm_mesh.display()), EXIT_IO))?;
    let mesh = ControlMesh::from_json(&text).map_err(map)?;
    let warm = WarpResult::from_mesh(mesh);
    let result = adapt(&ref_img, &tgt_img, &warm, &cfg.adapt_optimizer()).map_err(map)?;
    for r in &result.loss_history {
        println!("iter {} adaption loss {}", r.iter, r.align);
    }
    println!(
        "adaption finished after {} iterations (converged: {})",
        result.iterations_used, result.converged
    );
    write_atomic(out, result.mesh.to_json().as_bytes())
        .map_err(|e| (format!("writing {}: {e}", out.display()), EXIT_IO))?;
    if let Some(path) = dump_loss_csv {
        let mut csv = String::from(LossRecord::CSV_HEADER);
        csv.push('\n');
        for r in &result.loss_history {
            csv.push_str(&r.csv_line());
            csv.push('\n');
        }
        write_atomic(path, csv.as_bytes())
            .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    out: &Path,
    json: Option<&Path>,
    pairs: Option<usize>,
    size: Option<usize>,
    no_composition: bool,
    gate_min_psnr: Option<f64>,
    gate_max_warp_err: Option<f64>,
    cfg: &RunConfig,
) -> Result<(), (String, u8)> {
    let suite = SuiteConfig {
        pairs_per_stratum: pairs.unwrap_or(cfg.pairs),
        width: size.unwrap_or(cfg.size),
        height: size.unwrap_or(cfg.size),
        seed: cfg.seed,
        optimizer: cfg.warp_optimizer(),
        weights: cfg.warp_weights(),
        composition: cfg.composition_weights(),
        seam_optimizer: cfg.seam_optimizer(),
        run_composition: !no_composition,
    };
    let report = run_suite(&suite);
    write_atomic(out, report.to_csv().as_bytes())
        .map_err(|e| (format!("writing {}: {e}", out.display()), EXIT_IO))?;
    if let Some(path) = json {
        write_atomic(path, report.to_json().as_bytes())
            .map_err(|e| (format!("writing {}: {e}", path.display()), EXIT_IO))?;
    }
    for s in &report.summaries {
        eprintln!(
            "{}: pairs {} failures {} | psnr_h {:.2} psnr_tps {:.2} ssim {:.4} warp_err {:.3}",
            s.stratum, s.pairs, s.failures, s.mean_psnr_h, s.mean_psnr_tps, s.mean_ssim_tps,
            s.mean_warp_err
        );
    }
    let gate_psnr = gate_min_psnr.or(cfg.gate_min_psnr);
    let gate_werr = gate_max_warp_err.or(cfg.gate_max_warp_err);
    let ok_rows: Vec<_> = report.rows.iter().filter(|r| r.status == "ok").collect();
    if ok_rows.is_empty() && !report.rows.is_empty() {
        return Err(("all benchmark pairs failed".into(), EXIT_GATE));
    }
    if let Some(min_psnr) = gate_psnr {
        if !ok_rows.is_empty() {
            let mean = ok_rows.iter().map(|r| r.psnr_tps).sum::<f64>() / ok_rows.len() as f64;
            if mean < min_psnr {
                return Err((
                    format!("gate: mean tps psnr {mean:.2} below threshold {min_psnr}"),
                    EXIT_GATE,
                ));
            }
        }
    }
    if let Some(max_err) = gate_werr {
        let errs: Vec<f64> = ok_rows.iter().filter_map(|r| r.warp_err).collect();
        if !errs.is_empty() {
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            if mean > max_err {
                return Err((
                    format!("gate: mean warp error {mean:.3} px above threshold {max_err}"),
                    EXIT_GATE,
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Stitch {
            reference,
            target,
            out,
            dump_mesh,
            dump_masks,
            dump_loss_csv,
            dump_field,
            dump_seam,
            common,
        } => resolve_config(common).and_then(|cfg| {
            cmd_stitch(
                reference,
                target,
                out,
                dump_mesh.as_deref(),
                dump_masks.as_deref(),
                dump_loss_csv.as_deref(),
                dump_field.as_deref(),
                dump_seam.as_deref(),
                &cfg,
            )
        }),
        Command::Adapt {
            reference,
            target,
            warm_mesh,
            out,
            dump_loss_csv,
            common,
        } => resolve_config(common).and_then(|cfg| {
            cmd_adapt(
                reference,
                target,
                warm_mesh,
                out,
                dump_loss_csv.as_deref(),
                &cfg,
            )
        }),
        Command::Bench {
            out,
            json,
            pairs,
            size,
            no_composition,
            gate_min_psnr,
            gate_max_warp_err,
            common,
        } => resolve_config(common).and_then(|cfg| {
            cmd_bench(
                out,
                json.as_deref(),
                *pairs,
                *size,
                *no_composition,
                *gate_min_psnr,
                *gate_max_warp_err,
                &cfg,
            )
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
