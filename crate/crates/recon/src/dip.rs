//! Deep-image-prior reconstructors.
//!
//! An untrained convolutional generator is fed a fixed noise input and its
//! weights are fit to the measured sinogram by Adam: plain DIP minimizes the
//! data discrepancy alone (and relies on early stopping), the TV variant
//! adds a smoothed total-variation penalty on the output, and the
//! warm-started variant first fits the generator to an initial
//! reconstruction with the identity operator before switching to the
//! measurement loss.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use tomo_autodiff::adam::{adam_step, AdamConfig, AdamState};
use tomo_autodiff::network::{Generator, NetworkConfig, ParamStore};
use tomo_autodiff::{Tape, Tensor};
use tomo_core::geometry::{Image, ParallelGeometry, Sinogram};
use tomo_core::metrics::{psnr, ssim};
use tomo_core::result::{ReconstructionResult, TracePoint};
use tomo_core::variational::{Discrepancy, TV_SMOOTH_EPS};

use crate::error::{ReconError, Result};

/// Keeps parameters inside a compact box; far above any weight an Adam run
/// reaches in practice, so it does not alter results, only guarantees them.
pub const DEFAULT_CLIP_BOUND: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipConfig {
    pub net: NetworkConfig,
    pub lr: f64,
    pub iterations: usize,
    /// TV weight; 0 for the plain DIP.
    pub alpha: f64,
    pub discrepancy: Discrepancy,
    pub seed: u64,
    pub trace_every: usize,
    /// Discrepancy-principle stop: halt once `||A phi - y||^2 <= delta^2`.
    pub stop_delta: Option<f64>,
    /// Identity-operator iterations of the warm-start fit phase.
    pub init_iterations: usize,
    pub clip_bound: Option<f64>,
    /// When set, a PNG of the running reconstruction is written here at
    /// every trace point.
    pub dump_dir: Option<std::path::PathBuf>,
}

impl DipConfig {
    pub fn new(net: NetworkConfig, lr: f64, iterations: usize, alpha: f64) -> Self {
        DipConfig {
            net,
            lr,
            iterations,
            alpha,
            discrepancy: Discrepancy::L2,
            seed: 0,
            trace_every: 25,
            stop_delta: None,
            init_iterations: 0,
            clip_bound: Some(DEFAULT_CLIP_BOUND),
            dump_dir: None,
        }
    }

    fn validate(&self, geom: &ParallelGeometry) -> Result<()> {
        if self.iterations == 0 {
            return Err(ReconError::Config("iterations must be >= 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(ReconError::Config("alpha must be >= 0".into()));
        }
        if self.net.output_size != geom.image_size {
            return Err(ReconError::Config(format!(
                "network output size {} != geometry image size {}",
                self.net.output_size, geom.image_size
            )));
        }
        Ok(())
    }
}

/// What the optimization loop is fitting.
enum Objective<'a> {
    /// `S(A phi, y) + alpha TV(phi)`.
    Measurement { y: &'a Sinogram, geom: &'a ParallelGeometry, disc: Discrepancy, alpha: f64 },
    /// `1/2 ||phi - target||^2` through the identity operator.
    FitImage { target: &'a [f64] },
}

struct LoopOutcome {
    params: ParamStore,
    image: Image,
    trace: Vec<TracePoint>,
    iterations_run: usize,
    wall_time_s: f64,
}

/// Shared Adam loop. Traces every `trace_every` iterations and always at
/// the final one; aborts on a non-finite loss, returning the last finite
/// iterate.
#[allow(clippy::too_many_arguments)]
fn optimize(
    gen: &Generator,
    mut params: ParamStore,
    z: &Tensor,
    objective: &Objective,
    lr: f64,
    iterations: usize,
    trace_every: usize,
    stop_delta_sq: Option<f64>,
    gt: Option<&Image>,
    dump_dir: Option<&std::path::Path>,
) -> Result<LoopOutcome> {
    let start = Instant::now();
    let mut state = AdamState::new(&params);
    let adam = AdamConfig::with_lr(lr);
    let trace_every = trace_every.max(1);
    let size = gen.config().output_size;

    let mut trace: Vec<TracePoint> = Vec::new();
    let mut last_image = Image::zeros(size, size);
    let mut iterations_run = 0;

    for iter in 0..iterations {
        let mut tape = Tape::new();
        let (out, ids) = gen.forward(&mut tape, &params, z)?;
        let (loss_id, data_term) = match objective {
            Objective::Measurement { y, geom, disc, alpha } => {
                let sino = tape.radon(out, geom)?;
                let data = tape.discrepancy(sino, &y.data, *disc)?;
                // Plain squared residual for the trace and stopping rule.
                let data_sq = match disc {
                    Discrepancy::L2 => 2.0 * tape.value(data).data[0],
                    Discrepancy::Poisson { .. } => {
                        let pred = tape.value(sino);
                        pred.data
                            .iter()
                            .zip(&y.data)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    }
                };
                if *alpha > 0.0 {
                    let tv = tape.tv_smooth(out, TV_SMOOTH_EPS)?;
                    (tape.add_scaled(data, tv, *alpha)?, data_sq)
                } else {
                    (data, data_sq)
                }
            }
            Objective::FitImage { target } => {
                let data = tape.discrepancy(out, target, Discrepancy::L2)?;
                let v = 2.0 * tape.value(data).data[0];
                (data, v)
            }
        };
        let loss = tape.value(loss_id).data[0];
        if !loss.is_finite() {
            log::warn!("non-finite loss at iteration {iter}; stopping with last finite iterate");
            break;
        }
        last_image.data.copy_from_slice(&tape.value(out).data);
        iterations_run = iter + 1;

        if (iter + 1) % trace_every == 0 || iter + 1 == iterations {
            let (p, s) = match gt {
                Some(gt) => (Some(psnr(&last_image, gt)?), Some(ssim(&last_image, gt)?)),
                None => (None, None),
            };
            trace.push(TracePoint { iteration: iter + 1, loss, data_term, psnr: p, ssim: s });
            if let Some(dir) = dump_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("iter_{:06}.png", iter + 1));
                tomo_core::io::write_png(path, size, size, &last_image.data)?;
            }
        }
        if let Some(limit) = stop_delta_sq {
            if data_term <= limit {
                break;
            }
        }

        tape.backward(loss_id)?;
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .zip(&params.params)
            .map(|(&id, p)| {
                tape.grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.tensor.len()])
            })
            .collect();
        adam_step(&mut params, &grads, &mut state, &adam)?;
    }
    if iterations_run == 0 {
        return Err(ReconError::Diverged("loss was non-finite at the first iteration".into()));
    }
    Ok(LoopOutcome {
        params,
        image: last_image,
        trace,
        iterations_run,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn check_observation(y: &Sinogram, geom: &ParallelGeometry) -> Result<()> {
    if !y.matches(geom) {
        return Err(ReconError::Config(format!(
            "sinogram {}x{} does not match geometry {}x{}",
            y.n_angles, y.n_detectors, geom.n_angles, geom.n_detectors
        )));
    }
    Ok(())
}

fn build(cfg: &DipConfig) -> Result<(Generator, ParamStore, Tensor)> {
    let (gen, mut params, z) = tomo_autodiff::network::build_network(cfg.net.clone(), cfg.seed)?;
    params.clip_bound = cfg.clip_bound;
    Ok((gen, params, z))
}

/// Plain DIP: minimize the data discrepancy alone. With `gt` given, the
/// trace carries PSNR/SSIM so early-stopping behavior can be read off.
pub fn dip_reconstruct(
    y: &Sinogram,
    geom: &ParallelGeometry,
    cfg: &DipConfig,
    gt: Option<&Image>,
) -> Result<ReconstructionResult> {
    cfg.validate(geom)?;
    if cfg.alpha != 0.0 {
        return Err(ReconError::Config("dip_reconstruct requires alpha = 0".into()));
    }
    check_observation(y, geom)?;
    let (gen, params, z) = build(cfg)?;
    let objective =
        Objective::Measurement { y, geom, disc: cfg.discrepancy, alpha: 0.0 };
    let out = optimize(
        &gen,
        params,
        &z,
        &objective,
        cfg.lr,
        cfg.iterations,
        cfg.trace_every,
        cfg.stop_delta.map(|d| d * d),
        gt,
        cfg.dump_dir.as_deref(),
    )?;
    Ok(ReconstructionResult {
        image: out.image,
        trace: out.trace,
        wall_time_s: out.wall_time_s,
        iterations_run: out.iterations_run,
        method: "dip".into(),
    })
}

/// DIP with TV regularization; no early stopping needed.
pub fn diptv_reconstruct(
    y: &Sinogram,
    geom: &ParallelGeometry,
    cfg: &DipConfig,
    gt: Option<&Image>,
) -> Result<ReconstructionResult> {
    cfg.validate(geom)?;
    if cfg.alpha <= 0.0 {
        return Err(ReconError::Config("diptv_reconstruct requires alpha > 0".into()));
    }
    check_observation(y, geom)?;
    let (gen, params, z) = build(cfg)?;
    let objective =
        Objective::Measurement { y, geom, disc: cfg.discrepancy, alpha: cfg.alpha };
    let out = optimize(
        &gen,
        params,
        &z,
        &objective,
        cfg.lr,
        cfg.iterations,
        cfg.trace_every,
        cfg.stop_delta.map(|d| d * d),
        gt,
        cfg.dump_dir.as_deref(),
    )?;
    Ok(ReconstructionResult {
        image: out.image,
        trace: out.trace,
        wall_time_s: out.wall_time_s,
        iterations_run: out.iterations_run,
        method: "diptv".into(),
    })
}

/// Result of fitting the generator to a fixed image with the identity
/// operator.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParamStore,
    pub z: Tensor,
    pub image: Image,
    /// Mean squared error of the final fit.
    pub final_mse: f64,
    pub trace: Vec<TracePoint>,
    pub iterations_run: usize,
    pub wall_time_s: f64,
}

/// Deep-neural parameterization of `x0`: fit the generator output to the
/// image itself. Cheap relative to measurement-domain iterations since no
/// projections are involved.
pub fn fit_parameterization(
    x0: &Image,
    net: &NetworkConfig,
    lr: f64,
    iterations: usize,
    seed: u64,
) -> Result<FitResult> {
    if x0.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(ReconError::Config("fit target must have values in [0, 1]".into()));
    }
    if net.output_size != x0.width || x0.width != x0.height {
        return Err(ReconError::Config(format!(
            "fit target {}x{} does not match network output size {}",
            x0.width, x0.height, net.output_size
        )));
    }
    let cfg = DipConfig::new(net.clone(), lr, iterations, 0.0);
    let cfg = DipConfig { seed, ..cfg };
    let (gen, params, z) = build(&cfg)?;
    let objective = Objective::FitImage { target: &x0.data };
    // No PSNR in the fit trace: the target may be constant (undefined range).
    let out =
        optimize(&gen, params, &z, &objective, lr, iterations, cfg.trace_every, None, None, None)?;
    let final_mse = out
        .trace
        .last()
        .map(|t| t.data_term / x0.data.len() as f64)
        .unwrap_or(f64::INFINITY);
    Ok(FitResult {
        params: out.params,
        z,
        image: out.image,
        final_mse,
        trace: out.trace,
        iterations_run: out.iterations_run,
        wall_time_s: out.wall_time_s,
    })
}

/// Warm-started DIP outcome: the measurement-phase result plus the
/// identity-phase trace.
#[derive(Debug, Clone)]
pub struct DipInitOutcome {
    pub result: ReconstructionResult,
    pub fit_trace: Vec<TracePoint>,
    pub fit_mse: f64,
    pub fit_iterations: usize,
    pub fit_wall_time_s: f64,
    /// Measurement-operator iterations actually run in phase two.
    pub radon_iterations: usize,
}

/// DIP with an initial reconstruction: fit the generator to `x0` with the
/// identity operator, then run at most `cfg.iterations` measurement-loss
/// steps, stopping early once the residual reaches `cfg.stop_delta`.
pub fn dip_with_initial(
    y: &Sinogram,
    geom: &ParallelGeometry,
    x0: &Image,
    cfg: &DipConfig,
    gt: Option<&Image>,
) -> Result<DipInitOutcome> {
    cfg.validate(geom)?;
    check_observation(y, geom)?;
    if x0.width != geom.image_size || x0.height != geom.image_size {
        return Err(ReconError::Config(format!(
            "initial reconstruction {}x{} does not match geometry image size {}",
            x0.width, x0.height, geom.image_size
        )));
    }
    if cfg.init_iterations == 0 {
        return Err(ReconError::Config("dip_with_initial requires init_iterations >= 1".into()));
    }
    // Attenuation images are nonnegative; the generator range is (0,1), so
    // clamp the fit target into the representable range.
    let clamped = Image {
        width: x0.width,
        height: x0.height,
        data: x0.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    };
    let fit = fit_parameterization(&clamped, &cfg.net, cfg.lr, cfg.init_iterations, cfg.seed)?;

    let gen = Generator::new(cfg.net.clone())?;
    let mut params = fit.params;
    params.clip_bound = cfg.clip_bound;
    let objective =
        Objective::Measurement { y, geom, disc: cfg.discrepancy, alpha: cfg.alpha };
    let out = optimize(
        &gen,
        params,
        &fit.z,
        &objective,
        cfg.lr,
        cfg.iterations,
        cfg.trace_every,
        cfg.stop_delta.map(|d| d * d),
        gt,
        cfg.dump_dir.as_deref(),
    )?;
    Ok(DipInitOutcome {
        result: ReconstructionResult {
            image: out.image,
            trace: out.trace,
            wall_time_s: out.wall_time_s,
            iterations_run: out.iterations_run,
            method: "dip-init".into(),
        },
        fit_trace: fit.trace,
        fit_mse: fit.final_mse,
        fit_iterations: fit.iterations_run,
        fit_wall_time_s: fit.wall_time_s,
        radon_iterations: out.iterations_run,
    })
}
