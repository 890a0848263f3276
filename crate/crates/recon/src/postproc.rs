//! Learned post-processing: train a convolutional network to map filtered
//! back-projections onto ground-truth images by empirical MSE minimization.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tomo_autodiff::adam::{adam_step, AdamConfig, AdamState};
use tomo_autodiff::network::{Generator, NetworkConfig, ParamStore};
use tomo_autodiff::{Tape, Tensor};
use tomo_core::dataset::{DataPair, Dataset};
use tomo_core::fbp::{fbp_reconstruct, FbpFilter};
use tomo_core::geometry::{Image, ParallelGeometry, Sinogram};
use tomo_core::variational::Discrepancy;

use crate::error::{ReconError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Post-processing network; `input_channels` must be 1 (the FBP image).
    pub net: NetworkConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// The FBP operator whose outputs the network cleans up.
    pub filter: FbpFilter,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ReconError::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.net.input_channels != 1 {
            return Err(ReconError::Config(
                "post-processing network takes the FBP image: input_channels must be 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub per_epoch: Vec<EpochStats>,
    /// Epoch whose validation MSE produced the kept checkpoint.
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

fn image_tensor(img: &Image) -> Tensor {
    Tensor::chw(1, img.height, img.width, img.data.clone()).unwrap()
}

/// Precomputed (input, target) tensors for one split.
fn prepare(
    pairs: &[DataPair],
    geom: &ParallelGeometry,
    filter: &FbpFilter,
) -> Result<Vec<(Tensor, Vec<f64>)>> {
    pairs
        .iter()
        .map(|p| {
            let fbp = fbp_reconstruct(&p.observation, geom, filter)?;
            Ok((image_tensor(&fbp), p.ground_truth.data.clone()))
        })
        .collect()
}

fn mse_of(gen: &Generator, params: &ParamStore, sample: &(Tensor, Vec<f64>)) -> Result<f64> {
    let mut tape = Tape::new();
    let (out, _) = gen.forward(&mut tape, params, &sample.0)?;
    let n = sample.1.len() as f64;
    let se: f64 = tape
        .value(out)
        .data
        .iter()
        .zip(&sample.1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(se / n)
}

fn mean_mse(gen: &Generator, params: &ParamStore, set: &[(Tensor, Vec<f64>)]) -> Result<f64> {
    let mut acc = 0.0;
    for s in set {
        acc += mse_of(gen, params, s)?;
    }
    Ok(acc / set.len() as f64)
}

/// Train the post-processor on a dataset; returns the best-on-validation
/// parameters (final parameters when the dataset has no validation split)
/// and the per-epoch log.
pub fn train_postprocessor(ds: &Dataset, cfg: &TrainConfig) -> Result<(ParamStore, TrainLog)> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(ReconError::Config("training split is empty".into()));
    }
    if cfg.net.output_size != ds.geometry.image_size {
        return Err(ReconError::Config(format!(
            "network output size {} != dataset image size {}",
            cfg.net.output_size, ds.geometry.image_size
        )));
    }
    let start = Instant::now();
    let gen = Generator::new(cfg.net.clone())?;
    let mut params = gen.init_params(cfg.seed);
    let mut state = AdamState::new(&params);
    let adam = AdamConfig::with_lr(cfg.lr);

    let train = prepare(&ds.train, &ds.geometry, &cfg.filter)?;
    let val = prepare(&ds.validation, &ds.geometry, &cfg.filter)?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { per_epoch: Vec::new(), best_epoch: 0, wall_time_s: 0.0 };
    let mut best: Option<(f64, ParamStore)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        order.shuffle(&mut rng);
        let mut epoch_se = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Option<Vec<Vec<f64>>> = None;
            for &idx in batch {
                let (input, target) = &train[idx];
                let mut tape = Tape::new();
                let (out, ids) = gen.forward(&mut tape, &params, input)?;
                let loss = tape.discrepancy(out, target, Discrepancy::L2)?;
                epoch_se += 2.0 * tape.value(loss).data[0] / target.len() as f64;
                tape.backward(loss)?;
                match &mut grads {
                    None => {
                        grads = Some(
                            ids.iter()
                                .zip(&params.params)
                                .map(|(&id, p)| {
                                    tape.grad(id)
                                        .map(|g| g.to_vec())
                                        .unwrap_or_else(|| vec![0.0; p.tensor.len()])
                                })
                                .collect(),
                        );
                    }
                    Some(acc) => {
                        for (dst, &id) in acc.iter_mut().zip(&ids) {
                            if let Some(g) = tape.grad(id) {
                                for (d, v) in dst.iter_mut().zip(g) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
            }
            let mut grads = grads.unwrap();
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
        let train_mse = epoch_se / train.len() as f64;
        let val_mse = if val.is_empty() { None } else { Some(mean_mse(&gen, &params, &val)?) };
        log.per_epoch.push(EpochStats { epoch, train_mse, val_mse });
        if let Some(v) = val_mse {
            if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
                best = Some((v, params.clone()));
                log.best_epoch = epoch;
            }
        }
    }
    log.wall_time_s = start.elapsed().as_secs_f64();
    let final_params = match best {
        Some((_, p)) => p,
        None => {
            log.best_epoch = cfg.epochs - 1;
            params
        }
    };
    Ok((final_params, log))
}

/// FBP followed by the trained network.
pub fn apply_postprocessor(
    net: &NetworkConfig,
    params: &ParamStore,
    y: &Sinogram,
    geom: &ParallelGeometry,
    filter: &FbpFilter,
) -> Result<Image> {
    if net.input_channels != 1 {
        return Err(ReconError::Config("post-processing network expects 1 input channel".into()));
    }
    if net.output_size != geom.image_size {
        return Err(ReconError::Config(format!(
            "network output size {} != geometry image size {}",
            net.output_size, geom.image_size
        )));
    }
    let fbp = fbp_reconstruct(y, geom, filter)?;
    let gen = Generator::new(net.clone())?;
    let mut tape = Tape::new();
    let (out, _) = gen.forward(&mut tape, params, &image_tensor(&fbp))?;
    Ok(Image {
        width: geom.image_size,
        height: geom.image_size,
        data: tape.value(out).data.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tomo_core::dataset::{make_dataset_with, DatasetProfile};
    use tomo_core::noise::NoiseModel;

    fn small_net(size: usize) -> NetworkConfig {
        NetworkConfig {
            scales: 2,
            channels_per_layer: 6,
            skip_channels: vec![4, 0],
            input_channels: 1,
            output_size: size,
        }
    }

    fn small_dataset(n_train: usize, n_val: usize) -> Dataset {
        let geom = ParallelGeometry::covering(10, 47, 32).unwrap();
        make_dataset_with(
            n_train,
            n_val,
            1,
            DatasetProfile::Ellipses,
            geom,
            NoiseModel::gaussian_default(),
            11,
            6,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = small_dataset(1, 0);
        let mut cfg = TrainConfig {
            net: small_net(32),
            epochs: 1,
            batch_size: 1,
            lr: 1e-3,
            seed: 0,
            filter: FbpFilter::ram_lak(),
        };
        cfg.net.input_channels = 2;
        assert!(train_postprocessor(&ds, &cfg).is_err());
        cfg.net.input_channels = 1;
        cfg.epochs = 0;
        assert!(train_postprocessor(&ds, &cfg).is_err());
        let empty = small_dataset(0, 0);
        cfg.epochs = 1;
        assert!(train_postprocessor(&empty, &cfg).is_err());
    }

    #[test]
    fn single_pair_is_memorized() {
        let ds = small_dataset(1, 0);
        let cfg = TrainConfig {
            net: NetworkConfig {
                scales: 2,
                channels_per_layer: 24,
                skip_channels: vec![4, 4],
                input_channels: 1,
                output_size: 32,
            },
            epochs: 1000,
            batch_size: 1,
            lr: 2e-3,
            seed: 1,
            filter: FbpFilter::ram_lak(),
        };
        let (params, log) = train_postprocessor(&ds, &cfg).unwrap();
        let last = log.per_epoch.last().unwrap();
        assert!(last.train_mse <= 1e-4, "train mse {}", last.train_mse);
        // Applying reproduces the memorized target closely.
        let out = apply_postprocessor(
            &cfg.net,
            &params,
            &ds.train[0].observation,
            &ds.geometry,
            &cfg.filter,
        )
        .unwrap();
        assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn best_checkpoint_is_no_worse_than_final_epoch() {
        let ds = small_dataset(4, 2);
        let cfg = TrainConfig {
            net: small_net(32),
            epochs: 25,
            batch_size: 2,
            lr: 3e-3,
            seed: 2,
            filter: FbpFilter::ram_lak(),
        };
        let gen = Generator::new(cfg.net.clone()).unwrap();
        let (params, log) = train_postprocessor(&ds, &cfg).unwrap();
        let val = prepare(&ds.validation, &ds.geometry, &cfg.filter).unwrap();
        let kept = mean_mse(&gen, &params, &val).unwrap();
        let final_epoch = log.per_epoch.last().unwrap().val_mse.unwrap();
        assert!(kept <= final_epoch + 1e-12, "kept {kept} vs final {final_epoch}");
        // Training made progress.
        let first = log.per_epoch.first().unwrap().train_mse;
        let last = log.per_epoch.last().unwrap().train_mse;
        assert!(last < first);
    }

    #[test]
    fn untrained_zero_params_give_constant_half() {
        let ds = small_dataset(1, 0);
        let net = small_net(32);
        let gen = Generator::new(net.clone()).unwrap();
        let zeroed = gen.init_params(0).zeroed();
        let out = apply_postprocessor(
            &net,
            &zeroed,
            &ds.train[0].observation,
            &ds.geometry,
            &FbpFilter::ram_lak(),
        )
        .unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn application_is_deterministic() {
        let ds = small_dataset(1, 0);
        let cfg = TrainConfig {
            net: small_net(32),
            epochs: 3,
            batch_size: 1,
            lr: 1e-3,
            seed: 3,
            filter: FbpFilter::ram_lak(),
        };
        let (params, _) = train_postprocessor(&ds, &cfg).unwrap();
        let a = apply_postprocessor(&cfg.net, &params, &ds.train[0].observation, &ds.geometry, &cfg.filter).unwrap();
        let b = apply_postprocessor(&cfg.net, &params, &ds.train[0].observation, &ds.geometry, &cfg.filter).unwrap();
        assert_eq!(a.data, b.data);
    }
}
