//! Convolutional encoder-decoder generator.
//!
//! The hourglass halves the resolution once per scale with a stride-2
//! convolution followed by a stride-1 convolution, and mirrors back up with
//! bilinear upsampling plus a 3x3 and a 1x1 convolution per scale. Optional
//! skip paths feed a 1x1 projection of each scale's input feature into the
//! decoder at the matching resolution. Batch normalization is replaced by a
//! learnable per-channel affine (single-sample optimization leaves batch
//! statistics undefined); the final 1x1 convolution is squashed through a
//! sigmoid so outputs live in (0, 1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdError, Result};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

pub const LEAKY_RELU_SLOPE: f64 = 0.2;
/// Standard deviation of the fixed noise input.
pub const INPUT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub scales: usize,
    pub channels_per_layer: usize,
    /// Per-scale skip width; each entry must be 0 or 4.
    pub skip_channels: Vec<usize>,
    pub input_channels: usize,
    pub output_size: usize,
}

impl NetworkConfig {
    /// Full-scale generator: 5 scales, 128 channels, 4 skip channels.
    pub fn full_scale(output_size: usize) -> Self {
        NetworkConfig {
            scales: 5,
            channels_per_layer: 128,
            skip_channels: vec![4; 5],
            input_channels: 32,
            output_size,
        }
    }

    /// Desk-scale generator: 5 scales, 32 channels.
    pub fn desk_scale(output_size: usize) -> Self {
        NetworkConfig {
            scales: 5,
            channels_per_layer: 32,
            skip_channels: vec![4; 5],
            input_channels: 32,
            output_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(AdError::Config("scales must be >= 1".into()));
        }
        if self.channels_per_layer == 0 || self.input_channels == 0 {
            return Err(AdError::Config("channel counts must be positive".into()));
        }
        if self.skip_channels.len() != self.scales {
            return Err(AdError::Config(format!(
                "skip_channels has {} entries for {} scales",
                self.skip_channels.len(),
                self.scales
            )));
        }
        if !self.skip_channels.iter().all(|&s| s == 0 || s == 4) {
            return Err(AdError::Config("skip channels must be 0 or 4".into()));
        }
        if self.output_size % (1 << self.scales) != 0 {
            return Err(AdError::Config(format!(
                "output_size {} not divisible by 2^{}",
                self.output_size, self.scales
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Named parameter tensors plus the clipping bound that keeps them inside a
/// compact box.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub params: Vec<Param>,
    pub clip_bound: Option<f64>,
    pub seed: u64,
}

impl ParamStore {
    pub fn total_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Elementwise clamp of every parameter to `[-bound, bound]`.
    pub fn clip(&mut self, bound: f64) {
        for p in &mut self.params {
            for v in &mut p.tensor.data {
                *v = v.clamp(-bound, bound);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn zeroed(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), tensor: Tensor::zeros(p.tensor.dims.clone()) })
                .collect(),
            clip_bound: self.clip_bound,
            seed: self.seed,
        }
    }
}

/// Elementwise clamp; identity when already inside the box, idempotent.
pub fn clip_params(params: &mut ParamStore, bound: f64) -> Result<()> {
    if !(bound > 0.0) {
        return Err(AdError::Config("clip bound must be > 0".into()));
    }
    params.clip(bound);
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Nonlinearity {
    LeakyRelu,
    None,
}

#[derive(Debug, Clone)]
struct ConvSpec {
    name: String,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    /// Follow with the per-channel affine?
    affine: bool,
    act: Nonlinearity,
}

/// Generator with a fixed layer plan derived from its config.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: NetworkConfig,
    enc_down: Vec<ConvSpec>,
    enc_keep: Vec<ConvSpec>,
    skips: Vec<Option<ConvSpec>>,
    dec_conv3: Vec<ConvSpec>,
    dec_conv1: Vec<ConvSpec>,
    final_conv: ConvSpec,
}

impl Generator {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels_per_layer;
        let mut enc_down = Vec::new();
        let mut enc_keep = Vec::new();
        let mut skips = Vec::new();
        let mut dec_conv3 = Vec::new();
        let mut dec_conv1 = Vec::new();
        for s in 0..cfg.scales {
            let in_ch = if s == 0 { cfg.input_channels } else { c };
            enc_down.push(ConvSpec {
                name: format!("enc{s}.down"),
                in_ch,
                out_ch: c,
                kernel: 3,
                stride: 2,
                pad: 1,
                affine: true,
                act: Nonlinearity::LeakyRelu,
            });
            enc_keep.push(ConvSpec {
                name: format!("enc{s}.conv"),
                in_ch: c,
                out_ch: c,
                kernel: 3,
                stride: 1,
                pad: 1,
                affine: true,
                act: Nonlinearity::LeakyRelu,
            });
            let skip_ch = cfg.skip_channels[s];
            skips.push(if skip_ch > 0 {
                Some(ConvSpec {
                    name: format!("skip{s}.conv"),
                    in_ch,
                    out_ch: skip_ch,
                    kernel: 1,
                    stride: 1,
                    pad: 0,
                    affine: true,
                    act: Nonlinearity::LeakyRelu,
                })
            } else {
                None
            });
            dec_conv3.push(ConvSpec {
                name: format!("dec{s}.conv3"),
                in_ch: c + skip_ch,
                out_ch: c,
                kernel: 3,
                stride: 1,
                pad: 1,
                affine: true,
                act: Nonlinearity::LeakyRelu,
            });
            dec_conv1.push(ConvSpec {
                name: format!("dec{s}.conv1"),
                in_ch: c,
                out_ch: c,
                kernel: 1,
                stride: 1,
                pad: 0,
                affine: true,
                act: Nonlinearity::LeakyRelu,
            });
        }
        let final_conv = ConvSpec {
            name: "final.conv".into(),
            in_ch: c,
            out_ch: 1,
            kernel: 1,
            stride: 1,
            pad: 0,
            affine: false,
            act: Nonlinearity::None,
        };
        Ok(Generator { cfg, enc_down, enc_keep, skips, dec_conv3, dec_conv1, final_conv })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    fn conv_order(&self) -> Vec<&ConvSpec> {
        let mut order = Vec::new();
        for s in 0..self.cfg.scales {
            order.push(&self.enc_down[s]);
            order.push(&self.enc_keep[s]);
            if let Some(sk) = &self.skips[s] {
                order.push(sk);
            }
            order.push(&self.dec_conv3[s]);
            order.push(&self.dec_conv1[s]);
        }
        order.push(&self.final_conv);
        order
    }

    /// Kaiming-uniform kernels, zero biases, identity affines.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for spec in self.conv_order() {
            let fan_in = (spec.in_ch * spec.kernel * spec.kernel) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let n = spec.out_ch * spec.in_ch * spec.kernel * spec.kernel;
            let kernel = Tensor::new(
                vec![spec.out_ch, spec.in_ch, spec.kernel, spec.kernel],
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
            .unwrap();
            params.push(Param { name: format!("{}.kernel", spec.name), tensor: kernel });
            params.push(Param {
                name: format!("{}.bias", spec.name),
                tensor: Tensor::zeros(vec![spec.out_ch]),
            });
            if spec.affine {
                params.push(Param {
                    name: format!("{}.scale", spec.name),
                    tensor: Tensor::new(vec![spec.out_ch], vec![1.0; spec.out_ch]).unwrap(),
                });
                params.push(Param {
                    name: format!("{}.shift", spec.name),
                    tensor: Tensor::zeros(vec![spec.out_ch]),
                });
            }
        }
        ParamStore { params, clip_bound: None, seed }
    }

    /// The fixed Gaussian noise input `z`.
    pub fn sample_input(&self, seed: u64) -> Tensor {
        // Separate stream from the parameter initialization.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A_5A5A_5A5A_5A5A);
        let s = self.cfg.output_size;
        let n = self.cfg.input_channels * s * s;
        let data = (0..n)
            .map(|_| {
                // Box-Muller keeps us independent of distribution crates here.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                INPUT_NOISE_STD * (-2.0 * u1.ln()).sqrt() * u2.cos()
            })
            .collect();
        Tensor::chw(self.cfg.input_channels, s, s, data).unwrap()
    }

    fn apply_conv(
        &self,
        tape: &mut Tape,
        spec: &ConvSpec,
        input: ValueId,
        ids: &ParamBinding,
    ) -> Result<ValueId> {
        let kernel = ids.get(&format!("{}.kernel", spec.name))?;
        let bias = ids.get(&format!("{}.bias", spec.name))?;
        let mut x = tape.conv2d(input, kernel, bias, spec.stride, spec.pad)?;
        if spec.affine {
            let scale = ids.get(&format!("{}.scale", spec.name))?;
            let shift = ids.get(&format!("{}.shift", spec.name))?;
            x = tape.channel_affine(x, scale, shift)?;
        }
        match spec.act {
            Nonlinearity::LeakyRelu => tape.leaky_relu(x, LEAKY_RELU_SLOPE),
            Nonlinearity::None => Ok(x),
        }
    }

    /// Record the full forward pass on `tape`. Returns the output image
    /// node (shape `(1, S, S)`, values in (0,1)) and the parameter leaf ids
    /// aligned with `params.params` order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        input: &Tensor,
    ) -> Result<(ValueId, Vec<ValueId>)> {
        let (c, h, w) = input.chw_dims()?;
        if c != self.cfg.input_channels || h != self.cfg.output_size || w != self.cfg.output_size {
            return Err(AdError::Shape(format!(
                "generator input {:?} does not match config ({}, {s}, {s})",
                input.dims,
                self.cfg.input_channels,
                s = self.cfg.output_size
            )));
        }
        let param_ids: Vec<ValueId> =
            params.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect();
        let binding = ParamBinding { store: params, ids: &param_ids };

        let mut x = tape.leaf(input.clone());
        let mut scale_inputs = Vec::with_capacity(self.cfg.scales);
        for s in 0..self.cfg.scales {
            scale_inputs.push(x);
            x = self.apply_conv(tape, &self.enc_down[s], x, &binding)?;
            x = self.apply_conv(tape, &self.enc_keep[s], x, &binding)?;
        }
        for s in (0..self.cfg.scales).rev() {
            x = tape.upsample_bilinear_2x(x)?;
            if let Some(skip_spec) = &self.skips[s] {
                let sk = self.apply_conv(tape, skip_spec, scale_inputs[s], &binding)?;
                x = tape.concat(x, sk)?;
            }
            x = self.apply_conv(tape, &self.dec_conv3[s], x, &binding)?;
            x = self.apply_conv(tape, &self.dec_conv1[s], x, &binding)?;
        }
        let logits = self.apply_conv(tape, &self.final_conv, x, &binding)?;
        let out = tape.sigmoid(logits)?;
        Ok((out, param_ids))
    }
}

struct ParamBinding<'a> {
    store: &'a ParamStore,
    ids: &'a [ValueId],
}

impl ParamBinding<'_> {
    fn get(&self, name: &str) -> Result<ValueId> {
        self.store
            .index_of(name)
            .map(|i| self.ids[i])
            .ok_or_else(|| AdError::Config(format!("missing parameter '{name}'")))
    }
}

/// Build the generator, its initial parameters, and the fixed input.
pub fn build_network(cfg: NetworkConfig, seed: u64) -> Result<(Generator, ParamStore, Tensor)> {
    let gen = Generator::new(cfg)?;
    let params = gen.init_params(seed);
    let z = gen.sample_input(seed);
    Ok((gen, params, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            scales: 1,
            channels_per_layer: 2,
            skip_channels: vec![0],
            input_channels: 2,
            output_size: 16,
        }
    }

    #[test]
    fn full_scale_parameter_count() {
        let (_, params, _) = build_network(NetworkConfig::full_scale(352), 0).unwrap();
        let n = params.total_parameters();
        assert!(
            (1_800_000..=2_400_000).contains(&n),
            "full-scale parameter count {n}"
        );
    }

    #[test]
    fn indivisible_output_size_is_rejected() {
        let mut cfg = NetworkConfig::full_scale(352);
        cfg.output_size = 362;
        assert!(build_network(cfg, 0).is_err());
    }

    #[test]
    fn tiny_net_output_shape_and_range() {
        let (gen, params, z) = build_network(tiny_cfg(), 3).unwrap();
        let mut tape = Tape::new().with_nan_checks();
        let (out, _) = gen.forward(&mut tape, &params, &z).unwrap();
        let t = tape.value(out);
        assert_eq!(t.dims, vec![1, 16, 16]);
        assert!(t.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn same_seed_same_initial_output() {
        let run = || {
            let (gen, params, z) = build_network(tiny_cfg(), 9).unwrap();
            let mut tape = Tape::new();
            let (out, _) = gen.forward(&mut tape, &params, &z).unwrap();
            tape.value(out).data.clone()
        };
        assert_eq!(run(), run());
        let (gen, params, z) = build_network(tiny_cfg(), 10).unwrap();
        let mut tape = Tape::new();
        let (out, _) = gen.forward(&mut tape, &params, &z).unwrap();
        assert_ne!(run(), tape.value(out).data);
    }

    #[test]
    fn zero_params_give_constant_half_output() {
        let (gen, params, z) = build_network(tiny_cfg(), 4).unwrap();
        let zeroed = params.zeroed();
        let mut tape = Tape::new();
        let (out, _) = gen.forward(&mut tape, &zeroed, &z).unwrap();
        assert!(tape.value(out).data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_is_sensitive_to_single_parameter_perturbations() {
        use rand::{Rng, SeedableRng};
        let (gen, params, z) = build_network(
            NetworkConfig {
                scales: 2,
                channels_per_layer: 4,
                skip_channels: vec![4, 0],
                input_channels: 3,
                output_size: 16,
            },
            11,
        )
        .unwrap();
        let base = {
            let mut tape = Tape::new();
            let (out, _) = gen.forward(&mut tape, &params, &z).unwrap();
            tape.value(out).data.clone()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let pi = rng.gen_range(0..params.params.len());
            let ei = rng.gen_range(0..params.params[pi].tensor.len());
            let mut perturbed = params.clone();
            perturbed.params[pi].tensor.data[ei] += 1e-2;
            let mut tape = Tape::new();
            let (out, _) = gen.forward(&mut tape, &perturbed, &z).unwrap();
            let changed = tape
                .value(out)
                .data
                .iter()
                .zip(&base)
                .any(|(a, b)| (a - b).abs() > 0.0);
            assert!(changed, "perturbing {}[{ei}] left output unchanged", params.params[pi].name);
        }
    }

    #[test]
    fn clipping_is_idempotent_and_bounded() {
        let (_, mut params, _) = build_network(tiny_cfg(), 5).unwrap();
        params.params[0].tensor.data[0] = 10.0;
        let within = params.clone();
        clip_params(&mut params, 0.5).unwrap();
        assert!(params.max_abs() <= 0.5);
        let snapshot = params.clone();
        clip_params(&mut params, 0.5).unwrap();
        for (a, b) in params.params.iter().zip(&snapshot.params) {
            assert_eq!(a.tensor.data, b.tensor.data);
        }
        // Params already inside the box are untouched.
        let mut small = within.clone();
        clip_params(&mut small, 1e6).unwrap();
        for (a, b) in small.params.iter().zip(&within.params) {
            assert_eq!(a.tensor.data, b.tensor.data);
        }
    }
}
