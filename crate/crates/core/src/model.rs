//! A trainable beamforming network plus its constraint-layer settings.
//!
//! All forward passes take instances in model units (see
//! [`ChannelInstance::to_model_units`]) and produce beamformers in model
//! units; [`Model::infer`] wraps the conversion for raw instances.

use crate::autodiff::{Tape, Tensor};
use crate::baselines::vanilla::{self, VanillaConfig, VanillaParams};
use crate::cplx::CTensor;
use crate::decoder::{self, DecoderConfig};
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qos::{Beamformer, InstanceTensors};
use crate::scenario::ChannelInstance;

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    /// Hierarchical encoder followed by the structured decoder.
    Hpe { cfg: EncoderConfig, params: EncoderParams },
    /// Flat-attention ablation emitting beamformers directly.
    Vanilla { cfg: VanillaConfig, params: VanillaParams },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: Network,
    pub decoder: DecoderConfig,
}

/// Tape handles produced by [`Model::forward`].
pub struct Forward<'t> {
    /// Parameter leaves in [`Model::visit`] order.
    pub params: Vec<Tensor<'t>>,
    /// One `N x M` beamformer per instance.
    pub w: Vec<CTensor<'t>>,
}

impl Model {
    pub fn hpe(cfg: EncoderConfig, decoder: DecoderConfig, seed: u64) -> Result<Self> {
        decoder.validate()?;
        Ok(Self {
            net: Network::Hpe {
                cfg,
                params: EncoderParams::init(&cfg, seed)?,
            },
            decoder,
        })
    }

    pub fn vanilla(cfg: VanillaConfig, decoder: DecoderConfig, seed: u64) -> Result<Self> {
        decoder.validate()?;
        Ok(Self {
            net: Network::Vanilla {
                cfg,
                params: VanillaParams::init(&cfg, seed)?,
            },
            decoder,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self.net {
            Network::Hpe { .. } => "hpe",
            Network::Vanilla { .. } => "vanilla",
        }
    }

    pub fn antennas(&self) -> usize {
        match &self.net {
            Network::Hpe { cfg, .. } => cfg.n,
            Network::Vanilla { cfg, .. } => cfg.n,
        }
    }

    fn heads(&self) -> usize {
        match &self.net {
            Network::Hpe { cfg, .. } => cfg.heads,
            Network::Vanilla { cfg, .. } => cfg.heads,
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(String, &Matrix)) {
        match &self.net {
            Network::Hpe { params, .. } => params.visit(f),
            Network::Vanilla { params, .. } => params.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Matrix)) {
        match &mut self.net {
            Network::Hpe { params, .. } => params.visit_mut(f),
            Network::Vanilla { params, .. } => params.visit_mut(f),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }

    /// Builds the batch forward pass with `steps` constraint layers.
    /// Parameters are tape leaves that receive gradients when `trainable`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        insts: &[&ChannelInstance],
        steps: usize,
        trainable: bool,
    ) -> Result<Forward<'t>> {
        for inst in insts {
            if inst.antennas() != self.antennas() {
                return Err(Error::InvalidInstance(format!(
                    "model expects {} antennas, instance has {}",
                    self.antennas(),
                    inst.antennas()
                )));
            }
        }
        let mut bind = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let mut leaves = Vec::new();
        let heads = self.heads();
        let w = match &self.net {
            Network::Hpe { params, .. } => {
                let p = params.map(&mut bind);
                p.visit(&mut |_, t| leaves.push(*t));
                let enc = encoder::encode_batch(tape, &p, heads, insts)?;
                insts
                    .iter()
                    .zip(enc)
                    .map(|(inst, e)| {
                        let it = InstanceTensors::new(tape, inst);
                        decoder::decode_t(&it, e.alpha, e.lambda, &self.decoder, steps)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Network::Vanilla { params, .. } => {
                let p = params.map(&mut bind);
                p.visit(&mut |_, t| leaves.push(*t));
                let out = vanilla::forward_batch(tape, &p, heads, insts)?;
                insts
                    .iter()
                    .zip(out)
                    .map(|(inst, mut w)| {
                        let it = InstanceTensors::new(tape, inst);
                        for _ in 0..steps {
                            w = decoder::constraint_step(&it, w, self.decoder.eta)?;
                        }
                        Ok(w)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Forward { params: leaves, w })
    }

    /// Beamformer after `steps` constraint layers, both in model units.
    pub fn run_model_units(&self, inst: &ChannelInstance, steps: usize) -> Result<Beamformer> {
        let tape = Tape::new();
        let out = self.forward(&tape, &[inst], steps, false)?;
        Ok(Beamformer::new(out.w[0].value()))
    }

    /// Beamformer in watts for an instance in raw units.
    pub fn infer(&self, inst: &ChannelInstance, steps: usize) -> Result<Beamformer> {
        Ok(self.run_model_units(&inst.to_model_units(), steps)?.model_to_watts())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qos;
    use crate::scenario::{sample_instance, ScenarioConfig};

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            n: 4,
            d: 8,
            layers: 1,
            heads: 2,
            d_ff: 8,
        }
    }

    #[test]
    fn shapes_and_units() {
        let model = Model::hpe(tiny(), DecoderConfig::default(), 0).unwrap();
        let inst = sample_instance(&ScenarioConfig::uniform(4, 3, 2, 10.0), 0).unwrap();
        let w = model.infer(&inst, 3).unwrap();
        assert_eq!(w.w.shape(), (4, 3));
        let wm = model.run_model_units(&inst.to_model_units(), 3).unwrap();
        let ratio = qos::total_power(&w) / qos::total_power(&wm);
        assert!((ratio / 1e-3 - 1.0).abs() < 1e-12);
        let s_raw = qos::sinr(&inst, &w).unwrap();
        let s_model = qos::sinr(&inst.to_model_units(), &wm).unwrap();
        for (a, b) in s_raw.iter().zip(&s_model) {
            assert!((a - b).abs() <= 1e-9 * b.max(1e-12));
        }
    }

    #[test]
    fn antenna_mismatch_is_reported() {
        let model = Model::hpe(tiny(), DecoderConfig::default(), 0).unwrap();
        let inst = sample_instance(&ScenarioConfig::uniform(5, 1, 2, 10.0), 0).unwrap();
        assert!(matches!(model.infer(&inst, 0), Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn vanilla_output_shape_for_any_k() {
        let cfg = VanillaConfig {
            n: 4,
            d: 8,
            blocks: 2,
            heads: 2,
            d_ff: 8,
        };
        let model = Model::vanilla(cfg, DecoderConfig { r_train: 0, r_test: 0, ..Default::default() }, 1).unwrap();
        for k in [1, 3, 7] {
            let inst = sample_instance(&ScenarioConfig::uniform(4, 2, k, 10.0), 0).unwrap();
            assert_eq!(model.infer(&inst, 0).unwrap().w.shape(), (4, 2));
        }
    }
}
