use std::collections::HashMap;

use rand_distr::{Distribution, Normal, Uniform};

use super::{param_layout, Modality, ModelConfig, ModelInput, ParamInit, ParamSpec};
use crate::error::{config_err, shape_err, Error, Result};
use crate::rng;
use crate::tensor::{softmax_rows, Graph, MhaParams, Scalar, Tensor, Var};

const NORM_EPS: f64 = 1e-5;

/// Class probabilities and raw logits for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    /// Reading score: P(class 1) for a binary head, 1 - P(class 0)
    /// (any reading class) for multiclass heads.
    pub fn score(&self) -> f64 {
        match self.probs.len() {
            2 => self.probs[1],
            _ => 1.0 - self.probs.first().copied().unwrap_or(1.0),
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Tape handles of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// One leaf per parameter tensor, in layout order.
    pub params: Vec<Var>,
}

/// Parameters plus the config they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    cfg: ModelConfig,
    layout: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    params: Vec<Tensor<T>>,
    init_seed: u64,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let layout = param_layout(&cfg)?;
        let mut r = rng::stream(seed, 0);
        let emb = Normal::new(0.0, 0.02).expect("valid sigma");
        let mut params = Vec::with_capacity(layout.len());
        for spec in &layout {
            let n = spec.len();
            let data: Vec<f64> = match spec.init {
                ParamInit::KaimingUniform { fan_in } => {
                    let b = (6.0 / fan_in as f64).sqrt();
                    let u = Uniform::new_inclusive(-b, b).expect("valid bound");
                    (0..n).map(|_| u.sample(&mut r)).collect()
                }
                ParamInit::Zeros => vec![0.0; n],
                ParamInit::Ones => vec![1.0; n],
                ParamInit::Embedding => (0..n).map(|_| emb.sample(&mut r)).collect(),
            };
            params.push(Tensor::from_f64(&spec.shape, &data)?);
        }
        Self::from_parts(cfg, seed, params)
    }

    /// Wraps existing tensors; shapes must match the config's layout.
    pub fn from_parts(cfg: ModelConfig, init_seed: u64, params: Vec<Tensor<T>>) -> Result<Self> {
        let layout = param_layout(&cfg)?;
        if layout.len() != params.len() {
            return shape_err(format!("{} tensors for a layout of {}", params.len(), layout.len()));
        }
        for (spec, p) in layout.iter().zip(&params) {
            if spec.shape != p.shape() {
                return shape_err(format!("{} is {:?}, expected {:?}", spec.name, p.shape(), spec.shape));
            }
        }
        let index = layout.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(Model {
            cfg,
            layout,
            index,
            params,
            init_seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.param_index(name).map(|i| &self.params[i])
    }

    /// Indices of the parameters that belong to modality `m`'s encoder.
    pub fn encoder_params(&self, m: Modality) -> Vec<usize> {
        let prefix = format!("{}.", m.name());
        (0..self.layout.len())
            .filter(|&i| self.layout[i].name.starts_with(&prefix))
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            index: self.index.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            init_seed: self.init_seed,
        }
    }

    /// Records the forward pass with modality blocks in the standard order.
    pub fn forward(&self, g: &mut Graph<T>, input: &ModelInput<T>) -> Result<Forward> {
        self.forward_ordered(g, input, &Modality::ALL)
    }

    /// Forward pass with token blocks concatenated in `order`. Blocks keep
    /// their own type and position embeddings, so any order is valid.
    pub fn forward_ordered(&self, g: &mut Graph<T>, input: &ModelInput<T>, order: &[Modality]) -> Result<Forward> {
        let have = self.cfg.modalities();
        for m in Modality::ALL {
            if input.get(m).is_some() && !have.contains(m) {
                return config_err(format!("model has no {} encoder", m.name()));
            }
        }
        if input.present().is_empty() {
            return Err(Error::NoModality);
        }
        let params: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let p = |name: &str| params[self.index[name]];
        let d = self.cfg.dim;

        let mut blocks = vec![p("cls")];
        for &m in order {
            let Some(x) = input.get(m) else { continue };
            let name = m.name();
            let mut h = g.leaf(x.clone());
            for i in 0..self.cfg.conv_layers {
                let w = p(&format!("{name}.conv{i}.weight"));
                let b = p(&format!("{name}.conv{i}.bias"));
                h = match m {
                    Modality::Rgb => {
                        let k = self.cfg.rgb_kernel;
                        g.conv2d(h, w, Some(b), self.cfg.stride, k / 2)?
                    }
                    _ => {
                        let k = self.cfg.temporal_kernel;
                        g.conv1d(h, w, Some(b), self.cfg.stride, k / 2)?
                    }
                };
                if i + 1 < self.cfg.conv_layers {
                    h = g.gelu(h);
                }
            }
            let t = g.to_tokens(h)?;
            let pos = p(&format!("{name}.pos"));
            if g.value(t).shape() != g.value(pos).shape() {
                return shape_err(format!(
                    "{name} produced {:?} tokens, model expects {:?}",
                    g.value(t).shape(),
                    g.value(pos).shape()
                ));
            }
            let t = g.add(t, pos)?;
            blocks.push(g.add_row(t, p(&format!("{name}.type")))?);
        }
        let mut x = g.concat_rows(&blocks)?;
        debug_assert_eq!(g.value(x).shape()[1], d);

        for l in 0..self.cfg.layers {
            let q = |s: &str| p(&format!("layer{l}.{s}"));
            let n1 = g.layer_norm(x, q("norm1.gamma"), q("norm1.beta"), NORM_EPS)?;
            let mha = MhaParams {
                wq: q("attn.wq"),
                bq: q("attn.bq"),
                wk: q("attn.wk"),
                bk: q("attn.bk"),
                wv: q("attn.wv"),
                bv: q("attn.bv"),
                wo: q("attn.wo"),
                bo: q("attn.bo"),
            };
            let a = g.multi_head_attention(n1, self.cfg.heads, &mha)?;
            let h = g.add(x, a)?;
            let n2 = g.layer_norm(h, q("norm2.gamma"), q("norm2.beta"), NORM_EPS)?;
            let u = g.linear(n2, q("mlp.w1"), Some(q("mlp.b1")))?;
            let u = g.gelu(u);
            let u = g.linear(u, q("mlp.w2"), Some(q("mlp.b2")))?;
            x = g.add(h, u)?;
        }
        let x = g.layer_norm(x, p("final_norm.gamma"), p("final_norm.beta"), NORM_EPS)?;
        let cls = g.row(x, 0)?;
        let logits = g.linear(cls, p("head.weight"), Some(p("head.bias")))?;
        Ok(Forward { logits, params })
    }

    pub fn predict(&self, input: &ModelInput<T>) -> Result<Prediction> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, input)?;
        Ok(prediction(g.value(f.logits)))
    }

    /// Cross-entropy loss, parameter gradients (zero for parameters the
    /// pass did not touch) and the prediction.
    pub fn loss_and_grads(&self, input: &ModelInput<T>, label: usize) -> Result<(f64, Vec<Vec<T>>, Prediction)> {
        if label >= self.cfg.classes {
            return Err(Error::Data(format!(
                "label {label} out of range for {} classes",
                self.cfg.classes
            )));
        }
        let mut g = Graph::new();
        let f = self.forward(&mut g, input)?;
        let loss = g.softmax_cross_entropy(f.logits, label)?;
        let grads = g.backward(loss)?;
        let out = f
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.get(v).map_or_else(|| vec![T::zero(); p.len()], <[T]>::to_vec))
            .collect();
        Ok((g.value(loss).data()[0].as_f64(), out, prediction(g.value(f.logits))))
    }
}

fn prediction<T: Scalar>(logits: &Tensor<T>) -> Prediction {
    let k = logits.len();
    Prediction {
        probs: softmax_rows(logits.data(), k).iter().map(|v| v.as_f64()).collect(),
        logits: logits.to_f64_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModalitySet, ModelSize};

    fn input(cfg: &ModelConfig, seed: u64) -> ModelInput<f64> {
        let mut r = rng::stream(seed, 9);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut t = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            let v: Vec<f64> = (0..len).map(|_| n.sample(&mut r)).collect();
            Some(Tensor::from_f64(shape, &v).unwrap())
        };
        ModelInput {
            gaze: t(&[3, cfg.gaze_samples().unwrap()]),
            rgb: t(&[3, 64, 64]),
            imu: t(&[6, cfg.imu_samples().unwrap()]),
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = ModelConfig::new(ModelSize::S, 7);
        let m = Model::<f64>::new(cfg.clone(), 3).unwrap();
        let p = m.predict(&input(&cfg, 1)).unwrap();
        assert_eq!(p.probs.len(), 7);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn block_order_does_not_change_the_output() {
        let cfg = ModelConfig::new(ModelSize::S, 2);
        let m = Model::<f64>::new(cfg.clone(), 4).unwrap();
        let x = input(&cfg, 2);
        let run = |order: &[Modality]| {
            let mut g = Graph::new();
            let f = m.forward_ordered(&mut g, &x, order).unwrap();
            g.value(f.logits).to_f64_vec()
        };
        let a = run(&Modality::ALL);
        let b = run(&[Modality::Imu, Modality::Gaze, Modality::Rgb]);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let cfg = ModelConfig::new(ModelSize::Xs, 2);
        let m = Model::<f32>::new(cfg, 0).unwrap();
        let empty = ModelInput {
            gaze: None,
            rgb: None,
            imu: None,
        };
        assert!(matches!(m.predict(&empty), Err(Error::NoModality)));
    }

    #[test]
    fn extra_modality_is_rejected() {
        let full = ModelConfig::new(ModelSize::Xs, 2);
        let cfg = full.clone().restrict(ModalitySet::only(Modality::Gaze));
        let m = Model::<f64>::new(cfg, 0).unwrap();
        assert!(m.predict(&input(&full, 0)).is_err());
        assert!(m
            .predict(&input(&full, 0).restrict(ModalitySet::only(Modality::Gaze)))
            .is_ok());
    }
}
