use crate::error::{Error, Result};
use crate::models::config::{ModelConfig, Variant};
use crate::numerics::{Scalar, Tensor};

pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    fn new(name: &'static str, shape: &[usize]) -> Self {
        ParamSpec {
            name,
            shape: shape.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Positions of the attention projections inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIndex {
    pub w_y: usize,
    pub w_h: usize,
    pub w: usize,
    pub w_r: usize,
    pub w_x: usize,
}

/// Positions of every tensor inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIndex {
    pub embedding: usize,
    pub lstm_w_input: usize,
    pub lstm_w_hidden: usize,
    pub lstm_bias: usize,
    pub attention: Option<AttentionIndex>,
    pub ngram: Option<usize>,
    pub out_weight: usize,
    pub out_bias: usize,
}

/// Ordered parameter list for a configuration: names, shapes and where each
/// lives. The order is also the checkpoint order.
pub fn layout(config: &ModelConfig) -> (Vec<ParamSpec>, ParamIndex) {
    let (v, w, k) = (config.vocab_size, config.embed_dim, config.hidden);
    let d = config.part_dim();
    let mut specs = vec![
        ParamSpec::new("embedding", &[v, w]),
        ParamSpec::new("lstm.w_input", &[4 * k, w]),
        ParamSpec::new("lstm.w_hidden", &[4 * k, k]),
        ParamSpec::new("lstm.bias", &[4 * k]),
    ];
    let mut attention = None;
    let mut ngram = None;
    if config.variant.is_attentive() {
        let base = specs.len();
        specs.extend([
            ParamSpec::new("attn.w_y", &[d, d]),
            ParamSpec::new("attn.w_h", &[d, d]),
            ParamSpec::new("attn.w", &[d]),
            ParamSpec::new("attn.w_r", &[d, d]),
            ParamSpec::new("attn.w_x", &[d, d]),
        ]);
        attention = Some(AttentionIndex {
            w_y: base,
            w_h: base + 1,
            w: base + 2,
            w_r: base + 3,
            w_x: base + 4,
        });
    }
    if config.variant == Variant::Ngram {
        ngram = Some(specs.len());
        let parts = config.variant.parts(config.order);
        specs.push(ParamSpec::new("ngram.w_n", &[d, parts * d]));
    }
    let out_weight = specs.len();
    specs.push(ParamSpec::new("out.weight", &[v, d]));
    specs.push(ParamSpec::new("out.bias", &[v]));
    let index = ParamIndex {
        embedding: 0,
        lstm_w_input: 1,
        lstm_w_hidden: 2,
        lstm_bias: 3,
        attention,
        ngram,
        out_weight,
        out_bias: out_weight + 1,
    };
    (specs, index)
}

/// All trainable tensors of one model, in [`layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    specs: Vec<ParamSpec>,
    index: ParamIndex,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    /// Uniform(−0.1, 0.1) everywhere except the LSTM forget-gate bias, which
    /// starts at 1. Tensor `i` draws from stream `i` of `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(config);
        let mut tensors = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            tensors.push(Tensor::init_uniform_stream(
                &s.shape,
                -INIT_RANGE,
                INIT_RANGE,
                seed,
                i as u64,
            )?);
        }
        crate::numerics::set_forget_bias(&mut tensors[index.lstm_bias], config.hidden);
        Ok(Params {
            specs,
            index,
            tensors,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(config);
        let tensors = specs.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Ok(Params {
            specs,
            index,
            tensors,
        })
    }

    /// Wraps tensors that must match the layout of `config` exactly.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(config);
        if tensors.len() != specs.len() {
            return Err(Error::shape(
                "params",
                format!("{} tensors for a layout of {}", tensors.len(), specs.len()),
            ));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if t.shape() != s.shape.as_slice() {
                return Err(Error::shape(
                    "params",
                    format!("{} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape),
                ));
            }
        }
        Ok(Params {
            specs,
            index,
            tensors,
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn index(&self) -> &ParamIndex {
        &self.index
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            specs: self.specs.clone(),
            index: self.index,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_ranges_and_forget_bias() {
        let cfg = ModelConfig::new(Variant::KeyValuePredict, 4, 6, 9).with_window(3);
        let p = Params::<f64>::init(&cfg, 5).unwrap();
        let bias = p.get("lstm.bias").unwrap().values();
        assert!(bias[6..12].iter().all(|&b| b == 1.0));
        for (s, t) in p.specs().iter().zip(p.tensors()) {
            if s.name != "lstm.bias" {
                assert!(t.values().iter().all(|v| v.abs() < INIT_RANGE), "{}", s.name);
            }
        }
        assert_eq!(p, Params::<f64>::init(&cfg, 5).unwrap());
        assert_ne!(p, Params::<f64>::init(&cfg, 6).unwrap());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let cfg = ModelConfig::new(Variant::Lstm, 3, 2, 5);
        let p = Params::<f32>::zeros(&cfg).unwrap();
        let mut t = p.clone().into_tensors();
        assert!(Params::from_tensors(&cfg, t.clone()).is_ok());
        t[0] = Tensor::zeros(&[5, 4]);
        assert!(Params::from_tensors(&cfg, t).is_err());
    }
}
