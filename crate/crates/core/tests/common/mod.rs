#![allow(dead_code)]

pub mod oracle;

use kvplm::corpus::Window;
use kvplm::models::{CarriedState, Model, ModelConfig, Params, Variant};
use kvplm::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Variants with the small hidden sizes used for gradient checks.
pub const SMALL_VARIANTS: [(Variant, usize); 5] = [
    (Variant::Lstm, 6),
    (Variant::Attention, 6),
    (Variant::KeyValue, 6),
    (Variant::KeyValuePredict, 9),
    (Variant::Ngram, 9),
];

pub fn random_window(rng: &mut ChaCha8Rng, batch: usize, unroll: usize, vocab: u32) -> Window {
    let n = batch * unroll;
    Window {
        batch,
        unroll,
        inputs: (0..n).map(|_| rng.random_range(0..vocab)).collect(),
        targets: (0..n).map(|_| rng.random_range(0..vocab)).collect(),
        resets: (0..n).map(|_| rng.random_bool(0.1)).collect(),
        offset: 0,
    }
}

/// A model-loss instance: w=5, L=3, |V|=13, batch 2, unroll 4. A warm-up
/// window runs first so the checked window starts from carried state and a
/// partly filled memory.
pub struct LossInstance {
    pub model: Model<f64>,
    pub window: Window,
    pub state: CarriedState<f64>,
}

impl LossInstance {
    pub fn new(variant: Variant, hidden: usize, seed: u64) -> Self {
        let config = ModelConfig::new(variant, 5, hidden, 13).with_window(3);
        let model = Model::<f64>::init(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let warm = random_window(&mut rng, 2, 4, 13);
        let window = random_window(&mut rng, 2, 4, 13);
        let (_, _, state) = model.window_loss(&warm, &model.initial_state(2)).unwrap();
        LossInstance {
            model,
            window,
            state,
        }
    }

    pub fn loss(&self, tensors: &[Tensor<f64>]) -> (f64, Vec<Vec<f64>>) {
        let config = *self.model.config();
        let params = Params::from_tensors(&config, tensors.to_vec()).unwrap();
        let m = Model::new(config, params).unwrap();
        let (loss, grads, _) = m.window_loss(&self.window, &self.state).unwrap();
        (loss, grads)
    }

    pub fn tensors(&self) -> &[Tensor<f64>] {
        self.model.params().tensors()
    }
}

/// Analytic and central-difference gradients for every coordinate.
pub fn gradient_pairs<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Vec<(f64, f64)>
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let (_, analytic) = f(params);
    let mut work = params.to_vec();
    let mut out = Vec::new();
    for (p, grads) in analytic.iter().enumerate() {
        for i in 0..work[p].len() {
            let orig = work[p].values()[i];
            work[p].values_mut()[i] = orig + eps;
            let plus = f(&work).0;
            work[p].values_mut()[i] = orig - eps;
            let minus = f(&work).0;
            work[p].values_mut()[i] = orig;
            out.push((grads[i], (plus - minus) / (2.0 * eps)));
        }
    }
    out
}
