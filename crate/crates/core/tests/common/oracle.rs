//! Loop-based re-evaluation of the single-step heads.

use kvplm::models::{
    ngram_step, predict_distribution, AttentionParams, NgramParams, OutputParams, SlidingMemory, StepOutput,
};
use kvplm::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| rand_vec(rng, c)).collect()
}

fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
}

fn mat_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn tanh(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

struct Head {
    w_y: Mat,
    w_h: Mat,
    w: Vec<f64>,
    w_r: Mat,
    w_x: Mat,
}

impl Head {
    fn random(rng: &mut ChaCha8Rng, d: usize) -> Self {
        Head {
            w_y: rand_mat(rng, d, d),
            w_h: rand_mat(rng, d, d),
            w: rand_vec(rng, d),
            w_r: rand_mat(rng, d, d),
            w_x: rand_mat(rng, d, d),
        }
    }

    fn params(&self) -> AttentionParams<f64> {
        AttentionParams {
            w_y: tensor(&self.w_y),
            w_h: tensor(&self.w_h),
            w: Tensor::vector(self.w.clone()),
            w_r: tensor(&self.w_r),
            w_x: tensor(&self.w_x),
        }
    }

    /// Scores from `keys` against `query`, context from `values`, output
    /// from the context and `pred`.
    fn eval(&self, keys: &[Vec<f64>], values: &[Vec<f64>], query: &[f64], pred: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let from_pred = mat_vec(&self.w_x, pred);
        if keys.is_empty() {
            return (tanh(&from_pred), vec![]);
        }
        let q = mat_vec(&self.w_h, query);
        let scores: Vec<f64> = keys
            .iter()
            .map(|y| {
                let m = tanh(&add(&mat_vec(&self.w_y, y), &q));
                m.iter().zip(&self.w).map(|(a, b)| a * b).sum()
            })
            .collect();
        let alpha = softmax(&scores);
        let mut r = vec![0.0; query.len()];
        for (a, v) in alpha.iter().zip(values) {
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri += a * vi;
            }
        }
        (tanh(&add(&mat_vec(&self.w_r, &r), &from_pred)), alpha)
    }
}

/// Largest absolute difference; infinite on a length mismatch.
fn max_diff(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
}

pub type StepFn = fn(&[f64], &SlidingMemory<f64>, &AttentionParams<f64>) -> kvplm::Result<StepOutput<f64>>;

/// Worst deviation over `instances` random cases of a `parts`-way split head
/// (1 attention, 2 key-value, 3 key-value-predict). Memories range from empty
/// to overfull.
pub fn split_head_error(parts: usize, seed_base: u64, instances: u64, step: StepFn) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let d: usize = rng.random_range(1..6);
        let window: usize = rng.random_range(1..6);
        let filled = rng.random_range(0..=window + 2);
        let head = Head::random(&mut rng, d);
        let h = rand_vec(&mut rng, parts * d);
        let history: Vec<Vec<f64>> = (0..filled).map(|_| rand_vec(&mut rng, parts * d)).collect();
        let kept = &history[filled.saturating_sub(window)..];
        let keys: Vec<Vec<f64>> = kept.iter().map(|x| x[..d].to_vec()).collect();
        let value_of = |x: &[f64]| if parts == 1 { x.to_vec() } else { x[d..2 * d].to_vec() };
        let values: Vec<Vec<f64>> = kept.iter().map(|x| value_of(x)).collect();
        let pred = match parts {
            1 => h.clone(),
            2 => h[d..].to_vec(),
            _ => h[2 * d..].to_vec(),
        };
        let (want_h, want_a) = head.eval(&keys, &values, &h[..d], &pred);

        let memory = if parts == 1 {
            let all: Vec<Vec<f64>> = history.clone();
            SlidingMemory::from_vectors(window, &all, None).unwrap()
        } else {
            let k: Vec<Vec<f64>> = history.iter().map(|x| x[..d].to_vec()).collect();
            let v: Vec<Vec<f64>> = history.iter().map(|x| value_of(x)).collect();
            SlidingMemory::from_vectors(window, &k, Some(&v)).unwrap()
        };
        let got = step(&h, &memory, &head.params()).unwrap();
        worst = worst.max(max_diff(&got.hidden, &want_h)).max(max_diff(&got.attention, &want_a));
    }
    worst
}

pub fn ngram_error(seed_base: u64, instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let order = rng.random_range(2..6);
        let parts = order - 1;
        let d = rng.random_range(1..5);
        let k = parts * d;
        let w_n = rand_mat(&mut rng, d, parts * d);
        let available = rng.random_range(1..=order + 1);
        let outputs: Vec<Vec<f64>> = (0..available).map(|_| rand_vec(&mut rng, k)).collect();
        let mut stacked = Vec::with_capacity(parts * d);
        for i in 0..parts {
            match outputs.get(i) {
                Some(h) => stacked.extend_from_slice(&h[i * d..(i + 1) * d]),
                None => stacked.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        let want = tanh(&mat_vec(&w_n, &stacked));
        let got = ngram_step(&outputs, &NgramParams { w_n: tensor(&w_n) }).unwrap();
        worst = worst.max(max_diff(&got, &want));
    }
    worst
}

pub fn predict_error(seed_base: u64, instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let (v, d) = (rng.random_range(2..12), rng.random_range(1..6));
        let w = rand_mat(&mut rng, v, d);
        let b = rand_vec(&mut rng, v);
        let h = rand_vec(&mut rng, d);
        let want = softmax(&add(&mat_vec(&w, &h), &b));
        let out = OutputParams {
            weight: tensor(&w),
            bias: Tensor::vector(b),
        };
        worst = worst.max(max_diff(&predict_distribution(&h, &out).unwrap(), &want));
    }
    worst
}


