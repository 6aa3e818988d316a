//! The per-step output heads.
//!
//! The graph-level functions work on a batch of rows and are what the
//! models run. The `*_step` functions wrap them for a single stream and
//! plain vectors.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::models::config::Variant;
use crate::models::memory::SlidingMemory;
use crate::numerics::{softmax_row, Graph, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionVars {
    pub w_y: Var,
    pub w_h: Var,
    pub w: Var,
    pub w_r: Var,
    pub w_x: Var,
}

/// A memory slot inside the current graph. `proj` caches `key · W^Yᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct Slot {
    pub key: Var,
    pub value: Var,
    pub proj: Var,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct WorkingMemory {
    pub capacity: usize,
    pub slots: VecDeque<Slot>,
}

impl WorkingMemory {
    pub fn push(&mut self, slot: Slot) {
        self.slots.push_back(slot);
        while self.slots.len() > self.capacity {
            self.slots.pop_front();
        }
    }

    pub fn clear_stream(&mut self, row: usize) {
        for s in &mut self.slots {
            s.valid[row] = false;
        }
    }
}

/// Attention weights of one step: `batch × slots`, oldest slot first.
pub(crate) struct Attended {
    pub hidden: Var,
    pub weights: Option<(Var, Vec<bool>)>,
}

/// Splits an LSTM output into (key, value, predict) views for the variant.
pub(crate) fn split_output<T: Scalar>(
    g: &mut Graph<'_, T>,
    variant: Variant,
    h: Var,
) -> Result<(Var, Var, Var)> {
    let (_, k) = g.shape(h);
    match variant {
        Variant::Attention => Ok((h, h, h)),
        Variant::KeyValue => {
            if k % 2 != 0 {
                return Err(Error::shape("key_value_step", format!("output of odd length {k}")));
            }
            let d = k / 2;
            let key = g.slice_cols(h, 0, d)?;
            let value = g.slice_cols(h, d, d)?;
            Ok((key, value, value))
        }
        Variant::KeyValuePredict => {
            if k % 3 != 0 {
                return Err(Error::shape(
                    "key_value_predict_step",
                    format!("output length {k} is not divisible by 3"),
                ));
            }
            let d = k / 3;
            let key = g.slice_cols(h, 0, d)?;
            let value = g.slice_cols(h, d, d)?;
            let pred = g.slice_cols(h, 2 * d, d)?;
            Ok((key, value, pred))
        }
        other => Err(Error::Unsupported(format!("variant {other} has no attention"))),
    }
}

/// ```text
/// M_j = tanh(W^Y key_j + W^h key_t)      for every slot j
/// α   = softmax over valid slots of wᵀM_j
/// r   = Σ_j α_j value_j
/// h*  = tanh(W^r r + W^x pred_t)
/// ```
/// Streams with no valid slot get `h* = tanh(W^x pred_t)`.
pub(crate) fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    key: Var,
    pred: Var,
    memory: &WorkingMemory,
    p: &AttentionVars,
) -> Result<Attended> {
    let from_pred = g.matmul_bt(pred, p.w_x)?;
    if memory.slots.is_empty() {
        return Ok(Attended {
            hidden: g.tanh(from_pred),
            weights: None,
        });
    }
    let batch = g.shape(key).0;
    let query = g.matmul_bt(key, p.w_h)?;
    let mut scores = Vec::with_capacity(memory.slots.len());
    for slot in &memory.slots {
        let pre = g.add(slot.proj, query)?;
        let m = g.tanh(pre);
        scores.push(g.matmul_bt(m, p.w)?);
    }
    let scores = g.concat_cols(&scores)?;
    let n = memory.slots.len();
    let mut mask = vec![false; batch * n];
    for (j, slot) in memory.slots.iter().enumerate() {
        for b in 0..batch {
            mask[b * n + j] = slot.valid[b];
        }
    }
    let alpha = g.masked_softmax_rows(scores, &mask)?;
    let values: Vec<Var> = memory.slots.iter().map(|s| s.value).collect();
    let context = g.weighted_sum(alpha, &values)?;
    let from_context = g.matmul_bt(context, p.w_r)?;
    let pre = g.add(from_context, from_pred)?;
    Ok(Attended {
        hidden: g.tanh(pre),
        weights: Some((alpha, mask)),
    })
}

/// `h* = tanh(W^N [h_t^1; h_{t−1}^2; …; h_{t−N+2}^{N−1}])`, where `h^i` is the
/// i-th of N−1 equal slices. `history[i]` is the output from i+1 steps back
/// with its per-stream validity; missing or invalid history is zero.
pub(crate) fn ngram_combine<T: Scalar>(
    g: &mut Graph<'_, T>,
    current: Var,
    history: &VecDeque<(Var, Vec<bool>)>,
    parts: usize,
    w_n: Var,
) -> Result<Var> {
    let (batch, k) = g.shape(current);
    if parts == 0 || k % parts != 0 {
        return Err(Error::shape(
            "ngram_step",
            format!("output length {k} does not split into {parts} parts"),
        ));
    }
    let d = k / parts;
    if g.shape(w_n) != (d, parts * d) {
        return Err(Error::shape(
            "ngram_step",
            format!("W^N is {:?}, expected {:?}", g.shape(w_n), (d, parts * d)),
        ));
    }
    let mut pieces = Vec::with_capacity(parts);
    pieces.push(g.slice_cols(current, 0, d)?);
    for i in 1..parts {
        let piece = match history.get(i - 1) {
            Some((h, valid)) => {
                if g.shape(*h) != (batch, k) {
                    return Err(Error::shape(
                        "ngram_step",
                        format!("history entry {:?}, expected {:?}", g.shape(*h), (batch, k)),
                    ));
                }
                let s = g.slice_cols(*h, i * d, d)?;
                if valid.iter().all(|&v| v) {
                    s
                } else {
                    g.mask_rows(s, valid)?
                }
            }
            None => g.constant(Tensor::zeros(&[batch, d])),
        };
        pieces.push(piece);
    }
    let stacked = g.concat_cols(&pieces)?;
    let projected = g.matmul_bt(stacked, w_n)?;
    Ok(g.tanh(projected))
}

/// Attention projections for one head of part dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    /// d × d
    pub w_y: Tensor<T>,
    /// d × d
    pub w_h: Tensor<T>,
    /// d
    pub w: Tensor<T>,
    /// d × d
    pub w_r: Tensor<T>,
    /// d × d
    pub w_x: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn init(d: usize, seed: u64) -> Result<Self> {
        let mk = |shape: &[usize], s| Tensor::init_uniform_stream(shape, -0.1, 0.1, seed, s);
        Ok(AttentionParams {
            w_y: mk(&[d, d], 0)?,
            w_h: mk(&[d, d], 1)?,
            w: mk(&[d], 2)?,
            w_r: mk(&[d, d], 3)?,
            w_x: mk(&[d, d], 4)?,
        })
    }

    pub fn zeros(d: usize) -> Self {
        AttentionParams {
            w_y: Tensor::zeros(&[d, d]),
            w_h: Tensor::zeros(&[d, d]),
            w: Tensor::zeros(&[d]),
            w_r: Tensor::zeros(&[d, d]),
            w_x: Tensor::zeros(&[d, d]),
        }
    }

    pub fn part_dim(&self) -> usize {
        self.w.len()
    }

    fn tensors(&self) -> [Tensor<T>; 5] {
        [
            self.w_y.clone(),
            self.w_h.clone(),
            self.w.clone(),
            self.w_r.clone(),
            self.w_x.clone(),
        ]
    }
}

/// Result of a single-stream step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub hidden: Vec<T>,
    /// Attention over the memory entries, oldest first; zero for invalid
    /// entries and empty when the memory is empty.
    pub attention: Vec<T>,
}

fn single_stream_step<T: Scalar>(
    variant: Variant,
    h: &[T],
    memory: &SlidingMemory<T>,
    params: &AttentionParams<T>,
) -> Result<StepOutput<T>> {
    let tensors = params.tensors();
    let d = params.part_dim();
    let parts = variant.parts(0);
    if h.len() % parts != 0 {
        // split_output reports the variant-specific message
    } else if h.len() / parts != d {
        return Err(Error::shape(
            "attention step",
            format!("output of length {} for part dimension {d}", h.len()),
        ));
    }
    let mut g = Graph::new(&tensors);
    let vars = AttentionVars {
        w_y: g.param(0),
        w_h: g.param(1),
        w: g.param(2),
        w_r: g.param(3),
        w_x: g.param(4),
    };
    let hv = g.constant(Tensor::matrix(1, h.len(), h.to_vec())?);
    let (key, _, pred) = split_output(&mut g, variant, hv)?;
    let mut wm = WorkingMemory {
        capacity: memory.capacity(),
        slots: VecDeque::new(),
    };
    for e in memory.entries() {
        if e.key.cols() != d || e.value().cols() != d || e.valid.len() != 1 {
            return Err(Error::shape(
                "attention step",
                format!("memory entry of width {} for part dimension {d}", e.key.cols()),
            ));
        }
        let key = g.constant(e.key.clone());
        let value = match &e.value {
            Some(v) => g.constant(v.clone()),
            None => key,
        };
        let proj = g.matmul_bt(key, vars.w_y)?;
        wm.slots.push_back(Slot {
            key,
            value,
            proj,
            valid: e.valid.clone(),
        });
    }
    let out = attend(&mut g, key, pred, &wm, &vars)?;
    Ok(StepOutput {
        hidden: g.value(out.hidden).values().to_vec(),
        attention: out
            .weights
            .map(|(a, _)| g.value(a).values().to_vec())
            .unwrap_or_default(),
    })
}

/// Attention over the previous full outputs held in `memory`.
pub fn attention_step<T: Scalar>(
    h: &[T],
    memory: &SlidingMemory<T>,
    params: &AttentionParams<T>,
) -> Result<StepOutput<T>> {
    single_stream_step(Variant::Attention, h, memory, params)
}

/// `h = [key; value]`: scores from keys, context from stored values,
/// `h* = tanh(W^r r + W^x value)`.
pub fn key_value_step<T: Scalar>(
    h: &[T],
    memory: &SlidingMemory<T>,
    params: &AttentionParams<T>,
) -> Result<StepOutput<T>> {
    single_stream_step(Variant::KeyValue, h, memory, params)
}

/// `h = [key; value; predict]`: as [`key_value_step`] but the final
/// combination uses the predict part.
pub fn key_value_predict_step<T: Scalar>(
    h: &[T],
    memory: &SlidingMemory<T>,
    params: &AttentionParams<T>,
) -> Result<StepOutput<T>> {
    single_stream_step(Variant::KeyValuePredict, h, memory, params)
}

/// Splits a full output into the (key, value) pair a split variant stores.
pub fn memory_entry_parts<T: Scalar>(variant: Variant, h: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let parts = variant.parts(0);
    if !variant.is_attentive() || h.len() % parts != 0 {
        return Err(Error::shape(
            "memory entry",
            format!("cannot split {} values for {variant}", h.len()),
        ));
    }
    let d = h.len() / parts;
    Ok((h[..d].to_vec(), h[(parts.min(2) - 1) * d..parts.min(2) * d].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramParams<T> {
    /// d × (N−1)d
    pub w_n: Tensor<T>,
}

impl<T: Scalar> NgramParams<T> {
    pub fn order(&self) -> usize {
        self.w_n.cols() / self.w_n.rows().max(1) + 1
    }
}

/// `outputs[i]` is the LSTM output from i steps back (current first). Fewer
/// than N−1 outputs means the missing history is zero.
pub fn ngram_step<T: Scalar>(outputs: &[Vec<T>], params: &NgramParams<T>) -> Result<Vec<T>> {
    let parts = params.order() - 1;
    let current = outputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("ngram_step needs the current output".into()))?;
    let tensors = [params.w_n.clone()];
    let mut g = Graph::new(&tensors);
    let w_n = g.param(0);
    let cur = g.constant(Tensor::matrix(1, current.len(), current.clone())?);
    let mut history = VecDeque::new();
    for h in outputs.iter().skip(1).take(parts.saturating_sub(1)) {
        if h.len() != current.len() {
            return Err(Error::shape(
                "ngram_step",
                format!("history output of length {}, current {}", h.len(), current.len()),
            ));
        }
        history.push_back((g.constant(Tensor::matrix(1, h.len(), h.clone())?), vec![true]));
    }
    let out = ngram_combine(&mut g, cur, &history, parts, w_n)?;
    Ok(g.value(out).values().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams<T> {
    /// |V| × d
    pub weight: Tensor<T>,
    /// |V|
    pub bias: Tensor<T>,
}

/// `softmax(W* h* + b)`
pub fn predict_distribution<T: Scalar>(hidden: &[T], out: &OutputParams<T>) -> Result<Vec<T>> {
    let (v, d) = (out.weight.rows(), out.weight.cols());
    if hidden.len() != d || out.bias.len() != v {
        return Err(Error::shape(
            "predict_distribution",
            format!("h* of length {} for a {v}x{d} output layer", hidden.len()),
        ));
    }
    let logits: Vec<T> = (0..v)
        .map(|r| {
            out.weight
                .row(r)
                .iter()
                .zip(hidden)
                .fold(out.bias.values()[r], |acc, (&w, &h)| acc + w * h)
        })
        .collect();
    softmax_row(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::memory::MemoryEntry;

    #[test]
    fn singleton_memory_gets_all_attention() {
        let p = AttentionParams::<f64>::init(3, 1).unwrap();
        let mem = SlidingMemory::from_vectors(4, &[vec![0.1, 0.2, 0.3]], None).unwrap();
        let out = attention_step(&[0.3, -0.1, 0.2], &mem, &p).unwrap();
        assert_eq!(out.attention, vec![1.0]);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let p = AttentionParams::<f64>::zeros(2);
        let mem = SlidingMemory::from_vectors(3, &[vec![1.0, 2.0], vec![3.0, 4.0]], None).unwrap();
        let out = attention_step(&[0.5, 0.5], &mem, &p).unwrap();
        assert_eq!(out.hidden, vec![0.0, 0.0]);
    }

    #[test]
    fn empty_memory_skips_attention() {
        let p = AttentionParams::<f64>::init(2, 9).unwrap();
        let mem = SlidingMemory::new(3);
        let h = [0.4, -0.7];
        let out = attention_step(&h, &mem, &p).unwrap();
        assert!(out.attention.is_empty());
        let wx = p.w_x.values();
        let want: Vec<f64> = (0..2)
            .map(|i| (wx[i * 2] * h[0] + wx[i * 2 + 1] * h[1]).tanh())
            .collect();
        for (a, b) in out.hidden.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_entries_get_zero_weight() {
        let p = AttentionParams::<f64>::init(2, 4).unwrap();
        let mut mem = SlidingMemory::from_vectors(3, &[vec![1.0, 0.0], vec![0.0, 1.0]], None).unwrap();
        mem.push(MemoryEntry {
            key: Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap(),
            value: None,
            valid: vec![false],
        });
        let out = attention_step(&[0.2, 0.1], &mem, &p).unwrap();
        assert_eq!(out.attention[2], 0.0);
        assert!((out.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odd_and_indivisible_outputs_are_errors() {
        let p = AttentionParams::<f64>::init(2, 0).unwrap();
        let mem = SlidingMemory::new(2);
        assert!(key_value_step(&[0.0; 5], &mem, &p).is_err());
        assert!(key_value_predict_step(&[0.0; 7], &mem, &p).is_err());
        assert!(key_value_step(&[0.0; 6], &mem, &p).is_err());
    }

    #[test]
    fn predict_part_does_not_move_attention() {
        let p = AttentionParams::<f64>::init(2, 3).unwrap();
        let keys = vec![vec![0.3, -0.2], vec![0.1, 0.9]];
        let vals = vec![vec![1.0, 0.5], vec![-0.4, 0.2]];
        let mem = SlidingMemory::from_vectors(4, &keys, Some(&vals)).unwrap();
        let a = key_value_predict_step(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &mem, &p).unwrap();
        let b = key_value_predict_step(&[0.1, 0.2, 0.3, 0.4, -9.0, 7.0], &mem, &p).unwrap();
        assert_eq!(a.attention, b.attention);
        assert_ne!(a.hidden, b.hidden);
    }

    #[test]
    fn identical_keys_attend_uniformly() {
        let p = AttentionParams::<f64>::init(2, 8).unwrap();
        let keys = vec![vec![0.3, 0.3]; 3];
        let vals = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let mem = SlidingMemory::from_vectors(3, &keys, Some(&vals)).unwrap();
        let out = key_value_step(&[0.5, -0.5, 0.2, 0.1], &mem, &p).unwrap();
        for a in &out.attention {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bigram_is_a_projected_output() {
        let w_n = Tensor::from_f64(&[2, 2], &[0.5, -1.0, 2.0, 0.25]).unwrap();
        let p = NgramParams { w_n };
        assert_eq!(p.order(), 2);
        let out = ngram_step(&[vec![0.2, 0.4]], &p).unwrap();
        assert_eq!(out, vec![(0.1f64 - 0.4).tanh(), (0.4f64 + 0.1).tanh()]);
        let zero = NgramParams {
            w_n: Tensor::<f64>::zeros(&[2, 6]),
        };
        assert_eq!(ngram_step(&[vec![1.0; 6]], &zero).unwrap(), vec![0.0; 2]);
        assert!(ngram_step(&[vec![1.0; 5]], &zero).is_err());
    }

    #[test]
    fn distribution_cases() {
        let out = OutputParams {
            weight: Tensor::<f64>::zeros(&[4, 2]),
            bias: Tensor::zeros(&[4]),
        };
        let p = predict_distribution(&[0.3, 0.1], &out).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        // hand instance: logits [0, ln 2, ln 3] → [1/6, 2/6, 3/6]
        let out = OutputParams {
            weight: Tensor::from_f64(&[3, 1], &[0.0, 2f64.ln(), 3f64.ln()]).unwrap(),
            bias: Tensor::zeros(&[3]),
        };
        let p: Vec<f64> = predict_distribution(&[1.0], &out).unwrap();
        for (x, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 0.5]) {
            assert!((x - want as f64).abs() < 1e-12);
        }
        let shifted = OutputParams {
            bias: Tensor::from_f64(&[3], &[5.0, 5.0, 5.0]).unwrap(),
            ..out.clone()
        };
        let q: Vec<f64> = predict_distribution(&[1.0], &shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
