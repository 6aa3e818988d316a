use std::collections::VecDeque;

use crate::corpus::Window;
use crate::error::{Error, Result};
use crate::models::config::{ModelConfig, Variant};
use crate::models::memory::{MemoryEntry, SlidingMemory};
use crate::models::params::{layout, Params};
use crate::models::steps::{attend, ngram_combine, split_output, AttentionVars, Slot, WorkingMemory};
use crate::numerics::{lstm_cell, Graph, LstmVars, Scalar, Tensor, Var};

/// Recurrent state carried from one window to the next, for `batch` streams.
#[derive(Debug, Clone, PartialEq)]
pub struct CarriedState<T> {
    batch: usize,
    h: Tensor<T>,
    c: Tensor<T>,
    memory: SlidingMemory<T>,
    /// N-gram variant: previous LSTM outputs, most recent first.
    history: VecDeque<(Tensor<T>, Vec<bool>)>,
}

impl<T: Scalar> CarriedState<T> {
    pub fn new(config: &ModelConfig, batch: usize) -> Self {
        CarriedState {
            batch,
            h: Tensor::zeros(&[batch, config.hidden]),
            c: Tensor::zeros(&[batch, config.hidden]),
            memory: SlidingMemory::new(if config.variant.is_attentive() {
                config.window
            } else {
                0
            }),
            history: VecDeque::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn h(&self) -> &Tensor<T> {
        &self.h
    }

    pub fn c(&self) -> &Tensor<T> {
        &self.c
    }

    pub fn memory(&self) -> &SlidingMemory<T> {
        &self.memory
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Copies a single-stream state into `rows` identical streams.
    pub fn replicate(&self, rows: usize) -> Result<Self> {
        if self.batch != 1 {
            return Err(Error::InvalidArgument(format!(
                "only a single-stream state can be replicated (batch {})",
                self.batch
            )));
        }
        let tile = |t: &Tensor<T>| -> Result<Tensor<T>> {
            let values = t.values().repeat(rows);
            Tensor::matrix(rows, t.cols(), values)
        };
        let mut memory = SlidingMemory::new(self.memory.capacity());
        for e in self.memory.entries() {
            memory.push(MemoryEntry {
                key: tile(&e.key)?,
                value: e.value.as_ref().map(tile).transpose()?,
                valid: vec![e.valid[0]; rows],
            });
        }
        let history = self
            .history
            .iter()
            .map(|(t, v)| Ok((tile(t)?, vec![v[0]; rows])))
            .collect::<Result<_>>()?;
        Ok(CarriedState {
            batch: rows,
            h: tile(&self.h)?,
            c: tile(&self.c)?,
            memory,
            history,
        })
    }

    /// Zeroes stream `row` and forgets its memory, as an article boundary does.
    pub fn reset_stream(&mut self, row: usize) {
        self.h.row_mut(row).fill(T::zero());
        self.c.row_mut(row).fill(T::zero());
        self.memory.clear_stream(row);
        for (_, valid) in &mut self.history {
            valid[row] = false;
        }
    }
}

/// Attention weights for every step of a window.
///
/// `weights[t][b * L + j]` is the weight stream `b` put on memory position
/// `j` at step `t`, positions ordered oldest to most recent (position `L-1`
/// is the previous step). Positions without a valid entry are zero with
/// `valid == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace<T> {
    pub window: usize,
    pub batch: usize,
    pub weights: Vec<Vec<T>>,
    pub valid: Vec<Vec<bool>>,
}

impl<T: Scalar> AttentionTrace<T> {
    fn new(window: usize, batch: usize) -> Self {
        AttentionTrace {
            window,
            batch,
            weights: Vec::new(),
            valid: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.weights.len()
    }

    pub fn alpha(&self, step: usize, stream: usize) -> &[T] {
        let l = self.window;
        &self.weights[step][stream * l..(stream + 1) * l]
    }

    pub fn mask(&self, step: usize, stream: usize) -> &[bool] {
        let l = self.window;
        &self.valid[step][stream * l..(stream + 1) * l]
    }

    /// True when every memory position was valid for that stream and step.
    pub fn fully_valid(&self, step: usize, stream: usize) -> bool {
        self.window > 0 && self.mask(step, stream).iter().all(|&v| v)
    }
}

/// Graph nodes of one window.
pub struct WindowGraph<T> {
    /// `(unroll · batch) × |V|`, row `t * batch + b`.
    pub logits: Var,
    pub trace: AttentionTrace<T>,
    pub state: CarriedState<T>,
}

/// Plain values of one window.
#[derive(Debug, Clone)]
pub struct WindowOutput<T> {
    /// `(unroll · batch) × |V|`, row `t * batch + b`.
    pub logits: Tensor<T>,
    pub trace: AttentionTrace<T>,
    pub state: CarriedState<T>,
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Params<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        if layout(&config).0 != params.specs() {
            return Err(Error::shape(
                "model",
                "parameter layout does not match the configuration",
            ));
        }
        Ok(Model { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Params::init(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn into_params(self) -> Params<T> {
        self.params
    }

    pub fn initial_state(&self, batch: usize) -> CarriedState<T> {
        CarriedState::new(&self.config, batch)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Records one window into `g`, which must have been built over
    /// `self.params().tensors()`.
    ///
    /// `inputs` and `resets` are stream-major (`b * unroll + t`). A reset
    /// clears that stream's state before the flagged position is consumed.
    pub fn record_window(
        &self,
        g: &mut Graph<'_, T>,
        inputs: &[u32],
        resets: &[bool],
        batch: usize,
        state: &CarriedState<T>,
    ) -> Result<WindowGraph<T>> {
        if batch == 0 || inputs.len() % batch != 0 || resets.len() != inputs.len() {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} inputs and {} reset flags for batch {batch}",
                    inputs.len(),
                    resets.len()
                ),
            ));
        }
        if state.batch != batch {
            return Err(Error::shape(
                "forward",
                format!("state for batch {}, window for batch {batch}", state.batch),
            ));
        }
        let unroll = inputs.len() / batch;
        let cfg = &self.config;
        let vocab = cfg.vocab_size;
        if let Some(&bad) = inputs.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of range for vocabulary of {vocab}"
            )));
        }
        let idx = *self.params.index();
        let embedding = g.param(idx.embedding);
        let lstm = LstmVars {
            w_input: g.param(idx.lstm_w_input),
            w_hidden: g.param(idx.lstm_w_hidden),
            bias: g.param(idx.lstm_bias),
        };
        let attn = idx.attention.map(|a| AttentionVars {
            w_y: g.param(a.w_y),
            w_h: g.param(a.w_h),
            w: g.param(a.w),
            w_r: g.param(a.w_r),
            w_x: g.param(a.w_x),
        });
        let w_n = idx.ngram.map(|i| g.param(i));

        let mut h = g.constant(state.h.clone());
        let mut c = g.constant(state.c.clone());
        let mut memory = WorkingMemory {
            capacity: state.memory.capacity(),
            slots: VecDeque::new(),
        };
        if let Some(p) = &attn {
            for e in state.memory.entries() {
                let key = g.constant(e.key.clone());
                let value = match &e.value {
                    Some(v) => g.constant(v.clone()),
                    None => key,
                };
                let proj = g.matmul_bt(key, p.w_y)?;
                memory.slots.push_back(Slot {
                    key,
                    value,
                    proj,
                    valid: e.valid.clone(),
                });
            }
        }
        let mut history: VecDeque<(Var, Vec<bool>)> = state
            .history
            .iter()
            .map(|(t, v)| (g.constant(t.clone()), v.clone()))
            .collect();
        let parts = cfg.variant.parts(cfg.order);

        let mut trace = AttentionTrace::new(if attn.is_some() { cfg.window } else { 0 }, batch);
        let mut outputs = Vec::with_capacity(unroll);
        let mut ids = vec![0usize; batch];
        let mut keep = vec![true; batch];
        for t in 0..unroll {
            let mut any_reset = false;
            for b in 0..batch {
                ids[b] = inputs[b * unroll + t] as usize;
                keep[b] = !resets[b * unroll + t];
                any_reset |= !keep[b];
            }
            if any_reset {
                h = g.mask_rows(h, &keep)?;
                c = g.mask_rows(c, &keep)?;
                for (b, &k) in keep.iter().enumerate() {
                    if !k {
                        memory.clear_stream(b);
                        for (_, valid) in &mut history {
                            valid[b] = false;
                        }
                    }
                }
            }
            let x = g.gather(embedding, &ids)?;
            let (h_next, c_next) = lstm_cell(g, x, h, c, &lstm)?;
            h = h_next;
            c = c_next;
            let out = match cfg.variant {
                Variant::Lstm => h,
                Variant::Attention | Variant::KeyValue | Variant::KeyValuePredict => {
                    let p = attn.as_ref().expect("attentive layout has attention params");
                    let (key, value, pred) = split_output(g, cfg.variant, h)?;
                    let attended = attend(g, key, pred, &memory, p)?;
                    self.trace_step(g, &mut trace, &memory, attended.weights.as_ref(), batch);
                    let proj = g.matmul_bt(key, p.w_y)?;
                    memory.push(Slot {
                        key,
                        value,
                        proj,
                        valid: vec![true; batch],
                    });
                    attended.hidden
                }
                Variant::Ngram => {
                    let w_n = w_n.expect("ngram layout has W^N");
                    let out = ngram_combine(g, h, &history, parts, w_n)?;
                    history.push_front((h, vec![true; batch]));
                    history.truncate(parts.saturating_sub(1));
                    out
                }
            };
            outputs.push(out);
        }

        let stacked = g.concat_rows(&outputs)?;
        let w_out = g.param(idx.out_weight);
        let b_out = g.param(idx.out_bias);
        let projected = g.matmul_bt(stacked, w_out)?;
        let logits = g.add_row(projected, b_out)?;

        let new_state = CarriedState {
            batch,
            h: g.value(h).clone(),
            c: g.value(c).clone(),
            memory: {
                let mut m = SlidingMemory::new(state.memory.capacity());
                for s in &memory.slots {
                    m.push(MemoryEntry {
                        key: g.value(s.key).clone(),
                        value: (s.value != s.key).then(|| g.value(s.value).clone()),
                        valid: s.valid.clone(),
                    });
                }
                m
            },
            history: history
                .iter()
                .map(|(v, valid)| (g.value(*v).clone(), valid.clone()))
                .collect(),
        };
        Ok(WindowGraph {
            logits,
            trace,
            state: new_state,
        })
    }

    fn trace_step(
        &self,
        g: &Graph<'_, T>,
        trace: &mut AttentionTrace<T>,
        memory: &WorkingMemory,
        weights: Option<&(Var, Vec<bool>)>,
        batch: usize,
    ) {
        let l = trace.window;
        let mut w = vec![T::zero(); batch * l];
        let mut valid = vec![false; batch * l];
        if let Some((alpha, mask)) = weights {
            let n = memory.slots.len();
            let offset = l - n;
            let a = g.value(*alpha).values();
            for b in 0..batch {
                for j in 0..n {
                    w[b * l + offset + j] = a[b * n + j];
                    valid[b * l + offset + j] = mask[b * n + j];
                }
            }
        }
        trace.weights.push(w);
        trace.valid.push(valid);
    }

    /// Forward pass without gradients.
    pub fn forward(
        &self,
        inputs: &[u32],
        resets: &[bool],
        batch: usize,
        state: &CarriedState<T>,
    ) -> Result<WindowOutput<T>> {
        let mut g = Graph::new(self.params.tensors());
        let out = self.record_window(&mut g, inputs, resets, batch, state)?;
        Ok(WindowOutput {
            logits: g.value(out.logits).clone(),
            trace: out.trace,
            state: out.state,
        })
    }

    /// Mean cross-entropy over the window, its per-parameter gradients and
    /// the state to carry into the next window.
    pub fn window_loss(
        &self,
        window: &Window,
        state: &CarriedState<T>,
    ) -> Result<(T, Vec<Vec<T>>, CarriedState<T>)> {
        let mut g = Graph::new(self.params.tensors());
        let out = self.record_window(&mut g, &window.inputs, &window.resets, window.batch, state)?;
        let targets = row_order_targets(window);
        let weights = vec![T::one(); targets.len()];
        let norm = T::of(targets.len() as f64);
        let loss = g.cross_entropy(out.logits, &targets, &weights, norm)?;
        let value = g.scalar(loss);
        let grads = g.backward(loss).into_param_grads(self.params.tensors());
        Ok((value, grads, out.state))
    }
}

/// Window targets reordered to match logits rows (`t * batch + b`).
pub fn row_order_targets(window: &Window) -> Vec<usize> {
    let (batch, unroll) = (window.batch, window.unroll);
    let mut out = Vec::with_capacity(batch * unroll);
    for t in 0..unroll {
        for b in 0..batch {
            out.push(window.target(b, t) as usize);
        }
    }
    out
}
