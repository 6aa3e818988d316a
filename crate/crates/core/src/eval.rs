//! Perplexity, cloze accuracy and attention profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, ClozeInstance, EncodedCorpus, CANDIDATES};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::numerics::{log_sum_exp, Scalar};

/// Steps per forward window during evaluation.
pub const EVAL_UNROLL: usize = 50;

/// Every article is evaluated from a fresh state. Its first token is never a
/// target; every later token is predicted from the tokens before it.
///
/// Articles are spread over `lanes` parallel streams (each article always
/// stays whole in one lane), so the result does not depend on `lanes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub tokens: usize,
    pub nll: f64,
    pub perplexity: f64,
}

impl Perplexity {
    pub fn from_nll(tokens: usize, nll: f64) -> Self {
        Perplexity {
            tokens,
            nll,
            perplexity: (nll / tokens as f64).exp(),
        }
    }

    /// Pools two disjoint evaluations.
    pub fn combine(self, other: Perplexity) -> Perplexity {
        Perplexity::from_nll(self.tokens + other.tokens, self.nll + other.nll)
    }
}

struct Lane {
    ids: Vec<u32>,
    starts: Vec<bool>,
    /// Position `p` predicts `ids[p + 1]`.
    scored: Vec<bool>,
}

fn pack_lanes(corpus: &EncodedCorpus, lanes: usize) -> Vec<Lane> {
    let mut out: Vec<Lane> = (0..lanes)
        .map(|_| Lane {
            ids: Vec::new(),
            starts: Vec::new(),
            scored: Vec::new(),
        })
        .collect();
    for (start, end) in corpus.articles() {
        let lane = out
            .iter_mut()
            .min_by_key(|l| l.ids.len())
            .expect("at least one lane");
        for p in start..end {
            lane.ids.push(corpus.ids()[p]);
            lane.starts.push(p == start);
            lane.scored.push(p + 1 < end);
        }
    }
    out.retain(|l| !l.ids.is_empty());
    out
}

/// Per-step callback arguments of [`stream_corpus`].
struct StepView<'a, T> {
    /// Log-probability of the target, `None` when the position is not scored.
    logprob: Option<f64>,
    /// Whether the arg-max prediction equals the target (lowest id on ties).
    correct: Option<bool>,
    alpha: Option<(&'a [T], &'a [bool])>,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn stream_corpus<T: Scalar>(
    model: &Model<T>,
    corpus: &EncodedCorpus,
    lanes: usize,
    mut visit: impl FnMut(StepView<'_, T>),
) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InsufficientData("empty corpus".into()));
    }
    if lanes == 0 {
        return Err(Error::InvalidArgument("need at least one lane".into()));
    }
    let packed = pack_lanes(corpus, lanes);
    let batch = packed.len();
    let total = packed.iter().map(|l| l.ids.len()).max().unwrap_or(0);
    let mut state = model.initial_state(batch);
    let mut pos = 0;
    while pos < total {
        let unroll = EVAL_UNROLL.min(total - pos);
        let mut inputs = Vec::with_capacity(batch * unroll);
        let mut resets = Vec::with_capacity(batch * unroll);
        for lane in &packed {
            for p in pos..pos + unroll {
                inputs.push(lane.ids.get(p).copied().unwrap_or(0));
                resets.push(lane.starts.get(p).copied().unwrap_or(false));
            }
        }
        let out = model.forward(&inputs, &resets, batch, &state)?;
        let vocab = out.logits.cols();
        for t in 0..unroll {
            for (b, lane) in packed.iter().enumerate() {
                let p = pos + t;
                if p >= lane.ids.len() {
                    continue;
                }
                let (logprob, correct) = if lane.scored[p] {
                    let row = out.logits.row(t * batch + b);
                    let target = lane.ids[p + 1] as usize;
                    debug_assert!(target < vocab);
                    let lp = (row[target] - log_sum_exp(row)).f64();
                    (Some(lp), Some(argmax(row) == target))
                } else {
                    (None, None)
                };
                let alpha = (out.trace.window > 0)
                    .then(|| (out.trace.alpha(t, b), out.trace.mask(t, b)));
                visit(StepView {
                    logprob,
                    correct,
                    alpha,
                });
            }
        }
        state = out.state;
        pos += unroll;
    }
    Ok(())
}

pub fn perplexity<T: Scalar>(model: &Model<T>, corpus: &EncodedCorpus, lanes: usize) -> Result<Perplexity> {
    if let Some(max) = corpus.max_id() {
        if max as usize >= model.config().vocab_size {
            return Err(Error::InvalidArgument(format!(
                "corpus id {max} out of range for vocabulary of {}",
                model.config().vocab_size
            )));
        }
    }
    let mut tokens = 0usize;
    let mut nll = 0.0f64;
    stream_corpus(model, corpus, lanes, |step| {
        if let Some(lp) = step.logprob {
            tokens += 1;
            nll -= lp;
        }
    })?;
    if tokens == 0 {
        return Err(Error::InsufficientData(
            "no article has more than one token".into(),
        ));
    }
    if !nll.is_finite() {
        return Err(Error::NonFinite("perplexity".into()));
    }
    Ok(Perplexity::from_nll(tokens, nll))
}

/// Fraction of scored positions where the most probable token is the target.
pub fn next_token_accuracy<T: Scalar>(model: &Model<T>, corpus: &EncodedCorpus, lanes: usize) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    stream_corpus(model, corpus, lanes, |step| {
        if let Some(c) = step.correct {
            total += 1;
            correct += usize::from(c);
        }
    })?;
    if total == 0 {
        return Err(Error::InsufficientData(
            "no article has more than one token".into(),
        ));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean attention per memory position over steps whose memory is fully
/// valid, oldest position first (the last entry is the previous step).
pub fn attention_profile<T: Scalar>(
    model: &Model<T>,
    corpus: &EncodedCorpus,
    lanes: usize,
) -> Result<Vec<f64>> {
    let variant = model.config().variant;
    if !variant.is_attentive() {
        return Err(Error::Unsupported(format!("variant {variant} has no attention")));
    }
    let l = model.config().window;
    let mut sums = vec![0.0f64; l];
    let mut count = 0usize;
    stream_corpus(model, corpus, lanes, |step| {
        if let Some((alpha, mask)) = step.alpha {
            if mask.iter().all(|&v| v) {
                for (s, a) in sums.iter_mut().zip(alpha) {
                    *s += a.f64();
                }
                count += 1;
            }
        }
    })?;
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "no step had all {l} memory positions filled"
        )));
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
}

impl CategoryScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeResult {
    pub predictions: Vec<usize>,
    pub by_category: BTreeMap<Category, CategoryScore>,
}

impl ClozeResult {
    pub fn overall(&self) -> CategoryScore {
        self.by_category.values().fold(CategoryScore::default(), |a, s| CategoryScore {
            correct: a.correct + s.correct,
            total: a.total + s.total,
        })
    }
}

/// Summed log-probability of the query with each candidate in the blank,
/// conditioned on the context.
pub fn score_candidates<T: Scalar>(model: &Model<T>, instance: &ClozeInstance) -> Result<[f64; CANDIDATES]> {
    let ctx = &instance.context_ids;
    let query_len = instance.query_ids.len();
    let (state, first_input) = match ctx.split_last() {
        Some((&last, head)) => {
            let single = model.initial_state(1);
            let state = if head.is_empty() {
                single
            } else {
                let mut resets = vec![false; head.len()];
                resets[0] = true;
                model.forward(head, &resets, 1, &single)?.state
            };
            (state, Some(last))
        }
        None => (model.initial_state(1), None),
    };
    let state = state.replicate(CANDIDATES)?;
    let filled: Vec<Vec<u32>> = (0..CANDIDATES).map(|c| instance.filled_query(c)).collect();
    // With no context the first query token is consumed, not scored.
    let (steps, skip) = match first_input {
        Some(_) => (query_len, 0),
        None => (query_len.saturating_sub(1), 1),
    };
    let mut scores = [0.0f64; CANDIDATES];
    if steps == 0 {
        return Ok(scores);
    }
    let mut inputs = Vec::with_capacity(CANDIDATES * steps);
    for q in &filled {
        match first_input {
            Some(last) => {
                inputs.push(last);
                inputs.extend_from_slice(&q[..steps - 1]);
            }
            None => inputs.extend_from_slice(&q[..steps]),
        }
    }
    let resets = vec![false; inputs.len()];
    let out = model.forward(&inputs, &resets, CANDIDATES, &state)?;
    for t in 0..steps {
        for (c, q) in filled.iter().enumerate() {
            let row = out.logits.row(t * CANDIDATES + c);
            let target = q[t + skip] as usize;
            scores[c] += (row[target] - log_sum_exp(row)).f64();
        }
    }
    Ok(scores)
}

/// Highest score wins; ties go to the lowest candidate index.
pub fn pick_candidate(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn cloze_accuracy<T: Scalar>(model: &Model<T>, instances: &[ClozeInstance]) -> Result<ClozeResult> {
    let mut by_category = BTreeMap::new();
    let mut predictions = Vec::with_capacity(instances.len());
    for inst in instances {
        let scores = score_candidates(model, inst)?;
        let pick = pick_candidate(&scores);
        predictions.push(pick);
        let entry: &mut CategoryScore = by_category.entry(inst.category).or_default();
        entry.total += 1;
        entry.correct += usize::from(pick == inst.answer);
    }
    Ok(ClozeResult {
        predictions,
        by_category,
    })
}

/// Everything an evaluation command reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub tokens: Option<usize>,
    pub nll: Option<f64>,
    pub perplexity: Option<f64>,
    pub cloze: Option<BTreeMap<Category, CategoryScore>>,
    /// Mean weight per memory position, oldest first.
    pub attention_profile: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn with_perplexity(mut self, p: Perplexity) -> Self {
        self.tokens = Some(p.tokens);
        self.nll = Some(p.nll);
        self.perplexity = Some(p.perplexity);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        if let (Some(t), Some(n), Some(p)) = (self.tokens, self.nll, self.perplexity) {
            writeln!(s, "tokens\t{t}").unwrap();
            writeln!(s, "nll\t{n:.6}").unwrap();
            writeln!(s, "perplexity\t{p:.6}").unwrap();
        }
        if let Some(cloze) = &self.cloze {
            for (cat, score) in cloze {
                writeln!(
                    s,
                    "cloze_{}\t{:.6}\t{}/{}",
                    cat.name(),
                    score.accuracy(),
                    score.correct,
                    score.total
                )
                .unwrap();
            }
        }
        if let Some(profile) = &self.attention_profile {
            for (i, w) in profile.iter().enumerate() {
                writeln!(s, "attention_{}\t{w:.6}", i + 1).unwrap();
            }
        }
        s
    }

    /// `position,mean_weight` with positions 1..=L, L the most recent.
    pub fn profile_csv(&self) -> Option<String> {
        let profile = self.attention_profile.as_ref()?;
        let mut s = String::from("position,mean_weight\n");
        for (i, w) in profile.iter().enumerate() {
            writeln!(s, "{},{w:.6}", i + 1).unwrap();
        }
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::models::{ModelConfig, Params, Variant};

    fn zero_output(variant: Variant, hidden: usize) -> Model<f64> {
        let cfg = ModelConfig::new(variant, 3, hidden, 10).with_window(2);
        let mut params = Params::<f64>::init(&cfg, 1).unwrap();
        let idx = *params.index();
        params.tensors_mut()[idx.out_weight].values_mut().fill(0.0);
        params.tensors_mut()[idx.out_bias].values_mut().fill(0.0);
        Model::new(cfg, params).unwrap()
    }

    fn corpus() -> EncodedCorpus {
        let ids = (0..57).map(|i| (i * 3 % 10) as u32).collect();
        EncodedCorpus::new(ids, vec![0, 11, 12, 30, 44], Split::Dev).unwrap()
    }

    #[test]
    fn uniform_output_gives_vocabulary_size() {
        let m = zero_output(Variant::KeyValue, 4);
        let p = perplexity(&m, &corpus(), 3).unwrap();
        assert!((p.perplexity - 10.0).abs() < 1e-6);
        // articles of 11, 1, 18, 14, 13 tokens
        assert_eq!(p.tokens, 10 + 0 + 17 + 13 + 12);
    }

    #[test]
    fn lane_count_does_not_matter() {
        let cfg = ModelConfig::new(Variant::KeyValuePredict, 3, 6, 10).with_window(3);
        let m = Model::<f64>::init(cfg, 4).unwrap();
        let one = perplexity(&m, &corpus(), 1).unwrap();
        for lanes in [2, 3, 5, 8] {
            let p = perplexity(&m, &corpus(), lanes).unwrap();
            assert_eq!(p.tokens, one.tokens);
            assert!((p.nll - one.nll).abs() < 1e-9, "{lanes} lanes");
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let m = zero_output(Variant::Lstm, 4);
        let empty = EncodedCorpus::new(vec![], vec![], Split::Dev).unwrap();
        assert!(perplexity(&m, &empty, 1).is_err());
    }

    #[test]
    fn profile_requires_attention() {
        let m = zero_output(Variant::Lstm, 4);
        assert!(matches!(
            attention_profile(&m, &corpus(), 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        assert_eq!(pick_candidate(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(pick_candidate(&[-1.0; 10]), 0);
    }

    #[test]
    fn report_formats() {
        let report = EvalReport {
            attention_profile: Some(vec![0.25, 0.75]),
            ..EvalReport::default()
        }
        .with_perplexity(Perplexity::from_nll(2, 0.0));
        assert_eq!(report.profile_csv().unwrap(), "position,mean_weight\n1,0.250000\n2,0.750000\n");
        assert!(report.to_tsv().contains("perplexity\t1.000000"));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
