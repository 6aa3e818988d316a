use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::config::{ModelConfig, Variant};
use crate::models::params::layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Everything except the input word embeddings.
    pub model: usize,
    /// Everything, embeddings included.
    pub with_embeddings: usize,
}

/// Exact number of trainable scalars. Embeddings and the output matrix are
/// separate tensors.
pub fn count_params(config: &ModelConfig) -> ParamCount {
    let (specs, index) = layout(config);
    let total: usize = specs.iter().map(|s| s.size()).sum();
    let embeddings = specs[index.embedding].size();
    ParamCount {
        model: total - embeddings,
        with_embeddings: total,
    }
}

/// Smallest step between valid hidden sizes for a variant.
pub fn hidden_step(variant: Variant, order: usize) -> usize {
    variant.parts(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HiddenSizeMatch {
    pub hidden: usize,
    pub count: ParamCount,
}

/// Picks the valid hidden size whose model-parameter count (embeddings
/// excluded) lies closest to `budget`; on a tie the smaller size wins.
pub fn match_hidden_size(base: &ModelConfig, budget: f64) -> Result<HiddenSizeMatch> {
    let step = hidden_step(base.variant, base.order);
    let at = |k: usize| {
        let cfg = ModelConfig { hidden: k, ..*base };
        count_params(&cfg)
    };
    let smallest = at(step);
    if (smallest.model as f64) > budget {
        return Err(Error::InvalidArgument(format!(
            "a budget of {budget} parameters is below the smallest {} model ({} at k={step})",
            base.variant, smallest.model
        )));
    }
    let mut k = step;
    while (at(k + step).model as f64) <= budget {
        k += step;
    }
    let below = at(k);
    let above = at(k + step);
    let (hidden, count) = if budget - below.model as f64 <= above.model as f64 - budget {
        (k, below)
    } else {
        (k + step, above)
    };
    Ok(HiddenSizeMatch { hidden, count })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vocabulary_has_no_embedding_cost() {
        let c = count_params(&ModelConfig::new(Variant::Attention, 7, 6, 0).with_window(2));
        assert_eq!(c.model, c.with_embeddings);
    }

    #[test]
    fn small_model_by_hand() {
        // LSTM 4k(w+k+1) = 4*2*(3+2+1) = 48; output 5*2 + 5 = 15; embeddings 15
        let c = count_params(&ModelConfig::new(Variant::Lstm, 3, 2, 5));
        assert_eq!(c.model, 63);
        assert_eq!(c.with_embeddings, 78);
    }

    #[test]
    fn budget_below_minimum_is_an_error() {
        let base = ModelConfig::new(Variant::Attention, 300, 1, 77_000).with_window(10);
        assert!(match_hidden_size(&base, 1000.0).is_err());
    }

    #[test]
    fn match_is_closest_valid_size() {
        let base = ModelConfig::new(Variant::KeyValue, 10, 2, 50).with_window(3);
        let m = match_hidden_size(&base, 5000.0).unwrap();
        assert_eq!(m.hidden % 2, 0);
        let below = count_params(&ModelConfig { hidden: m.hidden - 2, ..base }).model as f64;
        let above = count_params(&ModelConfig { hidden: m.hidden + 2, ..base }).model as f64;
        let here = m.count.model as f64;
        assert!((here - 5000.0).abs() <= (below - 5000.0).abs());
        assert!((here - 5000.0).abs() <= (above - 5000.0).abs());
    }
}
