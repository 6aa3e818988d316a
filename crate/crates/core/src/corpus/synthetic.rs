//! Generated corpora for tests and sanity checks.

use rand::Rng;

use crate::corpus::{EncodedCorpus, Split};
use crate::error::{Error, Result};
use crate::numerics::rng;

/// Articles in which every token repeats the one `lag + 1` positions back, so
/// the target of step `t` equals the input of step `t - lag`. Each article
/// opens with `lag + 1` uniform random ids from `0..vocab`.
pub fn lag_copy_corpus(
    vocab: u32,
    tokens: usize,
    lag: usize,
    article_len: usize,
    seed: u64,
    split: Split,
) -> Result<EncodedCorpus> {
    let period = lag + 1;
    if vocab == 0 || article_len <= period {
        return Err(Error::InvalidArgument(format!(
            "need a vocabulary and articles longer than {period} tokens"
        )));
    }
    let mut r = rng::stream(seed, 0);
    let mut ids = Vec::with_capacity(tokens);
    let mut boundaries = Vec::new();
    while ids.len() < tokens {
        let start = ids.len();
        boundaries.push(start);
        let len = article_len.min(tokens - start);
        for s in 0..len {
            let id = if s < period {
                r.random_range(0..vocab)
            } else {
                ids[start + s - period]
            };
            ids.push(id);
        }
    }
    EncodedCorpus::new(ids, boundaries, split)
}

/// `0 1 … period-1 0 1 …` as a single article.
pub fn repeating_corpus(period: u32, tokens: usize, split: Split) -> Result<EncodedCorpus> {
    if period == 0 {
        return Err(Error::InvalidArgument("period must be positive".into()));
    }
    let ids = (0..tokens).map(|i| i as u32 % period).collect();
    EncodedCorpus::new(ids, vec![0], split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_copy_structure() {
        let c = lag_copy_corpus(20, 1000, 4, 250, 3, Split::Train).unwrap();
        assert_eq!(c.len(), 1000);
        assert_eq!(c.boundaries(), &[0, 250, 500, 750]);
        for (start, end) in c.articles() {
            for p in start + 5..end {
                assert_eq!(c.ids()[p], c.ids()[p - 5]);
            }
        }
        assert!(c.ids().iter().all(|&i| i < 20));
    }
}
