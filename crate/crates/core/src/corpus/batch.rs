use crate::corpus::EncodedCorpus;
use crate::error::{Error, Result};

/// One unroll window over `batch` parallel streams. Buffers are laid out
/// stream-major: entry `s * unroll + t` is stream `s`, step `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub batch: usize,
    pub unroll: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    /// True where an article starts at the input position: hidden state and
    /// memory are cleared before that input is consumed.
    pub resets: Vec<bool>,
    /// Offset of step 0 inside each stream.
    pub offset: usize,
}

impl Window {
    pub fn input(&self, stream: usize, step: usize) -> u32 {
        self.inputs[stream * self.unroll + step]
    }

    pub fn target(&self, stream: usize, step: usize) -> u32 {
        self.targets[stream * self.unroll + step]
    }

    pub fn reset(&self, stream: usize, step: usize) -> bool {
        self.resets[stream * self.unroll + step]
    }
}

#[derive(Debug, Clone)]
pub struct Batches {
    pub batch: usize,
    pub unroll: usize,
    /// Tokens per stream; stream `s` covers corpus positions
    /// `[s * stream_len, (s + 1) * stream_len)`.
    pub stream_len: usize,
    pub windows: Vec<Window>,
}

/// Cuts the corpus into `batch` contiguous streams and walks them in
/// `unroll`-step windows. Tokens that do not fill a whole window are dropped.
pub fn batchify(corpus: &EncodedCorpus, batch: usize, unroll: usize) -> Result<Batches> {
    if batch == 0 || unroll == 0 {
        return Err(Error::InvalidArgument(format!(
            "batch size and unroll must be positive (got {batch}, {unroll})"
        )));
    }
    let n = corpus.len();
    if n < batch * (unroll + 1) {
        return Err(Error::InsufficientData(format!(
            "{n} tokens cannot fill {batch} streams of {} tokens",
            unroll + 1
        )));
    }
    let stream_len = n / batch;
    let count = (stream_len - 1) / unroll;
    let ids = corpus.ids();
    let mut is_boundary = vec![false; n];
    for &b in corpus.boundaries() {
        is_boundary[b] = true;
    }

    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let offset = w * unroll;
        let mut inputs = Vec::with_capacity(batch * unroll);
        let mut targets = Vec::with_capacity(batch * unroll);
        let mut resets = Vec::with_capacity(batch * unroll);
        for s in 0..batch {
            let base = s * stream_len + offset;
            inputs.extend_from_slice(&ids[base..base + unroll]);
            targets.extend_from_slice(&ids[base + 1..base + unroll + 1]);
            resets.extend_from_slice(&is_boundary[base..base + unroll]);
        }
        windows.push(Window {
            batch,
            unroll,
            inputs,
            targets,
            resets,
            offset,
        });
    }
    Ok(Batches {
        batch,
        unroll,
        stream_len,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    #[test]
    fn contiguous_streams() {
        let c = EncodedCorpus::new((0..10).collect(), vec![0, 5], Split::Train).unwrap();
        let b = batchify(&c, 2, 2).unwrap();
        assert_eq!(b.stream_len, 5);
        assert_eq!(b.windows.len(), 2);
        let w0 = &b.windows[0];
        assert_eq!(w0.inputs, vec![0, 1, 5, 6]);
        assert_eq!(w0.targets, vec![1, 2, 6, 7]);
        assert!(w0.reset(1, 0));
        assert!(w0.reset(0, 0));
        assert!(!w0.reset(0, 1) && !w0.reset(1, 1));
        let w1 = &b.windows[1];
        assert_eq!(w1.inputs, vec![2, 3, 7, 8]);
        assert_eq!(w1.targets, vec![3, 4, 8, 9]);
        assert!(!w1.resets.iter().any(|&r| r));
    }

    #[test]
    fn too_short_is_an_error() {
        let c = EncodedCorpus::new(vec![1, 2, 3], vec![0], Split::Train).unwrap();
        assert!(matches!(batchify(&c, 4, 1), Err(Error::InsufficientData(_))));
        assert!(batchify(&c, 0, 1).is_err());
        assert!(batchify(&c, 1, 0).is_err());
    }
}
