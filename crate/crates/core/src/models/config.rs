use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain LSTM; logits straight from the LSTM output.
    Lstm,
    /// Attention over the previous L full outputs.
    Attention,
    /// Output split into key and value.
    KeyValue,
    /// Output split into key, value and predict parts.
    KeyValuePredict,
    /// Concatenated slices of the previous N−1 outputs.
    Ngram,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Lstm,
        Variant::Attention,
        Variant::KeyValue,
        Variant::KeyValuePredict,
        Variant::Ngram,
    ];

    pub fn is_attentive(self) -> bool {
        matches!(self, Variant::Attention | Variant::KeyValue | Variant::KeyValuePredict)
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Lstm => 0,
            Variant::Attention => 1,
            Variant::KeyValue => 2,
            Variant::KeyValuePredict => 3,
            Variant::Ngram => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::Attention => "attention",
            Variant::KeyValue => "kv",
            Variant::KeyValuePredict => "kvp",
            Variant::Ngram => "ngram",
        }
    }

    /// How many equal parts the LSTM output is split into, given the n-gram
    /// order (ignored by the other variants).
    pub fn parts(self, order: usize) -> usize {
        match self {
            Variant::Lstm | Variant::Attention => 1,
            Variant::KeyValue => 2,
            Variant::KeyValuePredict => 3,
            Variant::Ngram => order.saturating_sub(1).max(1),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(Variant::Lstm),
            "attention" | "att" => Ok(Variant::Attention),
            "kv" | "key-value" => Ok(Variant::KeyValue),
            "kvp" | "key-value-predict" => Ok(Variant::KeyValuePredict),
            "ngram" | "n-gram" => Ok(Variant::Ngram),
            other => Err(format!(
                "unknown variant `{other}` (expected lstm, attention, kv, kvp or ngram)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Word embedding size `w`.
    pub embed_dim: usize,
    /// LSTM output size `k`.
    pub hidden: usize,
    /// Attention window `L` (attentive variants).
    pub window: usize,
    /// Order `N` (n-gram variant).
    pub order: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, embed_dim: usize, hidden: usize, vocab_size: usize) -> Self {
        ModelConfig {
            variant,
            embed_dim,
            hidden,
            window: if variant.is_attentive() { 5 } else { 0 },
            order: if variant == Variant::Ngram { 4 } else { 0 },
            vocab_size,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    /// Every constraint the configuration violates.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.embed_dim == 0 {
            v.push("embedding size w must be positive".to_string());
        }
        if self.hidden == 0 {
            v.push("hidden size k must be positive".to_string());
        }
        match self.variant {
            Variant::KeyValue if self.hidden % 2 != 0 => v.push(format!(
                "key-value needs an even hidden size, got k={}",
                self.hidden
            )),
            Variant::KeyValuePredict if self.hidden % 3 != 0 => v.push(format!(
                "key-value-predict needs a hidden size divisible by 3, got k={}",
                self.hidden
            )),
            Variant::Ngram if self.order < 2 => {
                v.push(format!("n-gram order must be at least 2, got N={}", self.order))
            }
            Variant::Ngram if self.hidden % (self.order - 1) != 0 => v.push(format!(
                "a {}-gram model needs a hidden size divisible by {}, got k={}",
                self.order,
                self.order - 1,
                self.hidden
            )),
            _ => {}
        }
        if self.variant.is_attentive() && self.window == 0 {
            v.push("attention window L must be at least 1".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Width of one output part: the attention / prediction dimension `d`.
    pub fn part_dim(&self) -> usize {
        self.hidden / self.variant.parts(self.order)
    }

    /// Width of the vector fed to the output softmax.
    pub fn output_dim(&self) -> usize {
        self.part_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_rules() {
        let kvp = ModelConfig::new(Variant::KeyValuePredict, 300, 301, 10);
        let msg = kvp.validate().unwrap_err().to_string();
        assert!(msg.contains("divisible by 3"), "{msg}");
        assert!(ModelConfig::new(Variant::KeyValuePredict, 300, 300, 10).validate().is_ok());
        assert!(ModelConfig::new(Variant::KeyValue, 4, 7, 10).validate().is_err());
        let ng = ModelConfig::new(Variant::Ngram, 4, 10, 10).with_order(4);
        assert!(ng.validate().is_err());
        assert!(ng.with_order(3).validate().is_ok());
        assert!(ModelConfig::new(Variant::Ngram, 4, 9, 10).with_order(1).validate().is_err());
        assert!(ModelConfig::new(Variant::Attention, 4, 9, 10).with_window(0).validate().is_err());
    }

    #[test]
    fn part_dimensions() {
        assert_eq!(ModelConfig::new(Variant::KeyValuePredict, 300, 300, 1).part_dim(), 100);
        assert_eq!(ModelConfig::new(Variant::KeyValue, 300, 560, 1).part_dim(), 280);
        assert_eq!(ModelConfig::new(Variant::Attention, 300, 296, 1).part_dim(), 296);
        assert_eq!(ModelConfig::new(Variant::Ngram, 300, 966, 1).with_order(4).part_dim(), 322);
        assert_eq!(ModelConfig::new(Variant::Lstm, 300, 300, 1).part_dim(), 300);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.short_name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert!("gru".parse::<Variant>().is_err());
    }
}
