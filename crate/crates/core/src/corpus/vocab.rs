use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{DOC_SEPARATOR, NUM, UNK};
use crate::error::{Error, Result};

/// Token ↔ id map restricted to the most frequent training tokens.
///
/// Id 0 is always [`UNK`] and id 1 always [`NUM`]; the cap counts only the
/// other retained tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    frequencies: Vec<u64>,
    cap: usize,
    coverage: f64,
}

impl Vocabulary {
    pub const UNK_ID: u32 = 0;
    pub const NUM_ID: u32 = 1;

    /// Keeps the `cap` most frequent tokens; ties go to the token seen first.
    pub fn build<S: AsRef<str>>(tokens: &[S], cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("vocabulary cap must be at least 1".into()));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut reserved = [0u64; 2];
        let mut total = 0u64;
        for t in tokens {
            let t = t.as_ref();
            match t {
                DOC_SEPARATOR => continue,
                UNK => reserved[0] += 1,
                NUM => reserved[1] += 1,
                _ => {
                    let c = counts.entry(t).or_insert_with(|| {
                        order.push(t);
                        0
                    });
                    *c += 1;
                }
            }
            total += 1;
        }
        // stable sort keeps first-occurrence order among equal counts
        order.sort_by(|a, b| counts[b].cmp(&counts[a]));
        order.truncate(cap);

        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            frequencies: Vec::new(),
            cap,
            coverage: 0.0,
        };
        vocab.push(UNK, reserved[0]);
        vocab.push(NUM, reserved[1]);
        let mut covered = reserved[1];
        for t in order {
            covered += counts[t];
            vocab.push(t, counts[t]);
        }
        vocab.coverage = if total == 0 {
            1.0
        } else {
            covered as f64 / total as f64
        };
        Ok(vocab)
    }

    fn push(&mut self, token: &str, freq: u64) {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        self.frequencies.push(freq);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Fraction of training tokens (separators excluded) not mapped to UNK.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, or the UNK id when it was not retained.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.frequencies.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// One token per line in id order.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary file. Frequencies are not stored in the file and
    /// come back as zero.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            frequencies: Vec::new(),
            cap: 0,
            coverage: f64::NAN,
        };
        for (n, line) in text.lines().enumerate() {
            let tok = line.trim_end_matches('\r');
            let expected = match n {
                0 => Some(UNK),
                1 => Some(NUM),
                _ => None,
            };
            if let Some(want) = expected {
                if tok != want {
                    return Err(parse_err(n + 1, format!("expected `{want}`, found `{tok}`")));
                }
            }
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(parse_err(n + 1, format!("invalid token `{tok}`")));
            }
            if vocab.token_to_id.contains_key(tok) {
                return Err(parse_err(n + 1, format!("duplicate token `{tok}`")));
            }
            vocab.push(tok, 0);
        }
        if vocab.len() < 2 {
            return Err(parse_err(
                vocab.len() + 1,
                "vocabulary must start with the reserved symbols".into(),
            ));
        }
        vocab.cap = vocab.len() - 2;
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn keeps_most_frequent() {
        let v = Vocabulary::build(&toks("b a b c b a"), 2).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.get("a").is_some() && v.get("b").is_some());
        assert_eq!(v.id("c"), Vocabulary::UNK_ID);
        assert_eq!(v.token(2), Some("b"));
        assert!((v.coverage() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ties_follow_first_occurrence() {
        let v = Vocabulary::build(&toks("x y z y x z w"), 2).unwrap();
        assert_eq!(v.token(2), Some("x"));
        assert_eq!(v.token(3), Some("y"));
        assert_eq!(v.id("z"), Vocabulary::UNK_ID);
    }

    #[test]
    fn reserved_symbols_survive_small_caps() {
        let v = Vocabulary::build(&toks("<num> <num> <num> a b"), 1).unwrap();
        assert_eq!(v.token(0), Some(UNK));
        assert_eq!(v.token(1), Some(NUM));
        assert_eq!(v.len(), 3);
        assert!((v.coverage() - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cap_is_rejected() {
        assert!(Vocabulary::build(&toks("a"), 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&toks("the cat the dog <num>"), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<unk>\n<num>\n"));
        let back = Vocabulary::read(&path).unwrap();
        assert_eq!(back.tokens(), v.tokens());
    }

    #[test]
    fn bad_vocab_file_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "<unk>\nfoo\n").unwrap();
        match Vocabulary::read(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
