use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Vocabulary, BLANK};
use crate::error::{Error, Result};

pub const CANDIDATES: usize = 10;
const CONTEXT_LINES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    NamedEntity,
    CommonNoun,
    Verb,
    Preposition,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::NamedEntity,
        Category::CommonNoun,
        Category::Verb,
        Category::Preposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::NamedEntity => "named-entity",
            Category::CommonNoun => "common-noun",
            Category::Verb => "verb",
            Category::Preposition => "preposition",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "ne" | "named-entity" => Some(Category::NamedEntity),
            "cn" | "common-noun" => Some(Category::CommonNoun),
            "v" | "verb" => Some(Category::Verb),
            "p" | "preposition" => Some(Category::Preposition),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeInstance {
    /// Context sentences concatenated in order.
    pub context_ids: Vec<u32>,
    pub context_sentences: usize,
    /// Query ids; the blank position holds the UNK id as a placeholder.
    pub query_ids: Vec<u32>,
    pub blank: usize,
    pub candidates: [u32; CANDIDATES],
    pub answer: usize,
    pub category: Category,
}

impl ClozeInstance {
    /// The query with candidate `c` written into the blank.
    pub fn filled_query(&self, c: usize) -> Vec<u32> {
        let mut q = self.query_ids.clone();
        q[self.blank] = self.candidates[c];
        q
    }
}

/// Parses cloze blocks: 20 context lines followed by a query line of the
/// form `query<TAB>category<TAB>answer<TAB>cand1|...|cand10`. Blocks are
/// separated by blank lines.
pub fn parse_cloze(text: &str, vocab: &Vocabulary, path: &Path) -> Result<Vec<ClozeInstance>> {
    let mut out = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !block.is_empty() {
                out.push(parse_block(&block, vocab, path)?);
                block.clear();
            }
        } else {
            block.push((n + 1, line));
        }
    }
    if !block.is_empty() {
        out.push(parse_block(&block, vocab, path)?);
    }
    Ok(out)
}

pub fn load_cloze(path: &Path, vocab: &Vocabulary) -> Result<Vec<ClozeInstance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloze(&text, vocab, path)
}

fn parse_block(block: &[(usize, &str)], vocab: &Vocabulary, path: &Path) -> Result<ClozeInstance> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let first = block[0].0;
    if block.len() != CONTEXT_LINES + 1 {
        return Err(err(
            first,
            format!(
                "cloze block has {} lines, expected {} context lines and a query line",
                block.len(),
                CONTEXT_LINES
            ),
        ));
    }
    let mut context_ids = Vec::new();
    for (_, line) in &block[..CONTEXT_LINES] {
        context_ids.extend(tokenize(line).iter().map(|t| vocab.id(t)));
    }

    let (qline, query) = block[CONTEXT_LINES];
    let fields: Vec<&str> = query.split('\t').collect();
    if fields.len() != 4 {
        return Err(err(
            qline,
            format!("query line has {} tab-separated fields, expected 4", fields.len()),
        ));
    }
    let category = Category::parse(fields[1].trim())
        .ok_or_else(|| err(qline, format!("unknown category `{}`", fields[1])))?;
    let answer_tok = fields[2].trim();
    let cand_toks: Vec<&str> = fields[3].split('|').map(str::trim).collect();
    if cand_toks.len() != CANDIDATES {
        return Err(err(
            qline,
            format!("{} candidates, expected {CANDIDATES}", cand_toks.len()),
        ));
    }
    for (i, c) in cand_toks.iter().enumerate() {
        if c.is_empty() {
            return Err(err(qline, format!("candidate {} is empty", i + 1)));
        }
        if cand_toks[..i].contains(c) {
            return Err(err(qline, format!("duplicate candidate `{c}`")));
        }
    }
    let answer = cand_toks
        .iter()
        .position(|&c| c == answer_tok)
        .ok_or_else(|| err(qline, format!("answer `{answer_tok}` is not a candidate")))?;

    let raw: Vec<&str> = fields[0].split_whitespace().collect();
    let blanks: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == BLANK)
        .map(|(i, _)| i)
        .collect();
    if blanks.len() != 1 {
        return Err(err(
            qline,
            format!("query has {} `{BLANK}` markers, expected exactly one", blanks.len()),
        ));
    }
    let query_ids = raw
        .iter()
        .map(|t| {
            if *t == BLANK {
                Vocabulary::UNK_ID
            } else {
                vocab.id(&tokenize(t)[0])
            }
        })
        .collect();
    let mut candidates = [Vocabulary::UNK_ID; CANDIDATES];
    for (slot, c) in candidates.iter_mut().zip(&cand_toks) {
        *slot = vocab.id(&tokenize(c)[0]);
    }
    Ok(ClozeInstance {
        context_ids,
        context_sentences: CONTEXT_LINES,
        query_ids,
        blank: blanks[0],
        candidates,
        answer,
        category,
    })
}
