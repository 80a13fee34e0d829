//! Word-level tokenizer over the templated corpus.
//!
//! Text splits into pieces: a run of letters, a single digit, or a single
//! other character. One space directly before a non-space piece is glued to
//! it (`" are"`, `" 3"`); any other whitespace character is a piece of its
//! own. Concatenating the pieces gives back the input, so decoding is exact
//! whenever every piece is in the vocabulary.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocabulary line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Split `text` into tokenizer pieces (borrowed slices of `text`).
pub fn pieces(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let start = chars[k].0;
        let mut c = chars[k].1;
        if c == ' ' && chars.get(k + 1).is_some_and(|&(_, n)| !n.is_whitespace()) {
            k += 1;
            c = chars[k].1;
        } else if c.is_whitespace() {
            out.push(&text[start..end_of(k + 1)]);
            k += 1;
            continue;
        }
        k += 1;
        if c.is_alphabetic() {
            while k < chars.len() && chars[k].1.is_alphabetic() {
                k += 1;
            }
        }
        out.push(&text[start..end_of(k)]);
    }
    out
}

/// Number of tokens `text` encodes to (specials excluded).
pub fn count_tokens(text: &str) -> usize {
    pieces(text).len()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    /// Build from a corpus. Ids: the four specials, then every digit with
    /// and without a leading space, then the remaining pieces in sorted order.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for d in '0'..='9' {
            set.insert(d.to_string());
            set.insert(format!(" {d}"));
        }
        for t in texts {
            set.extend(pieces(t).into_iter().map(str::to_owned));
        }
        let vocab = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set.into_iter().filter(|p| !SPECIALS.contains(&p.as_str())))
            .collect();
        Self::from_vocab(vocab)
    }

    fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { vocab, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Encode without specials; unknown pieces map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        pieces(text)
            .into_iter()
            .map(|p| self.id(p).unwrap_or(UNK))
            .collect()
    }

    /// Concatenate token strings. `<pad>`, `<bos>` and `<eos>` render as
    /// nothing; `<unk>` and out-of-range ids render as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                _ => s.push_str(self.token(id).unwrap_or(SPECIALS[UNK as usize])),
            }
        }
        s
    }

    /// One token per line, with `\` and newline escaped as `\\` and `\n`.
    pub fn write_vocab(&self, w: &mut impl Write) -> std::io::Result<()> {
        for t in &self.vocab {
            writeln!(w, "{}", t.replace('\\', "\\\\").replace('\n', "\\n"))?;
        }
        Ok(())
    }

    pub fn read_vocab(r: impl BufRead) -> Result<Self, TokenizerError> {
        let mut vocab = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let mut tok = String::new();
            let mut chars = line.chars();
            while let Some(c) = chars.next() {
                if c != '\\' {
                    tok.push(c);
                    continue;
                }
                match chars.next() {
                    Some('\\') => tok.push('\\'),
                    Some('n') => tok.push('\n'),
                    other => {
                        return Err(TokenizerError::Format {
                            line: i + 1,
                            msg: format!("bad escape {other:?}"),
                        })
                    }
                }
            }
            vocab.push(tok);
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if vocab.get(i).map(String::as_str) != Some(*s) {
                return Err(TokenizerError::Format {
                    line: i + 1,
                    msg: format!("expected special token {s}"),
                });
            }
        }
        let unique: BTreeSet<_> = vocab.iter().collect();
        if unique.len() != vocab.len() {
            return Err(TokenizerError::Format {
                line: 0,
                msg: "duplicate tokens".into(),
            });
        }
        Ok(Self::from_vocab(vocab))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_vocab(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::read_vocab(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
