//! Character vocabularies for CTC targets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::textio::{read_text, write_atomic};

pub const UNK: &str = "<unk>";
const SPACE: &str = "<space>";

/// Canonical composition, lowercase, single spaces; diacritics are kept.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    let squeezed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    squeezed.nfc().collect()
}

/// Index 0 is `<unk>`; CTC output `i + 1` is vocabulary entry `i`, output 0 the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    symbols: Vec<String>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Config(format!("vocabulary must start with {UNK}")));
        }
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate().skip(1) {
            let mut it = s.chars();
            if let (Some(c), None) = (it.next(), it.next()) {
                if index.insert(c, i).is_some() {
                    return Err(Error::Config(format!("duplicate vocabulary symbol {s:?}")));
                }
            }
        }
        let distinct: std::collections::HashSet<&String> = symbols.iter().collect();
        if distinct.len() != symbols.len() {
            return Err(Error::Config("duplicate vocabulary symbols".into()));
        }
        Ok(Self { symbols, index })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// CTC output dimension (vocabulary plus blank).
    pub fn outputs(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// CTC output indices of a normalized transcript.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let text = normalize_text(text);
        let mut missing: Vec<char> = text.chars().filter(|c| !self.contains(*c)).collect();
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(Error::Data(format!("transcript has characters outside the vocabulary: {missing:?}")));
        }
        Ok(text.chars().map(|c| self.index[&c] + 1).collect())
    }

    /// Text for CTC output indices (blank and placeholders contribute nothing).
    pub fn decode(&self, outputs: &[usize]) -> String {
        outputs
            .iter()
            .filter(|&&o| o > 0)
            .filter_map(|&o| self.symbols.get(o - 1))
            .filter(|s| s.chars().count() == 1)
            .map(String::as_str)
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{i}\t{}\n", if s == " " { SPACE } else { s }))
            .collect()
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (idx, sym) = line.split_once('\t').ok_or_else(|| Error::parse(context, format!("line {}: expected index<TAB>symbol", n + 1)))?;
            if idx.parse::<usize>().ok() != Some(symbols.len()) {
                return Err(Error::parse(context, format!("line {}: index out of order", n + 1)));
            }
            symbols.push(if sym == SPACE { " ".to_string() } else { sym.to_string() });
        }
        Self::from_symbols(symbols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }
}

/// Vocabulary of exactly `size` entries: `<unk>`, then every character seen at
/// least `min_count` times ordered by descending frequency then codepoint,
/// then `<extra_N>` placeholders.
pub fn build_char_vocab<'a>(transcripts: impl IntoIterator<Item = &'a str>, size: usize, min_count: usize) -> Result<CharVocab> {
    let mut counts: BTreeMap<char, usize> = BTreeMap::new();
    let mut any = false;
    for t in transcripts {
        any = true;
        for c in normalize_text(t).chars() {
            *counts.entry(c).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Config("no transcripts to build a vocabulary from".into()));
    }
    let mut chars: Vec<(char, usize)> = counts.into_iter().filter(|&(_, n)| n >= min_count.max(1)).collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let room = size.saturating_sub(1);
    if chars.len() > room {
        let casualties = chars[room..].iter().map(|&(c, _)| c).collect();
        return Err(Error::VocabOverflow { size, needed: chars.len() + 1, casualties });
    }
    let mut symbols = vec![UNK.to_string()];
    symbols.extend(chars.iter().map(|&(c, _)| c.to_string()));
    let mut extra = 0;
    while symbols.len() < size {
        symbols.push(format!("<extra_{extra}>"));
        extra += 1;
    }
    CharVocab::from_symbols(symbols)
}
