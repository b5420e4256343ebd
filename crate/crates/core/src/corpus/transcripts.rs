//! `id<TAB>text` transcript tables.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textio::{read_text, write_atomic};

pub type Transcripts = BTreeMap<String, String>;

pub fn transcripts_to_string(t: &Transcripts) -> String {
    t.iter().map(|(id, text)| format!("{id}\t{text}\n")).collect()
}

pub fn parse_transcripts(text: &str, context: &str) -> Result<Transcripts> {
    let mut out = Transcripts::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').unwrap_or((line, ""));
        if id.is_empty() {
            return Err(Error::parse(context, format!("line {}: empty id", i + 1)));
        }
        if out.insert(id.to_string(), body.to_string()).is_some() {
            return Err(Error::parse(context, format!("line {}: duplicate id {id}", i + 1)));
        }
    }
    Ok(out)
}

pub fn read_transcripts(path: &Path) -> Result<Transcripts> {
    parse_transcripts(&read_text(path)?, &path.display().to_string())
}

pub fn write_transcripts(path: &Path, t: &Transcripts) -> Result<()> {
    write_atomic(path, transcripts_to_string(t).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_empty_text() {
        let mut t = Transcripts::new();
        t.insert("a".into(), "ọmọ mi".into());
        t.insert("b".into(), String::new());
        assert_eq!(parse_transcripts(&transcripts_to_string(&t), "t").unwrap(), t);
        assert!(parse_transcripts("a\tx\na\ty\n", "t").is_err());
    }
}
