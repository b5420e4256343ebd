//! Small text-format helpers shared by the manifest, plan, config and report writers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key=value` file. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    context: String,
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(context, format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::parse(
                    context,
                    format!("line {}: duplicate key {key}", lineno + 1),
                ));
            }
        }
        Ok(Self {
            context: context.to_string(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("{}: field `{key}` has invalid value `{v}`", self.context))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fills `key` unless the file already sets it.
    pub fn set_default(&mut self, key: &str, value: impl Into<String>) {
        self.entries.entry(key.to_string()).or_insert_with(|| value.into());
    }

    /// Overrides whatever the file says.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Sorted `key=value` lines; parses back to an equal map.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Reject keys outside `allowed`, so typos surface as validation errors.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.keys().filter(|k| !allowed.contains(k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{}: unknown field(s) {}",
                self.context,
                unknown.join(", ")
            )))
        }
    }
}

/// Write through a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `%.{digits}g`-style formatting: `digits` significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..digits as i32).contains(&exp) {
        let s = format!("{:.*e}", digits - 1, x);
        // trim mantissa zeros: 1.50000e3 -> 1.5e3
        if let Some((mant, e)) = s.split_once('e') {
            let mant = if mant.contains('.') {
                mant.trim_end_matches('0').trim_end_matches('.')
            } else {
                mant
            };
            return format!("{mant}e{e}");
        }
        return s;
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Split a TSV line into exactly `n` fields.
pub fn tsv_fields<'a>(line: &'a str, n: usize, context: &str, lineno: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(Error::parse(
            context,
            format!("line {lineno}: expected {n} tab-separated fields, got {}", fields.len()),
        ));
    }
    Ok(fields)
}

pub fn parse_field<T: FromStr>(s: &str, what: &str, context: &str, lineno: usize) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::parse(context, format!("line {lineno}: bad {what} `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let kv = KeyValues::parse("# c\nalpha = 0.8\n\nname=x\n", "t").unwrap();
        assert_eq!(kv.get::<f64>("alpha").unwrap(), Some(0.8));
        assert_eq!(kv.get_str("name"), Some("x"));
        assert!(kv.get::<f64>("name").is_err());
        assert!(kv.check_known(&["alpha"]).is_err());
        assert!(KeyValues::parse("novalue\n", "t").is_err());
        assert!(KeyValues::parse("a=1\na=2\n", "t").is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.852_930_123_456_789, 12), "0.852930123457");
        assert_eq!(fmt_sig(32400.0, 12), "32400");
        assert_eq!(fmt_sig(1.0, 12), "1");
        assert_eq!(fmt_sig(1.5e-7, 12), "1.5e-7");
        let x = 0.147_069_876_543_21_f64;
        let back: f64 = fmt_sig(x, 12).parse().unwrap();
        assert!((back - x).abs() / x < 1e-11);
    }
}
