//! Flat `key = value` configuration text.
//!
//! One pair per line; `#` starts a comment; blank lines are skipped. Keys
//! are case-sensitive and may appear at most once.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            context: "config".into(),
            line: n + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err("expected key = value".into()))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(parse_err(format!("invalid key {key:?}")));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(parse_err(format!("duplicate key {key}")));
        }
    }
    Ok(out)
}

/// Parse a typed value for `key`.
pub fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::ConfigInvalid(format!("{key}: cannot parse {raw:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let m = parse_kv("# header\n a = 1 \n\nb=two # trailing\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "two");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("a=1\na=2\n").is_err());
        assert!(parse_kv("bad key=1\n").is_err());
        assert!(matches!(
            parse_kv("ok=1\n=3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn typed_values() {
        assert_eq!(value::<u32>("n", "12").unwrap(), 12);
        assert!(value::<f64>("x", "abc").is_err());
    }
}
