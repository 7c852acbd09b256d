//! Flat `key = value` text with `#` comments.

use crate::error::{Error, Result};

/// One assignment with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::parse(i + 1, format!("bad key `{key}`")));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::parse(i + 1, format!("duplicate key `{key}`")));
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn parse_value<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| Error::parse(e.line, format!("bad value `{}` for `{}`", e.value, e.key)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_reports_lines() {
        let es = parse("# header\na = 1\n\n b=two words # note\n").unwrap();
        assert_eq!(es.len(), 2);
        assert_eq!((es[1].line, es[1].key.as_str(), es[1].value.as_str()), (4, "b", "two words"));
        assert_eq!(parse_value::<u32>(&es[0]).unwrap(), 1);
        assert!(matches!(parse("a = 1\nnope"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("a = 1\na = 2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_value::<u32>(&es[1]), Err(Error::Parse { line: 4, .. })));
    }
}
