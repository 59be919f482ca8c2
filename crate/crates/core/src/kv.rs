//! Flat `key = value` text files: one pair per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub value: String,
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    entries: BTreeMap<String, Entry>,
}

fn config_error(line: usize, field: &str, msg: impl Into<String>) -> Error {
    Error::Config { line, field: field.to_string(), msg: msg.into() }
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_error(line, content, "expected `key = value`"));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(config_error(line, "", "empty key"));
            }
            let entry = Entry { line, value: value.trim().to_string() };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(config_error(line, key, format!("duplicate key, first set on line {}", prev.line)));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Insert or replace a value, as a command-line override would.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), Entry { line: 0, value: value.into() });
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| config_error(e.line, key, format!("cannot parse `{}`: {err}", e.value))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_value(key)?.ok_or_else(|| config_error(0, key, "missing"))
    }

    /// Comma-separated list.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|err| config_error(e.line, key, format!("cannot parse `{s}`: {err}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Error on the first key outside `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, e) in &self.entries {
            if !known.contains(&key.as_str()) {
                return Err(config_error(e.line, key, "unknown key"));
            }
        }
        Ok(())
    }

    /// Line of a key, 0 if it came from an override or is absent.
    pub fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_overrides() {
        let mut t = Table::parse("# header\na = 1.5\n\nlist = 1, 2,3 # trailing\n").unwrap();
        assert_eq!(t.parse_value::<f64>("a").unwrap(), Some(1.5));
        assert_eq!(t.parse_list::<u32>("list").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(t.parse_value::<f64>("b").unwrap(), None);
        t.set("a", "2");
        assert_eq!(t.require::<f64>("a").unwrap(), 2.0);
    }

    #[test]
    fn errors_carry_line_and_field() {
        match Table::parse("a = 1\nbroken line\n") {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match Table::parse("a = 1\na = 2\n") {
            Err(Error::Config { line: 2, field, .. }) => assert_eq!(field, "a"),
            other => panic!("{other:?}"),
        }
        let t = Table::parse("x = 1\ny = abc\n").unwrap();
        match t.parse_value::<f64>("y") {
            Err(Error::Config { line: 2, field, .. }) => assert_eq!(field, "y"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(t.reject_unknown(&["x"]), Err(Error::Config { line: 2, .. })));
    }
}
