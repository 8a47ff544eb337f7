//! Structured plain-text serialization: `[section]` headers with
//! `key = value` entries, `#` comments. Used for configs, checkpoint
//! headers, curvature reports, masks and run manifests.

use crate::error::{CoreError, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section {
            name: name.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            CoreError::Config(format!("missing key `{}` in section [{}]", key, self.name))
        })
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            CoreError::Config(format!(
                "invalid value `{}` for key `{}` in section [{}]",
                raw, key, self.name
            ))
        })
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(_) => self.parse(key),
        }
    }

    /// Comma-separated list value.
    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    CoreError::Config(format!(
                        "invalid list element `{}` for key `{}` in section [{}]",
                        s, key, self.name
                    ))
                })
            })
            .collect()
    }

    /// Rejects any key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        let allowed: BTreeSet<&str> = allowed.iter().copied().collect();
        for (k, _) in &self.entries {
            if !allowed.contains(k.as_str()) {
                return Err(CoreError::Config(format!(
                    "unknown key `{}` in section [{}]",
                    k, self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn new() -> Self {
        Document::default()
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| CoreError::Config(format!("missing section [{}]", name)))
    }

    pub fn push(&mut self, section: Section) -> &mut Self {
        self.sections.push(section);
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{} = {}", k, v);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Document> {
        let mut doc = Document::new();
        let mut current: Option<Section> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                if let Some(done) = current.take() {
                    doc.sections.push(done);
                }
                current = Some(Section::new(name.trim()));
            } else if let Some((k, v)) = line.split_once('=') {
                let section = current.as_mut().ok_or_else(|| {
                    CoreError::Config(format!("line {}: entry before any section", lineno + 1))
                })?;
                section
                    .entries
                    .push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(CoreError::Config(format!(
                    "line {}: expected `key = value` or `[section]`, got `{}`",
                    lineno + 1,
                    line
                )));
            }
        }
        if let Some(done) = current.take() {
            doc.sections.push(done);
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut doc = Document::new();
        let mut s = Section::new("model");
        s.set("architecture", "mlp").set("layers", "784,100,10");
        doc.push(s);
        let text = doc.to_text();
        let back = Document::parse(&text).unwrap();
        assert_eq!(doc, back);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let doc = Document::parse("# hi\n\n[a]\nx = 1\n# another\ny = two words\n").unwrap();
        let a = doc.section("a").unwrap();
        assert_eq!(a.parse::<i32>("x").unwrap(), 1);
        assert_eq!(a.get("y").unwrap(), "two words");
    }

    #[test]
    fn unknown_key_rejected() {
        let doc = Document::parse("[a]\nx = 1\nz = 2\n").unwrap();
        let err = doc.section("a").unwrap().check_keys(&["x"]).unwrap_err();
        assert!(err.to_string().contains("unknown key `z`"));
    }

    #[test]
    fn entry_before_section_rejected() {
        assert!(Document::parse("x = 1\n").is_err());
    }
}
