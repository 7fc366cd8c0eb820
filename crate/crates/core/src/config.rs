//! Flat, sectioned key-value files.
//!
//! Used for column mappings, weight tables, experiment configs and synthetic
//! generator specs. The grammar is deliberately small:
//!
//! ```text
//! # comment
//! key = value
//! [section optional-name]
//! other_key = value
//! ```
//!
//! Keys before the first section header belong to the unnamed root section.
//! Keys may contain any character except `=`; values run to end of line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{section}: missing required key `{key}`")]
    MissingKey { section: String, key: String },
    #[error("{section}: invalid value for `{key}`: {message}")]
    InvalidValue {
        section: String,
        key: String,
        message: String,
    },
    #[error("{section}: unknown key `{key}`")]
    UnknownKey { section: String, key: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// One `[kind name]` block (or the root block) with its entries in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub kind: String,
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }

    pub fn label(&self) -> String {
        match (&self.kind[..], &self.name) {
            ("", _) => "root".to_string(),
            (k, Some(n)) => format!("[{k} {n}]"),
            (k, None) => format!("[{k}]"),
        }
    }

    /// Parses `key` with `FromStr`, returning `Ok(None)` when it is absent.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e: T::Err| ConfigError::InvalidValue {
                section: self.label(),
                key: key.to_string(),
                message: e.to_string(),
            }),
        }
    }

    /// Comma-separated list value.
    pub fn parse_list<T>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let Some(raw) = self.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
                    section: self.label(),
                    key: key.to_string(),
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Rejects any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(ConfigError::UnknownKey {
                section: self.label(),
                key: e.key.clone(),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvDocument {
    pub sections: Vec<Section>,
}

impl KvDocument {
    pub fn root(&self) -> &Section {
        &self.sections[0]
    }

    pub fn sections_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.kind == kind)
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        text.parse()
    }
}

impl FromStr for KvDocument {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut sections = vec![Section::default()];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let inner = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: "unterminated section header".into(),
                })?;
                let mut parts = inner.split_whitespace();
                let kind = parts.next().ok_or_else(|| ConfigError::Syntax {
                    line,
                    message: "empty section header".into(),
                })?;
                let name = parts.collect::<Vec<_>>().join(" ");
                sections.push(Section {
                    kind: kind.to_string(),
                    name: (!name.is_empty()).then_some(name),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got `{trimmed}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    message: "empty key".into(),
                });
            }
            sections
                .last_mut()
                .expect("root section always present")
                .entries
                .push(Entry {
                    key: key.to_string(),
                    value: value.trim().to_string(),
                    line,
                });
        }
        Ok(KvDocument { sections })
    }
}
