//! Line-oriented `key = value` files with `[section]` headers, shared by the
//! service and experiment configs.

use std::collections::BTreeSet;
use std::str::FromStr;

use ini::{Ini, ParseOption};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("[{section}] {key}: {reason}")]
    Value { section: String, key: String, reason: String },
    #[error("[{0}]: unknown section")]
    UnknownSection(String),
    #[error("[{section}]: unknown key {key}")]
    UnknownKey { section: String, key: String },
    #[error("[{0}]: section appears more than once")]
    DuplicateSection(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    entries: Vec<(String, String)>,
    used: std::cell::RefCell<BTreeSet<String>>,
}

impl Section {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| self.bad(key, e.to_string())),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// A float where `inf`, `none` and `off` all mean "no bound".
    pub fn bound(&self, key: &str) -> Result<Option<f64>, ConfError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) if ["inf", "infinity", "none", "off"].contains(&v.to_ascii_lowercase().as_str()) => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|e| self.bad(key, e.to_string())),
        }
    }

    pub fn bad(&self, key: &str, reason: impl Into<String>) -> ConfError {
        ConfError::Value { section: self.name.clone(), key: key.to_string(), reason: reason.into() }
    }

    /// Fails on the first key no getter asked for.
    pub fn finish(&self) -> Result<(), ConfError> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(k)) {
            Some((k, _)) => Err(ConfError::UnknownKey { section: self.name.clone(), key: k.clone() }),
            None => Ok(()),
        }
    }
}

/// Sections in file order.
pub fn parse(text: &str) -> Result<Vec<Section>, ConfError> {
    let opt = ParseOption { enabled_quote: false, enabled_escape: false, ..ParseOption::default() };
    let ini = Ini::load_from_str_opt(text, opt).map_err(|e| ConfError::Syntax(e.to_string()))?;
    let mut out: Vec<Section> = Vec::new();
    for (name, props) in &ini {
        let Some(name) = name else {
            if let Some((k, _)) = props.iter().next() {
                return Err(ConfError::Syntax(format!("key {k} appears before any [section]")));
            }
            continue;
        };
        if out.iter().any(|s| s.name == name) {
            return Err(ConfError::DuplicateSection(name.to_string()));
        }
        let mut entries: Vec<(String, String)> = Vec::new();
        for (k, v) in props.iter() {
            if entries.iter().any(|(e, _)| e == k) {
                return Err(ConfError::Value { section: name.into(), key: k.into(), reason: "set more than once".into() });
            }
            entries.push((k.to_string(), v.trim().to_string()));
        }
        out.push(Section { name: name.to_string(), entries, used: Default::default() });
    }
    Ok(out)
}
