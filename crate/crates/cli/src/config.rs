//! Run configuration: one TOML file with dotted keys, plus `--set key=value`
//! overrides. Typed accessors report the offending key on failure.

use std::path::{Path, PathBuf};

use cluster_gas::{Error, Result};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Clone, Debug)]
pub struct Config {
    root: Table,
    /// Directory relative paths in the file are resolved against.
    base: PathBuf,
}

impl Config {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::parse(&text, &path.display().to_string(), base)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str, base: PathBuf) -> Result<Self> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
            location: origin.to_string(),
            message: e.message().to_string(),
        })?;
        Ok(Config { root, base })
    }

    /// `key=value`; the value is read as a TOML literal, falling back to a
    /// bare string.
    pub fn apply_override(&mut self, text: &str) -> Result<()> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("override '{text}' is not of the form key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Invalid(format!("malformed override key '{key}'")));
        }
        let mut table = &mut self.root;
        for p in &parts[..parts.len() - 1] {
            let entry = table.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Invalid(format!("override '{key}': '{p}' is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        Ok(())
    }

    fn lookup(&self, key: &str) -> Option<&Value> {
        let mut parts = key.split('.');
        let mut v = self.root.get(parts.next()?)?;
        for p in parts {
            v = v.as_table()?.get(p)?;
        }
        Some(v)
    }

    pub fn has(&self, key: &str) -> bool {
        self.lookup(key).is_some()
    }

    fn bad(key: &str, want: &str) -> Error {
        Error::Invalid(format!("config key '{key}' must be {want}"))
    }

    fn missing(key: &str) -> Error {
        Error::Invalid(format!("config key '{key}' is required"))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(Self::bad(key, "a number")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| Self::missing(key))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            // Allow `1e6`-style counts when they are exact integers.
            Some(Value::Float(x)) if *x >= 0.0 && x.fract() == 0.0 && *x < 1.8e19 => Ok(Some(*x as u64)),
            Some(_) => Err(Self::bad(key, "a non-negative integer")),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.u64_opt(key)?.ok_or_else(|| Self::missing(key))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.u64_opt(key)?.unwrap_or(default))
    }

    /// A count that must be at least 1.
    pub fn count_or(&self, key: &str, default: u64) -> Result<u64> {
        let n = self.u64_or(key, default)?;
        if n == 0 {
            return Err(Self::bad(key, ">= 1"));
        }
        Ok(n)
    }

    pub fn count(&self, key: &str) -> Result<u64> {
        let n = self.u64(key)?;
        if n == 0 {
            return Err(Self::bad(key, ">= 1"));
        }
        Ok(n)
    }

    pub fn str_opt(&self, key: &str) -> Result<Option<&str>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(Self::bad(key, "a string")),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        Ok(self.str_opt(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.lookup(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(Self::bad(key, "true or false")),
        }
    }

    pub fn f64_list_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(Self::bad(key, "a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Self::bad(key, "a list of numbers")),
        }
    }

    pub fn usize_list_opt(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 1 => Ok(*i as usize),
                    _ => Err(Self::bad(key, "a list of positive integers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Self::bad(key, "a list of positive integers")),
        }
    }

    pub fn str_list_opt(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.lookup(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Self::bad(key, "a list of strings")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Self::bad(key, "a list of strings")),
        }
    }

    /// Numeric entries of a table such as `potential.params`.
    pub fn numeric_table(&self, key: &str) -> Result<Vec<(String, f64)>> {
        match self.lookup(key) {
            None => Ok(Vec::new()),
            Some(Value::Table(t)) => t
                .iter()
                .map(|(k, v)| match v {
                    Value::Float(x) => Ok((k.clone(), *x)),
                    Value::Integer(i) => Ok((k.clone(), *i as f64)),
                    _ => Err(Self::bad(&format!("{key}.{k}"), "a number")),
                })
                .collect(),
            Some(_) => Err(Self::bad(key, "a table of numbers")),
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let raw = self.str_opt(key)?.ok_or_else(|| Self::missing(key))?;
        Ok(self.resolve(raw))
    }

    pub fn resolve(&self, raw: &str) -> PathBuf {
        let p = Path::new(raw);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Canonical text of the effective configuration (sorted keys, overrides
    /// applied).
    pub fn canonical(&self) -> String {
        toml::to_string(&self.root).unwrap_or_default()
    }

    /// SHA-256 of [`Config::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
