//! Config files: TOML documents of `key = value` lines, optionally grouped
//! under a `[command]` table. Keys are the long flag names; a flag given on
//! the command line always wins over the file.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use avel_core::{Error, Result};

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    /// Keys from the command's own table; unknown ones are errors there.
    sectioned: BTreeSet<String>,
    used: RefCell<BTreeSet<String>>,
}

fn normalize(key: &str) -> String {
    key.replace('_', "-")
}

fn scalar(key: &str, v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| scalar(key, x))
            .collect::<Result<Vec<_>>>()?
            .join(","),
        _ => return Err(Error::Config(format!("config key {key}: unsupported value"))),
    })
}

impl Settings {
    pub fn load(path: Option<&Path>, command: &str) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path)?;
        Self::parse(&text, command).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, command: &str) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut out = Self::default();
        for (k, v) in &doc {
            if let toml::Value::Table(_) = v {
                continue;
            }
            out.values.insert(normalize(k), scalar(k, v)?);
        }
        if let Some(toml::Value::Table(section)) = doc.get(command) {
            for (k, v) in section {
                let k2 = normalize(k);
                out.values.insert(k2.clone(), scalar(k, v)?);
                out.sectioned.insert(k2);
            }
        }
        Ok(out)
    }

    /// The flag if given, else the config value, parsed as `T`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::Config(format!("config key {key} = {raw:?}: {e}"))),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Rejects keys of the command's own table that no option consumed.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.values.keys().filter(|k| !used.contains(*k)).collect();
        let strict: Vec<&&String> = unknown.iter().filter(|k| self.sectioned.contains(**k)).collect();
        if !strict.is_empty() {
            return Err(Error::Config(format!("unknown config keys {strict:?}")));
        }
        for k in unknown {
            log::debug!("config key {k} not used by this command");
        }
        Ok(())
    }
}

/// Comma-separated list of numbers with a fixed arity.
#[derive(Clone, Debug, PartialEq)]
pub struct Numbers<T, const N: usize>(pub [T; N]);

impl<T: FromStr + Copy + Default, const N: usize> FromStr for Numbers<T, N>
where
    T::Err: Display,
{
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!("expected {N} comma-separated numbers, got {s:?}"));
        }
        let mut out = [T::default(); N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
        }
        Ok(Numbers(out))
    }
}
