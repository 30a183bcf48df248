//! Flat `key = value` configuration files, overridden by flags.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const SEED_ENV: &str = "CTM_SEED";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}: line {}: expected key = value", i + 1))?;
            let key = k.trim().replace('_', "-");
            if key.is_empty() {
                bail!("{origin}: line {}: empty key", i + 1);
            }
            if file.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("{origin}: line {}: duplicate key {key}", i + 1);
            }
        }
        Ok(Self {
            file,
            resolved: RefCell::default(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key} = {v:?}: {e}")))
            .transpose()
    }

    /// Flag, else config file, else `default`; the choice is recorded for the manifest.
    pub fn get<T: FromStr + Display>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.borrow_mut().insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) for values without a default.
    pub fn get_opt<T: FromStr + Display>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.borrow_mut().insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| anyhow!("missing --{key} (flag or config key)"))
    }

    /// Flag, config `seed`, then the `CTM_SEED` environment variable, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.parse::<u64>().with_context(|| format!("{SEED_ENV}={v:?}"))?),
            Err(_) => None,
        };
        let v = flag.or(self.file_value("seed")?).or(env).unwrap_or(0);
        self.resolved.borrow_mut().insert("seed".into(), v.to_string());
        Ok(v)
    }

    pub fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let v = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.resolved
                .borrow_mut()
                .insert(key.to_string(), p.display().to_string());
        }
        v
    }

    pub fn require_path(&self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)
            .ok_or_else(|| anyhow!("missing --{key} (flag or config key)"))
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }

    /// Config keys never consulted by the command.
    pub fn unused(&self) -> Vec<String> {
        let used = self.resolved.borrow();
        self.file.keys().filter(|k| !used.contains_key(*k)).cloned().collect()
    }
}
