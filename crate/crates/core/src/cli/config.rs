//! Flat `key=value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::agent::TrainConfig;
use crate::error::{Error, Result};

/// Keys outside the training config, with their defaults.
const RUN_KEYS: [(&str, &str); 15] = [
    ("env", ""),
    ("data", ""),
    ("checkpoint", ""),
    ("resume", ""),
    ("mode", "navigate"),
    ("sigma", "0.2"),
    ("transitions", "50000"),
    ("fragment_cells", "4"),
    ("episodes", "50"),
    ("eval_seed", "0"),
    ("resolution", "1"),
    ("variant", "FULL"),
    ("seeds", "0,1,2"),
    ("chunks", "1000"),
    ("task", "3"),
];

pub const SEED_ENV: &str = "MSPR_SEED";

/// Every setting of a run in canonical order. Later sources override
/// earlier ones: defaults, `MSPR_SEED`, config file, flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<(String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut values: Vec<(String, String)> = RUN_KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        values.extend(TrainConfig::default().entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        RunConfig { values }
    }
}

impl RunConfig {
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(|(k, _)| k.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::param(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("no config key `{key}`"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| Error::param(format!("invalid value `{v}` for `{key}`")))
    }

    /// `None` when the key holds the empty string.
    pub fn path(&self, key: &str) -> Option<&Path> {
        let v = self.get(key);
        (!v.is_empty()).then(|| Path::new(v))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let v = self.get("seeds");
        let out: Result<Vec<u64>> = v
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::param(format!("invalid seed `{s}` in `seeds`"))))
            .collect();
        let out = out?;
        if out.is_empty() {
            return Err(Error::param("`seeds` must list at least one seed"));
        }
        Ok(out)
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format(i + 1, format!("expected key=value, got `{line}`")))?;
            self.set(k.trim(), v).map_err(|e| Error::format(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::param(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        for k in TrainConfig::keys() {
            c.set(k, self.get(k))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Writes the training keys of `c` back, e.g. after an ablation mask.
    pub fn absorb_train_config(&mut self, c: &TrainConfig) {
        for (k, v) in c.entries() {
            self.set(k, &v).expect("training keys are run keys");
        }
    }

    /// Full listing in canonical order; feeding it back through
    /// [`RunConfig::apply_text`] reproduces `self`.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_round_trips() {
        let mut c = RunConfig::default();
        c.set("q_weight", "0.25").unwrap();
        c.set("env", "pushbox").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.resolved()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let mut c = RunConfig::default();
        let e = c.apply_text("# ok\nsteps=3\nbogus=1\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
