//! key=value run configuration: optional config file plus --set overrides.
//! Unknown keys are rejected against each command's accepted-key list, and
//! path values resolve relative to the config file location.

use anyhow::{anyhow, bail, Context, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default)]
pub struct RunSpec {
    values: BTreeMap<String, String>,
    /// Directory paths are resolved against; the config file's parent, or the
    /// working directory when no config file was given.
    base_dir: PathBuf,
}

fn parse_line(line: &str) -> Result<Option<(String, String)>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let (key, value) = trimmed
        .split_once('=')
        .ok_or_else(|| anyhow!("expected key=value, got '{trimmed}'"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("empty key in '{trimmed}'");
    }
    Ok(Some((key.to_string(), value.trim().to_string())))
}

impl RunSpec {
    pub fn load(config: Option<&Path>, overrides: &[String]) -> Result<RunSpec> {
        let mut spec = RunSpec {
            values: BTreeMap::new(),
            base_dir: PathBuf::from("."),
        };
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            spec.base_dir = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or_else(|| Path::new("."))
                .to_path_buf();
            for (ln, line) in text.lines().enumerate() {
                if let Some((k, v)) =
                    parse_line(line).with_context(|| format!("config line {}", ln + 1))?
                {
                    spec.values.insert(k, v);
                }
            }
        }
        for item in overrides {
            let (k, v) = parse_line(item)?
                .ok_or_else(|| anyhow!("--set needs key=value, got '{item}'"))?;
            spec.values.insert(k, v);
        }
        Ok(spec)
    }

    pub fn from_pairs(base_dir: impl Into<PathBuf>, pairs: &[(&str, &str)]) -> RunSpec {
        RunSpec {
            values: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            base_dir: base_dir.into(),
        }
    }

    /// Every key must appear in `accepted`; reports all offenders at once.
    pub fn check_keys(&self, accepted: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !accepted.contains(k))
            .collect();
        if !unknown.is_empty() {
            bail!(
                "unknown config keys: {}; accepted: {}",
                unknown.join(", "),
                accepted.join(", ")
            );
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| anyhow!("missing required config key '{key}'"))
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow!("config key '{key}': cannot parse '{raw}': {e}")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("on") | Some("1") => Ok(true),
            Some("false") | Some("off") | Some("0") => Ok(false),
            Some(other) => Err(anyhow!(
                "config key '{key}': expected true/false, got '{other}'"
            )),
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        Ok(self.resolve(self.require(key)?))
    }

    pub fn path_opt(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(|v| self.resolve(v))
    }

    pub fn resolve(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Verbatim key=value echo for the run directory.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_plus_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nseed=7\nout_dir=runs/a\n").unwrap();
        let spec = RunSpec::load(Some(&cfg), &["seed=9".to_string()]).unwrap();
        assert_eq!(spec.parse_or("seed", 0u64).unwrap(), 9);
        assert_eq!(spec.resolve("runs/a"), dir.path().join("runs/a"));
    }

    #[test]
    fn unknown_keys_rejected_with_names() {
        let spec = RunSpec::from_pairs(".", &[("seed", "1"), ("bogus", "2")]);
        let err = spec.check_keys(&["seed"]).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "novalue\n").unwrap();
        assert!(RunSpec::load(Some(&cfg), &[]).is_err());
    }

    #[test]
    fn echo_is_sorted_key_value() {
        let spec = RunSpec::from_pairs(".", &[("b", "2"), ("a", "1")]);
        assert_eq!(spec.echo(), "a=1\nb=2\n");
    }
}
