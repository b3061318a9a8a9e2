//! Flat key-value configuration with strict key checking.
//!
//! Precedence: command-line flag > config file > subcommand default. The
//! fully resolved map is echoed into the run manifest and into
//! `resolved.conf`, which can be fed back through `--config` to reproduce
//! a run exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// One known key with its default (None = required).
pub struct KeySpec {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub struct ConfigSchema {
    pub subcommand: &'static str,
    pub keys: Vec<KeySpec>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub subcommand: String,
    values: BTreeMap<String, String>,
}

impl Resolved {
    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from schema"))
    }

    pub fn parse_f64(&self, key: &str) -> Result<f64, CliError> {
        let raw = self.get(key);
        raw.parse().map_err(|_| {
            CliError::Usage(format!("key `{key}`: expected a number, got `{raw}`"))
        })
    }

    pub fn parse_usize(&self, key: &str) -> Result<usize, CliError> {
        let raw = self.get(key);
        raw.parse().map_err(|_| {
            CliError::Usage(format!("key `{key}`: expected a positive integer, got `{raw}`"))
        })
    }

    pub fn parse_u64(&self, key: &str) -> Result<u64, CliError> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| CliError::Usage(format!("key `{key}`: expected an integer, got `{raw}`")))
    }

    pub fn parse_bool(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Usage(format!(
                "key `{key}`: expected true/false, got `{other}`"
            ))),
        }
    }

    /// Comma-separated list of quantile levels.
    pub fn parse_alphas(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    CliError::Usage(format!("key `{key}`: bad quantile `{s}`"))
                })
            })
            .collect()
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Text form suitable for feeding back through --config.
    pub fn to_conf(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# resolved configuration for `{}`", self.subcommand);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_conf_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "config {}:{}: expected `key = value`, got `{raw}`",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

impl ConfigSchema {
    /// Merge defaults, an optional config file, and flag pairs.
    pub fn resolve(
        &self,
        file_pairs: BTreeMap<String, String>,
        flag_pairs: Vec<(String, String)>,
    ) -> Result<Resolved, CliError> {
        let known: BTreeMap<&str, &KeySpec> =
            self.keys.iter().map(|k| (k.name, k)).collect();
        let mut values: BTreeMap<String, String> = self
            .keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        for (key, value) in file_pairs {
            if !known.contains_key(key.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown key `{key}` in config file for `{}`",
                    self.subcommand
                )));
            }
            values.insert(key, value);
        }
        for (key, value) in flag_pairs {
            if !known.contains_key(key.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown flag `--{key}` for `{}`",
                    self.subcommand
                )));
            }
            values.insert(key, value);
        }
        for spec in &self.keys {
            if !values.contains_key(spec.name) {
                return Err(CliError::Usage(format!(
                    "missing required key `{}` for `{}` ({})",
                    spec.name, self.subcommand, spec.help
                )));
            }
        }
        Ok(Resolved {
            subcommand: self.subcommand.to_string(),
            values,
        })
    }

    pub fn usage(&self) -> String {
        let mut out = format!("usage: wishrisk {} [--key value]...\n\nkeys:\n", self.subcommand);
        for k in &self.keys {
            let default = match k.default {
                Some(d) if !d.is_empty() => format!(" (default {d})"),
                Some(_) => " (default empty)".to_string(),
                None => " (required)".to_string(),
            };
            let _ = writeln!(out, "  --{:<14} {}{}", k.name, k.help, default);
        }
        out
    }
}

/// Split raw CLI arguments into `--key value` pairs, extracting the
/// config file path if present.
pub fn split_args(
    args: &[String],
) -> Result<(Vec<(String, String)>, Option<String>), CliError> {
    let mut pairs = Vec::new();
    let mut config = None;
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg.strip_prefix("--").ok_or_else(|| {
            CliError::Usage(format!("expected `--key value`, got `{arg}`"))
        })?;
        let value = args
            .get(i + 1)
            .ok_or_else(|| CliError::Usage(format!("flag `--{key}` needs a value")))?;
        if key == "config" {
            config = Some(value.clone());
        } else {
            pairs.push((key.to_string(), value.clone()));
        }
        i += 2;
    }
    Ok((pairs, config))
}
