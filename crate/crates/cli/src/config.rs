//! Layered configuration: defaults, then the TOML file, then `LOCQOR_*`
//! environment variables, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use locqor_core::pipeline::PipelineConfig;
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "LOCQOR_";

/// Recursively merge `over` into `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `LOCQOR_REDUCER__EPOCHS=20` becomes `reducer.epochs = 20`. Values are read
/// as TOML literals and fall back to plain strings.
fn env_table(vars: impl IntoIterator<Item = (String, String)>) -> Result<Table> {
    let mut out = Table::new();
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(String::is_empty) {
            bail!("malformed override variable {key}");
        }
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(Value::String(raw));
        let mut nested = value;
        for part in path.iter().rev() {
            let mut t = Table::new();
            t.insert(part.clone(), nested);
            nested = Value::Table(t);
        }
        if let Value::Table(t) = nested {
            merge(&mut out, t);
        }
    }
    Ok(out)
}

/// Resolve the config from an optional file and the given environment.
pub fn load(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<PipelineConfig> {
    let mut table = Table::try_from(PipelineConfig::default()).context("default config")?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let parsed: Table =
            toml::from_str(&text).with_context(|| format!("invalid TOML in {}", path.display()))?;
        merge(&mut table, parsed);
    }
    merge(&mut table, env_table(env)?);
    let cfg: PipelineConfig = Value::Table(table)
        .try_into()
        .context("invalid configuration")?;
    Ok(cfg)
}
