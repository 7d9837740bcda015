//! Flat `key = value` training configuration. `#` starts a comment; every
//! key must be known.

use std::collections::BTreeMap;
use std::path::Path;

use deepar_core::trainer::TrainConfig;
use deepar_core::{LikelihoodKind, WindowSpec};

use crate::error::{Error, Result};

pub const KEYS: &[&str] = &[
    "likelihood",
    "conditioning_length",
    "prediction_length",
    "layers",
    "hidden_units",
    "embedding_dim",
    "batch_size",
    "learning_rate",
    "max_batches",
    "patience",
    "seed",
    "windows_per_epoch",
    "uniform_sampling",
    "no_scaling",
    "grad_clip",
    "max_validation_windows",
    "grid_hidden_units",
    "grid_embedding_dim",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub grid_hidden_units: Vec<usize>,
    pub grid_embedding_dim: Vec<usize>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("config line {line}: bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Invalid(format!("config line {line}: `{key}` must be true or false"))),
    }
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(key, v, line))
        .collect()
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("config line {line}: expected key = value")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Invalid(format!("config line {line}: unknown key `{key}`")));
        }
        if entries.insert(key, (value, line)).is_some() {
            return Err(Error::Invalid(format!("config line {line}: duplicate key `{key}`")));
        }
    }
    let required = |key: &str| {
        entries
            .get(key)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("config is missing `{key}`")))
    };
    let (kind_text, kind_line) = required("likelihood")?;
    let kind = LikelihoodKind::from_name(kind_text).ok_or_else(|| {
        Error::Invalid(format!(
            "config line {kind_line}: unknown likelihood `{kind_text}` (gaussian or negbin)"
        ))
    })?;
    let (c, cl) = required("conditioning_length")?;
    let (p, pl) = required("prediction_length")?;
    let spec = WindowSpec::new(parse_value("conditioning_length", c, cl)?, parse_value("prediction_length", p, pl)?)?;
    let mut cfg = TrainConfig::new(kind, spec);
    let mut grid_hidden_units = Vec::new();
    let mut grid_embedding_dim = Vec::new();
    for (&key, &(value, line)) in &entries {
        match key {
            "layers" => cfg.layers = parse_value(key, value, line)?,
            "hidden_units" => cfg.hidden = parse_value(key, value, line)?,
            "embedding_dim" => cfg.embedding_dim = parse_value(key, value, line)?,
            "batch_size" => cfg.batch_size = parse_value(key, value, line)?,
            "learning_rate" => cfg.learning_rate = parse_value(key, value, line)?,
            "max_batches" => cfg.max_batches = parse_value(key, value, line)?,
            "patience" => cfg.patience = parse_value(key, value, line)?,
            "seed" => cfg.seed = parse_value(key, value, line)?,
            "windows_per_epoch" => cfg.windows_per_epoch = parse_value(key, value, line)?,
            "uniform_sampling" => cfg.uniform_sampling = parse_bool(key, value, line)?,
            "no_scaling" => cfg.no_scaling = parse_bool(key, value, line)?,
            "grad_clip" => cfg.grad_clip = parse_value(key, value, line)?,
            "max_validation_windows" => cfg.max_validation_windows = parse_value(key, value, line)?,
            "grid_hidden_units" => grid_hidden_units = parse_list(key, value, line)?,
            "grid_embedding_dim" => grid_embedding_dim = parse_list(key, value, line)?,
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(RunConfig {
        train: cfg,
        grid_hidden_units,
        grid_embedding_dim,
    })
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Every key with its effective value, in [`KEYS`] order.
pub fn snapshot(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("likelihood", cfg.kind.name().to_string()),
        ("conditioning_length", cfg.spec.conditioning.to_string()),
        ("prediction_length", cfg.spec.prediction.to_string()),
        ("layers", cfg.layers.to_string()),
        ("hidden_units", cfg.hidden.to_string()),
        ("embedding_dim", cfg.embedding_dim.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("max_batches", cfg.max_batches.to_string()),
        ("patience", cfg.patience.to_string()),
        ("seed", cfg.seed.to_string()),
        ("windows_per_epoch", cfg.windows_per_epoch.to_string()),
        ("uniform_sampling", cfg.uniform_sampling.to_string()),
        ("no_scaling", cfg.no_scaling.to_string()),
        ("grad_clip", cfg.grad_clip.to_string()),
        ("max_validation_windows", cfg.max_validation_windows.to_string()),
    ]
}

/// Render a config file that [`parse`] reads back to `cfg`.
pub fn render(cfg: &TrainConfig) -> String {
    snapshot(cfg).into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "# daily panel\nlikelihood = negbin\nconditioning_length = 28\nprediction_length = 14\n";

    #[test]
    fn defaults_fill_unspecified_keys() {
        let c = parse(BASIC).unwrap();
        assert_eq!(c.train.kind, LikelihoodKind::NegativeBinomial);
        assert_eq!(c.train.spec.total(), 42);
        assert_eq!((c.train.layers, c.train.hidden, c.train.batch_size), (3, 40, 64));
        assert_eq!(c.train.learning_rate, 1e-3);
        assert!(c.grid_hidden_units.is_empty());
    }

    #[test]
    fn every_key_is_read() {
        let text = format!(
            "{BASIC}layers = 2\nhidden_units = 16 # small\nembedding_dim = 4\nbatch_size = 8\nlearning_rate = 0.01\n\
             max_batches = 9\npatience = 2\nseed = 77\nwindows_per_epoch = 40\nuniform_sampling = true\n\
             no_scaling = yes\ngrad_clip = 0\nmax_validation_windows = 5\ngrid_hidden_units = 8, 16\ngrid_embedding_dim = 2\n"
        );
        let c = parse(&text).unwrap();
        let t = &c.train;
        assert_eq!((t.layers, t.hidden, t.embedding_dim, t.batch_size), (2, 16, 4, 8));
        assert_eq!((t.max_batches, t.patience, t.seed, t.windows_per_epoch), (9, 2, 77, 40));
        assert!(t.uniform_sampling && t.no_scaling);
        assert_eq!((t.grad_clip, t.max_validation_windows), (0.0, 5));
        assert_eq!(c.grid_hidden_units, vec![8, 16]);
        assert_eq!(c.grid_embedding_dim, vec![2]);
        assert_eq!(parse(&render(t)).unwrap().train, *t);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            format!("{BASIC}colour = blue\n"),
            format!("{BASIC}layers = two\n"),
            format!("{BASIC}layers = 2\nlayers = 3\n"),
            format!("{BASIC}batch_size = 0\n"),
            format!("{BASIC}just words\n"),
            "likelihood = poisson\nconditioning_length = 1\nprediction_length = 1\n".to_string(),
            "likelihood = gaussian\n".to_string(),
        ] {
            assert!(parse(&text).is_err(), "{text}");
        }
    }
}
