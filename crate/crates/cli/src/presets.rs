//! Built-in run configurations.

use crate::{CliError, RunConfig};

pub const PRESETS: &[(&str, &str)] = &[
    ("figure1", include_str!("../presets/figure1.toml")),
    ("figure2", include_str!("../presets/figure2.toml")),
    ("psi-table", include_str!("../presets/psi-table.toml")),
    ("chic-1d", include_str!("../presets/chic-1d.toml")),
    ("chic-log", include_str!("../presets/chic-log.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let (_, text) = PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| {
        CliError::Config(format!("unknown preset `{name}` (available: {})", names().collect::<Vec<_>>().join(", ")))
    })?;
    RunConfig::from_toml(text, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for name in names() {
            preset(name).unwrap();
        }
        assert!(preset("nope").unwrap_err().to_string().contains("figure1"));
    }
}
