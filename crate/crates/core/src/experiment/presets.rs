//! Built-in scenarios.

use super::config::ScenarioConfig;
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("fig1a", include_str!("../../presets/fig1a.toml")),
    ("fig1b", include_str!("../../presets/fig1b.toml")),
    ("fig1b-sym", include_str!("../../presets/fig1b-sym.toml")),
    ("fig1c", include_str!("../../presets/fig1c.toml")),
    ("fig2a", include_str!("../../presets/fig2a.toml")),
    ("fig2b", include_str!("../../presets/fig2b.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Raw TOML of a preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let text = preset_source(name).ok_or_else(|| {
        let known: Vec<_> = preset_names().collect();
        Error::Config(format!("unknown scenario `{name}` (known: {})", known.join(", ")))
    })?;
    ScenarioConfig::from_toml(text).map_err(|e| e.context(format!("preset {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_load() {
        for name in preset_names() {
            let c = preset(name).unwrap();
            assert_eq!(c.scenario, name);
        }
    }

    #[test]
    fn fig1a_cavities() {
        let c = preset("fig1a").unwrap();
        let rows = &c.table[0].cavity;
        let sites: Vec<_> = rows.iter().map(|r| r.site).collect();
        assert_eq!(sites, [1, 5, 15, 4]);
        assert!(rows.iter().all(|r| r.g == 0.8));
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("fig3"), Err(Error::Config(_))));
    }
}
