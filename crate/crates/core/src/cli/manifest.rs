//! The run manifest: a config snapshot plus version and output paths, in the
//! same `key = value` text as config files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::simulator::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: TrainConfig,
    /// `(label, file name relative to the output directory)`.
    pub outputs: Vec<(String, String)>,
}

fn is_manifest_key(key: &str) -> bool {
    key == "command" || key == "version" || key.starts_with("output.")
}

impl RunManifest {
    pub fn new(command: &str, config: TrainConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[manifest]");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        for (label, path) in &self.outputs {
            let _ = writeln!(s, "output.{label} = {path}");
        }
        let _ = writeln!(s);
        s.push_str(&self.config.to_text());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        config.apply_text_filtered(text, is_manifest_key)?;
        config.validate()?;
        let mut m = RunManifest::new("train", config);
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim().to_string());
            match k {
                "command" => m.command = v,
                "version" => m.version = v,
                _ => {
                    if let Some(label) = k.strip_prefix("output.") {
                        m.outputs.push((label.to_string(), v));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunManifest::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Strategy;

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.seed = 99;
        cfg.strategy = Strategy::Hard;
        let mut m = RunManifest::new("train", cfg);
        m.outputs.push(("metrics".into(), "metrics.csv".into()));
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seed(), 99);
    }
}
