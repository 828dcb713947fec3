use std::path::Path;

use serde::Deserialize;
use stylecraft::llm::ModelConfig;
use stylecraft::orchestrator::PipelineConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: Option<f64>,
    pub seed: Option<u64>,
}

/// Values from `--config`; anything missing keeps its built-in default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: PipelineConfig,
    pub llm: ModelConfig,
    pub split: SplitSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&raw).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(raw: &str) -> Result<Self, String> {
        toml::from_str(raw).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = FileConfig::parse("[pipeline]\nm = 1\n[pipeline.train_cfg]\ntotal_steps = 4096\n").unwrap();
        assert_eq!(c.pipeline.m, 1);
        assert_eq!(c.pipeline.k, 3);
        assert_eq!(c.pipeline.n, 2);
        assert_eq!(c.pipeline.train_cfg.total_steps, 4096);
        assert_eq!(c.pipeline.train_cfg.n_seeds, 5);
        assert_eq!(c.llm.temperature, 0.3);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(FileConfig::parse("[pipline]\nm = 1\n").is_err());
    }
}
