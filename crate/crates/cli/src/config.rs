//! Experiment configuration: built-in defaults, overlaid by a JSON file, overlaid by flags.

use std::fs;
use std::path::{Path, PathBuf};

use netinvert::analysis::TsneConfig;
use netinvert::data_io::MnistFiles;
use netinvert::inversion::InversionConfig;
use netinvert::{ClassifierConfig, Error, GeneratorConfig, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DATA_DIR_ENV: &str = "NETINVERT_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        ClassifierTraining { epochs: 10, batch_size: 128, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub grid_cols: usize,
    pub tsne_samples: usize,
    pub tsne: TsneConfig,
    pub boundary_resolution: usize,
    pub boundary_margin: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            grid_cols: 8,
            tsne_samples: 1000,
            tsne: TsneConfig::default(),
            boundary_resolution: 500,
            boundary_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub classifier: ClassifierConfig,
    pub classifier_training: ClassifierTraining,
    pub generator: GeneratorConfig,
    /// `seed` inside this section is ignored; the top-level seed is used.
    pub inversion: InversionConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            classifier: ClassifierConfig::default(),
            classifier_training: ClassifierTraining::default(),
            generator: GeneratorConfig::default(),
            inversion: InversionConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field-level validation of everything a subcommand may use.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{name}: {e}")));
        field("classifier", self.classifier.validate())?;
        field("generator", self.generator.validate())?;
        field("inversion", self.inversion.validate())?;
        if self.generator.n_classes != self.classifier.n_classes {
            return Err(Error::Config(format!(
                "generator.n_classes ({}) must equal classifier.n_classes ({})",
                self.generator.n_classes, self.classifier.n_classes
            )));
        }
        let t = &self.classifier_training;
        if t.batch_size < 2 || !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config("classifier_training: batch_size >= 2 and lr > 0 required".into()));
        }
        let a = &self.analysis;
        if a.grid_cols == 0 || a.boundary_resolution == 0 || a.boundary_margin.is_nan() || a.boundary_margin < 0.0 {
            return Err(Error::Config(
                "analysis: grid_cols and boundary_resolution must be positive, boundary_margin nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Dataset directory: config, then the environment, then `data/mnist`.
    pub fn data_files(&self) -> Result<MnistFiles> {
        let (dir, origin) = match (&self.data.dir, std::env::var_os(DATA_DIR_ENV)) {
            (Some(d), _) => (d.clone(), "data.dir".to_string()),
            (None, Some(env)) => (PathBuf::from(env), DATA_DIR_ENV.to_string()),
            (None, None) => (PathBuf::from("data/mnist"), "data.dir (default data/mnist)".to_string()),
        };
        let files = MnistFiles::in_dir(&dir);
        for f in [&files.train_images, &files.train_labels, &files.test_images, &files.test_labels] {
            if !f.is_file() {
                return Err(Error::Config(format!("{origin}: dataset file {} not found", f.display())));
            }
        }
        Ok(files)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_config_matches_builtin_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
        let shipped = ExperimentConfig::load(Some(&path)).unwrap();
        assert_eq!(shipped, ExperimentConfig::default());
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 7, "inversion": {"weights": {"alpha": 1, "beta": 2, "gamma": 0}}}"#).unwrap();
        let c = ExperimentConfig::load(Some(&path)).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.inversion.weights.beta, 2.0);
        assert_eq!(c.inversion.batch_size, 64);
        assert_eq!(c.classifier, ClassifierConfig::default());
    }

    #[test]
    fn unknown_field_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"sed": 7}"#).unwrap();
        assert!(matches!(ExperimentConfig::load(Some(&path)), Err(Error::Config(_))));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.generator.dropout_rate = 1.5;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("generator"), "{msg}");
    }

    #[test]
    fn missing_dataset_names_the_field() {
        let c = ExperimentConfig {
            data: DataConfig { dir: Some("/nonexistent/mnist".into()) },
            ..Default::default()
        };
        let msg = c.data_files().unwrap_err().to_string();
        assert!(msg.contains("data.dir"), "{msg}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
