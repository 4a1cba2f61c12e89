//! Experiment configuration: a flat TOML table with a version key. Every
//! key has a default; [`ExperimentConfig::resolved_toml`] writes the full
//! table back out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::arch::parse_architecture;
use crate::credit::Method;
use crate::error::{Error, Result};
use crate::model::{InitScheme, NetworkSpec, Shape};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn input_shape(self) -> Shape {
        match self {
            DatasetKind::Mnist => Shape::new(1, 28, 28),
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => Shape::new(3, 32, 32),
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetKind::Cifar100 => 100,
            _ => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitChoice {
    /// Zero for FA and DFA unless a hidden layer is ReLU; uniform otherwise.
    Auto,
    Zero,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhitenChoice {
    /// Whiten exactly when the network has convolutional layers.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub dataset: DatasetKind,
    /// Empty means `data/<dataset>` relative to the working directory.
    pub data_dir: PathBuf,
    /// Use only the first n training samples; 0 keeps all.
    pub train_subset: usize,
    /// Hold out the last n training samples (after subsetting) for validation.
    pub validation_size: usize,
    pub architecture: String,
    pub method: Method,
    pub init: InitChoice,
    pub shared_feedback: bool,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the training error, in percent, is at or below this.
    pub stop_train_error: f64,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub adversarial: bool,
    pub adv_epsilon: f64,
    pub seed: u64,
    pub precision: Precision,
    pub whiten: WhitenChoice,
    /// Alignment diagnostics every n batches; 0 disables them.
    pub diag_cadence: usize,
    /// Writes zero wall times so repeated runs produce identical files.
    pub deterministic: bool,
    /// Empty means `runs/<name>`.
    pub out_dir: PathBuf,
    /// Hidden layers kept frozen while fewer than `freeze_until_epoch`
    /// epochs have completed (0: frozen for the whole run).
    pub freeze_layers: Vec<usize>,
    pub freeze_until_epoch: usize,
    /// With method `bp`: these hidden layers switch to direct random
    /// feedback once `direct_from_epoch` epochs have completed.
    pub direct_layers: Vec<usize>,
    pub direct_from_epoch: usize,
    /// Evaluate the test split after every epoch rather than only at the end.
    pub test_every_epoch: bool,
    pub save_checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            name: "experiment".into(),
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::new(),
            train_subset: 0,
            validation_size: 0,
            architecture: "2x800 tanh".into(),
            method: Method::Dfa,
            init: InitChoice::Auto,
            shared_feedback: false,
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: 1e-4,
            rms_decay: crate::optim::DEFAULT_RHO,
            rms_epsilon: crate::optim::DEFAULT_RMS_EPSILON,
            lr_decay: 1.0,
            batch_size: 64,
            max_epochs: 300,
            stop_train_error: 0.01,
            dropout_input: 0.0,
            dropout_hidden: 0.0,
            adversarial: false,
            adv_epsilon: crate::regularize::DEFAULT_ADV_EPSILON,
            seed: 0,
            precision: Precision::F64,
            whiten: WhitenChoice::Auto,
            diag_cadence: crate::diagnose::DEFAULT_CADENCE,
            deterministic: false,
            out_dir: PathBuf::new(),
            freeze_layers: Vec::new(),
            freeze_until_epoch: 0,
            direct_layers: Vec::new(),
            direct_from_epoch: 0,
            test_every_epoch: true,
            save_checkpoint: true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning_rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config_err("lr_decay must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_epsilon > 0.0) {
            return Err(config_err(
                "rms_decay must be in [0, 1) and rms_epsilon positive",
            ));
        }
        for (k, p) in [
            ("dropout_input", self.dropout_input),
            ("dropout_hidden", self.dropout_hidden),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(config_err(format!("{k} must be in [0, 1)")));
            }
        }
        if !(self.adv_epsilon >= 0.0) {
            return Err(config_err("adv_epsilon must be non-negative"));
        }
        if !(self.stop_train_error >= 0.0) {
            return Err(config_err("stop_train_error must be non-negative"));
        }
        if !self.direct_layers.is_empty() && self.method != Method::Bp {
            return Err(config_err(
                "direct_layers switches a BP run; set method = \"bp\"",
            ));
        }
        if self.shared_feedback && self.method != Method::Dfa {
            return Err(config_err("shared_feedback is only defined for DFA"));
        }
        if self.adversarial && self.whiten == WhitenChoice::On {
            return Err(config_err("adversarial examples need unit-scaled inputs"));
        }
        self.network_spec()?;
        Ok(())
    }

    /// The fully resolved table, including every default.
    pub fn resolved_toml(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.data_dir = self.data_dir();
        resolved.out_dir = self.out_dir();
        toml::to_string(&resolved).map_err(|e| config_err(e.to_string()))
    }

    pub fn data_dir(&self) -> PathBuf {
        if self.data_dir.as_os_str().is_empty() {
            let sub = match self.dataset {
                DatasetKind::Mnist => "mnist",
                DatasetKind::Cifar10 => "cifar10",
                DatasetKind::Cifar100 => "cifar100",
            };
            PathBuf::from("data").join(sub)
        } else {
            self.data_dir.clone()
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        if self.out_dir.as_os_str().is_empty() {
            PathBuf::from("runs").join(&self.name)
        } else {
            self.out_dir.clone()
        }
    }

    /// The network described by `architecture` for this dataset.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        parse_architecture(
            &self.architecture,
            self.dataset.input_shape(),
            self.dataset.classes(),
        )
    }

    /// The initialization actually used.
    pub fn init_scheme(&self, uses_relu: bool) -> InitScheme {
        match self.init {
            InitChoice::Zero => InitScheme::Zero,
            InitChoice::Uniform => InitScheme::Uniform,
            InitChoice::Auto => match self.method {
                Method::Fa | Method::Dfa if !uses_relu => InitScheme::Zero,
                _ => InitScheme::Uniform,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_all_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.max_epochs, 300);
        assert_eq!(c.stop_train_error, 0.01);
    }

    #[test]
    fn resolved_echo_reparses_identically() {
        let c = ExperimentConfig::from_toml_str(
            "name = \"x\"\nmethod = \"bp\"\nlearning_rate = 0.001\n",
        )
        .unwrap();
        let text = c.resolved_toml().unwrap();
        for key in [
            "batch_size",
            "rms_decay",
            "rms_epsilon",
            "diag_cadence",
            "adv_epsilon",
            "out_dir",
        ] {
            assert!(text.contains(key), "{key} missing from\n{text}");
        }
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.method, Method::Bp);
        assert_eq!(back.out_dir, PathBuf::from("runs/x"));
        assert_eq!(back.resolved_toml().unwrap(), text);
    }

    #[test]
    fn invalid_configs_rejected() {
        for t in [
            "version = 2",
            "batch_size = 0",
            "learning_rate = -1.0",
            "dropout_hidden = 1.0",
            "unknown_key = 3",
            "method = \"xyz\"",
            "direct_layers = [0]",
            "shared_feedback = true\nmethod = \"fa\"",
            "architecture = \"3x tanh\"",
            "architecture = \"cifar-conv tanh\"",
        ] {
            assert!(ExperimentConfig::from_toml_str(t).is_err(), "{t}");
        }
    }

    #[test]
    fn auto_init_follows_method() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.init_scheme(false), InitScheme::Zero);
        assert_eq!(c.init_scheme(true), InitScheme::Uniform);
        c.method = Method::Bp;
        assert_eq!(c.init_scheme(false), InitScheme::Uniform);
        c.method = Method::Ifa;
        assert_eq!(c.init_scheme(false), InitScheme::Uniform);
        c.init = InitChoice::Zero;
        assert_eq!(c.init_scheme(false), InitScheme::Zero);
    }
}
