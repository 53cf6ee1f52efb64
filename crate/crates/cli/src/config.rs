//! Run configuration: a TOML file, overridden by command-line settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dtan_core::cpab::BoundaryCondition;
use dtan_core::data::SynthSpec;
use dtan_core::locnet::{ArchSpec, ConvSpec, TrainConfig};
use dtan_core::losses::{LossConfig, LossKind};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; falls back to `$DTAN_OUT_DIR`, then `out`.
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    pub synth: SynthSection,
    pub tessellation: TessellationSection,
    pub loss: LossSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub barycenter: BarycenterSection,
    pub timing: TimingSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Model file written by `train` and read by the other commands.
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_classes: usize,
    pub len: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub alpha: f64,
    pub knots: usize,
    pub noise: f64,
    pub seed: u64,
    pub min_len: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            n_classes: s.n_classes,
            len: s.len,
            per_class: s.per_class,
            test_per_class: s.test_per_class,
            alpha: s.alpha,
            knots: s.knots,
            noise: s.noise,
            seed: s.seed,
            min_len: s.min_len,
        }
    }
}

impl SynthSection {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            n_classes: self.n_classes,
            len: self.len,
            per_class: self.per_class,
            test_per_class: self.test_per_class,
            alpha: self.alpha,
            knots: self.knots,
            noise: self.noise,
            seed: self.seed,
            min_len: self.min_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TessellationSection {
    pub n_cells: usize,
    /// `free`, `zero_boundary` or `circular`.
    pub boundary: String,
}

impl Default for TessellationSection {
    fn default() -> Self {
        Self { n_cells: 16, boundary: "zero_boundary".into() }
    }
}

impl TessellationSection {
    pub fn boundary(&self) -> Result<BoundaryCondition, CliError> {
        self.boundary.parse().map_err(|e: dtan_core::DtanError| CliError::Usage(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// `wcss`, `wcss_reg`, `icae` or `icae_triplet`.
    pub kind: String,
    pub lambda_sigma: f64,
    pub lambda_smooth: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Weight of the classification loss; positive values add a head.
    pub beta: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self { kind: l.kind.as_str().into(), lambda_sigma: l.lambda_sigma, lambda_smooth: l.lambda_smooth, alpha: l.margin, beta: 0.0 }
    }
}

impl LossSection {
    pub fn config(&self) -> Result<LossConfig, CliError> {
        let kind: LossKind = self.kind.parse().map_err(|e: dtan_core::DtanError| CliError::Usage(e.to_string()))?;
        Ok(LossConfig { kind, lambda_sigma: self.lambda_sigma, lambda_smooth: self.lambda_smooth, margin: self.alpha })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `[kernel, channels]` per convolution block.
    pub blocks: Vec<[usize; 2]>,
    pub pool_width: usize,
    pub recurrences: usize,
    /// Seed of the weight initialization.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchSpec::default();
        Self {
            blocks: a.blocks.iter().map(|b| [b.kernel, b.channels]).collect(),
            pool_width: a.pool_width,
            recurrences: 4,
            seed: 0,
        }
    }
}

impl ModelSection {
    pub fn arch(&self, n_classes: usize) -> ArchSpec {
        ArchSpec {
            blocks: self.blocks.iter().map(|&[kernel, channels]| ConvSpec { kernel, channels }).collect(),
            pool_width: self.pool_width,
            n_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub validation_fraction: Option<f64>,
    /// Train without labels (single class).
    pub unlabeled: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
            deterministic: t.deterministic,
            validation_fraction: t.validation_fraction,
            unlabeled: false,
        }
    }
}

impl TrainSection {
    pub fn config(&self, beta: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            multitask_weight: beta,
            deterministic: self.deterministic,
            validation_fraction: self.validation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Any of `euclidean`, `dtan`, `dba`, `softdtw`.
    pub ncc_methods: Vec<String>,
    pub pca: bool,
    /// Components used for reconstructions.
    pub pca_k: usize,
    pub variance_reduction: bool,
    pub dba_iters: usize,
    pub softdtw_gamma: f64,
    pub softdtw_iters: usize,
    pub softdtw_lr: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ncc_methods: vec!["euclidean".into(), "dtan".into()],
            pca: true,
            pca_k: 3,
            variance_reduction: true,
            dba_iters: 10,
            softdtw_gamma: 0.1,
            softdtw_iters: 50,
            softdtw_lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarycenterSection {
    /// `mean`, `dba`, `softdtw` or `dtan`.
    pub method: String,
    pub iters: usize,
    pub gamma: f64,
    pub lr: f64,
}

impl Default for BarycenterSection {
    fn default() -> Self {
        Self { method: "dba".into(), iters: 10, gamma: 0.1, lr: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    /// Any of `mean`, `dtan`, `dba`, `softdtw`.
    pub methods: Vec<String>,
    pub repeats: usize,
    /// Size of the held-out batch whose barycenter is timed.
    pub batch: usize,
    pub threads: usize,
    /// Also time training of the DTAN model.
    pub include_training: bool,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { methods: vec!["dtan".into(), "dba".into()], repeats: 5, batch: 30, threads: 1, include_training: false }
    }
}

/// Parses `value` as a TOML value, taking it as a plain string otherwise.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Sets the dotted `key` (such as `train.epochs`) in `table`.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Usage(format!("bad key '{key}'")))?;
    let mut current = table;
    for part in parts {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| CliError::Usage(format!("'{part}' in '{key}' is not a section")))?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

/// Loads `path` (if any) and applies `key=value` overrides.
pub fn resolve(path: Option<&Path>, overrides: &[String], explicit: &[(&str, Option<toml::Value>)]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{item}' is not key=value")))?;
        set_key(&mut table, key.trim(), parse_value(value.trim()))?;
    }
    for (key, value) in explicit {
        if let Some(v) = value {
            set_key(&mut table, key, v.clone())?;
        }
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))
}

impl RunConfig {
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os("DTAN_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = resolve(None, &["train.epochs=7".into(), "loss.kind=wcss".into()], &[]).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.loss.kind, "wcss");
        assert!(resolve(None, &["train.epoch=7".into()], &[]).is_err());
        assert!(resolve(None, &["bogus=1".into()], &[]).is_err());
    }
}
