//! Run configuration: the TOML schema, command-line overrides, and the
//! validation that runs before any data is touched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hasa_core::error::{Error, Result};
use hasa_core::features::WeightMode;
use hasa_core::model::ModelConfig;
use hasa_core::signal::{CorpusSpec, Recipe, Role};
use hasa_core::train::{FinetuneMode, TrainConfig, TransferPlan};

/// Environment variable that overrides `asset_root`.
pub const ASSET_ROOT_ENV: &str = "HASA_ASSET_ROOT";

/// Which subcommand a config is being validated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Prepare,
    Train,
    Finetune,
    Eval,
    Transfer,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Prepare => "prepare",
            CommandKind::Train => "train",
            CommandKind::Finetune => "finetune",
            CommandKind::Eval => "eval",
            CommandKind::Transfer => "transfer",
        }
    }

    /// Commands that run the optimizer and therefore must respect the
    /// provider capability matrix.
    fn trains(self) -> bool {
        matches!(
            self,
            CommandKind::Train | CommandKind::Finetune | CommandKind::Transfer
        )
    }

    /// Commands that start from an existing checkpoint.
    fn needs_checkpoint(self) -> bool {
        matches!(
            self,
            CommandKind::Finetune | CommandKind::Eval | CommandKind::Transfer
        )
    }
}

/// Feature provider selection. Spectrogram and mock features are computed
/// once ahead of training; the ssl and whisper variants expose a tunable
/// encoder that fine-tuning modes may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Log-magnitude STFT features (precomputed, not tunable).
    Spectrogram,
    /// Frozen pretrained mock encoder (precomputed, not tunable).
    Mock,
    /// Tunable mock SSL encoder, last-layer features.
    SslLl,
    /// Tunable mock SSL encoder, learned weighted-sum layer fusion.
    SslWs,
    /// Tunable single-layer encoder exposing only its final representation.
    Whisper,
}

impl ProviderKind {
    pub fn id_str(self) -> &'static str {
        match self {
            ProviderKind::Spectrogram => "spectrogram",
            ProviderKind::Mock => "mock",
            ProviderKind::SslLl => "ssl_ll",
            ProviderKind::SslWs => "ssl_ws",
            ProviderKind::Whisper => "whisper",
        }
    }

    /// Whether fine-tuning modes may update this provider's encoder.
    pub fn is_tunable(self) -> bool {
        matches!(
            self,
            ProviderKind::SslLl | ProviderKind::SslWs | ProviderKind::Whisper
        )
    }

    /// How layer stacks collapse to model inputs.
    pub fn weight_mode(self) -> WeightMode {
        match self {
            ProviderKind::SslWs => WeightMode::WeightedSum,
            _ => WeightMode::LastLayer,
        }
    }
}

/// Which corpus family `prepare` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    /// The five-condition corpus with the 15..0 dB training SNR grid.
    #[default]
    InDomain,
    /// The out-of-domain corpus: its own train grid, and a shifted
    /// 17.5..2.5 dB grid on the test role.
    Ood,
}

impl RecipeKind {
    pub fn recipe_for(self, role: Role) -> Recipe {
        let mut recipe = match (self, role) {
            (RecipeKind::InDomain, _) => Recipe::in_domain(),
            (RecipeKind::Ood, Role::Test) => Recipe::ood_test(),
            (RecipeKind::Ood, _) => Recipe::ood_train(),
        };
        recipe.role = role;
        recipe
    }
}

/// Where target scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Synthetic,
    Imported,
}

/// `[corpus]`: synthesize source pools under `asset_root` before planning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub n_clean: usize,
    pub n_noise: usize,
    pub n_rirs: usize,
    pub sample_rate: u32,
    pub clean_seconds: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let spec = CorpusSpec::default();
        CorpusSection {
            n_clean: spec.n_clean,
            n_noise: spec.n_noise,
            n_rirs: spec.n_rirs,
            sample_rate: spec.sample_rate,
            clean_seconds: spec.clean_seconds,
        }
    }
}

impl CorpusSection {
    pub fn to_spec(&self, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_clean: self.n_clean,
            n_noise: self.n_noise,
            n_rirs: self.n_rirs,
            sample_rate: self.sample_rate,
            clean_seconds: self.clean_seconds,
            seed,
        }
    }
}

/// `[dataset]`: which corpus recipe `prepare` follows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub recipe: RecipeKind,
}

/// `[provider]`: feature provider selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::Spectrogram,
        }
    }
}

/// `[targets]`: target score source. `seed` applies to synthetic scores and
/// defaults to the run seed; `path` names the CSV for imported scores.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    pub provider: TargetKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// `[model]`: optional overrides of the published network dimensions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blstm_units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trunk_dense_units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_heads: Option<usize>,
}

impl ModelSection {
    pub fn to_config(&self, feature_dim_in: usize) -> ModelConfig {
        let mut config = ModelConfig::standard(feature_dim_in);
        if let Some(d) = self.fusion_dim {
            config.fusion_dim = d;
        }
        if let Some(d) = self.blstm_units {
            config.blstm_units = d;
        }
        if let Some(d) = self.trunk_dense_units {
            config.trunk_dense_units = d;
        }
        if let Some(d) = self.attention_heads {
            config.attention_heads = d;
        }
        config
    }
}

/// `[train]`: optimization hyperparameters; the seed is the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub base_lr: f64,
    pub provider_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub finetune_mode: FinetuneMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSection {
            base_lr: c.base_lr,
            provider_lr: c.provider_lr,
            batch_size: c.batch_size,
            max_epochs: c.max_epochs,
            patience: c.patience,
            finetune_mode: c.finetune_mode,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            provider_lr: self.provider_lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            finetune_mode: self.finetune_mode,
        }
    }
}

/// `[transfer]`: adaptation budgets; absent means the default doubling
/// ladder from zero-shot to the full target training set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sizes: Option<TransferPlan>,
}

/// The full run configuration, loaded from TOML and then adjusted by
/// command-line overrides and the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory: records, config snapshot, and per-run artifacts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Source pools (clean speech, noise beds, impulse responses).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asset_root: Option<PathBuf>,
    /// Rendered dataset: manifests, audio, targets.
    pub data_dir: PathBuf,
    /// Starting checkpoint for finetune, eval, and transfer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSection>,
    pub dataset: DatasetSection,
    pub provider: ProviderSection,
    pub targets: TargetsSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub transfer: TransferSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            asset_root: None,
            data_dir: PathBuf::new(),
            init_checkpoint: None,
            corpus: None,
            dataset: DatasetSection::default(),
            provider: ProviderSection::default(),
            targets: TargetsSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            transfer: TransferSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub provider: Option<ProviderKind>,
    pub targets: Option<String>,
}

fn parse_targets_override(spec: &str) -> Result<TargetsSection> {
    if spec == "synthetic" {
        return Ok(TargetsSection {
            provider: TargetKind::Synthetic,
            seed: None,
            path: None,
        });
    }
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let seed = rest.parse().map_err(|_| {
            Error::InvalidInput(format!("bad synthetic target seed '{rest}' in --targets"))
        })?;
        return Ok(TargetsSection {
            provider: TargetKind::Synthetic,
            seed: Some(seed),
            path: None,
        });
    }
    if let Some(rest) = spec.strip_prefix("imported:") {
        if rest.is_empty() {
            return Err(Error::InvalidInput(
                "--targets imported: needs a CSV path".into(),
            ));
        }
        return Ok(TargetsSection {
            provider: TargetKind::Imported,
            seed: None,
            path: Some(PathBuf::from(rest)),
        });
    }
    Err(Error::InvalidInput(format!(
        "--targets must be 'synthetic', 'synthetic:SEED', or 'imported:PATH', got '{spec}'"
    )))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }

    /// Apply command-line overrides, then the environment.
    pub fn resolve(&mut self, overrides: &Overrides) -> Result<()> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(kind) = overrides.provider {
            self.provider.kind = kind;
        }
        if let Some(spec) = &overrides.targets {
            self.targets = parse_targets_override(spec)?;
        }
        if let Ok(root) = std::env::var(ASSET_ROOT_ENV) {
            if !root.is_empty() {
                self.asset_root = Some(PathBuf::from(root));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| {
            Error::InvalidInput("no run directory: set out_dir in the config or pass --out".into())
        })
    }

    pub fn asset_root(&self) -> Result<&Path> {
        self.asset_root.as_deref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "no asset root: set asset_root in the config or {ASSET_ROOT_ENV}"
            ))
        })
    }

    pub fn manifest_path(&self, role: Role) -> PathBuf {
        self.data_dir.join(format!("manifest_{role}.jsonl"))
    }

    pub fn scores_path(&self) -> PathBuf {
        self.data_dir.join("scores.csv")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.data_dir.join("catalog.csv")
    }

    pub fn transfer_plan(&self) -> TransferPlan {
        self.transfer.sizes.clone().unwrap_or_default()
    }

    /// Everything checkable without touching audio or parameters. Order
    /// matters only for error quality: capability conflicts are reported
    /// before missing files.
    pub fn validate(&self, command: CommandKind) -> Result<()> {
        if command.trains() {
            let mode = self.train.finetune_mode;
            if mode.tunes_encoder() && !self.provider.kind.is_tunable() {
                return Err(Error::Capability {
                    provider: self.provider.kind.id_str().into(),
                    capability: format!(
                        "encoder tuning required by fine-tune mode '{mode}' \
                         (precomputed features; use ssl_ll, ssl_ws, or whisper)"
                    ),
                });
            }
        }
        self.train.to_train_config(self.seed).validate()?;
        self.model.to_config(1).validate()?;
        self.transfer_plan().validate()?;

        if self.data_dir.as_os_str().is_empty() {
            return Err(Error::InvalidInput("data_dir must be set".into()));
        }
        if self.targets.provider == TargetKind::Imported {
            let path = self.targets.path.as_ref().ok_or_else(|| {
                Error::InvalidInput("imported targets need targets.path".into())
            })?;
            if command == CommandKind::Prepare && !path.is_file() {
                return Err(Error::MissingAssets(vec![format!(
                    "target scores: {}",
                    path.display()
                )]));
            }
        }

        let mut missing: Vec<String> = Vec::new();
        match command {
            CommandKind::Prepare => {
                if self.corpus.is_none() && !self.asset_root()?.is_dir() {
                    missing.push(format!(
                        "asset root: {} (add a [corpus] section to synthesize one)",
                        self.asset_root()?.display()
                    ));
                }
            }
            CommandKind::Train | CommandKind::Finetune => {
                self.require_dataset(&[Role::Train, Role::Validation], &mut missing);
            }
            CommandKind::Eval => {
                self.require_dataset(&[Role::Test], &mut missing);
            }
            CommandKind::Transfer => {
                self.require_dataset(&[Role::Train, Role::Validation, Role::Test], &mut missing);
            }
        }
        if command.needs_checkpoint() {
            match &self.init_checkpoint {
                None => {
                    return Err(Error::InvalidInput(format!(
                        "{} needs init_checkpoint in the config",
                        command.as_str()
                    )))
                }
                Some(path) if !path.is_file() => {
                    missing.push(format!("checkpoint: {}", path.display()));
                }
                Some(_) => {}
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingAssets(missing));
        }
        Ok(())
    }

    fn require_dataset(&self, roles: &[Role], missing: &mut Vec<String>) {
        for role in roles {
            let path = self.manifest_path(*role);
            if !path.is_file() {
                missing.push(format!("{role} manifest: {}", path.display()));
            }
        }
        for (what, path) in [
            ("target scores", self.scores_path()),
            ("audiogram catalog", self.catalog_path()),
        ] {
            if !path.is_file() {
                missing.push(format!("{what}: {}", path.display()));
            }
        }
    }
}
