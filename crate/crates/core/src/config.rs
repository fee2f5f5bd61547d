//! Line-oriented `key = value` workspace configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bundle::{FeatureSourceKind, Hyperparameters};
use crate::data::block::{DEFAULT_BLOCK_SIZE, DEFAULT_POINTS_PER_BLOCK};
use crate::data::support::DEFAULT_MIN_FOREGROUND;
use crate::error::{Error, Result};
use crate::features::{SemanticDescriptorConfig, DEFAULT_K_NEIGHBORS};
use crate::train::TrainingConfig;
use crate::vocab::{KMeansConfig, DEFAULT_TAU, DEFAULT_VOCAB_SIZE};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceConfig {
    pub data_dir: PathBuf,
    pub bundle_dir: PathBuf,
    pub report_dir: PathBuf,

    pub vocab_size: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub block_size: f64,
    pub points_per_block: usize,
    pub shots: usize,
    pub min_foreground: usize,
    pub novel_count: usize,
    pub seed: u64,
    /// Seeds of the repeated novel-support draws.
    pub support_seeds: Vec<u64>,

    pub feature_source: FeatureSourceKind,
    pub k_neighbors: usize,
    pub semantic: SemanticDescriptorConfig,
    pub use_geometric_words: bool,
    /// Upper bound on descriptors clustered into the vocabulary.
    pub vocab_max_points: usize,
    pub kmeans_max_iterations: usize,
    pub kmeans_tolerance: f64,

    pub fused_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub fake_novel: usize,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let k = KMeansConfig::default();
        Self {
            data_dir: PathBuf::from("data"),
            bundle_dir: PathBuf::from("bundles"),
            report_dir: PathBuf::from("reports"),
            vocab_size: DEFAULT_VOCAB_SIZE,
            tau: DEFAULT_TAU,
            alpha: 0.9,
            beta: 1.2,
            block_size: DEFAULT_BLOCK_SIZE,
            points_per_block: DEFAULT_POINTS_PER_BLOCK,
            shots: 5,
            min_foreground: DEFAULT_MIN_FOREGROUND,
            novel_count: 4,
            seed: 0,
            support_seeds: vec![0, 1, 2, 3, 4],
            feature_source: FeatureSourceKind::Handcrafted,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            semantic: SemanticDescriptorConfig::default(),
            use_geometric_words: true,
            vocab_max_points: 50_000,
            kmeans_max_iterations: k.max_iterations,
            kmeans_tolerance: k.tolerance,
            fused_dim: t.fused_dim,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            fake_novel: t.fake_novel,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl WorkspaceConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "data_dir" => self.data_dir = v.into(),
            "bundle_dir" => self.bundle_dir = v.into(),
            "report_dir" => self.report_dir = v.into(),
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "block_size" => self.block_size = parse(key, v)?,
            "points_per_block" => self.points_per_block = parse(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "min_foreground" => self.min_foreground = parse(key, v)?,
            "novel_count" => self.novel_count = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "support_seeds" => self.support_seeds = parse_list(key, v)?,
            "feature_source" => {
                self.feature_source = match v {
                    "handcrafted" => FeatureSourceKind::Handcrafted,
                    "ingested" => FeatureSourceKind::Ingested,
                    _ => return Err(format!("feature_source must be handcrafted or ingested, got {v:?}")),
                }
            }
            "k_neighbors" => self.k_neighbors = parse(key, v)?,
            "semantic_scales" => self.semantic.scales = parse_list(key, v)?,
            "semantic_color" => self.semantic.color = parse(key, v)?,
            "use_geometric_words" => self.use_geometric_words = parse(key, v)?,
            "vocab_max_points" => self.vocab_max_points = parse(key, v)?,
            "kmeans_max_iterations" => self.kmeans_max_iterations = parse(key, v)?,
            "kmeans_tolerance" => self.kmeans_tolerance = parse(key, v)?,
            "fused_dim" => self.fused_dim = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "decay_every" => self.decay_every = parse(key, v)?,
            "fake_novel" => self.fake_novel = parse(key, v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`. Blank
    /// lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: n + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key, value).map_err(|message| Error::Config { line: n + 1, message })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparameters(1, 1).validate()?;
        if self.points_per_block == 0 || self.shots == 0 {
            return Err(Error::invalid("points_per_block and shots must be >= 1"));
        }
        if self.k_neighbors < 3 {
            return Err(Error::invalid("k_neighbors must be >= 3"));
        }
        if self.vocab_max_points < self.vocab_size {
            return Err(Error::invalid("vocab_max_points must be >= vocab_size"));
        }
        Ok(())
    }

    pub fn hyperparameters(&self, low_dim: usize, sem_dim: usize) -> Hyperparameters {
        Hyperparameters {
            tau: self.tau,
            beta: self.beta,
            alpha: self.alpha,
            vocab_size: self.vocab_size,
            low_dim,
            sem_dim,
            fused_dim: self.fused_dim,
            use_geometric_words: self.use_geometric_words,
            feature_source: self.feature_source,
            k_neighbors: self.k_neighbors,
            semantic: self.semantic.clone(),
            block_size: self.block_size,
            points_per_block: self.points_per_block,
        }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            seed: self.seed,
            max_iterations: self.kmeans_max_iterations,
            tolerance: self.kmeans_tolerance,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            tau: self.tau,
            fake_novel: self.fake_novel,
            fused_dim: self.fused_dim,
            seed: self.seed,
        }
    }

    /// Renders the configuration in the same format `apply_str` reads.
    pub fn to_text(&self) -> String {
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let scales = self.semantic.scales.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let source = match self.feature_source {
            FeatureSourceKind::Handcrafted => "handcrafted",
            FeatureSourceKind::Ingested => "ingested",
        };
        let mut s = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("bundle_dir", self.bundle_dir.display().to_string()),
            ("report_dir", self.report_dir.display().to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("tau", self.tau.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("block_size", self.block_size.to_string()),
            ("points_per_block", self.points_per_block.to_string()),
            ("shots", self.shots.to_string()),
            ("min_foreground", self.min_foreground.to_string()),
            ("novel_count", self.novel_count.to_string()),
            ("seed", self.seed.to_string()),
            ("support_seeds", list(&self.support_seeds)),
            ("feature_source", source.to_string()),
            ("k_neighbors", self.k_neighbors.to_string()),
            ("semantic_scales", scales),
            ("semantic_color", self.semantic.color.to_string()),
            ("use_geometric_words", self.use_geometric_words.to_string()),
            ("vocab_max_points", self.vocab_max_points.to_string()),
            ("kmeans_max_iterations", self.kmeans_max_iterations.to_string()),
            ("kmeans_tolerance", self.kmeans_tolerance.to_string()),
            ("fused_dim", self.fused_dim.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("decay_every", self.decay_every.to_string()),
            ("fake_novel", self.fake_novel.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
