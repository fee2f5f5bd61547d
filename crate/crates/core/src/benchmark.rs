//! The synthetic generalized few-shot benchmark: furnished rooms with eight
//! base and four novel classes, evaluated over several support draws.

use serde::{Deserialize, Serialize};

use crate::config::WorkspaceConfig;
use crate::data::synth::{generate_synthetic_scene, room, ROOM_CLASSES};
use crate::error::Result;
use crate::eval::{aggregate, AggregateReport, EvalReport};
use crate::gcr::InferenceOptions;
use crate::pipeline::{build_vocab_bundle, evaluate_scenes, register_bundle, registry_from_scenes, train_bundle, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub workspace: WorkspaceConfig,
    pub train_scenes: usize,
    pub support_scenes: usize,
    pub test_scenes: usize,
    /// First room seed; train, support and test rooms use consecutive seeds.
    pub scene_seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let mut workspace = WorkspaceConfig::default();
        workspace.points_per_block = 512;
        workspace.fused_dim = 64;
        workspace.epochs = 20;
        workspace.decay_every = 8;
        workspace.batch_size = 4;
        workspace.learning_rate = 0.05;
        workspace.min_foreground = 25;
        Self {
            workspace,
            train_scenes: 6,
            support_scenes: 8,
            test_scenes: 3,
            scene_seed: 1000,
        }
    }
}

/// Reports of one model variant, one per support seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub reports: Vec<EvalReport>,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    /// Geometric words in the representation and re-weighting at the configured beta.
    pub full: VariantResult,
    /// Same model, beta = 1.
    pub without_gcr: VariantResult,
    /// Semantic features only, beta = 1.
    pub semantic_only: VariantResult,
}

fn scenes(first: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| generate_synthetic_scene(&room(first + i)).map(Scene::handcrafted))
        .collect()
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    let train = scenes(cfg.scene_seed, cfg.train_scenes)?;
    let support = scenes(cfg.scene_seed + 100, cfg.support_scenes)?;
    let test = scenes(cfg.scene_seed + 200, cfg.test_scenes)?;
    let names: Vec<String> = ROOM_CLASSES.iter().map(|s| s.to_string()).collect();
    let registry = registry_from_scenes(&train, &cfg.workspace, Some(&names))?;

    let mut semantic_cfg = cfg.workspace.clone();
    semantic_cfg.use_geometric_words = false;
    semantic_cfg.beta = 1.0;

    let run = |ws: &WorkspaceConfig, betas: &[(String, f64)]| -> Result<Vec<VariantResult>> {
        let vocab = build_vocab_bundle(&train, registry.clone(), ws)?;
        let (trained, _) = train_bundle(vocab, &train, ws)?;
        let mut reports: Vec<Vec<EvalReport>> = vec![Vec::new(); betas.len()];
        for &seed in &ws.support_seeds {
            let registered = register_bundle(trained.clone(), &support, ws, seed)?;
            for (i, (_, beta)) in betas.iter().enumerate() {
                let mut report = evaluate_scenes(&registered, &test, ws, InferenceOptions { beta: *beta })?;
                report.seed = Some(seed);
                reports[i].push(report);
            }
        }
        betas
            .iter()
            .zip(reports)
            .map(|((name, _), reports)| {
                Ok(VariantResult {
                    name: name.clone(),
                    aggregate: aggregate(&reports)?,
                    reports,
                })
            })
            .collect()
    };

    let mut with_words = run(
        &cfg.workspace,
        &[("gsr+gcr".into(), cfg.workspace.beta), ("gsr".into(), 1.0)],
    )?;
    let semantic_only = run(&semantic_cfg, &[("semantic-only".into(), 1.0)])?.remove(0);
    let without_gcr = with_words.remove(1);
    let full = with_words.remove(0);
    Ok(BenchmarkResult {
        full,
        without_gcr,
        semantic_only,
    })
}

impl BenchmarkResult {
    pub fn to_table(&self) -> String {
        let mut out = String::from("variant          mIoU-B          mIoU-N          mIoU-A          HM\n");
        for v in [&self.semantic_only, &self.without_gcr, &self.full] {
            out.push_str(&format!("{:<14}", v.name));
            for (_, m) in v.aggregate.rows() {
                out.push_str(&format!("  {:>6.2} ± {:<5.2}", 100.0 * m.mean, 100.0 * m.std));
            }
            out.push('\n');
        }
        out
    }
}
