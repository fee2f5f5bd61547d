//! Command-line front end. `run_command` is what the binary calls.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::benchmark::{run_benchmark, BenchmarkConfig};
use crate::bundle::{load_bundle, save_bundle, FeatureSourceKind, ModelBundle};
use crate::config::WorkspaceConfig;
use crate::data::cloud::{load_point_cloud, save_point_cloud};
use crate::data::registry::{label_histogram, split_classes, ClassRegistry};
use crate::data::synth::{generate_synthetic_scene, room, two_planes};
use crate::error::{Error, Result};
use crate::eval::{aggregate, confusion_matrix, miou_report};
use crate::gcr::{segment_scene, InferenceOptions, SegmentConfig};
use crate::pipeline::{build_vocab_bundle, load_scene, register_bundle, registry_from_scenes, train_bundle, Scene};
use crate::ClassId;

#[derive(Parser, Debug)]
#[command(name = "gwseg", version, about = "Generalized few-shot point cloud segmentation with geometric words")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set alpha=0.95.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    block_size: Option<f64>,
    #[arg(long, global = true)]
    points_per_block: Option<usize>,
    #[arg(long, global = true, value_enum)]
    feature_source: Option<SourceArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceArg {
    Handcrafted,
    Ingested,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    TwoPlanes,
    Room,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine the geometric vocabulary from labeled training scenes.
    BuildVocab {
        #[arg(long, num_args = 1.., required = true)]
        train: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Explicit novel class ids; otherwise the rarest classes are chosen.
        #[arg(long, value_delimiter = ',')]
        novel_classes: Option<Vec<ClassId>>,
        /// Comma-separated class names indexed by id.
        #[arg(long, value_delimiter = ',')]
        class_names: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the fusion head and base prototypes.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        train: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Register novel classes from a K-shot support draw.
    Register {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        support: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Label every point of a scene.
    Segment {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against ground truth. Several pairs are aggregated.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        gt: Vec<PathBuf>,
        /// Take the class split and names from this bundle.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// CSV report path.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump bundle contents as CSV.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Run the synthetic few-shot benchmark and its ablations.
    Benchmark {
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum Inspect {
    /// Per-word member counts.
    Vocab {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Unpruned and pruned geometric prototype of one class.
    Proto {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        class: ClassId,
    },
}

impl Common {
    fn workspace(&self) -> Result<WorkspaceConfig> {
        let mut cfg = match &self.config {
            Some(path) => WorkspaceConfig::load(path)?,
            None => WorkspaceConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v).map_err(Error::InvalidArgument)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.block_size {
            cfg.block_size = b;
        }
        if let Some(m) = self.points_per_block {
            cfg.points_per_block = m;
        }
        if let Some(src) = self.feature_source {
            cfg.feature_source = match src {
                SourceArg::Handcrafted => FeatureSourceKind::Handcrafted,
                SourceArg::Ingested => FeatureSourceKind::Ingested,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit status: 0 on success, 2 on any error.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("GWSEG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn load_scenes(paths: &[PathBuf], source: FeatureSourceKind) -> Result<Vec<Scene>> {
    paths.iter().map(|p| load_scene(p, source)).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Applies the settings a bundle fixed at vocabulary time so later stages
/// sample blocks and features identically.
fn align(cfg: &mut WorkspaceConfig, bundle: &ModelBundle) {
    let h = &bundle.hyper;
    cfg.vocab_size = h.vocab_size;
    cfg.tau = h.tau;
    cfg.beta = h.beta;
    cfg.alpha = h.alpha;
    cfg.fused_dim = h.fused_dim;
    cfg.use_geometric_words = h.use_geometric_words;
    cfg.feature_source = h.feature_source;
    cfg.k_neighbors = h.k_neighbors;
    cfg.semantic = h.semantic.clone();
    cfg.block_size = h.block_size;
    cfg.points_per_block = h.points_per_block;
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { preset, seed, out } => {
            let spec = match preset {
                Preset::TwoPlanes => two_planes(seed),
                Preset::Room => room(seed),
            };
            let cloud = generate_synthetic_scene(&spec)?;
            save_point_cloud(&cloud, &out)?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::BuildVocab {
            train,
            out,
            vocab_size,
            novel_classes,
            class_names,
            common,
        } => {
            let mut cfg = common.workspace()?;
            if let Some(h) = vocab_size {
                cfg.vocab_size = h;
            }
            cfg.validate()?;
            let scenes = load_scenes(&train, cfg.feature_source)?;
            let mut registry = match novel_classes {
                Some(novel) => {
                    let labels: Vec<&[ClassId]> = scenes.iter().map(Scene::labels).collect::<Result<_>>()?;
                    let n = label_histogram(labels, class_names.as_ref().map_or(0, Vec::len)).len();
                    let base = (0..n as ClassId).filter(|c| !novel.contains(c)).collect();
                    ClassRegistry::new(base, novel, (0..n).map(|c| format!("class{c}")).collect())?
                }
                None => registry_from_scenes(&scenes, &cfg, None)?,
            };
            if let Some(names) = class_names {
                registry = registry.with_names(names)?;
            }
            let bundle = build_vocab_bundle(&scenes, registry, &cfg)?;
            save_bundle(&bundle, &out)?;
            println!(
                "vocabulary of {} words over {}-d descriptors; base {:?}, novel {:?}",
                bundle.vocabulary.size(),
                bundle.vocabulary.dim(),
                bundle.registry.base_classes,
                bundle.registry.novel_classes
            );
        }
        Command::Train {
            bundle,
            train,
            out,
            log,
            epochs,
            common,
        } => {
            let mut cfg = common.workspace()?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let bundle = load_bundle(&bundle)?;
            align(&mut cfg, &bundle);
            let scenes = load_scenes(&train, cfg.feature_source)?;
            let (trained, history) = train_bundle(bundle, &scenes, &cfg)?;
            save_bundle(&trained, &out)?;
            let mut csv = String::from("epoch,loss,accuracy\n");
            for e in &history {
                csv.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.loss, e.accuracy));
            }
            if let Some(path) = log {
                write_text(&path, &csv)?;
            }
            if let Some(last) = history.last() {
                println!("trained {} epochs: loss {:.4}, accuracy {:.4}", history.len(), last.loss, last.accuracy);
            }
        }
        Command::Register {
            bundle,
            support,
            out,
            shots,
            alpha,
            common,
        } => {
            let mut cfg = common.workspace()?;
            if let Some(k) = shots {
                cfg.shots = k;
            }
            let mut bundle = load_bundle(&bundle)?;
            if let Some(a) = alpha {
                bundle.hyper.alpha = a;
                bundle.validate()?;
            }
            align(&mut cfg, &bundle);
            cfg.validate()?;
            let scenes = load_scenes(&support, cfg.feature_source)?;
            let seed = cfg.seed;
            let registered = register_bundle(bundle, &scenes, &cfg, seed)?;
            save_bundle(&registered, &out)?;
            println!(
                "registered {} novel classes with {} shots",
                registered.registry.novel_classes.len(),
                cfg.shots
            );
        }
        Command::Segment {
            bundle,
            input,
            out,
            beta,
            tau,
            common,
        } => {
            let cfg = common.workspace()?;
            let mut bundle = load_bundle(&bundle)?;
            if let Some(t) = tau {
                bundle.hyper.tau = t;
            }
            if let Some(b) = beta {
                bundle.hyper.beta = b;
            }
            bundle.validate()?;
            let scene = load_scene(&input, bundle.hyper.feature_source)?;
            let mut seg = SegmentConfig::from_bundle(&bundle, cfg.seed);
            seg.options = InferenceOptions::from_bundle(&bundle);
            let labels = segment_scene(&scene.cloud, &bundle, scene.input(), &seg)?;
            save_point_cloud(&scene.cloud.with_labels(labels)?, &out)?;
            println!("wrote {} labeled points to {}", scene.cloud.len(), out.display());
        }
        Command::Eval {
            pred,
            gt,
            bundle,
            report,
            common,
        } => {
            let cfg = common.workspace()?;
            if gt.len() != pred.len() && gt.len() != 1 {
                return Err(Error::invalid("give one --gt or one per --pred"));
            }
            let gts = gt.iter().map(load_point_cloud).collect::<Result<Vec<_>>>()?;
            let preds = pred.iter().map(load_point_cloud).collect::<Result<Vec<_>>>()?;
            let gt_labels = |i: usize| -> Result<&[ClassId]> {
                gts[i.min(gts.len() - 1)]
                    .labels
                    .as_deref()
                    .ok_or_else(|| Error::invalid("ground truth has no labels"))
            };
            let registry = match bundle {
                Some(path) => load_bundle(path)?.registry,
                None => {
                    let pred_max = preds
                        .iter()
                        .filter_map(|p| p.labels.as_ref())
                        .flat_map(|l| l.iter().copied())
                        .max()
                        .map_or(0, |m| m as usize + 1);
                    let mut counts = label_histogram(
                        (0..gts.len()).map(gt_labels).collect::<Result<Vec<_>>>()?,
                        0,
                    );
                    counts.resize(counts.len().max(pred_max), 0);
                    split_classes(&counts, cfg.novel_count.min(counts.len().saturating_sub(1)))?
                }
            };
            let mut reports = Vec::new();
            for (i, p) in preds.iter().enumerate() {
                let labels = p
                    .labels
                    .as_deref()
                    .ok_or_else(|| Error::invalid(format!("{} has no labels", pred[i].display())))?;
                let confusion = confusion_matrix(labels, gt_labels(i)?, registry.num_classes())?;
                let mut r = miou_report(&confusion, &registry)?;
                r.seed = Some(i as u64);
                reports.push(r);
            }
            let (table, csv) = if reports.len() == 1 {
                (reports[0].to_table(), reports[0].to_csv())
            } else {
                let agg = aggregate(&reports)?;
                (agg.to_table(), agg.to_csv())
            };
            print(&table);
            if let Some(path) = report {
                write_text(&path, &csv)?;
            }
        }
        Command::Inspect { what } => match what {
            Inspect::Vocab { bundle } => {
                let bundle = load_bundle(&bundle)?;
                let mut csv = String::from("word,member_count\n");
                for (h, c) in bundle.vocabulary.member_counts.iter().enumerate() {
                    csv.push_str(&format!("{h},{c}\n"));
                }
                print(&csv);
            }
            Inspect::Proto { bundle, class } => {
                let bundle = load_bundle(&bundle)?;
                let raw = bundle.geometric.get(&class).ok_or(Error::MissingPrototype(class))?;
                let pruned = bundle.pruned.get(&class).ok_or(Error::MissingPrototype(class))?;
                let mut csv = String::from("word,frequency,pruned_frequency\n");
                for (h, (a, b)) in raw.histogram().iter().zip(pruned.histogram()).enumerate() {
                    csv.push_str(&format!("{h},{a},{b}\n"));
                }
                print(&csv);
            }
        },
        Command::Benchmark { report, common } => {
            let mut bench = BenchmarkConfig::default();
            if common.config.is_some() || !common.set.is_empty() {
                let mut ws = bench.workspace.clone();
                if let Some(path) = &common.config {
                    ws.apply_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
                }
                for kv in &common.set {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                    ws.set(k, v).map_err(Error::InvalidArgument)?;
                }
                ws.validate()?;
                bench.workspace = ws;
            }
            if let Some(s) = common.seed {
                bench.scene_seed = s;
            }
            let result = run_benchmark(&bench)?;
            print(&result.to_table());
            if let Some(path) = report {
                let mut csv = String::from("variant,metric,mean,std\n");
                for v in [&result.semantic_only, &result.without_gcr, &result.full] {
                    for (k, m) in v.aggregate.rows() {
                        csv.push_str(&format!("{},{k},{:.6},{:.6}\n", v.name, m.mean, m.std));
                    }
                }
                write_text(&path, &csv)?;
            }
        }
    }
    Ok(())
}
