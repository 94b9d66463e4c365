use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rffs::data::{
    normalize_block, parse_points, partition_blocks, sample_block, synth_scene, write_points, write_predictions,
    ColumnSchema, PointCloud, SynthSpec,
};
use rffs::graph::{build_fusion_graphs, build_hierarchy, GraphDump, HierarchyConfig};
use rffs::metrics::{per_class_metrics, ConfusionMatrix, MetricsReport};
use rffs::model::ModelConfig;
use rffs::tensor::{load_checkpoint, save_checkpoint, Checkpoint};
use rffs::train::{
    checkpoint_model, label_by_nearest, predict as predict_block, prepare_cloud_blocks, BlockSample, Trainer,
};
use serde::Serialize;

use crate::config::{parse_loss_weights, RunConfig};
use crate::{BlocksArgs, EvalArgs, GraphsArgs, PredictArgs, SynthArgs, TrainArgs};

/// A bad combination of arguments; exits with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const POINT_EXTENSIONS: &[&str] = &["txt", "pts", "xyz"];

fn schema(columns: Option<&str>) -> Result<Option<ColumnSchema>> {
    columns
        .map(|c| ColumnSchema::parse(c).with_context(|| format!("invalid column schema '{c}'")))
        .transpose()
}

fn read_cloud(path: &Path, columns: Option<&str>, classes: Option<usize>) -> Result<PointCloud> {
    parse_points(path, schema(columns)?.as_ref(), classes).with_context(|| format!("reading {}", path.display()))
}

/// Point files of a directory in name order, or the file itself.
fn point_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| POINT_EXTENSIONS.contains(&e))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no point files ({}) in {}", POINT_EXTENSIONS.join(", "), path.display());
    }
    Ok(files)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::with_points(a.points, a.seed);
    spec.extent = a.extent;
    spec.density = a.density.unwrap_or(a.points as f64 / (a.extent * a.extent));
    spec.classes = a.classes.clone();
    let cloud = synth_scene(&spec)?;
    create_parent(&a.out)?;
    write_points(&cloud, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let names = spec.class_map()?.names().join(",");
    println!("{} points, classes {names} -> {}", cloud.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    origin: [f64; 2],
    extent: [f64; 2],
    count: usize,
}

#[derive(Serialize)]
struct Manifest {
    source: String,
    block_size: f64,
    min_count: usize,
    total_points: usize,
    blocks: Vec<ManifestEntry>,
}

pub fn blocks(a: &BlocksArgs) -> Result<()> {
    let cloud = read_cloud(&a.input, a.columns.as_deref(), None)?;
    if cloud.is_empty() {
        bail!("{} contains no points", a.input.display());
    }
    let blocks = partition_blocks(&cloud, a.block_size, a.min_count)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut entries = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let file = format!("block_{i:04}.txt");
        let path = a.out_dir.join(&file);
        write_points(&cloud.select(&b.point_indices), &path).with_context(|| format!("writing {}", path.display()))?;
        entries.push(ManifestEntry {
            file,
            origin: b.origin,
            extent: b.extent,
            count: b.len(),
        });
    }
    let manifest = Manifest {
        source: a
            .input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        block_size: a.block_size,
        min_count: a.min_count,
        total_points: cloud.len(),
        blocks: entries,
    };
    write_text(&a.out_dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    println!("{} blocks from {} points -> {}", blocks.len(), cloud.len(), a.out_dir.display());
    Ok(())
}

pub fn graphs(a: &GraphsArgs) -> Result<()> {
    let cloud = read_cloud(&a.input, a.columns.as_deref(), None)?;
    let cloud = match a.n_target {
        Some(n) => cloud.select(&sample_block(cloud.len(), n, a.seed)?),
        None => cloud,
    };
    let (xyz, _) = normalize_block(&cloud.xyz)?;
    let xyz: Vec<[f32; 3]> = xyz.iter().map(|p| p.map(|v| v as f32)).collect();
    let cfg = HierarchyConfig {
        k: a.k,
        ratios: a.ratios.clone(),
        seed: a.seed,
    };
    let h = build_hierarchy(&xyz, None, &cfg)
        .with_context(|| format!("every hierarchy level needs at least k = {} points", a.k))?;
    let deepest = &h.levels.last().unwrap().xyz;
    let fusion = build_fusion_graphs(deepest, a.fusion_k, a.delta, &a.dilations).with_context(|| {
        format!(
            "fusion graphs on the deepest level ({} points) with k = {}, delta = {}, dilations {:?}",
            deepest.len(),
            a.fusion_k,
            a.delta,
            a.dilations
        )
    })?;
    let dump = GraphDump::new(&h, a.k, &fusion);
    write_text(&a.out, &serde_json::to_string(&dump)?)?;
    println!("levels {:?}, {} fusion rates -> {}", dump.level_sizes, dump.fusion.len(), a.out.display());
    Ok(())
}

fn merged_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = &a.$field {
                c.$field = v.clone();
            })*
        };
    }
    take!(epochs, batch_size, lr, weight_decay, loss_reduction, n_target, k, delta, fusion_k, dilations, aggregation);
    if a.seed.is_some() {
        c.seed = a.seed;
    }
    if a.num_classes.is_some() {
        c.num_classes = a.num_classes;
    }
    if a.class_names.is_some() {
        c.class_names = a.class_names.clone();
    }
    if a.columns.is_some() {
        c.columns = a.columns.clone();
    }
    if a.no_dense {
        c.dense = false;
    }
    if a.no_mrfa {
        c.mrfa = false;
    }
    if let Some(w) = &a.loss_weights {
        c.loss_weights = parse_loss_weights(w, c.levels()).map_err(|e| UsageError(e.to_string()))?;
    }
    c.seed = Some(c.resolved_seed()?);
    Ok(c)
}

fn load_blocks(dir: &Path, columns: Option<&str>, classes: Option<usize>) -> Result<(Vec<PathBuf>, Vec<PointCloud>)> {
    let files = point_files(dir)?;
    let clouds = files
        .iter()
        .map(|f| read_cloud(f, columns, classes))
        .collect::<Result<Vec<_>>>()?;
    Ok((files, clouds))
}

fn require_labels(files: &[PathBuf], clouds: &[PointCloud]) -> Result<()> {
    if let Some((f, _)) = files.iter().zip(clouds).find(|(_, c)| c.labels.is_none()) {
        bail!("labels required: {} has no label column", f.display());
    }
    Ok(())
}

/// Number of attribute columns shared by every block.
fn attr_width(files: &[PathBuf], clouds: &[PointCloud]) -> Result<usize> {
    let w = clouds[0].attr_width();
    if let Some((f, c)) = files.iter().zip(clouds).find(|(_, c)| c.attr_width() != w) {
        bail!(
            "dataset/architecture mismatch: {} has {} attribute columns, {} has {w}",
            f.display(),
            c.attr_width(),
            files[0].display()
        );
    }
    Ok(w)
}

fn check_architecture(model: &ModelConfig, in_channels: usize, max_label: usize) -> Result<()> {
    if model.in_channels != in_channels {
        bail!(
            "dataset/architecture mismatch: model takes {} input channels, data provides {in_channels}",
            model.in_channels
        );
    }
    if max_label >= model.num_classes {
        bail!(
            "dataset/architecture mismatch: label {max_label} but the model has {} classes",
            model.num_classes
        );
    }
    Ok(())
}

fn max_label(clouds: &[PointCloud]) -> usize {
    clouds
        .iter()
        .filter_map(|c| c.labels.as_ref())
        .flat_map(|l| l.iter().copied())
        .max()
        .unwrap_or(0)
}

fn checkpoint_with_run(trainer: &Trainer, run: &RunConfig) -> Result<Checkpoint<f32>> {
    let mut ckpt = trainer.checkpoint();
    ckpt.meta
        .as_object_mut()
        .ok_or_else(|| anyhow!("checkpoint metadata is not an object"))?
        .insert("run".into(), serde_json::to_value(run)?);
    Ok(ckpt)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut run = merged_config(a)?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&run)?);
        return Ok(());
    }
    let seed = run.seed.unwrap_or(0);
    let (files, clouds) = load_blocks(&a.data_dir, run.columns.as_deref(), run.num_classes)?;
    require_labels(&files, &clouds)?;
    let in_channels = 3 + attr_width(&files, &clouds)?;
    let top = max_label(&clouds);

    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if let Some(stored) = ckpt.meta.get("run") {
                let stored: RunConfig = serde_json::from_value(stored.clone())?;
                run.num_classes = stored.num_classes;
                run.class_names = stored.class_names;
            }
            Trainer::from_checkpoint(ckpt, Some(run.epochs))?
        }
        None => {
            let num_classes = run
                .num_classes
                .or_else(|| run.class_names.as_ref().map(Vec::len))
                .unwrap_or((top + 1).max(2));
            run.num_classes = Some(num_classes);
            let model = run.model_config(in_channels, num_classes, seed);
            model.validate().map_err(|e| UsageError(e.to_string()))?;
            let train = run.train_config(seed).map_err(|e| UsageError(e.to_string()))?;
            Trainer::new(model, train)?
        }
    };
    if let Some(names) = &run.class_names {
        if Some(names.len()) != run.num_classes {
            bail!("{} class names for {:?} classes", names.len(), run.num_classes);
        }
    }
    let model = trainer.model().clone();
    check_architecture(&model, in_channels, top)?;

    let samples = prepare_cloud_blocks(&clouds, &model, run.n_target, seed)?;
    let blocks: Vec<_> = samples.into_iter().map(|s| s.block).collect();

    let log_path = a
        .metrics_log
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out_checkpoint, ".metrics.jsonl"));
    create_parent(&a.out_checkpoint)?;
    create_parent(&log_path)?;
    if a.resume.is_none() {
        fs::write(&log_path, "").with_context(|| format!("writing {}", log_path.display()))?;
    }
    let records = trainer.train(&blocks, |t, rec| {
        save_checkpoint(&a.out_checkpoint, &checkpoint_with_run(t, &run).map_err(|e| rffs::Error::Checkpoint(e.to_string()))?)?;
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&log_path)?;
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
        eprintln!(
            "epoch {:>4}  loss {:.5}  oa {:.4}  mf1 {:.4}  miou {:.4}",
            rec.epoch, rec.total_loss, rec.oa, rec.mf1, rec.miou
        );
        Ok(())
    })?;
    if records.is_empty() {
        save_checkpoint(&a.out_checkpoint, &checkpoint_with_run(&trainer, &run)?)?;
    }
    println!(
        "{} blocks, {} epochs -> {} ({})",
        blocks.len(),
        trainer.epoch,
        a.out_checkpoint.display(),
        log_path.display()
    );
    Ok(())
}

struct Restored {
    ckpt: Checkpoint<f32>,
    model: ModelConfig,
    run: RunConfig,
}

fn restore(path: &Path) -> Result<Restored> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let model = checkpoint_model(&ckpt)?;
    let run = match ckpt.meta.get("run") {
        Some(r) => serde_json::from_value(r.clone()).context("checkpoint run configuration")?,
        None => RunConfig {
            seed: Some(model.hierarchy.seed),
            ..RunConfig::default()
        },
    };
    Ok(Restored { ckpt, model, run })
}

/// Predicts every point of every cloud, in cloud order.
fn predict_clouds(r: &Restored, clouds: &[PointCloud]) -> Result<Vec<Vec<usize>>> {
    let samples: Vec<BlockSample> = prepare_cloud_blocks(clouds, &r.model, r.run.n_target, r.run.seed.unwrap_or(0))?;
    clouds
        .iter()
        .zip(&samples)
        .map(|(c, s)| {
            let pred = predict_block(&r.ckpt, Some(&r.model), &s.block)?;
            Ok(label_by_nearest(c, &s.indices, &pred)?)
        })
        .collect()
}

fn class_names(r: &Restored) -> Vec<String> {
    r.run
        .class_names
        .clone()
        .unwrap_or_else(|| (0..r.model.num_classes).map(|i| format!("class{i}")).collect())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let r = restore(&a.checkpoint)?;
    let columns = a.columns.as_deref().or(r.run.columns.as_deref());
    let (files, clouds) = load_blocks(&a.data, columns, None)?;
    require_labels(&files, &clouds)?;
    check_architecture(&r.model, 3 + attr_width(&files, &clouds)?, max_label(&clouds))?;
    let preds = predict_clouds(&r, &clouds)?;
    let mut cm = ConfusionMatrix::new(r.model.num_classes);
    for (c, p) in clouds.iter().zip(&preds) {
        cm.accumulate(c.labels.as_ref().unwrap(), p)?;
    }
    let names = class_names(&r);
    let report: MetricsReport = per_class_metrics(&cm, Some(&names));
    let is_csv = a.report.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    write_text(&a.report, &if is_csv { report.to_csv() } else { report.to_json() })?;
    let confusion = a
        .confusion
        .clone()
        .unwrap_or_else(|| with_suffix(&a.report, ".confusion.csv"));
    write_text(&confusion, &cm.to_csv(&names)?)?;
    println!(
        "{} points in {} files: oa {:.4}  mf1 {:.4}  miou {:.4} -> {}",
        cm.total(),
        files.len(),
        report.oa,
        report.mf1,
        report.miou,
        a.report.display()
    );
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let r = restore(&a.checkpoint)?;
    let columns = a.columns.as_deref().or(r.run.columns.as_deref());
    let cloud = read_cloud(&a.input, columns, None)?;
    check_architecture(&r.model, 3 + cloud.attr_width(), 0)?;
    let pred = predict_clouds(&r, std::slice::from_ref(&cloud))?.remove(0);
    create_parent(&a.out)?;
    write_predictions(&cloud, &pred, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} points -> {}", cloud.len(), a.out.display());
    Ok(())
}
