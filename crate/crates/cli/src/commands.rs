use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use markguard_core::decision::{
    calibrate_band, evaluate, tradeoff_curve, CalibratedBand, ModelMeta, ScoredSet, ThresholdBand, TradeoffCurve,
};
use markguard_core::manifest::{DatasetManifest, Split};
use markguard_core::nn::{build, lookup};
use markguard_core::pipeline::Stages;
use markguard_core::synth::{generate_dataset, GenConfig};
use markguard_core::training::{
    format_matrix, run_experiment_matrix, score_examples, stages_for, train_on, ModelArtifact, PreparedData,
    TrainConfig, LOG_FILE,
};
use markguard_service::registry::VALIDATION_FILE;
use markguard_service::{Service, ServiceConfig};
use plotters::prelude::*;

use crate::args::*;
use crate::output::{write_atomic, write_json, StagedDir};

/// Training config written beside each artifact.
const TRAIN_CONFIG_FILE: &str = "train.toml";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Curve(a) => curve(a),
        Command::Matrix(a) => matrix(a),
        Command::Serve(a) => serve(a),
        Command::ExportFeedback(a) => export_feedback(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => GenConfig::from_toml(&read_text(p)?)
            .map_err(|e| anyhow::anyhow!(e))
            .with_context(|| format!("parsing {}", p.display()))?,
        None => GenConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.severity {
        cfg.severity = s;
    }
    cfg.validate()?;
    let staged = StagedDir::new(&a.out)?;
    let (manifest, _) = generate_dataset(&cfg, staged.path())?;
    staged.commit()?;
    println!(
        "wrote {} images to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        a.out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}

fn train_config(path: Option<&Path>, arch: Option<String>, seed: Option<u64>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(x) = arch {
        cfg.architecture = x;
    }
    if let Some(x) = seed {
        cfg.seed = x;
    }
    if let Some(x) = epochs {
        cfg.epochs_max = x;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), a.arch, a.seed, a.epochs)?;
    build(&cfg.architecture, cfg.seed)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let stages = stages_for(cfg.localizer, &manifest)?;
    let data = PreparedData::from_manifest(&manifest, &stages)?;
    let (artifact, log) = train_on(&data, &cfg)?;
    let val = score_examples(&artifact.handle()?, &data.val)?;

    let staged = StagedDir::new(&a.out)?;
    artifact.save(staged.path())?;
    write_atomic(&staged.path().join(LOG_FILE), log.to_json())?;
    write_json(&staged.path().join(VALIDATION_FILE), &val)?;
    write_atomic(&staged.path().join(TRAIN_CONFIG_FILE), cfg.to_toml())?;
    staged.commit()?;
    println!("{}", artifact.meta.version);
    tracing::info!(
        best_epoch = log.best_epoch,
        epochs = log.epochs.len(),
        "wrote {}",
        a.out.display()
    );
    Ok(())
}

/// Canonicalizes and scores one split of `manifest`. Also returns the
/// number of captures that produced no usable crop.
fn score_split(artifact: &ModelArtifact, manifest: &Path, split: Split) -> Result<(ScoredSet, u64)> {
    let mut m = DatasetManifest::read(manifest)?;
    m.entries.retain(|e| e.split == split);
    if m.entries.is_empty() {
        bail!("{} has no {split} entries", manifest.display());
    }
    let data = PreparedData::from_manifest(&m, &Stages::standard())?;
    let set = score_examples(&artifact.handle()?, data.split(split))?;
    Ok((set, data.capture_rejects(split)))
}

fn load_scores(src: &ScoreSource) -> Result<ScoredSet> {
    match (&src.scores, &src.model, &src.manifest) {
        (Some(p), _, _) => {
            let text = read_text(p)?;
            match serde_json::from_str::<ScoredSet>(&text) {
                Ok(s) => Ok(s),
                Err(_) => Ok(ScoredSet::parse(&text).with_context(|| format!("parsing {}", p.display()))?),
            }
        }
        (None, Some(model), Some(manifest)) => {
            let artifact = ModelArtifact::load(model)?;
            Ok(score_split(&artifact, manifest, src.split)?.0)
        }
        _ => bail!("give --scores, or --model with --manifest"),
    }
}

fn read_band(path: &Path) -> Result<ThresholdBand> {
    let text = read_text(path)?;
    let band = match serde_json::from_str::<CalibratedBand>(&text) {
        Ok(c) => c.band,
        Err(_) => serde_json::from_str::<ThresholdBand>(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    band.validate()?;
    Ok(band)
}

fn eval(a: EvalArgs) -> Result<()> {
    let band = match (a.band, &a.band_file) {
        (Some(b), _) => b,
        (None, Some(p)) => read_band(p)?,
        (None, None) => ThresholdBand::single(0.5)?,
    };
    let artifact = ModelArtifact::load(&a.model)?;
    let (set, capture_rejects) = score_split(&artifact, &a.manifest, a.split)?;
    let meta = ModelMeta {
        architecture: artifact.meta.architecture.clone(),
        layer_count: artifact.meta.layer_count,
        layer_unit: lookup(&artifact.meta.architecture).and_then(|i| i.layer_unit).map(String::from),
        weight_count: artifact.meta.weight_count,
    };
    let mut report = evaluate(&set, &band, &meta)?;
    report.add_capture_rejects(capture_rejects);
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!("{}", report.table_row());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let set = load_scores(&a.source)?;
    let cal = calibrate_band(&set, &a.costs)?;
    if let Some(out) = &a.out {
        write_json(out, &cal)?;
    }
    println!("{}", serde_json::to_string_pretty(&cal)?);
    if cal.warning.is_some() {
        tracing::warn!("the cheapest band rejects every item");
    }
    Ok(())
}

pub fn default_budgets() -> Vec<f64> {
    (0..=30).map(|i| i as f64 / 100.0).collect()
}

fn curve(a: CurveArgs) -> Result<()> {
    let set = load_scores(&a.source)?;
    let budgets = a.budgets.map_or_else(default_budgets, |b| b.0);
    let curve = tradeoff_curve(&set, &budgets)?;
    let table = curve.to_table();
    if let Some(out) = &a.out {
        write_atomic(out, &table)?;
    }
    if let Some(plot) = &a.plot {
        write_atomic(plot, render_plot(&curve)?)?;
    }
    print!("{table}");
    Ok(())
}

/// Accuracy over accepted items against achieved rejection, both in
/// percent.
fn render_plot(curve: &TradeoffCurve) -> Result<String> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.achieved_rejection * 100.0, p.best_accuracy * 100.0))
        .collect();
    let x_max = pts.iter().map(|p| p.0).fold(1.0, f64::max) * 1.05;
    let y_min = pts.iter().map(|p| p.1).fold(100.0, f64::min);
    let y_lo = (y_min - (100.0 - y_min) * 0.1 - 0.05).max(0.0);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Accuracy vs rejection", ("sans-serif", 22))
            .margin(16)
            .x_label_area_size(44)
            .y_label_area_size(60)
            .build_cartesian_2d(0.0..x_max, y_lo..100.05)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("rejection (%)")
            .y_desc("accuracy (%)")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), BLUE.stroke_width(2)))
            .map_err(plot_err)?;
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("rendering plot: {e:?}")
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), None, a.seed, a.epochs)?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let rows = run_experiment_matrix(&manifest, &a.arch, &cfg, &a.costs)?;
    let table = format_matrix(&rows);
    write_atomic(&a.out, &table)?;
    if let Some(p) = &a.json {
        write_json(p, &rows)?;
    }
    print!("{table}");
    let failed: Vec<_> = rows.iter().filter(|r| r.error.is_some()).map(|r| r.architecture.as_str()).collect();
    if failed.len() == rows.len() {
        bail!("every architecture failed: {}", failed.join(", "));
    }
    for f in failed {
        tracing::warn!("{f} failed; see the report");
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        bind: a.bind,
        artifact_dir: a.artifacts,
        store_dir: a.store,
        payload_limit: a.payload_limit,
        initial_model: a.model,
        costs: a.costs,
    };
    let service = Arc::new(Service::open(cfg)?);
    match service.snapshot().model_version() {
        Some(v) => tracing::info!("active model {v}"),
        None => tracing::warn!("no active model; activate one with POST /v1/models/{{version}}/activate"),
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(markguard_service::serve(service))?;
    Ok(())
}

fn export_feedback(a: ExportArgs) -> Result<()> {
    let manifest = markguard_service::service::export_from_store(&a.store)?;
    write_atomic(&a.out, manifest.to_csv())?;
    println!("wrote {} entries to {}", manifest.entries.len(), a.out.display());
    Ok(())
}
