use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gammaspot::grid::{GridData, RawGrid};
use gammaspot::metrics::{EvalReport, MatchStrategy};
use gammaspot::models::{Architecture, FoCnnConfig, ModelHandle, SimpleCnnConfig, UNetConfig};
use gammaspot::nn::{read_checkpoint_header, AdamConfig, LossKind, LossSpec, SourceWeight};
use gammaspot::pipeline::{
    calibrate_k, evaluate as run_eval, extract_sources, predict_full, score_predictions,
    train as fit, Calibration, CropConfig, EvalConfig, LabeledSet, Sliding, SlidingConfig,
    ThresholdRule, TrainConfig, TrainHistory, DEFAULT_K_GRID,
};
use gammaspot::raster::Grid;
use gammaspot::skysim::{
    generate_dataset, load_background, load_dataset, read_count_map, read_sources, sources_file,
    write_sources, Dataset, SkyConfig, SkySample, SourceList, Split, DEFAULT_SPLIT,
};
use gammaspot::Scalar;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{default_out, merge, write_json, RunManifest};
use crate::render::{overlay_png, score_table};
use crate::{
    usage, CalibrateArgs, EvaluateArgs, FitArgs, GenerateArgs, LossArg, MatchArg, ModelKind,
    Precision, PredictArgs, Preset, SplitArg, SweepArgs, TrainArgs,
};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| usage(format!("--{flag} is required")))
}

fn split_of(s: Option<SplitArg>) -> Split {
    match s.unwrap_or(SplitArg::Test) {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn open_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn eval_config(radius: Option<f64>, matching: Option<MatchArg>) -> EvalConfig {
    let d = EvalConfig::default();
    EvalConfig {
        radius: radius.unwrap_or(d.radius),
        strategy: match matching {
            Some(MatchArg::Max) => MatchStrategy::MaxCardinality,
            _ => MatchStrategy::Greedy,
        },
        ..d
    }
}

pub fn generate(flags: &GenerateArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: GenerateArgs = merge(flags, config)?;
    let n = required(&a.n, "n")?;
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut sky = match a.preset.unwrap_or(Preset::Default) {
        Preset::Default => SkyConfig::default(),
        Preset::Desk => SkyConfig::desk(),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {$(
            if let Some(v) = a.$flag { sky.$field = v; }
        )*};
    }
    set!(seed <- seed, width <- width, height <- height, deg_per_pixel <- deg_per_pixel,
         psf_sigma <- psf_sigma, n_sources_base <- n_sources, n_sources_jitter <- jitter,
         flux_min <- flux_min, flux_max <- flux_max, background_amplitude <- background,
         background_spread <- background_spread);
    sky.validate().map_err(|e| usage(e.to_string()))?;
    let split = match &a.split {
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(_) => return Err(usage("--split takes three comma-separated fractions")),
        None => DEFAULT_SPLIT,
    };
    let out = default_out(a.out.as_deref(), "generate");
    let mut run = RunManifest::start("generate", &a)?;
    run.seed("sky", sky.seed);
    let template = match &a.background_template {
        Some(p) => Some((p.display().to_string(), load_background(p)?)),
        None => None,
    };
    let manifest = generate_dataset(
        &sky,
        n,
        split,
        &out,
        template.as_ref().map(|(name, map)| (name.as_str(), map)),
    )
    .map_err(|e| match e {
        gammaspot::Error::Config(msg) => usage(msg),
        other => other.into(),
    })?;
    run.output(&out.join("manifest.json"))?;
    eprintln!(
        "wrote {} images ({}x{}) to {}",
        manifest.n_images,
        sky.width,
        sky.height,
        out.display()
    );
    run.finish(&out)
}

fn architecture(a: &TrainArgs) -> Architecture {
    let kind = a.model.unwrap_or(ModelKind::Cnn);
    match kind {
        ModelKind::Cnn => Architecture::Cnn(SimpleCnnConfig {
            crop_side: a.crop.unwrap_or(40),
            literal_padding: a.literal_padding.unwrap_or(false),
            ..SimpleCnnConfig::default()
        }),
        ModelKind::Unet => {
            let d = UNetConfig::default();
            Architecture::Unet(UNetConfig {
                filters: a.filters.unwrap_or(d.filters),
                kernel_size: a.kernel.unwrap_or(d.kernel_size),
                num_blocks: a.blocks.unwrap_or(d.num_blocks),
                crop_side: a.crop.unwrap_or(d.crop_side),
            })
        }
        ModelKind::Focnn => Architecture::Focnn(FoCnnConfig::default()),
        ModelKind::Focnn0 => Architecture::Focnn0(FoCnnConfig::default()),
    }
}

struct FitPlan {
    train: TrainConfig,
    crop: CropConfig,
    init_seed: u64,
    k_grid: Vec<f64>,
    slide: SlidingConfig,
}

fn fit_plan(f: &FitArgs, arch: &Architecture) -> Result<FitPlan> {
    let d = TrainConfig::default();
    let default_loss = match arch {
        Architecture::Focnn(_) | Architecture::Focnn0(_) => LossKind::Combined,
        _ => LossKind::WeightedBce,
    };
    let loss = LossSpec {
        kind: match f.loss {
            Some(LossArg::Bce) => LossKind::WeightedBce,
            Some(LossArg::Mse) => LossKind::Mse,
            Some(LossArg::Combined) => LossKind::Combined,
            None => default_loss,
        },
        source_weight: f
            .source_weight
            .map_or(SourceWeight::Auto, SourceWeight::Fixed),
        ..LossSpec::default()
    };
    let train = TrainConfig {
        epochs: f.epochs.unwrap_or(d.epochs),
        steps_per_epoch: f.steps_per_epoch.unwrap_or(d.steps_per_epoch),
        patience: f.patience.unwrap_or(d.patience),
        optimizer: AdamConfig::with_lr(f.lr.unwrap_or(d.optimizer.learning_rate)),
        loss,
        seed: f.seed.unwrap_or(0),
        val_crops: f.val_crops.unwrap_or(d.val_crops),
        max_steps: f.max_steps,
    };
    train.validate().map_err(|e| usage(e.to_string()))?;
    let mut crop = CropConfig::new(arch.crop_side());
    if let Some(b) = f.batch_size {
        crop.batch_size = b;
    }
    if let Some(s) = f.source_fraction {
        crop.source_fraction = s;
    }
    crop.validate().map_err(|e| usage(e.to_string()))?;
    Ok(FitPlan {
        train,
        crop,
        init_seed: f.init_seed.unwrap_or(0),
        k_grid: f.k_grid.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec()),
        slide: SlidingConfig { stride: f.stride },
    })
}

struct Fitted<T> {
    model: ModelHandle<T>,
    history: TrainHistory,
    calibration: Option<Calibration>,
}

fn fit_model<T: Scalar>(
    arch: Architecture,
    ds: &Dataset,
    plan: &FitPlan,
    calibrate: bool,
    eval: &EvalConfig,
) -> Result<Fitted<T>> {
    let mut model =
        ModelHandle::<T>::build(arch, plan.init_seed).map_err(|e| usage(e.to_string()))?;
    let train_set = LabeledSet::<T>::from_samples(&ds.train);
    let val_set = LabeledSet::<T>::from_samples(&ds.val);
    let history = fit(&mut model, &train_set, &val_set, &plan.train, &plan.crop)?;
    let calibration = if calibrate {
        let slide = Sliding {
            model: &model,
            config: plan.slide,
        };
        let cal = calibrate_k(&slide, &ds.val, &plan.k_grid, eval)?;
        Some(cal)
    } else {
        None
    };
    if let Some(c) = &calibration {
        model.threshold_k = Some(c.k);
    }
    Ok(Fitted {
        model,
        history,
        calibration,
    })
}

pub fn train(flags: &TrainArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: TrainArgs = merge(flags, config)?;
    let data = required(&a.data, "data")?;
    let arch = architecture(&a);
    arch.validate().map_err(|e| usage(e.to_string()))?;
    let plan = fit_plan(&a.fit, &arch)?;
    let ds = open_dataset(&data)?;
    let out = default_out(a.out.as_deref(), "train");
    fs::create_dir_all(&out)?;
    let mut run = RunManifest::start("train", &a)?;
    run.seed("sampling", plan.train.seed);
    run.seed("init", plan.init_seed);
    run.seed("dataset", ds.manifest.seed);
    let calibrate = !a.no_calibrate.unwrap_or(false);
    let eval = EvalConfig::default();
    let ckpt = out.join("model.ckpt");
    let (history, calibration) = match a.precision.unwrap_or(Precision::F64) {
        Precision::F64 => {
            let f = fit_model::<f64>(arch, &ds, &plan, calibrate, &eval)?;
            f.model.save(&ckpt)?;
            (f.history, f.calibration)
        }
        Precision::F32 => {
            let f = fit_model::<f32>(arch, &ds, &plan, calibrate, &eval)?;
            f.model.save(&ckpt)?;
            (f.history, f.calibration)
        }
    };
    run.output(&ckpt)?;
    let hist_path = out.join("history.json");
    write_json(
        &hist_path,
        &json!({
            "architecture": arch,
            "train": plan.train,
            "crop": plan.crop,
            "history": history,
            "calibration": calibration,
        }),
    )?;
    run.output(&hist_path)?;
    eprintln!(
        "trained {} for {} epochs (best {}, val loss {:.5})",
        arch.name(),
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss
    );
    run.finish(&out)
}

/// Dispatches on the checkpoint's stored precision.
macro_rules! with_model {
    ($path:expr, |$m:ident| $body:expr) => {{
        let path: &Path = $path;
        let header = read_checkpoint_header(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        if header.dtype == f32::DTYPE {
            let $m = ModelHandle::<f32>::load(path)?;
            $body
        } else {
            let $m = ModelHandle::<f64>::load(path)?;
            $body
        }
    }};
}

fn rule_for<T>(k: Option<f64>, model: &ModelHandle<T>) -> ThresholdRule {
    ThresholdRule {
        k: k.or(model.threshold_k)
            .unwrap_or(ThresholdRule::default().k),
    }
}

fn check_fits<T: Scalar>(model: &ModelHandle<T>, samples: &[SkySample]) -> Result<()> {
    let s = model.crop_side();
    if let Some(x) = samples
        .iter()
        .find(|x| x.image.width < s || x.image.height < s)
    {
        bail!(
            "checkpoint expects {s}x{s} crops but the dataset has {}x{} images",
            x.image.width,
            x.image.height
        );
    }
    Ok(())
}

fn prediction_name(id: usize) -> String {
    sources_file(id)
}

fn write_prob_map<T: Scalar>(path: &Path, map: &Grid<T>) -> Result<()> {
    let data = GridData::F32(map.data.iter().map(|v| v.f64() as f32).collect());
    RawGrid::new(map.width, map.height, data)?.write(path)?;
    Ok(())
}

pub fn predict(flags: &PredictArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: PredictArgs = merge(flags, config)?;
    let ckpt = required(&a.checkpoint, "checkpoint")?;
    if a.data.is_some() == a.image.is_some() {
        return Err(usage("give exactly one of --data or --image"));
    }
    let out = default_out(a.out.as_deref(), "predict");
    fs::create_dir_all(&out)?;
    let mut run = RunManifest::start("predict", &a)?;
    let save_maps = a.save_maps.unwrap_or(false);
    let slide = SlidingConfig {
        stride: a.infer.stride,
    };
    let inputs: Vec<(String, gammaspot::skysim::CountMap)> = match (&a.data, &a.image) {
        (Some(dir), _) => {
            let ds = open_dataset(dir)?;
            let split = split_of(a.infer.split);
            ds.ids(split)
                .into_iter()
                .zip(ds.split(split))
                .map(|(id, s)| (format!("{id:05}"), s.image.clone()))
                .collect()
        }
        (_, Some(img)) => {
            let stem = img.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let name = stem.strip_prefix("img_").unwrap_or(stem).to_string();
            vec![(name, read_count_map(img)?)]
        }
        _ => unreachable!(),
    };
    with_model!(&ckpt, |model| {
        run.seed("init", model.seed);
        let rule = rule_for(a.infer.k, &model);
        for (name, image) in &inputs {
            let grid = Grid {
                width: image.width,
                height: image.height,
                data: image
                    .counts
                    .iter()
                    .map(|&c| Scalar::of(f64::from(c)))
                    .collect(),
            };
            let map = predict_full(&model, &grid, &slide)?;
            let found = extract_sources(&map, &rule);
            let path = out.join(format!("src_{name}.json"));
            write_sources(&path, &found)?;
            run.output(&path)?;
            if save_maps {
                let p = out.join(format!("prob_{name}.grid"));
                write_prob_map(&p, &map)?;
                run.output(&p)?;
            }
        }
        eprintln!("k = {}", rule.k);
    });
    run.finish(&out)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    k: Option<f64>,
    config: Value,
}

pub fn evaluate(flags: &EvaluateArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: EvaluateArgs = merge(flags, config)?;
    let data = required(&a.data, "data")?;
    if a.checkpoint.is_some() == a.pred_dir.is_some() {
        return Err(usage("give exactly one of --checkpoint or --pred-dir"));
    }
    let ds = open_dataset(&data)?;
    let split = split_of(a.infer.split);
    let samples = ds.split(split);
    if samples.is_empty() {
        bail!("the {split:?} split of {} is empty", data.display());
    }
    let ids = ds.ids(split);
    let out = default_out(a.out.as_deref(), "evaluate");
    fs::create_dir_all(&out)?;
    let mut run = RunManifest::start("evaluate", &a)?;
    run.seed("dataset", ds.manifest.seed);
    let eval = eval_config(a.radius, a.matching);

    let (report, predictions, k) = if let Some(dir) = &a.pred_dir {
        let mut preds = Vec::with_capacity(ids.len());
        for &id in &ids {
            let p = dir.join(prediction_name(id));
            if p.exists() {
                preds.push(read_sources(&p)?);
            } else {
                eprintln!(
                    "no {} in {}; scoring as empty",
                    prediction_name(id),
                    dir.display()
                );
                preds.push(SourceList::default());
            }
        }
        let report = score_predictions::<f64>(samples, &preds, &eval)?;
        (report, preds, None)
    } else {
        let ckpt = a.checkpoint.clone().expect("checked above");
        with_model!(&ckpt, |model| {
            check_fits(&model, samples)?;
            run.seed("init", model.seed);
            let rule = rule_for(a.infer.k, &model);
            let slide = Sliding {
                model: &model,
                config: SlidingConfig {
                    stride: a.infer.stride,
                },
            };
            let ev = run_eval(&slide, samples, &rule, &eval)?;
            (ev.report, ev.predictions, Some(rule.k))
        })
    };

    let pred_out = out.join("predictions");
    fs::create_dir_all(&pred_out)?;
    for (&id, p) in ids.iter().zip(&predictions) {
        write_sources(&pred_out.join(prediction_name(id)), p)?;
    }
    if a.png.unwrap_or(false) {
        let png_dir = out.join("overlays");
        fs::create_dir_all(&png_dir)?;
        for ((&id, s), p) in ids.iter().zip(samples).zip(&predictions) {
            overlay_png(
                &png_dir.join(format!("img_{id:05}.png")),
                &s.image,
                &s.truth,
                p,
            )?;
        }
        run.output(&png_dir)?;
    }
    let report_path = out.join("report.json");
    write_json(
        &report_path,
        &ReportFile {
            report: &report,
            k,
            config: json!({
                "command": serde_json::to_value(&a)?,
                "eval": {"radius": eval.radius, "strategy": eval.strategy, "penalty_factor": eval.penalty_factor},
                "dataset": ds.manifest.config,
                "split": split,
            }),
        },
    )?;
    run.output(&report_path)?;
    let table_path = out.join("table.md");
    let name = a
        .checkpoint
        .as_ref()
        .or(a.pred_dir.as_ref())
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    fs::write(&table_path, score_table(&[(name, &report)]))?;
    run.output(&table_path)?;
    eprintln!(
        "chamfer {:.3} (var {:.3}), F1 {:.3}, TPR {:.3}",
        report.chamfer_mean, report.chamfer_var, report.f1, report.tpr
    );
    run.finish(&out)
}

pub fn calibrate(flags: &CalibrateArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: CalibrateArgs = merge(flags, config)?;
    let ckpt = required(&a.checkpoint, "checkpoint")?;
    let data = required(&a.data, "data")?;
    let ds = open_dataset(&data)?;
    let grid = a.k_grid.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
    let eval = eval_config(a.radius, a.matching);
    let target = a.out.clone().unwrap_or_else(|| ckpt.clone());
    let dir = target
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let mut run = RunManifest::start("calibrate", &a)?;
    let cal = with_model!(&ckpt, |model| {
        let mut model = model;
        check_fits(&model, &ds.val)?;
        run.seed("init", model.seed);
        let slide = Sliding {
            model: &model,
            config: SlidingConfig { stride: a.stride },
        };
        let cal = calibrate_k(&slide, &ds.val, &grid, &eval)?;
        model.threshold_k = Some(cal.k);
        model.save(&target)?;
        cal
    });
    run.output(&target)?;
    let cal_path = dir.join("calibration.json");
    write_json(&cal_path, &cal)?;
    run.output(&cal_path)?;
    eprintln!("k = {}", cal.k);
    run.finish(&dir)
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
struct SweepRow {
    filters: usize,
    kernel_size: usize,
    num_blocks: usize,
    k: f64,
    f1: f64,
    tpr: f64,
    std: f64,
    distance: f64,
    best_val_loss: f64,
    steps: u64,
}

pub fn sweep_unet(flags: &SweepArgs, config: Option<&Path>) -> Result<PathBuf> {
    let a: SweepArgs = merge(flags, config)?;
    let data = required(&a.data, "data")?;
    if a.fit.max_steps.is_none() {
        return Err(usage("--max-steps is required to bound the sweep"));
    }
    let crop = a.crop.unwrap_or(32);
    let filters = a.filters.clone().unwrap_or_else(|| vec![8, 16]);
    let kernels = a.kernels.clone().unwrap_or_else(|| vec![3, 5]);
    let blocks = a.blocks.clone().unwrap_or_else(|| vec![3, 4, 5]);
    let ds = open_dataset(&data)?;
    let out = default_out(a.out.as_deref(), "sweep-unet");
    fs::create_dir_all(&out)?;
    let mut run = RunManifest::start("sweep-unet", &a)?;
    run.seed("dataset", ds.manifest.seed);
    let eval = EvalConfig::default();

    let mut rows = Vec::new();
    for &f in &filters {
        for &ks in &kernels {
            for &nb in &blocks {
                let cfg = UNetConfig {
                    filters: f,
                    kernel_size: ks,
                    num_blocks: nb,
                    crop_side: crop,
                };
                let arch = Architecture::Unet(cfg);
                arch.validate().map_err(|e| usage(e.to_string()))?;
                let row_dir = out.join(format!("F{f}_KS{ks}_NB{nb}"));
                let row_path = row_dir.join("row.json");
                if row_path.exists() {
                    let row: SweepRow = serde_json::from_str(&fs::read_to_string(&row_path)?)
                        .with_context(|| format!("reading {}", row_path.display()))?;
                    eprintln!("F={f} KS={ks} NB={nb}: already done");
                    rows.push(row);
                    continue;
                }
                fs::create_dir_all(&row_dir)?;
                let plan = fit_plan(&a.fit, &arch)?;
                let fitted = fit_model::<f64>(arch, &ds, &plan, true, &eval)?;
                let k = fitted.model.threshold_k.expect("calibrated");
                fitted.model.save(&row_dir.join("model.ckpt"))?;
                let slide = Sliding {
                    model: &fitted.model,
                    config: plan.slide,
                };
                let ev = run_eval(&slide, &ds.test, &ThresholdRule { k }, &eval)?;
                write_json(&row_dir.join("report.json"), &ev.report)?;
                let row = SweepRow {
                    filters: f,
                    kernel_size: ks,
                    num_blocks: nb,
                    k,
                    f1: ev.report.f1,
                    tpr: ev.report.tpr,
                    std: ev.report.chamfer_var.sqrt(),
                    distance: ev.report.chamfer_mean,
                    best_val_loss: fitted.history.best_val_loss,
                    steps: fitted.model.step,
                };
                // Written last: its presence marks the row as complete.
                write_json(&row_path, &row)?;
                eprintln!(
                    "F={f} KS={ks} NB={nb}: F1 {:.3} TPR {:.3} distance {:.2}",
                    row.f1, row.tpr, row.distance
                );
                rows.push(row);
            }
        }
    }
    let sweep_path = out.join("sweep.json");
    write_json(&sweep_path, &rows)?;
    run.output(&sweep_path)?;
    let mut table = String::from(
        "| UNet Params | F1 Score | TPR | std | Distance | k |\n|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        table.push_str(&format!(
            "| F={} KS={} NB={} | {:.3} | {:.3} | {:.2} | {:.2} | {} |\n",
            r.filters, r.kernel_size, r.num_blocks, r.f1, r.tpr, r.std, r.distance, r.k
        ));
    }
    let table_path = out.join("sweep.md");
    fs::write(&table_path, table)?;
    run.output(&table_path)?;
    run.finish(&out)
}
