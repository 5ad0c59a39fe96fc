//! Desk-scale end-to-end run: simulate, train SimpleCNN, calibrate, evaluate.
//!
//! `cargo run --release --example desk_run -- [steps] [model]`

use std::time::Instant;

use gammaspot::models::{Architecture, ModelHandle, SimpleCnnConfig, UNetConfig};
use gammaspot::pipeline::{
    calibrate_k, evaluate, train, CropConfig, EvalConfig, LabeledSet, Sliding, SlidingConfig,
    ThresholdRule, TrainConfig, DEFAULT_K_GRID,
};
use gammaspot::skysim::{generate_dataset, load_dataset, SkyConfig};

fn main() -> gammaspot::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let arch = match args.get(2).map(String::as_str) {
        Some("unet") => Architecture::Unet(UNetConfig {
            crop_side: 32,
            ..UNetConfig::default()
        }),
        _ => Architecture::Cnn(SimpleCnnConfig::default()),
    };
    let dir = std::env::temp_dir().join("gammaspot-desk");
    let sky = SkyConfig {
        seed: 7,
        ..SkyConfig::desk()
    };
    generate_dataset(
        &sky,
        300,
        [200.0 / 300.0, 50.0 / 300.0, 50.0 / 300.0],
        &dir,
        None,
    )?;
    let ds = load_dataset(&dir)?;
    let train_set = LabeledSet::<f64>::from_samples(&ds.train);
    let val_set = LabeledSet::<f64>::from_samples(&ds.val);

    let mut model = ModelHandle::<f64>::build(arch, 1)?;
    let crop = CropConfig::new(model.crop_side());
    let cfg = TrainConfig {
        steps_per_epoch: 50,
        max_steps: Some(steps),
        seed: 3,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let hist = train(&mut model, &train_set, &val_set, &cfg, &crop)?;
    println!(
        "train {:.1}s, {} epochs, best {}",
        t.elapsed().as_secs_f64(),
        hist.epochs.len(),
        hist.best_epoch
    );
    for e in &hist.epochs {
        println!(
            "  epoch {} steps {} train {:.4} val {:.4}",
            e.epoch, e.steps, e.train_loss, e.val_loss
        );
    }
    let slide = Sliding {
        model: &model,
        config: SlidingConfig::default(),
    };
    let ecfg = EvalConfig::default();
    let t = Instant::now();
    let cal = calibrate_k(&slide, &ds.val, &DEFAULT_K_GRID, &ecfg)?;
    println!("calibrate {:.1}s: {:?}", t.elapsed().as_secs_f64(), cal);
    let ev = evaluate(&slide, &ds.test, &ThresholdRule { k: cal.k }, &ecfg)?;
    let r = ev.report;
    println!(
        "test: chamfer {:.2} var {:.1} f1 {:.3} tpr {:.3} tp {} fp {} fn {} t {:.1}ms",
        r.chamfer_mean,
        r.chamfer_var,
        r.f1,
        r.tpr,
        r.tp,
        r.fp,
        r.fn_,
        r.t_test_ms.unwrap_or(0.0)
    );
    Ok(())
}
