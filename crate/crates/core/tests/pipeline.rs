//! Sampling, sliding-window inference, post-processing and evaluation.

use gammaspot::models::{Architecture, ModelHandle, SimpleCnnConfig};
use gammaspot::pipeline::{
    calibrate_k, evaluate, sample_batch, score_predictions, suppress_neighbors, threshold_detect,
    train, window_offsets, CropConfig, Detection, Detections, EvalConfig, LabeledSet, Sliding,
    SlidingConfig, ThresholdRule, TrainConfig, TruthOracle,
};
use gammaspot::raster::Grid;
use gammaspot::skysim::{simulate_many, SkyConfig, SourceList};
use gammaspot::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk(seed: u64, n: usize) -> Vec<gammaspot::skysim::SkySample> {
    let cfg = SkyConfig {
        width: 32,
        height: 32,
        seed,
        ..SkyConfig::desk()
    };
    simulate_many(&cfg, 0, n, None).unwrap()
}

/// 8-connected components by repeated flood fill over a boolean raster.
fn components(w: usize, h: usize, on: &[bool]) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !on[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        label[start] = id;
        let mut i = 0;
        while i < members.len() {
            let (x, y) = ((members[i] % w) as isize, (members[i] / w) as isize);
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if on[j] && label[j] == usize::MAX {
                        label[j] = id;
                        members.push(j);
                    }
                }
            }
            i += 1;
        }
        members.sort();
        out.push(members);
    }
    out
}

fn map_strategy() -> impl Strategy<Value = Grid<f64>> {
    (2usize..20, 2usize..20).prop_flat_map(|(w, h)| {
        // Few distinct levels so ties inside components are common.
        prop::collection::vec(0u8..6, w * h).prop_map(move |d| {
            Grid::new(w, h, d.into_iter().map(|v| f64::from(v) / 5.0).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn window_offsets_tile_the_axis(extent in 1usize..300, side in 1usize..64, stride_frac in 0.0..1.0f64) {
        prop_assume!(side <= extent);
        let stride = 1 + (stride_frac * (side - 1) as f64) as usize;
        let offs = window_offsets(extent, side, stride);
        prop_assert_eq!(offs[0], 0);
        prop_assert_eq!(*offs.last().unwrap(), extent - side);
        for pair in offs.windows(2) {
            prop_assert!(pair[0] < pair[1] && pair[1] - pair[0] <= stride);
        }
    }

    #[test]
    fn threshold_matches_two_pass_oracle(map in map_strategy(), k in 0.0..4.0f64) {
        let n = map.data.len() as f64;
        let mean = map.data.iter().sum::<f64>() / n;
        let sd = (map.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let det = threshold_detect(&map, &ThresholdRule { k });
        let want: Vec<usize> = if sd == 0.0 {
            Vec::new()
        } else {
            (0..map.data.len()).filter(|&i| map.data[i] >= mean + k * sd).collect()
        };
        let got: Vec<usize> = det.pixels.iter().map(|d| d.row * map.width + d.col).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn suppression_keeps_one_maximum_per_component(map in map_strategy(), k in 0.0..2.0f64) {
        let det = threshold_detect(&map, &ThresholdRule { k });
        let mut on = vec![false; map.data.len()];
        for d in &det.pixels {
            on[d.row * map.width + d.col] = true;
        }
        let comps = components(map.width, map.height, &on);
        let mut want: Vec<(f64, f64)> = comps
            .iter()
            .map(|c| {
                // Highest score; the lowest raster index wins ties.
                let best = c.iter().copied().fold(c[0], |b, i| if map.data[i] > map.data[b] { i } else { b });
                ((best % map.width) as f64, (best / map.width) as f64)
            })
            .collect();
        want.sort_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap());
        let got: Vec<(f64, f64)> = suppress_neighbors(&det).points.iter().map(|p| (p.x, p.y)).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn suppression_examples() {
    let det = |pix: &[(usize, usize, f64)]| Detections {
        width: 5,
        height: 5,
        pixels: pix
            .iter()
            .map(|&(col, row, score)| Detection { col, row, score })
            .collect(),
    };
    let diag = suppress_neighbors(&det(&[(1, 1, 0.5), (2, 2, 0.9)]));
    assert_eq!(diag.coords(), vec![[2.0, 2.0]]);
    let tie = suppress_neighbors(&det(&[(3, 0, 0.7), (2, 1, 0.7)]));
    assert_eq!(tie.coords(), vec![[3.0, 0.0]]);
    let apart = suppress_neighbors(&det(&[(0, 0, 0.2), (2, 0, 0.3)]));
    assert_eq!(apart.len(), 2);
}

#[test]
fn oracle_scores_perfectly_and_calibration_prefers_small_k() {
    let samples = desk(12, 12);
    let oracle = TruthOracle::<f64>::new(&samples);
    let cfg = EvalConfig::default();
    let ev = evaluate(&oracle, &samples, &ThresholdRule { k: 2.0 }, &cfg).unwrap();
    assert_eq!(
        (ev.report.chamfer_mean, ev.report.f1, ev.report.tpr),
        (0.0, 1.0, 1.0)
    );
    for (p, s) in ev.predictions.iter().zip(&samples) {
        assert_eq!(p.coords(), {
            let mut c = s.truth.coords();
            c.sort_by(|a, b| (a[1], a[0]).partial_cmp(&(b[1], b[0])).unwrap());
            c
        });
    }
    // Every k here recovers the mask exactly, so the smallest wins the tie.
    let cal = calibrate_k(&oracle, &samples, &[5.0, 2.0, 3.0], &cfg).unwrap();
    assert_eq!(cal.k, 2.0);
    assert!(cal.scores.iter().all(|&(_, s)| s == 0.0));
    assert!(calibrate_k(&oracle, &samples, &[], &cfg).is_err());
}

#[test]
fn empty_predictions_cost_the_penalty() {
    let samples = desk(13, 6);
    let empty = vec![SourceList::default(); samples.len()];
    let r = score_predictions::<f64>(&samples, &empty, &EvalConfig::default()).unwrap();
    for (score, s) in r.per_image_scores.iter().zip(&samples) {
        assert_eq!(*score, 4.0 * s.truth.len() as f64);
    }
    assert_eq!(r.tp + r.fp, 0);
    assert!(score_predictions::<f64>(&samples, &empty[..2], &EvalConfig::default()).is_err());
}

#[test]
fn mixed_image_sizes_are_rejected() {
    let mut samples = desk(14, 2);
    samples.extend(
        simulate_many(
            &SkyConfig {
                seed: 1,
                ..SkyConfig::desk()
            },
            0,
            1,
            None,
        )
        .unwrap(),
    );
    let none = vec![SourceList::default(); 3];
    assert!(matches!(
        score_predictions::<f64>(&samples, &none, &EvalConfig::default()),
        Err(Error::Shape(_))
    ));
}

#[test]
fn batches_are_seeded_and_respect_source_fraction() {
    let set = LabeledSet::<f64>::from_samples(&desk(15, 8));
    let cfg = CropConfig {
        side: 12,
        source_fraction: 1.0,
        batch_size: 10,
    };
    let a = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = sample_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.crops, b.crops);
    assert_eq!(a.masks, b.masks);
    for chunk in a.masks.chunks(144) {
        assert!(chunk.contains(&1.0));
    }
    let too_big = CropConfig { side: 40, ..cfg };
    assert!(sample_batch(&set, &too_big, &mut ChaCha8Rng::seed_from_u64(1)).is_err());

    let blank = SkyConfig {
        width: 32,
        height: 32,
        n_sources_base: 0,
        n_sources_jitter: 0,
        ..SkyConfig::desk()
    };
    let empty = LabeledSet::<f64>::from_samples(&simulate_many(&blank, 0, 2, None).unwrap());
    assert!(matches!(
        sample_batch(&empty, &cfg, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(Error::NoSourceCrop(_))
    ));
}

fn tiny_cnn() -> Architecture {
    Architecture::Cnn(SimpleCnnConfig {
        crop_side: 16,
        widths: [4, 8],
        ..SimpleCnnConfig::default()
    })
}

#[test]
fn training_keeps_the_best_epoch() {
    let train_set = LabeledSet::<f64>::from_samples(&desk(16, 8));
    let val_set = LabeledSet::<f64>::from_samples(&desk(17, 4));
    let mut model = ModelHandle::<f64>::build(tiny_cnn(), 2).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        steps_per_epoch: 4,
        val_crops: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let crop = CropConfig {
        batch_size: 4,
        ..CropConfig::new(16)
    };
    let h = train(&mut model, &train_set, &val_set, &cfg, &crop).unwrap();
    let best = &h.epochs[h.best_epoch - 1];
    assert_eq!(best.val_loss, h.best_val_loss);
    assert!(h.epochs.iter().all(|e| e.val_loss >= h.best_val_loss));
    assert_eq!(model.step, best.steps);
    assert!(h.best_val_loss < h.initial_loss);

    let wrong = CropConfig::new(20);
    assert!(train(&mut model, &train_set, &val_set, &cfg, &wrong).is_err());
}

#[test]
fn evaluation_is_independent_of_worker_count() {
    let samples = desk(18, 6);
    let model = ModelHandle::<f64>::build(tiny_cnn(), 9).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let slide = Sliding {
                    model: &model,
                    config: SlidingConfig::with_stride(5),
                };
                evaluate(
                    &slide,
                    &samples,
                    &ThresholdRule { k: 3.0 },
                    &EvalConfig::default(),
                )
                .unwrap()
            })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.predictions, b.predictions);
    assert!(a.report.t_test_ms.is_some());
}

#[test]
fn stride_outside_crop_is_rejected() {
    let model = ModelHandle::<f64>::build(tiny_cnn(), 0).unwrap();
    let image = Grid::filled(20, 20, 1.0);
    for stride in [0, 17] {
        let r =
            gammaspot::pipeline::predict_full(&model, &image, &SlidingConfig::with_stride(stride));
        assert!(r.is_err());
    }
    let small = Grid::filled(10, 20, 1.0);
    assert!(gammaspot::pipeline::predict_full(&model, &small, &SlidingConfig::default()).is_err());
}
