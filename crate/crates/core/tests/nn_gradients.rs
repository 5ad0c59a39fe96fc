//! Analytic gradients against central finite differences, plus a direct
//! convolution oracle.

mod support;

use gammaspot::nn::{combined, conv2d_forward, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck::{check_layer, check_loss, random_tensor};

fn assert_layers(names: &[&str]) {
    for name in names {
        if let Err(e) = check_layer(name) {
            panic!("{e}");
        }
    }
}

#[test]
fn conv_gradients() {
    assert_layers(&["conv3 same", "conv1", "conv3 stride 2"]);
}

#[test]
fn dense_gradients() {
    assert_layers(&["dense"]);
}

#[test]
fn elementwise_gradients() {
    assert_layers(&["relu", "sigmoid"]);
}

#[test]
fn structural_gradients() {
    assert_layers(&["maxpool", "upsample", "crop", "concat"]);
}

#[test]
fn loss_gradients() {
    for name in support::gradcheck::LOSSES {
        if let Err(e) = check_loss(name) {
            panic!("{e}");
        }
    }
}

#[test]
fn combined_loss_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 400;
    let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
    let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.1) as u8)).collect();
    let mut sq = 0.0;
    let mut ce = 0.0;
    for i in 0..n {
        sq += (y[i] - p[i]).powi(2);
        ce += y[i] * p[i].ln();
    }
    let direct = sq / n as f64 + 100.0 * (-ce / n as f64);
    let (got, _) = combined(&p, &y, 100.0).unwrap();
    assert!((got - direct).abs() < 1e-12 * direct.abs().max(1.0));
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Vec<f64> {
    let (c, h, wd) = (x.shape[1], x.shape[2], x.shape[3]);
    let (o, k) = (w.shape[0], w.shape[2]);
    let ho = h + 2 * pad - k + 1;
    let wo = wd + 2 * pad - k + 1;
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy + ky) as isize - pad as isize;
                            let ix = (ox + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += w.data[((oc * c + ic) * k + ky) * k + kx]
                                    * x.data[(ic * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pad in [0, 1, 2] {
        let x = random_tensor(&mut rng, &[1, 2, 6, 6]);
        let w = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let got = conv2d_forward(&x, &w, &b, 1, pad).unwrap();
        let want = naive_conv(&x, &w, &b.data, pad);
        assert_eq!(got.len(), want.len());
        for (g, e) in got.data.iter().zip(&want) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

#[test]
fn box_kernel_on_constant_gives_nine_c() {
    let c = 1.75;
    let x = Tensor::filled(&[1, 1, 6, 6], c);
    let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
    let out = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
    for y in 1..5 {
        for xx in 1..5 {
            assert_eq!(out.data[y * 6 + xx], 9.0 * c);
        }
    }
}

#[test]
fn maxpool_routes_whole_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.input(random_tensor(&mut rng, &[1, 3, 8, 8]));
    let y = tape.max_pool(x, 2).unwrap();
    let seed: Vec<f64> = (0..tape.value(y).len())
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let g = tape.backward(y, &seed, &ParamStore::new()).unwrap();
    let dx = g.input(x).unwrap();
    let nonzero = dx.iter().filter(|&&v| v != 0.0).count();
    assert_eq!(nonzero, seed.len());
    let total: f64 = dx.iter().sum();
    assert!((total - seed.iter().sum::<f64>()).abs() < 1e-12);
}
