//! Analytic gradients against central finite differences.

use gammaspot::nn::{combined, mse, weighted_bce, Init, ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 5;

/// Every differentiable layer, then every loss.
pub const LAYERS: [&str; 10] = [
    "conv3 same",
    "conv1",
    "conv3 stride 2",
    "dense",
    "relu",
    "sigmoid",
    "maxpool",
    "upsample",
    "crop",
    "concat",
];
pub const LOSSES: [&str; 3] = ["bce", "mse", "combined"];

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks sit outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random_tensor(rng, shape);
    t.data
        .iter_mut()
        .for_each(|v| *v = v.signum() * (0.1 + v.abs()));
    t
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, Var) -> Var>;

/// Scalar objective `Σ r·f(x)` for a fixed random projection `r`.
struct Case {
    store: ParamStore<f64>,
    input: Tensor<f64>,
    build: Build,
}

impl Case {
    fn run(&self, input: &Tensor<f64>, store: &ParamStore<f64>) -> (Tape<f64>, Var, Var) {
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let y = (self.build)(&mut tape, store, x);
        (tape, x, y)
    }

    fn objective(&self, input: &Tensor<f64>, store: &ParamStore<f64>, r: &[f64]) -> f64 {
        let (tape, _, y) = self.run(input, store);
        tape.value(y).data.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    /// Largest relative error over inputs and parameters.
    fn check(&self, rng: &mut ChaCha8Rng) -> Result<f64, String> {
        let (tape, x, y) = self.run(&self.input, &self.store);
        let r: Vec<f64> = (0..tape.value(y).len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let grads = tape
            .backward(y, &r, &self.store)
            .map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        let dx = grads.input(x).ok_or("no input gradient")?;
        for i in 0..self.input.len() {
            let mut plus = self.input.clone();
            plus.data[i] += H;
            let mut minus = self.input.clone();
            minus.data[i] -= H;
            let fd = (self.objective(&plus, &self.store, &r)
                - self.objective(&minus, &self.store, &r))
                / (2.0 * H);
            let e = rel_err(fd, dx[i]);
            if e > TOL {
                return Err(format!("input {i}: analytic {} vs fd {fd}", dx[i]));
            }
            worst = worst.max(e);
        }
        for p in 0..self.store.len() {
            let id = ParamId(p);
            for i in 0..self.store.get(id).len() {
                let mut plus = self.store.clone();
                plus.get_mut(id).data[i] += H;
                let mut minus = self.store.clone();
                minus.get_mut(id).data[i] -= H;
                let fd = (self.objective(&self.input, &plus, &r)
                    - self.objective(&self.input, &minus, &r))
                    / (2.0 * H);
                let an = grads.params[p][i];
                let e = rel_err(fd, an);
                if e > TOL {
                    return Err(format!(
                        "param {} [{i}]: analytic {an} vs fd {fd}",
                        self.store.name(id)
                    ));
                }
                worst = worst.max(e);
            }
        }
        Ok(worst)
    }
}

fn conv_case(rng: &mut ChaCha8Rng, k: usize, stride: usize, pad: usize) -> Case {
    let mut store = ParamStore::new();
    let w = store.add(
        "w",
        &[3, 2, k, k],
        Init::HeUniform { fan_in: 2 * k * k },
        rng,
    );
    let b = store.add("b", &[3], Init::HeUniform { fan_in: 1 }, rng);
    Case {
        store,
        input: random_tensor(rng, &[2, 2, 5, 5]),
        build: Box::new(move |t, s, x| {
            let (wv, bv) = (t.param(s, w), t.param(s, b));
            t.conv2d(x, wv, bv, stride, pad).unwrap()
        }),
    }
}

fn stateless(input: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Var + 'static) -> Case {
    Case {
        store: ParamStore::new(),
        input,
        build: Box::new(move |t, _, x| f(t, x)),
    }
}

fn layer_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    match name {
        "conv3 same" => conv_case(rng, 3, 1, 1),
        "conv1" => conv_case(rng, 1, 1, 0),
        "conv3 stride 2" => conv_case(rng, 3, 2, 0),
        "dense" => {
            let mut store = ParamStore::new();
            let w = store.add("w", &[4, 6], Init::HeUniform { fan_in: 6 }, rng);
            let b = store.add("b", &[4], Init::HeUniform { fan_in: 1 }, rng);
            Case {
                store,
                input: random_tensor(rng, &[3, 6]),
                build: Box::new(move |t, s, x| {
                    let (wv, bv) = (t.param(s, w), t.param(s, b));
                    t.dense(x, wv, bv).unwrap()
                }),
            }
        }
        "relu" => stateless(away_from_zero(rng, &[2, 3, 4, 4]), |t, x| t.relu(x)),
        "sigmoid" => stateless(random_tensor(rng, &[2, 3, 4, 4]), |t, x| t.sigmoid(x)),
        "maxpool" => stateless(random_tensor(rng, &[2, 2, 6, 6]), |t, x| {
            t.max_pool(x, 2).unwrap()
        }),
        "upsample" => stateless(random_tensor(rng, &[2, 2, 3, 3]), |t, x| {
            t.upsample(x, 2).unwrap()
        }),
        "crop" => stateless(random_tensor(rng, &[1, 2, 6, 6]), |t, x| {
            t.crop(x, 1, 2, 3, 4).unwrap()
        }),
        // The input feeds two concatenated branches, so gradients accumulate.
        "concat" => stateless(random_tensor(rng, &[2, 2, 3, 3]), |t, x| {
            let s = t.sigmoid(x);
            let joined = t.concat(&[x, s, x]).unwrap();
            t.reshape(joined, &[2, 54]).unwrap()
        }),
        other => panic!("unknown layer {other}"),
    }
}

fn seed_of(name: &str, instance: u64) -> u64 {
    name.bytes().fold(instance, |h, b| {
        h.wrapping_mul(31).wrapping_add(u64::from(b))
    })
}

/// Runs `INSTANCES` random instances of one layer; returns the worst error.
pub fn check_layer(name: &str) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(name, i));
        let case = layer_case(name, &mut rng);
        worst = worst.max(
            case.check(&mut rng)
                .map_err(|e| format!("{name} #{i}: {e}"))?,
        );
    }
    Ok(worst)
}

/// Same for a loss, differentiating with respect to the prediction.
pub fn check_loss(name: &str) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for inst in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_of(name, inst));
        let n = 25;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        let w = rng.gen_range(1.0..20.0);
        let f = |q: &[f64]| match name {
            "bce" => weighted_bce(q, &y, w).unwrap(),
            "mse" => mse(q, &y).unwrap(),
            "combined" => combined(q, &y, 100.0).unwrap(),
            other => panic!("unknown loss {other}"),
        };
        let (_, g) = f(&p);
        for i in 0..n {
            let mut a = p.clone();
            a[i] += H;
            let mut b = p.clone();
            b[i] -= H;
            let fd = (f(&a).0 - f(&b).0) / (2.0 * H);
            let e = rel_err(fd, g[i]);
            if e > TOL {
                return Err(format!("{name} #{inst} [{i}]: {} vs {fd}", g[i]));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}
