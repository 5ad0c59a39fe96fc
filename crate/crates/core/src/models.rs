//! The detection networks: SimpleCNN, a parametric UNet, the
//! Fourier-augmented FoCNN and its shallow FoCNN₀ variant.
//!
//! Every model maps a batch of raw `s`×`s` count crops to `s`×`s` probability
//! maps. Counts enter the network as `ln(1 + c)`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{BandChannels, BandMode, FOCNN_SIDE};
use crate::nn::{
    load_checkpoint, save_checkpoint, CheckpointHeader, Init, ParamId, ParamStore, Tape, Tensor,
    Var,
};
use crate::raster::Grid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleCnnConfig {
    pub crop_side: usize,
    #[serde(default = "default_widths")]
    pub widths: [usize; 2],
    /// Use the tabulated paddings (6 and 2), which grow the map by 8 pixels,
    /// and center-crop the result back to the input size.
    #[serde(default)]
    pub literal_padding: bool,
}

fn default_widths() -> [usize; 2] {
    [16, 32]
}

impl Default for SimpleCnnConfig {
    fn default() -> Self {
        SimpleCnnConfig {
            crop_side: 40,
            widths: default_widths(),
            literal_padding: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub filters: usize,
    pub kernel_size: usize,
    pub num_blocks: usize,
    pub crop_side: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            filters: 16,
            kernel_size: 5,
            num_blocks: 3,
            crop_side: 40,
        }
    }
}

impl UNetConfig {
    /// Channel width of encoder block `i`.
    pub fn width(&self, i: usize) -> usize {
        self.filters << i
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.num_blocks == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "UNet needs F >= 1, NB >= 1 and odd KS, got {self:?}"
            )));
        }
        let factor = 1usize
            .checked_shl(self.num_blocks as u32)
            .filter(|&f| f <= self.crop_side)
            .ok_or_else(|| Error::config("too many UNet blocks for the crop side"))?;
        if !self.crop_side.is_multiple_of(factor) {
            return Err(Error::config(format!(
                "crop side {} is not divisible by 2^{}",
                self.crop_side, self.num_blocks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoCnnConfig {
    /// Channels of extractor A and extractor B convolutions.
    #[serde(default = "default_widths")]
    pub widths: [usize; 2],
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub band_mode: BandMode,
}

fn default_hidden() -> usize {
    256
}

impl Default for FoCnnConfig {
    fn default() -> Self {
        FoCnnConfig {
            widths: default_widths(),
            hidden: default_hidden(),
            band_mode: BandMode::KeepCenter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Architecture {
    Cnn(SimpleCnnConfig),
    Unet(UNetConfig),
    Focnn(FoCnnConfig),
    Focnn0(FoCnnConfig),
}

impl Architecture {
    pub fn crop_side(&self) -> usize {
        match self {
            Architecture::Cnn(c) => c.crop_side,
            Architecture::Unet(c) => c.crop_side,
            Architecture::Focnn(_) | Architecture::Focnn0(_) => FOCNN_SIDE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Cnn(_) => "cnn",
            Architecture::Unet(_) => "unet",
            Architecture::Focnn(_) => "focnn",
            Architecture::Focnn0(_) => "focnn0",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |w: &[usize]| w.iter().all(|&v| v > 0);
        match self {
            Architecture::Cnn(c) if c.crop_side < 8 || !positive(&c.widths) => Err(Error::config(
                format!("SimpleCNN needs crop side >= 8, got {c:?}"),
            )),
            Architecture::Unet(c) => c.validate(),
            Architecture::Focnn(c) | Architecture::Focnn0(c)
                if !positive(&c.widths) || c.hidden == 0 =>
            {
                Err(Error::config(format!("invalid FoCNN widths {c:?}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
enum Layout {
    Cnn {
        c1: Conv,
        c2: Conv,
        head: Conv,
        trim: usize,
    },
    Unet {
        down: Vec<[Conv; 2]>,
        bottom: [Conv; 2],
        /// Post-upsampling convolution, then the two block convolutions.
        up: Vec<(Conv, [Conv; 2])>,
        head: Conv,
    },
    Focnn {
        a: [Conv; 3],
        b: [Conv; 2],
        fc: [Dense; 2],
    },
    Focnn0 {
        a: Conv,
        b: [Conv; 2],
        head: Conv,
    },
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, k: usize, pad: usize, cin: usize, cout: usize) -> Conv {
        let fan_in = cin * k * k;
        let w = self.store.add(
            format!("{name}.w"),
            &[cout, cin, k, k],
            Init::HeUniform { fan_in },
            &mut self.rng,
        );
        let b = self
            .store
            .add(format!("{name}.b"), &[cout], Init::Zeros, &mut self.rng);
        Conv { w, b, pad }
    }

    fn same(&mut self, name: &str, k: usize, cin: usize, cout: usize) -> Conv {
        self.conv(name, k, (k - 1) / 2, cin, cout)
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Dense {
        let w = self.store.add(
            format!("{name}.w"),
            &[outputs, inputs],
            Init::HeUniform { fan_in: inputs },
            &mut self.rng,
        );
        let b = self
            .store
            .add(format!("{name}.b"), &[outputs], Init::Zeros, &mut self.rng);
        Dense { w, b }
    }
}

fn layout<T: Scalar>(arch: &Architecture, seed: u64, store: &mut ParamStore<T>) -> Layout {
    let mut b = Builder {
        store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    match *arch {
        Architecture::Cnn(c) => {
            let [w1, w2] = c.widths;
            let (p1, p2, trim) = if c.literal_padding {
                (6, 2, 4)
            } else {
                (3, 1, 0)
            };
            Layout::Cnn {
                c1: b.conv("conv1", 7, p1, 1, w1),
                c2: b.conv("conv2", 3, p2, w1, w2),
                head: b.conv("fc", 1, 0, w2, 1),
                trim,
            }
        }
        Architecture::Unet(c) => {
            let ks = c.kernel_size;
            let mut down = Vec::new();
            let mut cin = 1;
            for i in 0..c.num_blocks {
                let w = c.width(i);
                down.push([
                    b.same(&format!("enc{i}.conv1"), ks, cin, w),
                    b.same(&format!("enc{i}.conv2"), ks, w, w),
                ]);
                cin = w;
            }
            let wb = c.width(c.num_blocks);
            let bottom = [
                b.same("mid.conv1", ks, cin, wb),
                b.same("mid.conv2", ks, wb, wb),
            ];
            let mut up = Vec::new();
            let mut cin = wb;
            for i in (0..c.num_blocks).rev() {
                let w = c.width(i);
                up.push((
                    b.same(&format!("dec{i}.up"), ks, cin, w),
                    [
                        b.same(&format!("dec{i}.conv1"), ks, 2 * w, w),
                        b.same(&format!("dec{i}.conv2"), ks, w, w),
                    ],
                ));
                cin = w;
            }
            let head = b.conv("head", 1, 0, cin, 1);
            Layout::Unet {
                down,
                bottom,
                up,
                head,
            }
        }
        Architecture::Focnn(c) => {
            let [wa, wb] = c.widths;
            let a = [
                b.same("a.conv1", 3, 4, wa),
                b.same("a.conv2", 5, wa, wa),
                b.same("a.conv3", 3, wa, wa),
            ];
            let convs = [
                b.same("b.conv1", 3, wa + 1, wb),
                b.same("b.conv2", 3, wb, wb),
            ];
            let flat = wb * (FOCNN_SIDE / 4) * (FOCNN_SIDE / 4);
            let fc = [
                b.dense("fc1", flat, c.hidden),
                b.dense("fc2", c.hidden, FOCNN_SIDE * FOCNN_SIDE),
            ];
            Layout::Focnn { a, b: convs, fc }
        }
        Architecture::Focnn0(c) => {
            let [wa, wb] = c.widths;
            Layout::Focnn0 {
                a: b.same("a.conv1", 5, 4, wa),
                b: [
                    b.same("b.conv1", 5, wa + 1, wb),
                    b.same("b.conv2", 3, wb, wb),
                ],
                head: b.conv("fc", 1, 0, wb, 1),
            }
        }
    }
}

/// A built network with its parameters and, once calibrated, its threshold.
#[derive(Debug, Clone)]
pub struct ModelHandle<T> {
    pub architecture: Architecture,
    pub seed: u64,
    pub params: ParamStore<T>,
    pub threshold_k: Option<f64>,
    /// Optimizer steps taken so far.
    pub step: u64,
    layout: Layout,
}

/// Checkpoint header payload describing the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    architecture: Architecture,
    threshold_k: Option<f64>,
}

impl<T: Scalar> ModelHandle<T> {
    pub fn build(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut params = ParamStore::new();
        let layout = layout(&architecture, seed, &mut params);
        Ok(ModelHandle {
            architecture,
            seed,
            params,
            threshold_k: None,
            step: 0,
            layout,
        })
    }

    pub fn crop_side(&self) -> usize {
        self.architecture.crop_side()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn input_tensor(&self, crops: &[Grid<T>]) -> Result<Tensor<T>> {
        let s = self.crop_side();
        if crops.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let log = |g: &Grid<T>| g.map(|v| v.max(T::zero()).ln_1p());
        let mut data = Vec::new();
        for c in crops {
            if c.width != s || c.height != s {
                return Err(Error::shape(format!(
                    "model expects {s}x{s} crops, got {}x{}",
                    c.width, c.height
                )));
            }
        }
        let channels = match &self.architecture {
            Architecture::Focnn(f) | Architecture::Focnn0(f) => {
                let bands = BandChannels::<T>::new(f.band_mode);
                for c in crops {
                    for plane in bands.channels(&log(c))? {
                        data.extend(plane.data);
                    }
                }
                4
            }
            _ => {
                for c in crops {
                    data.extend(log(c).data);
                }
                1
            }
        };
        Tensor::new(&[crops.len(), channels, s, s], data)
    }

    /// Records a forward pass; the result has shape `[N, 1, s, s]`.
    pub fn forward(&self, tape: &mut Tape<T>, crops: &[Grid<T>]) -> Result<Var> {
        let input = self.input_tensor(crops)?;
        let n = crops.len();
        let s = self.crop_side();
        let x = tape.input(input);
        let p = &self.params;
        let conv = |tape: &mut Tape<T>, c: &Conv, x: Var| -> Result<Var> {
            let (w, b) = (tape.param(p, c.w), tape.param(p, c.b));
            tape.conv2d(x, w, b, 1, c.pad)
        };
        let conv_relu = |tape: &mut Tape<T>, c: &Conv, x: Var| -> Result<Var> {
            let y = conv(tape, c, x)?;
            Ok(tape.relu(y))
        };
        let logits = match &self.layout {
            Layout::Cnn { c1, c2, head, trim } => {
                let h = conv_relu(tape, c1, x)?;
                let h = conv_relu(tape, c2, h)?;
                let h = conv(tape, head, h)?;
                if *trim > 0 {
                    tape.crop(h, *trim, *trim, s, s)?
                } else {
                    h
                }
            }
            Layout::Unet {
                down,
                bottom,
                up,
                head,
            } => {
                let mut h = x;
                let mut skips = Vec::with_capacity(down.len());
                for [a, b] in down {
                    h = conv_relu(tape, a, h)?;
                    h = conv_relu(tape, b, h)?;
                    skips.push(h);
                    h = tape.max_pool(h, 2)?;
                }
                h = conv_relu(tape, &bottom[0], h)?;
                h = conv_relu(tape, &bottom[1], h)?;
                for (u, [a, b]) in up {
                    h = tape.upsample(h, 2)?;
                    h = conv_relu(tape, u, h)?;
                    let skip = skips.pop().expect("one skip per block");
                    h = tape.concat(&[skip, h])?;
                    h = conv_relu(tape, a, h)?;
                    h = conv_relu(tape, b, h)?;
                }
                conv(tape, head, h)?
            }
            Layout::Focnn { a, b, fc } => {
                let raw = raw_channel(tape, x, n, s)?;
                let mut h = x;
                for c in a {
                    h = conv_relu(tape, c, h)?;
                }
                h = tape.concat(&[h, raw])?;
                for c in b {
                    h = conv_relu(tape, c, h)?;
                    h = tape.max_pool(h, 2)?;
                }
                let flat = tape.value(h).len() / n;
                h = tape.reshape(h, &[n, flat])?;
                let (w, bb) = (tape.param(p, fc[0].w), tape.param(p, fc[0].b));
                h = tape.dense(h, w, bb)?;
                h = tape.relu(h);
                let (w, bb) = (tape.param(p, fc[1].w), tape.param(p, fc[1].b));
                h = tape.dense(h, w, bb)?;
                tape.reshape(h, &[n, 1, s, s])?
            }
            Layout::Focnn0 { a, b, head } => {
                let raw = raw_channel(tape, x, n, s)?;
                let h = conv_relu(tape, a, x)?;
                let mut h = tape.concat(&[h, raw])?;
                for c in b {
                    h = conv_relu(tape, c, h)?;
                }
                conv(tape, head, h)?
            }
        };
        Ok(tape.sigmoid(logits))
    }

    /// Probability maps for a batch of crops, without keeping the graph.
    pub fn predict(&self, crops: &[Grid<T>]) -> Result<Vec<Grid<T>>> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, crops)?;
        let s = self.crop_side();
        tape.value(y)
            .data
            .chunks(s * s)
            .map(|c| Grid::new(s, s, c.to_vec()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(ModelMeta {
            architecture: self.architecture,
            threshold_k: self.threshold_k,
        })?;
        save_checkpoint(path, meta, self.seed, self.step, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint::<T>(path)?;
        Self::from_parts(header, params, path)
    }

    fn from_parts(header: CheckpointHeader, params: ParamStore<T>, path: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(header.model)
            .map_err(|e| Error::format(path, format!("model header: {e}")))?;
        let mut model = Self::build(meta.architecture, header.seed)?;
        model
            .params
            .load_from(&params)
            .map_err(|e| Error::format(path, e.to_string()))?;
        model.threshold_k = meta.threshold_k;
        model.step = header.step;
        Ok(model)
    }
}

/// Channel 0 of the band stack is the unfiltered crop.
fn raw_channel<T: Scalar>(tape: &mut Tape<T>, x: Var, n: usize, s: usize) -> Result<Var> {
    let c = tape.value(x).shape[1];
    if c == 1 {
        return Ok(x);
    }
    // Pick the first plane of every item by viewing channels as rows.
    let rows = tape.reshape(x, &[n, 1, c * s, s])?;
    tape.crop(rows, 0, 0, s, s)
}

pub fn build_simple_cnn<T: Scalar>(crop_side: usize, seed: u64) -> Result<ModelHandle<T>> {
    ModelHandle::build(
        Architecture::Cnn(SimpleCnnConfig {
            crop_side,
            ..SimpleCnnConfig::default()
        }),
        seed,
    )
}

pub fn build_unet<T: Scalar>(cfg: UNetConfig, seed: u64) -> Result<ModelHandle<T>> {
    ModelHandle::build(Architecture::Unet(cfg), seed)
}

pub fn build_focnn<T: Scalar>(seed: u64) -> Result<ModelHandle<T>> {
    ModelHandle::build(Architecture::Focnn(FoCnnConfig::default()), seed)
}

pub fn build_focnn0<T: Scalar>(seed: u64) -> Result<ModelHandle<T>> {
    ModelHandle::build(Architecture::Focnn0(FoCnnConfig::default()), seed)
}
