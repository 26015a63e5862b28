//! Beam-prediction classifiers: architecture configs with complexity budgets,
//! forward and backward passes, Top-K inference and weight files.

pub mod layers;
pub mod optim;
pub mod train;

use base64::Engine;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSchema, UseCase};
use crate::error::{Error, Result};
use layers::{softmax_rows, Conv1d, Dense, Lstm, Param, Relu};

pub use layers::cross_entropy_loss;
pub use optim::{Adam, AdamConfig, StepLr};
pub use train::{train, train_model, EpochStats, TrainConfig, TrainReport};

const WEIGHTS_FORMAT: &str = "beampred-weights";
const WEIGHTS_VERSION: u32 = 1;
/// Upper bound on a serialized weights file.
pub const MAX_WEIGHTS_BYTES: usize = 1 << 20;

const SBP2_HIDDEN_CANDIDATES: [usize; 7] = [320, 256, 224, 192, 160, 128, 96];
const SBP2_PARAM_TARGET: usize = 135_000;
const TBP_CONV_FEATURES: usize = 384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Sbp1Dnn,
    Sbp2CnnDnn,
    TbpLstmCnn,
}

impl ModelFamily {
    pub fn for_use_case(use_case: UseCase) -> Self {
        match use_case {
            UseCase::Sbp1 => Self::Sbp1Dnn,
            UseCase::Sbp2 => Self::Sbp2CnnDnn,
            UseCase::Tbp => Self::TbpLstmCnn,
        }
    }

    /// Inclusive parameter range and MAC ceiling per inference.
    pub fn budget(self) -> (usize, usize, usize) {
        match self {
            Self::Sbp1Dnn | Self::Sbp2CnnDnn => (50_000, 150_000, 1_200_000),
            Self::TbpLstmCnn => (100_000, 200_000, 2_000_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Measured beams per instant.
    pub n_b: usize,
    /// Output classes (Set A size).
    pub n_a: usize,
    /// Observation window; 1 for spatial families.
    pub l_o: usize,
    /// Hidden dense widths, or the recurrent width for the temporal family.
    pub hidden: Vec<usize>,
    /// Convolution filters; 0 when the family has no convolution.
    pub conv_filters: usize,
    pub conv_kernel: usize,
}

impl ModelConfig {
    /// Default architecture of `family`, checked against its budget.
    pub fn new(family: ModelFamily, n_b: usize, n_a: usize, l_o: usize) -> Result<Self> {
        if n_b == 0 || n_a < 2 {
            return Err(Error::Config(format!("model needs n_b >= 1 and n_a >= 2, got {n_b}, {n_a}")));
        }
        let cfg = match family {
            ModelFamily::Sbp1Dnn => {
                Self { family, n_b, n_a, l_o: 1, hidden: vec![256, 160], conv_filters: 0, conv_kernel: 0 }
            }
            ModelFamily::Sbp2CnnDnn => {
                let base = Self { family, n_b, n_a, l_o: 1, hidden: vec![0], conv_filters: 16, conv_kernel: 3 };
                SBP2_HIDDEN_CANDIDATES
                    .iter()
                    .map(|&h| Self { hidden: vec![h], ..base.clone() })
                    .find(|c| c.param_count() <= SBP2_PARAM_TARGET)
                    .unwrap_or(Self { hidden: vec![*SBP2_HIDDEN_CANDIDATES.last().unwrap()], ..base })
            }
            ModelFamily::TbpLstmCnn => {
                if l_o == 0 {
                    return Err(Error::Config("temporal model needs l_o >= 1".into()));
                }
                let filters = (TBP_CONV_FEATURES as f64 / n_b as f64).round().max(1.0) as usize;
                Self { family, n_b, n_a, l_o, hidden: vec![64], conv_filters: filters, conv_kernel: 3 }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_schema(schema: &DatasetSchema) -> Result<Self> {
        Self::new(ModelFamily::for_use_case(schema.use_case), schema.n_b, schema.n_a, schema.l_o)
    }

    pub fn input_dim(&self) -> usize {
        match self.family {
            ModelFamily::Sbp1Dnn => 2 * self.n_b,
            ModelFamily::Sbp2CnnDnn => self.n_b,
            ModelFamily::TbpLstmCnn => self.l_o * self.n_b,
        }
    }

    /// Whether a dataset with `schema` can feed this model.
    pub fn accepts(&self, schema: &DatasetSchema) -> bool {
        ModelFamily::for_use_case(schema.use_case) == self.family
            && schema.input_len() == self.input_dim()
            && schema.n_a == self.n_a
    }

    /// `(params, MACs per inference)` of each weighted stage.
    fn stages(&self) -> Vec<(usize, usize)> {
        let dense = |i: usize, o: usize| (i * o + o, i * o);
        let (f, k) = (self.conv_filters, self.conv_kernel);
        match self.family {
            ModelFamily::Sbp1Dnn => {
                let mut widths = vec![self.input_dim()];
                widths.extend(&self.hidden);
                widths.push(self.n_a);
                widths.windows(2).map(|w| dense(w[0], w[1])).collect()
            }
            ModelFamily::Sbp2CnnDnn => {
                let h = self.hidden[0];
                vec![(k * f + f, self.n_b * k * f), dense(f * self.n_b, h), dense(h, self.n_a)]
            }
            ModelFamily::TbpLstmCnn => {
                let (h, d) = (self.hidden[0], f * self.n_b);
                vec![
                    (k * f + f, self.l_o * self.n_b * k * f),
                    (4 * h * (d + h + 1), self.l_o * 4 * h * (d + h)),
                    dense(h, self.n_a),
                ]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.stages().iter().map(|s| s.0).sum()
    }

    pub fn macs(&self) -> usize {
        self.stages().iter().map(|s| s.1).sum()
    }

    /// Weights file size bound: base64 of 4-byte floats plus a fixed margin
    /// for the JSON envelope and training curve.
    pub fn serialized_size_bound(&self) -> usize {
        self.param_count() * 4 * 4 / 3 + 64 * 1024
    }

    pub fn validate(&self) -> Result<()> {
        let shape_ok = match self.family {
            ModelFamily::Sbp1Dnn => !self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0),
            ModelFamily::Sbp2CnnDnn | ModelFamily::TbpLstmCnn => {
                self.hidden.len() == 1 && self.hidden[0] > 0 && self.conv_filters > 0 && self.conv_kernel % 2 == 1
            }
        };
        if !shape_ok {
            return Err(Error::Config(format!("malformed {:?} architecture", self.family)));
        }
        let (lo, hi, max_macs) = self.family.budget();
        let (p, m) = (self.param_count(), self.macs());
        if !(lo..=hi).contains(&p) {
            return Err(Error::Config(format!("{:?} has {p} parameters, outside [{lo}, {hi}]", self.family)));
        }
        if m > max_macs {
            return Err(Error::Config(format!("{:?} needs {m} MACs per inference, above {max_macs}", self.family)));
        }
        if self.serialized_size_bound() >= MAX_WEIGHTS_BYTES {
            return Err(Error::Config("weights would not fit in 1 MB".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu(Relu),
    Conv1d(Conv1d),
    Lstm(Lstm),
    /// Reflows `(rows, cols_in)` into `(rows * cols_in / cols_out, cols_out)`.
    Reshape { cols_in: usize, cols_out: usize },
}

fn reshape(x: Array2<f64>, cols: usize) -> Array2<f64> {
    let rows = x.len() / cols;
    x.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("divisible shape")
}

impl Layer {
    fn infer(&self, x: Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.infer(&x),
            Layer::Relu(l) => l.infer(&x),
            Layer::Conv1d(l) => l.infer(&x),
            Layer::Lstm(l) => l.infer(&x),
            Layer::Reshape { cols_out, .. } => reshape(x, *cols_out),
        }
    }

    fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
            Layer::Lstm(l) => l.forward(x),
            Layer::Reshape { cols_out, .. } => reshape(x, *cols_out),
        }
    }

    fn backward(&mut self, g: Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.backward(&g),
            Layer::Relu(l) => l.backward(&g),
            Layer::Conv1d(l) => l.backward(&g),
            Layer::Lstm(l) => l.backward(&g),
            Layer::Reshape { cols_in, .. } => reshape(g, *cols_in),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => vec![&l.w, &l.b],
            Layer::Conv1d(l) => vec![&l.w, &l.b],
            Layer::Lstm(l) => vec![&l.w, &l.u, &l.b],
            Layer::Relu(_) | Layer::Reshape { .. } => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => vec![&mut l.w, &mut l.b],
            Layer::Conv1d(l) => vec![&mut l.w, &mut l.b],
            Layer::Lstm(l) => vec![&mut l.w, &mut l.u, &mut l.b],
            Layer::Relu(_) | Layer::Reshape { .. } => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    /// Probability of each Set A beam.
    pub probs: Vec<f64>,
    /// Beam indices by descending probability.
    pub top_k: Vec<usize>,
}

/// The `k` most probable indices, ties to the lower index.
pub fn predict_top_k(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", probs.len())));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    let cmp = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

impl Model {
    /// Fresh seeded weights for `config`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut layers = Vec::new();
        match c.family {
            ModelFamily::Sbp1Dnn => {
                let mut width = c.input_dim();
                for &h in &c.hidden {
                    layers.push(Layer::Dense(Dense::new(&mut rng, width, h)));
                    layers.push(Layer::Relu(Relu::default()));
                    width = h;
                }
                layers.push(Layer::Dense(Dense::new(&mut rng, width, c.n_a)));
            }
            ModelFamily::Sbp2CnnDnn => {
                let (f, h) = (c.conv_filters, c.hidden[0]);
                layers.push(Layer::Conv1d(Conv1d::new(&mut rng, 1, c.n_b, c.conv_kernel, f)));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::Dense(Dense::new(&mut rng, f * c.n_b, h)));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::Dense(Dense::new(&mut rng, h, c.n_a)));
            }
            ModelFamily::TbpLstmCnn => {
                let (f, h) = (c.conv_filters, c.hidden[0]);
                let d = f * c.n_b;
                layers.push(Layer::Reshape { cols_in: c.l_o * c.n_b, cols_out: c.n_b });
                layers.push(Layer::Conv1d(Conv1d::new(&mut rng, 1, c.n_b, c.conv_kernel, f)));
                layers.push(Layer::Relu(Relu::default()));
                layers.push(Layer::Reshape { cols_in: d, cols_out: c.l_o * d });
                layers.push(Layer::Lstm(Lstm::new(&mut rng, d, h, c.l_o)));
                layers.push(Layer::Dense(Dense::new(&mut rng, h, c.n_a)));
            }
        }
        let model = Self { config, seed, layers };
        debug_assert_eq!(model.param_count(), model.config.param_count());
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.config.input_dim(), actual: x.ncols() });
        }
        Ok(())
    }

    /// Pre-softmax scores for a batch of inputs.
    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.layers.iter().fold(x.clone(), |a, l| l.infer(a)))
    }

    /// Class probabilities for a batch of inputs.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    pub fn forward(&self, input: &[f64], k: usize) -> Result<PredictionOutput> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        let probs = self.predict_proba(&x)?.row(0).to_vec();
        let top_k = predict_top_k(&probs, k)?;
        Ok(PredictionOutput { probs, top_k })
    }

    /// Training forward pass that keeps the activations for `backward`.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(softmax_rows(&self.layers.iter_mut().fold(x.clone(), |a, l| l.forward(a))))
    }

    /// Accumulates parameter gradients from the gradient of the loss with
    /// respect to the logits.
    pub fn backward(&mut self, grad_logits: Array2<f64>) {
        self.layers.iter_mut().rev().fold(grad_logits, |g, l| l.backward(g));
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Rounds every weight to single precision, the storage precision.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorDoc {
    shape: [usize; 2],
    /// Little-endian `f32`, base64.
    data: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsDoc {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    curve: Vec<EpochStats>,
    tensors: Vec<TensorDoc>,
}

impl Model {
    pub fn to_bytes(&self, curve: &[EpochStats]) -> Result<Vec<u8>> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let tensors = self
            .params()
            .iter()
            .map(|p| {
                let bytes: Vec<u8> = p.value.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
                TensorDoc { shape: [p.value.nrows(), p.value.ncols()], data: b64.encode(bytes) }
            })
            .collect();
        let doc = WeightsDoc {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            curve: curve.to_vec(),
            tensors,
        };
        Ok(serde_json::to_vec(&doc)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Vec<EpochStats>)> {
        let doc: WeightsDoc = serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(format!("weights file: {e}")))?;
        if doc.format != WEIGHTS_FORMAT || doc.version != WEIGHTS_VERSION {
            return Err(Error::Corrupt(format!("unsupported weights format {} v{}", doc.format, doc.version)));
        }
        let mut model = Model::new(doc.config, doc.seed)?;
        let mut params = model.params_mut();
        if params.len() != doc.tensors.len() {
            return Err(Error::Corrupt(format!("expected {} tensors, found {}", params.len(), doc.tensors.len())));
        }
        let b64 = base64::engine::general_purpose::STANDARD;
        for (p, t) in params.iter_mut().zip(doc.tensors) {
            let shape = (p.value.nrows(), p.value.ncols());
            if t.shape != [shape.0, shape.1] {
                return Err(Error::Corrupt(format!("tensor shape {:?} does not match {shape:?}", t.shape)));
            }
            let bytes = b64.decode(t.data).map_err(|e| Error::Corrupt(format!("tensor data: {e}")))?;
            if bytes.len() != shape.0 * shape.1 * 4 {
                return Err(Error::Corrupt("tensor data has the wrong length".into()));
            }
            let vals: Vec<f64> =
                bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            p.value = Array2::from_shape_vec(shape, vals).expect("checked length");
        }
        if !model.is_finite() {
            return Err(Error::Numeric("weights file holds non-finite values".into()));
        }
        Ok((model, doc.curve))
    }

    pub fn save(&self, path: &std::path::Path, curve: &[EpochStats]) -> Result<()> {
        std::fs::write(path, self.to_bytes(curve)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, Vec<EpochStats>)> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
