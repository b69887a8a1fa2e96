//! The four sequence classifiers over T x F masked inputs, their shared
//! parameter handling, and the TRJM checkpoint container.

mod cnn1d;
mod lstm;
mod tcn;
mod transformer;

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, NormStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Transformer,
    Lstm,
    Cnn1d,
    Tcn,
}

impl Arch {
    pub fn parse(s: &str) -> Option<Arch> {
        match s {
            "transformer" => Some(Arch::Transformer),
            "lstm" => Some(Arch::Lstm),
            "cnn1d" | "cnn" => Some(Arch::Cnn1d),
            "tcn" => Some(Arch::Tcn),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arch::Transformer => "transformer",
            Arch::Lstm => "lstm",
            Arch::Cnn1d => "cnn1d",
            Arch::Tcn => "tcn",
        }
    }
}

/// Architecture hyperparameters. Defaults reproduce the stated baseline
/// shapes (LSTM 64x2; CNN branches 3/5/7 with 64 filters and 8 norm
/// groups; TCN 4 blocks, 64 channels, kernel 3, dilations 1,2,4,8,
/// temporal dropout 0.2); transformer width/depth are our defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub use_gelu: bool,
    pub use_positional_encoding: bool,
    pub hidden: usize,
    pub channels: usize,
    pub tcn_dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch, input_dim: usize, seq_len: usize) -> Self {
        ModelConfig {
            arch,
            input_dim,
            seq_len,
            num_classes: 2,
            dropout: 0.1,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 256,
            use_gelu: true,
            use_positional_encoding: true,
            hidden: 64,
            channels: 64,
            tcn_dropout: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.channels % 8 != 0 {
            return Err(Error::Config("channels must be divisible by 8 groups".into()));
        }
        Ok(())
    }
}

/// Ordered named parameter tensors. Order is the construction order and is
/// preserved through checkpoints, so loads are bit-exact.
#[derive(Debug, Clone)]
pub struct ParamSet<R> {
    pub entries: Vec<(String, Tensor<R>)>,
}

impl<R: Real> ParamSet<R> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> &Tensor<R> {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter named `{name}`"))
            .1
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamSet<S> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }
}

impl<R: Real> Default for ParamSet<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter vars on a tape, for one forward/backward pass.
pub struct ParamVars {
    entries: Vec<(String, Var)>,
}

impl ParamVars {
    /// Assemble from externally created vars (finite-difference checking).
    pub fn from_entries(entries: Vec<(String, Var)>) -> Self {
        ParamVars { entries }
    }

    pub fn get(&self, name: &str) -> Var {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no parameter var named `{name}`"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Deterministic fan-in-scaled uniform initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<R: Real>(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<R> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| R::from_f64(self.rng.gen_range(-bound..bound)))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn zeros<R: Real>(&mut self, shape: Vec<usize>) -> Tensor<R> {
        Tensor::zeros(shape)
    }

    pub fn ones<R: Real>(&mut self, shape: Vec<usize>) -> Tensor<R> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![R::one(); n])
    }
}

#[derive(Debug, Clone)]
pub struct Model<R> {
    pub config: ModelConfig,
    pub params: ParamSet<R>,
}

impl<R: Real> Model<R> {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Model<R>> {
        config.validate()?;
        let mut init = Init::new(config.seed);
        let params = match config.arch {
            Arch::Transformer => transformer::init_params(&config, &mut init),
            Arch::Lstm => lstm::init_params(&config, &mut init),
            Arch::Cnn1d => cnn1d::init_params(&config, &mut init),
            Arch::Tcn => tcn::init_params(&config, &mut init),
        };
        Ok(Model { config, params })
    }

    pub fn leaf_params(&self, tape: &mut Tape<R>) -> ParamVars {
        ParamVars {
            entries: self
                .params
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone())))
                .collect(),
        }
    }

    /// Build the forward graph for one sample on an existing tape.
    /// `x` is the T x F feature matrix; padded rows are zeroed internally,
    /// so padded-slot content can never reach the logits.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<R>,
        pvars: &ParamVars,
        x: &Tensor<R>,
        obs_mask: &[bool],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Var {
        assert_eq!(x.shape, vec![self.config.seq_len, self.config.input_dim]);
        assert_eq!(obs_mask.len(), self.config.seq_len);
        let x = zero_padded_rows(x, obs_mask);
        match self.config.arch {
            Arch::Transformer => {
                transformer::forward(&self.config, tape, pvars, &x, obs_mask, train, rng)
            }
            Arch::Lstm => lstm::forward(&self.config, tape, pvars, &x, obs_mask, train, rng),
            Arch::Cnn1d => cnn1d::forward(&self.config, tape, pvars, &x, obs_mask, train, rng),
            Arch::Tcn => tcn::forward(&self.config, tape, pvars, &x, obs_mask, train, rng),
        }
    }

    /// Inference convenience: logits for one sample on a fresh tape.
    pub fn logits(&self, x: &Tensor<R>, obs_mask: &[bool]) -> Vec<f64> {
        let mut tape = Tape::new();
        let pvars = self.leaf_params(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_on_tape(&mut tape, &pvars, x, obs_mask, false, &mut rng);
        tape.value(out).to_f64_vec()
    }

    /// Softmax probabilities for one sample.
    pub fn predict_probs(&self, x: &Tensor<R>, obs_mask: &[bool]) -> Vec<f64> {
        let logits = self.logits(x, obs_mask);
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

/// T x F -> F x T for the convolutional models.
pub(crate) fn transpose<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![R::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn zero_padded_rows<R: Real>(x: &Tensor<R>, obs_mask: &[bool]) -> Tensor<R> {
    let (t, f) = (x.rows(), x.cols());
    let mut out = x.clone();
    for i in 0..t {
        if !obs_mask[i] {
            for j in 0..f {
                out.data[i * f + j] = R::zero();
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// TRJM checkpoint container.

const TRJM_MAGIC: &[u8; 4] = b"TRJM";
const TRJM_VERSION: u32 = 1;
const MAX_META: usize = 1 << 20;
const MAX_NAME: usize = 1 << 10;
const MAX_DIMS: usize = 4;
const MAX_PARAM_VALUES: usize = 1 << 26;

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub norm_stats: Option<NormStats>,
    /// Class index -> species name.
    pub classes: Vec<String>,
    pub params: ParamSet<f32>,
}

fn meta_text(config: &ModelConfig, norm: &Option<NormStats>, classes: &[String]) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
    kv("arch", config.arch.label().into());
    kv("input_dim", config.input_dim.to_string());
    kv("seq_len", config.seq_len.to_string());
    kv("num_classes", config.num_classes.to_string());
    kv("dropout", format!("{:?}", config.dropout));
    kv("embed_dim", config.embed_dim.to_string());
    kv("layers", config.layers.to_string());
    kv("heads", config.heads.to_string());
    kv("ff_dim", config.ff_dim.to_string());
    kv("use_gelu", config.use_gelu.to_string());
    kv("use_positional_encoding", config.use_positional_encoding.to_string());
    kv("hidden", config.hidden.to_string());
    kv("channels", config.channels.to_string());
    kv("tcn_dropout", format!("{:?}", config.tcn_dropout));
    kv("seed", config.seed.to_string());
    if !classes.is_empty() {
        kv("classes", classes.join(","));
    }
    if let Some(n) = norm {
        kv("norm.schema", n.schema.label().into());
        kv(
            "norm.mean",
            n.mean.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        );
        kv(
            "norm.std",
            n.std.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        );
    }
    s
}

fn parse_meta(text: &str) -> Result<(ModelConfig, Option<NormStats>, Vec<String>)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("bad metadata line `{line}`")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| Error::Schema(format!("metadata missing key `{k}`")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Schema(format!("bad integer for `{k}`")))
    };
    let parse_f64 = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Schema(format!("bad float for `{k}`")))
    };
    let arch_name = get("arch")?;
    let arch = Arch::parse(arch_name)
        .ok_or_else(|| Error::Schema(format!("unknown arch `{arch_name}`")))?;
    let config = ModelConfig {
        arch,
        input_dim: parse_usize("input_dim")?,
        seq_len: parse_usize("seq_len")?,
        num_classes: parse_usize("num_classes")?,
        dropout: parse_f64("dropout")?,
        embed_dim: parse_usize("embed_dim")?,
        layers: parse_usize("layers")?,
        heads: parse_usize("heads")?,
        ff_dim: parse_usize("ff_dim")?,
        use_gelu: get("use_gelu")? == "true",
        use_positional_encoding: get("use_positional_encoding")? == "true",
        hidden: parse_usize("hidden")?,
        channels: parse_usize("channels")?,
        tcn_dropout: parse_f64("tcn_dropout")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Schema("bad seed".into()))?,
    };
    let norm = if let Some(schema) = map.get("norm.schema") {
        let schema = FeatureSchema::parse(schema)
            .ok_or_else(|| Error::Schema(format!("unknown norm schema `{schema}`")))?;
        let parse_list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Schema(format!("bad float list in `{k}`")))
                })
                .collect()
        };
        let mean = parse_list("norm.mean")?;
        let std = parse_list("norm.std")?;
        if mean.len() != schema.ncols() || std.len() != schema.ncols() {
            return Err(Error::Schema("norm stats length mismatch".into()));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Schema("non-positive std in norm stats".into()));
        }
        Some(NormStats { schema, mean, std })
    } else {
        None
    };
    let classes: Vec<String> = match map.get("classes") {
        Some(v) => v.split(',').map(|s| s.to_string()).collect(),
        None => Vec::new(),
    };
    if !classes.is_empty() && classes.len() != config.num_classes {
        return Err(Error::Schema(format!(
            "{} class names for {} classes",
            classes.len(),
            config.num_classes
        )));
    }
    Ok((config, norm, classes))
}

pub fn save_checkpoint<W: Write>(w: &mut W, ckpt: &ModelCheckpoint) -> Result<()> {
    if ckpt.classes.iter().any(|c| c.contains(',') || c.contains('\n')) {
        return Err(Error::Schema(
            "class names must not contain commas or newlines".into(),
        ));
    }
    w.write_all(TRJM_MAGIC)?;
    w.write_all(&TRJM_VERSION.to_le_bytes())?;
    let meta = meta_text(&ckpt.config, &ckpt.norm_stats, &ckpt.classes);
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(ckpt.params.entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in &ckpt.params.entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes())?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Schema("truncated checkpoint".into()))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<ModelCheckpoint> {
    let magic = read_exact(r, 4)?;
    if magic != TRJM_MAGIC {
        return Err(Error::Schema("bad magic: not a TRJM checkpoint".into()));
    }
    let version = read_u32(r)?;
    if version != TRJM_VERSION {
        return Err(Error::Schema(format!("unsupported TRJM version {version}")));
    }
    let meta_len = read_u32(r)? as usize;
    if meta_len > MAX_META {
        return Err(Error::Schema("metadata block too large".into()));
    }
    let meta = String::from_utf8(read_exact(r, meta_len)?)
        .map_err(|_| Error::Schema("invalid utf-8 in metadata".into()))?;
    let (config, norm_stats, classes) = parse_meta(&meta)?;
    config.validate()?;

    let count = read_u32(r)? as usize;
    if count > 4096 {
        return Err(Error::Schema("implausible parameter count".into()));
    }
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > MAX_NAME {
            return Err(Error::Schema("parameter name too long".into()));
        }
        let name = String::from_utf8(read_exact(r, name_len)?)
            .map_err(|_| Error::Schema("invalid utf-8 in parameter name".into()))?;
        let ndims = read_u32(r)? as usize;
        if ndims == 0 || ndims > MAX_DIMS {
            return Err(Error::Schema(format!("bad dim count {ndims}")));
        }
        let mut shape = Vec::with_capacity(ndims);
        let mut numel = 1usize;
        for _ in 0..ndims {
            let d = read_u32(r)? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Schema("shape overflow".into()))?;
            shape.push(d);
        }
        if numel > MAX_PARAM_VALUES {
            return Err(Error::Schema("parameter tensor too large".into()));
        }
        let raw = read_exact(r, numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Schema("non-finite parameter value".into()));
            }
            data.push(v);
        }
        params.entries.push((name, Tensor::new(shape, data)));
    }

    // The parameter list must exactly match what the config would build.
    let reference: Model<f32> = Model::init(config.clone())?;
    if reference.params.entries.len() != params.entries.len() {
        return Err(Error::Schema("parameter list does not match architecture".into()));
    }
    for ((n1, t1), (n2, t2)) in reference.params.entries.iter().zip(&params.entries) {
        if n1 != n2 || t1.shape != t2.shape {
            return Err(Error::Schema(format!(
                "parameter `{n2}` does not match architecture (expected `{n1}` {:?}, got {:?})",
                t1.shape, t2.shape
            )));
        }
    }
    Ok(ModelCheckpoint {
        config,
        norm_stats,
        classes,
        params,
    })
}

impl ModelCheckpoint {
    pub fn to_model(&self) -> Model<f32> {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }
}
