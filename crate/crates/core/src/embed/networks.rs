use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::rng::rng_for;

/// One `(out_channels, kernel, stride)` convolution; padding is `kernel / 2`.
pub type ConvSpec = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub embedding_dim: usize,
    /// Relation head widths after the `2·embedding_dim` input, ending in one score.
    pub relation_hidden: Vec<usize>,
    /// Flow values are divided by this and clamped to `[-1, 1]`.
    pub flow_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            convs: vec![(16, 3, 2), (32, 3, 2), (64, 3, 2)],
            hidden: 512,
            embedding_dim: 256,
            relation_hidden: vec![128, 32],
            flow_scale: 8.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() || self.convs.iter().any(|(c, k, s)| *c == 0 || *k == 0 || *s == 0) {
            return Err(Error::Config("convolutions need positive channels, kernel and stride".into()));
        }
        if self.hidden == 0 || self.embedding_dim == 0 || self.relation_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.flow_scale > 0.0) {
            return Err(Error::Config("flow scale must be positive".into()));
        }
        Ok(())
    }
}

/// Input depth and layer sizes of one embedding CNN.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub embedding_dim: usize,
}

/// Uniform fan-in scaled initialisation for ReLU networks.
fn kaiming(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), kaiming(rng, &[d_out, d_in], d_in)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![d_out])),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

/// conv–relu blocks, global average pooling and a two-layer head.
#[derive(Clone, Debug)]
pub struct StreamNet {
    pub name: String,
    pub config: StreamConfig,
    convs: Vec<Conv>,
    fc1: Dense,
    fc2: Dense,
    ids: Vec<ParamId>,
}

impl StreamNet {
    pub fn new(store: &mut ParamStore, name: &str, config: StreamConfig, rng: &mut impl Rng) -> Self {
        let first = store.len();
        let mut convs = Vec::with_capacity(config.convs.len());
        let mut c_in = config.input_channels;
        for (i, (c_out, k, stride)) in config.convs.iter().enumerate() {
            let fan_in = c_in * k * k;
            convs.push(Conv {
                kernel: store.add(format!("{name}.conv{i}.kernel"), kaiming(rng, &[*c_out, c_in, *k, *k], fan_in)),
                bias: store.add(format!("{name}.conv{i}.bias"), Tensor::zeros(vec![*c_out])),
                stride: *stride,
                padding: k / 2,
            });
            c_in = *c_out;
        }
        let fc1 = Dense::new(store, &format!("{name}.fc1"), c_in, config.hidden, rng);
        let fc2 = Dense::new(store, &format!("{name}.fc2"), config.hidden, config.embedding_dim, rng);
        let ids = (first..store.len()).map(ParamId).collect();
        Self {
            name: name.to_string(),
            config,
            convs,
            fc1,
            fc2,
            ids,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// `N×C×H×W → N×embedding_dim`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.input_channels {
            return Err(Error::shape(
                "embed",
                format!(
                    "{} expects N×{}×H×W input, got {shape:?}",
                    self.name, self.config.input_channels
                ),
            ));
        }
        let mut h = x;
        for c in &self.convs {
            let k = tape.param(store, c.kernel);
            let b = tape.param(store, c.bias);
            h = tape.conv2d(h, k, c.stride, c.padding)?;
            h = tape.channel_bias(h, b)?;
            h = tape.relu(h);
        }
        h = tape.global_avg_pool(h)?;
        h = self.fc1.forward(tape, store, h)?;
        h = tape.relu(h);
        self.fc2.forward(tape, store, h)
    }

    /// Inference on a batch `N×C×H×W`, evaluated in chunks.
    pub fn embed(&self, store: &ParamStore, batch: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let shape = batch.shape();
        if shape.len() != 4 {
            return Err(Error::shape("embed", format!("expected N×C×H×W, got {shape:?}")));
        }
        let per = shape[1] * shape[2] * shape[3];
        let mut out = Vec::with_capacity(shape[0] * self.config.embedding_dim);
        for start in (0..shape[0]).step_by(CHUNK) {
            let n = CHUNK.min(shape[0] - start);
            let chunk = Tensor::new(
                vec![n, shape[1], shape[2], shape[3]],
                batch.data()[start * per..(start + n) * per].to_vec(),
            )?;
            let mut tape = Tape::new();
            let x = tape.input(chunk);
            let e = self.forward(&mut tape, store, x)?;
            out.extend_from_slice(tape.value(e).data());
        }
        let e = Tensor::new(vec![shape[0], self.config.embedding_dim], out)?;
        e.check_finite(&self.name)?;
        Ok(e)
    }
}

/// Scores concatenated sketch ⧺ video embeddings.
#[derive(Clone, Debug)]
pub struct RelationNet {
    pub name: String,
    layers: Vec<Dense>,
    input_dim: usize,
    ids: Vec<ParamId>,
}

impl RelationNet {
    pub fn new(store: &mut ParamStore, name: &str, embedding_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let first = store.len();
        let input_dim = 2 * embedding_dim;
        let mut d_in = input_dim;
        let mut layers = Vec::new();
        for (i, d_out) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            layers.push(Dense::new(store, &format!("{name}.fc{i}"), d_in, *d_out, rng));
            d_in = *d_out;
        }
        let ids = (first..store.len()).map(ParamId).collect();
        Self {
            name: name.to_string(),
            layers,
            input_dim,
            ids,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `P×(2·D) → P` scores.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, pairs: NodeId) -> Result<NodeId> {
        let shape = tape.value(pairs).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::shape(
                "relation_scores",
                format!("expected P×{} pairs, got {shape:?}", self.input_dim),
            ));
        }
        let mut h = pairs;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        tape.reshape(h, vec![shape[0]])
    }

    pub fn scores(&self, store: &ParamStore, pairs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(pairs.clone());
        let s = self.forward(&mut tape, store, x)?;
        Ok(tape.value(s).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Appearance,
    Motion,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Appearance, Stream::Motion];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Appearance => "appearance",
            Stream::Motion => "motion",
        }
    }
}

impl std::fmt::Display for Stream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appearance" | "app" => Ok(Stream::Appearance),
            "motion" | "mo" => Ok(Stream::Motion),
            _ => Err(Error::Config(format!("unknown stream {s:?}"))),
        }
    }
}

/// Inputs that pass through a stream's networks during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Sketch,
    Positive,
    Negative,
}

/// All trainable parameters: the shared appearance CNN, the two motion CNNs
/// (sketch and flow inputs) and one relation network per stream.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    appearance: StreamNet,
    motion_sketch: StreamNet,
    motion_flow: StreamNet,
    relation_appearance: RelationNet,
    relation_motion: RelationNet,
}

impl ModelParams {
    /// `flow_channels` is `2L`.
    pub fn new(config: ModelConfig, flow_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let stream = |c| StreamConfig {
            input_channels: c,
            convs: config.convs.clone(),
            hidden: config.hidden,
            embedding_dim: config.embedding_dim,
        };
        let mut rng = rng_for(seed, "init.appearance");
        let appearance = StreamNet::new(&mut store, "appearance", stream(3), &mut rng);
        let relation_appearance =
            RelationNet::new(&mut store, "relation_appearance", config.embedding_dim, &config.relation_hidden, &mut rng);
        let mut rng = rng_for(seed, "init.motion");
        let motion_sketch = StreamNet::new(&mut store, "motion_sketch", stream(3), &mut rng);
        let motion_flow = StreamNet::new(&mut store, "motion_flow", stream(flow_channels), &mut rng);
        let relation_motion =
            RelationNet::new(&mut store, "relation_motion", config.embedding_dim, &config.relation_hidden, &mut rng);
        Ok(Self {
            config,
            store,
            appearance,
            motion_sketch,
            motion_flow,
            relation_appearance,
            relation_motion,
        })
    }

    /// The network a branch of a stream runs through. Appearance branches all
    /// return the same network; motion positives and negatives share the flow network.
    pub fn branch(&self, stream: Stream, branch: Branch) -> &StreamNet {
        match (stream, branch) {
            (Stream::Appearance, _) => &self.appearance,
            (Stream::Motion, Branch::Sketch) => &self.motion_sketch,
            (Stream::Motion, _) => &self.motion_flow,
        }
    }

    pub fn relation(&self, stream: Stream) -> &RelationNet {
        match stream {
            Stream::Appearance => &self.relation_appearance,
            Stream::Motion => &self.relation_motion,
        }
    }

    /// Parameters of the stream's embedding CNN(s).
    pub fn cnn_ids(&self, stream: Stream) -> Vec<ParamId> {
        match stream {
            Stream::Appearance => self.appearance.param_ids().to_vec(),
            Stream::Motion => {
                let mut ids = self.motion_sketch.param_ids().to_vec();
                ids.extend_from_slice(self.motion_flow.param_ids());
                ids
            }
        }
    }

    pub fn relation_ids(&self, stream: Stream) -> Vec<ParamId> {
        self.relation(stream).param_ids().to_vec()
    }

    pub fn stream_ids(&self, stream: Stream) -> Vec<ParamId> {
        let mut ids = self.cnn_ids(stream);
        ids.extend(self.relation_ids(stream));
        ids
    }

    pub fn flow_channels(&self) -> usize {
        self.motion_flow.config.input_channels
    }

    /// Single-page sketch-appearance embedding from a `1×H×W` raster.
    pub fn embed_appearance_sketch(&self, raster: &Tensor) -> Result<Tensor> {
        self.appearance.embed(&self.store, &sketch_batch(&[raster])?)
    }

    /// Appearance embeddings of `3×H×W` frames.
    pub fn embed_frames(&self, frames: &[&Tensor]) -> Result<Tensor> {
        self.appearance.embed(&self.store, &frame_batch(frames)?)
    }

    pub fn embed_motion_sketch(&self, rasters: &[&Tensor]) -> Result<Tensor> {
        self.motion_sketch.embed(&self.store, &sketch_batch(rasters)?)
    }

    pub fn embed_appearance_sketches(&self, rasters: &[&Tensor]) -> Result<Tensor> {
        self.appearance.embed(&self.store, &sketch_batch(rasters)?)
    }

    pub fn embed_flow(&self, stacks: &[&Tensor]) -> Result<Tensor> {
        for s in stacks {
            if s.shape().first() != Some(&self.flow_channels()) {
                return Err(Error::shape(
                    "embed_flow",
                    format!("expected {} channels, got {:?}", self.flow_channels(), s.shape()),
                ));
            }
        }
        self.motion_flow
            .embed(&self.store, &flow_batch(stacks, self.config.flow_scale)?)
    }

    /// Relation scores for `P×2D` concatenated pairs.
    pub fn relation_scores(&self, stream: Stream, pairs: &Tensor) -> Result<Tensor> {
        self.relation(stream).scores(&self.store, pairs)
    }
}

/// Stacks `1×H×W` rasters replicated to three channels into `N×3×H×W`.
pub fn sketch_batch(rasters: &[&Tensor]) -> Result<Tensor> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty sketch batch".into()))?;
    let (h, w) = match first.shape() {
        [1, h, w] => (*h, *w),
        s => return Err(Error::shape("sketch_batch", format!("expected 1×H×W, got {s:?}"))),
    };
    let mut data = Vec::with_capacity(rasters.len() * 3 * h * w);
    for r in rasters {
        if r.shape() != [1, h, w] {
            return Err(Error::shape("sketch_batch", format!("mixed raster shapes {:?}", r.shape())));
        }
        for _ in 0..3 {
            data.extend_from_slice(r.data());
        }
    }
    center_planes(&mut data, h * w);
    Tensor::new(vec![rasters.len(), 3, h, w], data)
}

/// Stacks `3×H×W` frames into `N×3×H×W`.
pub fn frame_batch(frames: &[&Tensor]) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty frame batch".into()))?;
    if first.ndim() != 3 || first.shape()[0] != 3 {
        return Err(Error::shape("frame_batch", format!("expected 3×H×W, got {:?}", first.shape())));
    }
    let t = Tensor::stack(frames)?;
    let shape = t.shape().to_vec();
    let mut data = t.into_data();
    center_planes(&mut data, shape[2] * shape[3]);
    Tensor::new(shape, data)
}

/// Stacks `2L×H×W` flow stacks, scaled by `1/scale` and clamped to `[-1, 1]`.
pub fn flow_batch(stacks: &[&Tensor], scale: f64) -> Result<Tensor> {
    let t = Tensor::stack(stacks)?;
    let shape = t.shape().to_vec();
    let data = t.into_data().into_iter().map(|v| (v / scale).clamp(-1.0, 1.0)).collect();
    Tensor::new(shape, data)
}

/// Subtracts the mean of every `plane`-sized channel.
fn center_planes(data: &mut [f64], plane: usize) {
    for ch in data.chunks_mut(plane) {
        let mean = ch.iter().sum::<f64>() / plane as f64;
        ch.iter_mut().for_each(|v| *v -= mean);
    }
}
