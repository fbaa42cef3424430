use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingData;
use super::strong::{StrongSupervision, TripletSource};
use super::weak::{init_bags_weak, mil_label_inference, Bag, WeakSupervision};
use super::{Supervision, TrainConfig};
use crate::embed::{Branch, Checkpoint, ModelParams, Precision, Stream};
use crate::error::{Error, ErrorKind, Result};
use crate::losses::{relation_loss, sample_relation_pairs, squared_distance, triplet_loss_batch, FrameRef, Triplet};
use crate::math::{NodeId, RmsProp, Tape, Tensor};
use crate::rng::rng_for;

/// Which losses a step back-propagates. `Full` is the normal update; the
/// detached variants exist to check parameter routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Routing {
    Full,
    DetachRelation,
    DetachTriplet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_t: f64,
    /// `None` when the relation module is disabled.
    pub l_r: Option<f64>,
    /// `L_t + λ₁·L_r`.
    pub total: f64,
}

/// Concatenates two `N×…` tensors along the first axis.
fn cat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape("cat_rows", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(shape, data)
}

/// Forward pass of one mini-batch: `B×D` sketch and `2B×D` video
/// (positives then negatives) embeddings.
fn forward_batch(
    tape: &mut Tape,
    model: &ModelParams,
    data: &TrainingData,
    stream: Stream,
    triplets: &[Triplet],
) -> Result<(NodeId, NodeId)> {
    let b = triplets.len();
    let anchors: Vec<_> = triplets.iter().map(|t| t.anchor).collect();
    let items: Vec<FrameRef> = triplets
        .iter()
        .map(|t| t.positive)
        .chain(triplets.iter().map(|t| t.negative))
        .collect();
    let sketch_in = data.anchor_batch(stream, &anchors)?;
    let video_in = data.video_batch(stream, &items, model.config.flow_scale)?;
    let sketch_net = model.branch(stream, Branch::Sketch);
    let video_net = model.branch(stream, Branch::Positive);
    if std::ptr::eq(sketch_net, video_net) {
        // Shared weights: one pass over sketches and frames together.
        let x = tape.input(cat_rows(&sketch_in, &video_in)?);
        let e = sketch_net.forward(tape, &model.store, x)?;
        let s = tape.gather_rows(e, &(0..b).collect::<Vec<_>>())?;
        let v = tape.gather_rows(e, &(b..3 * b).collect::<Vec<_>>())?;
        Ok((s, v))
    } else {
        let xs = tape.input(sketch_in);
        let s = sketch_net.forward(tape, &model.store, xs)?;
        let xv = tape.input(video_in);
        let v = video_net.forward(tape, &model.store, xv)?;
        Ok((s, v))
    }
}

/// One optimisation step: triplet loss on the batch, relation loss on `P`
/// sampled pairs, a single backward pass and an RMSprop update.
///
/// The relation loss reads the embeddings through a gradient scale of
/// `λ₁`, so the CNN receives `∂(L_t + λ₁·L_r)` while the relation network
/// receives `∂L_r`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut ModelParams,
    optimizer: &RmsProp,
    data: &TrainingData,
    stream: Stream,
    source: &dyn TripletSource,
    config: &TrainConfig,
    triplets: &[Triplet],
    rng: &mut ChaCha8Rng,
    routing: Routing,
) -> Result<StepLosses> {
    let ids = model.stream_ids(stream);
    for &id in &ids {
        model.store.get_mut(id).zero_grad();
    }
    let mut tape = Tape::new();
    let (s, v) = forward_batch(&mut tape, model, data, stream, triplets)?;
    let b = triplets.len();
    let pos = tape.gather_rows(v, &(0..b).collect::<Vec<_>>())?;
    let neg = tape.gather_rows(v, &(b..2 * b).collect::<Vec<_>>())?;
    let l_t = triplet_loss_batch(&mut tape, s, pos, neg, config.margin)?;

    let l_r = if config.relation {
        let pairs = sample_relation_pairs(b, config.relation_pairs, rng, |a, video| {
            let t = &triplets[a];
            let item = match video {
                crate::losses::VideoRef::Positive(j) => triplets[j].positive,
                crate::losses::VideoRef::Negative(j) => triplets[j].negative,
            };
            source.is_match(data, stream, t.anchor, item)
        })?;
        let s_r = tape.scale_grad(s, config.lambda1);
        let v_r = tape.scale_grad(v, config.lambda1);
        Some(relation_loss(&mut tape, &model.store, model.relation(stream), s_r, v_r, &pairs)?)
    } else {
        None
    };

    let lt_value = tape.value(l_t).item()?;
    let lr_value = l_r.map(|n| tape.value(n).item()).transpose()?;
    let total = lt_value + config.lambda1 * lr_value.unwrap_or(0.0);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("{stream} loss (L_t {lt_value}, L_r {lr_value:?})")));
    }
    let objective = match (routing, l_r) {
        (Routing::Full, Some(r)) => tape.add(l_t, r)?,
        (Routing::DetachTriplet, Some(r)) => r,
        (Routing::DetachTriplet, None) => {
            return Err(Error::InvalidArgument("cannot detach L_t without a relation loss".into()))
        }
        _ => l_t,
    };
    tape.backward(objective, &mut model.store)?;
    let mut update = model.cnn_ids(stream);
    if config.relation {
        update.extend(model.relation_ids(stream));
    }
    optimizer.step_params(&mut model.store, &update)?;
    Ok(StepLosses {
        l_t: lt_value,
        l_r: lr_value,
        total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub stream: Stream,
    pub l_t: f64,
    pub l_r: Option<f64>,
    pub total: f64,
    pub wall_ms: u64,
}

/// Outcome of one MIL label-inference round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilRound {
    pub round: usize,
    pub flipped: usize,
    pub positives: usize,
    /// Share of surviving positives inside the true alignment interval.
    /// Measured against generator ground truth; never used for training.
    pub precision: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub epoch_mean_lt: Vec<f64>,
    pub mil_rounds: Vec<MilRound>,
    /// Final bags under weak supervision.
    pub bags: Option<Vec<Bag>>,
}

/// Where a run persists its state.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Rewritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub resume: bool,
    pub config_hash: String,
    pub precision: Precision,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LoopState {
    stream: Stream,
    supervision: Supervision,
    epoch: usize,
    iteration: u64,
    report: TrainReport,
    diagnostic: Option<String>,
}

/// Strong-supervision training of one stream.
pub fn train_stream(
    model: &mut ModelParams,
    data: &TrainingData,
    stream: Stream,
    config: &TrainConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainReport> {
    run(model, data, stream, Supervision::Strong, config, seed, options)
}

/// Multiple-instance training of one stream: `mil_rounds` phases of
/// `mil_epochs` epochs, each followed by label inference.
pub fn train_weak(
    model: &mut ModelParams,
    data: &TrainingData,
    stream: Stream,
    config: &TrainConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainReport> {
    run(model, data, stream, Supervision::Weak, config, seed, options)
}

fn append_log(path: &Path, rows: &[LogRow], fresh: bool) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str("iteration,stream,L_t,L_r,total,wall_ms\n");
    }
    for r in rows {
        let l_r = r.l_r.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration, r.stream, r.l_t, l_r, r.total, r.wall_ms
        ));
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn save_state(
    model: &ModelParams,
    stream: Stream,
    rng: &ChaCha8Rng,
    state: &LoopState,
    path: &Path,
    options: &TrainOptions,
) -> Result<()> {
    let json = serde_json::to_string(state).map_err(|e| Error::InvalidArgument(format!("state encoding: {e}")))?;
    let hash = if options.config_hash.is_empty() {
        "0".repeat(64)
    } else {
        options.config_hash.clone()
    };
    Checkpoint::capture(&hash, &model.store, &model.stream_ids(stream), rng, json).save(path, options.precision)
}

/// Reads a stream checkpoint into `model`, returning its trainer state JSON.
pub fn load_stream_checkpoint(model: &mut ModelParams, path: &Path, config_hash: Option<&str>) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if let Some(hash) = config_hash {
        if ck.config_hash != hash {
            return Err(Error::Config(format!(
                "checkpoint {} was written under config {}, current config is {hash}",
                path.display(),
                &ck.config_hash[..12.min(ck.config_hash.len())]
            )));
        }
    }
    ck.apply(&mut model.store)?;
    Ok(ck)
}

fn bag_distances(model: &ModelParams, data: &TrainingData, stream: Stream, bags: &[Bag]) -> Result<Vec<Vec<f64>>> {
    let sketch_net = model.branch(stream, Branch::Sketch);
    let video_net = model.branch(stream, Branch::Positive);
    let mut clip_cache: std::collections::HashMap<usize, Tensor> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(bags.len());
    for bag in bags {
        if !clip_cache.contains_key(&bag.clip) {
            let items: Vec<FrameRef> = (0..data.frames(bag.clip)?)
                .map(|frame| FrameRef { clip: bag.clip, frame })
                .collect();
            let input = data.video_batch(stream, &items, model.config.flow_scale)?;
            clip_cache.insert(bag.clip, video_net.embed(&model.store, &input)?);
        }
        let frames = &clip_cache[&bag.clip];
        let anchor = sketch_net.embed(&model.store, &data.anchor_batch(stream, &[bag.anchor])?)?;
        out.push(
            bag.instances
                .iter()
                .map(|&f| squared_distance(anchor.row(0), frames.row(f)))
                .collect(),
        );
    }
    Ok(out)
}

fn bag_precision(data: &TrainingData, bags: &[Bag]) -> Result<f64> {
    let (mut inside, mut total) = (0usize, 0usize);
    for bag in bags {
        let (lo, hi) = data.interval(bag.anchor)?;
        for f in bag.positives() {
            total += 1;
            if (lo..=hi).contains(&(f + 1)) {
                inside += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { inside as f64 / total as f64 })
}

fn run(
    model: &mut ModelParams,
    data: &TrainingData,
    stream: Stream,
    supervision: Supervision,
    config: &TrainConfig,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    if stream == Stream::Motion && !data.has_flows() {
        return Err(Error::InvalidArgument("motion training needs flows for every clip".into()));
    }
    let optimizer = RmsProp::new(config.lr, 0.9, 1e-8);
    let total_epochs = match supervision {
        Supervision::Strong => config.epochs,
        Supervision::Weak => config.mil_rounds * config.mil_epochs,
    };
    let mut rng = rng_for(seed, &format!("train.{stream}.{supervision}"));
    let mut state = LoopState {
        stream,
        supervision,
        epoch: 0,
        iteration: 0,
        report: TrainReport::default(),
        diagnostic: None,
    };
    let mut fresh_log = true;
    if options.resume {
        let path = options
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("resume requested without a checkpoint path".into()))?;
        let hash = (!options.config_hash.is_empty()).then_some(options.config_hash.as_str());
        let ck = load_stream_checkpoint(model, path, hash)?;
        let saved: LoopState = serde_json::from_str(&ck.state)
            .map_err(|e| Error::data(path, format!("trainer state: {e}")))?;
        if saved.stream != stream || saved.supervision != supervision {
            return Err(Error::Config(format!(
                "checkpoint holds {} / {} training, asked for {stream} / {supervision}",
                saved.stream, saved.supervision
            )));
        }
        if saved.diagnostic.is_some() {
            return Err(Error::Config(format!(
                "checkpoint {} was written after a numerical failure",
                path.display()
            )));
        }
        rng = ck.rng.restore();
        state = saved;
        fresh_log = false;
        log::info!("resuming {stream} training at epoch {}", state.epoch);
    }
    if supervision == Supervision::Weak && state.report.bags.is_none() {
        state.report.bags = Some(init_bags_weak(data)?);
    }

    let pages = data.pages();
    let per_epoch = (pages.len() * config.triplets_per_page).div_ceil(config.batch);
    while state.epoch < total_epochs {
        let source: Box<dyn TripletSource> = match &state.report.bags {
            Some(bags) => Box::new(WeakSupervision::new(bags.clone())?),
            None => Box::new(StrongSupervision),
        };
        let mut order = pages.clone();
        order.shuffle(&mut rng);
        let mut cursor = 0usize;
        let mut rows = Vec::with_capacity(per_epoch);
        let mut sum_lt = 0.0;
        for _ in 0..per_epoch {
            let started = Instant::now();
            let anchors: Vec<_> = (0..config.batch)
                .map(|k| order[(cursor + k) % order.len()])
                .collect();
            cursor += config.batch;
            let triplets = anchors
                .iter()
                .map(|&a| source.sample(data, stream, a, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let before = rng.clone();
            let step = train_step(
                model, &optimizer, data, stream, source.as_ref(), config, &triplets, &mut rng, Routing::Full,
            );
            let step = match step {
                Ok(s) => s,
                Err(e) if e.kind() == ErrorKind::Numerical => {
                    let msg = format!("iteration {}: {e}", state.iteration + 1);
                    if let Some(path) = &options.checkpoint {
                        state.diagnostic = Some(msg.clone());
                        save_state(model, stream, &before, &state, &path.with_extension("failed.ckpt"), options)?;
                    }
                    return Err(Error::Numerical(msg));
                }
                Err(e) => return Err(e),
            };
            state.iteration += 1;
            sum_lt += step.l_t;
            rows.push(LogRow {
                iteration: state.iteration,
                stream,
                l_t: step.l_t,
                l_r: step.l_r,
                total: step.total,
                wall_ms: started.elapsed().as_millis() as u64,
            });
        }
        state.epoch += 1;
        state.report.epoch_mean_lt.push(sum_lt / per_epoch as f64);
        log::info!(
            "{stream} epoch {}/{total_epochs}: mean L_t {:.4}",
            state.epoch,
            sum_lt / per_epoch as f64
        );
        if let Some(path) = &options.log {
            append_log(path, &rows, fresh_log)?;
            fresh_log = false;
        }
        state.report.rows.extend(rows);

        if supervision == Supervision::Weak && state.epoch % config.mil_epochs == 0 {
            let bags = state.report.bags.as_mut().expect("weak bags");
            let distances = bag_distances(model, data, stream, bags)?;
            let mut it = distances.into_iter();
            let flipped = mil_label_inference(bags, config.mil_threshold, |_| Ok(it.next().expect("one per bag")))?;
            let round = MilRound {
                round: state.epoch / config.mil_epochs,
                flipped,
                positives: bags.iter().map(Bag::positive_count).sum(),
                precision: bag_precision(data, bags)?,
            };
            log::info!(
                "{stream} MIL round {}: flipped {}, {} positives remain",
                round.round,
                round.flipped,
                round.positives
            );
            state.report.mil_rounds.push(round);
        }
        if let Some(path) = &options.checkpoint {
            save_state(model, stream, &rng, &state, path, options)?;
        }
    }
    Ok(state.report)
}
