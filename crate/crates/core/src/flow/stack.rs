use std::thread;

use super::tvl1::{tvl1_flow, FlowField, FlowParams};
use crate::error::{Error, Result};
use crate::math::Tensor;
use crate::synth::VideoClip;

/// `2L` stacked flow channels `[u₁, v₁, …, u_L, v_L]` starting at a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStack {
    pub channels: Tensor,
    /// 0-based index of the first frame.
    pub start_frame: usize,
}

impl FlowStack {
    pub fn len(&self) -> usize {
        self.channels.shape()[0] / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn round_f32(f: FlowField) -> FlowField {
    let round = |t: Tensor| {
        let shape = t.shape().to_vec();
        Tensor::from_parts(shape, t.into_data().into_iter().map(|v| f64::from(v as f32)).collect())
    };
    FlowField {
        u: round(f.u),
        v: round(f.v),
    }
}

/// Flow between every pair of consecutive frames, rounded to f32 so cached
/// and fresh values agree bitwise. Pairs are spread over available cores.
pub fn consecutive_flows(clip: &VideoClip, params: &FlowParams) -> Result<Vec<FlowField>> {
    params.validate()?;
    let pairs = clip.len().saturating_sub(1);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(pairs.max(1));
    let mut results: Vec<Option<Result<FlowField>>> = (0..pairs).map(|_| None).collect();
    thread::scope(|s| {
        for (w, chunk) in results.chunks_mut(pairs.div_ceil(workers).max(1)).enumerate() {
            let base = w * pairs.div_ceil(workers).max(1);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let i = base + k;
                    *slot = Some(tvl1_flow(&clip.frames[i], &clip.frames[i + 1], params).map(round_f32));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every pair computed")).collect()
}

/// Builds the stack starting at 0-based frame `start` from precomputed
/// consecutive flows.
pub fn stack_from_pairs(pairs: &[FlowField], start: usize, l: usize) -> Result<FlowStack> {
    if l == 0 {
        return Err(Error::InvalidArgument("flow stack length must be positive".into()));
    }
    if start + l > pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "stack of {l} flows from frame {start} needs {} frames, clip has {}",
            start + l + 1,
            pairs.len() + 1
        )));
    }
    let (h, w) = (pairs[0].height(), pairs[0].width());
    let mut data = Vec::with_capacity(2 * l * h * w);
    for f in &pairs[start..start + l] {
        data.extend_from_slice(f.u.data());
        data.extend_from_slice(f.v.data());
    }
    Ok(FlowStack {
        channels: Tensor::from_parts(vec![2 * l, h, w], data),
        start_frame: start,
    })
}

/// Flow stack of `l` consecutive pairs starting at 0-based frame `start`.
pub fn stack_flows(clip: &VideoClip, start: usize, l: usize, params: &FlowParams) -> Result<FlowStack> {
    if l == 0 || start + l >= clip.len() {
        return Err(Error::InvalidArgument(format!(
            "stack of {l} flows from frame {start} needs {} frames, clip has {}",
            start + l + 1,
            clip.len()
        )));
    }
    let pairs: Result<Vec<FlowField>> = (start..start + l)
        .map(|i| tvl1_flow(&clip.frames[i], &clip.frames[i + 1], params).map(round_f32))
        .collect();
    let pairs = pairs?;
    let mut out = stack_from_pairs(&pairs, 0, l)?;
    out.start_frame = start;
    Ok(out)
}
