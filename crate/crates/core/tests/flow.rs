use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbvr_core::flow::{stack_flows, tvl1_flow, tvl1_flow_traced, FlowCache, FlowParams};
use sbvr_core::synth::VideoClip;
use sbvr_core::Tensor;

/// Smooth random texture in [0, 1]: a sum of random plane waves.
fn texture(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            let fx = rng.random_range(1..6) as f64;
            let fy = rng.random_range(1..6) as f64;
            (fx, fy * if rng.random_bool(0.5) { 1.0 } else { -1.0 }, rng.random_range(0.0..6.28))
        })
        .collect();
    (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let s: f64 = waves
                .iter()
                .map(|(fx, fy, ph)| (2.0 * std::f64::consts::PI * (fx * x + fy * y) / n as f64 + ph).sin())
                .sum();
            0.5 + 0.5 * s / 12f64.sqrt() / 1.5
        })
        .map(|v: f64| v.clamp(0.0, 1.0))
        .collect()
}

/// Content moved by (dx, dy) with wrap-around.
fn shifted(img: &[f64], n: usize, dx: isize, dy: isize) -> Vec<f64> {
    (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as isize, (i / n) as isize);
            let sx = (x - dx).rem_euclid(n as isize) as usize;
            let sy = (y - dy).rem_euclid(n as isize) as usize;
            img[sy * n + sx]
        })
        .collect()
}

fn gray(data: Vec<f64>, n: usize) -> Tensor {
    Tensor::new(vec![n, n], data).unwrap()
}

fn interior_median(t: &Tensor, n: usize, margin: usize) -> f64 {
    let mut v: Vec<f64> = (0..n * n)
        .filter(|i| {
            let (x, y) = (i % n, i / n);
            x >= margin && y >= margin && x < n - margin && y < n - margin
        })
        .map(|i| t.data()[i])
        .collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn identical_frames_give_near_zero_flow() {
    let a = gray(texture(64, 1), 64);
    let f = tvl1_flow(&a, &a, &FlowParams::default()).unwrap();
    assert!(f.max_abs() < 0.05, "max flow {}", f.max_abs());
}

#[test]
fn constant_frames_give_zero_flow() {
    let a = Tensor::full(&[32, 32], 0.4);
    let f = tvl1_flow(&a, &a, &FlowParams::default()).unwrap();
    assert_eq!(f.max_abs(), 0.0);
}

#[test]
fn horizontal_shift_of_two_pixels() {
    let img = texture(64, 2);
    let a = gray(img.clone(), 64);
    let b = gray(shifted(&img, 64, 2, 0), 64);
    let f = tvl1_flow(&a, &b, &FlowParams::default()).unwrap();
    let mu = interior_median(&f.u, 64, 8);
    let mv = interior_median(&f.v, 64, 8);
    assert!((1.5..=2.5).contains(&mu), "median u {mu}");
    assert!((-0.5..=0.5).contains(&mv), "median v {mv}");
}

#[test]
fn integer_shifts_are_recovered() {
    let n = 64;
    let margin = 8;
    for (k, (dx, dy)) in [(3, -1), (-2, 2), (0, -3), (1, 1)].into_iter().enumerate() {
        let img = texture(n, 10 + k as u64);
        let a = gray(img.clone(), n);
        let b = gray(shifted(&img, n, dx, dy), n);
        let f = tvl1_flow(&a, &b, &FlowParams::default()).unwrap();
        let (mut good, mut total) = (0, 0);
        for y in margin..n - margin {
            for x in margin..n - margin {
                let i = y * n + x;
                let e = (f.u.data()[i] - dx as f64).hypot(f.v.data()[i] - dy as f64);
                good += usize::from(e < 0.5);
                total += 1;
            }
        }
        let frac = good as f64 / total as f64;
        assert!(frac >= 0.9, "shift ({dx}, {dy}): {frac}");
    }
}

#[test]
fn energy_decreases_for_brightness_inverted_frames() {
    let img = texture(32, 4);
    let a = gray(img.clone(), 32);
    let b = gray(img.iter().map(|v| 1.0 - v).collect(), 32);
    let (_, trace) = tvl1_flow_traced(&a, &b, &FlowParams::default()).unwrap();
    assert_eq!(trace.len(), 6);
    for pair in trace.windows(2) {
        assert!(pair[1] < pair[0], "energy rose from {} to {}", pair[0], pair[1]);
    }
}

#[test]
fn too_small_frames_are_rejected() {
    let a = Tensor::zeros(&[6, 6]);
    assert!(tvl1_flow(&a, &a, &FlowParams::default()).is_err());
    let big = Tensor::zeros(&[16, 16]);
    assert!(tvl1_flow(&big, &a, &FlowParams::default()).is_err());
}

#[test]
fn flow_is_deterministic() {
    let img = texture(32, 5);
    let a = gray(img.clone(), 32);
    let b = gray(shifted(&img, 32, 1, 0), 32);
    let p = FlowParams::default();
    assert_eq!(tvl1_flow(&a, &b, &p).unwrap(), tvl1_flow(&a, &b, &p).unwrap());
}

fn moving_clip(id: &str, frames: usize, step: isize) -> VideoClip {
    let n = 32;
    let img = texture(n, 6);
    let frames = (0..frames)
        .map(|k| {
            let g = shifted(&img, n, step * k as isize, 0);
            let mut rgb = g.clone();
            rgb.extend_from_slice(&g);
            rgb.extend_from_slice(&g);
            Tensor::new(vec![3, n, n], rgb).unwrap()
        })
        .collect();
    VideoClip {
        id: id.into(),
        frames,
        fps: 30,
    }
}

#[test]
fn stack_has_alternating_channels() {
    let clip = moving_clip("c", 8, 1);
    let p = FlowParams::default();
    let s = stack_flows(&clip, 1, 5, &p).unwrap();
    assert_eq!(s.channels.shape(), &[10, 32, 32]);
    assert_eq!(s.start_frame, 1);
    let plane = 32 * 32;
    for k in 0..5 {
        let f = tvl1_flow(&clip.frames[1 + k], &clip.frames[2 + k], &p).unwrap();
        let u: Vec<f64> = f.u.data().iter().map(|v| f64::from(*v as f32)).collect();
        let v: Vec<f64> = f.v.data().iter().map(|v| f64::from(*v as f32)).collect();
        assert_eq!(&s.channels.data()[2 * k * plane..(2 * k + 1) * plane], &u[..]);
        assert_eq!(&s.channels.data()[(2 * k + 1) * plane..(2 * k + 2) * plane], &v[..]);
    }
    assert!(stack_flows(&clip, 3, 5, &p).is_err());
}

#[test]
fn static_clip_stack_is_near_zero() {
    let clip = moving_clip("c", 7, 0);
    let s = stack_flows(&clip, 0, 5, &FlowParams::default()).unwrap();
    assert!(s.channels.max_abs() < 0.05);
}

#[test]
fn cache_hits_skip_computation_and_match_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let clip = moving_clip("clip_a", 8, 1);
    let cache = FlowCache::new(dir.path(), FlowParams::default()).unwrap();
    let first = cache.stacks(&clip, 5).unwrap();
    assert_eq!(cache.computed_pairs(), 7);
    assert_eq!(first.len(), 3);
    let again = cache.stacks(&clip, 5).unwrap();
    assert_eq!(cache.computed_pairs(), 7);
    assert_eq!(first, again);

    // A fresh cache over the same directory reads from disk.
    let reopened = FlowCache::new(dir.path(), FlowParams::default()).unwrap();
    assert_eq!(reopened.stacks(&clip, 5).unwrap(), first);
    assert_eq!(reopened.computed_pairs(), 0);

    // Deleting the file recomputes identical values.
    std::fs::remove_file(reopened.file_path("clip_a")).unwrap();
    reopened.clear_memory();
    assert_eq!(reopened.stacks(&clip, 5).unwrap(), first);
    assert_eq!(reopened.computed_pairs(), 7);
    assert_eq!(reopened.stack(&clip, 2, 5).unwrap(), first[2]);
}

#[test]
fn params_change_is_a_miss() {
    let dir = tempfile::tempdir().unwrap();
    let clip = moving_clip("clip_b", 7, 1);
    FlowCache::new(dir.path(), FlowParams::default()).unwrap().stacks(&clip, 5).unwrap();
    let other = FlowCache::new(
        dir.path(),
        FlowParams {
            warps: 3,
            ..FlowParams::default()
        },
    )
    .unwrap();
    other.stacks(&clip, 5).unwrap();
    assert_eq!(other.computed_pairs(), 6);
}

#[test]
fn corrupt_cache_file_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let clip = moving_clip("clip_c", 7, 1);
    let cache = FlowCache::new(dir.path(), FlowParams::default()).unwrap();
    let first = cache.stacks(&clip, 5).unwrap();
    let path = cache.file_path("clip_c");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 10);
    std::fs::write(&path, bytes).unwrap();
    cache.clear_memory();
    assert_eq!(cache.stacks(&clip, 5).unwrap(), first);
    assert_eq!(cache.recoveries(), 1);
    assert_eq!(cache.computed_pairs(), 12);
}
