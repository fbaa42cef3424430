//! Random motion programs and the twin benchmark construction.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::spec::{AppearanceSpec, ClipSpec, MotionKind, Segment, NUM_CLOTHING, NUM_HAIR};
use super::DataConfig;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinRole {
    AppearanceTwin,
    MotionTwin,
    Unpaired,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinSpec {
    pub spec: ClipSpec,
    pub role: TwinRole,
    /// Pair number within its role.
    pub pair: usize,
}

pub fn random_appearance(rng: &mut impl Rng) -> AppearanceSpec {
    AppearanceSpec {
        clothing: rng.random_range(0..NUM_CLOTHING),
        hair: rng.random_range(0..NUM_HAIR),
        limb_seed: rng.random(),
    }
}

/// Kind and sense of every segment; two programs with equal signatures draw
/// the same arrows up to length.
fn signature(segments: &[Segment]) -> Vec<(MotionKind, i8)> {
    segments
        .iter()
        .map(|s| match s.kind {
            MotionKind::Static => (s.kind, 0),
            _ => (s.kind, s.sense() as i8),
        })
        .collect()
}

fn kinds(segments: &[Segment]) -> Vec<MotionKind> {
    segments.iter().map(|s| s.kind).collect()
}

/// Samples motion programs whose clips fit the frame.
#[derive(Clone, Debug)]
pub struct ProgramSampler {
    pub frame_size: usize,
    pub mean_pages: f64,
    pub static_probability: f64,
    pub min_frames: usize,
}

impl ProgramSampler {
    pub fn new(config: &DataConfig, min_frames: usize) -> Self {
        Self {
            frame_size: config.frame_size,
            mean_pages: config.mean_pages,
            static_probability: config.static_probability,
            min_frames,
        }
    }

    /// `1 + Poisson(mean − 1)`, redrawn above 9.
    pub fn sample_pages(&self, rng: &mut impl Rng) -> usize {
        let extra = self.mean_pages - 1.0;
        if extra <= 0.0 {
            return 1;
        }
        let poisson = Poisson::new(extra).expect("positive rate");
        loop {
            let k = poisson.sample(rng) as usize + 1;
            if k <= 9 {
                return k;
            }
        }
    }

    /// Even segment length keeping the clip near 30–90 frames; long programs
    /// are floored at 12 frames per segment.
    fn segment_frames(&self, pages: usize, rng: &mut impl Rng) -> usize {
        let lo = 12usize.max(30usize.div_ceil(pages)).next_multiple_of(2);
        let hi = lo.max(30usize.min(90 / pages) / 2 * 2);
        lo + 2 * rng.random_range(0..=(hi - lo) / 2)
    }

    fn sample_segments(&self, rng: &mut impl Rng) -> Vec<Segment> {
        let pages = self.sample_pages(rng);
        let scale = self.frame_size as f64 / 64.0;
        let mut drift = 0.0;
        let mut out = Vec::with_capacity(pages);
        for _ in 0..pages {
            let frames = self.segment_frames(pages, rng);
            if rng.random_bool(self.static_probability) {
                out.push(Segment::new(MotionKind::Static, 0.0, 0.0, frames));
                continue;
            }
            // Lean towards the centre so long programs stay in frame.
            let toward_left = if drift > 0.0 { 0.8 } else { 0.2 };
            let left = rng.random_bool(toward_left);
            let direction = if left { std::f64::consts::PI } else { 0.0 };
            let sign = if left { -1.0 } else { 1.0 };
            let seg = match rng.random_range(0..3) {
                0 => Segment::new(MotionKind::Glide, direction, scale * rng.random_range(0.4..0.8), frames),
                1 => Segment::new(MotionKind::Jump, direction, scale * rng.random_range(0.15..0.4), frames),
                _ => Segment::full_spin(left, frames),
            };
            if seg.kind != MotionKind::Spin {
                drift += sign * seg.speed * frames as f64;
            }
            out.push(seg);
        }
        out
    }

    fn fits(&self, segments: &[Segment], appearances: &[AppearanceSpec]) -> bool {
        appearances.iter().all(|a| {
            ClipSpec::centred(*a, segments.to_vec(), self.frame_size)
                .validate(self.min_frames)
                .is_ok()
        })
    }

    /// A program valid for every given appearance and accepted by `accept`.
    pub fn sample_program(
        &self,
        rng: &mut impl Rng,
        appearances: &[AppearanceSpec],
        accept: impl Fn(&[Segment]) -> bool,
    ) -> Result<Vec<Segment>> {
        for _ in 0..MAX_ATTEMPTS {
            let segs = self.sample_segments(rng);
            if segs.iter().all(|s| s.kind == MotionKind::Static) {
                continue;
            }
            if accept(&segs) && self.fits(&segs, appearances) {
                return Ok(segs);
            }
        }
        Err(Error::Config(format!(
            "could not sample a motion program fitting a {0}×{0} frame with at least {1} frames",
            self.frame_size, self.min_frames
        )))
    }

    /// Same arrows, different speed: glides and jumps move faster (or slower
    /// when faster leaves the frame), spins take two extra frames.
    fn speed_variant(&self, segments: &[Segment], appearances: &[AppearanceSpec]) -> Option<Vec<Segment>> {
        for factor in [1.25, 0.8] {
            let v: Vec<Segment> = segments
                .iter()
                .map(|s| match s.kind {
                    MotionKind::Static => *s,
                    MotionKind::Spin => Segment::full_spin(s.sense() < 0.0, s.frames + 2),
                    _ => Segment {
                        speed: s.speed * factor,
                        ..*s
                    },
                })
                .collect();
            if self.fits(&v, appearances) {
                return Some(v);
            }
        }
        None
    }
}

/// Builds the twin benchmark: appearance-twin pairs share an appearance and
/// differ in motion kinds, motion-twin pairs share a motion program and differ
/// in clothing. Motion programs of appearance twins borrow (at a different
/// speed) the program of the next motion-twin pair, so no single modality
/// identifies a clip on its own.
pub fn make_twins(config: &DataConfig, min_frames: usize, seed: u64) -> Result<Vec<TwinSpec>> {
    if config.appearance_twin_clips % 2 != 0 || config.motion_twin_clips % 2 != 0 {
        return Err(Error::Config(format!(
            "twin clip counts must be even, got {} appearance and {} motion",
            config.appearance_twin_clips, config.motion_twin_clips
        )));
    }
    let a_pairs = config.appearance_twin_clips / 2;
    let b_pairs = config.motion_twin_clips / 2;
    let sampler = ProgramSampler::new(config, min_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut combos: Vec<(u8, u8)> = (0..NUM_CLOTHING)
        .flat_map(|c| (0..NUM_HAIR).map(move |h| (c, h)))
        .collect();
    combos.shuffle(&mut rng);
    let mut next_combo = 0usize;
    let mut take_combo = |rng: &mut ChaCha8Rng, avoid_clothing: Option<u8>| -> AppearanceSpec {
        let n = combos.len();
        let pick = (0..n)
            .map(|k| (next_combo + k) % n)
            .find(|i| Some(combos[*i].0) != avoid_clothing)
            .expect("several clothing ids exist");
        combos.swap(next_combo % n, pick);
        let (clothing, hair) = combos[next_combo % n];
        next_combo += 1;
        AppearanceSpec {
            clothing,
            hair,
            limb_seed: rng.random(),
        }
    };

    let xs: Vec<AppearanceSpec> = (0..a_pairs).map(|_| take_combo(&mut rng, None)).collect();
    let motion_members: Vec<[AppearanceSpec; 2]> = (0..b_pairs)
        .map(|i| {
            let first = match xs.get(i) {
                Some(x) => AppearanceSpec {
                    limb_seed: rng.random(),
                    ..*x
                },
                None => take_combo(&mut rng, None),
            };
            let second = take_combo(&mut rng, Some(first.clothing));
            [first, second]
        })
        .collect();

    let mut used: HashSet<Vec<(MotionKind, i8)>> = HashSet::new();
    let mut ys = Vec::with_capacity(b_pairs);
    for members in &motion_members {
        let y = sampler.sample_program(&mut rng, members, |s| !used.contains(&signature(s)))?;
        used.insert(signature(&y));
        ys.push(y);
    }

    let mut out = Vec::with_capacity(config.appearance_twin_clips + config.motion_twin_clips);
    for (i, x) in xs.iter().enumerate() {
        let borrowed = if b_pairs > 0 {
            sampler.speed_variant(&ys[(i + 1) % b_pairs], std::slice::from_ref(x))
        } else {
            None
        };
        let first = match borrowed {
            Some(p) => p,
            None => {
                let p = sampler.sample_program(&mut rng, std::slice::from_ref(x), |s| !used.contains(&signature(s)))?;
                used.insert(signature(&p));
                p
            }
        };
        let first_kinds = kinds(&first);
        let second = sampler.sample_program(&mut rng, std::slice::from_ref(x), |s| {
            !used.contains(&signature(s)) && kinds(s) != first_kinds
        })?;
        used.insert(signature(&second));
        for program in [first, second] {
            out.push(TwinSpec {
                spec: ClipSpec::centred(*x, program, config.frame_size),
                role: TwinRole::AppearanceTwin,
                pair: i,
            });
        }
    }
    for (i, (members, y)) in motion_members.iter().zip(&ys).enumerate() {
        for a in members {
            out.push(TwinSpec {
                spec: ClipSpec::centred(*a, y.clone(), config.frame_size),
                role: TwinRole::MotionTwin,
                pair: i,
            });
        }
    }
    Ok(out)
}
