use crate::error::{Error, Result};
use crate::losses::squared_distance;
use crate::math::Tensor;

/// 1-based inclusive bounds `[φ(j), ψ(j)]` of the clip positions that page
/// `j` of `m` may match in a clip of `o` positions.
pub fn page_bounds(j: usize, m: usize, o: usize) -> (usize, usize) {
    let (lo, hi) = if m == 1 {
        (1, o)
    } else if j == 1 {
        (1, o.div_ceil(2))
    } else if j == m {
        (o / 2, o)
    } else {
        (o.div_ceil(4), 3 * o / 4)
    };
    let lo = lo.max(1);
    (lo, hi.max(lo))
}

/// `(1/M)·Σ_j min_{k∈[φ(j),ψ(j)]} cost[j][k]` over a page-by-position cost table.
pub fn sequence_distance_costs(costs: &[Vec<f64>]) -> Result<f64> {
    let m = costs.len();
    if m == 0 {
        return Err(Error::InvalidArgument("sequence has no pages".into()));
    }
    let o = costs[0].len();
    if o < 2 || costs.iter().any(|c| c.len() != o) {
        return Err(Error::InvalidArgument(format!("clip needs ≥ 2 positions of equal count, got {o}")));
    }
    let mut sum = 0.0;
    for (j, row) in costs.iter().enumerate() {
        let (lo, hi) = page_bounds(j + 1, m, o);
        sum += row[lo - 1..hi].iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(sum / m as f64)
}

/// Squared distances between every page (`M×D`) and position (`O×D`).
pub fn cost_table(pages: &Tensor, positions: &Tensor) -> Result<Vec<Vec<f64>>> {
    if pages.ndim() != 2 || positions.ndim() != 2 || pages.shape()[1] != positions.shape()[1] {
        return Err(Error::shape(
            "sequence_distance",
            format!("pages {:?} vs positions {:?}", pages.shape(), positions.shape()),
        ));
    }
    Ok((0..pages.shape()[0])
        .map(|j| {
            (0..positions.shape()[0])
                .map(|k| squared_distance(pages.row(j), positions.row(k)))
                .collect()
        })
        .collect())
}

/// Sequence-to-clip distance between embedded pages and clip positions.
pub fn sequence_distance(pages: &Tensor, positions: &Tensor) -> Result<f64> {
    sequence_distance_costs(&cost_table(pages, positions)?)
}

/// Rank (1-based) of every item when sorted by ascending `scores`, ties to
/// the lexicographically smaller id.
pub fn ranks_from_scores(scores: &[f64], ids: &[String]) -> Result<Vec<usize>> {
    let order = order_by(scores, ids)?;
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

/// Indices sorted by ascending score, ties by id.
pub fn order_by(scores: &[f64], ids: &[String]) -> Result<Vec<usize>> {
    if scores.len() != ids.len() {
        return Err(Error::InvalidArgument("scores and ids differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("ranking scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| ids[a].cmp(&ids[b])));
    Ok(order)
}

fn check_permutation(r: &[usize], name: &str) -> Result<()> {
    let mut seen = vec![false; r.len()];
    for &v in r {
        if v == 0 || v > r.len() || std::mem::replace(&mut seen[v - 1], true) {
            return Err(Error::InvalidArgument(format!("{name} ranks are not a permutation of 1..{}", r.len())));
        }
    }
    Ok(())
}

/// Fused scores `λ₂·r_ap + (1−λ₂)·r_mo` and the resulting order (ties by id).
pub fn fuse_ranks(r_ap: &[usize], r_mo: &[usize], lambda2: f64, ids: &[String]) -> Result<(Vec<f64>, Vec<usize>)> {
    if r_ap.len() != r_mo.len() || r_ap.len() != ids.len() {
        return Err(Error::InvalidArgument("rank vectors differ in length".into()));
    }
    if !(0.0..=1.0).contains(&lambda2) {
        return Err(Error::InvalidArgument(format!("λ₂ must lie in [0, 1], got {lambda2}")));
    }
    check_permutation(r_ap, "appearance")?;
    check_permutation(r_mo, "motion")?;
    let fused: Vec<f64> = r_ap
        .iter()
        .zip(r_mo)
        .map(|(a, m)| lambda2 * *a as f64 + (1.0 - lambda2) * *m as f64)
        .collect();
    let order = order_by(&fused, ids)?;
    Ok((fused, order))
}

/// 0-based argmin position of one page embedding over a clip (ties to the
/// lowest index).
pub fn detect_action(page: &[f64], positions: &Tensor) -> Result<usize> {
    if positions.ndim() != 2 || positions.shape()[1] != page.len() || positions.shape()[0] == 0 {
        return Err(Error::shape(
            "detect_action",
            format!("page of {} vs positions {:?}", page.len(), positions.shape()),
        ));
    }
    let mut best = (f64::INFINITY, 0);
    for k in 0..positions.shape()[0] {
        let d = squared_distance(page, positions.row(k));
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

pub const DETECTION_TOLERANCE: usize = 5;

/// Frames between a 1-based index and a 1-based inclusive interval (0 inside).
pub fn interval_distance(index: usize, interval: (usize, usize)) -> usize {
    if index < interval.0 {
        interval.0 - index
    } else {
        index.saturating_sub(interval.1)
    }
}

pub fn detection_success(index: usize, interval: (usize, usize)) -> bool {
    interval_distance(index, interval) <= DETECTION_TOLERANCE
}
