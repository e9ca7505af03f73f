//! Root-to-emitter label assignment across the grid.

use nalgebra::{Matrix3, Vector3};

/// Per-pixel inverse variances steering the label search.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(super) struct Weights {
    /// Of the pair product, from the coincidence count alone.
    pub counts: f64,
    /// Of the log ratio across the closest pair of roots.
    pub ratio: f64,
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

pub(super) fn min_gap(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// One optional vector per pixel, `None` where the pixel was not solved.
pub(super) type PerPixel = Vec<Option<Vec<f64>>>;

/// Orders the roots at every solved pixel so that label `k` follows the same
/// emitter everywhere, brightest label first.
///
/// Matching runs on log rates. Spots that share a Gaussian point spread
/// function differ in log rate by an affine function of position, so a
/// label crossing is a straight line. A local pass grows labels outward with
/// plane-fit predictions; the result and a few other starting labellings are
/// then refined by alternating an affine fit of every log ratio with
/// relabelling each pixel against that fit. The refinement with the smallest
/// weighted residual wins.
///
/// Also returns each label's share of the pixel total as predicted by the
/// winning fit, a smooth stand-in for the noisy per-pixel split; pixels it
/// cannot cover get their measured split.
pub(super) fn assign_labels(
    nx: usize,
    ny: usize,
    roots: &[Option<Vec<f64>>],
    weights: &[Weights],
    n: usize,
) -> (PerPixel, PerPixel) {
    let counts: Vec<f64> = weights.iter().map(|w| w.counts).collect();
    let ratio: Vec<f64> = weights.iter().map(|w| w.ratio).collect();
    let top = roots.iter().flatten().flatten().copied().fold(0.0f64, f64::max);
    let eps = 1e-9 * top + f64::MIN_POSITIVE;
    let logs: Vec<Option<Vec<f64>>> = roots
        .iter()
        .map(|r| r.as_ref().map(|v| v.iter().map(|x| (x + eps).ln()).collect()))
        .collect();
    let perms = permutations(n);
    let local: Vec<Option<usize>> = label_order(nx, ny, &logs, &counts, n)
        .into_iter()
        .map(|o| o.map(|o| perms.iter().position(|p| *p == o).unwrap()))
        .collect();

    let mut starts = vec![local.clone(), logs.iter().map(|l| l.as_ref().map(|_| 0)).collect()];
    if n == 2 {
        starts.extend(half_plane_starts(nx, &logs, &counts));
    }
    let best = starts
        .into_iter()
        .map(|s| refine(nx, &logs, &ratio, &perms, s))
        .fold(None::<Refined>, |best, r| match best {
            Some(b) if b.cost <= r.cost => Some(b),
            _ => Some(r),
        });
    let (order, fits) = match best {
        Some(r) if r.cost.is_finite() => (r.order, Some(r.fits)),
        _ => (local, None),
    };

    let mut labelled: Vec<Option<Vec<f64>>> = roots
        .iter()
        .zip(&order)
        .map(|(r, o)| r.as_ref().zip(*o).map(|(v, o)| perms[o].iter().map(|&j| v[j]).collect()))
        .collect();
    let mut shares: Vec<Option<Vec<f64>>> = (0..roots.len())
        .map(|i| match (&fits, &labelled[i]) {
            (Some(fits), Some(_)) => {
                let (x, y) = coords(nx, i);
                let rel: Vec<f64> = std::iter::once(1.0)
                    .chain(fits.iter().map(|c| (c[0] + c[1] * x + c[2] * y).exp()))
                    .collect();
                let sum: f64 = rel.iter().sum();
                sum.is_finite().then(|| rel.iter().map(|r| r / sum).collect())
            }
            _ => None,
        })
        .collect();
    for (sh, v) in shares.iter_mut().zip(&labelled) {
        if let (None, Some(v)) = (&sh, v) {
            let sum: f64 = v.iter().sum();
            *sh = Some(v.iter().map(|x| if sum > 0.0 { x / sum } else { 1.0 / n as f64 }).collect());
        }
    }

    let mut totals: Vec<(usize, f64)> = (0..n)
        .map(|k| (k, labelled.iter().flatten().map(|v| v[k]).sum()))
        .collect();
    totals.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for v in labelled.iter_mut().chain(shares.iter_mut()).flatten() {
        *v = totals.iter().map(|&(k, _)| v[k]).collect();
    }
    (labelled, shares)
}

/// Pixel coordinates centred on the grid, for conditioning.
fn coords(nx: usize, i: usize) -> (f64, f64) {
    ((i % nx) as f64 - nx as f64 / 2.0, (i / nx) as f64 - nx as f64 / 2.0)
}

/// Weighted least-squares `a + b x + c y` through `(x, y, w, v)` points.
fn fit_affine(pts: impl Iterator<Item = (f64, f64, f64, f64)>) -> Option<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (x, y, w, v) in pts {
        let row = Vector3::new(1.0, x, y);
        a += w * row * row.transpose();
        rhs += w * v * row;
    }
    if !(a.determinant() > MIN_SPREAD * a[(0, 0)].powi(3)) {
        return None;
    }
    a.try_inverse().map(|inv| inv * rhs)
}

struct Refined {
    order: Vec<Option<usize>>,
    /// Affine log ratio of each label to label 0.
    fits: Vec<Vector3<f64>>,
    cost: f64,
}

/// Alternates affine fits of the log ratios to label 0 with relabelling
/// until no pixel changes.
fn refine(
    nx: usize,
    logs: &[Option<Vec<f64>>],
    weights: &[f64],
    perms: &[Vec<usize>],
    mut order: Vec<Option<usize>>,
) -> Refined {
    let n = perms[0].len();
    let ratio = |l: &[f64], p: &[usize], k: usize| l[p[k]] - l[p[0]];
    let mut out = Refined {
        order: Vec::new(),
        fits: Vec::new(),
        cost: f64::INFINITY,
    };
    for _ in 0..REFINE_ROUNDS {
        let fits: Option<Vec<Vector3<f64>>> = (1..n)
            .map(|k| {
                fit_affine((0..logs.len()).filter_map(|i| {
                    let (l, o) = (logs[i].as_ref()?, order[i]?);
                    let (x, y) = coords(nx, i);
                    (weights[i] > 0.0).then(|| (x, y, weights[i], ratio(l, &perms[o], k)))
                }))
            })
            .collect();
        let Some(fits) = fits else {
            out.cost = f64::INFINITY;
            break;
        };
        let mut changed = false;
        let mut cost = 0.0;
        for i in 0..logs.len() {
            let Some(l) = &logs[i] else { continue };
            let (x, y) = coords(nx, i);
            let model: Vec<f64> = fits.iter().map(|c| c[0] + c[1] * x + c[2] * y).collect();
            let miss = |p: &[usize]| -> f64 { (1..n).map(|k| (ratio(l, p, k) - model[k - 1]).powi(2)).sum() };
            let (best, m) = (0..perms.len())
                .map(|pi| (pi, miss(&perms[pi])))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            cost += weights[i] * m;
            if order[i] != Some(best) {
                changed = true;
                order[i] = Some(best);
            }
        }
        out.fits = fits;
        out.cost = cost;
        if !changed {
            break;
        }
    }
    out.order = order;
    out
}

/// Two-label starts: the grid split by lines through the low-contrast valley
/// in a spread of directions.
fn half_plane_starts(nx: usize, logs: &[Option<Vec<f64>>], weights: &[f64]) -> Vec<Vec<Option<usize>>> {
    let mut pts: Vec<(usize, f64)> = (0..logs.len())
        .filter_map(|i| logs[i].as_ref().map(|l| (i, (l[0] - l[1]).abs())))
        .filter(|&(i, _)| weights[i] > 0.0)
        .collect();
    if pts.is_empty() {
        return Vec::new();
    }
    let mut w: Vec<f64> = pts.iter().map(|&(i, _)| weights[i]).collect();
    w.sort_by(f64::total_cmp);
    let w_mid = w[w.len() / 2];
    pts.retain(|&(i, _)| weights[i] >= w_mid);
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let valley = &pts[..pts.len().div_ceil(5)];
    let (cx, cy) = valley.iter().fold((0.0, 0.0), |(sx, sy), &(i, _)| {
        let (x, y) = coords(nx, i);
        (sx + x / valley.len() as f64, sy + y / valley.len() as f64)
    });
    (0..DIRECTIONS)
        .map(|d| {
            let th = std::f64::consts::PI * d as f64 / DIRECTIONS as f64;
            let (ux, uy) = (th.cos(), th.sin());
            (0..logs.len())
                .map(|i| {
                    let l = logs[i].as_ref()?;
                    let (x, y) = coords(nx, i);
                    let side = (x - cx) * ux + (y - cy) * uy >= 0.0;
                    Some(usize::from(side != (l[0] >= l[1])))
                })
                .collect()
        })
        .collect()
}

const REFINE_ROUNDS: usize = 50;
const DIRECTIONS: usize = 16;

/// Frontier entry: how clearly the best permutation wins, pixel, permutation
/// and the evaluation it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    margin: f64,
    pixel: usize,
    perm: usize,
    version: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.margin
            .total_cmp(&other.margin)
            .then(other.pixel.cmp(&self.pixel))
            .then(self.version.cmp(&other.version))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Per solved pixel, the root index carried by each label.
///
/// Grows from the pixel with the widest root spread. Any unlabelled pixel
/// within a window of labelled ones is a candidate; the candidate whose best
/// permutation beats the runner-up by the widest weighted margin goes next.
/// Pixels where roots nearly coincide carry little weight, so they are
/// decided last and barely steer the trend across a crossing.
fn label_order(
    nx: usize,
    ny: usize,
    roots: &[Option<Vec<f64>>],
    weights: &[f64],
    n: usize,
) -> Vec<Option<Vec<usize>>> {
    let perms = permutations(n);
    let mut order: Vec<Option<Vec<usize>>> = vec![None; roots.len()];
    let mut labelled: Vec<Option<Vec<f64>>> = vec![None; roots.len()];
    let mut version = vec![0u32; roots.len()];
    let at = |ix: isize, iy: isize| -> Option<usize> {
        (ix >= 0 && iy >= 0 && (ix as usize) < nx && (iy as usize) < ny).then(|| iy as usize * nx + ix as usize)
    };

    // (best permutation, cost gap to the runner-up)
    let rank = |r: &[f64], predicted: &[f64]| -> (usize, f64) {
        let (mut best, mut second) = ((f64::INFINITY, 0usize), f64::INFINITY);
        for (pi, p) in perms.iter().enumerate() {
            let cost: f64 = p.iter().enumerate().map(|(k, &j)| (predicted[k] - r[j]).powi(2)).sum();
            if cost < best.0 {
                second = best.0;
                best = (cost, pi);
            } else if cost < second {
                second = cost;
            }
        }
        let gap = if second.is_finite() { second - best.0 } else { 0.0 };
        (best.1, gap)
    };
    let apply = |r: &[f64], pi: usize| -> Vec<f64> { perms[pi].iter().map(|&j| r[j]).collect() };

    loop {
        // seed: widest spread among solved, unlabelled pixels
        let seed = (0..roots.len())
            .filter(|&i| roots[i].is_some() && labelled[i].is_none())
            .fold(None::<(usize, f64)>, |best, i| {
                let s = spread(roots[i].as_ref().unwrap());
                match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((i, s)),
                }
            });
        let Some((seed, _)) = seed else { break };
        let r = roots[seed].as_ref().unwrap();
        // a new component lines up with the nearest pixel labelled so far
        let pi = match nearest_labelled(nx, seed, &labelled) {
            Some(j) => rank(r, labelled[j].as_ref().unwrap()).0,
            None => 0,
        };
        labelled[seed] = Some(apply(r, pi));
        order[seed] = Some(perms[pi].clone());

        let mut heap = std::collections::BinaryHeap::new();
        let mut just = seed;
        loop {
            let (jx, jy) = ((just % nx) as isize, (just / nx) as isize);
            for dy in -WINDOW..=WINDOW {
                for dx in -WINDOW..=WINDOW {
                    let Some(i) = at(jx + dx, jy + dy) else { continue };
                    if roots[i].is_none() || labelled[i].is_some() {
                        continue;
                    }
                    let Some((p, var)) = predict(nx, ny, i, &labelled, weights, n) else { continue };
                    let r = roots[i].as_ref().unwrap();
                    let (perm, _) = rank(r, &p);
                    // significance of the closest pair in prediction and data;
                    // mean-only predictions cannot follow a crossing, so they wait
                    let margin = if var.is_finite() {
                        (min_gap(&p) / var.sqrt()).min(min_gap(r) * weights[i].sqrt())
                    } else {
                        -1.0 / (1.0 + min_gap(r) * weights[i].sqrt())
                    };
                    version[i] += 1;
                    heap.push(Candidate {
                        margin,
                        pixel: i,
                        perm,
                        version: version[i],
                    });
                }
            }
            let next = loop {
                match heap.pop() {
                    Some(c) if labelled[c.pixel].is_none() && c.version == version[c.pixel] => break Some(c),
                    Some(_) => continue,
                    None => break None,
                }
            };
            let Some(c) = next else { break };
            let r = roots[c.pixel].as_ref().unwrap();
            labelled[c.pixel] = Some(apply(r, c.perm));
            order[c.pixel] = Some(perms[c.perm].clone());
            just = c.pixel;
        }
    }
    order
}

/// Half-width of the window the label prediction is fitted over.
const WINDOW: isize = 5;

/// Smallest weighted spread of support, in squared pixels, that a plane is
/// fitted through.
const MIN_SPREAD: f64 = 0.05;

/// Per-label value expected at pixel `i` from a weighted least-squares plane
/// through the labelled pixels of the surrounding window, or their weighted
/// mean when they do not span a plane. Also returns the variance of the
/// prediction in units of the inverse weights, infinite for the mean.
fn predict(
    nx: usize,
    ny: usize,
    i: usize,
    labelled: &[Option<Vec<f64>>],
    weights: &[f64],
    n: usize,
) -> Option<(Vec<f64>, f64)> {
    let (ix, iy) = ((i % nx) as isize, (i / nx) as isize);
    let mut pts: Vec<(f64, f64, f64, &Vec<f64>)> = Vec::new();
    for dy in -WINDOW..=WINDOW {
        for dx in -WINDOW..=WINDOW {
            let (jx, jy) = (ix + dx, iy + dy);
            if jx < 0 || jy < 0 || jx as usize >= nx || jy as usize >= ny {
                continue;
            }
            let j = jy as usize * nx + jx as usize;
            if let Some(v) = &labelled[j] {
                if weights[j] > 0.0 {
                    pts.push((dx as f64, dy as f64, weights[j], v));
                }
            }
        }
    }
    if pts.is_empty() {
        return None;
    }
    let mut a = Matrix3::zeros();
    for &(x, y, w, _) in &pts {
        let row = Vector3::new(1.0, x, y);
        a += w * row * row.transpose();
    }
    // the intercept row of the inverse maps sums to the value at the pixel;
    // the determinant over a00^3 is the weighted spread of the support
    let inv = (a.determinant() > MIN_SPREAD * a[(0, 0)].powi(3))
        .then(|| a.try_inverse())
        .flatten();
    let plane = inv.map(|inv| inv.row(0).into_owned());
    let values = (0..n)
        .map(|k| match &plane {
            Some(c) => pts.iter().map(|&(x, y, w, v)| w * (c[0] + c[1] * x + c[2] * y) * v[k]).sum(),
            None => pts.iter().map(|p| p.2 * p.3[k]).sum::<f64>() / a[(0, 0)],
        })
        .collect();
    Some((values, inv.map_or(f64::INFINITY, |inv| inv[(0, 0)])))
}

pub(super) fn nearest_labelled(nx: usize, i: usize, labelled: &[Option<Vec<f64>>]) -> Option<usize> {
    let (ix, iy) = ((i % nx) as i64, (i / nx) as i64);
    labelled
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_some())
        .min_by_key(|(j, _)| {
            let (jx, jy) = ((j % nx) as i64, (j / nx) as i64);
            ((jx - ix).pow(2) + (jy - iy).pow(2), *j)
        })
        .map(|(j, _)| j)
}

