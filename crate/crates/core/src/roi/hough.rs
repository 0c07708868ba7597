//! Two-stage gradient Hough transform.
//!
//! Stage 1 accumulates centre votes: every edge pixel (Sobel magnitude above
//! a fraction of the image maximum) votes along both directions of its
//! gradient for each integer radius in `[r_min, r_max]`. Stage 2 takes each
//! local maximum of the (3×3 box-smoothed) accumulator, builds a radius
//! histogram of angular coverage from nearby radial edges, then refines the
//! winning circle on sub-pixel boundary points (midpoint crossings of radial
//! intensity profiles) with an algebraic fit polished by a geometric one.
//! Coverage is measured over the observable part of the perimeter: invalid
//! pixels (e.g. saturated glare) neither produce edges nor count against a
//! circle, and profiles touching them are dropped. Candidates whose coverage
//! clears `accumulator_threshold` are accepted greedily, longest supported
//! arc first, subject to non-overlap and `min_center_dist`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{number_row_major, Circle, RoiSet};
use crate::error::{Error, Result};
use crate::hypercube::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughParams {
    pub r_min: f64,
    pub r_max: f64,
    /// Minimum fraction of the circumference that must be covered by edges, in (0, 1].
    pub accumulator_threshold: f64,
    pub min_center_dist: f64,
    /// Edge cut-off as a fraction of the largest gradient magnitude, in (0, 1].
    pub edge_threshold: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            r_min: 8.0,
            r_max: 40.0,
            accumulator_threshold: 0.6,
            min_center_dist: 10.0,
            edge_threshold: 0.2,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > 0.0
            && self.r_min <= self.r_max
            && self.r_max.is_finite()
            && self.min_center_dist > 0.0
            && self.accumulator_threshold > 0.0
            && self.accumulator_threshold <= 1.0
            && self.edge_threshold > 0.0
            && self.edge_threshold <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid Hough parameters {self:?}"
            )))
        }
    }
}

struct Edge {
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
}

fn sobel_edges(img: &GrayImage, edge_threshold: f64) -> Vec<Edge> {
    let (w, h) = (img.width(), img.height());
    let mut grads = Vec::new();
    let mut max_mag: f64 = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let window_valid =
                (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| img.is_valid(xx, yy)));
            if !window_valid {
                continue;
            }
            let p = |dx: isize, dy: isize| {
                img.get_or_zero((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let mag = gx.hypot(gy);
            max_mag = max_mag.max(mag);
            grads.push((x, y, gx, gy, mag));
        }
    }
    if max_mag < 1e-12 {
        return Vec::new();
    }
    let cut = edge_threshold * max_mag;
    grads
        .into_iter()
        .filter(|g| g.4 >= cut && g.4 > 0.0)
        .map(|(x, y, gx, gy, mag)| Edge {
            x: x as f64,
            y: y as f64,
            ux: gx / mag,
            uy: gy / mag,
        })
        .collect()
}

fn accumulate(edges: &[Edge], w: usize, h: usize, r_lo: usize, r_hi: usize) -> Vec<f64> {
    let mut acc = vec![0.0; w * h];
    for e in edges {
        for r in r_lo..=r_hi {
            for sign in [1.0, -1.0] {
                let cx = (e.x + sign * r as f64 * e.ux).round();
                let cy = (e.y + sign * r as f64 * e.uy).round();
                if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
                    acc[cy as usize * w + cx as usize] += 1.0;
                }
            }
        }
    }
    // 3×3 box smoothing to merge votes split by rounding.
    let mut smooth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    s += acc[yy * w + xx];
                }
            }
            smooth[y * w + x] = s;
        }
    }
    smooth
}

/// Local maxima in a 5×5 window; plateaus resolve to their first pixel.
fn local_maxima(acc: &[f64], w: usize, h: usize, min_votes: f64) -> Vec<(usize, usize, f64)> {
    const K: usize = 2;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = acc[y * w + x];
            if v < min_votes {
                continue;
            }
            let mut is_max = true;
            'win: for yy in y.saturating_sub(K)..=(y + K).min(h - 1) {
                for xx in x.saturating_sub(K)..=(x + K).min(w - 1) {
                    let j = yy * w + xx;
                    let i = y * w + x;
                    if (j < i && acc[j] >= v) || (j > i && acc[j] > v) {
                        is_max = false;
                        break 'win;
                    }
                }
            }
            if is_max {
                out.push((x, y, v));
            }
        }
    }
    out
}

/// Weighted algebraic circle fit: minimises Σ w·(x² + y² + D·x + E·y + F)².
fn algebraic_fit(points: &[(f64, f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 3 {
        return None;
    }
    // Centre coordinates for conditioning.
    let wsum: f64 = points.iter().map(|p| p.2).sum();
    let mx = points.iter().map(|p| p.0 * p.2).sum::<f64>() / wsum;
    let my = points.iter().map(|p| p.1 * p.2).sum::<f64>() / wsum;
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for &(x, y, w) in points {
        let (x, y) = (x - mx, y - my);
        let row = Vector3::new(x, y, 1.0);
        a += w * row * row.transpose();
        b -= w * (x * x + y * y) * row;
    }
    let sol = a.lu().solve(&b)?;
    let cx = -sol[0] / 2.0;
    let cy = -sol[1] / 2.0;
    let r2 = cx * cx + cy * cy - sol[2];
    (r2 > 0.0).then(|| (cx + mx, cy + my, r2.sqrt()))
}

/// Gauss-Newton refinement of orthogonal distances, Σ w·(|p - c| - r)².
fn geometric_fit(points: &[(f64, f64, f64)], start: (f64, f64, f64)) -> Option<(f64, f64, f64)> {
    let (mut cx, mut cy, mut r) = start;
    for _ in 0..50 {
        let mut a = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for &(x, y, w) in points {
            let (dx, dy) = (x - cx, y - cy);
            let d = dx.hypot(dy);
            if d < 1e-9 {
                continue;
            }
            // Residual d - r; its gradient w.r.t. (cx, cy, r).
            let j = Vector3::new(-dx / d, -dy / d, -1.0);
            a += w * j * j.transpose();
            b -= w * (d - r) * j;
        }
        let step = a.lu().solve(&b)?;
        cx += step[0];
        cy += step[1];
        r += step[2];
        if !(cx.is_finite() && cy.is_finite() && r > 0.0) {
            return None;
        }
        if step.norm() < 1e-6 {
            break;
        }
    }
    Some((cx, cy, r))
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> Option<f64> {
    if x < 0.0 || y < 0.0 {
        return None;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = img.get(x0, y0)? * (1.0 - fx) + img.get(x0 + 1, y0)? * fx;
    let bottom = img.get(x0, y0 + 1)? * (1.0 - fx) + img.get(x0 + 1, y0 + 1)? * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Half-width of the radial profile sampled across a boundary, pixels.
const PROFILE_SPAN: f64 = 1.5;
const PROFILE_STEP: f64 = 0.25;

/// Sub-pixel boundary points of a circle near `(cx, cy, r)`: along each ray the
/// profile's crossing of the midpoint between its inner and outer levels.
/// Rays touching invalid pixels are skipped; weights are the step contrast.
fn boundary_points(img: &GrayImage, cx: f64, cy: f64, r: f64) -> Vec<(f64, f64, f64)> {
    let rays = (2.0 * std::f64::consts::TAU * r).round().max(16.0) as usize;
    let n = (2.0 * PROFILE_SPAN / PROFILE_STEP).round() as usize + 1;
    let mut points = Vec::new();
    for k in 0..rays {
        let angle = k as f64 / rays as f64 * std::f64::consts::TAU;
        let (ux, uy) = (angle.cos(), angle.sin());
        let radius = |i: usize| r - PROFILE_SPAN + i as f64 * PROFILE_STEP;
        let Some(profile) = (0..n)
            .map(|i| bilinear(img, cx + radius(i) * ux, cy + radius(i) * uy))
            .collect::<Option<Vec<f64>>>()
        else {
            continue;
        };
        let inner = profile[..2].iter().sum::<f64>() / 2.0;
        let outer = profile[n - 2..].iter().sum::<f64>() / 2.0;
        let mid = 0.5 * (inner + outer);
        let crossing = (0..n - 1)
            .filter(|&i| {
                (profile[i] - mid) * (profile[i + 1] - mid) <= 0.0 && profile[i] != profile[i + 1]
            })
            .map(|i| radius(i) + PROFILE_STEP * (mid - profile[i]) / (profile[i + 1] - profile[i]))
            .min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs()));
        if let Some(d) = crossing {
            points.push((cx + d * ux, cy + d * uy, (outer - inner).abs()));
        }
    }
    if points.is_empty() {
        return points;
    }
    let mut contrasts: Vec<f64> = points.iter().map(|p| p.2).collect();
    contrasts.sort_by(f64::total_cmp);
    let floor = 0.5 * contrasts[contrasts.len() / 2];
    points.retain(|p| p.2 > floor && p.2 > 0.0);
    points
}

/// Re-centres a candidate on the sub-pixel boundary of its disk.
fn refine(img: &GrayImage, cx0: f64, cy0: f64, r0: f64) -> Option<(f64, f64, f64)> {
    let (mut cx, mut cy, mut r) = (cx0, cy0, r0);
    for _ in 0..4 {
        let points = boundary_points(img, cx, cy, r);
        if points.len() < 12 {
            return None;
        }
        let (nx, ny, nr) = algebraic_fit(&points).and_then(|c| geometric_fit(&points, c))?;
        let moved = (nx - cx).hypot(ny - cy) + (nr - r).abs();
        (cx, cy, r) = (nx, ny, nr);
        if moved < 0.01 {
            break;
        }
    }
    Some((cx, cy, r))
}

struct Candidate {
    circle: Circle,
    arc: f64,
}

/// Whether Sobel could have produced an edge at `(x, y)`.
fn observable(img: &GrayImage, x: f64, y: f64) -> bool {
    let (x, y) = (x.round(), y.round());
    if x < 1.0 || y < 1.0 || x > (img.width() - 2) as f64 || y > (img.height() - 2) as f64 {
        return false;
    }
    let (x, y) = (x as usize, y as usize);
    (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| img.is_valid(xx, yy)))
}

/// Smallest observable share of a perimeter for coverage to be meaningful.
const MIN_OBSERVABLE: f64 = 0.25;

fn evaluate_candidate(
    img: &GrayImage,
    edges: &[Edge],
    cx0: f64,
    cy0: f64,
    r_lo: usize,
    r_hi: usize,
) -> Option<Candidate> {
    let reach = r_hi as f64 + 1.5;
    let nearby: Vec<(&Edge, f64, f64)> = edges
        .iter()
        .filter_map(|e| {
            let dx = e.x - cx0;
            let dy = e.y - cy0;
            if dx.abs() > reach || dy.abs() > reach {
                return None;
            }
            let d = dx.hypot(dy);
            if d < r_lo as f64 - 1.5 || d > reach || d < 1.0 {
                return None;
            }
            // Only edges whose gradient is roughly radial belong to a circle here.
            let radial = (e.ux * dx + e.uy * dy).abs() / d;
            (radial >= 0.7).then(|| (e, d, dy.atan2(dx)))
        })
        .collect();

    let mut best: Option<(usize, f64, usize)> = None;
    for r in r_lo..=r_hi {
        let rf = r as f64;
        let bins = ((2.0 * std::f64::consts::PI * rf).round() as usize).max(8);
        let mut hit = vec![false; bins];
        let mut count = 0usize;
        for &(_, d, angle) in &nearby {
            if (d - rf).abs() <= 1.0 {
                let b = (((angle + std::f64::consts::PI) / std::f64::consts::TAU) * bins as f64)
                    as usize
                    % bins;
                hit[b] = true;
                count += 1;
            }
        }
        // Coverage counts only the part of the perimeter that could be seen.
        let mut seen = 0usize;
        let mut covered = 0usize;
        for (b, h) in hit.iter().enumerate() {
            let angle =
                (b as f64 + 0.5) / bins as f64 * std::f64::consts::TAU - std::f64::consts::PI;
            if observable(img, cx0 + rf * angle.cos(), cy0 + rf * angle.sin()) {
                seen += 1;
                covered += usize::from(*h);
            } else if *h {
                seen += 1;
                covered += 1;
            }
        }
        let coverage = if (seen as f64) < MIN_OBSERVABLE * bins as f64 {
            0.0
        } else {
            covered as f64 / seen as f64
        };
        let better = match best {
            None => true,
            Some((_, c, n)) => coverage > c + 1e-12 || ((coverage - c).abs() <= 1e-12 && count > n),
        };
        if better {
            best = Some((r, coverage, count));
        }
    }
    let (r, coverage, _) = best?;
    if coverage <= 0.0 {
        return None;
    }
    let (cx, cy, rr) = refine(img, cx0, cy0, r as f64).unwrap_or((cx0, cy0, r as f64));
    // A refit that wanders off the candidate is not trusted.
    let leash = (0.25 * r as f64).max(3.0);
    let (cx, cy, rr) = if (cx - cx0).hypot(cy - cy0) > leash || (rr - r as f64).abs() > leash {
        (cx0, cy0, r as f64)
    } else {
        (cx, cy, rr)
    };
    Some(Candidate {
        circle: Circle {
            index: 0,
            cx,
            cy,
            r: rr,
            support: coverage,
        },
        arc: coverage * r as f64,
    })
}

/// Detects circles in `img`; see the module docs for the algorithm.
pub fn detect_circles(img: &GrayImage, p: &HoughParams) -> Result<RoiSet> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 || img.valid_count() == 0 {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is empty or has no valid pixels"
        )));
    }
    if (w as f64) < 2.0 * p.r_max || (h as f64) < 2.0 * p.r_max {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than 2·r_max = {}",
            2.0 * p.r_max
        )));
    }
    let mut set = RoiSet {
        params: Some(*p),
        ..RoiSet::default()
    };
    let edges = sobel_edges(img, p.edge_threshold);
    if edges.is_empty() {
        return Ok(set);
    }
    let r_lo = p.r_min.ceil().max(1.0) as usize;
    let r_hi = (p.r_max.floor() as usize).max(r_lo);
    let acc = accumulate(&edges, w, h, r_lo, r_hi);
    // A full circle of radius r_min yields roughly 2π·r_min votes per edge ring.
    let min_votes = 0.5 * p.accumulator_threshold * std::f64::consts::TAU * r_lo as f64;
    let peaks = local_maxima(&acc, w, h, min_votes);

    let mut candidates: Vec<Candidate> = peaks
        .iter()
        .filter_map(|&(x, y, _)| evaluate_candidate(img, &edges, x as f64, y as f64, r_lo, r_hi))
        .filter(|c| c.circle.support >= p.accumulator_threshold)
        .filter(|c| {
            let k = &c.circle;
            k.r >= p.r_min - 1.0
                && k.r <= p.r_max + 1.0
                && k.cx - k.r >= -1.0
                && k.cy - k.r >= -1.0
                && k.cx + k.r <= w as f64
                && k.cy + k.r <= h as f64
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.arc
            .total_cmp(&a.arc)
            .then(b.circle.support.total_cmp(&a.circle.support))
            .then(a.circle.cy.total_cmp(&b.circle.cy))
            .then(a.circle.cx.total_cmp(&b.circle.cx))
    });

    let mut accepted: Vec<Circle> = Vec::new();
    for cand in candidates {
        let c = cand.circle;
        let clear = accepted.iter().all(|a| {
            let d = a.center_distance(&c);
            d >= a.r + c.r && d >= p.min_center_dist
        });
        if clear {
            accepted.push(c);
        }
    }
    let n = accepted.len();
    set.circles = number_row_major(accepted);
    set.excluded = vec![0; n];
    Ok(set)
}
