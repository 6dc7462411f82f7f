//! Points, balls and the linear scans every solver is built from.
//!
//! A [`Dataset`] stores its points in one flat row-major buffer so the
//! per-iteration scans (`O(nd)`) stay cache friendly. Membership in a ball is
//! always the closed-ball test `‖x − θ‖² ≤ r²`; no epsilon slack is applied.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A point in `ℝ^d` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(domain("a point needs at least one coordinate"));
        }
        if let Some(bad) = coords.iter().position(|c| !c.is_finite()) {
            return Err(domain(format!("coordinate {bad} is not finite")));
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        dist2(&self.0, other).sqrt()
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

/// Closed ball `B(center, radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(domain(format!("ball radius must be finite and nonnegative, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        dist2(&self.center, x) <= self.radius * self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }
}

/// An ordered multiset of points sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    coords: Vec<f64>,
}

impl Dataset {
    /// An empty dataset that will receive points of dimension `dim`.
    pub fn with_capacity(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 {
            return Err(domain("dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            coords: Vec::with_capacity(dim.saturating_mul(n)),
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| domain("dataset must contain at least one point"))?;
        let mut ds = Self::with_capacity(first.as_ref().len(), rows.len())?;
        for row in rows {
            ds.push(row.as_ref())?;
        }
        Ok(ds)
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        Self::from_rows(points)
    }

    /// Appends a point, checking dimension and finiteness.
    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(domain("point has a non-finite coordinate"));
        }
        self.coords.extend_from_slice(x);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Self { dim: self.dim, coords }
    }

    /// Keeps the points for which `keep` returns true; returns the dropped indices.
    pub fn retain_points(&mut self, mut keep: impl FnMut(&[f64]) -> bool) -> Vec<usize> {
        let d = self.dim;
        let n = self.len();
        let mut dropped = Vec::new();
        let mut write = 0;
        for i in 0..n {
            let keep_it = keep(&self.coords[i * d..(i + 1) * d]);
            if keep_it {
                if write != i {
                    self.coords.copy_within(i * d..(i + 1) * d, write * d);
                }
                write += 1;
            } else {
                dropped.push(i);
            }
        }
        self.coords.truncate(write * d);
        dropped
    }

    pub(crate) fn check_dim(&self, other: usize) -> Result<()> {
        if other != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other,
            });
        }
        Ok(())
    }

    pub(crate) fn check_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(domain("dataset is empty"));
        }
        Ok(())
    }
}

/// Points strictly outside a ball, with their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncoveredSummary {
    pub count: usize,
    pub mean: Option<Point>,
    pub indices: Vec<usize>,
}

/// Count and displacement sum `Σ (x − θ)` over the points outside `B(θ, r)`.
///
/// This is the allocation-light form of [`uncovered_mean`] used inside the
/// iterative solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct OutsideScan {
    pub count: usize,
    pub displacement_sum: Vec<f64>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Indices of the points strictly outside `b`.
pub fn coverage_gap(p: &Dataset, b: &Ball) -> Result<UncoveredSummary> {
    p.check_dim(b.dim())?;
    let r2 = b.radius * b.radius;
    let indices: Vec<usize> = p
        .iter()
        .enumerate()
        .filter(|(_, x)| dist2(x, &b.center) > r2)
        .map(|(i, _)| i)
        .collect();
    let mean = (!indices.is_empty()).then(|| mean_of(p, &indices));
    Ok(UncoveredSummary {
        count: indices.len(),
        mean,
        indices,
    })
}

/// Number of points strictly outside `B(center, radius)`.
pub fn count_outside(p: &Dataset, center: &[f64], radius: f64) -> usize {
    let r2 = radius * radius;
    p.iter().filter(|x| dist2(x, center) > r2).count()
}

/// Count, mean and indices of the points strictly outside `B(θ, r)`, in one pass.
pub fn uncovered_mean(p: &Dataset, theta: &[f64], r: f64) -> Result<UncoveredSummary> {
    p.check_dim(theta.len())?;
    if !(r >= 0.0) {
        return Err(domain(format!("radius must be nonnegative, got {r}")));
    }
    let r2 = r * r;
    let mut sum = vec![0.0; p.dim()];
    let mut indices = Vec::new();
    for (i, x) in p.iter().enumerate() {
        if dist2(x, theta) > r2 {
            indices.push(i);
            for (s, v) in sum.iter_mut().zip(x) {
                *s += v;
            }
        }
    }
    let count = indices.len();
    let mean = (count > 0).then(|| {
        let inv = 1.0 / count as f64;
        Point::from_vec_unchecked(sum.into_iter().map(|s| s * inv).collect())
    });
    Ok(UncoveredSummary { count, mean, indices })
}

/// One pass computing the count of points outside `B(θ, r)` and `Σ (x − θ)` over them.
pub fn scan_outside(p: &Dataset, theta: &[f64], r: f64) -> OutsideScan {
    let d = p.dim();
    let r2 = r * r;
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for x in p.iter() {
        if dist2(x, theta) > r2 {
            count += 1;
            for ((s, v), t) in sum.iter_mut().zip(x).zip(theta) {
                *s += v - t;
            }
        }
    }
    OutsideScan {
        count,
        displacement_sum: sum,
    }
}

fn mean_of(p: &Dataset, indices: &[usize]) -> Point {
    let mut sum = vec![0.0; p.dim()];
    for &i in indices {
        for (s, v) in sum.iter_mut().zip(p.point(i)) {
            *s += v;
        }
    }
    let inv = 1.0 / indices.len() as f64;
    Point::from_vec_unchecked(sum.into_iter().map(|s| s * inv).collect())
}

/// Euclidean projection of `x` onto `B(center, radius)`.
pub fn project_onto_ball(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let dist = distance(x, center);
    if dist <= radius {
        return x.to_vec();
    }
    let scale = radius / dist;
    center.iter().zip(x).map(|(c, v)| c + (v - c) * scale).collect()
}

/// Result of [`minimum_enclosing_ball`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MebSolution {
    pub ball: Ball,
    /// False when the high-dimension fallback stopped at a `(1 + 1e-6)` approximation.
    pub exact: bool,
    /// Indices of the core set whose enclosing ball was computed exactly.
    pub core_set: Vec<usize>,
}

/// Dimensions above this use the approximate fallback.
pub const EXACT_MEB_MAX_DIM: usize = 64;

const EXACT_REL_TOL: f64 = 1e-12;
const FALLBACK_REL_TOL: f64 = 1e-6;

/// The smallest enclosing ball of `p`.
///
/// Exact (up to floating point) for `d ≤ 64`; above that, see
/// [`minimum_enclosing_ball`] for the flagged fallback.
pub fn exact_meb(p: &Dataset) -> Result<Ball> {
    Ok(minimum_enclosing_ball(p)?.ball)
}

/// Smallest enclosing ball via core-set growth with an exact inner solver.
///
/// The core set starts from the point farthest from `p[0]`. Each round solves
/// the core set exactly (move-to-front with pivoting) and adds the farthest
/// uncovered point of `p`. When no point lies outside the core-set ball, that
/// ball is the minimum enclosing ball of the whole set. The procedure has no
/// randomness, so the oracle is reproducible.
pub fn minimum_enclosing_ball(p: &Dataset) -> Result<MebSolution> {
    p.check_nonempty()?;
    let d = p.dim();
    let exact = d <= EXACT_MEB_MAX_DIM;
    let tol = if exact { EXACT_REL_TOL } else { FALLBACK_REL_TOL };

    let (first, _) = farthest_from(p, p.point(0));
    let mut core: Vec<usize> = vec![first];
    let mut solver = Miniball::new(d);
    loop {
        let pts: Vec<&[f64]> = core.iter().map(|&i| p.point(i)).collect();
        let (center, sqr_r) = solver.solve(&pts);
        let (far, far_d2) = farthest_from(p, &center);
        let slack = sqr_r * (2.0 * tol) + f64::MIN_POSITIVE;
        if far_d2 <= sqr_r + slack || core.contains(&far) {
            let radius = covering_radius(far_d2);
            return Ok(MebSolution {
                ball: Ball {
                    center: Point::from_vec_unchecked(center),
                    radius,
                },
                exact,
                core_set: core,
            });
        }
        core.push(far);
    }
}

/// Smallest `r` with `r * r >= d2`, so the closed-ball test accepts the farthest point.
fn covering_radius(d2: f64) -> f64 {
    let mut r = d2.sqrt();
    while r * r < d2 {
        r = r.next_up();
    }
    r
}

fn farthest_from(p: &Dataset, c: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in p.iter().enumerate() {
        let d2 = dist2(x, c);
        if d2 > best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Exact smallest enclosing ball of a small point set.
///
/// Welzl's move-to-front recursion with pivoting; the support set is built
/// incrementally by orthogonalising the boundary points against the first one.
struct Miniball {
    d: usize,
    fsize: usize,
    q0: Vec<f64>,
    z: Vec<f64>,
    f: Vec<f64>,
    v: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    sqr_r: Vec<f64>,
    current_c: Vec<f64>,
    current_sqr_r: f64,
    order: Vec<usize>,
    support_end: usize,
}

impl Miniball {
    fn new(d: usize) -> Self {
        let m = d + 2;
        Self {
            d,
            fsize: 0,
            q0: vec![0.0; d],
            z: vec![0.0; m],
            f: vec![0.0; m],
            v: vec![vec![0.0; d]; m],
            a: vec![vec![0.0; m]; m],
            c: vec![vec![0.0; d]; m],
            sqr_r: vec![0.0; m],
            current_c: vec![0.0; d],
            current_sqr_r: -1.0,
            order: Vec::new(),
            support_end: 0,
        }
    }

    fn solve(&mut self, pts: &[&[f64]]) -> (Vec<f64>, f64) {
        self.fsize = 0;
        self.current_c.iter_mut().for_each(|c| *c = 0.0);
        self.current_sqr_r = -1.0;
        self.order = (0..pts.len()).collect();
        self.support_end = 0;
        self.pivot_mb(pts);
        (self.current_c.clone(), self.current_sqr_r.max(0.0))
    }

    fn excess(&self, x: &[f64]) -> f64 {
        dist2(x, &self.current_c) - self.current_sqr_r
    }

    fn pivot_mb(&mut self, pts: &[&[f64]]) {
        let n = pts.len();
        self.mtf_mb(pts, 1.min(n));
        loop {
            let mut max_e = 0.0;
            let mut pivot = None;
            for k in 0..n {
                let e = self.excess(pts[self.order[k]]);
                if e > max_e {
                    max_e = e;
                    pivot = Some(k);
                }
            }
            let Some(k) = pivot else { break };
            if max_e <= self.current_sqr_r.max(0.0) * 1e-15 {
                break;
            }
            let old = self.current_sqr_r;
            let idx = self.order[k];
            if !self.push(pts[idx]) {
                break;
            }
            self.mtf_mb(pts, self.support_end);
            self.pop();
            self.move_to_front(k);
            if self.current_sqr_r <= old {
                break;
            }
        }
    }

    fn mtf_mb(&mut self, pts: &[&[f64]], end: usize) {
        self.support_end = 0;
        if self.fsize == self.d + 1 {
            return;
        }
        let mut k = 0;
        while k < end {
            let j = k;
            k += 1;
            let x = pts[self.order[j]];
            if self.excess(x) > 0.0 && self.push(x) {
                self.mtf_mb(pts, j);
                self.pop();
                self.move_to_front(j);
            }
        }
    }

    fn move_to_front(&mut self, j: usize) {
        if self.support_end <= j {
            self.support_end += 1;
        }
        let item = self.order.remove(j);
        self.order.insert(0, item);
    }

    fn push(&mut self, p: &[f64]) -> bool {
        let d = self.d;
        let fs = self.fsize;
        if fs == 0 {
            self.q0.copy_from_slice(p);
            self.c[0].copy_from_slice(p);
            self.sqr_r[0] = 0.0;
        } else {
            for i in 0..d {
                self.v[fs][i] = p[i] - self.q0[i];
            }
            for i in 1..fs {
                self.a[fs][i] = 2.0 / self.z[i] * dot(&self.v[i], &self.v[fs]);
            }
            for i in 1..fs {
                let coef = self.a[fs][i];
                let (head, tail) = self.v.split_at_mut(fs);
                for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                    *t -= coef * h;
                }
            }
            self.z[fs] = 2.0 * norm2(&self.v[fs]);
            if self.z[fs] < 1e-14 * self.current_sqr_r.max(0.0) || self.z[fs] == 0.0 {
                return false;
            }
            let e = dist2(p, &self.c[fs - 1]) - self.sqr_r[fs - 1];
            self.f[fs] = e / self.z[fs];
            for i in 0..d {
                self.c[fs][i] = self.c[fs - 1][i] + self.f[fs] * self.v[fs][i];
            }
            self.sqr_r[fs] = self.sqr_r[fs - 1] + e * self.f[fs] / 2.0;
        }
        self.current_c.copy_from_slice(&self.c[fs]);
        self.current_sqr_r = self.sqr_r[fs];
        self.fsize += 1;
        true
    }

    fn pop(&mut self) {
        self.fsize -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[&[f64]]) -> Dataset {
        Dataset::from_rows(rows).unwrap()
    }

    #[test]
    fn single_point_ball() {
        let b = exact_meb(&ds(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(b.center.coords(), &[1.0, 2.0]);
        assert_eq!(b.radius, 0.0);
    }

    #[test]
    fn diameter_pair() {
        let b = exact_meb(&ds(&[&[0.0, 0.0], &[2.0, 0.0]])).unwrap();
        assert!((b.center[0] - 1.0).abs() < 1e-12 && b.center[1].abs() < 1e-12);
        assert!((b.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle_circumcircle() {
        let s3 = 3f64.sqrt();
        let b = exact_meb(&ds(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, s3]])).unwrap();
        assert!((b.center[0] - 1.0).abs() < 1e-12);
        assert!((b.center[1] - 1.0 / s3).abs() < 1e-12);
        assert!((b.radius - 2.0 / s3).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let empty = Dataset::with_capacity(2, 0).unwrap();
        assert!(matches!(exact_meb(&empty), Err(Error::Domain(_))));
        assert!(Dataset::from_rows::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn coverage_gap_strict_outside() {
        let p = ds(&[&[0.0, 0.0], &[3.0, 0.0]]);
        let b = Ball::new(Point::new(vec![0.0, 0.0]).unwrap(), 1.0).unwrap();
        let s = coverage_gap(&p, &b).unwrap();
        assert_eq!(s.count, 1);
        assert_eq!(s.indices, vec![1]);

        let p = ds(&[&[0.0, 0.0]]);
        let b = Ball::new(Point::origin(2), 0.0).unwrap();
        assert_eq!(coverage_gap(&p, &b).unwrap().count, 0);
    }

    #[test]
    fn uncovered_mean_basic() {
        let p = ds(&[&[2.0, 0.0], &[4.0, 0.0]]);
        let s = uncovered_mean(&p, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.count, 2);
        assert_eq!(s.mean.unwrap().coords(), &[3.0, 0.0]);

        let s = uncovered_mean(&p, &[3.0, 0.0], 5.0).unwrap();
        assert_eq!(s.count, 0);
        assert!(s.mean.is_none());
        assert!(s.indices.is_empty());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ds(&[&[2.0, 0.0]]);
        assert!(matches!(
            uncovered_mean(&p, &[0.0, 0.0, 0.0], 1.0),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn nonfinite_points_rejected() {
        assert!(Point::new(vec![f64::NAN]).is_err());
        let mut p = Dataset::with_capacity(1, 1).unwrap();
        assert!(p.push(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn scan_matches_uncovered_mean() {
        let p = ds(&[&[2.0, 1.0], &[4.0, -1.0], &[0.1, 0.0]]);
        let theta = [0.5, 0.0];
        let scan = scan_outside(&p, &theta, 1.0);
        let s = uncovered_mean(&p, &theta, 1.0).unwrap();
        assert_eq!(scan.count, s.count);
        let mean = s.mean.unwrap();
        for k in 0..2 {
            let expected = (mean[k] - theta[k]) * s.count as f64;
            assert!((scan.displacement_sum[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn retain_points_reports_dropped() {
        let mut p = ds(&[&[0.0], &[5.0], &[1.0], &[-7.0]]);
        let dropped = p.retain_points(|x| x[0].abs() <= 2.0);
        assert_eq!(dropped, vec![1, 3]);
        assert_eq!(p.len(), 2);
        assert_eq!(p.point(1), &[1.0]);
    }

    #[test]
    fn projection_onto_ball() {
        let y = project_onto_ball(&[3.0, 4.0], &[0.0, 0.0], 1.0);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(project_onto_ball(&[0.1, 0.1], &[0.0, 0.0], 1.0), vec![0.1, 0.1]);
    }

    #[test]
    fn duplicate_points_and_collinear_sets() {
        let p = ds(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let b = exact_meb(&p).unwrap();
        assert_eq!(b.radius, 0.0);

        let p = ds(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[4.0, 0.0]]);
        let b = exact_meb(&p).unwrap();
        assert!((b.radius - 2.0).abs() < 1e-12);
        assert!((b.center[0] - 2.0).abs() < 1e-12);
    }
}
