//! Minimum-volume enclosing ellipsoid (Khachiyan's barycentric coordinate
//! ascent) and convex-hull membership (Gilbert's distance iteration).

use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::shell::Ellipsoid;
use crate::geometry::Point3;

const MAX_ITERS: usize = 200_000;

/// Smallest covariance eigenvalue, relative to the squared extent, below which
/// a point set is treated as lying in a plane or lower.
const FLAT_TOL: f64 = 1e-8;

/// True when `points` span all three dimensions.
pub fn affinely_full(points: &[Vector3<f64>]) -> bool {
    if points.len() < 4 {
        return false;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut extent2: f64 = 0.0;
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
        extent2 = extent2.max(d.norm_squared());
    }
    cov /= n;
    if extent2 <= 0.0 {
        return false;
    }
    let min_eig = cov.symmetric_eigen().eigenvalues.min();
    min_eig > FLAT_TOL * extent2
}

/// Khachiyan iteration until `max_j M_jj <= (d+1)(1+tol)`. The returned
/// ellipsoid is rescaled so the farthest input point lies exactly on its
/// boundary. Returns `None` for point sets that are not full-dimensional.
pub fn mvee(points: &[Vector3<f64>], tol: f64) -> Option<Ellipsoid> {
    if !affinely_full(points) {
        return None;
    }
    let n = points.len();
    let d = 3.0;
    let lifted: Vec<Vector4<f64>> = points.iter().map(|p| Vector4::new(p.x, p.y, p.z, 1.0)).collect();
    let mut u = vec![1.0 / n as f64; n];
    let mut x = Matrix4::zeros();
    for (q, w) in lifted.iter().zip(&u) {
        x += q * q.transpose() * *w;
    }
    let bound = (d + 1.0) * (1.0 + tol);
    for _ in 0..MAX_ITERS {
        let xinv = x.try_inverse()?;
        let (mut best_j, mut best_m) = (0, f64::NEG_INFINITY);
        for (j, q) in lifted.iter().enumerate() {
            let m = q.dot(&(xinv * q));
            if m > best_m {
                best_m = m;
                best_j = j;
            }
        }
        if best_m <= bound {
            break;
        }
        let step = (best_m - d - 1.0) / ((d + 1.0) * (best_m - 1.0));
        for w in u.iter_mut() {
            *w *= 1.0 - step;
        }
        u[best_j] += step;
        let q = &lifted[best_j];
        x = x * (1.0 - step) + q * q.transpose() * step;
    }

    let center: Vector3<f64> = points.iter().zip(&u).map(|(p, w)| p * *w).sum();
    let mut scatter = Matrix3::zeros();
    for (p, w) in points.iter().zip(&u) {
        scatter += p * p.transpose() * *w;
    }
    scatter -= center * center.transpose();
    let shape = scatter.try_inverse()? / d;
    let c = Point3::from_vector(&center);
    let e = Ellipsoid::new(c, shape).ok()?;
    let worst = points
        .iter()
        .map(|p| e.distance(&Point3::from_vector(p)))
        .fold(0.0, f64::max);
    if !(worst > 0.0) {
        return None;
    }
    Ellipsoid::new(c, e.shape() / worst).ok()
}

/// Drops points that cannot be hull vertices: a vertex is extreme within its
/// axis-aligned column along every axis. Exact coordinate equality is used,
/// so scattered inputs pass through unchanged.
pub fn hull_candidates(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut keep = vec![true; points.len()];
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut extremes: HashMap<(u64, u64), (usize, usize)> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = (p[a].to_bits(), p[b].to_bits());
            let e = extremes.entry(key).or_insert((i, i));
            if p[axis] < points[e.0][axis] {
                e.0 = i;
            }
            if p[axis] > points[e.1][axis] {
                e.1 = i;
            }
        }
        let mut is_extreme = vec![false; points.len()];
        for (lo, hi) in extremes.values() {
            is_extreme[*lo] = true;
            is_extreme[*hi] = true;
        }
        for (k, e) in keep.iter_mut().zip(is_extreme) {
            *k &= e;
        }
    }
    points.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Whether `x` lies in the convex hull of `points` (within `tol` metres).
pub fn in_convex_hull(points: &[Vector3<f64>], x: &Vector3<f64>, tol: f64) -> bool {
    let Some(mut v) = points
        .iter()
        .min_by(|a, b| (*a - x).norm_squared().total_cmp(&(*b - x).norm_squared()))
        .copied()
    else {
        return false;
    };
    let tol2 = tol * tol;
    for _ in 0..5_000 {
        let dir = v - x;
        let dd = dir.norm_squared();
        if dd <= tol2 {
            return true;
        }
        let (w, support) = points
            .iter()
            .map(|p| (p, (p - x).dot(&dir)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if support > 0.0 {
            // Every point lies strictly on the far side of the plane through x.
            return false;
        }
        if dd - support <= 1e-15 {
            return false;
        }
        let e = w - v;
        let t = (-(dir.dot(&e)) / e.norm_squared()).clamp(0.0, 1.0);
        v += e * t;
    }
    (v - x).norm() <= 10.0 * tol
}
