//! Discrete minimal surface spanning two curves that share their endpoints.

use std::collections::HashSet;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::curve::{DiscreteCurve, V3};
use crate::error::{Error, Result};

/// Triangles below this area (mm^2) are treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<V3>,
    pub triangles: Vec<[usize; 3]>,
    /// Fixed (boundary) vertices.
    pub boundary: Vec<bool>,
}

fn tri_area(a: &V3, b: &V3, c: &V3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        tri_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn edge_count(&self) -> usize {
        let mut edges = HashSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        Ok(())
    }
}

fn uniform_samples(c: &DiscreteCurve, n: usize) -> Vec<V3> {
    let l = c.length();
    let mut pts: Vec<V3> = (0..n).map(|i| c.point_at(l * i as f64 / (n - 1) as f64)).collect();
    pts[0] = c.points()[0];
    pts[n - 1] = *c.points().last().unwrap();
    pts
}

fn as_curve(points: &[V3]) -> Result<DiscreteCurve> {
    match DiscreteCurve::new(points.iter().cloned()) {
        Ok(c) => Ok(c),
        // A curve collapsed to one point still spans a (zero-area) strip.
        Err(Error::DegenerateCurve(_)) => DiscreteCurve::new([points[0], points[0] + V3::new(1e-9, 0.0, 0.0)]),
        Err(e) => Err(e),
    }
}

/// Ruled disk between `c1` and `c2`, both running p0 -> q0: `rows`
/// interpolated copies of `n` samples each, with the p0 and q0 columns
/// merged into single vertices.
pub fn ruled_mesh(c1: &[V3], c2: &[V3], n: usize, rows: usize) -> Result<TriMesh> {
    if n < 3 || rows < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 3 and rows >= 2, got {n}, {rows}")));
    }
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::EmptyInput("boundary curve has no points".into()));
    }
    let mismatch = (c1[0] - c2[0]).norm().max((c1[c1.len() - 1] - c2[c2.len() - 1]).norm());
    if mismatch > 1e-6 {
        return Err(Error::EndpointMismatch(mismatch));
    }
    let s1 = uniform_samples(&as_curve(c1)?, n);
    let s2 = uniform_samples(&as_curve(c2)?, n);
    let (p0, q0) = (c1[0], c1[c1.len() - 1]);
    let inner = n - 2;
    let mut vertices = vec![p0, q0];
    let mut boundary = vec![true, true];
    for j in 0..rows {
        let t = j as f64 / (rows - 1) as f64;
        for i in 1..n - 1 {
            vertices.push(s1[i] * (1.0 - t) + s2[i] * t);
            boundary.push(j == 0 || j == rows - 1);
        }
    }
    let vid = |j: usize, i: usize| -> usize {
        if i == 0 {
            0
        } else if i == n - 1 {
            1
        } else {
            2 + j * inner + (i - 1)
        }
    };
    let mut triangles = Vec::new();
    for j in 0..rows - 1 {
        for i in 0..n - 1 {
            let (a, b, c, d) = (vid(j, i), vid(j, i + 1), vid(j + 1, i + 1), vid(j + 1, i));
            if i == 0 {
                triangles.push([a, b, c]);
            } else if i == n - 2 {
                triangles.push([a, b, d]);
            } else {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    Ok(TriMesh {
        vertices,
        triangles,
        boundary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceParams {
    /// Samples per boundary curve.
    pub n: usize,
    /// Interpolated rows between the curves; `None` uses `n`.
    pub rows: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            n: 32,
            rows: None,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurfaceResult {
    pub area: f64,
    pub mesh: TriMesh,
    pub iterations: usize,
    /// Set when more than half of the triangles are degenerate.
    pub degenerate_warning: bool,
    /// Area after each accepted step, starting with the initial mesh.
    pub history: Vec<f64>,
}

fn live_area(mesh: &TriMesh) -> (f64, usize) {
    let mut area = 0.0;
    let mut degenerate = 0;
    for t in 0..mesh.triangles.len() {
        let a = mesh.triangle_area(t);
        if a < DEGENERATE_AREA {
            degenerate += 1;
        } else {
            area += a;
        }
    }
    (area, degenerate)
}

/// Cotangent weights of the current mesh, clamped at zero, as adjacency
/// lists.
fn cotan_weights(mesh: &TriMesh) -> Vec<Vec<(usize, f64)>> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.vertices.len()];
    for tri in &mesh.triangles {
        let p = tri.map(|i| mesh.vertices[i]);
        if (p[1] - p[0]).cross(&(p[2] - p[0])).norm() < 2.0 * DEGENERATE_AREA {
            continue;
        }
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let (e1, e2) = (p[i] - p[k], p[j] - p[k]);
            let cot = e1.dot(&e2) / e1.cross(&e2).norm();
            for (a, b) in [(tri[i], tri[j]), (tri[j], tri[i])] {
                match adj[a].iter_mut().find(|(n, _)| *n == b) {
                    Some(e) => e.1 += 0.5 * cot,
                    None => adj[a].push((b, 0.5 * cot)),
                }
            }
        }
    }
    for list in &mut adj {
        for e in list.iter_mut() {
            e.1 = e.1.max(0.0);
        }
    }
    adj
}

/// Harmonic positions of the interior vertices for the current cotangent
/// weights (one Pinkall-Polthier step), by Jacobi-preconditioned CG.
fn harmonic_step(mesh: &TriMesh) -> Vec<V3> {
    let adj = cotan_weights(mesh);
    let nv = mesh.vertices.len();
    let diag: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
    let free: Vec<bool> = (0..nv).map(|v| !mesh.boundary[v] && diag[v] > 1e-300).collect();
    let apply = |x: &[V3]| -> Vec<V3> {
        (0..nv)
            .map(|v| {
                if !free[v] {
                    return V3::zeros();
                }
                let mut y = x[v] * diag[v];
                for &(n, w) in &adj[v] {
                    if free[n] {
                        y -= x[n] * w;
                    }
                }
                y
            })
            .collect()
    };
    let rhs: Vec<V3> = (0..nv)
        .map(|v| {
            if !free[v] {
                return V3::zeros();
            }
            adj[v]
                .iter()
                .filter(|(n, _)| !free[*n])
                .fold(V3::zeros(), |acc, &(n, w)| acc + mesh.vertices[n] * w)
        })
        .collect();
    let mut x: Vec<V3> = (0..nv)
        .map(|v| if free[v] { mesh.vertices[v] } else { V3::zeros() })
        .collect();
    let ax = apply(&x);
    let mut r: Vec<V3> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let precond = |r: &[V3]| -> Vec<V3> {
        (0..nv)
            .map(|v| if free[v] { r[v] / diag[v] } else { V3::zeros() })
            .collect()
    };
    // Three independent right-hand sides share the matrix; run CG per
    // coordinate in lockstep.
    let dot = |a: &[V3], b: &[V3]| -> V3 {
        a.iter()
            .zip(b)
            .fold(V3::zeros(), |acc, (u, w)| acc + u.component_mul(w))
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let b_norm = dot(&rhs, &rhs).map(f64::sqrt).max().max(1e-300);
    for _ in 0..(4 * nv).max(50) {
        let res = dot(&r, &r).map(f64::sqrt).max();
        if res <= 1e-12 * b_norm {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        let alpha = rz.zip_map(&pap, |a, b| if b > 0.0 { a / b } else { 0.0 });
        for v in 0..nv {
            x[v] += p[v].component_mul(&alpha);
            r[v] -= ap[v].component_mul(&alpha);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new.zip_map(&rz, |a, b| if b > 0.0 { a / b } else { 0.0 });
        for v in 0..nv {
            p[v] = z[v] + p[v].component_mul(&beta);
        }
        rz = rz_new;
    }
    (0..nv)
        .map(|v| if free[v] { x[v] } else { mesh.vertices[v] })
        .collect()
}

/// Relaxes the ruled mesh between `c1` and `c2` towards a minimal surface.
/// Each iteration moves interior vertices toward the harmonic positions
/// for the current cotangent weights, halving the step until the area does
/// not increase.
pub fn min_surface_area(c1: &[V3], c2: &[V3], params: &SurfaceParams) -> Result<SurfaceResult> {
    if !(params.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {}", params.tol)));
    }
    let rows = params.rows.unwrap_or(params.n).max(2);
    let mut mesh = ruled_mesh(c1, c2, params.n, rows)?;
    let (mut area, mut degenerate) = live_area(&mesh);
    let mut history = vec![area];
    let mut iterations = 0;
    while iterations < params.max_iter && area > 0.0 {
        iterations += 1;
        let target = harmonic_step(&mesh);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let mut trial = mesh.clone();
            for (v, goal) in trial.vertices.iter_mut().zip(&target) {
                *v += (goal - *v) * t;
            }
            let (a, deg) = live_area(&trial);
            if a <= area {
                accepted = Some((trial, a, deg));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, a, deg)) = accepted else {
            break;
        };
        let change = (area - a) / area;
        mesh = trial;
        area = a;
        degenerate = deg;
        history.push(area);
        if change < params.tol {
            break;
        }
    }
    let degenerate_warning = 2 * degenerate > mesh.triangles.len();
    if degenerate_warning {
        warn!(
            "{degenerate} of {} surface triangles are degenerate; area from the remainder",
            mesh.triangles.len()
        );
    }
    Ok(SurfaceResult {
        area,
        mesh,
        iterations,
        degenerate_warning,
        history,
    })
}

/// Minimal surface matching order: 1/area, infinite below `a_min`.
pub fn msmo(area: f64, a_min: f64) -> f64 {
    if area < a_min {
        f64::INFINITY
    } else {
        1.0 / area
    }
}
