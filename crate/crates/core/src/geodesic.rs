//! Speed field, fast marching, geodesic backtracking and tube filling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{label_where, Connectivity};
use crate::metrics::betti_numbers;
use crate::morphology::{self, gaussian_smooth, StructuringElement};
use crate::skeleton::Voxel;
use crate::volume::{Dims, Spacing, Volume3D};

/// Isotropic speed F in [delta, 1]; the metric is F^-2 times the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    vol: Volume3D,
    delta: f64,
}

impl SpeedField {
    pub fn volume(&self) -> &Volume3D {
        &self.vol
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.vol.scalar().expect("speed is scalar")[idx] as f64
    }

    /// Uniform speed, mostly for tests.
    pub fn uniform(dims: Dims, spacing: Spacing, value: f32) -> Result<SpeedField> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!("speed must be positive, got {value}")));
        }
        Ok(SpeedField {
            vol: Volume3D::constant_scalar(dims, spacing, value),
            delta: value as f64,
        })
    }
}

/// F = delta + (1 - delta) * smooth(seg, sigma), clamped to [delta, 1].
pub fn build_speed_field(seg: &Volume3D, sigma: f64, delta: f64) -> Result<SpeedField> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    seg.mask()?;
    let smooth = gaussian_smooth(seg, sigma)?;
    let lo = delta as f32;
    let data = smooth
        .scalar()?
        .iter()
        .map(|&g| (lo + (1.0 - lo) * g).clamp(lo, 1.0))
        .collect();
    Ok(SpeedField {
        vol: seg.with_scalar(data),
        delta,
    })
}

/// Axis-aligned voxel box, `hi` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn full(dims: Dims) -> Self {
        VoxelBox {
            lo: [0; 3],
            hi: dims.as_array(),
        }
    }

    /// Bounding box of `a` and `b` grown by `margin_mm` on every side,
    /// clipped to the grid.
    pub fn around(a: Voxel, b: Voxel, margin_mm: f64, dims: Dims, spacing: Spacing) -> Self {
        let ext = dims.as_array();
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for k in 0..3 {
            let m = (margin_mm / spacing[k]).ceil().max(2.0) as usize;
            lo[k] = a[k].min(b[k]).saturating_sub(m);
            hi[k] = (a[k].max(b[k]) + m + 1).min(ext[k]);
        }
        VoxelBox { lo, hi }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.hi[0] - self.lo[0], self.hi[1] - self.lo[1], self.hi[2] - self.lo[2])
    }

    pub fn contains(&self, v: Voxel) -> bool {
        (0..3).all(|k| v[k] >= self.lo[k] && v[k] < self.hi[k])
    }
}

/// Arrival times on a box of the grid; infinite outside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalField {
    pub grid: Dims,
    pub spacing: Spacing,
    pub region: VoxelBox,
    pub source: Voxel,
    times: Vec<f64>,
}

impl ArrivalField {
    pub fn at(&self, v: Voxel) -> f64 {
        if !self.region.contains(v) {
            return f64::INFINITY;
        }
        let d = self.region.dims();
        self.times[d.index(v[0] - self.region.lo[0], v[1] - self.region.lo[1], v[2] - self.region.lo[2])]
    }

    fn at_i64(&self, p: [i64; 3]) -> f64 {
        if p.iter().any(|&c| c < 0) {
            return f64::INFINITY;
        }
        self.at([p[0] as usize, p[1] as usize, p[2] as usize])
    }

    /// Full-grid scalar volume; voxels outside the box hold the largest
    /// finite time.
    pub fn to_volume(&self) -> Volume3D {
        let max = self.times.iter().cloned().filter(|t| t.is_finite()).fold(0.0, f64::max);
        let data = (0..self.grid.len())
            .map(|i| {
                let t = self.at(self.grid.coords(i));
                (if t.is_finite() { t } else { max }) as f32
            })
            .collect();
        Volume3D::from_scalar(self.grid, self.spacing, data).expect("finite times")
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time, then index for determinism.
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Godunov upwind update from the smallest known neighbor time per axis.
fn godunov(mut a: [(f64, f64); 3], f: f64) -> f64 {
    // a[k] = (neighbor time, spacing)
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    let rhs = 1.0 / (f * f);
    let mut u = a[0].0 + a[0].1 / f;
    for m in 2..=3 {
        if !a[m - 1].0.is_finite() || u <= a[m - 1].0 {
            break;
        }
        // Solve sum_k ((u - t_k)/h_k)^2 = 1/f^2 over the first m axes.
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -rhs);
        for &(t, h) in &a[..m] {
            let w = 1.0 / (h * h);
            qa += w;
            qb -= 2.0 * w * t;
            qc += w * t * t;
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            break;
        }
        u = (-qb + disc.sqrt()) / (2.0 * qa);
    }
    u
}

/// Fast marching of |grad u| F = 1 from `source` on the 6-neighbor grid,
/// restricted to `region`. Upwind differences are second order where two
/// known neighbors line up, first order otherwise. Voxels within `init_radius` voxels of the source are seeded
/// with straight-line travel times.
pub fn fast_march_in(speed: &SpeedField, source: Voxel, region: VoxelBox, init_radius: f64) -> Result<ArrivalField> {
    let grid = speed.vol.dims();
    let sp = speed.vol.spacing();
    if !grid.contains([source[0] as i64, source[1] as i64, source[2] as i64]) || !region.contains(source) {
        return Err(Error::InvalidParameter(format!("source {source:?} outside the marching region")));
    }
    let f = speed.vol.scalar()?;
    let bd = region.dims();
    let n = bd.len();
    let gidx = |l: [usize; 3]| grid.index(l[0] + region.lo[0], l[1] + region.lo[1], l[2] + region.lo[2]);
    let local_src = [source[0] - region.lo[0], source[1] - region.lo[1], source[2] - region.lo[2]];
    let f_src = f[grid.index(source[0], source[1], source[2])] as f64;
    let mut times = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    let r = init_radius.max(0.0);
    let ri = r.floor() as i64;
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                if d2 > r * r {
                    continue;
                }
                let l = [local_src[0] as i64 + dx, local_src[1] as i64 + dy, local_src[2] as i64 + dz];
                if let Some(i) = bd.checked_index(l) {
                    let mm = ((dx as f64 * sp[0]).powi(2) + (dy as f64 * sp[1]).powi(2) + (dz as f64 * sp[2]).powi(2)).sqrt();
                    let fv = f[gidx(bd.coords(i))] as f64;
                    times[i] = 2.0 * mm / (f_src + fv);
                    heap.push(Entry(times[i], i));
                }
            }
        }
    }
    while let Some(Entry(t, i)) = heap.pop() {
        if known[i] || t > times[i] {
            continue;
        }
        known[i] = true;
        let c = bd.coords(i);
        for axis in 0..3 {
            for step in [-1i64, 1] {
                let mut p = [c[0] as i64, c[1] as i64, c[2] as i64];
                p[axis] += step;
                let Some(j) = bd.checked_index(p) else { continue };
                if known[j] {
                    continue;
                }
                let pc = bd.coords(j);
                let mut a = [(f64::INFINITY, 1.0); 3];
                for (ax, slot) in a.iter_mut().enumerate() {
                    *slot = (f64::INFINITY, sp[ax]);
                    for s in [-1i64, 1] {
                        let mut q = [pc[0] as i64, pc[1] as i64, pc[2] as i64];
                        q[ax] += s;
                        let Some(k) = bd.checked_index(q).filter(|&k| known[k]) else { continue };
                        let t1 = times[k];
                        q[ax] += s;
                        let t2 = bd.checked_index(q).filter(|&k2| known[k2]).map(|k2| times[k2]);
                        // Second-order one-sided difference (3u - 4t1 + t2) / 2h
                        // written as (u - t') / h'.
                        let cand = match t2 {
                            Some(t2) if t2 <= t1 => ((4.0 * t1 - t2) / 3.0, sp[ax] * 2.0 / 3.0),
                            _ => (t1, sp[ax]),
                        };
                        if cand.0 + cand.1 < slot.0 + slot.1 {
                            *slot = cand;
                        }
                    }
                }
                let u = godunov(a, f[gidx(pc)] as f64);
                if u < times[j] {
                    times[j] = u;
                    heap.push(Entry(u, j));
                }
            }
        }
    }
    Ok(ArrivalField {
        grid,
        spacing: sp,
        region,
        source,
        times,
    })
}

/// Fast marching over the whole grid; returns arrival times as a volume.
pub fn fast_march(speed: &SpeedField, source: Voxel) -> Result<Volume3D> {
    let field = fast_march_in(speed, source, VoxelBox::full(speed.vol.dims()), 2.0)?;
    Ok(field.to_volume())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    /// mm points from the start to the marching source.
    pub points: Vec<[f64; 3]>,
    pub radius_mm: f64,
}

impl GeodesicPath {
    pub fn length_mm(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (0..3).map(|k| (w[1][k] - w[0][k]).powi(2)).sum::<f64>().sqrt())
            .sum()
    }
}

/// Time and gradient (per mm) at a continuous voxel-coordinate position,
/// trilinearly interpolated from central differences at the corners.
fn sample(field: &ArrivalField, pos: [f64; 3]) -> Option<(f64, [f64; 3])> {
    let base = pos.map(|c| c.floor() as i64);
    let w = [pos[0] - base[0] as f64, pos[1] - base[1] as f64, pos[2] - base[2] as f64];
    let mut t = 0.0;
    let mut g = [0.0; 3];
    for corner in 0..8 {
        let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
        let p = [base[0] + off[0] as i64, base[1] + off[1] as i64, base[2] + off[2] as i64];
        let wt: f64 = (0..3).map(|k| if off[k] == 1 { w[k] } else { 1.0 - w[k] }).product();
        if wt == 0.0 {
            continue;
        }
        let tc = field.at_i64(p);
        if !tc.is_finite() {
            return None;
        }
        t += wt * tc;
        for k in 0..3 {
            let (mut lo, mut hi) = (p, p);
            lo[k] -= 1;
            hi[k] += 1;
            let (tl, th) = (field.at_i64(lo), field.at_i64(hi));
            let d = match (tl.is_finite(), th.is_finite()) {
                (true, true) => (th - tl) / 2.0,
                (true, false) => tc - tl,
                (false, true) => th - tc,
                (false, false) => 0.0,
            };
            g[k] += wt * d / field.spacing[k];
        }
    }
    Some((t, g))
}

/// Follows -grad u from `start` to the marching source with midpoint steps
/// of `step` voxels; falls back to discrete steepest descent when the
/// continuous step does not decrease u.
pub fn backtrack_geodesic(field: &ArrivalField, start: Voxel, step: f64, max_steps: usize) -> Result<GeodesicPath> {
    let sp = field.spacing;
    let to_mm = |p: [f64; 3]| [p[0] * sp[0], p[1] * sp[1], p[2] * sp[2]];
    let src = field.source.map(|c| c as f64);
    let h = step * sp.iter().cloned().fold(f64::INFINITY, f64::min);
    let near = |p: [f64; 3]| (0..3).map(|k| ((p[k] - src[k]) * sp[k]).powi(2)).sum::<f64>().sqrt() <= sp.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut pos = start.map(|c| c as f64);
    let mut pts = vec![to_mm(pos)];
    if !field.at(start).is_finite() {
        return Err(Error::InvalidParameter(format!("start {start:?} outside the marching region")));
    }
    let descend = |p: [f64; 3], g: [f64; 3]| -> Option<[f64; 3]> {
        let n = (0..3).map(|k| (g[k] * sp[k]).powi(2)).sum::<f64>().sqrt();
        if n < 1e-12 {
            return None;
        }
        // Step of h mm along -grad in physical space.
        let mut q = p;
        let mm: Vec<f64> = (0..3).map(|k| g[k] * g[k]).collect();
        let gn = mm.iter().sum::<f64>().sqrt();
        for k in 0..3 {
            q[k] -= h * g[k] / gn / sp[k];
        }
        Some(q)
    };
    let mut steps = 0;
    while !near(pos) {
        steps += 1;
        if steps > max_steps {
            return Err(Error::Stagnation { steps, partial: pts });
        }
        let (t0, g0) = sample(field, pos).ok_or_else(|| Error::Stagnation { steps, partial: pts.clone() })?;
        let continuous = descend(pos, g0).and_then(|mid| {
            let half = [0.5 * (pos[0] + mid[0]), 0.5 * (pos[1] + mid[1]), 0.5 * (pos[2] + mid[2])];
            let (_, gm) = sample(field, half)?;
            let next = descend(pos, gm)?;
            let (t1, _) = sample(field, next)?;
            (t1 < t0).then_some(next)
        });
        pos = match continuous {
            Some(next) => next,
            None => {
                // Discrete steepest descent among the 26 neighbors.
                let c = pos.map(|x| x.round() as i64);
                let here = field.at_i64(c);
                let mut best: Option<(f64, [i64; 3])> = None;
                for o in crate::volume::NEIGHBORS_26.iter() {
                    let q = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                    let tq = field.at_i64(q);
                    if tq < here.min(t0) && best.map_or(true, |b| tq < b.0) {
                        best = Some((tq, q));
                    }
                }
                match best {
                    Some((_, q)) => q.map(|x| x as f64),
                    None if here < t0 && c.map(|x| x as f64) != pos => c.map(|x| x as f64),
                    None => return Err(Error::Stagnation { steps, partial: pts }),
                }
            }
        };
        pts.push(to_mm(pos));
    }
    let end = to_mm(src);
    if pts.last() != Some(&end) {
        pts.push(end);
    }
    Ok(GeodesicPath {
        points: pts,
        radius_mm: 0.0,
    })
}

fn point_segment_dist2(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2: f64 = ab.iter().map(|x| x * x).sum();
    let t = if len2 > 0.0 {
        (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (0..3).map(|k| (ap[k] - t * ab[k]).powi(2)).sum()
}

/// `seg` plus every voxel whose center lies within `radius_mm` of the
/// polyline, plus the voxels containing the path points.
pub fn fill_tube(seg: &Volume3D, path: &GeodesicPath, radius_mm: f64) -> Result<Volume3D> {
    let mut out = seg.mask()?.to_vec();
    let dims = seg.dims();
    let sp = seg.spacing();
    let ext = dims.as_array();
    let voxel_of = |p: [f64; 3]| -> [i64; 3] { [0, 1, 2].map(|k| (p[k] / sp[k]).round() as i64) };
    for &p in &path.points {
        if let Some(i) = dims.checked_index(voxel_of(p)) {
            out[i] = 1;
        }
    }
    let r2 = radius_mm * radius_mm;
    let segs: Vec<([f64; 3], [f64; 3])> = if path.points.len() == 1 {
        vec![(path.points[0], path.points[0])]
    } else {
        path.points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segs {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let l = ((a[k].min(b[k]) - radius_mm) / sp[k]).floor().max(0.0);
            let h = ((a[k].max(b[k]) + radius_mm) / sp[k]).ceil().min(ext[k] as f64 - 1.0);
            if h < l {
                lo[k] = 1;
                hi[k] = 0;
            } else {
                lo[k] = l as usize;
                hi[k] = h as usize;
            }
        }
        if (0..3).any(|k| hi[k] < lo[k]) {
            continue;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let c = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                    if point_segment_dist2(c, a, b) <= r2 {
                        out[dims.index(x, y, z)] = 1;
                    }
                }
            }
        }
    }
    Ok(seg.with_mask(out))
}

fn path_segments(path: &GeodesicPath) -> Vec<([f64; 3], [f64; 3])> {
    if path.points.len() == 1 {
        vec![(path.points[0], path.points[0])]
    } else {
        path.points.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Box around the path grown by `reach_mm` plus `pad` voxels.
struct Crop {
    lo: [usize; 3],
    dims: Dims,
}

impl Crop {
    fn around(path: &GeodesicPath, reach_mm: f64, pad: f64, dims: Dims, sp: Spacing) -> Crop {
        let ext = dims.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let (a, b) = path
                .points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[k]), b.max(p[k])));
            lo[k] = ((a - reach_mm) / sp[k] - pad).floor().max(0.0) as usize;
            hi[k] = (((b + reach_mm) / sp[k] + pad).ceil().max(0.0) as usize).min(ext[k] - 1);
        }
        Crop {
            lo,
            dims: Dims::new(hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1),
        }
    }

    fn global(&self, x: usize, y: usize, z: usize) -> [usize; 3] {
        [x + self.lo[0], y + self.lo[1], z + self.lo[2]]
    }

    fn extract(&self, mask: &[u8], dims: Dims) -> Vec<u8> {
        let mut out = vec![0u8; self.dims.len()];
        for z in 0..self.dims.nz {
            for y in 0..self.dims.ny {
                for x in 0..self.dims.nx {
                    let g = self.global(x, y, z);
                    out[self.dims.index(x, y, z)] = mask[dims.index(g[0], g[1], g[2])];
                }
            }
        }
        out
    }
}

/// Closes the mask (cube26 of `se_radius`) near the path and keeps the
/// added voxels within `reach_mm` of it.
pub fn seal_tube(seg: &Volume3D, path: &GeodesicPath, reach_mm: f64, se_radius: usize) -> Result<Volume3D> {
    if path.points.is_empty() || se_radius == 0 {
        return Ok(seg.clone());
    }
    let mask = seg.mask()?;
    let (dims, sp) = (seg.dims(), seg.spacing());
    let crop = Crop::around(path, reach_mm, se_radius as f64 + 1.0, dims, sp);
    let se = StructuringElement::cube26(se_radius);
    let cv = Volume3D::from_mask(crop.dims, sp, crop.extract(mask, dims))?;
    let closed = morphology::erode(&morphology::dilate(&cv, se)?, se)?;
    let closed = closed.mask()?;
    let segs = path_segments(path);
    let r2 = reach_mm * reach_mm;
    let mut out = mask.to_vec();
    for z in 0..crop.dims.nz {
        for y in 0..crop.dims.ny {
            for x in 0..crop.dims.nx {
                if closed[crop.dims.index(x, y, z)] == 0 {
                    continue;
                }
                let v = crop.global(x, y, z);
                let i = dims.index(v[0], v[1], v[2]);
                let c = [0, 1, 2].map(|k| v[k] as f64 * sp[k]);
                if out[i] == 0 && segs.iter().any(|&(a, b)| point_segment_dist2(c, a, b) <= r2) {
                    out[i] = 1;
                }
            }
        }
    }
    Ok(seg.with_mask(out))
}

/// Fills enclosed background pockets (6-components off the volume border)
/// that come within `reach_mm` of the path.
fn fill_pockets(seg: &Volume3D, path: &GeodesicPath, reach_mm: f64) -> Result<Volume3D> {
    let mask = seg.mask()?;
    let (dims, sp) = (seg.dims(), seg.spacing());
    let (labels, n) = label_where(dims, Connectivity::Six, |i| mask[i] == 0);
    let mut open = vec![false; n + 1];
    let ext = dims.as_array();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && !open[l as usize] {
            let v = dims.coords(i);
            open[l as usize] = (0..3).any(|k| v[k] == 0 || v[k] + 1 == ext[k]);
        }
    }
    let crop = Crop::around(path, reach_mm, 1.0, dims, sp);
    let segs = path_segments(path);
    let r2 = reach_mm * reach_mm;
    let mut fill = vec![false; n + 1];
    for z in 0..crop.dims.nz {
        for y in 0..crop.dims.ny {
            for x in 0..crop.dims.nx {
                let v = crop.global(x, y, z);
                let l = labels[dims.index(v[0], v[1], v[2])] as usize;
                if l == 0 || open[l] || fill[l] {
                    continue;
                }
                let c = [0, 1, 2].map(|k| v[k] as f64 * sp[k]);
                fill[l] = segs.iter().any(|&(a, b)| point_segment_dist2(c, a, b) <= r2);
            }
        }
    }
    if !fill.iter().any(|&f| f) {
        return Ok(seg.clone());
    }
    let out = mask
        .iter()
        .zip(&labels)
        .map(|(&m, &l)| m | fill[l as usize] as u8)
        .collect();
    Ok(seg.with_mask(out))
}

/// Tunnels plus cavities of the mask inside the box around the path.
fn local_defects(seg: &Volume3D, path: &GeodesicPath, reach_mm: f64) -> Result<usize> {
    let (dims, sp) = (seg.dims(), seg.spacing());
    let crop = Crop::around(path, reach_mm, 2.0, dims, sp);
    let v = Volume3D::from_mask(crop.dims, sp, crop.extract(seg.mask()?, dims))?;
    let b = betti_numbers(&v)?;
    Ok(b[1] + b[2])
}

/// Tube fill for one connection. Pockets the tube closes off are filled;
/// with `seal_voxels > 0` a closed variant (see [`seal_tube`]) is also
/// tried and kept when it has fewer local tunnels and cavities.
pub fn fill_connection(seg: &Volume3D, path: &GeodesicPath, radius_mm: f64, seal_voxels: usize) -> Result<Volume3D> {
    let reach = radius_mm + (seal_voxels.max(1)) as f64 * seg.min_spacing();
    let plain = fill_pockets(&fill_tube(seg, path, radius_mm)?, path, reach)?;
    if seal_voxels == 0 || path.points.is_empty() {
        return Ok(plain);
    }
    let plain_defects = local_defects(&plain, path, reach)?;
    if plain_defects == 0 {
        return Ok(plain);
    }
    let sealed = fill_pockets(&seal_tube(&plain, path, reach, seal_voxels)?, path, reach)?;
    if local_defects(&sealed, path, reach)? < plain_defects {
        Ok(sealed)
    } else {
        Ok(plain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicParams {
    /// Smoothing of the segmentation for the speed field, mm; `None` uses
    /// twice the smallest spacing.
    pub sigma_mm: Option<f64>,
    pub delta: f64,
    /// Backtracking step in voxels.
    pub step: f64,
    /// Marching box margin as a multiple of the pair distance.
    pub box_margin: f64,
    pub max_steps: usize,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        GeodesicParams {
            sigma_mm: None,
            delta: 0.05,
            step: 0.5,
            box_margin: 1.5,
            max_steps: 100_000,
        }
    }
}

/// Geodesic from `p` to `q` through the speed field, marching in a box
/// around the pair.
pub fn geodesic_between(speed: &SpeedField, p: Voxel, q: Voxel, params: &GeodesicParams) -> Result<GeodesicPath> {
    let sp = speed.vol.spacing();
    let dist = (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * sp[k]).powi(2)).sum::<f64>().sqrt();
    let region = VoxelBox::around(p, q, params.box_margin * dist, speed.vol.dims(), sp);
    let field = fast_march_in(speed, q, region, 2.0)?;
    backtrack_geodesic(&field, p, params.step, params.max_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid(a: [usize; 3], b: [usize; 3]) -> f64 {
        (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn godunov_one_and_three_axes() {
        assert_eq!(godunov([(0.0, 1.0), (f64::INFINITY, 1.0), (f64::INFINITY, 1.0)], 1.0), 1.0);
        // Symmetric three-axis update: 3 (u - t)^2 = 1.
        let u = godunov([(1.0, 1.0); 3], 1.0);
        assert!((u - (1.0 + 1.0 / 3f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn speed_field_limits() {
        let d = Dims::new(12, 12, 12);
        let empty = Volume3D::empty_mask(d, [1.0; 3]);
        let f = build_speed_field(&empty, 2.0, 0.05).unwrap();
        assert!(f.volume().scalar().unwrap().iter().all(|&v| (v - 0.05).abs() < 1e-7));
        let full = Volume3D::from_mask(d, [1.0; 3], vec![1; d.len()]).unwrap();
        let f = build_speed_field(&full, 0.5, 0.05).unwrap();
        assert!(f.volume().scalar().unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(build_speed_field(&empty, 1.0, 0.0).is_err());
        assert!(build_speed_field(&empty, 1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_marching_matches_euclidean() {
        let d = Dims::new(32, 32, 32);
        let f = SpeedField::uniform(d, [1.0; 3], 1.0).unwrap();
        let src = [16, 16, 16];
        let u = fast_march(&f, src).unwrap();
        let t = u.scalar().unwrap();
        let mut worst: f64 = 0.0;
        let mut maxd: f64 = 0.0;
        for i in 0..d.len() {
            let c = d.coords(i);
            let e = euclid(c, src);
            maxd = maxd.max(e);
            worst = worst.max((t[i] as f64 - e).abs());
            if c != src {
                assert!(t[i] > 0.0);
            }
        }
        assert_eq!(t[d.index(16, 16, 16)], 0.0);
        assert!(worst <= 0.03 * maxd, "{worst} vs {maxd}");
        // Doubling the speed halves the times.
        let f2 = SpeedField::uniform(d, [1.0; 3], 2.0).unwrap();
        let u2 = fast_march(&f2, src).unwrap();
        for (a, b) in t.iter().zip(u2.scalar().unwrap()) {
            assert!((a / 2.0 - b).abs() <= 1e-5 * a.max(1.0));
        }
    }

    #[test]
    fn anisotropic_axis_times() {
        let d = Dims::new(20, 10, 10);
        let f = SpeedField::uniform(d, [0.5, 1.0, 2.0], 1.0).unwrap();
        let u = fast_march(&f, [0, 0, 0]).unwrap();
        let t = u.scalar().unwrap();
        assert!((t[d.index(19, 0, 0)] - 9.5).abs() < 0.01 * 9.5);
        assert!((t[d.index(0, 0, 9)] - 18.0).abs() < 0.01 * 18.0);
    }

    #[test]
    fn straight_geodesic_under_uniform_speed() {
        let d = Dims::new(40, 40, 40);
        let f = SpeedField::uniform(d, [1.0; 3], 1.0).unwrap();
        let (p, q) = ([5, 8, 10], [33, 30, 25]);
        let path = geodesic_between(&f, p, q, &GeodesicParams::default()).unwrap();
        let a = [5.0, 8.0, 10.0];
        let b = [33.0, 30.0, 25.0];
        for &pt in &path.points {
            assert!(point_segment_dist2(pt, a, b).sqrt() <= 1.0);
        }
        assert_eq!(path.points[0], a);
        assert_eq!(*path.points.last().unwrap(), b);
        assert!(path.length_mm() >= euclid(p, q) - 1e-9);
        let same = geodesic_between(&f, q, q, &GeodesicParams::default()).unwrap();
        assert_eq!(same.points.len(), 1);
    }

    #[test]
    fn geodesic_prefers_the_corridor() {
        // An L-shaped corridor; the straight line crosses slow space.
        let d = Dims::new(40, 40, 9);
        let mut m = vec![0u8; d.len()];
        for i in 0..d.len() {
            let [x, y, z] = d.coords(i);
            let inz = (2..7).contains(&z);
            if inz && ((3..8).contains(&y) && x >= 3 && x < 36 || (31..36).contains(&x) && y >= 3 && y < 36) {
                m[i] = 1;
            }
        }
        let seg = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let f = build_speed_field(&seg, 1.0, 0.05).unwrap();
        let path = geodesic_between(&f, [5, 5, 4], [33, 33, 4], &GeodesicParams::default()).unwrap();
        let fast = path
            .points
            .iter()
            .filter(|p| {
                let v = [p[0].round() as usize, p[1].round() as usize, p[2].round() as usize];
                f.at(d.index(v[0], v[1], v[2])) >= 0.5
            })
            .count();
        assert!(fast as f64 >= 0.9 * path.points.len() as f64);
    }

    #[test]
    fn box_result_matches_full_grid_inside() {
        let d = Dims::new(30, 30, 30);
        let mut m = vec![0u8; d.len()];
        for x in 5..25 {
            m[d.index(x, 15, 15)] = 1;
        }
        let seg = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let f = build_speed_field(&seg, 2.0, 0.05).unwrap();
        let (p, q) = ([8, 15, 15], [20, 15, 15]);
        let full = geodesic_between(
            &f,
            p,
            q,
            &GeodesicParams {
                box_margin: 100.0,
                ..GeodesicParams::default()
            },
        )
        .unwrap();
        let boxed = geodesic_between(&f, p, q, &GeodesicParams::default()).unwrap();
        assert_eq!(full.points, boxed.points);
    }

    #[test]
    fn tube_filling() {
        let d = Dims::new(30, 30, 30);
        let seg = Volume3D::empty_mask(d, [1.0; 3]);
        let path = GeodesicPath {
            points: vec![[5.0, 15.0, 15.0], [25.0, 15.0, 15.0]],
            radius_mm: 3.0,
        };
        let off = GeodesicPath {
            points: vec![[5.0, 15.3, 15.4], [25.0, 15.3, 15.4]],
            radius_mm: 0.2,
        };
        let thin = fill_tube(&seg, &off, 0.2).unwrap();
        assert_eq!(thin.foreground_count(), 2);
        let tube = fill_tube(&seg, &path, 3.0).unwrap();
        let m = tube.mask().unwrap();
        // Brute-force cross-section count at x = 15.
        let mut expect = 0;
        let mut got = 0;
        for z in 0..30 {
            for y in 0..30 {
                let inside = ((y as f64 - 15.0).powi(2) + (z as f64 - 15.0).powi(2)).sqrt() <= 3.0;
                expect += inside as usize;
                got += m[d.index(15, y, z)] as usize;
            }
        }
        assert_eq!(got, expect);
        assert_eq!(fill_tube(&tube, &path, 3.0).unwrap(), tube);
        let other = Volume3D::from_mask(d, [1.0; 3], (0..d.len()).map(|i| (i % 7 == 0) as u8).collect()).unwrap();
        let filled = fill_tube(&other, &path, 1.5).unwrap();
        assert!(other
            .mask()
            .unwrap()
            .iter()
            .zip(filled.mask().unwrap())
            .all(|(a, b)| a <= b));
    }

    #[test]
    fn connection_fill_closes_pockets_it_creates() {
        // Hollow ball crossed by a thin tube: the tube alone leaves the
        // inside as a cavity wrapped around it.
        let d = Dims::new(31, 31, 31);
        let m = (0..d.len())
            .map(|i| {
                let [x, y, z] = d.coords(i);
                let r = ((x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2) + (z as f64 - 15.0).powi(2)).sqrt();
                (r >= 6.0 && r <= 8.0) as u8
            })
            .collect();
        let shell = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let path = GeodesicPath {
            points: vec![[4.0, 15.0, 15.0], [26.0, 15.0, 15.0]],
            radius_mm: 1.0,
        };
        let plain = fill_tube(&shell, &path, 1.0).unwrap();
        assert_eq!(betti_numbers(&plain).unwrap(), [1, 1, 1]);
        let filled = fill_connection(&shell, &path, 1.0, 1).unwrap();
        assert_eq!(betti_numbers(&filled).unwrap(), [1, 0, 0]);
        assert!(plain.mask().unwrap().iter().zip(filled.mask().unwrap()).all(|(a, b)| a <= b));
        // Nothing outside the ball is touched.
        assert_eq!(filled.mask().unwrap()[d.index(15, 2, 15)], 0);
    }
}
