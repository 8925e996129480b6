//! Synthetic vessel trees with known topology, and fracture injection.

use log::warn;
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curve::V3;
use crate::error::{Error, Result};
use crate::metrics::betti_numbers;
use crate::volume::{Dims, Spacing, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: Spacing,
    /// Bifurcation levels below the root branch.
    pub depth: usize,
    pub radius_root_mm: f64,
    /// Child/parent radius ratio.
    pub taper: f64,
    /// Angle between a child and its parent's end direction, degrees.
    pub branch_angle_deg: (f64, f64),
    pub segment_length_mm: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            dims: [128, 128, 128],
            spacing: [1.0; 3],
            depth: 2,
            radius_root_mm: 4.0,
            taper: 0.75,
            branch_angle_deg: (25.0, 50.0),
            segment_length_mm: (22.0, 34.0),
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("invalid grid {:?} / {:?}", self.dims, self.spacing));
        }
        let min_sp = self.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(self.radius_root_mm >= min_sp) {
            return bad(format!("root radius {} below one voxel", self.radius_root_mm));
        }
        if !(self.taper > 0.0 && self.taper < 1.0) {
            return bad(format!("taper must lie in (0, 1), got {}", self.taper));
        }
        let (a0, a1) = self.branch_angle_deg;
        let (l0, l1) = self.segment_length_mm;
        if !(a0 <= a1 && a0 >= 0.0) || !(l0 <= l1 && l0 > 0.0) {
            return bad("branch angle and length ranges must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBranch {
    pub id: usize,
    pub parent: Option<usize>,
    pub level: usize,
    pub radius_mm: f64,
    pub length_mm: f64,
    /// Centerline samples in mm.
    pub centerline: Vec<[f64; 3]>,
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    /// Draws needed to obtain a tree with Betti numbers (1, 0, 0).
    pub attempts: u64,
    pub branches: Vec<GtBranch>,
    pub branch_count: usize,
    pub total_length_mm: f64,
    pub betti: [usize; 3],
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Points where a branch meets its parent or children.
    /// Branch points with the parent radius there.
    fn junctions(&self) -> Vec<(V3, f64)> {
        self.branches
            .iter()
            .filter_map(|b| b.parent.map(|p| (v3(b.centerline[0]), self.branches[p].radius_mm)))
            .collect()
    }

    fn has_children(&self, id: usize) -> bool {
        self.branches.iter().any(|b| b.parent == Some(id))
    }
}

fn v3(p: [f64; 3]) -> V3 {
    V3::new(p[0], p[1], p[2])
}

fn arr(p: V3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn perpendicular_basis(d: V3) -> (V3, V3) {
    let a = d.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        V3::x()
    } else if a.y <= a.z {
        V3::y()
    } else {
        V3::z()
    };
    let e1 = (axis - d * axis.dot(&d)).normalize();
    (e1, d.cross(&e1))
}

fn rotate_toward(d: V3, toward: V3, angle: f64) -> V3 {
    let axis = Unit::new_normalize(d.cross(&toward));
    (Rotation3::from_axis_angle(&axis, angle) * d).normalize()
}

/// Cubic Hermite samples from `a` to `b` with unit tangents `ta`, `tb`.
fn hermite(a: V3, ta: V3, b: V3, tb: V3, step: f64) -> Vec<V3> {
    let chord = (b - a).norm();
    let (ma, mb) = (ta * chord, tb * chord);
    let n = ((chord * 1.3 / step).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let (t2, t3) = (t * t, t * t * t);
            a * (2.0 * t3 - 3.0 * t2 + 1.0) + ma * (t3 - 2.0 * t2 + t) + b * (-2.0 * t3 + 3.0 * t2) + mb * (t3 - t2)
        })
        .collect()
}

fn polyline_len(p: &[V3]) -> f64 {
    p.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

struct Builder<'a> {
    params: &'a SynthParams,
    rng: ChaCha8Rng,
    extent: V3,
    step: f64,
    branches: Vec<(GtBranch, Vec<V3>)>,
}

impl Builder<'_> {
    fn inside(&self, p: &V3, r: f64) -> bool {
        let m = r + 1.0;
        (0..3).all(|k| p[k] >= m && p[k] <= self.extent[k] - m)
    }

    /// Clear of every existing branch by at least 2 mm; samples near the
    /// shared start are exempt for the parent and siblings.
    fn clear(&self, pts: &[V3], r: f64, parent: Option<usize>) -> bool {
        let start = pts[0];
        self.branches.iter().all(|(b, samples)| {
            let adjacent = Some(b.id) == parent || (b.parent == parent && parent.is_some());
            let skip = if adjacent { 1.5 * (r + b.radius_mm) + 2.0 } else { 0.0 };
            pts.iter()
                .filter(|p| (*p - start).norm() >= skip)
                .all(|p| samples.iter().all(|q| (p - q).norm() >= r + b.radius_mm + 2.0))
        })
    }

    fn grow(&mut self, level: usize, start: V3, dir: V3, radius: f64, parent: Option<usize>) {
        let p = self.params;
        let mut chosen = None;
        let mut last = Vec::new();
        for _ in 0..30 {
            let len = self.rng.gen_range(p.segment_length_mm.0..=p.segment_length_mm.1);
            let (e1, e2) = perpendicular_basis(dir);
            let phi = self.rng.gen_range(0.0..std::f64::consts::TAU);
            let bend = self.rng.gen_range(0.0..15f64).to_radians();
            let side = e1 * phi.cos() + e2 * phi.sin();
            let end_dir = rotate_toward(dir, side, bend);
            let mid_dir = rotate_toward(dir, side, bend / 2.0);
            let pts = hermite(start, dir, start + mid_dir * len, end_dir, self.step);
            let ok = pts.iter().all(|q| self.inside(q, radius)) && self.clear(&pts, radius, parent);
            if ok {
                chosen = Some((pts, end_dir, false));
                break;
            }
            last = pts;
        }
        let (pts, end_dir, clipped) = match chosen {
            Some(c) => c,
            None => {
                let keep: Vec<V3> = last.iter().take_while(|q| self.inside(q, radius)).cloned().collect();
                if keep.len() < 2 || polyline_len(&keep) < 2.0 * radius {
                    warn!("synthetic branch at level {level} could not be placed; dropped");
                    return;
                }
                warn!("synthetic branch at level {level} clipped to the volume");
                let d = (keep[keep.len() - 1] - keep[keep.len() - 2]).normalize();
                (keep, d, true)
            }
        };
        let id = self.branches.len();
        let branch = GtBranch {
            id,
            parent,
            level,
            radius_mm: radius,
            length_mm: polyline_len(&pts),
            centerline: pts.iter().map(|&q| arr(q)).collect(),
            clipped,
        };
        let end = *pts.last().unwrap();
        self.branches.push((branch, pts));
        if level < p.depth && !clipped {
            let min_sp = p.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
            let child_r = (radius * p.taper).max(1.5 * min_sp);
            let (e1, e2) = perpendicular_basis(end_dir);
            let phi = self.rng.gen_range(0.0..std::f64::consts::TAU);
            let side = e1 * phi.cos() + e2 * phi.sin();
            let a1 = self.rng.gen_range(p.branch_angle_deg.0..=p.branch_angle_deg.1).to_radians();
            let a2 = self.rng.gen_range(p.branch_angle_deg.0..=p.branch_angle_deg.1).to_radians();
            let d1 = rotate_toward(end_dir, side, a1);
            let d2 = rotate_toward(end_dir, -side, a2);
            self.grow(level + 1, end, d1, child_r, Some(id));
            self.grow(level + 1, end, d2, child_r, Some(id));
        }
    }
}

fn rasterize(dims: Dims, sp: Spacing, branches: &[GtBranch]) -> Vec<u8> {
    let mut m = vec![0u8; dims.len()];
    let ext = dims.as_array();
    for b in branches {
        let r = b.radius_mm;
        for c in &b.centerline {
            let lo: Vec<usize> = (0..3).map(|k| ((c[k] - r) / sp[k]).floor().max(0.0) as usize).collect();
            let hi: Vec<usize> = (0..3)
                .map(|k| (((c[k] + r) / sp[k]).ceil().max(0.0) as usize).min(ext[k] - 1))
                .collect();
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let d2 = (x as f64 * sp[0] - c[0]).powi(2)
                            + (y as f64 * sp[1] - c[1]).powi(2)
                            + (z as f64 * sp[2] - c[2]).powi(2);
                        if d2 <= r * r {
                            m[dims.index(x, y, z)] = 1;
                        }
                    }
                }
            }
        }
    }
    m
}

const MAX_TREE_ATTEMPTS: u64 = 16;

/// Recursive bifurcating tree rasterized as a union of balls along Hermite
/// centerlines. Deterministic per seed; a draw whose raster is not a single
/// loop-free, cavity-free component is replaced by a redraw from a derived
/// stream.
pub fn generate_tree(params: &SynthParams) -> Result<(Volume3D, GroundTruth)> {
    params.validate()?;
    let dims = Dims::from_array(params.dims);
    let sp = params.spacing;
    let extent = V3::new(
        (dims.nx - 1) as f64 * sp[0],
        (dims.ny - 1) as f64 * sp[1],
        (dims.nz - 1) as f64 * sp[2],
    );
    let min_sp = sp.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut fallback = None;
    for attempt in 0..MAX_TREE_ATTEMPTS {
        let stream = params.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut b = Builder {
            params,
            rng: ChaCha8Rng::seed_from_u64(stream),
            extent,
            step: 0.25 * min_sp,
            branches: Vec::new(),
        };
        let r0 = params.radius_root_mm;
        let start = V3::new(r0 + 3.0 * sp[0], extent.y / 2.0, extent.z / 2.0);
        let (e1, e2) = perpendicular_basis(V3::x());
        let phi = b.rng.gen_range(0.0..std::f64::consts::TAU);
        let tilt = b.rng.gen_range(0.0..10f64).to_radians();
        let dir = rotate_toward(V3::x(), e1 * phi.cos() + e2 * phi.sin(), tilt);
        b.grow(0, start, dir, r0, None);
        let branches: Vec<GtBranch> = b.branches.into_iter().map(|(g, _)| g).collect();
        if branches.is_empty() {
            return Err(Error::InvalidParameter("volume too small for the root branch".into()));
        }
        let vol = Volume3D::from_mask(dims, sp, rasterize(dims, sp, &branches))?;
        let betti = betti_numbers(&vol)?;
        let gt = GroundTruth {
            seed: params.seed,
            attempts: attempt + 1,
            branch_count: branches.len(),
            total_length_mm: branches.iter().map(|b| b.length_mm).sum(),
            branches,
            betti,
        };
        if betti == [1, 0, 0] {
            return Ok((vol, gt));
        }
        fallback.get_or_insert((vol, gt));
    }
    warn!("no loop-free synthetic tree after {MAX_TREE_ATTEMPTS} draws; returning the first");
    Ok(fallback.expect("at least one attempt"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub branch: usize,
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    /// Centerline length inside the cut ball.
    pub removed_length_mm: f64,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutLog {
    pub seed: u64,
    pub requested: usize,
    pub cuts: Vec<Cut>,
}

impl CutLog {
    pub fn removed_length_mm(&self) -> f64 {
        self.cuts.iter().map(|c| c.removed_length_mm).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const MAX_REDRAWS: usize = 20;
const STUMP_VOXELS: f64 = 4.0;

/// Deletes `n` balls (radius uniform in [2, 5] voxels) centered on interior
/// centerline points, each verified to add exactly one 26-component and
/// leave the other Betti numbers alone.
pub fn fracture(vol: &Volume3D, gt: &GroundTruth, n: usize, seed: u64) -> Result<(Volume3D, CutLog)> {
    if n == 0 {
        return Err(Error::InvalidParameter("number of cuts must be >= 1".into()));
    }
    let dims = vol.dims();
    let sp = vol.spacing();
    let vox = vol.min_spacing();
    let mut mask = vol.mask()?.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let junctions = gt.junctions();
    let samples: Vec<(usize, usize)> = gt
        .branches
        .iter()
        .flat_map(|b| (0..b.centerline.len()).map(move |i| (b.id, i)))
        .collect();
    let mut betti = betti_numbers(vol)?;
    let mut cuts: Vec<Cut> = Vec::new();
    for _ in 0..n {
        let mut done = false;
        for attempt in 1..=MAX_REDRAWS {
            let rc = rng.gen_range(2.0..=5.0) * vox;
            // Keep STUMP_VOXELS of skeleton on both sides: thinning
            // retracts a cut end by about a radius, a piece with a rounded
            // free end by its diameter, and a junction swallows the parent
            // radius.
            let stump = STUMP_VOXELS * vox;
            let eligible: Vec<(usize, usize)> = samples
                .iter()
                .copied()
                .filter(|&(bid, si)| {
                    let b = &gt.branches[bid];
                    let c = v3(b.centerline[si]);
                    let near_junction = junctions.iter().any(|(j, rp)| (j - c).norm() < rc + rp + b.radius_mm + stump);
                    let tip = v3(*b.centerline.last().unwrap());
                    let near_tip = !gt.has_children(bid) && (tip - c).norm() < rc + 2.0 * (b.radius_mm + stump);
                    let root_start =
                        b.parent.is_none() && (v3(b.centerline[0]) - c).norm() < rc + 2.0 * (b.radius_mm + stump);
                    let near_cut = cuts.iter().any(|k| (v3(k.center_mm) - c).norm() < rc + k.radius_mm + 2.0 * stump);
                    let near_other = gt.branches.iter().filter(|o| o.id != bid).any(|o| {
                        o.centerline
                            .iter()
                            .any(|q| (v3(*q) - c).norm() < rc + o.radius_mm + vox)
                    });
                    !(near_junction || near_tip || root_start || near_cut || near_other)
                })
                .collect();
            if eligible.is_empty() {
                continue;
            }
            let (bid, si) = eligible[rng.gen_range(0..eligible.len())];
            let b = &gt.branches[bid];
            let c = v3(b.centerline[si]);
            let mut trial = mask.clone();
            let ext = dims.as_array();
            let lo: Vec<usize> = (0..3).map(|k| ((c[k] - rc) / sp[k]).floor().max(0.0) as usize).collect();
            let hi: Vec<usize> = (0..3)
                .map(|k| (((c[k] + rc) / sp[k]).ceil().max(0.0) as usize).min(ext[k] - 1))
                .collect();
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let p = V3::new(x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]);
                        if (p - c).norm() <= rc {
                            trial[dims.index(x, y, z)] = 0;
                        }
                    }
                }
            }
            let trial_vol = vol.with_mask(trial);
            let after = betti_numbers(&trial_vol)?;
            if after != [betti[0] + 1, betti[1], betti[2]] {
                continue;
            }
            let trial = trial_vol.mask()?.to_vec();
            let inside: Vec<bool> = b.centerline.iter().map(|q| (v3(*q) - c).norm() <= rc).collect();
            let removed = b
                .centerline
                .windows(2)
                .zip(inside.windows(2))
                .filter(|(_, f)| f[0] && f[1])
                .map(|(w, _)| (v3(w[1]) - v3(w[0])).norm())
                .sum();
            mask = trial;
            betti = after;
            cuts.push(Cut {
                branch: bid,
                center_mm: arr(c),
                radius_mm: rc,
                removed_length_mm: removed,
                attempts: attempt,
            });
            done = true;
            break;
        }
        if !done {
            warn!("could not place a separating cut after {MAX_REDRAWS} draws");
        }
    }
    Ok((
        vol.with_mask(mask),
        CutLog {
            seed,
            requested: n,
            cuts,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tree_stats;

    fn small(seed: u64, depth: usize) -> SynthParams {
        SynthParams {
            seed,
            dims: [96, 96, 96],
            depth,
            radius_root_mm: 3.0,
            segment_length_mm: (16.0, 26.0),
            ..SynthParams::default()
        }
    }

    #[test]
    fn depth_zero_is_a_single_tube() {
        let (v, gt) = generate_tree(&small(1, 0)).unwrap();
        assert_eq!(gt.branch_count, 1);
        assert_eq!(betti_numbers(&v).unwrap(), [1, 0, 0]);
        assert_eq!(tree_stats(&v).unwrap().1, 1);
    }

    #[test]
    fn depth_two_has_seven_branches() {
        let (v, gt) = generate_tree(&SynthParams::default()).unwrap();
        assert_eq!(gt.branch_count, 7);
        assert_eq!(betti_numbers(&v).unwrap(), [1, 0, 0]);
        let (len, _) = tree_stats(&v).unwrap();
        assert!((len - gt.total_length_mm).abs() / gt.total_length_mm < 0.1, "{len} vs {}", gt.total_length_mm);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_tree(&small(9, 1)).unwrap();
        let b = generate_tree(&small(9, 1)).unwrap();
        assert_eq!(a, b);
        let c = generate_tree(&small(10, 1)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = small(0, 1);
        p.taper = 1.0;
        assert!(generate_tree(&p).is_err());
        let mut p = small(0, 1);
        p.segment_length_mm = (5.0, 4.0);
        assert!(generate_tree(&p).is_err());
    }

    #[test]
    fn single_cut_splits_a_tube() {
        let (v, gt) = generate_tree(&SynthParams {
            segment_length_mm: (50.0, 60.0),
            ..small(3, 0)
        })
        .unwrap();
        let (broken, log) = fracture(&v, &gt, 1, 5).unwrap();
        assert_eq!(log.cuts.len(), 1);
        assert_eq!(betti_numbers(&broken).unwrap()[0], 2);
        assert!(broken.mask().unwrap().iter().zip(v.mask().unwrap()).all(|(a, b)| a <= b));
        let c = &log.cuts[0];
        assert!(c.radius_mm >= 2.0 && c.radius_mm <= 5.0);
        assert!(c.removed_length_mm > 0.0 && c.removed_length_mm <= 2.0 * c.radius_mm + 1e-9);
        assert!(fracture(&v, &gt, 0, 5).is_err());
    }

    #[test]
    fn three_cuts_on_a_tree() {
        let (v, gt) = generate_tree(&SynthParams {
            seed: 4,
            ..SynthParams::default()
        })
        .unwrap();
        let (broken, log) = fracture(&v, &gt, 3, 11).unwrap();
        assert_eq!(betti_numbers(&broken).unwrap()[0], 1 + log.cuts.len());
        assert_eq!(log.cuts.len(), 3);
    }

    #[test]
    fn cut_length_brackets_skeleton_loss() {
        // Stump skeletons retract from each (concave) cut face by about the
        // vessel radius plus a few voxels, so the skeleton loses more than
        // the centerline inside the cut balls.
        for seed in 0..3 {
            let (v, gt) = generate_tree(&SynthParams {
                seed,
                ..SynthParams::default()
            })
            .unwrap();
            let (broken, log) = fracture(&v, &gt, 2, seed).unwrap();
            let loss = tree_stats(&v).unwrap().0 - tree_stats(&broken).unwrap().0;
            let slack: f64 = log.cuts.iter().map(|c| 2.0 * (gt.branches[c.branch].radius_mm + 3.0)).sum();
            assert!(loss >= log.removed_length_mm(), "{loss} {}", log.removed_length_mm());
            assert!(loss <= log.removed_length_mm() + slack, "{loss} {}", log.removed_length_mm());
        }
    }
}
