//! Topology and overlap metrics for a prediction / reference pair.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::labeling::{count_components, label_where, Connectivity};
use crate::morphology::{distance_to_set, inner_boundary};
use crate::skeleton::graph_of_mask;
use crate::volume::{Dims, Volume3D};

pub type Betti = [usize; 3];

fn padded(mask: &[u8], dims: Dims) -> (Vec<u8>, Dims) {
    let pd = Dims::new(dims.nx + 2, dims.ny + 2, dims.nz + 2);
    let mut out = vec![0u8; pd.len()];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            let src = dims.index(0, y, z);
            let dst = pd.index(1, y + 1, z + 1);
            out[dst..dst + dims.nx].copy_from_slice(&mask[src..src + dims.nx]);
        }
    }
    (out, pd)
}

/// Euler characteristic V - E + F - C of the union of closed unit cubes at
/// the foreground voxels.
pub fn euler_characteristic(vol: &Volume3D) -> Result<i64> {
    let mask = vol.mask()?;
    let (m, pd) = padded(mask, vol.dims());
    let at = |x: usize, y: usize, z: usize| m[pd.index(x, y, z)] != 0;
    let (mut v, mut e, mut f) = (0i64, 0i64, 0i64);
    // Lattice point (x, y, z) is the corner shared by voxels x-1..x etc. in
    // padded coordinates; padding guarantees all indices are in range.
    for z in 1..pd.nz {
        for y in 1..pd.ny {
            for x in 1..pd.nx {
                let xs = [x - 1, x];
                let ys = [y - 1, y];
                let zs = [z - 1, z];
                let mut any = false;
                for &a in &xs {
                    for &b in &ys {
                        for &c in &zs {
                            any |= at(a, b, c);
                        }
                    }
                }
                v += any as i64;
                // Edges and faces leaving this lattice point in +x, +y, +z.
                let ex = ys.iter().any(|&b| zs.iter().any(|&c| at(x, b, c)));
                let ey = xs.iter().any(|&a| zs.iter().any(|&c| at(a, y, c)));
                let ez = xs.iter().any(|&a| ys.iter().any(|&b| at(a, b, z)));
                e += ex as i64 + ey as i64 + ez as i64;
                let fxy = zs.iter().any(|&c| at(x, y, c));
                let fxz = ys.iter().any(|&b| at(x, b, z));
                let fyz = xs.iter().any(|&a| at(a, y, z));
                f += fxy as i64 + fxz as i64 + fyz as i64;
            }
        }
    }
    let c = mask.iter().filter(|&&b| b != 0).count() as i64;
    Ok(v - e + f - c)
}

/// (b0, b1, b2) with 26-connected foreground and 6-connected background.
pub fn betti_numbers(vol: &Volume3D) -> Result<Betti> {
    let mask = vol.mask()?;
    let dims = vol.dims();
    let b0 = count_components(mask, dims, Connectivity::TwentySix);
    let (pm, pd) = padded(mask, dims);
    let (_, bg) = label_where(pd, Connectivity::Six, |i| pm[i] == 0);
    // The padded shell is one background component touching the border.
    let b2 = bg.saturating_sub(1);
    let chi = euler_characteristic(vol)?;
    let b1 = b0 as i64 + b2 as i64 - chi;
    Ok([b0, b1.max(0) as usize, b2])
}

pub fn dice(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    a.same_grid(b)?;
    let (ma, mb) = (a.mask()?, b.mask()?);
    let inter = ma.iter().zip(mb).filter(|(&x, &y)| x & y == 1).count();
    let total = a.foreground_count() + b.foreground_count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// |A xor B| / |A or B|; 0 when both are empty.
pub fn sym_diff_ratio(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    a.same_grid(b)?;
    let (ma, mb) = (a.mask()?, b.mask()?);
    let xor = ma.iter().zip(mb).filter(|(&x, &y)| x != y).count();
    let union = ma.iter().zip(mb).filter(|(&x, &y)| x | y == 1).count();
    Ok(if union == 0 { 0.0 } else { xor as f64 / union as f64 })
}

/// Normalized surface distance: fraction of boundary voxels of either mask
/// lying within `tol` mm of the other mask's boundary.
pub fn nsd(a: &Volume3D, b: &Volume3D, tol: f64) -> Result<f64> {
    a.same_grid(b)?;
    let ba = inner_boundary(a)?;
    let bb = inner_boundary(b)?;
    let (na, nb) = (ba.foreground_count(), bb.foreground_count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let da = distance_to_set(&ba)?;
    let db = distance_to_set(&bb)?;
    let close = |set: &Volume3D, dist: &[f64]| {
        set.mask()
            .expect("mask")
            .iter()
            .zip(dist)
            .filter(|(&m, &d)| m == 1 && d <= tol)
            .count()
    };
    let hits = close(&ba, &db) + close(&bb, &da);
    Ok(hits as f64 / (na + nb) as f64)
}

/// Total skeleton length (mm) and branch count of a mask.
pub fn tree_stats(vol: &Volume3D) -> Result<(f64, usize)> {
    if vol.foreground_count() == 0 {
        vol.mask()?;
        return Ok((0.0, 0));
    }
    let g = graph_of_mask(vol)?;
    Ok((g.total_length_mm(), g.branch_count()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParameters {
    pub nsd_tolerance_mm: f64,
    pub foreground_connectivity: u8,
    pub background_connectivity: u8,
    /// Betti dimensions summed into `betti_error`.
    pub betti_error_dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub betti_pred: Betti,
    pub betti_gt: Betti,
    pub betti_error: usize,
    pub length_pred_mm: f64,
    pub length_gt_mm: f64,
    pub lr_error: f64,
    pub branches_pred: usize,
    pub branches_gt: usize,
    pub br_error: f64,
    pub dsc: f64,
    pub nsd: f64,
    pub sym_diff_ratio: f64,
    /// Set when the reference has no skeleton: `lr_error` and `br_error`
    /// then hold absolute differences instead of rates.
    pub rate_errors_absolute: bool,
    pub parameters: MetricParameters,
}

impl TopologyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// All metrics for `pred` against reference `gt`. `tol` defaults to the
/// smallest voxel spacing.
pub fn topology_report(pred: &Volume3D, gt: &Volume3D, tol: Option<f64>) -> Result<TopologyReport> {
    pred.same_grid(gt)?;
    let tol = tol.unwrap_or_else(|| gt.min_spacing());
    let betti_pred = betti_numbers(pred)?;
    let betti_gt = betti_numbers(gt)?;
    let betti_error = (0..2).map(|i| betti_pred[i].abs_diff(betti_gt[i])).sum();
    let (length_pred, branches_pred) = tree_stats(pred)?;
    let (length_gt, branches_gt) = tree_stats(gt)?;
    let absolute = length_gt == 0.0 || branches_gt == 0;
    let (lr_error, br_error) = if absolute {
        (
            (length_pred - length_gt).abs(),
            branches_pred.abs_diff(branches_gt) as f64,
        )
    } else {
        (
            (length_pred - length_gt).abs() / length_gt,
            branches_pred.abs_diff(branches_gt) as f64 / branches_gt as f64,
        )
    };
    Ok(TopologyReport {
        betti_pred,
        betti_gt,
        betti_error,
        length_pred_mm: length_pred,
        length_gt_mm: length_gt,
        lr_error,
        branches_pred,
        branches_gt,
        br_error,
        dsc: dice(pred, gt)?,
        nsd: nsd(pred, gt, tol)?,
        sym_diff_ratio: sym_diff_ratio(pred, gt)?,
        rate_errors_absolute: absolute,
        parameters: MetricParameters {
            nsd_tolerance_mm: tol,
            foreground_connectivity: 26,
            background_connectivity: 6,
            betti_error_dims: vec![0, 1],
        },
    })
}
