//! Exact Euclidean distance transform (Felzenszwalb-Huttenlocher lower
//! envelope of parabolas, one pass per axis) with anisotropic spacing.

use crate::error::Result;
use crate::volume::{Dims, Spacing, Volume3D};

/// Adds a parabola rooted at `pos` with offset `val` to the lower envelope.
fn push_site(pos: f64, val: f64, h2: f64, sites: &mut Vec<(f64, f64)>, bounds: &mut Vec<f64>) {
    // Abscissa where the parabolas rooted at a and b intersect.
    let meet = |a: (f64, f64), b: (f64, f64)| {
        ((b.1 + h2 * b.0 * b.0) - (a.1 + h2 * a.0 * a.0)) / (2.0 * h2 * (b.0 - a.0))
    };
    while let Some(&last) = sites.last() {
        let s = meet(last, (pos, val));
        if !bounds.is_empty() && s <= bounds[bounds.len() - 1] {
            sites.pop();
            bounds.pop();
        } else {
            bounds.push(s);
            break;
        }
    }
    sites.push((pos, val));
}

/// 1D squared distance transform of `f` sampled at unit steps scaled by `h`.
/// With `virtual_ends`, zero-valued sites sit at positions -1 and n.
fn edt_1d(
    f: &[f64],
    h: f64,
    virtual_ends: bool,
    out: &mut [f64],
    sites: &mut Vec<(f64, f64)>,
    bounds: &mut Vec<f64>,
) {
    let n = f.len();
    let h2 = h * h;
    sites.clear();
    bounds.clear();
    if virtual_ends {
        push_site(-1.0, 0.0, h2, sites, bounds);
    }
    for (i, &v) in f.iter().enumerate() {
        if v.is_finite() {
            push_site(i as f64, v, h2, sites, bounds);
        }
    }
    if virtual_ends {
        push_site(n as f64, 0.0, h2, sites, bounds);
    }
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k < bounds.len() && bounds[k] < qf {
            k += 1;
        }
        let (p, v) = sites[k];
        *o = h2 * (qf - p) * (qf - p) + v;
    }
}

/// Squared distance (mm^2) from every voxel center to the nearest voxel
/// center flagged in `feature`. With `outside_is_feature`, every position
/// outside the grid also counts as a feature voxel.
pub fn squared_edt(feature: &[bool], dims: Dims, spacing: Spacing, outside_is_feature: bool) -> Vec<f64> {
    let mut cur: Vec<f64> = feature
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let extents = dims.as_array();
    let strides = [1, dims.nx, dims.nx * dims.ny];
    let mut line = Vec::new();
    let mut out_line = Vec::new();
    let mut sites = Vec::new();
    let mut bounds = Vec::new();
    for axis in 0..3 {
        let n = extents[axis];
        let stride = strides[axis];
        line.resize(n, 0.0);
        out_line.resize(n, 0.0);
        for start in 0..cur.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = cur[start + k * stride];
            }
            edt_1d(&line, spacing[axis], outside_is_feature, &mut out_line, &mut sites, &mut bounds);
            for (k, &o) in out_line.iter().enumerate() {
                cur[start + k * stride] = o;
            }
        }
    }
    cur
}

/// Distance in mm from each foreground voxel to the nearest background voxel
/// center; background outside the grid. Background voxels get 0.
pub fn distance_transform(vol: &Volume3D) -> Result<Volume3D> {
    let mask = vol.mask()?;
    let feature: Vec<bool> = mask.iter().map(|&m| m == 0).collect();
    let d2 = squared_edt(&feature, vol.dims(), vol.spacing(), true);
    Ok(vol.with_scalar(d2.into_iter().map(|d| d.sqrt() as f32).collect()))
}

/// Distance in mm from every voxel to the nearest foreground voxel of `set`
/// (nothing outside the grid). Infinite when `set` is empty.
pub fn distance_to_set(set: &Volume3D) -> Result<Vec<f64>> {
    let feature: Vec<bool> = set.mask()?.iter().map(|&m| m == 1).collect();
    Ok(squared_edt(&feature, set.dims(), set.spacing(), false)
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(mask: &[u8], dims: Dims, sp: Spacing) -> Vec<f64> {
        let mut out = vec![0.0; mask.len()];
        for i in 0..mask.len() {
            if mask[i] == 0 {
                continue;
            }
            let [x, y, z] = dims.coords(i);
            let mut best = f64::INFINITY;
            // Background voxels inside, plus a one-voxel ring of virtual background.
            for bz in -1..=dims.nz as i64 {
                for by in -1..=dims.ny as i64 {
                    for bx in -1..=dims.nx as i64 {
                        let bg = match dims.checked_index([bx, by, bz]) {
                            Some(j) => mask[j] == 0,
                            None => true,
                        };
                        if bg {
                            let d = ((bx - x as i64) as f64 * sp[0]).powi(2)
                                + ((by - y as i64) as f64 * sp[1]).powi(2)
                                + ((bz - z as i64) as f64 * sp[2]).powi(2);
                            best = best.min(d);
                        }
                    }
                }
            }
            out[i] = best.sqrt();
        }
        out
    }

    #[test]
    fn single_voxel_has_unit_distance() {
        let d = Dims::new(5, 5, 5);
        let mut m = vec![0u8; d.len()];
        m[d.index(2, 2, 2)] = 1;
        let v = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let dt = distance_transform(&v).unwrap();
        assert_eq!(dt.scalar().unwrap()[d.index(2, 2, 2)], 1.0);
        assert_eq!(dt.foreground_count(), 1);
    }

    #[test]
    fn all_foreground_measures_to_virtual_border() {
        let d = Dims::new(6, 4, 3);
        let v = Volume3D::from_mask(d, [1.0; 3], vec![1; d.len()]).unwrap();
        let dt = distance_transform(&v).unwrap();
        for (i, &val) in dt.scalar().unwrap().iter().enumerate() {
            let [x, y, z] = d.coords(i);
            let expect = [x + 1, d.nx - x, y + 1, d.ny - y, z + 1, d.nz - z].into_iter().min().unwrap();
            assert_eq!(val, expect as f32);
        }
    }

    #[test]
    fn ball_center_distance() {
        let d = Dims::new(16, 16, 16);
        let mut m = vec![0u8; d.len()];
        for i in 0..d.len() {
            let [x, y, z] = d.coords(i);
            let r2 = (x as f64 - 8.0).powi(2) + (y as f64 - 8.0).powi(2) + (z as f64 - 8.0).powi(2);
            m[i] = (r2 <= 25.0) as u8;
        }
        let v = Volume3D::from_mask(d, [1.0; 3], m.clone()).unwrap();
        let dt = distance_transform(&v).unwrap();
        let c = dt.scalar().unwrap()[d.index(8, 8, 8)] as f64;
        assert!((c - 5.0).abs() <= 1.0);
        let bf = brute_force(&m, d, [1.0; 3]);
        assert!((bf[d.index(8, 8, 8)] - c).abs() < 1e-6);
    }

    #[test]
    fn distance_to_empty_set_is_infinite() {
        let v = Volume3D::empty_mask(Dims::new(3, 3, 3), [1.0; 3]);
        assert!(distance_to_set(&v).unwrap().iter().all(|d| d.is_infinite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn matches_brute_force(
            n in 2usize..9,
            sp in prop::array::uniform3(0.3f64..2.5),
            bits in prop::collection::vec(0u8..4, 576),
        ) {
            let d = Dims::new(n, n + 1, (n + 2).min(8));
            let m: Vec<u8> = bits.iter().take(d.len()).map(|&b| (b != 0) as u8).collect();
            let v = Volume3D::from_mask(d, sp, m.clone()).unwrap();
            let dt = distance_transform(&v).unwrap();
            let bf = brute_force(&m, d, sp);
            for (a, b) in dt.scalar().unwrap().iter().zip(&bf) {
                prop_assert!((*a as f64 - b).abs() < 1e-4);
            }
        }
    }
}
