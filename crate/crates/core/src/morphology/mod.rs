//! Binary morphology on voxel masks.
//!
//! Everything outside the grid counts as background, for both erosion and
//! dilation, so foreground touching the border erodes away.

mod edt;
mod gaussian;
mod thinning;

pub use edt::{distance_transform, distance_to_set, squared_edt};
pub use gaussian::gaussian_smooth;
pub use thinning::skeletonize;
pub(crate) use thinning::is_simple as is_simple_point;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{Dims, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeShape {
    /// Face neighbors; radius r gives the L1 ball.
    Cross6,
    /// Full 3x3x3 block; radius r gives the L-infinity ball.
    Cube26,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub shape: SeShape,
    pub radius: usize,
}

impl StructuringElement {
    pub fn cross6(radius: usize) -> Self {
        StructuringElement {
            shape: SeShape::Cross6,
            radius,
        }
    }

    pub fn cube26(radius: usize) -> Self {
        StructuringElement {
            shape: SeShape::Cube26,
            radius,
        }
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement::cross6(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// One unit step of cross6: min/max over the voxel and its 6 face neighbors.
fn cross_step(src: &[u8], dims: Dims, op: MorphOp) -> Vec<u8> {
    let Dims { nx, ny, nz } = dims;
    let mut out = vec![0u8; src.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = dims.index(x, y, z);
                out[i] = match op {
                    MorphOp::Dilate => {
                        let hit = src[i] == 1
                            || (x > 0 && src[i - 1] == 1)
                            || (x + 1 < nx && src[i + 1] == 1)
                            || (y > 0 && src[i - nx] == 1)
                            || (y + 1 < ny && src[i + nx] == 1)
                            || (z > 0 && src[i - nx * ny] == 1)
                            || (z + 1 < nz && src[i + nx * ny] == 1);
                        hit as u8
                    }
                    MorphOp::Erode => {
                        let keep = src[i] == 1
                            && x > 0
                            && src[i - 1] == 1
                            && x + 1 < nx
                            && src[i + 1] == 1
                            && y > 0
                            && src[i - nx] == 1
                            && y + 1 < ny
                            && src[i + nx] == 1
                            && z > 0
                            && src[i - nx * ny] == 1
                            && z + 1 < nz
                            && src[i + nx * ny] == 1;
                        keep as u8
                    }
                };
            }
        }
    }
    out
}

/// One unit step of cube26, done as three separable 1D passes.
fn cube_step(src: &[u8], dims: Dims, op: MorphOp) -> Vec<u8> {
    let strides = [1, dims.nx, dims.nx * dims.ny];
    let extents = dims.as_array();
    let mut cur = src.to_vec();
    for axis in 0..3 {
        let stride = strides[axis];
        let n = extents[axis];
        let mut next = vec![0u8; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let lo = pos > 0;
            let hi = pos + 1 < n;
            *out = match op {
                MorphOp::Dilate => {
                    (cur[i] == 1 || (lo && cur[i - stride] == 1) || (hi && cur[i + stride] == 1))
                        as u8
                }
                MorphOp::Erode => {
                    (cur[i] == 1 && lo && cur[i - stride] == 1 && hi && cur[i + stride] == 1)
                        as u8
                }
            };
        }
        cur = next;
    }
    cur
}

/// Erosion or dilation of a mask by a structuring element.
pub fn morph(vol: &Volume3D, op: MorphOp, se: StructuringElement) -> Result<Volume3D> {
    let mut cur = vol.mask()?.to_vec();
    let dims = vol.dims();
    for _ in 0..se.radius {
        cur = match se.shape {
            SeShape::Cross6 => cross_step(&cur, dims, op),
            SeShape::Cube26 => cube_step(&cur, dims, op),
        };
    }
    Ok(vol.with_mask(cur))
}

pub fn erode(vol: &Volume3D, se: StructuringElement) -> Result<Volume3D> {
    morph(vol, MorphOp::Erode, se)
}

pub fn dilate(vol: &Volume3D, se: StructuringElement) -> Result<Volume3D> {
    morph(vol, MorphOp::Dilate, se)
}

/// Morphological edge map `|dilate(X) - erode(X)|`, i.e. the set `D \ E`.
pub fn edge_map(vol: &Volume3D, se: StructuringElement) -> Result<Volume3D> {
    let d = dilate(vol, se)?;
    let e = erode(vol, se)?;
    let out = d
        .mask()?
        .iter()
        .zip(e.mask()?)
        .map(|(&a, &b)| (a as i16 - b as i16).unsigned_abs() as u8)
        .collect();
    Ok(vol.with_mask(out))
}

/// Foreground voxels that touch background through a face: `X \ erode(X)`.
pub fn inner_boundary(vol: &Volume3D) -> Result<Volume3D> {
    let e = erode(vol, StructuringElement::cross6(1))?;
    let out = vol
        .mask()?
        .iter()
        .zip(e.mask()?)
        .map(|(&a, &b)| a & (1 - b))
        .collect();
    Ok(vol.with_mask(out))
}
