//! Connected-component labeling on voxel grids.

use crate::volume::{Dims, NEIGHBORS_26, NEIGHBORS_6};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity::Six => &NEIGHBORS_6,
            Connectivity::TwentySix => &NEIGHBORS_26,
        }
    }
}

/// Labels voxels where `select(i)` holds. Returns per-voxel labels
/// (0 = unselected, components numbered from 1 in scan order) and the count.
pub fn label_where(dims: Dims, conn: Connectivity, select: impl Fn(usize) -> bool) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; dims.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    let offs = conn.offsets();
    for start in 0..dims.len() {
        if labels[start] != 0 || !select(start) {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let [x, y, z] = dims.coords(i);
            for o in offs {
                let p = [x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]];
                if let Some(j) = dims.checked_index(p) {
                    if labels[j] == 0 && select(j) {
                        labels[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

/// Foreground components of a binary mask.
pub fn label_components(mask: &[u8], dims: Dims, conn: Connectivity) -> (Vec<u32>, usize) {
    label_where(dims, conn, |i| mask[i] != 0)
}

pub fn count_components(mask: &[u8], dims: Dims, conn: Connectivity) -> usize {
    label_components(mask, dims, conn).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_voxels_depend_on_connectivity() {
        let d = Dims::new(3, 3, 3);
        let mut m = vec![0u8; d.len()];
        m[d.index(0, 0, 0)] = 1;
        m[d.index(1, 1, 1)] = 1;
        assert_eq!(count_components(&m, d, Connectivity::TwentySix), 1);
        assert_eq!(count_components(&m, d, Connectivity::Six), 2);
        let (labels, n) = label_components(&m, d, Connectivity::Six);
        assert_eq!(n, 2);
        assert_eq!(labels[d.index(0, 0, 0)], 1);
        assert_eq!(labels[d.index(1, 1, 1)], 2);
    }
}
