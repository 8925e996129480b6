//! Topology-preserving parallel thinning in the style of Lee, Kashyap &
//! Chu (1994): six directional subiterations, each collecting border
//! voxels that are simple, Euler invariant and not line ends, then deleting
//! them one by one with a re-check.
//!
//! Neighborhoods are packed into 27-bit masks, bit `i` for offset
//! `(i % 3 - 1, i / 3 % 3 - 1, i / 9 - 1)`; bit 13 is the center voxel.

use std::sync::OnceLock;

use crate::error::Result;
use crate::volume::Volume3D;

const CENTER: usize = 13;

#[inline]
fn offset(i: usize) -> [i64; 3] {
    [(i % 3) as i64 - 1, ((i / 3) % 3) as i64 - 1, (i / 9) as i64 - 1]
}

#[inline]
fn bit(o: [i64; 3]) -> usize {
    ((o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1)) as usize
}

struct Tables {
    /// 26-adjacency among the 26 non-center positions.
    adj26: [u32; 27],
    /// 6-adjacency restricted to the 18-neighborhood.
    adj6_n18: [u32; 27],
    n18: u32,
    faces: u32,
    /// For each vertex / edge / face of the center cube: the other voxels
    /// sharing that cell.
    vertex_cover: [u32; 8],
    edge_cover: [u32; 12],
    face_cover: [u32; 6],
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut adj26 = [0u32; 27];
        let mut adj6_n18 = [0u32; 27];
        let mut n18 = 0u32;
        let mut faces = 0u32;
        for i in 0..27 {
            if i == CENTER {
                continue;
            }
            let a = offset(i);
            let l1: i64 = a.iter().map(|c| c.abs()).sum();
            if l1 <= 2 {
                n18 |= 1 << i;
            }
            if l1 == 1 {
                faces |= 1 << i;
            }
            for j in 0..27 {
                if j == CENTER || j == i {
                    continue;
                }
                let b = offset(j);
                let d: Vec<i64> = (0..3).map(|k| (a[k] - b[k]).abs()).collect();
                if d.iter().all(|&x| x <= 1) {
                    adj26[i] |= 1 << j;
                    if d.iter().sum::<i64>() == 1 {
                        adj6_n18[i] |= 1 << j;
                    }
                }
            }
        }
        for i in 0..27 {
            adj6_n18[i] &= n18;
        }
        // A cell of the center cube is identified by a direction vector whose
        // nonzero components are +-1; the voxels sharing it are the offsets
        // that agree with it on its nonzero components and are 0 or match
        // elsewhere.
        let cover = |cell: [i64; 3]| -> u32 {
            let mut m = 0u32;
            for j in 0..27 {
                if j == CENTER {
                    continue;
                }
                let o = offset(j);
                let ok = (0..3).all(|k| o[k] == 0 || o[k] == cell[k]);
                if ok {
                    m |= 1 << j;
                }
            }
            m
        };
        let mut vertex_cover = [0u32; 8];
        let mut edge_cover = Vec::new();
        let mut face_cover = Vec::new();
        let mut v = 0;
        for z in [-1i64, 0, 1] {
            for y in [-1i64, 0, 1] {
                for x in [-1i64, 0, 1] {
                    let cell = [x, y, z];
                    let nz = cell.iter().filter(|&&c| c != 0).count();
                    match nz {
                        3 => {
                            vertex_cover[v] = cover(cell);
                            v += 1;
                        }
                        2 => edge_cover.push(cover(cell)),
                        1 => face_cover.push(cover(cell)),
                        _ => {}
                    }
                }
            }
        }
        Tables {
            adj26,
            adj6_n18,
            n18,
            faces,
            vertex_cover,
            edge_cover: edge_cover.try_into().expect("12 edges"),
            face_cover: face_cover.try_into().expect("6 faces"),
        }
    })
}

/// Change of the Euler characteristic of the cubical complex when the
/// center voxel is added to the neighborhood `nb` (center bit ignored).
fn euler_delta(nb: u32) -> i32 {
    let t = tables();
    let nb = nb & !(1 << CENTER);
    let v = t.vertex_cover.iter().filter(|&&m| nb & m == 0).count() as i32;
    let e = t.edge_cover.iter().filter(|&&m| nb & m == 0).count() as i32;
    let f = t.face_cover.iter().filter(|&&m| nb & m == 0).count() as i32;
    v - e + f - 1
}

/// Number of components of `set` under the adjacency table `adj`,
/// counting only components that intersect `seeds`.
fn components(set: u32, adj: &[u32; 27], seeds: u32) -> u32 {
    let mut remaining = set;
    let mut count = 0;
    while remaining & seeds != 0 {
        let start = (remaining & seeds).trailing_zeros() as usize;
        let mut frontier = 1u32 << start;
        remaining &= !frontier;
        while frontier != 0 {
            let i = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = adj[i] & remaining;
            remaining &= !next;
            frontier |= next;
        }
        count += 1;
    }
    count
}

/// Simple-point test for (26, 6) connectivity via topological numbers:
/// one 26-component of object in N26*, one 6-component of background in
/// N18 that is 6-adjacent to the center.
pub(crate) fn is_simple(nb: u32) -> bool {
    let t = tables();
    let obj = nb & !(1 << CENTER) & ((1 << 27) - 1);
    if components(obj, &t.adj26, obj) != 1 {
        return false;
    }
    let bg = !nb & t.n18;
    components(bg, &t.adj6_n18, t.faces) == 1
}

pub(crate) fn is_euler_invariant(nb: u32) -> bool {
    euler_delta(nb) == 0
}

struct Padded {
    data: Vec<u8>,
    sx: usize,
    sy: usize,
    offsets: [isize; 27],
}

impl Padded {
    fn new(vol: &Volume3D) -> Result<Self> {
        let mask = vol.mask()?;
        let d = vol.dims();
        let (sx, sy, sz) = (d.nx + 2, d.ny + 2, d.nz + 2);
        let mut data = vec![0u8; sx * sy * sz];
        for z in 0..d.nz {
            for y in 0..d.ny {
                let src = d.index(0, y, z);
                let dst = 1 + sx * ((y + 1) + sy * (z + 1));
                data[dst..dst + d.nx].copy_from_slice(&mask[src..src + d.nx]);
            }
        }
        let mut offsets = [0isize; 27];
        for (i, o) in offsets.iter_mut().enumerate() {
            let [x, y, z] = offset(i);
            *o = x as isize + sx as isize * (y as isize + sy as isize * z as isize);
        }
        Ok(Padded { data, sx, sy, offsets })
    }

    #[inline]
    fn neighborhood(&self, p: usize) -> u32 {
        let mut nb = 0u32;
        for (i, &o) in self.offsets.iter().enumerate() {
            if self.data[(p as isize + o) as usize] != 0 {
                nb |= 1 << i;
            }
        }
        nb
    }

    fn unpad(&self, vol: &Volume3D) -> Vec<u8> {
        let d = vol.dims();
        let mut out = vec![0u8; d.len()];
        for z in 0..d.nz {
            for y in 0..d.ny {
                let dst = d.index(0, y, z);
                let src = 1 + self.sx * ((y + 1) + self.sy * (z + 1));
                out[dst..dst + d.nx].copy_from_slice(&self.data[src..src + d.nx]);
            }
        }
        out
    }
}

/// Thins a mask to a one-voxel-wide 26-connected skeleton that keeps the
/// number of components, tunnels and cavities of the input.
pub fn skeletonize(vol: &Volume3D) -> Result<Volume3D> {
    let mut img = Padded::new(vol)?;
    let mut active: Vec<usize> = img
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    // Subiteration order: up (+z), down, north (-y), south, east (+x), west.
    let borders = [
        bit([0, 0, 1]),
        bit([0, 0, -1]),
        bit([0, -1, 0]),
        bit([0, 1, 0]),
        bit([1, 0, 0]),
        bit([-1, 0, 0]),
    ];
    let mut candidates = Vec::new();
    loop {
        let mut unchanged_borders = 0;
        for &border in &borders {
            let border_off = img.offsets[border];
            candidates.clear();
            for &p in &active {
                if img.data[p] == 0 || img.data[(p as isize + border_off) as usize] != 0 {
                    continue;
                }
                let nb = img.neighborhood(p);
                if (nb & !(1 << CENTER)).count_ones() == 1 {
                    continue;
                }
                if !is_euler_invariant(nb) || !is_simple(nb) {
                    continue;
                }
                candidates.push(p);
            }
            let mut changed = false;
            for &p in &candidates {
                let nb = img.neighborhood(p);
                if is_euler_invariant(nb) && is_simple(nb) {
                    img.data[p] = 0;
                    changed = true;
                }
            }
            if !changed {
                unchanged_borders += 1;
            }
        }
        active.retain(|&p| img.data[p] != 0);
        if unchanged_borders == borders.len() {
            break;
        }
    }
    Ok(vol.with_mask(img.unpad(vol)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, NEIGHBORS_26};

    fn nb_from(offsets: &[[i64; 3]]) -> u32 {
        offsets.iter().fold(1 << CENTER, |m, &o| m | (1 << bit(o)))
    }

    #[test]
    fn euler_delta_basics() {
        // Isolated voxel adds a component.
        assert_eq!(euler_delta(1 << CENTER), 1);
        // Extending a line end by one voxel keeps chi.
        assert_eq!(euler_delta(nb_from(&[[1, 0, 0]])), 0);
        // Bridging two separate voxels merges two components.
        assert_eq!(euler_delta(nb_from(&[[1, 0, 0], [-1, 0, 0]])), -1);
    }

    #[test]
    fn simple_point_classification() {
        // Line interior: not simple.
        assert!(!is_simple(nb_from(&[[1, 0, 0], [-1, 0, 0]])));
        // Line end: simple (but thinning keeps it as an end point).
        assert!(is_simple(nb_from(&[[1, 0, 0]])));
        // Isolated voxel: not simple.
        assert!(!is_simple(1 << CENTER));
        // Fully surrounded voxel: removal creates a cavity.
        assert!(!is_simple((1 << 27) - 1));
        // Corner of an L turn with diagonal shortcut: simple.
        assert!(is_simple(nb_from(&[[1, 0, 0], [0, 1, 0], [1, 1, 0]])));
    }

    #[test]
    fn euler_matches_simple_on_random_neighborhoods() {
        // Simple points are always Euler invariant.
        let mut state = 0x2545F4914F6CDD1Du64;
        for _ in 0..20000 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let nb = (state as u32 & ((1 << 27) - 1)) | (1 << CENTER);
            if is_simple(nb) {
                assert!(is_euler_invariant(nb));
            }
        }
    }

    #[test]
    fn empty_stays_empty() {
        let v = Volume3D::empty_mask(Dims::new(5, 5, 5), [1.0; 3]);
        assert_eq!(skeletonize(&v).unwrap().foreground_count(), 0);
    }

    #[test]
    fn cube_thins_to_short_path() {
        let d = Dims::new(9, 9, 9);
        let mut m = vec![0u8; d.len()];
        for z in 2..7 {
            for y in 2..7 {
                for x in 2..7 {
                    m[d.index(x, y, z)] = 1;
                }
            }
        }
        let v = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let s = skeletonize(&v).unwrap();
        let n = s.foreground_count();
        assert!((1..=5).contains(&n), "{n} voxels left");
        assert_eq!(skeletonize(&s).unwrap(), s);
    }

    #[test]
    fn cylinder_thins_to_path() {
        let d = Dims::new(20, 20, 50);
        let mut m = vec![0u8; d.len()];
        for z in 5..45 {
            for y in 0..20 {
                for x in 0..20 {
                    let r2 = (x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2);
                    if r2 <= 9.0 {
                        m[d.index(x, y, z)] = 1;
                    }
                }
            }
        }
        let v = Volume3D::from_mask(d, [1.0; 3], m).unwrap();
        let s = skeletonize(&v).unwrap();
        let sm = s.mask().unwrap();
        let mut ends = 0;
        for i in 0..d.len() {
            if sm[i] == 0 {
                continue;
            }
            let [x, y, z] = d.coords(i);
            let n = NEIGHBORS_26
                .iter()
                .filter_map(|o| d.checked_index([x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]]))
                .filter(|&j| sm[j] == 1)
                .count();
            assert!(n >= 1 && n <= 2, "voxel {:?} has {n} neighbors", [x, y, z]);
            if n == 1 {
                ends += 1;
            }
        }
        assert_eq!(ends, 2);
        assert_eq!(skeletonize(&s).unwrap(), s);
    }
}
