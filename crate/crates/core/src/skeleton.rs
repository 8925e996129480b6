//! Skeleton graphs and vessel trees.
//!
//! Skeleton voxels are classified by their 26-neighbor count (one neighbor:
//! endpoint, two: regular, more: bifurcation). Adjacent bifurcation voxels
//! form one junction; branches are chains of regular voxels running between
//! endpoints and junctions.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology;
use crate::volume::{Dims, Spacing, Volume3D, NEIGHBORS_26};

pub type Voxel = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Endpoint,
    Regular,
    Bifurcation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub voxel: Voxel,
    pub kind: NodeKind,
    pub radius_mm: f64,
}

/// A voxel chain between two key nodes (endpoints or junctions), inclusive
/// of the key voxels at both ends. Closed loops repeat their first voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub voxels: Vec<Voxel>,
    pub length_mm: f64,
    /// Key-node ids at the first and last voxel; `None` for a closed loop.
    pub ends: Option<(usize, usize)>,
}

/// Endpoint or junction cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyNode {
    pub voxels: Vec<Voxel>,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphComponent {
    pub id: usize,
    /// Every skeleton voxel of the component, sorted by voxel.
    pub nodes: Vec<SkeletonNode>,
    pub key_nodes: Vec<KeyNode>,
    pub branches: Vec<Branch>,
    pub length_mm: f64,
    /// Independent cycles of the branch graph.
    pub cycles: usize,
}

impl GraphComponent {
    pub fn endpoints(&self) -> impl Iterator<Item = &SkeletonNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint)
    }

    fn smallest_voxel(&self) -> Voxel {
        self.nodes[0].voxel
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDiagnostics {
    /// Voxels removed to make the skeleton one voxel wide.
    pub pruned_voxels: usize,
    /// Junctions made of more than one bifurcation voxel.
    pub thick_junctions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub components: Vec<GraphComponent>,
    pub diagnostics: GraphDiagnostics,
}

impl SkeletonGraph {
    pub fn total_length_mm(&self) -> f64 {
        self.components.iter().map(|c| c.length_mm).sum()
    }

    pub fn branch_count(&self) -> usize {
        self.components.iter().map(|c| c.branches.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[inline]
fn step_length(a: Voxel, b: Voxel, sp: Spacing) -> f64 {
    (0..3)
        .map(|k| ((a[k] as f64 - b[k] as f64) * sp[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn polyline_length(voxels: &[Voxel], sp: Spacing) -> f64 {
    voxels.windows(2).map(|w| step_length(w[0], w[1], sp)).sum()
}

#[inline]
pub fn voxel_to_mm(v: Voxel, sp: Spacing) -> [f64; 3] {
    [v[0] as f64 * sp[0], v[1] as f64 * sp[1], v[2] as f64 * sp[2]]
}

struct SkelSet {
    dims: Dims,
    voxels: HashSet<Voxel>,
}

impl SkelSet {
    fn neighbors(&self, v: Voxel) -> Vec<Voxel> {
        let mut out = Vec::with_capacity(4);
        for o in NEIGHBORS_26 {
            let p = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
            if self.dims.contains(p) {
                let q = [p[0] as usize, p[1] as usize, p[2] as usize];
                if self.voxels.contains(&q) {
                    out.push(q);
                }
            }
        }
        out
    }

    fn neighborhood_bits(&self, v: Voxel) -> u32 {
        let mut nb = 1u32 << 13;
        for o in NEIGHBORS_26 {
            let p = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
            if self.dims.contains(p) && self.voxels.contains(&[p[0] as usize, p[1] as usize, p[2] as usize]) {
                let bit = (o[0] + 1) + 3 * (o[1] + 1) + 9 * (o[2] + 1);
                nb |= 1 << bit;
            }
        }
        nb
    }

    /// Removes redundant voxels (simple, not an end, every neighbor keeps at
    /// least two neighbors) until none remain. Returns the number removed.
    fn prune(&mut self) -> usize {
        let mut removed = 0;
        loop {
            let mut order: Vec<Voxel> = self.voxels.iter().cloned().collect();
            order.sort_by_key(|v| (v[2], v[1], v[0]));
            let mut changed = false;
            for v in order {
                let nbrs = self.neighbors(v);
                if nbrs.len() < 2 {
                    continue;
                }
                if !nbrs.iter().all(|&w| self.neighbors(w).len() >= 3) {
                    continue;
                }
                let bits = self.neighborhood_bits(v);
                if morphology::is_simple_point(bits) {
                    self.voxels.remove(&v);
                    removed += 1;
                    changed = true;
                }
            }
            if !changed {
                return removed;
            }
        }
    }
}

/// Classifies a skeleton mask into per-component graphs of endpoints,
/// junctions and branches. `dt` supplies the radius at every voxel.
pub fn build_graph(skel: &Volume3D, dt: &Volume3D) -> Result<SkeletonGraph> {
    skel.same_grid(dt)?;
    let mask = skel.mask()?;
    let radius = dt.scalar()?;
    let dims = skel.dims();
    let spacing = skel.spacing();
    let mut set = SkelSet {
        dims,
        voxels: mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| dims.coords(i))
            .collect(),
    };
    let pruned = set.prune();
    if pruned > 0 {
        log::debug!("pruned {pruned} redundant skeleton voxels");
    }

    let mut all: Vec<Voxel> = set.voxels.iter().cloned().collect();
    all.sort();
    let mut seen: HashSet<Voxel> = HashSet::new();
    let mut components = Vec::new();
    let mut thick_junctions = 0;
    for &start in &all {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = vec![start];
        seen.insert(start);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for w in set.neighbors(v) {
                if seen.insert(w) {
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort();
        let (c, thick) = trace_component(components.len(), &comp, &set, radius, spacing);
        thick_junctions += thick;
        components.push(c);
    }
    Ok(SkeletonGraph {
        dims: dims.as_array(),
        spacing,
        components,
        diagnostics: GraphDiagnostics {
            pruned_voxels: pruned,
            thick_junctions,
        },
    })
}

fn trace_component(
    id: usize,
    voxels: &[Voxel],
    set: &SkelSet,
    radius: &[f32],
    spacing: Spacing,
) -> (GraphComponent, usize) {
    let dims = set.dims;
    let nbrs: HashMap<Voxel, Vec<Voxel>> = voxels.iter().map(|&v| (v, set.neighbors(v))).collect();
    let kind_of = |v: &Voxel| match nbrs[v].len() {
        0 | 1 => NodeKind::Endpoint,
        2 => NodeKind::Regular,
        _ => NodeKind::Bifurcation,
    };
    let nodes: Vec<SkeletonNode> = voxels
        .iter()
        .map(|v| SkeletonNode {
            voxel: *v,
            kind: kind_of(v),
            radius_mm: radius[dims.index(v[0], v[1], v[2])] as f64,
        })
        .collect();

    // Key nodes: each endpoint alone, bifurcation voxels merged by adjacency.
    let mut key_of: HashMap<Voxel, usize> = HashMap::new();
    let mut key_nodes: Vec<KeyNode> = Vec::new();
    let mut thick = 0;
    for &v in voxels {
        if key_of.contains_key(&v) {
            continue;
        }
        match kind_of(&v) {
            NodeKind::Regular => {}
            NodeKind::Endpoint => {
                key_of.insert(v, key_nodes.len());
                key_nodes.push(KeyNode {
                    voxels: vec![v],
                    kind: NodeKind::Endpoint,
                });
            }
            NodeKind::Bifurcation => {
                let id = key_nodes.len();
                let mut cluster = vec![v];
                key_of.insert(v, id);
                let mut i = 0;
                while i < cluster.len() {
                    for &w in &nbrs[&cluster[i]] {
                        if kind_of(&w) == NodeKind::Bifurcation && !key_of.contains_key(&w) {
                            key_of.insert(w, id);
                            cluster.push(w);
                        }
                    }
                    i += 1;
                }
                cluster.sort();
                if cluster.len() > 1 {
                    thick += 1;
                }
                key_nodes.push(KeyNode {
                    voxels: cluster,
                    kind: NodeKind::Bifurcation,
                });
            }
        }
    }

    let mut branches = Vec::new();
    let mut visited_regular: HashSet<Voxel> = HashSet::new();
    // Direct key-to-key links, one per pair of key nodes.
    let mut direct: BTreeMap<(usize, usize), (Voxel, Voxel)> = BTreeMap::new();
    for &v in voxels {
        let Some(&kv) = key_of.get(&v) else { continue };
        for &u in &nbrs[&v] {
            if let Some(&ku) = key_of.get(&u) {
                if ku != kv {
                    let key = (kv.min(ku), kv.max(ku));
                    let pair = if kv < ku { (v, u) } else { (u, v) };
                    direct.entry(key).and_modify(|p| *p = (*p).min(pair)).or_insert(pair);
                }
                continue;
            }
            if visited_regular.contains(&u) {
                continue;
            }
            let mut chain = vec![v, u];
            visited_regular.insert(u);
            let (mut prev, mut cur) = (v, u);
            loop {
                if key_of.contains_key(&cur) {
                    break;
                }
                let next = nbrs[&cur].iter().copied().find(|&w| w != prev);
                let Some(next) = next else { break };
                if !key_of.contains_key(&next) {
                    visited_regular.insert(next);
                }
                chain.push(next);
                prev = cur;
                cur = next;
            }
            let end = key_of[chain.last().unwrap()];
            branches.push(Branch {
                length_mm: polyline_length(&chain, spacing),
                voxels: chain,
                ends: Some((kv, end)),
            });
        }
    }
    for ((a, b), (va, vb)) in direct {
        let chain = vec![va, vb];
        branches.push(Branch {
            length_mm: polyline_length(&chain, spacing),
            voxels: chain,
            ends: Some((a, b)),
        });
    }
    // Loops made only of regular voxels.
    for &v in voxels {
        if kind_of(&v) != NodeKind::Regular || visited_regular.contains(&v) {
            continue;
        }
        let mut chain = vec![v];
        visited_regular.insert(v);
        let (mut prev, mut cur) = (v, nbrs[&v][0].min(nbrs[&v][1]));
        while cur != v {
            visited_regular.insert(cur);
            chain.push(cur);
            let next = nbrs[&cur].iter().copied().find(|&w| w != prev).unwrap_or(v);
            prev = cur;
            cur = next;
        }
        chain.push(v);
        branches.push(Branch {
            length_mm: polyline_length(&chain, spacing),
            voxels: chain,
            ends: None,
        });
    }

    let length_mm = branches.iter().map(|b| b.length_mm).sum();
    // Cycle rank of the multigraph: E - V + 1 (a bare loop counts as one).
    let edges = branches.len() as i64;
    let verts = key_nodes.len() as i64;
    let loops = branches.iter().filter(|b| b.ends.is_none()).count() as i64;
    let cycles = if key_nodes.is_empty() {
        loops
    } else {
        (edges - verts + 1).max(0)
    } as usize;
    (
        GraphComponent {
            id,
            nodes,
            key_nodes,
            branches,
            length_mm,
            cycles,
        },
        thick,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselTree {
    pub id: usize,
    pub nodes: Vec<SkeletonNode>,
    pub key_nodes: Vec<KeyNode>,
    pub branches: Vec<Branch>,
    pub directed: bool,
    pub root: Option<Voxel>,
    pub total_length_mm: f64,
    pub cycles: usize,
}

impl VesselTree {
    pub fn endpoints(&self) -> Vec<&SkeletonNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint).collect()
    }

    pub fn node(&self, voxel: Voxel) -> Option<&SkeletonNode> {
        self.nodes
            .binary_search_by(|n| n.voxel.cmp(&voxel))
            .ok()
            .map(|i| &self.nodes[i])
    }
}

fn pick_root(c: &GraphComponent) -> Voxel {
    let better = |a: &&SkeletonNode, b: &&SkeletonNode| {
        a.radius_mm
            .partial_cmp(&b.radius_mm)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.voxel.cmp(&a.voxel))
    };
    let ends: Vec<&SkeletonNode> = c.endpoints().collect();
    let pool: Vec<&SkeletonNode> = if ends.is_empty() {
        c.nodes.iter().collect()
    } else {
        ends
    };
    pool.into_iter().max_by(better).expect("nonempty component").voxel
}

/// Orients every branch away from the key node containing `root` (BFS
/// order over the branch graph).
fn orient(c: &GraphComponent, root: Voxel) -> Vec<Branch> {
    let root_key = c.key_nodes.iter().position(|k| k.voxels.contains(&root));
    let mut branches = c.branches.clone();
    let Some(root_key) = root_key else {
        return branches;
    };
    let mut depth = vec![usize::MAX; c.key_nodes.len()];
    depth[root_key] = 0;
    let mut queue = VecDeque::from([root_key]);
    while let Some(k) = queue.pop_front() {
        for b in &c.branches {
            if let Some((a, e)) = b.ends {
                for (from, to) in [(a, e), (e, a)] {
                    if from == k && depth[to] == usize::MAX {
                        depth[to] = depth[k] + 1;
                        queue.push_back(to);
                    }
                }
            }
        }
    }
    for b in &mut branches {
        if let Some((a, e)) = b.ends {
            if depth[e] < depth[a] {
                b.voxels.reverse();
                b.ends = Some((e, a));
            }
        }
    }
    branches
}

/// Splits a graph into the main tree (largest total length, rooted at its
/// thickest endpoint, branches oriented away from the root) and undirected
/// subtrees sorted by decreasing length.
pub fn build_trees(graph: &SkeletonGraph) -> Result<(VesselTree, Vec<VesselTree>)> {
    if graph.components.is_empty() {
        return Err(Error::EmptyInput("skeleton has no voxels".into()));
    }
    let mut order: Vec<&GraphComponent> = graph.components.iter().collect();
    order.sort_by(|a, b| {
        b.length_mm
            .partial_cmp(&a.length_mm)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.smallest_voxel().cmp(&b.smallest_voxel()))
    });
    let mut trees = order.into_iter().enumerate().map(|(id, c)| {
        let directed = id == 0;
        let root = directed.then(|| pick_root(c));
        VesselTree {
            id,
            nodes: c.nodes.clone(),
            key_nodes: c.key_nodes.clone(),
            branches: match root {
                Some(r) => orient(c, r),
                None => c.branches.clone(),
            },
            directed,
            root,
            total_length_mm: c.length_mm,
            cycles: c.cycles,
        }
    });
    let main = trees.next().expect("nonempty");
    Ok((main, trees.collect()))
}

/// Local centerline at a vessel endpoint: the skeleton chain walking inward
/// from the endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointInfo {
    pub tree_id: usize,
    pub endpoint: Voxel,
    pub chain_voxels: Vec<Voxel>,
    /// Chain in mm, starting at the endpoint.
    pub chain_mm: Vec<[f64; 3]>,
    pub radius_mm: f64,
    pub degenerate: bool,
}

impl EndpointInfo {
    pub fn p0(&self) -> [f64; 3] {
        self.chain_mm[0]
    }
}

/// Inward chain of at most `window` voxels from `endpoint`, stopping at
/// (and including) the first junction voxel.
pub fn endpoint_curve(tree: &VesselTree, endpoint: Voxel, window: usize, spacing: Spacing) -> Result<EndpointInfo> {
    let node = tree
        .node(endpoint)
        .filter(|n| n.kind == NodeKind::Endpoint)
        .ok_or_else(|| Error::InvalidParameter(format!("{endpoint:?} is not an endpoint of tree {}", tree.id)))?;
    let mut chain = vec![endpoint];
    let branch = tree
        .branches
        .iter()
        .find(|b| b.voxels.first() == Some(&endpoint) || b.voxels.last() == Some(&endpoint));
    if let Some(b) = branch {
        let seq: Vec<Voxel> = if b.voxels[0] == endpoint {
            b.voxels.clone()
        } else {
            b.voxels.iter().rev().cloned().collect()
        };
        chain = seq.into_iter().take(window.max(1)).collect();
    }
    Ok(EndpointInfo {
        tree_id: tree.id,
        endpoint,
        chain_mm: chain.iter().map(|&v| voxel_to_mm(v, spacing)).collect(),
        degenerate: chain.len() < 2,
        chain_voxels: chain,
        radius_mm: node.radius_mm,
    })
}

/// Thins `vol` and builds its skeleton graph in one step.
pub fn graph_of_mask(vol: &Volume3D) -> Result<SkeletonGraph> {
    let skel = morphology::skeletonize(vol)?;
    let dt = morphology::distance_transform(vol)?;
    build_graph(&skel, &dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_of(dims: Dims, voxels: &[Voxel]) -> Volume3D {
        let mut m = vec![0u8; dims.len()];
        for v in voxels {
            m[dims.index(v[0], v[1], v[2])] = 1;
        }
        Volume3D::from_mask(dims, [1.0; 3], m).unwrap()
    }

    fn unit_dt(dims: Dims) -> Volume3D {
        Volume3D::constant_scalar(dims, [1.0; 3], 1.0)
    }

    fn y_shape() -> Vec<Voxel> {
        let mut v = Vec::new();
        for i in 0..6 {
            v.push([10 - i, 10, 10]); // arm toward -x
            v.push([10 + i, 10 + i, 10]); // diagonal arm
            v.push([10 + i, 10 - i, 10]); // other diagonal arm
        }
        v.sort();
        v.dedup();
        v
    }

    #[test]
    fn straight_path() {
        let d = Dims::new(20, 5, 5);
        let pts: Vec<Voxel> = (2..12).map(|x| [x, 2, 2]).collect();
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        assert_eq!(g.components.len(), 1);
        let c = &g.components[0];
        assert_eq!(c.endpoints().count(), 2);
        assert_eq!(c.nodes.iter().filter(|n| n.kind == NodeKind::Bifurcation).count(), 0);
        assert_eq!(c.branches.len(), 1);
        assert!((c.length_mm - 9.0).abs() < 1e-12);
    }

    #[test]
    fn star_graph() {
        let d = Dims::new(24, 24, 24);
        let g = build_graph(&mask_of(d, &y_shape()), &unit_dt(d)).unwrap();
        let c = &g.components[0];
        assert_eq!(c.endpoints().count(), 3);
        assert_eq!(c.nodes.iter().filter(|n| n.kind == NodeKind::Bifurcation).count(), 1);
        assert_eq!(c.branches.len(), 3);
        assert_eq!(c.cycles, 0);
    }

    #[test]
    fn disjoint_paths() {
        let d = Dims::new(20, 10, 5);
        let mut pts: Vec<Voxel> = (2..12).map(|x| [x, 2, 2]).collect();
        pts.extend((2..8).map(|x| [x, 7, 2]));
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        assert_eq!(g.components.len(), 2);
        assert_eq!(g.branch_count(), 2);
    }

    #[test]
    fn thick_block_is_pruned() {
        let d = Dims::new(20, 6, 6);
        let mut pts: Vec<Voxel> = (2..8).map(|x| [x, 2, 2]).collect();
        pts.extend([[8, 2, 2], [9, 2, 2], [8, 3, 2], [9, 3, 2]]);
        pts.extend((10..15).map(|x| [x, 3, 2]));
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        assert!(g.diagnostics.pruned_voxels > 0);
        let c = &g.components[0];
        assert_eq!(c.endpoints().count(), 2);
        assert_eq!(c.branches.len(), 1);
        assert_eq!(c.cycles, 0);
    }

    #[test]
    fn ring_is_one_loop() {
        let d = Dims::new(10, 10, 3);
        let mut pts = Vec::new();
        for i in 2..7 {
            pts.extend([[i, 2, 1], [i, 6, 1], [2, i, 1], [6, i, 1]]);
        }
        pts.sort();
        pts.dedup();
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        let c = &g.components[0];
        assert_eq!(c.branches.len(), 1);
        assert_eq!(c.cycles, 1);
        // Corners are redundant under 26-adjacency and get pruned.
        assert_eq!(g.diagnostics.pruned_voxels, 4);
        assert!((c.length_mm - (8.0 + 4.0 * 2f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn trees_sorted_by_length_and_rooted_at_thickest_end() {
        let d = Dims::new(120, 12, 3);
        let mut pts: Vec<Voxel> = (0..101).map(|x| [x, 1, 1]).collect();
        pts.extend((0..41).map(|x| [x, 5, 1]));
        pts.extend((0..8).map(|x| [x, 9, 1]));
        let mut dt = vec![1.0f32; d.len()];
        dt[d.index(100, 1, 1)] = 3.0;
        let dt = Volume3D::from_scalar(d, [1.0; 3], dt).unwrap();
        let g = build_graph(&mask_of(d, &pts), &dt).unwrap();
        let (main, subs) = build_trees(&g).unwrap();
        assert!((main.total_length_mm - 100.0).abs() < 1e-9);
        assert_eq!(subs.iter().map(|t| t.total_length_mm.round() as i64).collect::<Vec<_>>(), vec![40, 7]);
        assert!(main.directed && subs.iter().all(|t| !t.directed && t.root.is_none()));
        assert_eq!(main.root, Some([100, 1, 1]));
        assert_eq!(main.branches[0].voxels[0], [100, 1, 1]);
        // Equal radii: smallest voxel wins.
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        assert_eq!(build_trees(&g).unwrap().0.root, Some([0, 1, 1]));
    }

    #[test]
    fn empty_skeleton_is_an_error() {
        let d = Dims::new(4, 4, 4);
        let g = build_graph(&mask_of(d, &[]), &unit_dt(d)).unwrap();
        assert!(matches!(build_trees(&g), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn endpoint_chains() {
        let d = Dims::new(20, 5, 5);
        let pts: Vec<Voxel> = (2..12).map(|x| [x, 2, 2]).collect();
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        let (main, _) = build_trees(&g).unwrap();
        let info = endpoint_curve(&main, [2, 2, 2], 5, [1.0; 3]).unwrap();
        assert_eq!(info.chain_mm.len(), 5);
        assert!(!info.degenerate);
        for (k, p) in info.chain_mm.iter().enumerate() {
            assert_eq!(*p, [2.0 + k as f64, 2.0, 2.0]);
        }
        assert!(endpoint_curve(&main, [5, 2, 2], 5, [1.0; 3]).is_err());

        // Endpoint next to a junction.
        let d = Dims::new(12, 12, 12);
        let mut pts: Vec<Voxel> = (1..6).map(|i| [i, i, i]).collect();
        pts.extend((1..5).map(|i| [5 + i, 5 - i, 5 - i]));
        pts.push([5, 6, 6]);
        let g = build_graph(&mask_of(d, &pts), &unit_dt(d)).unwrap();
        assert_eq!(g.components[0].branches.len(), 3);
        let (main, _) = build_trees(&g).unwrap();
        let info = endpoint_curve(&main, [5, 6, 6], 5, [1.0; 3]).unwrap();
        assert_eq!(info.chain_voxels.len(), 2);
        assert!(!info.degenerate);

        // Isolated voxel.
        let d = Dims::new(5, 5, 5);
        let g = build_graph(&mask_of(d, &[[2, 2, 2]]), &unit_dt(d)).unwrap();
        let (main, _) = build_trees(&g).unwrap();
        assert!(endpoint_curve(&main, [2, 2, 2], 7, [1.0; 3]).unwrap().degenerate);
    }

    #[test]
    fn lengths_add_up_and_build_is_deterministic() {
        let d = Dims::new(30, 30, 30);
        let mut pts = y_shape();
        pts.extend((0..10).map(|x| [x + 15, 25, 3]));
        let m = mask_of(d, &pts);
        let g = build_graph(&m, &unit_dt(d)).unwrap();
        let (main, subs) = build_trees(&g).unwrap();
        let tree_sum: f64 = std::iter::once(&main).chain(&subs).map(|t| t.total_length_mm).sum();
        let branch_sum: f64 = g.components.iter().flat_map(|c| &c.branches).map(|b| b.length_mm).sum();
        assert!((tree_sum - branch_sum).abs() < 1e-9);
        assert_eq!(build_graph(&m, &unit_dt(d)).unwrap(), g);
    }
}
