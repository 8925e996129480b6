//! The repair loop: pair every main-tree endpoint with every subtree
//! endpoint, keep the pairs whose connectors continue both vessel ends
//! (TFD below epsilon), connect the pair with the smallest spanning
//! surface along a geodesic, and absorb the subtree into the main tree.

use std::collections::BTreeMap;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::curve::{self, CanonicalCubic, FrameParams, FrameTransport, TfdParams, TfdReason, V3};
use crate::geodesic::{self, GeodesicParams, SpeedField};
use crate::labeling::{count_components, Connectivity};
use crate::morphology;
use crate::skeleton::{self, EndpointInfo, NodeKind, VesselTree, Voxel};
use crate::surface::{self, SurfaceParams, TriMesh};
use crate::{Result, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairParams {
    /// TFD acceptance threshold.
    pub epsilon: f64,
    /// Pair distance gate, in voxels of the smallest spacing.
    pub d_max_voxels: f64,
    /// Endpoint chain length (voxels) and Frenet fit window (samples).
    pub window: usize,
    /// Curvature below this many 1/voxel counts as straight: the normal of
    /// a voxel staircase fit is noise below roughly this level.
    pub kappa_min_voxel: f64,
    /// Connector targets need frame x above this fraction of the gap.
    pub x_min_ratio: f64,
    pub transport: FrameTransport,
    /// Msmo is infinite below this area (mm^2).
    pub a_min: f64,
    pub surface: SurfaceParams,
    pub geodesic: GeodesicParams,
    /// Re-thin the repaired mask after every connection instead of grafting
    /// the absorbed subtree onto the main tree.
    pub rethin: bool,
    /// Closing radius (voxels) applied around each new tube; 0 disables.
    pub seal_voxels: usize,
}

impl Default for RepairParams {
    fn default() -> Self {
        RepairParams {
            epsilon: std::f64::consts::SQRT_2,
            d_max_voxels: 30.0,
            window: 7,
            kappa_min_voxel: 0.5,
            x_min_ratio: 0.25,
            transport: FrameTransport::FrenetField,
            a_min: 1e-6,
            surface: SurfaceParams::default(),
            geodesic: GeodesicParams::default(),
            rethin: false,
            seal_voxels: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairStatus {
    Accepted,
    RejectedTfd,
    RejectedGeometry,
    RejectedDistance,
    Connected,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub iteration: usize,
    pub path_length_mm: f64,
    pub path_points: usize,
    pub radius_mm: f64,
    pub voxels_added: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    /// Main-tree endpoint.
    pub p0: Voxel,
    /// Subtree endpoint.
    pub q0: Voxel,
    pub subtree: usize,
    pub distance_mm: f64,
    /// Infinite when the pair could not be scored.
    #[serde(with = "json_float::opt")]
    pub tfd: Option<f64>,
    #[serde(with = "json_float::opt")]
    pub d_p: Option<f64>,
    #[serde(with = "json_float::opt")]
    pub d_q: Option<f64>,
    pub area_mm2: Option<f64>,
    #[serde(with = "json_float::opt")]
    pub msmo: Option<f64>,
    pub status: PairStatus,
    pub reason: Option<String>,
    pub connection: Option<Connection>,
}

impl CandidatePair {
    fn key(&self) -> (Voxel, Voxel) {
        (self.p0, self.q0)
    }

    /// Selection order: area, then TFD, then voxel coordinates.
    fn rank(&self) -> (f64, f64, Voxel, Voxel) {
        (
            self.area_mm2.unwrap_or(f64::INFINITY),
            self.tfd.unwrap_or(f64::INFINITY),
            self.p0,
            self.q0,
        )
    }
}

fn rank_cmp(a: &CandidatePair, b: &CandidatePair) -> std::cmp::Ordering {
    let (x, y) = (a.rank(), b.rank());
    x.0.total_cmp(&y.0)
        .then(x.1.total_cmp(&y.1))
        .then(x.2.cmp(&y.2))
        .then(x.3.cmp(&y.3))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pairs_considered: usize,
    pub j_size: usize,
    /// Pairs whose geodesic failed before one succeeded.
    pub failed: Vec<[Voxel; 2]>,
    pub selected: Option<[Voxel; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub id: usize,
    pub length_mm: f64,
    pub endpoints: usize,
    pub root: Option<Voxel>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub skeleton_s: f64,
    pub speed_field_s: f64,
    pub scoring_s: f64,
    pub connecting_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub main_tree: Option<TreeSummary>,
    pub subtrees: Vec<TreeSummary>,
    /// Connected pairs in execution order.
    pub connections: Vec<CandidatePair>,
    pub iterations: Vec<IterationRecord>,
    pub j_sizes: Vec<usize>,
    pub trees_absorbed: Vec<usize>,
    pub trees_unconnected: Vec<usize>,
    /// Every pair scored, last state, sorted by (p0, q0).
    pub candidates: Vec<CandidatePair>,
    pub components_before: usize,
    pub components_after: usize,
    pub parameters: RepairParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

impl RepairReport {
    fn empty(params: &RepairParams) -> Self {
        RepairReport {
            main_tree: None,
            subtrees: Vec::new(),
            connections: Vec::new(),
            iterations: Vec::new(),
            j_sizes: Vec::new(),
            trees_absorbed: Vec::new(),
            trees_unconnected: Vec::new(),
            candidates: Vec::new(),
            components_before: 0,
            components_after: 0,
            parameters: *params,
            timings: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Extra outputs that do not belong in the report.
#[derive(Clone, Copy, Debug, Default)]
pub struct RepairOptions {
    pub timings: bool,
    /// Keep the relaxed surface of every connected pair.
    pub keep_meshes: bool,
}

#[derive(Clone, Debug)]
pub struct RepairOutcome {
    pub mask: Volume3D,
    pub report: RepairReport,
    /// (p0, q0, surface) per connection when requested.
    pub meshes: Vec<(Voxel, Voxel, TriMesh)>,
}

fn dist_mm(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn sample_cubic(c: &CanonicalCubic, m: usize) -> Vec<V3> {
    (0..m).map(|i| c.point(c.s_star * i as f64 / (m - 1) as f64)).collect()
}

/// Scores one (main endpoint, subtree endpoint) pair: distance gate, then
/// TFD, then the minimal surface spanned by the two connectors.
pub fn score_pair(
    ep_main: &EndpointInfo,
    ep_sub: &EndpointInfo,
    min_spacing: f64,
    params: &RepairParams,
) -> (CandidatePair, Option<TriMesh>) {
    let mut pair = CandidatePair {
        p0: ep_main.endpoint,
        q0: ep_sub.endpoint,
        subtree: ep_sub.tree_id,
        distance_mm: dist_mm(ep_main.p0(), ep_sub.p0()),
        tfd: None,
        d_p: None,
        d_q: None,
        area_mm2: None,
        msmo: None,
        status: PairStatus::Accepted,
        reason: None,
        connection: None,
    };
    if pair.distance_mm > params.d_max_voxels * min_spacing {
        pair.status = PairStatus::RejectedDistance;
        return (pair, None);
    }
    if ep_main.degenerate || ep_sub.degenerate {
        pair.status = PairStatus::RejectedGeometry;
        pair.reason = Some("endpoint chain has fewer than 2 voxels".into());
        return (pair, None);
    }
    let tfd_params = TfdParams {
        resample_h: Some(min_spacing),
        frame: FrameParams {
            window: params.window,
            kappa_min: params.kappa_min_voxel / min_spacing,
        },
        x_min_ratio: params.x_min_ratio,
        transport: params.transport,
    };
    let (outcome, cubics) = curve::tfd_chains_with_cubics(&ep_main.chain_mm, &ep_sub.chain_mm, &tfd_params);
    pair.tfd = Some(outcome.value);
    pair.d_p = Some(outcome.d_p);
    pair.d_q = Some(outcome.d_q);
    match outcome.reason {
        Some(TfdReason::DegenerateEndpoint) => {
            pair.status = PairStatus::RejectedGeometry;
            pair.reason = Some("no usable Frenet frame at an endpoint".into());
            return (pair, None);
        }
        Some(TfdReason::ImplausibleGeometry) => {
            pair.status = PairStatus::RejectedTfd;
            pair.reason = Some("target lies behind a vessel end".into());
            return (pair, None);
        }
        None => {}
    }
    if !(outcome.value < params.epsilon) {
        pair.status = PairStatus::RejectedTfd;
        return (pair, None);
    }
    let (c_p, c_q) = cubics.expect("scored pair has cubics");
    let m = 4 * params.surface.n;
    let c1 = sample_cubic(&c_p, m);
    let mut c2 = sample_cubic(&c_q, m);
    c2.reverse();
    // Pin the shared ends; the cubics hit them up to rounding.
    let (p0, q0) = (c1[0], c1[m - 1]);
    c2[0] = p0;
    c2[m - 1] = q0;
    match surface::min_surface_area(&c1, &c2, &params.surface) {
        Ok(res) => {
            pair.area_mm2 = Some(res.area);
            pair.msmo = Some(surface::msmo(res.area, params.a_min));
            (pair, Some(res.mesh))
        }
        Err(e) => {
            pair.status = PairStatus::RejectedGeometry;
            pair.reason = Some(format!("surface: {e}"));
            (pair, None)
        }
    }
}

fn summary(t: &VesselTree) -> TreeSummary {
    TreeSummary {
        id: t.id,
        length_mm: t.total_length_mm,
        endpoints: t.endpoints().len(),
        root: t.root,
    }
}

/// Endpoint chains of a tree. The radius is the median skeleton radius over
/// the regular chain voxels: at a cut face the distance map only sees the
/// face, and a junction voxel sees the wider parent.
fn tree_endpoints(t: &VesselTree, params: &RepairParams, sp: crate::Spacing) -> Result<Vec<EndpointInfo>> {
    let mut out = Vec::new();
    for n in t.endpoints() {
        let mut ep = skeleton::endpoint_curve(t, n.voxel, params.window, sp)?;
        let mut rs: Vec<f64> = ep
            .chain_voxels
            .iter()
            .filter_map(|&v| t.node(v).filter(|n| n.kind == NodeKind::Regular).map(|n| n.radius_mm))
            .collect();
        if !rs.is_empty() {
            rs.sort_by(f64::total_cmp);
            ep.radius_mm = rs[rs.len() / 2];
        }
        out.push(ep);
    }
    Ok(out)
}

struct Trees {
    main: VesselTree,
    p_main: Vec<EndpointInfo>,
    subtrees: Vec<(VesselTree, Vec<EndpointInfo>)>,
}

fn trees_of(mask: &Volume3D, params: &RepairParams) -> Result<Option<Trees>> {
    let skel = morphology::skeletonize(mask)?;
    let dt = morphology::distance_transform(mask)?;
    let graph = skeleton::build_graph(&skel, &dt)?;
    if graph.components.is_empty() {
        return Ok(None);
    }
    let (main, subs) = skeleton::build_trees(&graph)?;
    let sp = mask.spacing();
    let p_main = tree_endpoints(&main, params, sp)?;
    let subtrees = subs
        .into_iter()
        .map(|t| {
            let eps = tree_endpoints(&t, params, sp)?;
            Ok((t, eps))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Trees { main, p_main, subtrees }))
}

fn validate(params: &RepairParams) -> Result<()> {
    let bad = |m: String| Err(crate::Error::InvalidParameter(m));
    if !(params.epsilon >= 0.0) {
        return bad(format!("epsilon must be >= 0, got {}", params.epsilon));
    }
    if !(params.d_max_voxels > 0.0) {
        return bad(format!("d_max must be > 0, got {}", params.d_max_voxels));
    }
    if !(params.kappa_min_voxel >= 0.0) {
        return bad(format!("kappa_min must be >= 0, got {}", params.kappa_min_voxel));
    }
    if params.window < 2 {
        return bad(format!("window must be >= 2, got {}", params.window));
    }
    if params.surface.n < 3 {
        return bad(format!("surface samples must be >= 3, got {}", params.surface.n));
    }
    if !(params.geodesic.step > 0.0) {
        return bad(format!("geodesic step must be > 0, got {}", params.geodesic.step));
    }
    Ok(())
}

/// Repairs `seg` and returns the repaired mask with its report.
pub fn repair(seg: &Volume3D, params: &RepairParams) -> Result<(Volume3D, RepairReport)> {
    let out = repair_with(seg, params, RepairOptions::default())?;
    Ok((out.mask, out.report))
}

pub fn repair_with(seg: &Volume3D, params: &RepairParams, opts: RepairOptions) -> Result<RepairOutcome> {
    validate(params)?;
    let t_start = Instant::now();
    let mut timings = Timings::default();
    let mut report = RepairReport::empty(params);
    let mut mask = seg.with_mask(seg.mask()?.to_vec());
    let mut meshes = Vec::new();
    let dims = seg.dims();
    let components = |m: &Volume3D| count_components(m.mask().expect("mask"), dims, Connectivity::TwentySix);
    report.components_before = components(&mask);
    report.components_after = report.components_before;
    if report.components_before == 0 {
        return Ok(RepairOutcome { mask, report, meshes });
    }

    let t = Instant::now();
    let Some(mut trees) = trees_of(&mask, params)? else {
        return Ok(RepairOutcome { mask, report, meshes });
    };
    timings.skeleton_s += t.elapsed().as_secs_f64();
    report.main_tree = Some(summary(&trees.main));
    report.subtrees = trees.subtrees.iter().map(|(t, _)| summary(t)).collect();

    let t = Instant::now();
    let sp_min = seg.min_spacing();
    let sigma = params.geodesic.sigma_mm.unwrap_or(2.0 * sp_min);
    let speed: SpeedField = geodesic::build_speed_field(seg, sigma, params.geodesic.delta)?;
    timings.speed_field_s = t.elapsed().as_secs_f64();

    let mut cache: BTreeMap<(Voxel, Voxel), (CandidatePair, Option<TriMesh>)> = BTreeMap::new();
    let mut scored: BTreeMap<(Voxel, Voxel), CandidatePair> = BTreeMap::new();
    let mut iteration = 0;
    while !trees.subtrees.is_empty() {
        iteration += 1;
        let t = Instant::now();
        let mut considered = 0;
        for (_, sub_eps) in &trees.subtrees {
            for q in sub_eps {
                for p in &trees.p_main {
                    considered += 1;
                    cache
                        .entry((p.endpoint, q.endpoint))
                        .or_insert_with(|| score_pair(p, q, sp_min, params));
                }
            }
        }
        let live = |k: &(Voxel, Voxel)| {
            trees.p_main.iter().any(|p| p.endpoint == k.0)
                && trees.subtrees.iter().any(|(_, e)| e.iter().any(|q| q.endpoint == k.1))
        };
        let mut j: Vec<&CandidatePair> = cache
            .iter()
            .filter(|(k, (c, _))| c.status == PairStatus::Accepted && live(k))
            .map(|(_, (c, _))| c)
            .collect();
        j.sort_by(|a, b| rank_cmp(a, b));
        timings.scoring_s += t.elapsed().as_secs_f64();
        debug!("iteration {iteration}: {considered} pairs, |J| = {}", j.len());
        report.j_sizes.push(j.len());
        let mut record = IterationRecord {
            iteration,
            pairs_considered: considered,
            j_size: j.len(),
            failed: Vec::new(),
            selected: None,
        };
        if j.is_empty() {
            report.iterations.push(record);
            break;
        }

        let t = Instant::now();
        let order: Vec<(Voxel, Voxel)> = j.iter().map(|c| c.key()).collect();
        let mut chosen = None;
        for key in order {
            let p = trees.p_main.iter().find(|e| e.endpoint == key.0).expect("live p");
            let (sub_idx, q) = trees
                .subtrees
                .iter()
                .enumerate()
                .find_map(|(i, (_, e))| e.iter().find(|q| q.endpoint == key.1).map(|q| (i, q)))
                .expect("live q");
            match geodesic::geodesic_between(&speed, key.0, key.1, &params.geodesic) {
                Ok(path) => {
                    let radius = ((p.radius_mm + q.radius_mm) / 2.0).max(sp_min);
                    let before = mask.foreground_count();
                    mask = geodesic::fill_connection(&mask, &path, radius, params.seal_voxels)?;
                    let conn = Connection {
                        iteration,
                        path_length_mm: path.length_mm(),
                        path_points: path.points.len(),
                        radius_mm: radius,
                        voxels_added: mask.foreground_count() - before,
                    };
                    chosen = Some((key, sub_idx, conn));
                    break;
                }
                Err(e) => {
                    warn!("geodesic {:?} -> {:?} failed: {e}", key.0, key.1);
                    let entry = cache.get_mut(&key).expect("cached");
                    entry.0.status = PairStatus::Failed;
                    entry.0.reason = Some(format!("geodesic: {e}"));
                    record.failed.push([key.0, key.1]);
                }
            }
        }
        timings.connecting_s += t.elapsed().as_secs_f64();
        let Some((key, sub_idx, conn)) = chosen else {
            report.iterations.push(record);
            break;
        };
        record.selected = Some([key.0, key.1]);
        report.iterations.push(record);
        let entry = cache.get_mut(&key).expect("cached");
        entry.0.status = PairStatus::Connected;
        entry.0.connection = Some(conn);
        report.connections.push(entry.0.clone());
        if opts.keep_meshes {
            if let Some(m) = &entry.1 {
                meshes.push((key.0, key.1, m.clone()));
            }
        }
        let absorbed_id = trees.subtrees[sub_idx].0.id;
        info!("connected {:?} -> {:?}, absorbing subtree {absorbed_id}", key.0, key.1);
        report.trees_absorbed.push(absorbed_id);

        if params.rethin {
            let t = Instant::now();
            // Ids refer to the original enumeration only up to this point.
            for (k, (c, _)) in std::mem::take(&mut cache) {
                scored.insert(k, c);
            }
            trees = trees_of(&mask, params)?.expect("mask is nonempty");
            timings.skeleton_s += t.elapsed().as_secs_f64();
        } else {
            let (_, absorbed) = trees.subtrees.remove(sub_idx);
            trees.p_main.retain(|e| e.endpoint != key.0);
            trees.p_main.extend(absorbed.into_iter().filter(|e| e.endpoint != key.1));
            trees.p_main.sort_by(|a, b| a.endpoint.cmp(&b.endpoint));
        }
    }
    report.trees_unconnected = trees.subtrees.iter().map(|(t, _)| t.id).collect();
    for (k, (c, _)) in cache {
        scored.insert(k, c);
    }
    report.candidates = scored.into_values().collect();
    report.components_after = components(&mask);
    timings.total_s = t_start.elapsed().as_secs_f64();
    if opts.timings {
        report.timings = Some(timings);
    }
    Ok(RepairOutcome { mask, report, meshes })
}

/// Non-finite floats as the strings "inf", "-inf" and "nan".
mod json_float {
    pub mod opt {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                None => s.serialize_none(),
                Some(x) if x.is_finite() => s.serialize_some(x),
                Some(x) if x.is_nan() => s.serialize_some("nan"),
                Some(x) if *x > 0.0 => s.serialize_some("inf"),
                Some(_) => s.serialize_some("-inf"),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(match Option::<Repr>::deserialize(d)? {
                None => None,
                Some(Repr::Num(x)) => Some(x),
                Some(Repr::Text(t)) => Some(match t.as_str() {
                    "inf" => f64::INFINITY,
                    "-inf" => f64::NEG_INFINITY,
                    "nan" => f64::NAN,
                    other => return Err(serde::de::Error::custom(format!("bad float {other:?}"))),
                }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::betti_numbers;
    use crate::Dims;

    fn chain(tree_id: usize, pts: &[[usize; 3]]) -> EndpointInfo {
        EndpointInfo {
            tree_id,
            endpoint: pts[0],
            chain_voxels: pts.to_vec(),
            chain_mm: pts.iter().map(|p| p.map(|c| c as f64)).collect(),
            radius_mm: 2.0,
            degenerate: pts.len() < 2,
        }
    }

    fn line(from: [i64; 3], step: [i64; 3], n: usize) -> Vec<[usize; 3]> {
        (0..n as i64)
            .map(|i| [0, 1, 2].map(|k| (from[k] + i * step[k]) as usize))
            .collect()
    }

    /// Cylinder of radius `r` along x through (., c, c), minus the slab
    /// `gap` in x.
    fn broken_tube(n: usize, r: f64, gap: Option<(usize, usize)>) -> Volume3D {
        let d = Dims::new(n, 24, 24);
        let mut m = vec![0u8; d.len()];
        for z in 0..24 {
            for y in 0..24 {
                for x in 3..n - 3 {
                    let inside = ((y as f64 - 12.0).powi(2) + (z as f64 - 12.0).powi(2)).sqrt() <= r;
                    let cut = gap.is_some_and(|(a, b)| x >= a && x < b);
                    if inside && !cut {
                        m[d.index(x, y, z)] = 1;
                    }
                }
            }
        }
        Volume3D::from_mask(d, [1.0; 3], m).unwrap()
    }

    #[test]
    fn collinear_stumps_are_accepted() {
        let p = chain(0, &line([10, 10, 10], [-1, 0, 0], 7));
        let q = chain(1, &line([15, 10, 10], [1, 0, 0], 7));
        let (c, mesh) = score_pair(&p, &q, 1.0, &RepairParams::default());
        assert_eq!(c.status, PairStatus::Accepted);
        assert!(c.tfd.unwrap() < 1e-6);
        assert!((c.distance_mm - 5.0).abs() < 1e-12);
        // Both connectors are the same segment: the surface has no area.
        assert!(c.area_mm2.unwrap() < 1e-6);
        assert_eq!(c.msmo, Some(f64::INFINITY));
        assert!(mesh.is_some());
    }

    #[test]
    fn distance_gate_comes_first() {
        let p = chain(0, &line([10, 10, 10], [-1, 0, 0], 7));
        let q = chain(1, &line([510, 10, 10], [1, 0, 0], 7));
        let (c, _) = score_pair(&p, &q, 1.0, &RepairParams::default());
        assert_eq!(c.status, PairStatus::RejectedDistance);
        assert_eq!(c.tfd, None);
        // In mm the gate scales with the spacing.
        let (c, _) = score_pair(&p, &q, 20.0, &RepairParams::default());
        assert_ne!(c.status, PairStatus::RejectedDistance);
    }

    #[test]
    fn antiparallel_stumps_are_rejected() {
        let p = chain(0, &line([10, 10, 10], [-1, 0, 0], 7));
        // Offset vessel that heads back along -x.
        let q = chain(1, &line([15, 13, 10], [-1, 0, 0], 7));
        let (c, _) = score_pair(&p, &q, 1.0, &RepairParams::default());
        assert_eq!(c.status, PairStatus::RejectedTfd);
        assert!(c.tfd.unwrap() > std::f64::consts::SQRT_2);
        assert_eq!(c.area_mm2, None);
    }

    #[test]
    fn degenerate_endpoint_is_a_geometry_rejection() {
        let p = chain(0, &line([10, 10, 10], [-1, 0, 0], 7));
        let q = chain(1, &[[14, 10, 10]]);
        let (c, _) = score_pair(&p, &q, 1.0, &RepairParams::default());
        assert_eq!(c.status, PairStatus::RejectedGeometry);
        assert!(c.reason.is_some());
    }

    #[test]
    fn empty_mask_is_returned_unchanged() {
        let v = Volume3D::empty_mask(Dims::new(8, 8, 8), [1.0; 3]);
        let (out, rep) = repair(&v, &RepairParams::default()).unwrap();
        assert_eq!(out, v);
        assert!(rep.connections.is_empty());
        assert!(rep.iterations.is_empty());
        assert_eq!(rep.main_tree, None);
    }

    #[test]
    fn unbroken_tube_is_left_alone() {
        let v = broken_tube(48, 3.0, None);
        let (out, rep) = repair(&v, &RepairParams::default()).unwrap();
        assert_eq!(out, v);
        assert!(rep.connections.is_empty());
        assert!(rep.subtrees.is_empty());
    }

    #[test]
    fn single_gap_gets_one_connection() {
        let v = broken_tube(56, 3.0, Some((26, 31)));
        assert_eq!(betti_numbers(&v).unwrap(), [2, 0, 0]);
        let (out, rep) = repair(&v, &RepairParams::default()).unwrap();
        assert_eq!(rep.connections.len(), 1);
        assert_eq!(betti_numbers(&out).unwrap(), [1, 0, 0]);
        assert_eq!((rep.components_before, rep.components_after), (2, 1));
        let (a, b) = (v.mask().unwrap(), out.mask().unwrap());
        assert!(a.iter().zip(b).all(|(&x, &y)| y >= x));
        let c = &rep.connections[0];
        assert_eq!(c.status, PairStatus::Connected);
        assert!(c.tfd.unwrap() < 0.1);
        let conn = c.connection.as_ref().unwrap();
        assert!(conn.voxels_added > 0);
        assert!(conn.path_length_mm > 5.0 && conn.path_length_mm < 25.0);
        assert_eq!(rep.trees_absorbed, vec![1]);
        assert!(rep.trees_unconnected.is_empty());
        // The gap slab is filled across the tube axis.
        let d = out.dims();
        for x in 26..31 {
            assert_eq!(b[d.index(x, 12, 12)], 1);
        }
    }

    #[test]
    fn reruns_are_identical() {
        let v = broken_tube(56, 3.0, Some((26, 31)));
        let (a, ra) = repair(&v, &RepairParams::default()).unwrap();
        let (b, rb) = repair(&v, &RepairParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
        assert!(!ra.to_json().unwrap().contains("timings"));
    }

    #[test]
    fn zero_epsilon_connects_nothing() {
        let v = broken_tube(56, 3.0, Some((26, 31)));
        let params = RepairParams {
            epsilon: 0.0,
            ..RepairParams::default()
        };
        let (out, rep) = repair(&v, &params).unwrap();
        assert_eq!(out, v);
        assert!(rep.connections.is_empty());
        assert_eq!(rep.j_sizes, vec![0]);
        assert_eq!(rep.trees_unconnected, vec![1]);
        assert!(rep.candidates.iter().all(|c| c.status != PairStatus::Accepted));
    }

    #[test]
    fn rethin_mode_also_connects() {
        let v = broken_tube(56, 3.0, Some((26, 31)));
        let params = RepairParams {
            rethin: true,
            ..RepairParams::default()
        };
        let (out, rep) = repair(&v, &params).unwrap();
        assert_eq!(rep.connections.len(), 1);
        assert_eq!(betti_numbers(&out).unwrap(), [1, 0, 0]);
    }

    #[test]
    fn infinite_scores_survive_json() {
        let p = chain(0, &line([10, 10, 10], [-1, 0, 0], 7));
        let q = chain(1, &line([15, 10, 10], [1, 0, 0], 7));
        let (c, _) = score_pair(&p, &q, 1.0, &RepairParams::default());
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"msmo\":\"inf\""));
        let back: CandidatePair = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let v = broken_tube(24, 3.0, None);
        for params in [
            RepairParams {
                epsilon: f64::NAN,
                ..RepairParams::default()
            },
            RepairParams {
                window: 1,
                ..RepairParams::default()
            },
            RepairParams {
                d_max_voxels: 0.0,
                ..RepairParams::default()
            },
        ] {
            assert!(repair(&v, &params).is_err());
        }
    }
}
