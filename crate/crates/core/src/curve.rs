//! Discrete curves, Frenet frames, the canonical cubic connector and the
//! touching fit degree (TFD) of two vessel ends.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::EndpointInfo;

pub type V3 = Vector3<f64>;

fn v3(p: [f64; 3]) -> V3 {
    V3::new(p[0], p[1], p[2])
}

/// Polyline with cumulative arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCurve {
    points: Vec<V3>,
    s: Vec<f64>,
}

impl DiscreteCurve {
    /// Consecutive duplicates are dropped; fewer than 2 distinct points is an
    /// error.
    pub fn new(points: impl IntoIterator<Item = V3>) -> Result<Self> {
        let mut pts: Vec<V3> = Vec::new();
        let mut s = Vec::new();
        for p in points {
            match pts.last() {
                None => s.push(0.0),
                Some(last) => {
                    let d = (p - last).norm();
                    if d <= 1e-12 {
                        continue;
                    }
                    s.push(s.last().unwrap() + d);
                }
            }
            pts.push(p);
        }
        if pts.len() < 2 {
            return Err(Error::DegenerateCurve(format!("{} distinct point(s)", pts.len())));
        }
        Ok(DiscreteCurve { points: pts, s })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|&p| v3(p)))
    }

    pub fn points(&self) -> &[V3] {
        &self.points
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.s
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let l = self.length();
        DiscreteCurve {
            points: self.points.iter().rev().cloned().collect(),
            s: self.s.iter().rev().map(|s| l - s).collect(),
        }
    }

    /// Point at arc length `t`, clamped to the curve.
    pub fn point_at(&self, t: f64) -> V3 {
        let t = t.clamp(0.0, self.length());
        let k = self.s.partition_point(|&s| s <= t).clamp(1, self.s.len() - 1);
        let (s0, s1) = (self.s[k - 1], self.s[k]);
        let w = (t - s0) / (s1 - s0);
        self.points[k - 1] * (1.0 - w) + self.points[k] * w
    }
}

/// Uniform arc-length resampling by linear interpolation. The last point is
/// kept exactly, so the final step may be shorter than `h`.
pub fn resample_arclength(curve: &DiscreteCurve, h: f64) -> Result<DiscreteCurve> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("resampling step must be positive, got {h}")));
    }
    let l = curve.length();
    if l < h * (1.0 - 1e-9) {
        return Err(Error::DegenerateCurve(format!("curve length {l} shorter than step {h}")));
    }
    let n = (l / h + 1e-9).floor() as usize;
    let mut pts: Vec<V3> = (0..=n).map(|k| curve.point_at(k as f64 * h)).collect();
    pts[0] = curve.points[0];
    let last = *curve.points.last().unwrap();
    if l - n as f64 * h > 1e-9 * h {
        pts.push(last);
    } else {
        pts[n] = last;
    }
    DiscreteCurve::new(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveEnd {
    Start,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Tangent points into the curve.
    Inward,
    /// Tangent points away from the curve.
    Outward,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrenetFrame {
    pub origin: V3,
    pub alpha: V3,
    pub beta: V3,
    pub gamma: V3,
    pub kappa: f64,
    pub tau: f64,
    /// Curvature below threshold; `beta` and `gamma` come from a fallback.
    pub degenerate: bool,
}

impl FrenetFrame {
    /// Rotation whose columns are (alpha, beta, gamma).
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.alpha, self.beta, self.gamma])
    }

    /// World vector -> frame coordinates.
    pub fn to_local(&self, p: V3) -> V3 {
        self.rotation().transpose() * (p - self.origin)
    }

    /// Replaces the normal by `reference` projected onto the normal plane.
    /// Returns `None` when the projection (nearly) vanishes.
    pub fn with_normal_from(&self, reference: V3) -> Option<FrenetFrame> {
        let proj = reference - self.alpha * reference.dot(&self.alpha);
        let n = proj.norm();
        if n <= 1e-9 * reference.norm().max(1e-300) {
            return None;
        }
        let beta = proj / n;
        Some(FrenetFrame {
            beta,
            gamma: self.alpha.cross(&beta),
            ..*self
        })
    }

    /// Normal from the world axis least aligned with the tangent.
    pub fn with_axis_normal(&self) -> FrenetFrame {
        let a = self.alpha.abs();
        let axis = if a.x <= a.y && a.x <= a.z {
            V3::x()
        } else if a.y <= a.z {
            V3::y()
        } else {
            V3::z()
        };
        self.with_normal_from(axis).expect("least aligned axis is never parallel")
    }

    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    /// Number of resampled points used for the local polynomial fit.
    pub window: usize,
    /// Curvature (1/mm) below which the frame is degenerate.
    pub kappa_min: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            window: 7,
            kappa_min: 1e-3,
        }
    }
}

/// Least-squares polynomial fit (degree <= 3) of the first `window` points
/// in arc length; returns the first three derivatives at s = 0.
fn endpoint_derivatives(curve: &DiscreteCurve, window: usize) -> [V3; 3] {
    let n = curve.len().min(window.max(2));
    let deg = (n - 1).min(3);
    let scale = curve.s[n - 1];
    let a = DMatrix::from_fn(n, deg + 1, |i, j| (curve.s[i] / scale).powi(j as i32));
    let b = DMatrix::from_fn(n, 3, |i, j| curve.points[i][j] - curve.points[0][j]);
    let c = a.svd(true, true).solve(&b, 1e-14).expect("svd with both factors");
    let mut d = [V3::zeros(); 3];
    let fact = [1.0, 2.0, 6.0];
    for (k, dk) in d.iter_mut().enumerate() {
        if k + 1 <= deg {
            let row = c.row(k + 1);
            *dk = V3::new(row[0], row[1], row[2]) * fact[k] / scale.powi(k as i32 + 1);
        }
    }
    d
}

fn frame_from_derivatives(origin: V3, d1: V3, d2: V3, d3: V3, kappa_min: f64) -> FrenetFrame {
    let speed = d1.norm();
    let alpha = d1 / speed;
    let cross = d1.cross(&d2);
    let kappa = cross.norm() / speed.powi(3);
    let c2 = cross.norm_squared();
    let tau = if c2 > 0.0 {
        d1.cross(&d2).dot(&d3) / c2
    } else {
        0.0
    };
    let base = FrenetFrame {
        origin,
        alpha,
        beta: V3::zeros(),
        gamma: V3::zeros(),
        kappa,
        tau,
        degenerate: kappa < kappa_min,
    };
    if base.degenerate {
        return FrenetFrame {
            degenerate: true,
            ..base.with_axis_normal()
        };
    }
    let perp = d2 - alpha * d2.dot(&alpha);
    let beta = perp.normalize();
    FrenetFrame {
        beta,
        gamma: alpha.cross(&beta),
        ..base
    }
}

/// Frenet frame at one end of `curve`. The tangent orientation follows
/// `orientation`; the normal is the curvature normal, or a world-axis
/// fallback when the curve is locally straight.
pub fn frenet_frame(curve: &DiscreteCurve, at: CurveEnd, orientation: Orientation, params: &FrameParams) -> Result<FrenetFrame> {
    let c = match at {
        CurveEnd::Start => curve.clone(),
        CurveEnd::End => curve.reversed(),
    };
    let [d1, d2, d3] = endpoint_derivatives(&c, params.window);
    let sign = match orientation {
        Orientation::Inward => 1.0,
        Orientation::Outward => -1.0,
    };
    if d1.norm() <= 1e-12 {
        return Err(Error::DegenerateCurve("zero tangent at endpoint".into()));
    }
    // Reversing the parameter flips odd derivatives; curvature, torsion and
    // the normal are unchanged.
    Ok(frame_from_derivatives(c.points[0], d1 * sign, d2, d3 * sign, params.kappa_min))
}

/// (s, k0 s^2/2, kt s^3/6) in the frame at p0, with kt = k0 * t0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CanonicalCubic {
    pub frame: FrenetFrame,
    pub kappa0: f64,
    /// 0 when `kappa0` is 0; the cubic term is carried by `kappa_tau`.
    pub tau0: f64,
    pub kappa_tau: f64,
    pub s_star: f64,
}

impl CanonicalCubic {
    pub fn local_point(&self, s: f64) -> V3 {
        V3::new(s, self.kappa0 * s * s / 2.0, self.kappa_tau * s * s * s / 6.0)
    }

    pub fn point(&self, s: f64) -> V3 {
        self.frame.origin + self.frame.rotation() * self.local_point(s)
    }
}

/// Fits the canonical cubic through `q0` from the frame at p0. Targets whose
/// frame x-coordinate is at most `x_min_ratio * |q0 - p0|` are rejected.
pub fn fit_canonical_cubic(frame: &FrenetFrame, q0: V3, x_min_ratio: f64) -> Result<CanonicalCubic> {
    let gap = (q0 - frame.origin).norm();
    if gap <= 1e-12 {
        return Err(Error::DegenerateCurve("target coincides with frame origin".into()));
    }
    let local = frame.to_local(q0);
    let x_min = x_min_ratio * gap;
    if local.x <= x_min {
        return Err(Error::ImplausibleGeometry { x_hat: local.x, x_min });
    }
    let tiny = 1e-12 * gap;
    let y = if local.y.abs() < tiny { 0.0 } else { local.y };
    let z = if local.z.abs() < tiny { 0.0 } else { local.z };
    let x = local.x;
    let kappa0 = 2.0 * y / (x * x);
    let kappa_tau = 6.0 * z / (x * x * x);
    let tau0 = if kappa0 != 0.0 { kappa_tau / kappa0 } else { 0.0 };
    Ok(CanonicalCubic {
        frame: *frame,
        kappa0,
        tau0,
        kappa_tau,
        s_star: x,
    })
}

/// Analytic Frenet frame of the cubic at parameter `s`, in world
/// coordinates. At s = 0 this is the base frame.
pub fn cubic_frenet_at(cubic: &CanonicalCubic, s: f64) -> FrenetFrame {
    let (k0, kt) = (cubic.kappa0, cubic.kappa_tau);
    let d1 = V3::new(1.0, k0 * s, kt * s * s / 2.0);
    let d2 = V3::new(0.0, k0, kt * s);
    let d3 = V3::new(0.0, 0.0, kt);
    let speed = d1.norm();
    let alpha = d1 / speed;
    let cross = d1.cross(&d2);
    let c2 = cross.norm_squared();
    let kappa = cross.norm() / speed.powi(3);
    let tau = if c2 > 0.0 { cross.dot(&d3) / c2 } else { 0.0 };
    let beta = if k0 != 0.0 {
        // Signed so that s = 0 gives back the base normal.
        (d2 - alpha * d2.dot(&alpha)).normalize() * k0.signum()
    } else {
        let y = V3::y();
        (y - alpha * y.dot(&alpha)).normalize()
    };
    let gamma = alpha.cross(&beta);
    let r = cubic.frame.rotation();
    let (alpha, beta, gamma) = if s == 0.0 {
        (cubic.frame.alpha, cubic.frame.beta, cubic.frame.gamma)
    } else {
        (r * alpha, r * beta, r * gamma)
    };
    FrenetFrame {
        origin: cubic.point(s),
        alpha,
        beta,
        gamma,
        kappa,
        tau,
        degenerate: cubic.frame.degenerate && k0 == 0.0,
    }
}

/// Mean L2 distance between corresponding frame axes; in [0, 2].
pub fn touching_bias(a: &FrenetFrame, b: &FrenetFrame) -> f64 {
    ((a.alpha - b.alpha).norm() + (a.beta - b.beta).norm() + (a.gamma - b.gamma).norm()) / 3.0
}

/// How the frame at p0 is carried to q0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameTransport {
    /// Frenet frame field of the fitted cubic, evaluated at q0.
    #[default]
    FrenetField,
    /// Euclidean parallel transport: the base frame unchanged.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfdParams {
    /// Resampling step in mm; `None` uses the smallest chain step.
    pub resample_h: Option<f64>,
    pub frame: FrameParams,
    pub x_min_ratio: f64,
    pub transport: FrameTransport,
}

impl Default for TfdParams {
    fn default() -> Self {
        TfdParams {
            resample_h: None,
            frame: FrameParams::default(),
            x_min_ratio: 0.25,
            transport: FrameTransport::FrenetField,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfdReason {
    DegenerateEndpoint,
    ImplausibleGeometry,
}

/// TFD value; `f64::INFINITY` with a reason when the pair cannot be scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TfdOutcome {
    pub value: f64,
    pub d_p: f64,
    pub d_q: f64,
    pub reason: Option<TfdReason>,
}

impl TfdOutcome {
    fn rejected(reason: TfdReason) -> Self {
        TfdOutcome {
            value: f64::INFINITY,
            d_p: f64::INFINITY,
            d_q: f64::INFINITY,
            reason: Some(reason),
        }
    }
}

/// Bias of continuing `src` (outward frame at its endpoint) to the target
/// whose inward frame is `dst`.
fn one_sided_bias(src: &FrenetFrame, dst: &FrenetFrame, params: &TfdParams) -> Result<(f64, CanonicalCubic)> {
    let gap = dst.origin - src.origin;
    let src = if src.degenerate {
        src.with_normal_from(gap)
            .or_else(|| (!dst.degenerate).then(|| src.with_normal_from(dst.beta)).flatten())
            .unwrap_or_else(|| src.with_axis_normal())
    } else {
        *src
    };
    let cubic = fit_canonical_cubic(&src, dst.origin, params.x_min_ratio)?;
    let carried = match params.transport {
        FrameTransport::FrenetField => cubic_frenet_at(&cubic, cubic.s_star),
        FrameTransport::Constant => FrenetFrame {
            origin: dst.origin,
            ..src
        },
    };
    let dst = if dst.degenerate {
        dst.with_normal_from(carried.beta)
            .unwrap_or_else(|| dst.with_axis_normal())
    } else {
        *dst
    };
    Ok((touching_bias(&carried, &dst), cubic))
}

fn chain_frames(chain: &DiscreteCurve, h: f64, params: &TfdParams) -> Result<(FrenetFrame, FrenetFrame)> {
    let c = resample_arclength(chain, h.min(chain.length()))?;
    Ok((
        frenet_frame(&c, CurveEnd::Start, Orientation::Outward, &params.frame)?,
        frenet_frame(&c, CurveEnd::Start, Orientation::Inward, &params.frame)?,
    ))
}

fn min_step(c: &DiscreteCurve) -> f64 {
    c.s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// TFD of two endpoint chains, each given from its endpoint inward.
pub fn tfd_chains(chain_p: &[[f64; 3]], chain_q: &[[f64; 3]], params: &TfdParams) -> TfdOutcome {
    tfd_chains_with_cubics(chain_p, chain_q, params).0
}

/// Like [`tfd_chains`], also returning the two fitted cubics (p toward q0,
/// q toward p0) when both sides could be scored.
pub fn tfd_chains_with_cubics(
    chain_p: &[[f64; 3]],
    chain_q: &[[f64; 3]],
    params: &TfdParams,
) -> (TfdOutcome, Option<(CanonicalCubic, CanonicalCubic)>) {
    let (cp, cq) = match (DiscreteCurve::from_arrays(chain_p), DiscreteCurve::from_arrays(chain_q)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return (TfdOutcome::rejected(TfdReason::DegenerateEndpoint), None),
    };
    let h = params.resample_h.unwrap_or_else(|| min_step(&cp).min(min_step(&cq)));
    let frames = chain_frames(&cp, h, params).and_then(|p| Ok((p, chain_frames(&cq, h, params)?)));
    let ((p_out, p_in), (q_out, q_in)) = match frames {
        Ok(f) => f,
        Err(_) => return (TfdOutcome::rejected(TfdReason::DegenerateEndpoint), None),
    };
    let d_p = one_sided_bias(&p_out, &q_in, params);
    let d_q = one_sided_bias(&q_out, &p_in, params);
    match (d_p, d_q) {
        (Ok((d_p, c1)), Ok((d_q, c2))) => (
            TfdOutcome {
                value: (d_p + d_q) / 2.0,
                d_p,
                d_q,
                reason: None,
            },
            Some((c1, c2)),
        ),
        (Err(Error::ImplausibleGeometry { .. }), _) | (_, Err(Error::ImplausibleGeometry { .. })) => {
            (TfdOutcome::rejected(TfdReason::ImplausibleGeometry), None)
        }
        _ => (TfdOutcome::rejected(TfdReason::DegenerateEndpoint), None),
    }
}

/// TFD of two vessel ends; `resample_h` should be the smallest voxel spacing.
pub fn tfd(p: &EndpointInfo, q: &EndpointInfo, params: &TfdParams) -> TfdOutcome {
    if p.degenerate || q.degenerate {
        return TfdOutcome::rejected(TfdReason::DegenerateEndpoint);
    }
    tfd_chains(&p.chain_mm, &q.chain_mm, params)
}
