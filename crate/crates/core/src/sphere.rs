//! Riemannian primitives on the unit hypersphere S^{D-1}.
//!
//! Every point is a [`UnitVector`]; tangent vectors carry their base point so
//! the exponential map cannot be applied at the wrong location.

use crate::error::{Error, Result};
use std::f64::consts::{FRAC_PI_2, PI};

/// Norms below this are treated as zero by [`normalize`].
pub const ZERO_NORM: f64 = 1e-12;
/// Below this angle the logarithmic map uses the Euclidean difference.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Inner products below `-1 + ANTIPODAL_EPS` count as antipodal.
pub const ANTIPODAL_EPS: f64 = 1e-12;
/// SLERP falls back to normalized LERP when `sin Ω` drops below this.
pub const SLERP_SIN_EPS: f64 = 1e-6;
/// Tolerance on `|⟨delta, base⟩|` for user-built tangent vectors.
pub const TANGENT_TOL: f64 = 1e-8;
/// Minimum geodesic distance for a well-defined centering direction.
pub const AT_BASE_EPS: f64 = 1e-9;
/// Margin below π/2 required by the hemisphere check.
pub const HEMISPHERE_MARGIN: f64 = 1e-6;

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    coords: Box<[f64]>,
}

impl UnitVector {
    /// Projects `v` onto the sphere.
    pub fn new(v: &[f64]) -> Result<Self> {
        normalize(v)
    }

    /// Standard basis vector `e_axis` in dimension `dim`.
    pub fn basis(dim: usize, axis: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if axis >= dim {
            return Err(Error::InvalidParameter(format!(
                "axis {axis} out of range for dimension {dim}"
            )));
        }
        let mut coords = vec![0.0; dim];
        coords[axis] = 1.0;
        Ok(Self::from_unit(coords))
    }

    /// Wraps coordinates that are already unit norm up to rounding; they are
    /// renormalized so the 1e-9 invariant holds exactly.
    pub(crate) fn from_unit(mut coords: Vec<f64>) -> Self {
        let n = norm(&coords);
        if (n - 1.0).abs() > 0.0 && n > 0.0 {
            coords.iter_mut().for_each(|c| *c /= n);
        }
        Self {
            coords: coords.into_boxed_slice(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coords.to_vec()
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.coords, &other.coords)
    }

    /// The antipodal point.
    pub fn negated(&self) -> UnitVector {
        Self {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }

    fn check_dim(&self, other: &UnitVector) -> Result<()> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            })
        }
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: UnitVector,
    delta: Vec<f64>,
}

impl TangentVector {
    /// Checks `|⟨delta, base⟩| < 1e-8` (scaled by `‖delta‖` when it exceeds 1).
    pub fn new(base: UnitVector, delta: Vec<f64>) -> Result<Self> {
        if delta.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                found: delta.len(),
            });
        }
        let ip = dot(&delta, base.as_slice());
        if ip.abs() >= TANGENT_TOL * norm(&delta).max(1.0) {
            return Err(Error::NotTangent(ip));
        }
        Ok(Self { base, delta })
    }

    pub fn zero(base: UnitVector) -> Self {
        let delta = vec![0.0; base.dim()];
        Self { base, delta }
    }

    pub fn base(&self) -> &UnitVector {
        &self.base
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn norm(&self) -> f64 {
        norm(&self.delta)
    }

    pub fn into_delta(self) -> Vec<f64> {
        self.delta
    }
}

/// Output of the Karcher iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetResult {
    pub mean: UnitVector,
    /// Number of exponential-map updates applied.
    pub iterations: usize,
    /// Norm of the Riemannian gradient at `mean`, in radians.
    pub final_gradient_norm: f64,
    /// Fréchet objective Σ d²(μ⁽ᵗ⁾, xᵢ) at every visited iterate, starting
    /// with the initialization.
    pub objective_trace: Vec<f64>,
}

/// Stopping rule for [`frechet_mean`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KarcherOptions {
    pub t_max: usize,
    /// Iteration stops once the gradient norm is strictly below `eps`.
    pub eps: f64,
}

impl Default for KarcherOptions {
    fn default() -> Self {
        Self { t_max: 5, eps: 1e-7 }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// ℓ2-normalizes `v` onto the sphere.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionTooSmall(v.len()));
    }
    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let n = norm(v);
    if n < ZERO_NORM {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(UnitVector {
        coords: v.iter().map(|c| c / n).collect(),
    })
}

/// Great-circle distance `arccos⟨p, q⟩` in `[0, π]`.
pub fn geodesic_distance(p: &UnitVector, q: &UnitVector) -> f64 {
    p.dot(q).clamp(-1.0, 1.0).acos()
}

/// Logarithmic map `Log_base(x)`.
///
/// The returned tangent vector has norm equal to the geodesic distance and
/// points along the great circle from `base` toward `x`.
pub fn log_map(base: &UnitVector, x: &UnitVector) -> Result<TangentVector> {
    base.check_dim(x)?;
    let c = base.dot(x);
    if c < -1.0 + ANTIPODAL_EPS {
        return Err(Error::AntipodalPoint);
    }
    let c = c.clamp(-1.0, 1.0);
    let b = base.as_slice();
    let x = x.as_slice();
    // Component of x orthogonal to base; its norm is sin θ.
    let perp: Vec<f64> = x.iter().zip(b).map(|(xi, bi)| xi - c * bi).collect();
    let sin_theta = norm(&perp);
    let theta = sin_theta.atan2(c);
    let delta = if theta < SMALL_ANGLE {
        x.iter().zip(b).map(|(xi, bi)| xi - bi).collect()
    } else {
        let scale = theta / sin_theta;
        perp.into_iter().map(|p| p * scale).collect()
    };
    Ok(TangentVector {
        base: base.clone(),
        delta,
    })
}

/// Exponential map `Exp_base(v)` at the tangent vector's own base point.
pub fn exp_map(v: &TangentVector) -> UnitVector {
    let n = v.norm();
    let b = v.base.as_slice();
    if n == 0.0 {
        return v.base.clone();
    }
    let (s, c) = n.sin_cos();
    let coords = b.iter().zip(&v.delta).map(|(bi, di)| c * bi + s * di / n).collect();
    UnitVector::from_unit(coords)
}

/// Spherical linear interpolation from `p` (t = 0) to `q` (t = 1).
///
/// Moves at constant angular velocity along the great circle. When
/// `sin Ω < 1e-6` on the near side the result is the normalized LERP.
pub fn slerp(p: &UnitVector, q: &UnitVector, t: f64) -> Result<UnitVector> {
    p.check_dim(q)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("slerp parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(p.clone());
    }
    if t == 1.0 {
        return Ok(q.clone());
    }
    // atan2 form as in log_map; the clamped acos is off by ~1e-7 near 0 and
    // π in high dimensions.
    let c = p.dot(q).clamp(-1.0, 1.0);
    let perp: Vec<f64> = q.as_slice().iter().zip(p.as_slice()).map(|(b, a)| b - c * a).collect();
    let sin_omega = norm(&perp);
    let omega = sin_omega.atan2(c);
    if PI - omega < 1e-9 {
        return Err(Error::AntipodalPoint);
    }
    if sin_omega < SLERP_SIN_EPS && omega < FRAC_PI_2 {
        return lerp_normalized(p, q, t);
    }
    let wp = ((1.0 - t) * omega).sin() / sin_omega;
    let wq = (t * omega).sin() / sin_omega;
    let coords = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(a, b)| wp * a + wq * b)
        .collect();
    Ok(UnitVector::from_unit(coords))
}

/// Unnormalized blend `(1 − t)p + tq`.
pub fn lerp(p: &UnitVector, q: &UnitVector, t: f64) -> Vec<f64> {
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect()
}

/// `normalize((1 − t)p + tq)`; follows the chord rather than the arc.
pub fn lerp_normalized(p: &UnitVector, q: &UnitVector, t: f64) -> Result<UnitVector> {
    p.check_dim(q)?;
    normalize(&lerp(p, q, t))
}

/// Squared norm of the unnormalized blend, `1 − 2t(1 − t)(1 − ⟨p, q⟩)`.
pub fn lerp_norm_sq_closed_form(p: &UnitVector, q: &UnitVector, t: f64) -> f64 {
    1.0 - 2.0 * t * (1.0 - t) * (1.0 - p.dot(q))
}

/// Fréchet objective `Σ d²(μ, xᵢ)`.
pub fn frechet_objective(mu: &UnitVector, points: &[UnitVector]) -> f64 {
    points
        .iter()
        .map(|x| {
            let d = geodesic_distance(mu, x);
            d * d
        })
        .sum()
}

/// Mean of `Log_mu(xᵢ)`; summed in index order so the result is
/// reproducible regardless of how the log maps were computed.
fn karcher_gradient(mu: &UnitVector, points: &[UnitVector]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let logs: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| log_map(mu, x).map(TangentVector::into_delta))
        .collect::<Result<_>>()?;
    let mut g = vec![0.0; mu.dim()];
    for l in &logs {
        g.iter_mut().zip(l).for_each(|(gi, li)| *gi += li);
    }
    let inv_n = 1.0 / points.len() as f64;
    g.iter_mut().for_each(|gi| *gi *= inv_n);
    // Remove the O(θ²) radial residue left by the small-angle branch.
    let r = dot(&g, mu.as_slice());
    g.iter_mut().zip(mu.as_slice()).for_each(|(gi, mi)| *gi -= r * mi);
    Ok(g)
}

/// Fréchet (Karcher) mean by Riemannian gradient descent with unit step.
///
/// Starts from the normalized Euclidean mean and requires every point to lie
/// strictly within π/2 of that start.
pub fn frechet_mean(points: &[UnitVector], opts: KarcherOptions) -> Result<FrechetResult> {
    let first = points.first().ok_or(Error::EmptyInput("frechet_mean points"))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for p in points {
        first.check_dim(p)?;
        sum.iter_mut().zip(p.as_slice()).for_each(|(s, c)| *s += c);
    }
    let inv_n = 1.0 / points.len() as f64;
    sum.iter_mut().for_each(|s| *s *= inv_n);
    if norm(&sum) < ZERO_NORM {
        return Err(Error::DegenerateMean);
    }
    let mut mu = normalize(&sum)?;

    let max_distance = points.iter().map(|p| geodesic_distance(&mu, p)).fold(0.0_f64, f64::max);
    if max_distance >= FRAC_PI_2 - HEMISPHERE_MARGIN {
        return Err(Error::HemisphereViolation { max_distance });
    }

    let mut objective_trace = vec![frechet_objective(&mu, points)];
    let mut iterations = 0;
    loop {
        let g = karcher_gradient(&mu, points)?;
        let gnorm = norm(&g);
        if gnorm < opts.eps || iterations >= opts.t_max {
            return Ok(FrechetResult {
                mean: mu,
                iterations,
                final_gradient_norm: gnorm,
                objective_trace,
            });
        }
        mu = exp_map(&TangentVector { base: mu, delta: g });
        iterations += 1;
        objective_trace.push(frechet_objective(&mu, points));
    }
}

/// Spherical centering: the unit direction of `Log_base(x)`.
pub fn center(base: &UnitVector, x: &UnitVector) -> Result<UnitVector> {
    base.check_dim(x)?;
    if geodesic_distance(base, x) < AT_BASE_EPS {
        return Err(Error::AtBasePoint);
    }
    let v = log_map(base, x)?;
    normalize(v.delta()).map_err(|_| Error::AtBasePoint)
}
