//! The phi-family calculus.
//!
//! For an exponent `q != 0`, `phi` is the solution of the scalar ODE
//! `phi' = phi^q`, `phi(0) = 1`:
//!
//! ```text
//!     q = 1:   phi(s) = exp(s)                 on all of R,
//!     q != 1:  phi(s) = [(1-q) s + 1]^(1/(1-q)) on I_q,
//! ```
//!
//! where `I_q = (-inf, 1/(q-1))` for `q > 1` and `(1/(q-1), inf)` for
//! `q < 1`. For `0 < q < 1` the positive-part extension
//! `[(1-q) s + 1]_+^(1/(1-q))` makes `phi` total on R. Values at the
//! endpoints are the one-sided limits; arguments within a relative guard
//! of an endpoint are clamped onto it and counted.
//!
//! The change of variable `v = phi^{-1}(u/h)` is what turns the
//! semilinear problem into a linear comparison problem; the product
//! identity checked by [`product_identity_residual`] is the differential
//! engine behind that reduction.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;

/// The exponent `q` together with its admissible interval and endpoint
/// guard. Cloning resets the clamp diagnostic counter.
#[derive(Debug)]
pub struct PhiFamily {
    q: f64,
    eps_clamp: f64,
    clamp_events: AtomicU64,
}

impl Clone for PhiFamily {
    fn clone(&self) -> Self {
        PhiFamily {
            q: self.q,
            eps_clamp: self.eps_clamp,
            clamp_events: AtomicU64::new(0),
        }
    }
}

impl PhiFamily {
    pub fn new(q: f64) -> Result<PhiFamily> {
        if q == 0.0 || !q.is_finite() {
            return Err(Error::Config(format!("exponent q must be finite and nonzero, got {q}")));
        }
        Ok(PhiFamily { q, eps_clamp: 1e-14, clamp_events: AtomicU64::new(0) })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Open interval on which phi is defined and increasing:
    /// `(lo, hi)` with infinite endpoints where unbounded.
    pub fn interval(&self) -> (f64, f64) {
        if self.q == 1.0 {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.q > 1.0 {
            (f64::NEG_INFINITY, 1.0 / (self.q - 1.0))
        } else {
            (1.0 / (self.q - 1.0), f64::INFINITY)
        }
    }

    /// Number of endpoint clamps since construction.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    /// Is `s` admissible? (`0 < q < 1` admits everything through the
    /// positive-part extension.)
    pub fn admits(&self, s: f64) -> bool {
        if self.q > 0.0 && self.q < 1.0 {
            return s.is_finite() || s == f64::NEG_INFINITY;
        }
        let (lo, hi) = self.interval();
        s >= lo && s <= hi
    }

    /// Clamp near-endpoint arguments onto the endpoint, counting the event.
    fn clamp(&self, s: f64) -> f64 {
        let (lo, hi) = self.interval();
        if hi.is_finite() && s < hi && hi - s <= self.eps_clamp * hi.abs().max(1.0) {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            return hi;
        }
        if lo.is_finite() && s > lo && s - lo <= self.eps_clamp * lo.abs().max(1.0) {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
            return lo;
        }
        s
    }

    /// `phi(s)`. Errors outside the closed extension for `q > 1` and
    /// `q < 0`; total for `0 < q < 1`.
    pub fn phi(&self, s: f64) -> Result<f64> {
        let q = self.q;
        if q == 1.0 {
            return Ok(s.exp());
        }
        if q > 0.0 && q < 1.0 {
            let base = ((1.0 - q) * s + 1.0).max(0.0);
            return Ok(base.powf(1.0 / (1.0 - q)));
        }
        let s = self.clamp(s);
        if !self.admits(s) {
            return Err(Error::PhiDomain { q, s });
        }
        let base = (1.0 - q) * s + 1.0;
        if base <= 0.0 {
            // Endpoint limit: +inf for q > 1, 0 for q < 0.
            return Ok(if q > 1.0 { f64::INFINITY } else { 0.0 });
        }
        Ok(base.powf(1.0 / (1.0 - q)))
    }

    /// Inverse of phi: `log w` for q = 1, `(w^(1-q) - 1)/(1-q)` otherwise.
    /// `w = 0` is admitted for `q < 0` with the endpoint value.
    pub fn phi_inv(&self, w: f64) -> Result<f64> {
        let q = self.q;
        if w < 0.0 || (w == 0.0 && q >= 1.0) || !w.is_finite() {
            return Err(Error::Eval(format!("phi_inv needs w > 0 for q = {q}, got {w}")));
        }
        if q == 1.0 {
            return Ok(w.ln());
        }
        if w == 0.0 {
            return Ok(1.0 / (q - 1.0)); // left endpoint, q < 1
        }
        Ok((w.powf(1.0 - q) - 1.0) / (1.0 - q))
    }

    /// First and second derivatives on the open interval:
    /// `phi' = base^(q/(1-q)) > 0` and `phi'' = q base^((2q-1)/(1-q))`,
    /// so phi is convex for `q > 0` and concave for `q < 0`.
    pub fn phi_derivatives(&self, s: f64) -> Result<(f64, f64)> {
        let q = self.q;
        if q == 1.0 {
            let e = s.exp();
            return Ok((e, e));
        }
        let (lo, hi) = self.interval();
        if !(s > lo && s < hi) {
            return Err(Error::PhiDomain { q, s });
        }
        let base = (1.0 - q) * s + 1.0;
        let d1 = base.powf(q / (1.0 - q));
        let d2 = q * base.powf((2.0 * q - 1.0) / (1.0 - q));
        Ok((d1, d2))
    }

    /// Singular branch of the same ODE without the unit normalization:
    /// `[(1-q) s]^(1/(1-q))` with positive-part semantics for
    /// `0 < q < 1`. This is the shape of the bounds that carry no caloric
    /// majorant. Returns None where the base is nonpositive (side
    /// condition fails) for `q > 1` and `q < 0`.
    pub fn phi_homogeneous(&self, s: f64) -> Option<f64> {
        let q = self.q;
        debug_assert!(q != 1.0);
        let base = (1.0 - q) * s;
        if q > 0.0 && q < 1.0 {
            return Some(base.max(0.0).powf(1.0 / (1.0 - q)));
        }
        if base <= 0.0 {
            return None;
        }
        Some(base.powf(1.0 / (1.0 - q)))
    }
}

/// Discrete residual of the space-time product identity
///
/// ```text
///   d/dt [h phi(v)] - Lap[h phi(v)]
///     = phi'(v) [ d/dt(hv) - Lap(hv) ]
///       - phi''(v) |grad v|^2 h
///       + [phi(v) - v phi'(v)] ( dh/dt - Lap h )
/// ```
///
/// with all derivatives replaced by central differences. The identity is
/// exact in the continuum, so the residual measures pure discretization
/// error and must shrink at second order in the mesh width on smooth data.
/// Evaluated at interior space-time nodes (time levels `1..K-1`).
pub fn product_identity_residual(
    grid: &Grid,
    h: &Field,
    v: &Field,
    fam: &PhiFamily,
) -> Result<Field> {
    h.check_same_grid(v)?;
    let n = grid.node_count();
    let levels = grid.times().len();
    let dt = grid.dt();

    // Pointwise phi tables; errors surface here if v leaves the interval.
    let mut phi_v = vec![0.0; n * levels];
    let mut d1 = vec![0.0; n * levels];
    let mut d2 = vec![0.0; n * levels];
    for j in 0..n * levels {
        let s = v.values()[j];
        if fam.q() > 0.0 && fam.q() < 1.0 {
            // Extension is total but the identity needs derivatives; keep
            // to the open interval here as well.
        }
        phi_v[j] = fam.phi(s)?;
        let (a, b) = fam.phi_derivatives(s)?;
        d1[j] = a;
        d2[j] = b;
    }

    let hv: Vec<f64> = h.values().iter().zip(v.values()).map(|(a, b)| a * b).collect();
    let hphiv: Vec<f64> = h.values().iter().zip(&phi_v).map(|(a, b)| a * b).collect();

    let mut out = Field::zeros(std::sync::Arc::clone(h.grid()));
    for k in 1..levels - 1 {
        let lap_hphiv = grid.laplacian(&hphiv[k * n..(k + 1) * n])?;
        let lap_hv = grid.laplacian(&hv[k * n..(k + 1) * n])?;
        let lap_h = grid.laplacian(h.level(k))?;
        let grad_v = central_gradient_sq(grid, v.level(k));
        for i in 0..n {
            if !grid.is_interior(i) {
                continue;
            }
            let j = k * n + i;
            let dt_hphiv = (hphiv[j + n] - hphiv[j - n]) / (2.0 * dt);
            let dt_hv = (hv[j + n] - hv[j - n]) / (2.0 * dt);
            let dt_h = (h.values()[j + n] - h.values()[j - n]) / (2.0 * dt);
            let lhs = dt_hphiv - lap_hphiv[i];
            let rhs = d1[j] * (dt_hv - lap_hv[i]) - d2[j] * grad_v[i] * h.values()[j]
                + (phi_v[j] - v.values()[j] * d1[j]) * (dt_h - lap_h[i]);
            out.set(k, i, lhs - rhs);
        }
    }
    Ok(out)
}

/// Squared gradient magnitude by central differences (radial geometries
/// carry the flat metric in the radial coordinate).
fn central_gradient_sq(grid: &Grid, w: &[f64]) -> Vec<f64> {
    let n = grid.node_count();
    let mut out = vec![0.0; n];
    for node in 0..n {
        if !grid.is_interior(node) {
            continue;
        }
        let idx = grid.unflatten(node);
        let mut acc = 0.0;
        for (d, axis) in grid.axes().iter().enumerate() {
            let stride: usize = grid.axes()[..d].iter().map(|a| a.coords.len()).product();
            let i = idx[d];
            let g = if i == 0 && axis.staggered_pole {
                (w[node + stride] - w[node]) / (2.0 * axis.dx)
            } else {
                (w[node + stride] - w[node - stride]) / (2.0 * axis.dx)
            };
            acc += g * g;
        }
        out[node] = acc;
    }
    out
}

/// Distance in units in the last place, for closed-form consistency tests.
pub fn ulp_diff(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    if a.is_nan() || b.is_nan() || a.is_infinite() || b.is_infinite() {
        return u64::MAX;
    }
    let (x, y) = (a.to_bits() as i64, b.to_bits() as i64);
    // Map negative floats so the integer order matches the float order.
    let fix = |v: i64| if v < 0 { i64::MIN - v } else { v };
    fix(x).abs_diff(fix(y))
}
