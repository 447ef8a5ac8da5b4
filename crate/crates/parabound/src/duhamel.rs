//! The Duhamel operators
//!
//! ```text
//!   S[g](x, t) = int_0^t int_Omega p(x, y, t - s) g(y, s) dmu(y) ds
//!   R[f; u0]   = S[f] + int_Omega p(x, y, t) u0(y) dmu(y)
//! ```
//!
//! by space-time quadrature of the kernel. Spatial integrals ride the
//! evaluation grid (trapezoid with the Riemannian weight); the time
//! integral substitutes `sigma = t - s` and splits `(0, t]` into
//! geometrically growing octave panels `[tau 2^j, tau 2^(j+1)]` with a
//! Gauss rule per panel. The floor `tau = dx^2` is where the spatial grid
//! stops resolving the kernel; on `[0, tau]` the kernel acts like the
//! identity (its mass is 1 up to boundary effects), so that slice
//! contributes `int g(x, t - sigma) dsigma` with an error bounded by
//! `tau * sup|g|` near the boundary and far smaller in the bulk.
//!
//! Octave panels are shared by every evaluation time, so their propagator
//! matrices `P[i, j] = p(x_i, y_j, sigma) w_j` are built once per engine
//! and reused across fields and sources; only the top partial panel of
//! each time level is built on the fly.
//!
//! Finiteness of the absolute integral is monitored alongside every
//! value: a non-finite sample or an absolute integral beyond
//! `1e12 * scale(g)` reports divergence instead of returning garbage.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Coord, Grid, Quadrature};
use crate::kernel::Kernel;

/// Scalar source of (x, t). `node` is the engine grid node index when the
/// evaluation point is a grid node, letting sampled sources avoid lookups.
pub trait SourceTerm: Sync {
    fn value_at(&self, node: Option<usize>, x: &Coord, t: f64) -> f64;
}

impl<F: Fn(&Coord, f64) -> f64 + Sync> SourceTerm for F {
    fn value_at(&self, _node: Option<usize>, x: &Coord, t: f64) -> f64 {
        self(x, t)
    }
}

/// A field used as a source, linearly interpolated in time.
pub struct FieldSource<'a>(pub &'a Field);

impl SourceTerm for FieldSource<'_> {
    fn value_at(&self, node: Option<usize>, _x: &Coord, t: f64) -> f64 {
        let node = node.expect("field sources are only defined at grid nodes");
        self.0.interp_time(node, t)
    }
}

/// Source of the form `field^power * factor * indicator`, the shape of
/// the weighted potentials fed back into `S`. Where the field vanishes
/// the value is 0 if the factor vanishes there too, else a divergence
/// signal (the weighted integral is genuinely non-integrable).
pub struct ProductSource<'a> {
    pub field: &'a Field,
    pub power: f64,
    pub factor: Option<&'a dyn SourceTerm>,
    pub indicator: Option<&'a Field>,
}

impl SourceTerm for ProductSource<'_> {
    fn value_at(&self, node: Option<usize>, x: &Coord, t: f64) -> f64 {
        let node_idx = node.expect("product sources are only defined at grid nodes");
        let f = self.factor.map_or(1.0, |f| f.value_at(node, x, t));
        if let Some(chi) = self.indicator {
            if chi.interp_time(node_idx, t) <= 0.5 {
                return 0.0;
            }
        }
        let h = self.field.interp_time(node_idx, t);
        if h <= 0.0 {
            // Nonnegative powers vanish there; negative powers are a
            // genuine divergence unless the factor vanishes too.
            return if self.power > 0.0 || f == 0.0 { 0.0 } else { f64::INFINITY };
        }
        h.powf(self.power) * f
    }
}

/// Value of `S[g]` at one point together with the absolute integral that
/// certifies it.
#[derive(Debug, Clone, Copy)]
pub struct SEval {
    pub value: f64,
    pub abs_integral: f64,
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.8611363115940526, 0.34785484513745385),
    (-0.33998104358485626, 0.6521451548625461),
    (0.33998104358485626, 0.6521451548625461),
    (0.8611363115940526, 0.34785484513745385),
];
const GAUSS2: [(f64, f64); 2] = [
    (-0.5773502691896257, 1.0),
    (0.5773502691896257, 1.0),
];

const DIVERGENCE_FACTOR: f64 = 1e12;

struct OctavePanel {
    hi: f64,
    /// (sigma, quadrature weight, propagator matrix) per Gauss node.
    nodes: Vec<(f64, f64, Vec<f64>)>,
}

/// Quadrature engine for the Duhamel operators on one grid.
pub struct Duhamel<'k> {
    kernel: &'k Kernel,
    grid: Arc<Grid>,
    quad: Quadrature,
    tau_min: f64,
    octaves: Vec<OctavePanel>,
}

impl<'k> Duhamel<'k> {
    pub fn new(kernel: &'k Kernel, grid: Arc<Grid>) -> Result<Duhamel<'k>> {
        if kernel.domain() != grid.domain() {
            return Err(Error::GridMismatch);
        }
        let quad = grid.quadrature();
        let t_final = grid.t_final();
        let dx = grid.min_dx();
        let tau_min = (dx * dx).clamp(1e-10, t_final / 2.0);

        let mut octaves = Vec::new();
        let mut lo = tau_min;
        while lo < t_final {
            let hi = (2.0 * lo).min(t_final);
            let nodes = GAUSS4
                .iter()
                .map(|&(xi, w)| {
                    let sigma = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xi;
                    let weight = 0.5 * (hi - lo) * w;
                    (sigma, weight, propagator_matrix(kernel, &quad, sigma))
                })
                .collect();
            octaves.push(OctavePanel { hi, nodes });
            lo = hi;
        }
        Ok(Duhamel { kernel, grid, quad, tau_min, octaves })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    /// `S[g]` on the whole grid. See [`Duhamel::s_fields`].
    pub fn s_field(&self, g: &dyn SourceTerm) -> Result<Field> {
        Ok(self.s_fields(&[g])?.pop().unwrap())
    }

    /// `S[g]` for several sources in one pass (the partial-panel
    /// propagators are shared). Returns one field per source.
    pub fn s_fields(&self, sources: &[&dyn SourceTerm]) -> Result<Vec<Field>> {
        let n = self.grid.node_count();
        let times = self.grid.times().to_vec();
        let mut fields: Vec<Field> = sources
            .iter()
            .map(|_| Field::zeros(Arc::clone(&self.grid)))
            .collect();
        let mut scales = vec![0.0f64; sources.len()];
        let mut abs_peak = vec![0.0f64; sources.len()];

        for (k, &t) in times.iter().enumerate().skip(1) {
            let mut acc = vec![vec![0.0f64; n]; sources.len()];
            let mut abs = vec![vec![0.0f64; n]; sources.len()];

            let tau = self.tau_min.min(t);
            self.accumulate_tail(sources, t, tau, &mut acc, &mut abs);

            let mut covered = tau;
            for panel in &self.octaves {
                if panel.hi > t + 1e-15 * t.max(1.0) {
                    break;
                }
                for (sigma, weight, mat) in &panel.nodes {
                    self.apply_propagator(sources, t, *sigma, *weight, mat, &mut acc, &mut abs, &mut scales)?;
                }
                covered = panel.hi;
            }
            if t - covered > 1e-14 * t.max(1.0) {
                for &(xi, w) in &GAUSS4 {
                    let sigma = 0.5 * (covered + t) + 0.5 * (t - covered) * xi;
                    let weight = 0.5 * (t - covered) * w;
                    let mat = propagator_matrix(self.kernel, &self.quad, sigma);
                    self.apply_propagator(sources, t, sigma, weight, &mat, &mut acc, &mut abs, &mut scales)?;
                }
            }

            for (s, field) in fields.iter_mut().enumerate() {
                field.level_mut(k).copy_from_slice(&acc[s]);
                for i in 0..n {
                    abs_peak[s] = abs_peak[s].max(abs[s][i]);
                }
            }
        }

        for (s, peak) in abs_peak.iter().enumerate() {
            let threshold = DIVERGENCE_FACTOR * scales[s].max(1.0);
            if *peak > threshold {
                return Err(Error::Divergence(format!(
                    "source {s}: absolute integral {peak:.3e} exceeds {threshold:.3e}"
                )));
            }
        }
        Ok(fields)
    }

    /// The slice `sigma in [0, tau]` where the kernel acts as the
    /// identity: contributes `int g(x, t - sigma) dsigma` at interior
    /// nodes, nothing at boundary nodes (the kernel row vanishes there).
    fn accumulate_tail(
        &self,
        sources: &[&dyn SourceTerm],
        t: f64,
        tau: f64,
        acc: &mut [Vec<f64>],
        abs: &mut [Vec<f64>],
    ) {
        let n = self.grid.node_count();
        for &(xi, w) in &GAUSS2 {
            let sigma = 0.5 * tau + 0.5 * tau * xi;
            let weight = 0.5 * tau * w;
            for (s, src) in sources.iter().enumerate() {
                for i in 0..n {
                    if !self.grid.is_interior(i) {
                        continue;
                    }
                    let val = src.value_at(Some(i), &self.quad.coords[i], t - sigma);
                    acc[s][i] += weight * val;
                    abs[s][i] += weight * val.abs();
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_propagator(
        &self,
        sources: &[&dyn SourceTerm],
        t: f64,
        sigma: f64,
        weight: f64,
        mat: &[f64],
        acc: &mut [Vec<f64>],
        abs: &mut [Vec<f64>],
        scales: &mut [f64],
    ) -> Result<()> {
        let n = self.grid.node_count();
        for (s, src) in sources.iter().enumerate() {
            let mut gvec = vec![0.0f64; n];
            for j in 0..n {
                let v = src.value_at(Some(j), &self.quad.coords[j], t - sigma);
                if !v.is_finite() {
                    return Err(Error::Divergence(format!(
                        "source {s} is not finite at node {j} (x = {:?}, t = {:.6})",
                        self.quad.coords[j],
                        t - sigma
                    )));
                }
                gvec[j] = v;
                scales[s] = scales[s].max(v.abs());
            }
            let (acc_s, abs_s) = (&mut acc[s], &mut abs[s]);
            acc_s
                .par_iter_mut()
                .zip(abs_s.par_iter_mut())
                .enumerate()
                .for_each(|(i, (a, ab))| {
                    let row = &mat[i * n..(i + 1) * n];
                    let mut dot = 0.0;
                    let mut dot_abs = 0.0;
                    for j in 0..n {
                        dot += row[j] * gvec[j];
                        dot_abs += row[j] * gvec[j].abs();
                    }
                    *a += weight * dot;
                    *ab += weight * dot_abs;
                });
        }
        Ok(())
    }

    /// `R[f; u0]` on the whole grid: `S[f]` plus heat propagation of the
    /// initial datum. Level 0 is `u0` itself.
    pub fn r_field(&self, f: &dyn SourceTerm, u0: &dyn SourceTerm) -> Result<Field> {
        let mut field = self.s_field(f)?;
        let n = self.grid.node_count();
        let u0_vec: Vec<f64> = (0..n)
            .map(|j| u0.value_at(Some(j), &self.quad.coords[j], 0.0))
            .collect();
        if let Some(j) = u0_vec.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("initial datum not finite at node {j}")));
        }
        for (k, &t) in self.grid.times().to_vec().iter().enumerate() {
            if k == 0 {
                field.level_mut(0).copy_from_slice(&u0_vec);
                continue;
            }
            let mat = propagator_matrix(self.kernel, &self.quad, t);
            let level = field.level_mut(k);
            level.par_iter_mut().enumerate().for_each(|(i, out)| {
                let row = &mat[i * n..(i + 1) * n];
                let mut dot = 0.0;
                for j in 0..n {
                    dot += row[j] * u0_vec[j];
                }
                *out += dot;
            });
        }
        Ok(field)
    }

    /// The canonical caloric majorant `h = R[f; u0]`, gated by the
    /// standing hypotheses `f >= 0`, `f` not identically zero, `u0 >= 0`.
    pub fn h_field(&self, f: &dyn SourceTerm, u0: &dyn SourceTerm) -> Result<Field> {
        let n = self.grid.node_count();
        let mut f_peak = 0.0f64;
        for &t in self.grid.times() {
            for j in 0..n {
                let v = f.value_at(Some(j), &self.quad.coords[j], t);
                if v < -1e-12 {
                    return Err(Error::Hypothesis(format!(
                        "source must be nonnegative; f = {v:.3e} at node {j}, t = {t}"
                    )));
                }
                f_peak = f_peak.max(v);
            }
        }
        if f_peak <= 0.0 {
            return Err(Error::Hypothesis(
                "source must not vanish identically (the majorant would be trivial)".into(),
            ));
        }
        for j in 0..n {
            let v = u0.value_at(Some(j), &self.quad.coords[j], 0.0);
            if v < -1e-12 {
                return Err(Error::Hypothesis(format!(
                    "initial datum must be nonnegative; u0 = {v:.3e} at node {j}"
                )));
            }
        }
        self.r_field(f, u0)
    }

    /// Point evaluation of `S[g]`; `x` need not be a grid node (sampled
    /// sources then cannot be used).
    pub fn s_point(&self, g: &dyn SourceTerm, x: &Coord, t: f64) -> Result<SEval> {
        if !(t > 0.0 && t <= self.grid.t_final() + 1e-12) {
            return Err(Error::Kernel(format!(
                "evaluation time {t} outside (0, {}]",
                self.grid.t_final()
            )));
        }
        let n = self.quad.len();
        let mut value = 0.0;
        let mut abs = 0.0;
        let mut scale = 0.0f64;

        let tau = self.tau_min.min(t);
        for &(xi, w) in &GAUSS2 {
            let sigma = 0.5 * tau + 0.5 * tau * xi;
            let weight = 0.5 * tau * w;
            let v = g.value_at(None, x, t - sigma);
            value += weight * v;
            abs += weight * v.abs();
        }

        let mut covered = tau;
        let mut segments: Vec<(f64, f64)> = Vec::new();
        for panel in &self.octaves {
            if panel.hi > t + 1e-15 * t.max(1.0) {
                break;
            }
            for (sigma, weight, _) in &panel.nodes {
                segments.push((*sigma, *weight));
            }
            covered = panel.hi;
        }
        if t - covered > 1e-14 * t.max(1.0) {
            for &(xi, w) in &GAUSS4 {
                segments.push((
                    0.5 * (covered + t) + 0.5 * (t - covered) * xi,
                    0.5 * (t - covered) * w,
                ));
            }
        }
        for (sigma, weight) in segments {
            let mut dot = 0.0;
            let mut dot_abs = 0.0;
            for j in 0..n {
                let p = self.kernel.eval_raw(x, &self.quad.coords[j], sigma) * self.quad.weights[j];
                let v = g.value_at(Some(j), &self.quad.coords[j], t - sigma);
                if !v.is_finite() {
                    return Err(Error::Divergence(format!(
                        "source not finite at node {j}, t = {:.6}",
                        t - sigma
                    )));
                }
                scale = scale.max(v.abs());
                dot += p * v;
                dot_abs += p * v.abs();
            }
            value += weight * dot;
            abs += weight * dot_abs;
        }
        if abs > DIVERGENCE_FACTOR * scale.max(1.0) {
            return Err(Error::Divergence(format!(
                "absolute integral {abs:.3e} exceeds threshold at x = {x:?}, t = {t}"
            )));
        }
        Ok(SEval { value, abs_integral: abs })
    }

    /// Point evaluation of `R[f; u0]`.
    pub fn r_point(&self, f: &dyn SourceTerm, u0: &dyn SourceTerm, x: &Coord, t: f64) -> Result<SEval> {
        let mut out = self.s_point(f, x, t)?;
        let n = self.quad.len();
        let mut dot = 0.0;
        for j in 0..n {
            let p = self.kernel.eval_raw(x, &self.quad.coords[j], t) * self.quad.weights[j];
            dot += p * u0.value_at(Some(j), &self.quad.coords[j], 0.0);
        }
        out.value += dot;
        out.abs_integral += dot.abs();
        Ok(out)
    }
}

fn propagator_matrix(kernel: &Kernel, quad: &Quadrature, sigma: f64) -> Vec<f64> {
    let n = quad.len();
    let mut mat = vec![0.0f64; n * n];
    mat.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let x = &quad.coords[i];
        for j in 0..n {
            row[j] = kernel.eval_raw(x, &quad.coords[j], sigma) * quad.weights[j];
        }
    });
    mat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{c1, Domain};
    use rand::{Rng, SeedableRng};

    fn line_engine(res: usize, t_final: f64, steps: usize) -> (Kernel, Arc<Grid>) {
        let kernel = Kernel::new(Domain::RealLine).unwrap();
        let grid = Arc::new(
            Grid::build(Domain::RealLine, res, t_final, steps, Some(8.0)).unwrap(),
        );
        (kernel, grid)
    }

    fn interval_engine(res: usize, t_final: f64, steps: usize) -> (Kernel, Arc<Grid>) {
        let d = Domain::Interval { a: 0.0, b: 1.0 };
        let kernel = Kernel::new(d.clone()).unwrap();
        let grid = Arc::new(Grid::build(d, res, t_final, steps, None).unwrap());
        (kernel, grid)
    }

    #[test]
    fn zero_source_gives_zero() {
        let (k, g) = interval_engine(41, 0.5, 10);
        let duh = Duhamel::new(&k, g).unwrap();
        let f = duh.s_field(&|_: &Coord, _: f64| 0.0).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn constant_source_on_the_line_integrates_to_ct() {
        let (k, g) = line_engine(401, 0.5, 10);
        let duh = Duhamel::new(&k, g).unwrap();
        let c = 2.5;
        let field = duh.s_field(&move |_: &Coord, _: f64| c).unwrap();
        let grid = duh.grid();
        for (kk, &t) in grid.times().iter().enumerate().skip(1) {
            // Sample mid nodes, away from the truncation shadow.
            for i in [150usize, 200, 250] {
                let v = field.at(kk, i);
                assert!((v - c * t).abs() < 1e-6, "t = {t}: {v} vs {}", c * t);
            }
        }
        let pt = duh.s_point(&move |_: &Coord, _: f64| c, &c1(0.3), 0.37).unwrap();
        assert!((pt.value - c * 0.37).abs() < 1e-6);
        assert!((pt.abs_integral - c * 0.37).abs() < 1e-6);
    }

    #[test]
    fn interval_torsion_limit() {
        // S[1] on (0,1) tends to the torsion function x(1-x)/2 as t grows.
        let (k, g) = interval_engine(201, 2.0, 20);
        let duh = Duhamel::new(&k, g).unwrap();
        let pt = duh.s_point(&|_: &Coord, _: f64| 1.0, &c1(0.5), 2.0).unwrap();
        assert!((pt.value - 0.125).abs() < 1e-4, "{}", pt.value);
        // And the field value is increasing in t toward the limit (up to
        // quadrature noise once the increments saturate).
        let field = duh.s_field(&|_: &Coord, _: f64| 1.0).unwrap();
        let mid = duh.grid().node_count() / 2;
        let mut prev = 0.0;
        for kk in 1..duh.grid().times().len() {
            let v = field.at(kk, mid);
            assert!(v > prev - 1e-7, "level {kk}: {v} < {prev}");
            prev = v;
        }
        assert!((prev - 0.125).abs() < 1e-4);
    }

    #[test]
    fn heat_of_unit_initial_datum_is_one_on_the_line() {
        let (k, g) = line_engine(401, 0.5, 8);
        let duh = Duhamel::new(&k, g).unwrap();
        let h = duh
            .r_field(&|_: &Coord, _: f64| 0.0, &|_: &Coord, _: f64| 1.0)
            .unwrap();
        for kk in 0..duh.grid().times().len() {
            for i in [150usize, 200, 250] {
                assert!((h.at(kk, i) - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn narrow_bump_initial_datum_approximates_kernel() {
        let (k, g) = line_engine(1601, 0.25, 4);
        let duh = Duhamel::new(&k, g).unwrap();
        let y0 = 0.5;
        let w = 0.02;
        let bump = move |x: &Coord, _: f64| {
            let z = (x[0] - y0) / w;
            if z.abs() < 1.0 {
                (1.0 - z * z).powi(2)
            } else {
                0.0
            }
        };
        // Bump mass by direct quadrature.
        let quad = duh.grid().quadrature();
        let mass: f64 = quad.integrate(|c| bump(c, 0.0));
        let t = 0.25;
        let v = duh.r_point(&|_: &Coord, _: f64| 0.0, &bump, &c1(1.2), t).unwrap();
        let expected = k.eval(&c1(1.2), &c1(y0), t).unwrap() * mass;
        assert!(
            (v.value - expected).abs() < 2e-4 * expected.abs().max(1e-3),
            "{} vs {expected}",
            v.value
        );
    }

    #[test]
    fn line_h_with_unit_source_and_datum_is_one_plus_t() {
        let (k, g) = line_engine(401, 0.5, 10);
        let duh = Duhamel::new(&k, g).unwrap();
        let h = duh
            .h_field(&|_: &Coord, _: f64| 1.0, &|_: &Coord, _: f64| 1.0)
            .unwrap();
        for (kk, &t) in duh.grid().times().iter().enumerate() {
            let v = h.at(kk, 200);
            assert!((v - (1.0 + t)).abs() < 2e-6, "t = {t}: {v}");
        }
    }

    #[test]
    fn majorant_hypothesis_gate() {
        let (k, g) = interval_engine(21, 0.5, 5);
        let duh = Duhamel::new(&k, g).unwrap();
        let zero = |_: &Coord, _: f64| 0.0;
        assert!(matches!(
            duh.h_field(&zero, &zero),
            Err(Error::Hypothesis(_))
        ));
        let neg = |_: &Coord, _: f64| -1.0;
        assert!(duh.h_field(&neg, &zero).is_err());
    }

    #[test]
    fn linearity_on_random_pairs() {
        let (k, g) = interval_engine(41, 0.4, 8);
        let duh = Duhamel::new(&k, g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..3 {
            let (a, b): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let (p1, p2): (f64, f64) = (rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0));
            let g1 = move |x: &Coord, t: f64| (p1 * x[0]).sin() * (1.0 + t);
            let g2 = move |x: &Coord, t: f64| (p2 * x[0]).cos() - 0.5 * t;
            let combo = move |x: &Coord, t: f64| a * g1(x, t) + b * g2(x, t);
            let s1 = duh.s_point(&g1, &c1(0.4), 0.4).unwrap().value;
            let s2 = duh.s_point(&g2, &c1(0.4), 0.4).unwrap().value;
            let sc = duh.s_point(&combo, &c1(0.4), 0.4).unwrap().value;
            assert!((sc - (a * s1 + b * s2)).abs() < 1e-10 * (1.0 + sc.abs()));
        }
    }

    #[test]
    fn monotone_in_the_source() {
        let (k, g) = interval_engine(41, 0.4, 8);
        let duh = Duhamel::new(&k, g).unwrap();
        let g1 = |x: &Coord, _: f64| (3.0 * x[0]).sin();
        let g2 = |x: &Coord, t: f64| (3.0 * x[0]).sin() + 0.3 + 0.1 * t;
        let f1 = duh.s_field(&g1).unwrap();
        let f2 = duh.s_field(&g2).unwrap();
        for j in 0..f1.values().len() {
            assert!(f1.values()[j] <= f2.values()[j] + 1e-9);
        }
    }

    #[test]
    fn caloric_residual_shrinks_under_refinement() {
        // h = R[f; u0] solves dh/dt - Lap h = f; measure the discrete
        // residual with backward time differences.
        let f = |x: &Coord, t: f64| 1.0 + 0.5 * (2.0 * x[0]).cos() * (-t).exp();
        let u0 = |x: &Coord, _: f64| (std::f64::consts::PI * x[0]).sin();
        let mut errs = Vec::new();
        for (res, steps) in [(41usize, 16usize), (81, 32)] {
            let (k, g) = interval_engine(res, 0.4, steps);
            let duh = Duhamel::new(&k, Arc::clone(&g)).unwrap();
            let h = duh.r_field(&f, &u0).unwrap();
            let n = g.node_count();
            let dt = g.dt();
            let mut worst = 0.0f64;
            for kk in 1..g.times().len() {
                let lap = g.laplacian(h.level(kk)).unwrap();
                for i in 0..n {
                    if !g.is_interior(i) {
                        continue;
                    }
                    // Exclude the first two nodes next to the boundary
                    // where the tail slice is only first-order accurate.
                    let x = g.coord(i)[0];
                    if x < 2.5 / (res as f64) || x > 1.0 - 2.5 / (res as f64) {
                        continue;
                    }
                    let dt_h = (h.at(kk, i) - h.at(kk - 1, i)) / dt;
                    let r = dt_h - lap[i] - f(&g.coord(i), g.times()[kk]);
                    worst = worst.max(r.abs());
                }
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.6, "residuals {errs:?}, ratio {ratio}");
    }

    #[test]
    fn boundary_and_initial_contract() {
        let (k, g) = interval_engine(81, 0.3, 12);
        let duh = Duhamel::new(&k, Arc::clone(&g)).unwrap();
        let u0 = |x: &Coord, _: f64| x[0] * (1.0 - x[0]);
        let h = duh.r_field(&|_: &Coord, _: f64| 1.0, &u0).unwrap();
        // Level 0 is exactly u0.
        for i in 0..g.node_count() {
            assert_eq!(h.at(0, i), u0(&g.coord(i), 0.0));
        }
        // Dirichlet faces stay at zero.
        for kk in 1..g.times().len() {
            assert!(h.at(kk, 0).abs() < 1e-8);
            assert!(h.at(kk, g.node_count() - 1).abs() < 1e-8);
        }
        // First level stays close to u0 in the bulk: the drift away is
        // bounded by t * (|f| + |Lap u0|) = 3 t there.
        let mut worst = 0.0f64;
        for i in 0..g.node_count() {
            let x = g.coord(i)[0];
            if (0.2..=0.8).contains(&x) {
                worst = worst.max((h.at(1, i) - u0(&g.coord(i), 0.0)).abs());
            }
        }
        assert!(worst < 3.5 * g.dt(), "{worst}");
    }

    #[test]
    fn divergent_weighted_source_is_flagged() {
        let (k, g) = interval_engine(41, 0.4, 8);
        let duh = Duhamel::new(&k, Arc::clone(&g)).unwrap();
        // A majorant with an exact dead zone makes the weighted source
        // blow up there for negative powers; the finiteness monitor must
        // refuse rather than integrate garbage.
        let h = Field::sample(Arc::clone(&g), |x, t| (t - 0.2).max(0.0) * (1.0 + x[0]));
        let one = |_: &Coord, _: f64| 1.0;
        let src = ProductSource { field: &h, power: -1.5, factor: Some(&one), indicator: None };
        let r = duh.s_fields(&[&src]);
        assert!(r.is_err(), "expected divergence, got {:?}", r.map(|f| f[0].max_abs()));
        // With the factor vanishing on the dead zone the integral exists.
        let v = |x: &Coord, t: f64| if t <= 0.25 { 0.0 } else { x[0] };
        let src_ok = ProductSource { field: &h, power: -0.5, factor: Some(&v), indicator: None };
        assert!(duh.s_fields(&[&src_ok]).is_ok());
    }

    #[test]
    fn field_source_interpolates_to_same_answer() {
        let (k, g) = interval_engine(41, 0.4, 16);
        let duh = Duhamel::new(&k, Arc::clone(&g)).unwrap();
        let gfun = |x: &Coord, t: f64| (2.0 * x[0] - t).sin();
        let sampled = Field::sample(Arc::clone(&g), gfun);
        let via_fn = duh.s_field(&gfun).unwrap();
        let via_field = duh.s_field(&FieldSource(&sampled)).unwrap();
        let mut worst = 0.0f64;
        for j in 0..via_fn.values().len() {
            worst = worst.max((via_fn.values()[j] - via_field.values()[j]).abs());
        }
        // Only the linear-in-time interpolation separates them.
        assert!(worst < 5e-4, "{worst}");
    }
}
