//! Finite-difference solution of the linear and semilinear problems.
//!
//! The diffusion part is a theta scheme (backward Euler by default,
//! Crank-Nicolson at `theta = 0.5`) with zero or prescribed Dirichlet
//! data; one-dimensional grids solve the tridiagonal system by the Thomas
//! algorithm with a factorization reused across steps, boxes fall back to
//! conjugate gradients on the interior unknowns.
//!
//! The reaction `V u^q` is treated by Lie splitting with a per-node
//! implicit scalar solve `u + dt V u^q = w` (safeguarded Newton within a
//! sign-change bracket). On the monotone branches this map preserves the
//! comparison structure of the scheme; quenching (no admissible root for
//! `q < 0`) is floored at the positivity floor and reported, never
//! silently clamped.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::duhamel::SourceTerm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactionTreatment {
    Explicit,
    ImplicitNewton,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Implicitness of the diffusion step, in [0.5, 1].
    pub theta: f64,
    pub reaction: ReactionTreatment,
    /// Positivity floor for `q < 0`; 0 selects `1e-10 * scale(u0, f)`.
    pub positivity_floor: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            theta: 1.0,
            reaction: ReactionTreatment::ImplicitNewton,
            positivity_floor: 0.0,
            newton_tol: 1e-13,
            newton_max: 80,
        }
    }
}

/// Numerical solution together with the reaction-step diagnostics.
#[derive(Debug)]
pub struct SemilinearSolution {
    pub field: Field,
    /// Nodes where the reaction root fell below half the positivity floor
    /// (or no root existed) and the floor was imposed.
    pub positivity_breaches: usize,
    pub worst_breach: f64,
}

/// Outcome of the sub/supersolution sweep.
#[derive(Debug)]
pub struct IterationOutcome {
    pub field: Field,
    pub iterations: usize,
    pub converged: bool,
    pub sandwich_ok: bool,
    /// Largest escape outside the [subsolution, supersolution] strip.
    pub max_escape: f64,
}

struct ThetaScheme {
    grid: Arc<Grid>,
    theta: f64,
    // Tridiagonal rows (1-d): lower, diag, upper of (I - theta dt L).
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    // Thomas factorization workspace.
    cp: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl ThetaScheme {
    fn new(grid: Arc<Grid>, theta: f64) -> Result<ThetaScheme> {
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::Solver(format!("theta must lie in [0.5, 1], got {theta}")));
        }
        let n = grid.node_count();
        let mut scheme = ThetaScheme {
            grid,
            theta,
            lower: vec![0.0; n],
            diag: vec![1.0; n],
            upper: vec![0.0; n],
            cp: vec![0.0; n],
            inv_denom: vec![0.0; n],
        };
        if scheme.grid.dim() == 1 {
            scheme.assemble_tridiagonal()?;
        }
        Ok(scheme)
    }

    fn assemble_tridiagonal(&mut self) -> Result<()> {
        let grid = &self.grid;
        let axis = &grid.axes()[0];
        let n = grid.node_count();
        let dt = grid.dt();
        let dx = axis.dx;
        for i in 0..n {
            if !grid.is_interior(i) {
                continue; // identity row carries the Dirichlet value
            }
            let (a_w, a_e) = stencil_coeffs(grid, i);
            if a_w < 0.0 || a_e < 0.0 {
                return Err(Error::Solver(format!(
                    "drift term breaks the monotone stencil at node {i}; refine the grid"
                )));
            }
            self.lower[i] = -self.theta * dt * a_w;
            self.upper[i] = -self.theta * dt * a_e;
            self.diag[i] = 1.0 + self.theta * dt * (a_w + a_e);
            let _ = dx;
        }
        // Thomas forward factorization (reused every step).
        self.cp[0] = self.upper[0] / self.diag[0];
        self.inv_denom[0] = 1.0 / self.diag[0];
        for i in 1..n {
            let denom = self.diag[i] - self.lower[i] * self.cp[i - 1];
            if denom.abs() < 1e-300 {
                return Err(Error::Solver("singular tridiagonal system".into()));
            }
            self.inv_denom[i] = 1.0 / denom;
            self.cp[i] = self.upper[i] * self.inv_denom[i];
        }
        Ok(())
    }

    /// One step: returns u at the next level given u at the current one.
    fn step(&self, u: &[f64], rhs_interior: &[f64], boundary_next: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.grid;
        let n = grid.node_count();
        let dt = grid.dt();
        let lap = grid.laplacian(u)?;
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = if grid.is_interior(i) {
                u[i] + (1.0 - self.theta) * dt * lap[i] + dt * rhs_interior[i]
            } else {
                boundary_next[i]
            };
        }
        if grid.dim() == 1 {
            Ok(self.solve_tridiagonal(&rhs))
        } else {
            self.solve_cg(&rhs)
        }
    }

    fn solve_tridiagonal(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut d = vec![0.0; n];
        d[0] = rhs[0] * self.inv_denom[0];
        for i in 1..n {
            d[i] = (rhs[i] - self.lower[i] * d[i - 1]) * self.inv_denom[i];
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= self.cp[i] * next;
        }
        x
    }

    /// Matrix-free conjugate gradients for box grids: the operator
    /// `v -> v - theta dt Lap(v)` with zero values at boundary nodes.
    fn solve_cg(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let grid = &self.grid;
        let n = grid.node_count();
        let dt = grid.dt();
        let theta = self.theta;
        let apply = |v: &[f64]| -> Result<Vec<f64>> {
            let lap = grid.laplacian(v)?;
            Ok((0..n)
                .map(|i| if grid.is_interior(i) { v[i] - theta * dt * lap[i] } else { v[i] })
                .collect())
        };
        // Move known boundary values into the right-hand side.
        let mut x: Vec<f64> = (0..n).map(|i| if grid.is_interior(i) { 0.0 } else { rhs[i] }).collect();
        let ax = apply(&x)?;
        let mut r: Vec<f64> = (0..n)
            .map(|i| if grid.is_interior(i) { rhs[i] - ax[i] } else { 0.0 })
            .collect();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let target = 1e-26 * rr.max(1e-30);
        for _ in 0..10 * n {
            if rr <= target {
                break;
            }
            let ap = apply(&p)?;
            let pap: f64 = p
                .iter()
                .zip(&ap)
                .enumerate()
                .filter(|(i, _)| grid.is_interior(*i))
                .map(|(_, (pi, api))| pi * api)
                .sum();
            if pap.abs() < 1e-300 {
                return Err(Error::Solver("conjugate gradient breakdown".into()));
            }
            let alpha = rr / pap;
            for i in 0..n {
                if grid.is_interior(i) {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                if grid.is_interior(i) {
                    p[i] = r[i] + beta * p[i];
                }
            }
        }
        Ok(x)
    }
}

/// West/east stencil coefficients of the 1-d Laplacian at node `i` so
/// that `(L w)_i = a_w (w_West - w_i) + a_e (w_East - w_i)` (the pole node
/// folds its reflected ghost into the east coefficient).
fn stencil_coeffs(grid: &Grid, i: usize) -> (f64, f64) {
    let axis = &grid.axes()[0];
    let dx = axis.dx;
    let r = grid.coord(i)[0];
    let drift = if grid.domain().is_radial() { grid.domain().radial_drift(r) } else { 0.0 };
    if i == 0 && axis.staggered_pole {
        return (0.0, 1.0 / (dx * dx) + drift / (2.0 * dx));
    }
    (
        1.0 / (dx * dx) - drift / (2.0 * dx),
        1.0 / (dx * dx) + drift / (2.0 * dx),
    )
}

fn gather(grid: &Grid, src: &dyn SourceTerm, t: f64) -> Vec<f64> {
    (0..grid.node_count())
        .map(|i| src.value_at(Some(i), &grid.coord(i), t))
        .collect()
}

/// Theta-scheme solution of `du/dt - Lap u = g` with Dirichlet data
/// `boundary` and initial datum `u0`.
pub fn solve_linear(
    grid: &Arc<Grid>,
    g: &dyn SourceTerm,
    u0: &dyn SourceTerm,
    boundary: &dyn SourceTerm,
    theta: f64,
) -> Result<Field> {
    let scheme = ThetaScheme::new(Arc::clone(grid), theta)?;
    let n = grid.node_count();
    let times = grid.times();
    let mut field = Field::zeros(Arc::clone(grid));

    let mut u: Vec<f64> = gather(grid, u0, 0.0);
    field.level_mut(0).copy_from_slice(&u);

    for k in 1..times.len() {
        let t_next = times[k];
        let t_prev = times[k - 1];
        let g_next = gather(grid, g, t_next);
        let g_prev = if theta < 1.0 { gather(grid, g, t_prev) } else { Vec::new() };
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                if theta < 1.0 {
                    theta * g_next[i] + (1.0 - theta) * g_prev[i]
                } else {
                    g_next[i]
                }
            })
            .collect();
        let bc = gather(grid, boundary, t_next);
        u = scheme.step(&u, &rhs, &bc)?;
        field.level_mut(k).copy_from_slice(&u);
    }
    Ok(field)
}

/// Scalar implicit reaction step: the root of `u + a u^q = w` on the
/// branch continuous in `w`, with `u >= floor`. Returns (root, breached).
fn solve_reaction(
    q: f64,
    a: f64,
    w: f64,
    floor: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, bool)> {
    if a == 0.0 {
        return Ok((w, false));
    }
    if q == 1.0 {
        let denom = 1.0 + a;
        if denom <= 1e-12 {
            return Err(Error::Solver(format!(
                "linear reaction step unstable: 1 + dt V = {denom:.3e}"
            )));
        }
        return Ok((w / denom, false));
    }

    let psi = |u: f64| u + a * u.powf(q) - w;

    // Bracket a sign change on the branch we want.
    let (lo, hi) = if q > 0.0 {
        if w <= 0.0 {
            return Ok((0.0, w < -1e-12));
        }
        if a >= 0.0 {
            // Increasing map: root in (0, w].
            (0.0, w.max(1e-300))
        } else if q > 1.0 {
            // Increasing up to the turning point; beyond it the step
            // blows up within dt.
            let turn = (1.0 / (-a * q)).powf(1.0 / (q - 1.0));
            if psi(turn) < 0.0 {
                return Err(Error::Solver(format!(
                    "reaction step blow-up: no root of u + a u^q = w with a = {a:.3e}, w = {w:.3e}"
                )));
            }
            (0.0, turn)
        } else {
            // 0 < q < 1 with a < 0: minimum at turn, unique root beyond it.
            let turn = (-a * q).powf(1.0 / (1.0 - q));
            let mut hi = turn.max(w).max(1e-12);
            let mut guard = 0;
            while psi(hi) < 0.0 && guard < 200 {
                hi *= 2.0;
                guard += 1;
            }
            (turn, hi)
        }
    } else {
        // q < 0: the map needs u > 0.
        let floor_eff = floor.max(1e-300);
        if a > 0.0 {
            // Decreasing to a minimum at turn, then increasing: the
            // stable branch is the larger root.
            let turn = (a * (-q)).powf(1.0 / (1.0 - q));
            if psi(turn) > 0.0 {
                // Quenching: the sink eats the whole value within dt.
                return Ok((floor_eff, true));
            }
            let mut hi = (turn * 2.0).max(w).max(1.0);
            let mut guard = 0;
            while psi(hi) < 0.0 && guard < 200 {
                hi *= 2.0;
                guard += 1;
            }
            (turn, hi)
        } else {
            // a < 0: strictly increasing from -inf; unique root.
            let mut hi = w.abs().max(1.0);
            let mut guard = 0;
            while psi(hi) < 0.0 && guard < 200 {
                hi *= 2.0;
                guard += 1;
            }
            (floor_eff * 1e-6, hi)
        }
    };

    let (mut lo, mut hi) = (lo, hi);
    let (flo, fhi) = (psi(lo.max(1e-300)), psi(hi));
    if flo.is_nan() || fhi.is_nan() || flo * fhi > 0.0 && flo.abs() > tol && fhi.abs() > tol {
        return Err(Error::Solver(format!(
            "reaction bracket failed for q = {q}, a = {a:.3e}, w = {w:.3e}"
        )));
    }

    let mut u = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let f = psi(u);
        if f.abs() <= tol * (1.0 + u.abs()) {
            break;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let df = 1.0 + a * q * u.powf(q - 1.0);
        let newton = u - f / df;
        u = if df.abs() > 1e-300 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if q < 0.0 && u < floor {
        return Ok((floor, u < 0.5 * floor));
    }
    Ok((u.max(0.0), false))
}

/// Splitting solution of `du/dt - Lap u + V u^q = f` with zero Dirichlet
/// data: a theta diffusion step with source `f`, then the per-node
/// implicit (or explicit) reaction step.
pub fn solve_semilinear(
    grid: &Arc<Grid>,
    v_pot: &dyn SourceTerm,
    f: &dyn SourceTerm,
    u0: &dyn SourceTerm,
    q: f64,
    opts: &SolverOptions,
) -> Result<SemilinearSolution> {
    if q == 0.0 {
        return Err(Error::Solver("the reaction exponent must be nonzero".into()));
    }
    let scheme = ThetaScheme::new(Arc::clone(grid), opts.theta)?;
    let n = grid.node_count();
    let times = grid.times();
    let dt = grid.dt();

    let mut u: Vec<f64> = gather(grid, u0, 0.0);
    let scale = u
        .iter()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(gather(grid, f, 0.0).iter().map(|v| v.abs()).fold(0.0, f64::max))
        .max(1e-6);
    let floor = if q < 0.0 {
        if opts.positivity_floor > 0.0 { opts.positivity_floor } else { 1e-10 * scale }
    } else {
        0.0
    };
    if q < 0.0 {
        for v in u.iter_mut() {
            if grid.is_interior(0) { /* keep shape */ }
            *v = v.max(0.0);
        }
        // Seed the floor so the first reaction step is defined.
        for (i, v) in u.iter_mut().enumerate() {
            if grid.is_interior(i) && *v < floor {
                *v = floor;
            }
        }
    }

    let mut field = Field::zeros(Arc::clone(grid));
    field.level_mut(0).copy_from_slice(&u);
    let zero_bc = vec![0.0; n];
    let mut breaches = 0usize;
    let mut worst_breach = 0.0f64;

    for k in 1..times.len() {
        let t_next = times[k];
        let f_next = gather(grid, f, t_next);
        let w = scheme.step(&u, &f_next, &zero_bc)?;
        let v_next = gather(grid, v_pot, t_next);
        let mut u_next = w.clone();
        for i in 0..n {
            if !grid.is_interior(i) || v_next[i] == 0.0 {
                continue;
            }
            match opts.reaction {
                ReactionTreatment::Explicit => {
                    let base = u[i];
                    if base <= 0.0 && q < 0.0 {
                        return Err(Error::Solver(format!(
                            "explicit reaction undefined at node {i}: u = {base}, q = {q}"
                        )));
                    }
                    u_next[i] = w[i] - dt * v_next[i] * base.max(0.0).powf(q);
                }
                ReactionTreatment::ImplicitNewton => {
                    let (root, breached) = solve_reaction(
                        q,
                        dt * v_next[i],
                        w[i],
                        floor,
                        opts.newton_tol,
                        opts.newton_max,
                    )?;
                    if breached {
                        breaches += 1;
                        worst_breach = worst_breach.max((floor - root).max(floor));
                    }
                    u_next[i] = root;
                }
            }
        }
        u = u_next;
        field.level_mut(k).copy_from_slice(&u);
    }
    Ok(SemilinearSolution { field, positivity_breaches: breaches, worst_breach })
}

/// Discrete parabolic residual `du/dt - Lap u + V u^q - f` with backward
/// time differences, at interior nodes and levels k >= 1.
pub fn residual(
    grid: &Arc<Grid>,
    u: &Field,
    v_pot: &dyn SourceTerm,
    f: &dyn SourceTerm,
    q: f64,
) -> Result<Field> {
    let n = grid.node_count();
    let dt = grid.dt();
    let mut out = Field::zeros(Arc::clone(grid));
    for k in 1..grid.times().len() {
        let t = grid.times()[k];
        let lap = grid.laplacian(u.level(k))?;
        for i in 0..n {
            if !grid.is_interior(i) {
                continue;
            }
            let x = grid.coord(i);
            let v = v_pot.value_at(Some(i), &x, t);
            let reaction = if v == 0.0 {
                0.0
            } else {
                let uv = u.at(k, i);
                if uv > 0.0 {
                    v * uv.powf(q)
                } else if uv == 0.0 && q > 0.0 {
                    0.0
                } else if uv < 0.0 && q.fract() == 0.0 && q > 0.0 {
                    v * uv.powi(q as i32)
                } else {
                    return Err(Error::Solver(format!(
                        "u^q undefined at node {i}, level {k}: u = {uv}, q = {q}"
                    )));
                }
            };
            let dudt = (u.at(k, i) - u.at(k - 1, i)) / dt;
            out.set(k, i, dudt - lap[i] + reaction - f.value_at(Some(i), &x, t));
        }
    }
    Ok(out)
}

/// Field source pinned to exact grid levels (no interpolation), for the
/// iteration sources below.
struct LevelSource<'a> {
    field: &'a Field,
}

impl SourceTerm for LevelSource<'_> {
    fn value_at(&self, node: Option<usize>, _x: &crate::grid::Coord, t: f64) -> f64 {
        let node = node.expect("level sources need grid nodes");
        let dt = self.field.grid().dt();
        let k = ((t / dt).round() as usize).min(self.field.grid().times().len() - 1);
        self.field.at(k, node)
    }
}

/// Monotone sweep for the existence regime: iterate
/// `u_{j+1} = solve_linear(f - V u_j^q)` from `start` until the sup-norm
/// step drops below `step_tol`, checking each iterate against the
/// sub/supersolution strip when one is supplied.
#[allow(clippy::too_many_arguments)]
pub fn monotone_iteration(
    grid: &Arc<Grid>,
    v_pot: &dyn SourceTerm,
    f: &dyn SourceTerm,
    u0: &dyn SourceTerm,
    q: f64,
    start: &Field,
    sandwich: Option<(&Field, &Field)>,
    step_tol: f64,
    max_iters: usize,
    sandwich_slack: f64,
) -> Result<IterationOutcome> {
    let n = grid.node_count();
    let mut current = start.clone();
    let mut max_escape = 0.0f64;
    let check_strip = |field: &Field, esc: &mut f64| {
        if let Some((lower, upper)) = sandwich {
            for k in 0..grid.times().len() {
                for i in 0..n {
                    if lower.is_masked(k, i) || upper.is_masked(k, i) {
                        continue;
                    }
                    let u = field.at(k, i);
                    *esc = esc.max(lower.at(k, i) - u).max(u - upper.at(k, i));
                }
            }
        }
    };
    check_strip(&current, &mut max_escape);

    let mut iterations = 0usize;
    let mut converged = false;
    let zero_bc = |_: &crate::grid::Coord, _: f64| 0.0;
    while iterations < max_iters {
        iterations += 1;
        let level_src = LevelSource { field: &current };
        let source = |_node: Option<usize>, _x: &crate::grid::Coord, _t: f64| 0.0;
        let _ = source; // the closure below captures what it needs
        struct IterationSource<'a> {
            v_pot: &'a dyn SourceTerm,
            f: &'a dyn SourceTerm,
            prev: &'a LevelSource<'a>,
            q: f64,
        }
        impl SourceTerm for IterationSource<'_> {
            fn value_at(&self, node: Option<usize>, x: &crate::grid::Coord, t: f64) -> f64 {
                let v = self.v_pot.value_at(node, x, t);
                let fv = self.f.value_at(node, x, t);
                if v == 0.0 {
                    return fv;
                }
                let u = self.prev.value_at(node, x, t);
                let powed = if u > 0.0 {
                    u.powf(self.q)
                } else if self.q > 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                fv - v * powed
            }
        }
        let src = IterationSource { v_pot, f, prev: &level_src, q };
        let next = solve_linear(grid, &src, u0, &zero_bc, 1.0)?;
        let mut step = 0.0f64;
        for j in 0..next.values().len() {
            let d = (next.values()[j] - current.values()[j]).abs();
            step = step.max(d);
        }
        if !step.is_finite() {
            return Err(Error::Solver("monotone iteration produced a non-finite iterate".into()));
        }
        current = next;
        check_strip(&current, &mut max_escape);
        if step <= step_tol {
            converged = true;
            break;
        }
    }
    Ok(IterationOutcome {
        field: current,
        iterations,
        converged,
        sandwich_ok: max_escape <= sandwich_slack,
        max_escape,
    })
}
