//! Model-geometry domains and space-time lattices.
//!
//! Supported geometries are the ones with explicit heat kernels: the real
//! line, bounded intervals and boxes with zero Dirichlet data, and radial
//! Euclidean / hyperbolic-3 shells. Radial geometries are treated as
//! one-dimensional weighted manifolds: a point is a radius, the measure is
//! `A(r) dr` with the sphere area factor `A`, and the Laplacian is the
//! radial operator `w'' + drift(r) w'`.
//!
//! Unbounded directions are truncated at a user-supplied radius before any
//! lattice is built; the artificial faces are flagged [`Face::AtInfinity`]
//! and carry zero Dirichlet data, chosen large enough that the Gaussian
//! tail through them is negligible (see [`truncation_radius`]).

use crate::error::{Error, Result};

/// Spatial point. Unused coordinates are zero; radial geometries store the
/// radius in slot 0.
pub type Coord = [f64; 3];

/// Convenience constructor for one-dimensional coordinates.
pub fn c1(x: f64) -> Coord {
    [x, 0.0, 0.0]
}

const TAIL_LOG: f64 = 29.933606208922594; // -ln(1e-13)

/// Truncation radius for an unbounded direction: the Gaussian tail
/// `exp(-(R - diam)^2 / (4T))` beyond `R` stays below 1e-12.
pub fn truncation_radius(t_final: f64, data_diameter: f64) -> f64 {
    data_diameter + (4.0 * t_final * TAIL_LOG).sqrt()
}

/// Classification of a lattice face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    /// Genuine boundary of the domain; zero Dirichlet data.
    Dirichlet,
    /// Artificial face from truncating an unbounded direction; also zero
    /// Dirichlet data, but flagged so reports can mask its influence zone.
    AtInfinity,
}

/// Connected model domain on which kernels, operators and solvers act.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    RealLine,
    Interval {
        a: f64,
        b: f64,
    },
    /// Axis-aligned box, `dim <= 3`, every axis bounded.
    Box {
        axes: Vec<(f64, f64)>,
    },
    /// Radial shell in Euclidean n-space; `r_out = None` means unbounded.
    RadialEuclidean {
        dim: u32,
        r_in: f64,
        r_out: Option<f64>,
    },
    /// Radial shell in hyperbolic 3-space.
    RadialHyperbolic3 {
        r_in: f64,
        r_out: Option<f64>,
    },
}

impl Domain {
    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::RealLine => Ok(()),
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidDomain(format!(
                        "interval needs a < b, got ({a}, {b})"
                    )));
                }
                Ok(())
            }
            Domain::Box { axes } => {
                if axes.is_empty() || axes.len() > 3 {
                    return Err(Error::InvalidDomain(format!(
                        "box supports 1..=3 axes, got {}",
                        axes.len()
                    )));
                }
                for &(a, b) in axes {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(Error::InvalidDomain(format!(
                            "box axis needs a < b, got ({a}, {b})"
                        )));
                    }
                }
                Ok(())
            }
            Domain::RadialEuclidean { dim, r_in, r_out } => {
                if *dim == 0 || *dim > 3 {
                    return Err(Error::InvalidDomain(format!(
                        "radial dimension must be 1..=3, got {dim}"
                    )));
                }
                Self::validate_radial(*r_in, *r_out)
            }
            Domain::RadialHyperbolic3 { r_in, r_out } => Self::validate_radial(*r_in, *r_out),
        }
    }

    fn validate_radial(r_in: f64, r_out: Option<f64>) -> Result<()> {
        if r_in < 0.0 || !r_in.is_finite() {
            return Err(Error::InvalidDomain(format!("r_in must be >= 0, got {r_in}")));
        }
        if let Some(r) = r_out {
            if !(r.is_finite() && r > r_in) {
                return Err(Error::InvalidDomain(format!(
                    "radial shell needs r_in < r_out, got ({r_in}, {r:?})"
                )));
            }
        }
        Ok(())
    }

    /// Spatial dimension of the lattice (radial kinds are one-dimensional).
    pub fn grid_dim(&self) -> usize {
        match self {
            Domain::Box { axes } => axes.len(),
            _ => 1,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(
            self,
            Domain::RadialEuclidean { .. } | Domain::RadialHyperbolic3 { .. }
        )
    }

    pub fn is_unbounded(&self) -> bool {
        match self {
            Domain::RealLine => true,
            Domain::Interval { .. } | Domain::Box { .. } => false,
            Domain::RadialEuclidean { r_out, .. } | Domain::RadialHyperbolic3 { r_out, .. } => {
                r_out.is_none()
            }
        }
    }

    /// Whether the heat semigroup conserves mass (no Dirichlet boundary at
    /// all: the full line, full Euclidean space, full hyperbolic space).
    pub fn is_complete(&self) -> bool {
        match self {
            Domain::RealLine => true,
            Domain::RadialEuclidean { r_in, r_out, .. }
            | Domain::RadialHyperbolic3 { r_in, r_out } => *r_in == 0.0 && r_out.is_none(),
            _ => false,
        }
    }

    /// Riemannian measure density at `x` with respect to `dx` (or `dr`).
    pub fn measure_density(&self, x: &Coord) -> f64 {
        match self {
            Domain::RealLine | Domain::Interval { .. } | Domain::Box { .. } => 1.0,
            Domain::RadialEuclidean { dim, .. } => {
                let r = x[0];
                match dim {
                    1 => 2.0,
                    2 => 2.0 * std::f64::consts::PI * r,
                    _ => 4.0 * std::f64::consts::PI * r * r,
                }
            }
            Domain::RadialHyperbolic3 { .. } => {
                let s = x[0].sinh();
                4.0 * std::f64::consts::PI * s * s
            }
        }
    }

    /// First-order coefficient of the radial Laplacian `w'' + drift w'`.
    pub fn radial_drift(&self, r: f64) -> f64 {
        match self {
            Domain::RadialEuclidean { dim, .. } => (*dim as f64 - 1.0) / r,
            Domain::RadialHyperbolic3 { .. } => 2.0 / r.tanh(),
            _ => 0.0,
        }
    }

    /// Point membership in the closure of the domain.
    pub fn contains(&self, x: &Coord) -> bool {
        let eps = 1e-12;
        match self {
            Domain::RealLine => x[0].is_finite(),
            Domain::Interval { a, b } => x[0] >= a - eps && x[0] <= b + eps,
            Domain::Box { axes } => axes
                .iter()
                .enumerate()
                .all(|(i, &(a, b))| x[i] >= a - eps && x[i] <= b + eps),
            Domain::RadialEuclidean { r_in, r_out, .. }
            | Domain::RadialHyperbolic3 { r_in, r_out } => {
                let r = x[0];
                r >= r_in - eps && r_out.map_or(r.is_finite(), |ro| r <= ro + eps)
            }
        }
    }

    /// n-th member of the canonical exhaustion by nested subdomains whose
    /// union recovers the domain: unbounded directions grow linearly with
    /// `n`, bounded ones recede from the boundary by a margin that halves.
    pub fn exhaust(&self, n: usize) -> Domain {
        let n = n.max(1) as f64;
        match self {
            Domain::RealLine => Domain::Interval { a: -n, b: n },
            Domain::Interval { a, b } => {
                let m = (b - a) / (2.0 * n);
                Domain::Interval { a: a + m, b: b - m }
            }
            Domain::Box { axes } => Domain::Box {
                axes: axes
                    .iter()
                    .map(|&(a, b)| {
                        let m = (b - a) / (2.0 * n);
                        (a + m, b - m)
                    })
                    .collect(),
            },
            Domain::RadialEuclidean { dim, r_in, r_out } => {
                let (ri, ro) = Self::exhaust_radial(*r_in, *r_out, n);
                Domain::RadialEuclidean { dim: *dim, r_in: ri, r_out: Some(ro) }
            }
            Domain::RadialHyperbolic3 { r_in, r_out } => {
                let (ri, ro) = Self::exhaust_radial(*r_in, *r_out, n);
                Domain::RadialHyperbolic3 { r_in: ri, r_out: Some(ro) }
            }
        }
    }

    fn exhaust_radial(r_in: f64, r_out: Option<f64>, n: f64) -> (f64, f64) {
        match r_out {
            None => (r_in, r_in + n),
            Some(ro) => {
                let m = (ro - r_in) / (2.0 * n);
                // The pole r = 0 is not a boundary, so nothing to recede from.
                let ri = if r_in > 0.0 { r_in + m } else { 0.0 };
                (ri, ro - m)
            }
        }
    }
}

/// One spatial axis of a lattice.
#[derive(Debug, Clone)]
pub struct Axis {
    pub coords: Vec<f64>,
    pub dx: f64,
    pub lower_face: Option<Face>,
    pub upper_face: Option<Face>,
    /// First node sits at `dx/2` with an even-reflection stencil through the
    /// pole r = 0 (radial kinds with `r_in = 0` only).
    pub staggered_pole: bool,
}

/// Uniform space-time lattice over the domain closure.
#[derive(Debug, Clone)]
pub struct Grid {
    domain: Domain,
    axes: Vec<Axis>,
    times: Vec<f64>,
    dt: f64,
    interior: Vec<bool>,
    n_nodes: usize,
}

impl Grid {
    /// Build a lattice with `resolution` nodes per axis and `steps` time
    /// steps on (0, T]. Unbounded domains require `truncation`.
    pub fn build(
        domain: Domain,
        resolution: usize,
        t_final: f64,
        steps: usize,
        truncation: Option<f64>,
    ) -> Result<Grid> {
        domain.validate()?;
        if t_final <= 0.0 || !t_final.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "time horizon must be positive, got {t_final}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        if resolution < 5 {
            return Err(Error::InvalidGrid(format!(
                "resolution {resolution} leaves fewer than 3 interior nodes"
            )));
        }
        if domain.is_unbounded() && truncation.is_none() {
            return Err(Error::InvalidGrid(
                "unbounded domain needs a truncation radius".into(),
            ));
        }

        let axes = match &domain {
            Domain::RealLine => {
                let r = truncation.unwrap();
                vec![Axis::uniform(-r, r, resolution, Face::AtInfinity, Face::AtInfinity)]
            }
            Domain::Interval { a, b } => {
                vec![Axis::uniform(*a, *b, resolution, Face::Dirichlet, Face::Dirichlet)]
            }
            Domain::Box { axes } => axes
                .iter()
                .map(|&(a, b)| Axis::uniform(a, b, resolution, Face::Dirichlet, Face::Dirichlet))
                .collect(),
            Domain::RadialEuclidean { r_in, r_out, .. }
            | Domain::RadialHyperbolic3 { r_in, r_out } => {
                let (hi, hi_face) = match r_out {
                    Some(ro) => (*ro, Face::Dirichlet),
                    None => (truncation.unwrap(), Face::AtInfinity),
                };
                if hi <= *r_in {
                    return Err(Error::InvalidGrid(
                        "truncation radius must exceed the inner radius".into(),
                    ));
                }
                if *r_in == 0.0 {
                    vec![Axis::staggered(hi, resolution, hi_face)]
                } else {
                    vec![Axis::uniform(*r_in, hi, resolution, Face::Dirichlet, hi_face)]
                }
            }
        };

        let dt = t_final / steps as f64;
        let times = (0..=steps).map(|k| k as f64 * dt).collect();

        let n_nodes = axes.iter().map(|a| a.coords.len()).product();
        let mut grid = Grid {
            domain,
            axes,
            times,
            dt,
            interior: Vec::new(),
            n_nodes,
        };
        grid.interior = (0..n_nodes).map(|i| grid.classify_interior(i)).collect();
        Ok(grid)
    }

    fn classify_interior(&self, node: usize) -> bool {
        let idx = self.unflatten(node);
        for (d, axis) in self.axes.iter().enumerate() {
            let i = idx[d];
            if i == 0 && axis.lower_face.is_some() {
                return false;
            }
            if i + 1 == axis.coords.len() && axis.upper_face.is_some() {
                return false;
            }
        }
        true
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Smallest spatial spacing over the axes.
    pub fn min_dx(&self) -> f64 {
        self.axes.iter().map(|a| a.dx).fold(f64::INFINITY, f64::min)
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|b| **b).count()
    }

    pub fn unflatten(&self, node: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rem = node;
        for (d, axis) in self.axes.iter().enumerate() {
            idx[d] = rem % axis.coords.len();
            rem /= axis.coords.len();
        }
        idx
    }

    pub fn flatten(&self, idx: [usize; 3]) -> usize {
        let mut node = 0usize;
        for d in (0..self.axes.len()).rev() {
            node = node * self.axes[d].coords.len() + idx[d];
        }
        node
    }

    pub fn coord(&self, node: usize) -> Coord {
        let idx = self.unflatten(node);
        let mut c = [0.0; 3];
        for (d, axis) in self.axes.iter().enumerate() {
            c[d] = axis.coords[idx[d]];
        }
        c
    }

    /// Second-order discrete Laplacian of one time slice. Interior nodes
    /// get the central stencil (plus the radial drift term where the
    /// geometry calls for it); boundary nodes are set to zero.
    pub fn laplacian(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n_nodes {
            return Err(Error::InvalidGrid(format!(
                "field has {} values, grid has {} nodes",
                w.len(),
                self.n_nodes
            )));
        }
        let mut out = vec![0.0; self.n_nodes];
        for node in 0..self.n_nodes {
            if !self.interior[node] {
                continue;
            }
            out[node] = self.laplacian_at(w, node);
        }
        Ok(out)
    }

    fn laplacian_at(&self, w: &[f64], node: usize) -> f64 {
        let idx = self.unflatten(node);
        let mut acc = 0.0;
        for (d, axis) in self.axes.iter().enumerate() {
            let i = idx[d];
            let n = axis.coords.len();
            let dx = axis.dx;
            let stride: usize = self.axes[..d].iter().map(|a| a.coords.len()).product();
            let center = w[node];
            if i == 0 && axis.staggered_pole {
                // Even reflection through the pole: the ghost value at -dx/2
                // equals w[0].
                let east = w[node + stride];
                let drift = self.domain.radial_drift(axis.coords[0]);
                acc += (east - center) / (dx * dx) + drift * (east - center) / (2.0 * dx);
                continue;
            }
            debug_assert!(i > 0 && i + 1 < n);
            let west = w[node - stride];
            let east = w[node + stride];
            acc += (east - 2.0 * center + west) / (dx * dx);
            if d == 0 && self.domain.is_radial() {
                let drift = self.domain.radial_drift(axis.coords[i]);
                acc += drift * (east - west) / (2.0 * dx);
            }
        }
        acc
    }

    /// Trapezoid quadrature over the domain with the Riemannian measure.
    pub fn quadrature(&self) -> Quadrature {
        let mut coords = Vec::with_capacity(self.n_nodes);
        let mut weights = Vec::with_capacity(self.n_nodes);
        for node in 0..self.n_nodes {
            let c = self.coord(node);
            let idx = self.unflatten(node);
            let mut w = 1.0;
            for (d, axis) in self.axes.iter().enumerate() {
                let i = idx[d];
                let n = axis.coords.len();
                let end = (i == 0 && !axis.staggered_pole) || i + 1 == n;
                w *= if end { 0.5 * axis.dx } else { axis.dx };
            }
            coords.push(c);
            weights.push(w * self.domain.measure_density(&c));
        }
        Quadrature { coords, weights }
    }

    /// Per-node mask of points within `margin` of an at-infinity face;
    /// used to exclude the truncation influence zone from verification.
    pub fn truncation_shadow(&self, margin: f64) -> Vec<bool> {
        (0..self.n_nodes)
            .map(|node| {
                let idx = self.unflatten(node);
                self.axes.iter().enumerate().any(|(d, axis)| {
                    let x = axis.coords[idx[d]];
                    let lo = axis.coords[0];
                    let hi = axis.coords[axis.coords.len() - 1];
                    (axis.lower_face == Some(Face::AtInfinity) && x - lo < margin)
                        || (axis.upper_face == Some(Face::AtInfinity) && hi - x < margin)
                })
            })
            .collect()
    }

    /// Node indices on the j-th shell counted inward from at-infinity faces
    /// (j = 0 is the outermost interior shell). Used by the limsup proxies.
    pub fn outer_shell(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for node in 0..self.n_nodes {
            if !self.interior[node] {
                continue;
            }
            let idx = self.unflatten(node);
            for (d, axis) in self.axes.iter().enumerate() {
                let i = idx[d];
                let n = axis.coords.len();
                let hit_upper = axis.upper_face == Some(Face::AtInfinity) && i == n - 2 - j;
                let hit_lower = axis.lower_face == Some(Face::AtInfinity) && i == j + 1;
                if hit_upper || hit_lower {
                    out.push(node);
                    break;
                }
            }
        }
        out
    }

    /// Structural identity check used to reject cross-grid field operations.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.domain == other.domain
            && self.n_nodes == other.n_nodes
            && self.times.len() == other.times.len()
            && (self.dt - other.dt).abs() <= 1e-15 * self.dt.max(other.dt)
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.coords.len() == b.coords.len() && (a.dx - b.dx).abs() < 1e-14)
    }
}

impl Axis {
    fn uniform(a: f64, b: f64, n: usize, lower: Face, upper: Face) -> Axis {
        let dx = (b - a) / (n - 1) as f64;
        let coords = (0..n).map(|i| a + i as f64 * dx).collect();
        Axis {
            coords,
            dx,
            lower_face: Some(lower),
            upper_face: Some(upper),
            staggered_pole: false,
        }
    }

    fn staggered(r_out: f64, n: usize, upper: Face) -> Axis {
        let dx = r_out / (n as f64 - 0.5);
        let coords = (0..n).map(|i| (i as f64 + 0.5) * dx).collect();
        Axis {
            coords,
            dx,
            lower_face: None,
            upper_face: Some(upper),
            staggered_pole: true,
        }
    }
}

/// Nodes and trapezoid weights (including the measure density) for spatial
/// integrals over the domain.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub coords: Vec<Coord>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Coord) -> f64) -> f64 {
        self.coords
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * f(c))
            .sum()
    }
}
