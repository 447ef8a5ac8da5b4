//! Space-time fields: one scalar per (node, time level) on a shared grid.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Values on a [`Grid`], laid out time-major: `values[k * n + i]` is the
/// value at node `i`, time level `k`. An optional mask marks points that
/// every norm and report must skip (truncation shadows, masked bounds).
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl Field {
    pub fn zeros(grid: Arc<Grid>) -> Field {
        let len = grid.node_count() * grid.times().len();
        Field { grid, values: vec![0.0; len], mask: None }
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.node_count() * grid.times().len() {
            return Err(Error::InvalidGrid(format!(
                "field length {} does not match grid ({} nodes x {} levels)",
                values.len(),
                grid.node_count(),
                grid.times().len()
            )));
        }
        Ok(Field { grid, values, mask: None })
    }

    /// Sample a function of (x, t) at every grid point.
    pub fn sample(grid: Arc<Grid>, f: impl Fn(&crate::grid::Coord, f64) -> f64) -> Field {
        let n = grid.node_count();
        let mut values = Vec::with_capacity(n * grid.times().len());
        for &t in grid.times() {
            for i in 0..n {
                values.push(f(&grid.coord(i), t));
            }
        }
        Field { grid, values, mask: None }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, level: usize, node: usize) -> f64 {
        self.values[level * self.grid.node_count() + node]
    }

    #[inline]
    pub fn set(&mut self, level: usize, node: usize, v: f64) {
        let n = self.grid.node_count();
        self.values[level * n + node] = v;
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.node_count();
        &mut self.values[k * n..(k + 1) * n]
    }

    /// Linear interpolation in time at node `i`; clamps to the horizon.
    pub fn interp_time(&self, node: usize, t: f64) -> f64 {
        let times = self.grid.times();
        let dt = self.grid.dt();
        if t <= 0.0 {
            return self.at(0, node);
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return self.at(last, node);
        }
        let k = (t / dt).floor() as usize;
        let k = k.min(last - 1);
        let w = (t - times[k]) / dt;
        (1.0 - w) * self.at(k, node) + w * self.at(k + 1, node)
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Mark points as excluded (true = masked). Merges with any existing
    /// mask.
    pub fn mask_where(&mut self, pred: impl Fn(usize, usize) -> bool) {
        let n = self.grid.node_count();
        let levels = self.grid.times().len();
        let mask = self
            .mask
            .get_or_insert_with(|| vec![false; n * levels]);
        for k in 0..levels {
            for i in 0..n {
                if pred(k, i) {
                    mask[k * n + i] = true;
                }
            }
        }
    }

    pub fn is_masked(&self, level: usize, node: usize) -> bool {
        self.mask
            .as_ref()
            .map(|m| m[level * self.grid.node_count() + node])
            .unwrap_or(false)
    }

    /// Max absolute value over unmasked points.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (j, &v) in self.values.iter().enumerate() {
            let masked = self.mask.as_ref().map(|mk| mk[j]).unwrap_or(false);
            if !masked {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Field {
            grid: Arc::clone(&self.grid),
            values,
            mask: merge_masks(&self.mask, &other.mask),
        })
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_layout(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn merge_masks(a: &Option<Vec<bool>>, b: &Option<Vec<bool>>) -> Option<Vec<bool>> {
    match (a, b) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.clone()),
        (Some(ma), Some(mb)) => Some(ma.iter().zip(mb).map(|(x, y)| *x || *y).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::build(Domain::Interval { a: 0.0, b: 1.0 }, 11, 1.0, 4, None).unwrap())
    }

    #[test]
    fn sample_and_index() {
        let g = grid();
        let f = Field::sample(Arc::clone(&g), |x, t| x[0] + 10.0 * t);
        assert!((f.at(0, 3) - 0.3).abs() < 1e-15);
        assert!((f.at(2, 3) - (0.3 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn time_interpolation() {
        let g = grid();
        let f = Field::sample(Arc::clone(&g), |_, t| t * t);
        // Linear interpolation between t = 0.25 and t = 0.5.
        let v = f.interp_time(0, 0.375);
        assert!((v - 0.5 * (0.0625 + 0.25)).abs() < 1e-14);
        assert_eq!(f.interp_time(0, 2.0), 1.0);
    }

    #[test]
    fn masks_exclude_points_from_norms() {
        let g = grid();
        let mut f = Field::sample(Arc::clone(&g), |x, _| x[0]);
        assert!((f.max_abs() - 1.0).abs() < 1e-15);
        f.mask_where(|_, i| i > 5);
        assert!((f.max_abs() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_mismatch_detected() {
        let a = Field::zeros(grid());
        let g2 = Arc::new(Grid::build(Domain::Interval { a: 0.0, b: 1.0 }, 21, 1.0, 4, None).unwrap());
        let b = Field::zeros(g2);
        assert!(a.zip_map(&b, |x, y| x + y).is_err());
    }
}
