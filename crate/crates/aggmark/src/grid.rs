//! Evaluation grids: shared step control for ODE sweeps and quadrature.

use crate::{Error, Result};

/// Relative tolerance used to match a time against a grid point.
const MATCH_TOL: f64 = 1e-9;

/// An ordered evaluation grid.
///
/// The grid points carry two roles at once: they are the output times of
/// sweeps and cash-flow tables, and they are the trapezoid nodes of every
/// quadrature. `substeps` controls the fourth-order ODE refinement between
/// consecutive points.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    substeps: usize,
}

impl TimeGrid {
    /// Build a grid from explicit points (strictly increasing, at least two).
    pub fn new(points: Vec<f64>, substeps: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Domain("grid needs at least two points".into()));
        }
        if substeps == 0 {
            return Err(Error::Domain("substeps must be positive".into()));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(Error::Domain("grid points must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain(
                "grid points must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { points, substeps })
    }

    /// Uniform grid with `steps` intervals on `[start, end]`.
    pub fn uniform(start: f64, end: f64, steps: usize, substeps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("steps must be positive".into()));
        }
        if !(end > start) {
            return Err(Error::Domain(format!(
                "grid end {end} must exceed start {start}"
            )));
        }
        let h = (end - start) / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|i| start + i as f64 * h).collect();
        // Pin the endpoint exactly so horizon comparisons are not float-fuzzy.
        *points.last_mut().unwrap() = end;
        TimeGrid::new(points, substeps)
    }

    /// Copy of this grid with extra breakpoints inserted exactly (within the
    /// span; near-duplicates of existing points are dropped).
    pub fn with_breakpoints(&self, extra: &[f64]) -> Result<Self> {
        let mut points = self.points.clone();
        for &b in extra {
            if b <= self.start() || b >= self.end() {
                continue;
            }
            if self.index_of(b).is_none() {
                points.push(b);
            }
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        TimeGrid::new(points, self.substeps)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// Index of the grid point matching `t` (relative tolerance 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = MATCH_TOL * t.abs().max(1.0);
        match self
            .points
            .binary_search_by(|p| p.partial_cmp(&t).unwrap())
        {
            Ok(i) => Some(i),
            Err(i) => {
                if i < self.points.len() && (self.points[i] - t).abs() <= tol {
                    Some(i)
                } else if i > 0 && (self.points[i - 1] - t).abs() <= tol {
                    Some(i - 1)
                } else {
                    None
                }
            }
        }
    }

    /// Index of the grid point matching `t`, or a domain error naming the time.
    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t)
            .ok_or_else(|| Error::Domain(format!("time {t} is not a grid point")))
    }

    /// Median interval width; the reference spacing for auxiliary grids.
    pub fn typical_spacing(&self) -> f64 {
        let mut widths: Vec<f64> = self.points.windows(2).map(|w| w[1] - w[0]).collect();
        widths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        widths[widths.len() / 2]
    }

    /// Uniform auxiliary grid covering `[a, b]` at (at most) this grid's
    /// typical spacing, with the same substep refinement. Used for sweeps
    /// that leave the main span, e.g. backward conditioning over `[t-u, t]`.
    pub fn auxiliary(&self, a: f64, b: f64) -> Result<TimeGrid> {
        if !(b > a) {
            return Err(Error::Domain(format!(
                "auxiliary grid needs a < b, got [{a}, {b}]"
            )));
        }
        let steps = ((b - a) / self.typical_spacing()).ceil().max(1.0) as usize;
        TimeGrid::uniform(a, b, steps, self.substeps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_has_exact_endpoints() {
        let g = TimeGrid::uniform(40.0, 65.0, 300, 10).unwrap();
        assert_eq!(g.len(), 301);
        assert_eq!(g.start(), 40.0);
        assert_eq!(g.end(), 65.0);
        assert_eq!(g.substeps(), 10);
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(TimeGrid::new(vec![0.0], 5).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0], 0).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0], 5).is_err());
        assert!(TimeGrid::new(vec![0.0, 2.0, 1.0], 5).is_err());
        assert!(TimeGrid::uniform(1.0, 1.0, 10, 10).is_err());
    }

    #[test]
    fn index_of_tolerates_float_noise() {
        let g = TimeGrid::uniform(40.0, 65.0, 300, 10).unwrap();
        let t = 40.0 + 17.0 * 25.0 / 300.0;
        assert_eq!(g.index_of(t), Some(17));
        assert_eq!(g.index_of(t + 1e-12), Some(17));
        assert_eq!(g.index_of(40.03), None);
        assert!(g.require_index(40.03).is_err());
    }

    #[test]
    fn breakpoints_insert_exactly_and_dedup() {
        let g = TimeGrid::uniform(0.0, 2.0, 4, 3).unwrap();
        let g2 = g.with_breakpoints(&[0.25, 0.5, 2.5]).unwrap();
        assert_eq!(g2.points(), &[0.0, 0.25, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g2.substeps(), 3);
    }

    #[test]
    fn auxiliary_grid_matches_spacing() {
        let g = TimeGrid::uniform(40.0, 65.0, 300, 10).unwrap();
        let aux = g.auxiliary(39.0, 40.0).unwrap();
        assert_eq!(aux.start(), 39.0);
        assert_eq!(aux.end(), 40.0);
        assert_eq!(aux.len(), 13); // 1y at monthly spacing
        assert_eq!(aux.substeps(), 10);
    }
}
