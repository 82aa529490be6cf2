//! Axis-aligned boxes used as state domains, sampling regions and
//! integration domains.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Axis-aligned box `[lower_1, upper_1] x ... x [lower_d, upper_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxDomain {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::Usage("box dimension must be at least 1".into()));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::NonFinite(format!("box bound on axis {i}")));
            }
            if lower[i] >= upper[i] {
                return Err(Error::Usage(format!(
                    "box axis {i} is empty: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Convenience constructor from slices.
    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(lower),
            DVector::from_column_slice(upper),
        )
    }

    /// Centered cube `[-half, half]^d`.
    pub fn centered(dim: usize, half: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, -half),
            DVector::from_element(dim, half),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn edge(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.edge(i)).product()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] && x[i] <= self.upper[i])
    }

    /// First axis on which `x` leaves the box, with the overshoot distance.
    pub fn first_violation(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        for i in 0..self.dim() {
            if x[i] < self.lower[i] {
                return Some((i, self.lower[i] - x[i]));
            }
            if x[i] > self.upper[i] {
                return Some((i, x[i] - self.upper[i]));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_and_volume() {
        let b = BoxDomain::from_slices(&[-1.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.volume(), 4.0);
        assert!(b.contains(&DVector::from_column_slice(&[0.0, 1.0])));
        assert!(!b.contains(&DVector::from_column_slice(&[0.0, 2.5])));
        assert_eq!(
            b.first_violation(&DVector::from_column_slice(&[0.0, 2.5])),
            Some((1, 0.5))
        );
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BoxDomain::from_slices(&[1.0], &[1.0]).is_err());
        assert!(BoxDomain::from_slices(&[], &[]).is_err());
        assert!(BoxDomain::from_slices(&[0.0], &[f64::INFINITY]).is_err());
    }
}
