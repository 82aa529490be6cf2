//! State-constraint functions h_j with analytic gradients.
//!
//! A state x is feasible when h_j(x) <= 0 for every j. The same functions
//! serve three roles: membership tests for sampling domains, observables
//! that can be embedded into a dictionary, and the quantities certified by
//! the tightened-constraint check.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::seeding;

type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A single scalar constraint function with its gradient.
#[derive(Clone)]
pub struct Constraint {
    label: String,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint").field("label", &self.label).finish()
    }
}

impl Constraint {
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// Affine constraint `a^T x + b <= 0`.
    pub fn affine(label: impl Into<String>, a: DVector<f64>, b: f64) -> Self {
        let a2 = a.clone();
        Self::new(
            label,
            move |x: &DVector<f64>| a.dot(x) + b,
            move |_: &DVector<f64>| a2.clone(),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    pub(crate) fn value_fn(&self) -> Arc<ValueFn> {
        self.value.clone()
    }

    pub(crate) fn gradient_fn(&self) -> Arc<GradFn> {
        self.gradient.clone()
    }
}

/// An ordered, non-empty list of constraints with unique labels.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Usage("constraint set must not be empty".into()));
        }
        for i in 0..constraints.len() {
            for j in (i + 1)..constraints.len() {
                if constraints[i].label == constraints[j].label {
                    return Err(Error::Usage(format!(
                        "duplicate constraint label '{}'",
                        constraints[i].label
                    )));
                }
            }
        }
        Ok(Self { constraints })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.constraints.iter()
    }

    pub fn get(&self, j: usize) -> &Constraint {
        &self.constraints[j]
    }

    pub fn labels(&self) -> Vec<&str> {
        self.constraints.iter().map(|c| c.label()).collect()
    }

    /// Values `(h_1(x), ..., h_p(x))`.
    pub fn eval_all(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.constraints.iter().map(|c| c.eval(x)))
    }

    /// First constraint with `h_j(x) > 0`, as `(index, value)`.
    pub fn first_violation(&self, x: &DVector<f64>) -> Option<(usize, f64)> {
        self.constraints
            .iter()
            .enumerate()
            .find_map(|(j, c)| {
                let v = c.eval(x);
                if v > 0.0 {
                    Some((j, v))
                } else {
                    None
                }
            })
    }

    /// Check every gradient against central finite differences at seeded
    /// random points of the box.
    pub fn verify_gradients(&self, domain: &BoxDomain, seed: u64) -> Result<()> {
        for c in &self.constraints {
            check_gradient(c.label(), &*c.value, &*c.gradient, domain, seed)?;
        }
        Ok(())
    }
}

/// Compare an analytic gradient with a central finite difference at 20
/// seeded uniform points; relative tolerance 1e-5 on the mismatch norm.
pub(crate) fn check_gradient(
    label: &str,
    value: &ValueFn,
    gradient: &GradFn,
    domain: &BoxDomain,
    seed: u64,
) -> Result<()> {
    let d = domain.dim();
    let mut rng = seeding::rng(seed);
    let step = 1e-5;
    for _ in 0..20 {
        let mut x = DVector::zeros(d);
        for i in 0..d {
            x[i] = rng.gen_range(domain.lower()[i]..domain.upper()[i]);
        }
        let g = gradient(&x);
        if g.len() != d {
            return Err(Error::Dimension {
                context: "gradient length",
                expected: d,
                found: g.len(),
            });
        }
        let mut fd = DVector::zeros(d);
        for i in 0..d {
            let h = step * domain.edge(i).max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (value(&xp) - value(&xm)) / (2.0 * h);
        }
        let scale = g.norm().max(fd.norm()).max(1.0);
        let mismatch = (&g - &fd).norm() / scale;
        if !mismatch.is_finite() || mismatch > 1e-5 {
            return Err(Error::Usage(format!(
                "gradient of '{label}' disagrees with finite differences (relative mismatch {mismatch:.2e})"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn affine_constraint_evaluates_and_violates() {
        // h(x) = x_1 - 1
        let c = Constraint::affine("x1 <= 1", dvector![1.0, 0.0], -1.0);
        assert_eq!(c.eval(&dvector![0.5, 9.0]), -0.5);
        assert_eq!(c.eval(&dvector![1.5, 0.0]), 0.5);
        let cs = ConstraintSet::new(vec![c]).unwrap();
        assert_eq!(cs.first_violation(&dvector![1.5, 0.0]), Some((0, 0.5)));
        assert_eq!(cs.first_violation(&dvector![0.0, 0.0]), None);
    }

    #[test]
    fn rejects_duplicate_labels_and_empty() {
        assert!(ConstraintSet::new(vec![]).is_err());
        let a = Constraint::affine("h", dvector![1.0], 0.0);
        let b = Constraint::affine("h", dvector![-1.0], 0.0);
        assert!(ConstraintSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn gradient_check_accepts_correct_and_rejects_wrong() {
        let domain = BoxDomain::from_slices(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let good = Constraint::new(
            "quad",
            |x: &DVector<f64>| x[0] * x[0] + x[1].sin(),
            |x: &DVector<f64>| dvector![2.0 * x[0], x[1].cos()],
        );
        ConstraintSet::new(vec![good]).unwrap().verify_gradients(&domain, 7).unwrap();

        let bad = Constraint::new(
            "quad",
            |x: &DVector<f64>| x[0] * x[0],
            |x: &DVector<f64>| dvector![3.0 * x[0], 0.0],
        );
        assert!(ConstraintSet::new(vec![bad])
            .unwrap()
            .verify_gradients(&domain, 7)
            .is_err());
    }
}
