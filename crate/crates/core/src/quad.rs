//! Gauss-Legendre quadrature over axis-aligned boxes.
//!
//! Inner products of dictionary functions use the (unnormalized) Lebesgue
//! measure on the domain box, so Gram and stiffness matrices are computed
//! with tensorized Gauss-Legendre rules. For piecewise-polynomial
//! dictionaries (FEM hats) a composite rule with cells aligned to the mesh
//! keeps the rule exact; for globally smooth dictionaries a single cell per
//! axis is enough.

use nalgebra::DVector;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

/// Nodes and weights of the `q`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Newton iteration on the Legendre recurrence; standard Chebyshev-based
/// initial guesses converge in a handful of steps for any practical `q`.
pub fn gauss_legendre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(Error::Usage("quadrature order must be at least 1".into()));
    }
    let n = q;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P_n' by upward recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = pk;
            }
            // p1 = P_n, p0 = P_{n-1}
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                // one extra polish step, then stop
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = pk;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                x -= p1 / dp;
                break;
            }
        }
        // nodes ordered ascending
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // n = 1 special case: the loop above divides by x^2 - 1 = -1 harmlessly,
    // but enforce the exact rule anyway
    if n == 1 {
        nodes[0] = 0.0;
        weights[0] = 2.0;
    }
    Ok((nodes, weights))
}

/// A fixed list of points and weights integrating functions over a box.
#[derive(Debug, Clone)]
pub struct Quadrature {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    order: usize,
    cells_per_axis: Vec<usize>,
}

impl Quadrature {
    /// Tensorized `q`-point rule over the whole box (one cell per axis).
    pub fn tensor(domain: &BoxDomain, q: usize) -> Result<Self> {
        Self::composite(domain, &vec![1; domain.dim()], q)
    }

    /// Composite rule: each axis is split into `cells_per_axis[i]` equal
    /// cells and a `q`-point rule is tensorized inside every cell.
    pub fn composite(domain: &BoxDomain, cells_per_axis: &[usize], q: usize) -> Result<Self> {
        let d = domain.dim();
        if cells_per_axis.len() != d {
            return Err(Error::Dimension {
                context: "quadrature cells",
                expected: d,
                found: cells_per_axis.len(),
            });
        }
        if cells_per_axis.iter().any(|&c| c == 0) {
            return Err(Error::Usage("quadrature cell counts must be positive".into()));
        }
        let (ref_nodes, ref_weights) = gauss_legendre(q)?;
        // per-axis flattened node/weight lists over all cells of that axis
        let mut axis_nodes: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut axis_weights: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut total: usize = 1;
        for i in 0..d {
            let cells = cells_per_axis[i];
            let h = domain.edge(i) / cells as f64;
            let mut ns = Vec::with_capacity(cells * q);
            let mut ws = Vec::with_capacity(cells * q);
            for c in 0..cells {
                let a = domain.lower()[i] + c as f64 * h;
                for j in 0..q {
                    ns.push(a + 0.5 * h * (ref_nodes[j] + 1.0));
                    ws.push(0.5 * h * ref_weights[j]);
                }
            }
            total = total
                .checked_mul(ns.len())
                .ok_or_else(|| Error::Usage("quadrature grid too large".into()))?;
            axis_nodes.push(ns);
            axis_weights.push(ws);
        }
        if total > 50_000_000 {
            return Err(Error::Usage(format!(
                "quadrature grid of {total} points is too large"
            )));
        }
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        loop {
            let mut p = DVector::zeros(d);
            let mut w = 1.0;
            for i in 0..d {
                p[i] = axis_nodes[i][idx[i]];
                w *= axis_weights[i][idx[i]];
            }
            points.push(p);
            weights.push(w);
            // odometer increment
            let mut axis = d;
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < axis_nodes[i].len() {
                    axis = i;
                    break;
                }
                idx[i] = 0;
            }
            if axis == d {
                break;
            }
        }
        Ok(Self {
            points,
            weights,
            order: q,
            cells_per_axis: cells_per_axis.to_vec(),
        })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    /// Integrate a scalar function over the box.
    pub fn integrate<F: FnMut(&DVector<f64>) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .map(|(p, w)| w * f(p))
            .sum()
    }
}
