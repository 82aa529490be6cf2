//! Observable dictionaries: monomials, finite-element hat functions, and
//! composites that prepend constraint functions.
//!
//! Every observable carries an analytic gradient so the generator action
//! (grad psi . f) can be evaluated without finite differences. Dictionaries
//! are immutable and cheap to clone (shared storage).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::constraints::{check_gradient, Constraint};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::linalg::{sym_solve_floor, SolveReport};
use crate::quad::Quadrature;

type ValueFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Default cap on dictionary size for the monomial builder.
pub const MONOMIAL_SIZE_CAP: usize = 10_000;

/// One scalar observable with value and analytic gradient.
#[derive(Clone)]
pub struct Observable {
    label: String,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable").field("label", &self.label).finish()
    }
}

impl Observable {
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

    fn from_constraint(c: &Constraint) -> Self {
        let value = c.value_fn();
        let gradient = c.gradient_fn();
        Self {
            label: c.label().to_string(),
            value: Arc::new(move |x: &DVector<f64>| value(x)),
            gradient: Arc::new(move |x: &DVector<f64>| gradient(x)),
        }
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
}

/// How a dictionary was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    Monomial,
    Fem,
    Composite,
}

impl DictionaryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DictionaryKind::Monomial => "monomial",
            DictionaryKind::Fem => "fem",
            DictionaryKind::Composite => "composite",
        }
    }
}

struct DictInner {
    observables: Vec<Observable>,
    kind: DictionaryKind,
    state_dim: usize,
    // quadrature cells per axis that make piecewise-polynomial dictionary
    // functions polynomial inside every cell (1 per axis when global)
    quad_cells: Vec<usize>,
}

/// An ordered set of observables over states in R^d.
#[derive(Clone)]
pub struct Dictionary {
    inner: Arc<DictInner>,
}

impl fmt::Debug for Dictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dictionary")
            .field("kind", &self.inner.kind)
            .field("len", &self.len())
            .field("state_dim", &self.inner.state_dim)
            .finish()
    }
}

impl Dictionary {
    fn build(
        observables: Vec<Observable>,
        kind: DictionaryKind,
        state_dim: usize,
        quad_cells: Vec<usize>,
    ) -> Result<Self> {
        if observables.is_empty() {
            return Err(Error::Usage("dictionary must contain at least one observable".into()));
        }
        for i in 0..observables.len() {
            for j in (i + 1)..observables.len() {
                if observables[i].label == observables[j].label {
                    return Err(Error::Usage(format!(
                        "duplicate observable label '{}'",
                        observables[i].label
                    )));
                }
            }
        }
        Ok(Self {
            inner: Arc::new(DictInner {
                observables,
                kind,
                state_dim,
                quad_cells,
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.observables.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.inner.state_dim
    }

    pub fn kind(&self) -> DictionaryKind {
        self.inner.kind
    }

    pub fn observables(&self) -> &[Observable] {
        &self.inner.observables
    }

    pub fn labels(&self) -> Vec<&str> {
        self.inner.observables.iter().map(|o| o.label()).collect()
    }

    /// Index of the observable with this label, if present.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.inner.observables.iter().position(|o| o.label() == label)
    }

    /// True when both dictionaries have the same kind, dimension, and
    /// ordered labels (used to guard mixing fits across dictionaries).
    pub fn same_structure(&self, other: &Dictionary) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.kind == other.inner.kind
                && self.inner.state_dim == other.inner.state_dim
                && self.labels() == other.labels())
    }

    /// Per-axis quadrature cell counts under which every observable is
    /// polynomial inside each cell (aligned to the FEM mesh when present).
    pub fn quadrature_cells(&self) -> &[usize] {
        &self.inner.quad_cells
    }

    /// Stacked values `(psi_1(x), ..., psi_N(x))`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.inner.state_dim {
            return Err(Error::Dimension {
                context: "dictionary input",
                expected: self.inner.state_dim,
                found: x.len(),
            });
        }
        let mut out = DVector::zeros(self.len());
        for (i, o) in self.inner.observables.iter().enumerate() {
            let v = o.eval(x);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "observable '{}' is not finite at the given state",
                    o.label()
                )));
            }
            out[i] = v;
        }
        Ok(out)
    }

    /// Stacked gradients as an N x d matrix (row i is grad psi_i).
    pub fn eval_grad(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.inner.state_dim {
            return Err(Error::Dimension {
                context: "dictionary input",
                expected: self.inner.state_dim,
                found: x.len(),
            });
        }
        let d = self.inner.state_dim;
        let mut out = DMatrix::zeros(self.len(), d);
        for (i, o) in self.inner.observables.iter().enumerate() {
            let g = o.grad(x);
            if g.len() != d {
                return Err(Error::Dimension {
                    context: "observable gradient",
                    expected: d,
                    found: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{}' is not finite at the given state",
                    o.label()
                )));
            }
            out.row_mut(i).copy_from(&g.transpose());
        }
        Ok(out)
    }

    /// Check every analytic gradient against central finite differences at
    /// 20 seeded points of the box.
    pub fn verify_gradients(&self, domain: &BoxDomain, seed: u64) -> Result<()> {
        for o in &self.inner.observables {
            check_gradient(o.label(), &*o.value, &*o.gradient, domain, seed)?;
        }
        Ok(())
    }
}

/// Exponent tuples of all monomials in d variables up to `max_degree`,
/// graded order (degree ascending), descending lexicographic within each
/// degree: for d=2 degree 2 that is (2,0), (1,1), (0,2).
pub(crate) fn monomial_exponents(d: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn fill(remaining: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=remaining).rev() {
            prefix.push(a);
            fill(remaining - a, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        fill(deg, d, &mut Vec::new(), &mut out);
    }
    out
}

fn monomial_label(exponents: &[u32]) -> String {
    let mut parts = Vec::new();
    for (i, &a) in exponents.iter().enumerate() {
        match a {
            0 => {}
            1 => parts.push(format!("x{}", i + 1)),
            _ => parts.push(format!("x{}^{}", i + 1, a)),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num = num.saturating_mul((n - i) as u128);
        den = den.saturating_mul((i + 1) as u128);
    }
    usize::try_from(num / den).unwrap_or(usize::MAX)
}

/// All monomials of total degree up to `max_degree`, constant first.
pub fn monomial_dictionary(d: usize, max_degree: u32) -> Result<Dictionary> {
    monomial_dictionary_capped(d, max_degree, MONOMIAL_SIZE_CAP)
}

/// As [`monomial_dictionary`] with an explicit size cap.
pub fn monomial_dictionary_capped(d: usize, max_degree: u32, cap: usize) -> Result<Dictionary> {
    if d == 0 {
        return Err(Error::Usage("monomial dictionary needs d >= 1".into()));
    }
    let n = binomial(d + max_degree as usize, d);
    if n > cap {
        return Err(Error::Usage(format!(
            "monomial dictionary would have {n} observables, above the cap of {cap}"
        )));
    }
    let mut observables = Vec::with_capacity(n);
    for exps in monomial_exponents(d, max_degree) {
        let label = monomial_label(&exps);
        let e1 = exps.clone();
        let e2 = exps;
        let value = move |x: &DVector<f64>| {
            let mut v = 1.0;
            for (i, &a) in e1.iter().enumerate() {
                if a > 0 {
                    v *= x[i].powi(a as i32);
                }
            }
            v
        };
        let gradient = move |x: &DVector<f64>| {
            let d = x.len();
            let mut g = DVector::zeros(d);
            for i in 0..d {
                let a = e2[i];
                if a == 0 {
                    continue;
                }
                let mut v = a as f64 * x[i].powi(a as i32 - 1);
                for (j, &b) in e2.iter().enumerate() {
                    if j != i && b > 0 {
                        v *= x[j].powi(b as i32);
                    }
                }
                g[i] = v;
            }
            g
        };
        observables.push(Observable::new(label, value, gradient));
    }
    Dictionary::build(observables, DictionaryKind::Monomial, d, vec![1; d])
}

/// Uniform grid over a 1D or 2D box carrying linear hat functions.
///
/// In 2D every grid square is split into two triangles along the diagonal
/// from its lower-left to its upper-right corner. The requested spacing is
/// snapped to the nearest count of equal cells per axis.
#[derive(Debug, Clone)]
pub struct FemMesh {
    bounds: BoxDomain,
    cells: Vec<usize>,
    dx: Vec<f64>,
}

impl FemMesh {
    pub fn new(bounds: BoxDomain, mesh_size: f64) -> Result<Self> {
        let d = bounds.dim();
        if d != 1 && d != 2 {
            return Err(Error::Mesh(format!(
                "hat-function meshes support dimension 1 or 2, got {d}"
            )));
        }
        if !(mesh_size > 0.0) || !mesh_size.is_finite() {
            return Err(Error::Mesh(format!("mesh size must be positive, got {mesh_size}")));
        }
        let mut cells = Vec::with_capacity(d);
        let mut dx = Vec::with_capacity(d);
        for i in 0..d {
            let edge = bounds.edge(i);
            if mesh_size > edge * (1.0 + 1e-9) {
                return Err(Error::Mesh(format!(
                    "mesh size {mesh_size} exceeds the box edge {edge} on axis {i}"
                )));
            }
            let c = (edge / mesh_size).round().max(1.0) as usize;
            cells.push(c);
            dx.push(edge / c as f64);
        }
        Ok(Self { bounds, cells, dx })
    }

    pub fn dimension(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &BoxDomain {
        &self.bounds
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[f64] {
        &self.dx
    }

    /// Total node count l.
    pub fn node_count(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    /// Coordinates of node `idx` (first-axis-major ordering).
    pub fn node(&self, idx: usize) -> DVector<f64> {
        let d = self.dimension();
        let mut out = DVector::zeros(d);
        match d {
            1 => {
                out[0] = self.bounds.lower()[0] + idx as f64 * self.dx[0];
            }
            _ => {
                let n2 = self.cells[1] + 1;
                let i1 = idx / n2;
                let i2 = idx % n2;
                out[0] = self.bounds.lower()[0] + i1 as f64 * self.dx[0];
                out[1] = self.bounds.lower()[1] + i2 as f64 * self.dx[1];
            }
        }
        out
    }

    pub fn nodes(&self) -> Vec<DVector<f64>> {
        (0..self.node_count()).map(|i| self.node(i)).collect()
    }
}

/// Element index and local coordinate along one axis; points exactly on an
/// interior grid line belong to the lower-index element (local coord 1).
fn locate(lo: f64, dx: f64, cells: usize, coord: f64) -> (usize, f64) {
    let s = (coord - lo) / dx;
    if s <= 0.0 {
        return (0, s);
    }
    let fl = s.floor();
    let mut k = fl as usize;
    if s == fl && k >= 1 {
        k -= 1;
    }
    if k > cells - 1 {
        k = cells - 1;
    }
    (k, s - k as f64)
}

fn hat_value_1d(lo: f64, dx: f64, cells: usize, node: usize, x: f64) -> f64 {
    let (k, xi) = locate(lo, dx, cells, x);
    let mut v = 0.0;
    if node == k {
        v += 1.0 - xi;
    }
    if node == k + 1 {
        v += xi;
    }
    v
}

fn hat_grad_1d(lo: f64, dx: f64, cells: usize, node: usize, x: f64) -> f64 {
    let (k, _) = locate(lo, dx, cells, x);
    let mut g = 0.0;
    if node == k {
        g -= 1.0 / dx;
    }
    if node == k + 1 {
        g += 1.0 / dx;
    }
    g
}

/// Barycentric weight and gradient of the hat of `node = (i1, i2)` on the
/// triangle containing (x, y). The diagonal runs lower-left to upper-right;
/// points exactly on it belong to the lower triangle.
fn hat_eval_2d(
    geo: &(f64, f64, usize, f64, f64, usize),
    node: (usize, usize),
    x: f64,
    y: f64,
) -> (f64, f64, f64) {
    let (lo1, dx1, c1, lo2, dx2, c2) = *geo;
    let (k, xi) = locate(lo1, dx1, c1, x);
    let (l, eta) = locate(lo2, dx2, c2, y);
    let (i1, i2) = node;
    // lower triangle for xi >= eta: corners (k,l), (k+1,l), (k+1,l+1)
    if xi >= eta {
        if i1 == k && i2 == l {
            (1.0 - xi, -1.0 / dx1, 0.0)
        } else if i1 == k + 1 && i2 == l {
            (xi - eta, 1.0 / dx1, -1.0 / dx2)
        } else if i1 == k + 1 && i2 == l + 1 {
            (eta, 0.0, 1.0 / dx2)
        } else {
            (0.0, 0.0, 0.0)
        }
    } else {
        // upper triangle: corners (k,l), (k,l+1), (k+1,l+1)
        if i1 == k && i2 == l {
            (1.0 - eta, 0.0, -1.0 / dx2)
        } else if i1 == k && i2 == l + 1 {
            (eta - xi, -1.0 / dx1, 1.0 / dx2)
        } else if i1 == k + 1 && i2 == l + 1 {
            (xi, 1.0 / dx1, 0.0)
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

/// One hat function per mesh node, `psi_i(x_j) = delta_ij`.
pub fn fem_dictionary(mesh: &FemMesh) -> Result<Dictionary> {
    let d = mesh.dimension();
    let mut observables = Vec::with_capacity(mesh.node_count());
    match d {
        1 => {
            let lo = mesh.bounds.lower()[0];
            let dx = mesh.dx[0];
            let cells = mesh.cells[0];
            for i in 0..=cells {
                let label = format!("hat({i})");
                let value =
                    move |x: &DVector<f64>| hat_value_1d(lo, dx, cells, i, x[0]);
                let gradient = move |x: &DVector<f64>| {
                    DVector::from_column_slice(&[hat_grad_1d(lo, dx, cells, i, x[0])])
                };
                observables.push(Observable::new(label, value, gradient));
            }
        }
        _ => {
            let geo = (
                mesh.bounds.lower()[0],
                mesh.dx[0],
                mesh.cells[0],
                mesh.bounds.lower()[1],
                mesh.dx[1],
                mesh.cells[1],
            );
            for i1 in 0..=mesh.cells[0] {
                for i2 in 0..=mesh.cells[1] {
                    let label = format!("hat({i1},{i2})");
                    let g1 = geo;
                    let g2 = geo;
                    let value = move |x: &DVector<f64>| hat_eval_2d(&g1, (i1, i2), x[0], x[1]).0;
                    let gradient = move |x: &DVector<f64>| {
                        let (_, gx, gy) = hat_eval_2d(&g2, (i1, i2), x[0], x[1]);
                        DVector::from_column_slice(&[gx, gy])
                    };
                    observables.push(Observable::new(label, value, gradient));
                }
            }
        }
    }
    Dictionary::build(observables, DictionaryKind::Fem, d, mesh.cells.clone())
}

/// Constraint functions first, then the base dictionary. An empty
/// constraint list returns the base unchanged.
pub fn composite_dictionary(constraints: &[Constraint], base: &Dictionary) -> Result<Dictionary> {
    if constraints.is_empty() {
        return Ok(base.clone());
    }
    let mut observables = Vec::with_capacity(constraints.len() + base.len());
    for c in constraints {
        observables.push(Observable::from_constraint(c));
    }
    observables.extend(base.observables().iter().cloned());
    Dictionary::build(
        observables,
        DictionaryKind::Composite,
        base.state_dim(),
        base.quadrature_cells().to_vec(),
    )
}

/// Coefficients over a dictionary, representing sum_i c_i psi_i.
#[derive(Debug, Clone)]
pub struct ObservableCoeffs {
    dict: Dictionary,
    coeffs: DVector<f64>,
}

impl ObservableCoeffs {
    pub fn new(dict: Dictionary, coeffs: DVector<f64>) -> Result<Self> {
        if coeffs.len() != dict.len() {
            return Err(Error::Dimension {
                context: "observable coefficients",
                expected: dict.len(),
                found: coeffs.len(),
            });
        }
        Ok(Self { dict, coeffs })
    }

    /// The coefficient vector that selects a single dictionary element.
    pub fn unit(dict: Dictionary, index: usize) -> Result<Self> {
        if index >= dict.len() {
            return Err(Error::Usage(format!(
                "observable index {index} out of range for a dictionary of {}",
                dict.len()
            )));
        }
        let mut c = DVector::zeros(dict.len());
        c[index] = 1.0;
        Ok(Self { dict, coeffs: c })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    /// Evaluate sum_i c_i psi_i(x).
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.coeffs.dot(&self.dict.eval(x)?))
    }
}

/// Gram matrix `C_ij = <psi_i, psi_j>` under the quadrature rule.
pub fn gram_matrix(dict: &Dictionary, quad: &Quadrature) -> Result<DMatrix<f64>> {
    let n = dict.len();
    let mut c = DMatrix::zeros(n, n);
    for (p, &w) in quad.points().iter().zip(quad.weights()) {
        let v = dict.eval(p)?;
        c.ger(w, &v, &v, 1.0);
    }
    Ok(c)
}

/// The L2-orthogonal projection of `h` onto the dictionary span.
#[derive(Debug, Clone)]
pub struct Projection {
    pub coeffs: ObservableCoeffs,
    /// L2 norm of `h - sum_i c_i psi_i` over the quadrature domain.
    pub l2_residual: f64,
    pub solve: SolveReport,
}

/// Project a scalar function onto span(dictionary) in L2 of the box.
pub fn project<F: Fn(&DVector<f64>) -> f64>(
    dict: &Dictionary,
    h: F,
    quad: &Quadrature,
) -> Result<Projection> {
    let n = dict.len();
    let mut c = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let mut hh = 0.0;
    for (p, &w) in quad.points().iter().zip(quad.weights()) {
        let v = dict.eval(p)?;
        let hv = h(p);
        if !hv.is_finite() {
            return Err(Error::NonFinite(
                "projected function is not finite at a quadrature point".into(),
            ));
        }
        c.ger(w, &v, &v, 1.0);
        b.axpy(w * hv, &v, 1.0);
        hh += w * hv * hv;
    }
    let bm = DMatrix::from_column_slice(n, 1, b.as_slice());
    let (x, solve) = sym_solve_floor(&c, &bm, 1e-12)?;
    let coeffs = DVector::from_column_slice(x.as_slice());
    // residual^2 = <h,h> - 2 c.b + c.C c, clamped against roundoff
    let r2 = hh - 2.0 * coeffs.dot(&b) + (&c * &coeffs).dot(&coeffs);
    let l2_residual = r2.max(0.0).sqrt();
    Ok(Projection {
        coeffs: ObservableCoeffs::new(dict.clone(), coeffs)?,
        l2_residual,
        solve,
    })
}
