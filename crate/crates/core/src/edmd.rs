//! Empirical estimation of the projected Koopman generator.
//!
//! For a fixed constant control the generator acts on observables by
//! (L psi)(x) = grad psi(x) . f_u(x). Projecting onto the dictionary span
//! gives L_V = C^{-1} A with Gram matrix C_ij = <psi_i, psi_j> and
//! stiffness A_ij = <psi_i, L psi_j>. Replacing the integrals by sample
//! averages over i.i.d. states yields the estimators
//! C_m = (1/m) Psi Psi^T, A_m = (1/m) Psi (L Psi)^T, L_m = C_m^{-1} A_m.
//!
//! Matrices here act on coefficient vectors: column j of A holds the
//! projection of L psi_j, so a dictionary whose first element is the
//! constant has a zero first column (L 1 = 0). Propagating lifted states
//! z(t) = Psi(x(t)) uses the transpose of these matrices (see the
//! surrogate module).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dictionary::Dictionary;
use crate::domain::BoxDomain;
use crate::dynamics::{ControlAffineSystem, StateDomain};
use crate::error::{Error, Result};
use crate::linalg::sym_solve_floor;
use crate::quad::Quadrature;
use crate::seeding;

/// States drawn i.i.d. uniformly from a domain.
#[derive(Debug, Clone)]
pub struct SampleSet {
    points: Vec<DVector<f64>>,
    seed: u64,
    attempts: usize,
}

impl SampleSet {
    /// Rejection-sample `m` points uniformly on the domain (uniform on the
    /// box, kept when the constraint membership test passes).
    pub fn sample_iid(domain: &StateDomain, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Usage("sample count m must be at least 1".into()));
        }
        let bounds = domain.bounds();
        let d = bounds.dim();
        let mut rng = seeding::rng(seed);
        let mut points = Vec::with_capacity(m);
        let mut attempts = 0usize;
        while points.len() < m {
            attempts += 1;
            let mut x = DVector::zeros(d);
            for i in 0..d {
                x[i] = rng.gen_range(bounds.lower()[i]..bounds.upper()[i]);
            }
            if domain.membership(&x) {
                points.push(x);
            }
            if attempts >= 100_000 && (points.len() as f64) < 1e-4 * attempts as f64 {
                return Err(Error::Sampling(format!(
                    "accepted only {} of {attempts} proposals; tighten the bounding box around the feasible set",
                    points.len()
                )));
            }
        }
        Ok(Self {
            points,
            seed,
            attempts,
        })
    }

    /// Wrap explicit points (used for hand-computed fits and oracles).
    pub fn from_points(points: Vec<DVector<f64>>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Usage("sample set must not be empty".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Dimension {
                context: "sample points",
                expected: d,
                found: points.iter().map(|p| p.len()).find(|&l| l != d).unwrap_or(d),
            });
        }
        let attempts = points.len();
        Ok(Self {
            points,
            seed,
            attempts,
        })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Proposals drawn, including rejected ones.
    pub fn attempts(&self) -> usize {
        self.attempts
    }
}

/// Generator action on every dictionary element at one state:
/// `((L psi_1)(x), ..., (L psi_N)(x))` with `L psi = grad psi . f_u`.
pub fn apply_generator(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    u_const: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let grads = dict.eval_grad(x)?;
    let f = system.eval_rhs(x, u_const)?;
    Ok(grads * f)
}

/// Where a generator matrix came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    /// Sampled fit with `m` points from this seed.
    Empirical { m: usize, seed: u64 },
    /// Quadrature Galerkin matrix at this order per axis.
    Reference { order: usize },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Empirical { m, seed } => write!(f, "empirical m={m} seed={seed}"),
            Provenance::Reference { order } => write!(f, "reference order={order}"),
        }
    }
}

/// An N x N generator matrix (reference or estimate) acting on coefficient
/// vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    matrix: DMatrix<f64>,
    provenance: Provenance,
}

impl GeneratorMatrix {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator matrix has non-finite entries".into()));
        }
        Ok(Self { matrix, provenance })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Serialize as CSV: one header comment line, then row-major rows.
    /// Floats use scientific notation, which round-trips exactly.
    pub fn to_csv_string(&self) -> String {
        let n = self.matrix.nrows();
        let mut out = format!("# n={n} provenance={}\n", self.provenance);
        for i in 0..n {
            let row: Vec<String> = (0..self.matrix.ncols())
                .map(|j| format!("{:e}", self.matrix[(i, j)]))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty generator CSV".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("generator CSV must start with a # header".into()))?
            .trim();
        let mut n: Option<usize> = None;
        let mut m: Option<usize> = None;
        let mut seed: Option<u64> = None;
        let mut order: Option<usize> = None;
        let mut kind = "";
        for tok in header.split_whitespace() {
            if let Some((key, value)) = tok.split_once('=') {
                match key {
                    "n" => n = value.parse().ok(),
                    "m" => m = value.parse().ok(),
                    "seed" => seed = value.parse().ok(),
                    "order" => order = value.parse().ok(),
                    "provenance" => kind = value,
                    _ => {}
                }
            }
        }
        let n = n.ok_or_else(|| Error::Parse("generator CSV header lacks n=".into()))?;
        let provenance = match kind {
            "empirical" => Provenance::Empirical {
                m: m.ok_or_else(|| Error::Parse("empirical provenance lacks m=".into()))?,
                seed: seed.ok_or_else(|| Error::Parse("empirical provenance lacks seed=".into()))?,
            },
            "reference" => Provenance::Reference {
                order: order.ok_or_else(|| Error::Parse("reference provenance lacks order=".into()))?,
            },
            other => {
                return Err(Error::Parse(format!("unknown provenance kind '{other}'")));
            }
        };
        let mut matrix = DMatrix::zeros(n, n);
        let mut row = 0usize;
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if row >= n {
                return Err(Error::Parse(format!("generator CSV has more than {n} rows")));
            }
            let mut col = 0usize;
            for tok in line.split(',') {
                if col >= n {
                    return Err(Error::Parse(format!(
                        "generator CSV row {row} has more than {n} columns"
                    )));
                }
                matrix[(row, col)] = tok.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("bad float '{tok}' at row {row}, column {col}"))
                })?;
                col += 1;
            }
            if col != n {
                return Err(Error::Parse(format!(
                    "generator CSV row {row} has {col} of {n} columns"
                )));
            }
            row += 1;
        }
        if row != n {
            return Err(Error::Parse(format!("generator CSV has {row} of {n} rows")));
        }
        Self::new(matrix, provenance)
    }
}

/// Frobenius distance between two equally shaped generator matrices.
pub fn generator_error(reference: &GeneratorMatrix, estimate: &GeneratorMatrix) -> Result<f64> {
    frobenius_distance(reference.matrix(), estimate.matrix())
}

/// Frobenius norm of the difference of two equally shaped matrices.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            context: "matrix difference",
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok((a - b).norm())
}

/// One empirical generator fit for a constant control value.
#[derive(Debug, Clone)]
pub struct EdmdFit {
    dict: Dictionary,
    c_hat: DMatrix<f64>,
    a_hat: DMatrix<f64>,
    l_hat: DMatrix<f64>,
    control: DVector<f64>,
    m: usize,
    seed: Option<u64>,
    condition: f64,
    residual: f64,
}

impl EdmdFit {
    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// Sampled Gram matrix.
    pub fn c_hat(&self) -> &DMatrix<f64> {
        &self.c_hat
    }

    /// Sampled stiffness matrix (columns are projected generator actions).
    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    /// The estimated generator matrix, solving `C_hat L_hat = A_hat`.
    pub fn l_hat(&self) -> &DMatrix<f64> {
        &self.l_hat
    }

    pub fn control(&self) -> &DVector<f64> {
        &self.control
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.l_hat.nrows()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Raw eigenvalue condition estimate of the Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Frobenius norm of `C_hat L_hat - A_hat`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn generator_matrix(&self) -> GeneratorMatrix {
        GeneratorMatrix {
            matrix: self.l_hat.clone(),
            provenance: Provenance::Empirical {
                m: self.m,
                seed: self.seed.unwrap_or(0),
            },
        }
    }
}

fn accumulate_fit(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    u_const: &DVector<f64>,
    points: &[DVector<f64>],
    weights: Option<&[f64]>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = dict.len();
    let mut c = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    for (k, x) in points.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[k]);
        let psi = dict.eval(x)?;
        let lpsi = apply_generator(dict, system, u_const, x)?;
        c.ger(w, &psi, &psi, 1.0);
        a.ger(w, &psi, &lpsi, 1.0);
    }
    if weights.is_none() {
        let inv_m = points.len() as f64;
        c /= inv_m;
        a /= inv_m;
    }
    // enforce exact symmetry of the Gram matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    Ok((c, a))
}

fn solve_fit(
    dict: &Dictionary,
    c: DMatrix<f64>,
    a: DMatrix<f64>,
    control: DVector<f64>,
    m: usize,
    seed: Option<u64>,
) -> Result<EdmdFit> {
    let (l, report) = sym_solve_floor(&c, &a, 1e-12)?;
    // an exactly redundant dictionary (e.g. a constraint inside the span)
    // leaves the system consistent; only an inconsistent solve is fatal
    let tol = 1e-8 * a.norm();
    if report.residual > tol {
        return Err(Error::RankDeficient {
            condition: report.condition,
            residual: report.residual,
        });
    }
    Ok(EdmdFit {
        dict: dict.clone(),
        c_hat: c,
        a_hat: a,
        l_hat: l,
        control,
        m,
        seed,
        condition: report.condition,
        residual: report.residual,
    })
}

/// Empirical generator fit `L_m = C_m^{-1} A_m` from i.i.d. samples.
pub fn build_matrices(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    u_const: &DVector<f64>,
    samples: &SampleSet,
) -> Result<EdmdFit> {
    let (c, a) = accumulate_fit(dict, system, u_const, samples.points(), None)?;
    solve_fit(
        dict,
        c,
        a,
        u_const.clone(),
        samples.len(),
        Some(samples.seed()),
    )
}

/// Weighted fit: replaces the sample average by an explicit weighted sum
/// (used to feed quadrature rules through the estimator).
pub fn build_matrices_weighted(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    u_const: &DVector<f64>,
    points: &[DVector<f64>],
    weights: &[f64],
) -> Result<EdmdFit> {
    if points.len() != weights.len() {
        return Err(Error::Dimension {
            context: "quadrature weights",
            expected: points.len(),
            found: weights.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::Usage("weighted fit needs at least one point".into()));
    }
    let (c, a) = accumulate_fit(dict, system, u_const, points, Some(weights))?;
    solve_fit(dict, c, a, u_const.clone(), points.len(), None)
}

/// Quadrature Galerkin reference `L_V = C^{-1} A` over the box, with the
/// rule aligned to the dictionary's piecewise-polynomial cells.
pub fn galerkin_reference(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    u_const: &DVector<f64>,
    bounds: &BoxDomain,
    order: usize,
) -> Result<GeneratorMatrix> {
    let quad = Quadrature::composite(bounds, dict.quadrature_cells(), order)?;
    let fit = build_matrices_weighted(dict, system, u_const, quad.points(), quad.weights())?;
    GeneratorMatrix::new(fit.l_hat, Provenance::Reference { order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{composite_dictionary, monomial_dictionary};
    use crate::constraints::Constraint;
    use nalgebra::{dmatrix, dvector};

    fn decay_1d() -> ControlAffineSystem {
        ControlAffineSystem::autonomous_1d(-1.0)
    }

    #[test]
    fn hand_fit_is_bit_exact() {
        // dictionary {1, x}, system xdot = -x, samples {0.5, -0.5}: all
        // intermediate quantities are dyadic, so the fit is exact
        let dict = monomial_dictionary(1, 1).unwrap();
        let samples =
            SampleSet::from_points(vec![dvector![0.5], dvector![-0.5]], 0).unwrap();
        let fit = build_matrices(&dict, &decay_1d(), &dvector![], &samples).unwrap();
        assert_eq!(fit.c_hat(), &dmatrix![1.0, 0.0; 0.0, 0.25]);
        assert_eq!(fit.a_hat(), &dmatrix![0.0, 0.0; 0.0, -0.25]);
        assert_eq!(fit.l_hat(), &dmatrix![0.0, 0.0; 0.0, -1.0]);
        assert_eq!(fit.residual(), 0.0);
    }

    #[test]
    fn well_conditioned_gram_solve_stays_consistent() {
        // regression: this specific draw produces a Gram (condition ~1.4e5,
        // nowhere near the regularization floor) on which nalgebra's
        // symmetric QL eigensolver silently misconverges, leaving a solve
        // residual of order one; the SVD-backed solve handles it
        let dict = monomial_dictionary(2, 5).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let domain = StateDomain::new(BoxDomain::centered(2, 3.0).unwrap());
        let samples =
            SampleSet::sample_iid(&domain, 100, crate::seeding::subseed(1000, 12)).unwrap();
        let fit = build_matrices(&dict, &sys, &dvector![0.0], &samples).unwrap();
        assert!(
            fit.residual() < 1e-8 * fit.a_hat().norm(),
            "residual {} vs a norm {}",
            fit.residual(),
            fit.a_hat().norm()
        );
        assert!(fit.condition() < 1e6, "condition {}", fit.condition());
    }

    #[test]
    fn generator_action_on_duffing() {
        let dict = monomial_dictionary(2, 2).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let x = dvector![1.0, 1.0];
        let l = apply_generator(&dict, &sys, &dvector![0.0], &x).unwrap();
        // L x1 = x2 = 1; L x1^2 = 2 x1 x2 = 2; L 1 = 0
        assert_eq!(l[dict.index_of("1").unwrap()], 0.0);
        assert_eq!(l[dict.index_of("x1").unwrap()], 1.0);
        assert_eq!(l[dict.index_of("x1^2").unwrap()], 2.0);
    }

    #[test]
    fn constant_observable_gives_zero_column() {
        // columns of A and L hold projected generator actions, so the
        // constant (whose action vanishes) zeroes the first column; the
        // lifted-state propagation uses the transpose of these matrices
        let dict = monomial_dictionary(2, 3).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.3);
        let domain = StateDomain::new(BoxDomain::centered(2, 2.0).unwrap());
        let samples = SampleSet::sample_iid(&domain, 200, 9).unwrap();
        let fit = build_matrices(&dict, &sys, &dvector![0.7], &samples).unwrap();
        assert!(fit.a_hat().column(0).norm() == 0.0);
        assert!(fit.l_hat().column(0).norm() < 1e-12);
    }

    #[test]
    fn duplicated_sample_set_gives_identical_fit() {
        let dict = monomial_dictionary(1, 1).unwrap();
        let single =
            SampleSet::from_points(vec![dvector![0.5], dvector![-0.5]], 0).unwrap();
        let doubled = SampleSet::from_points(
            vec![dvector![0.5], dvector![-0.5], dvector![0.5], dvector![-0.5]],
            0,
        )
        .unwrap();
        let f1 = build_matrices(&dict, &decay_1d(), &dvector![], &single).unwrap();
        let f2 = build_matrices(&dict, &decay_1d(), &dvector![], &doubled).unwrap();
        assert_eq!(f1.c_hat(), f2.c_hat());
        assert_eq!(f1.a_hat(), f2.a_hat());
        assert_eq!(f1.l_hat(), f2.l_hat());
    }

    #[test]
    fn sampling_is_deterministic_and_in_domain() {
        let domain = StateDomain::new(BoxDomain::from_slices(&[-2.0, 0.0], &[2.0, 1.0]).unwrap());
        let a = SampleSet::sample_iid(&domain, 1000, 77).unwrap();
        let b = SampleSet::sample_iid(&domain, 1000, 77).unwrap();
        assert_eq!(a.points(), b.points());
        assert!(a.points().iter().all(|p| domain.membership(p)));
        // per-axis mean within 3 sigma of the box center
        for axis in 0..2 {
            let mean: f64 =
                a.points().iter().map(|p| p[axis]).sum::<f64>() / a.len() as f64;
            let center = 0.5 * (domain.bounds().lower()[axis] + domain.bounds().upper()[axis]);
            let sigma = domain.bounds().edge(axis) / (12.0f64 * a.len() as f64).sqrt();
            assert!(
                (mean - center).abs() < 3.0 * sigma,
                "axis {axis}: mean {mean} vs center {center}"
            );
        }
        let one = SampleSet::sample_iid(&domain, 1, 5).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn hopeless_rejection_rate_errors() {
        // constraint keeps only a sliver of the box
        let cs = crate::constraints::ConstraintSet::new(vec![Constraint::affine(
            "sliver",
            dvector![1.0],
            0.99999,
        )])
        .unwrap();
        // membership needs x <= -0.99999 inside [-1, 1]
        let domain = StateDomain::with_constraints(
            BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap(),
            cs,
        );
        let err = SampleSet::sample_iid(&domain, 10_000, 3).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)), "{err}");
    }

    #[test]
    fn galerkin_closed_form_1d() {
        // dict {1, x} on [-1,1] with xdot = -x:
        // C = diag(2, 2/3), A = [[0,0],[0,-2/3]], L_V = [[0,0],[0,-1]]
        let dict = monomial_dictionary(1, 1).unwrap();
        let bounds = BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap();
        let quad = Quadrature::tensor(&bounds, 40).unwrap();
        let fit = build_matrices_weighted(
            &dict,
            &decay_1d(),
            &dvector![],
            quad.points(),
            quad.weights(),
        )
        .unwrap();
        let c_exact = dmatrix![2.0, 0.0; 0.0, 2.0 / 3.0];
        let a_exact = dmatrix![0.0, 0.0; 0.0, -2.0 / 3.0];
        assert!((fit.c_hat() - &c_exact).norm() < 1e-13);
        assert!((fit.a_hat() - &a_exact).norm() < 1e-13);
        assert!((fit.l_hat() - &dmatrix![0.0, 0.0; 0.0, -1.0]).norm() < 1e-12);

        let gm = galerkin_reference(&dict, &decay_1d(), &dvector![], &bounds, 40).unwrap();
        assert!((gm.matrix() - fit.l_hat()).norm() < 1e-14);
    }

    #[test]
    fn galerkin_insensitive_to_quadrature_order() {
        let dict = monomial_dictionary(2, 5).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let a = galerkin_reference(&dict, &sys, &dvector![1.0], &bounds, 40).unwrap();
        let b = galerkin_reference(&dict, &sys, &dvector![1.0], &bounds, 50).unwrap();
        let diff = (a.matrix() - b.matrix()).amax();
        assert!(diff <= 1e-10, "max entry diff {diff}");
    }

    #[test]
    fn weighted_fit_matches_independent_entrywise_integrals() {
        let dict = monomial_dictionary(2, 2).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.2);
        let u = dvector![0.5];
        let bounds = BoxDomain::centered(2, 1.5).unwrap();
        let quad = Quadrature::tensor(&bounds, 30).unwrap();
        let fit =
            build_matrices_weighted(&dict, &sys, &u, quad.points(), quad.weights()).unwrap();
        // oracle: integrate each entry separately
        let n = dict.len();
        for i in 0..n {
            for j in 0..n {
                let cij = quad.integrate(|x| {
                    let v = dict.eval(x).unwrap();
                    v[i] * v[j]
                });
                let aij = quad.integrate(|x| {
                    let v = dict.eval(x).unwrap();
                    let l = apply_generator(&dict, &sys, &u, x).unwrap();
                    v[i] * l[j]
                });
                assert!((fit.c_hat()[(i, j)] - cij).abs() < 1e-10);
                assert!((fit.a_hat()[(i, j)] - aij).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fits_are_seed_deterministic() {
        let dict = monomial_dictionary(2, 3).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let domain = StateDomain::new(BoxDomain::centered(2, 2.0).unwrap());
        let u = dvector![1.0];
        let f1 = build_matrices(
            &dict,
            &sys,
            &u,
            &SampleSet::sample_iid(&domain, 500, 123).unwrap(),
        )
        .unwrap();
        let f2 = build_matrices(
            &dict,
            &sys,
            &u,
            &SampleSet::sample_iid(&domain, 500, 123).unwrap(),
        )
        .unwrap();
        assert_eq!(f1.l_hat(), f2.l_hat());
        assert_eq!(f1.c_hat(), f2.c_hat());
    }

    #[test]
    fn redundant_composite_dictionary_still_fits() {
        // an affine constraint lies inside the monomial span, so the Gram
        // matrix is exactly singular but the system stays consistent
        let base = monomial_dictionary(2, 3).unwrap();
        let c = Constraint::affine("x1 - 0.8", dvector![1.0, 0.0], -0.8);
        let dict = composite_dictionary(&[c], &base).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let domain = StateDomain::new(BoxDomain::centered(2, 2.0).unwrap());
        let samples = SampleSet::sample_iid(&domain, 300, 21).unwrap();
        let fit = build_matrices(&dict, &sys, &dvector![0.0], &samples).unwrap();
        assert!(fit.condition() > 1e14, "condition {}", fit.condition());
        assert!(fit.residual() <= 1e-8 * fit.a_hat().norm());
    }

    #[test]
    fn error_decreases_with_more_data() {
        // control e1 activates the cubic field, which leaves the degree-3
        // span, so the estimate carries genuine sampling error; the
        // control-free fit recovers the reference exactly and cannot
        // separate sample sizes
        let dict = monomial_dictionary(2, 3).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let domain = StateDomain::new(bounds.clone());
        let u = dvector![1.0];
        let reference = galerkin_reference(&dict, &sys, &u, &bounds, 40).unwrap();
        let mut medians = Vec::new();
        for (mi, &m) in [100usize, 1000, 10_000].iter().enumerate() {
            let mut errors = Vec::new();
            for trial in 0..50u64 {
                let seed = crate::seeding::subseed(40, (mi as u64) << 32 | trial);
                let samples = SampleSet::sample_iid(&domain, m, seed).unwrap();
                let fit = build_matrices(&dict, &sys, &u, &samples).unwrap();
                errors
                    .push(generator_error(&reference, &fit.generator_matrix()).unwrap());
            }
            medians.push(crate::stats::median(&errors).unwrap());
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "medians {medians:?}"
        );
    }

    #[test]
    fn generator_error_examples() {
        let id = GeneratorMatrix::new(DMatrix::identity(4, 4), Provenance::Reference { order: 1 })
            .unwrap();
        let zero =
            GeneratorMatrix::new(DMatrix::zeros(4, 4), Provenance::Reference { order: 1 }).unwrap();
        assert_eq!(generator_error(&id, &id).unwrap(), 0.0);
        assert_eq!(generator_error(&zero, &id).unwrap(), 2.0);
        let small =
            GeneratorMatrix::new(DMatrix::zeros(2, 2), Provenance::Reference { order: 1 }).unwrap();
        assert!(generator_error(&id, &small).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dict = monomial_dictionary(2, 3).unwrap();
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let domain = StateDomain::new(BoxDomain::centered(2, 2.0).unwrap());
        let samples = SampleSet::sample_iid(&domain, 200, 4).unwrap();
        let fit = build_matrices(&dict, &sys, &dvector![1.0], &samples).unwrap();
        let gm = fit.generator_matrix();
        let text = gm.to_csv_string();
        let back = GeneratorMatrix::from_csv_str(&text).unwrap();
        assert_eq!(gm.matrix(), back.matrix());
        assert_eq!(gm.provenance(), back.provenance());

        let reference = galerkin_reference(
            &dict,
            &sys,
            &dvector![1.0],
            &BoxDomain::centered(2, 2.0).unwrap(),
            40,
        )
        .unwrap();
        let back2 = GeneratorMatrix::from_csv_str(&reference.to_csv_string()).unwrap();
        assert_eq!(reference.matrix(), back2.matrix());
        assert_eq!(reference.provenance(), back2.provenance());
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(GeneratorMatrix::from_csv_str("").is_err());
        assert!(GeneratorMatrix::from_csv_str("1,2\n3,4\n").is_err());
        assert!(GeneratorMatrix::from_csv_str("# n=2 provenance=reference order=3\n1,2\n").is_err());
        assert!(
            GeneratorMatrix::from_csv_str("# n=2 provenance=reference order=3\n1,x\n3,4\n").is_err()
        );
    }
}
