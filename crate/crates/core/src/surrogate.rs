//! The bilinear generator surrogate and the linear eDMDc baseline.
//!
//! From one generator fit per control vertex (the drift alone plus each
//! unit control) the surrogate interpolates affinely:
//! `L(u) = L0 + sum_i u_i (L^{e_i} - L0)`. Lifted states z(t) = Psi(x(t))
//! are propagated through `zdot = L(u(t))^T z` — the transpose appears
//! because the stored matrices act on observable coefficients, while z
//! stacks observable values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dictionary::{Dictionary, ObservableCoeffs};
use crate::domain::BoxDomain;
use crate::dynamics::{integrate, ControlAffineSystem, ControlSignal, StateDomain};
use crate::edmd::{EdmdFit, Provenance, SampleSet};
use crate::error::{Error, Result};
use crate::grid::time_grid;
use crate::linalg::lstsq;
use crate::seeding;

/// Lifted states beyond this norm are flagged as diverged (observables such
/// as degree-5 monomials grow much faster than the state itself, so the
/// threshold sits far above the state-space blow-up bound).
pub const LIFTED_BLOWUP: f64 = 1e9;

/// Lifted trajectory z(t); possibly truncated at a divergence time.
#[derive(Debug, Clone)]
pub struct LiftedTrajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    diverged: Option<f64>,
}

impl LiftedTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time at which the lifted state left the blow-up ball, if it did.
    pub fn diverged(&self) -> Option<f64> {
        self.diverged
    }
}

/// A scalar prediction series on the shared time grid.
#[derive(Debug, Clone)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub diverged: Option<f64>,
}

/// Bilinear surrogate generator with stored control-vertex matrices.
#[derive(Debug, Clone)]
pub struct BilinearSurrogate {
    dict: Dictionary,
    l0: DMatrix<f64>,
    vertices: Vec<DMatrix<f64>>,
    differences: Vec<DMatrix<f64>>,
    provenance: Vec<Provenance>,
}

impl BilinearSurrogate {
    /// Assemble from explicit matrices: the drift generator and one matrix
    /// per unit control vertex.
    pub fn from_matrices(
        dict: Dictionary,
        l0: DMatrix<f64>,
        vertices: Vec<DMatrix<f64>>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let n = dict.len();
        if l0.nrows() != n || l0.ncols() != n {
            return Err(Error::Dimension {
                context: "drift generator matrix",
                expected: n,
                found: l0.nrows().max(l0.ncols()),
            });
        }
        for v in &vertices {
            if v.nrows() != n || v.ncols() != n {
                return Err(Error::Dimension {
                    context: "control-vertex generator matrix",
                    expected: n,
                    found: v.nrows().max(v.ncols()),
                });
            }
        }
        if provenance.len() != vertices.len() + 1 {
            return Err(Error::Usage(format!(
                "expected {} provenance entries, got {}",
                vertices.len() + 1,
                provenance.len()
            )));
        }
        let differences = vertices.iter().map(|v| v - &l0).collect();
        Ok(Self {
            dict,
            l0,
            vertices,
            differences,
            provenance,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn dim(&self) -> usize {
        self.l0.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.vertices.len()
    }

    pub fn l0(&self) -> &DMatrix<f64> {
        &self.l0
    }

    /// The stored generator for unit control `e_{i+1}`.
    pub fn vertex(&self, i: usize) -> &DMatrix<f64> {
        &self.vertices[i]
    }

    /// Difference matrix `B_i = L^{e_i} - L0`.
    pub fn difference(&self, i: usize) -> &DMatrix<f64> {
        &self.differences[i]
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Generator at a control value: `L0 + sum_i u_i B_i`. Exactly the
    /// stored matrix at the control vertices themselves.
    pub fn generator_at(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        if u.len() != self.control_dim() {
            return Err(Error::Dimension {
                context: "control value",
                expected: self.control_dim(),
                found: u.len(),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control value is not finite".into()));
        }
        if u.iter().all(|&v| v == 0.0) {
            return Ok(self.l0.clone());
        }
        for i in 0..self.control_dim() {
            if u[i] == 1.0 && u.iter().enumerate().all(|(j, &v)| j == i || v == 0.0) {
                return Ok(self.vertices[i].clone());
            }
        }
        let mut out = self.l0.clone();
        for i in 0..self.control_dim() {
            let ui = u[i];
            if ui != 0.0 {
                out.iter_mut()
                    .zip(self.differences[i].iter())
                    .for_each(|(o, d)| *o += ui * d);
            }
        }
        Ok(out)
    }

    /// Propagate the lifted state through `zdot = L(u(t))^T z` with the
    /// same Runge-Kutta scheme and grid convention as the ground-truth
    /// integrator. Divergence truncates the trajectory and sets a flag
    /// instead of failing.
    pub fn propagate(
        &self,
        z0: &DVector<f64>,
        u: &ControlSignal,
        horizon: f64,
        dt: f64,
    ) -> Result<LiftedTrajectory> {
        let n = self.dim();
        if z0.len() != n {
            return Err(Error::Dimension {
                context: "lifted initial state",
                expected: n,
                found: z0.len(),
            });
        }
        if u.control_dim() != self.control_dim() {
            return Err(Error::Dimension {
                context: "control signal",
                expected: self.control_dim(),
                found: u.control_dim(),
            });
        }
        let grid = time_grid(horizon, dt)?;
        let mut cache_u: Option<DVector<f64>> = None;
        let mut cache_m = DMatrix::zeros(n, n);
        let mut states = Vec::with_capacity(grid.len());
        let mut times = Vec::with_capacity(grid.len());
        let mut z = z0.clone();
        states.push(z.clone());
        times.push(0.0);
        let mut diverged = None;
        let mut k1 = DVector::zeros(n);
        let mut k2 = DVector::zeros(n);
        let mut k3 = DVector::zeros(n);
        let mut k4 = DVector::zeros(n);
        for k in 1..grid.len() {
            let t = grid[k - 1];
            let h = grid[k] - t;
            {
                let stage = |time: f64,
                                 input: &DVector<f64>,
                                 out: &mut DVector<f64>,
                                 cache_u: &mut Option<DVector<f64>>,
                                 cache_m: &mut DMatrix<f64>|
                 -> Result<()> {
                    let uv = u.eval(time);
                    if cache_u.as_ref() != Some(&uv) {
                        *cache_m = self.generator_at(&uv)?;
                        *cache_u = Some(uv);
                    }
                    out.gemv_tr(1.0, cache_m, input, 0.0);
                    Ok(())
                };
                stage(t, &z, &mut k1, &mut cache_u, &mut cache_m)?;
                let zin = &z + &k1 * (0.5 * h);
                stage(t + 0.5 * h, &zin, &mut k2, &mut cache_u, &mut cache_m)?;
                let zin = &z + &k2 * (0.5 * h);
                stage(t + 0.5 * h, &zin, &mut k3, &mut cache_u, &mut cache_m)?;
                let zin = &z + &k3 * h;
                stage(grid[k], &zin, &mut k4, &mut cache_u, &mut cache_m)?;
            }
            z += (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
            let norm = z.norm();
            if !norm.is_finite() || norm > LIFTED_BLOWUP {
                diverged = Some(grid[k]);
                break;
            }
            states.push(z.clone());
            times.push(grid[k]);
        }
        Ok(LiftedTrajectory {
            times,
            states,
            diverged,
        })
    }

    /// Predicted observable path: lift `x0`, propagate, and read out
    /// `h(t) = c^T z(t)`.
    pub fn predict_observable(
        &self,
        h: &ObservableCoeffs,
        x0: &DVector<f64>,
        u: &ControlSignal,
        horizon: f64,
        dt: f64,
    ) -> Result<ObservableSeries> {
        if !h.dictionary().same_structure(&self.dict) {
            return Err(Error::Usage(
                "observable coefficients use a different dictionary than the surrogate".into(),
            ));
        }
        let z0 = self.dict.eval(x0)?;
        let traj = self.propagate(&z0, u, horizon, dt)?;
        let values = traj
            .states()
            .iter()
            .map(|z| h.coeffs().dot(z))
            .collect();
        Ok(ObservableSeries {
            times: traj.times,
            values,
            diverged: traj.diverged,
        })
    }
}

/// Assemble the surrogate from fits at controls `0, e_1, ..., e_nc`.
pub fn assemble_surrogate(fits: &[EdmdFit]) -> Result<BilinearSurrogate> {
    if fits.is_empty() {
        return Err(Error::Usage("surrogate assembly needs at least the drift fit".into()));
    }
    let dict = fits[0].dictionary().clone();
    for f in fits {
        if !f.dictionary().same_structure(&dict) {
            return Err(Error::Usage(
                "surrogate fits were built over different dictionaries".into(),
            ));
        }
    }
    let nc = fits[0].control().len();
    if fits.len() != nc + 1 {
        return Err(Error::Usage(format!(
            "expected {} fits (drift plus one per control), got {}",
            nc + 1,
            fits.len()
        )));
    }
    let is_zero = |v: &DVector<f64>| v.iter().all(|&x| x == 0.0);
    let is_unit = |v: &DVector<f64>, i: usize| {
        v.iter().enumerate().all(|(j, &x)| if j == i { x == 1.0 } else { x == 0.0 })
    };
    let drift = fits
        .iter()
        .find(|f| is_zero(f.control()))
        .ok_or_else(|| Error::Usage("no fit with zero control found".into()))?;
    let mut vertices = Vec::with_capacity(nc);
    let mut provenance = vec![provenance_of(drift)];
    for i in 0..nc {
        let f = fits
            .iter()
            .find(|f| is_unit(f.control(), i))
            .ok_or_else(|| {
                Error::Usage(format!("no fit with unit control on channel {} found", i + 1))
            })?;
        vertices.push(f.l_hat().clone());
        provenance.push(provenance_of(f));
    }
    BilinearSurrogate::from_matrices(dict, drift.l_hat().clone(), vertices, provenance)
}

fn provenance_of(fit: &EdmdFit) -> Provenance {
    Provenance::Empirical {
        m: fit.m(),
        seed: fit.seed().unwrap_or(0),
    }
}

/// Discrete-time lifted-linear baseline `z_{k+1} = A z_k + B u_k`.
#[derive(Debug, Clone)]
pub struct EdmdcModel {
    dict: Dictionary,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sample_interval: f64,
    residual: f64,
}

impl EdmdcModel {
    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Snapshot interval the discrete model was trained at.
    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    /// Least-squares training residual (Frobenius).
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Iterate the discrete model and read the observable on the fine
    /// output grid (linear interpolation between snapshot times).
    pub fn predict_observable(
        &self,
        h: &ObservableCoeffs,
        x0: &DVector<f64>,
        u: &ControlSignal,
        horizon: f64,
        dt: f64,
    ) -> Result<ObservableSeries> {
        if !h.dictionary().same_structure(&self.dict) {
            return Err(Error::Usage(
                "observable coefficients use a different dictionary than the model".into(),
            ));
        }
        if u.control_dim() != self.b.ncols() {
            return Err(Error::Dimension {
                context: "control signal",
                expected: self.b.ncols(),
                found: u.control_dim(),
            });
        }
        let fine = time_grid(horizon, dt)?;
        let delta = self.sample_interval;
        let k_max = (horizon / delta).ceil() as usize;
        let mut coarse_vals = Vec::with_capacity(k_max + 1);
        let mut z = self.dict.eval(x0)?;
        coarse_vals.push(h.coeffs().dot(&z));
        let mut diverged = None;
        for k in 0..k_max {
            let uk = u.eval(k as f64 * delta);
            let mut next = &self.a * &z;
            next.gemv(1.0, &self.b, &uk, 1.0);
            z = next;
            let norm = z.norm();
            if !norm.is_finite() || norm > LIFTED_BLOWUP {
                diverged = Some((k + 1) as f64 * delta);
                break;
            }
            coarse_vals.push(h.coeffs().dot(&z));
        }
        // interpolate onto the fine grid, truncating at divergence
        let covered = (coarse_vals.len() - 1) as f64 * delta;
        let mut times = Vec::with_capacity(fine.len());
        let mut values = Vec::with_capacity(fine.len());
        for &t in &fine {
            if t > covered + 1e-12 {
                break;
            }
            let s = (t / delta).min((coarse_vals.len() - 1) as f64);
            let k = (s.floor() as usize).min(coarse_vals.len() - 1);
            let frac = s - k as f64;
            let v = if frac == 0.0 || k + 1 >= coarse_vals.len() {
                coarse_vals[k]
            } else {
                (1.0 - frac) * coarse_vals[k] + frac * coarse_vals[k + 1]
            };
            times.push(t);
            values.push(v);
        }
        Ok(ObservableSeries {
            times,
            values,
            diverged,
        })
    }
}

/// Fit the eDMDc baseline from snapshot pairs: states drawn i.i.d. in the
/// domain, controls i.i.d. in the bounds box, successors obtained by exact
/// integration over one sample interval with the control held constant.
pub fn fit_edmdc(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    domain: &StateDomain,
    control_bounds: &BoxDomain,
    pairs: usize,
    sample_interval: f64,
    seed: u64,
) -> Result<EdmdcModel> {
    if pairs == 0 {
        return Err(Error::Usage("eDMDc needs at least one snapshot pair".into()));
    }
    if !(sample_interval > 0.0) || !sample_interval.is_finite() {
        return Err(Error::Usage(format!(
            "sample interval must be positive, got {sample_interval}"
        )));
    }
    if control_bounds.dim() != system.control_dim() {
        return Err(Error::Dimension {
            context: "control bounds",
            expected: system.control_dim(),
            found: control_bounds.dim(),
        });
    }
    let n = dict.len();
    let nc = system.control_dim();
    let states = SampleSet::sample_iid(domain, pairs, seeding::subseed(seed, 0))?;
    let mut rng = seeding::rng(seeding::subseed(seed, 1));
    let mut g = DMatrix::zeros(pairs, n + nc);
    let mut y = DMatrix::zeros(pairs, n);
    for (k, x) in states.points().iter().enumerate() {
        let mut uk = DVector::zeros(nc);
        for i in 0..nc {
            uk[i] = rng.gen_range(control_bounds.lower()[i]..control_bounds.upper()[i]);
        }
        let flow = integrate(
            system,
            x,
            &ControlSignal::constant(uk.clone()),
            sample_interval,
            sample_interval,
        )?;
        let psi0 = dict.eval(x)?;
        let psi1 = dict.eval(flow.final_state())?;
        for j in 0..n {
            g[(k, j)] = psi0[j];
            y[(k, j)] = psi1[j];
        }
        for i in 0..nc {
            g[(k, n + i)] = uk[i];
        }
    }
    let x = lstsq(&g, &y)?;
    let residual = (&g * &x - &y).norm();
    let xt = x.transpose();
    let a = xt.columns(0, n).into_owned();
    let b = xt.columns(n, nc).into_owned();
    Ok(EdmdcModel {
        dict: dict.clone(),
        a,
        b,
        sample_interval,
        residual,
    })
}
