//! Control-affine ODE systems, control signals, and ground-truth
//! integration.
//!
//! Systems have the form xdot = f(x) + sum_i g_i(x) u_i(t) with drift f and
//! control fields g_i given as closures. Ground truth is produced by
//! fixed-step classical Runge-Kutta so that true and surrogate trajectories
//! share identical time grids.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::constraints::ConstraintSet;
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::grid::time_grid;
use crate::seeding;

/// States whose Euclidean norm exceeds this are treated as diverged.
pub const STATE_BLOWUP: f64 = 1e6;

type FieldFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// A control-affine ODE `xdot = f(x) + sum_i g_i(x) u_i`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    name: String,
    state_dim: usize,
    control_dim: usize,
    drift: Arc<FieldFn>,
    control_fields: Vec<Arc<FieldFn>>,
}

impl fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .finish()
    }
}

impl ControlAffineSystem {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        control_fields: Vec<Arc<FieldFn>>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::Usage("state dimension must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            control_dim: control_fields.len(),
            drift: Arc::new(drift),
            control_fields,
        })
    }

    /// Duffing oscillator with one control channel:
    /// `x1dot = x2`, `x2dot = -delta x2 - alpha x1 - 2 beta x1^3 u`.
    pub fn duffing(alpha: f64, beta: f64, delta: f64) -> Self {
        let drift = move |x: &DVector<f64>| {
            DVector::from_column_slice(&[x[1], -delta * x[1] - alpha * x[0]])
        };
        let field: Arc<FieldFn> = Arc::new(move |x: &DVector<f64>| {
            DVector::from_column_slice(&[0.0, -2.0 * beta * x[0] * x[0] * x[0]])
        });
        Self::new("duffing", 2, drift, vec![field]).expect("static dimensions")
    }

    /// Scalar controlled system `xdot = a x + b u`.
    pub fn linear_1d(a: f64, b: f64) -> Self {
        let drift = move |x: &DVector<f64>| DVector::from_column_slice(&[a * x[0]]);
        let field: Arc<FieldFn> = Arc::new(move |_: &DVector<f64>| DVector::from_column_slice(&[b]));
        Self::new("linear-1d", 1, drift, vec![field]).expect("static dimensions")
    }

    /// Scalar autonomous system `xdot = a x` (no control channel).
    pub fn autonomous_1d(a: f64) -> Self {
        let drift = move |x: &DVector<f64>| DVector::from_column_slice(&[a * x[0]]);
        Self::new("autonomous-1d", 1, drift, vec![]).expect("static dimensions")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// Right-hand side `f(x) + sum_i g_i(x) u_i`.
    pub fn eval_rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension {
                context: "state",
                expected: self.state_dim,
                found: x.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(Error::Dimension {
                context: "control",
                expected: self.control_dim,
                found: u.len(),
            });
        }
        let mut out = (self.drift)(x);
        if out.len() != self.state_dim {
            return Err(Error::Dimension {
                context: "drift output",
                expected: self.state_dim,
                found: out.len(),
            });
        }
        for (i, g) in self.control_fields.iter().enumerate() {
            if u[i] != 0.0 {
                out.axpy(u[i], &g(x), 1.0);
            }
        }
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "vector field of '{}' is not finite in coordinate {k}",
                self.name
            )));
        }
        Ok(out)
    }

    /// The drift plus control fields frozen at a constant control value,
    /// i.e. the autonomous vector field `f + sum_i g_i u_i`.
    pub fn frozen(&self, u: &DVector<f64>) -> Result<ControlAffineSystem> {
        if u.len() != self.control_dim {
            return Err(Error::Dimension {
                context: "control",
                expected: self.control_dim,
                found: u.len(),
            });
        }
        let inner = self.clone();
        let uc = u.clone();
        ControlAffineSystem::new(
            format!("{}-frozen", self.name),
            self.state_dim,
            move |x: &DVector<f64>| inner.eval_rhs(x, &uc).expect("validated dimensions"),
            vec![],
        )
    }
}

type SignalFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

enum SignalKind {
    Constant(DVector<f64>),
    Zoh { values: Vec<DVector<f64>>, segment: f64 },
    Callable { f: Arc<SignalFn>, control_dim: usize },
}

impl Clone for SignalKind {
    fn clone(&self) -> Self {
        match self {
            SignalKind::Constant(v) => SignalKind::Constant(v.clone()),
            SignalKind::Zoh { values, segment } => SignalKind::Zoh {
                values: values.clone(),
                segment: *segment,
            },
            SignalKind::Callable { f, control_dim } => SignalKind::Callable {
                f: f.clone(),
                control_dim: *control_dim,
            },
        }
    }
}

/// A control input u(t), evaluated at arbitrary times in `[0, T]`.
#[derive(Clone)]
pub struct ControlSignal {
    kind: SignalKind,
    bounds: Option<BoxDomain>,
}

impl fmt::Debug for ControlSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SignalKind::Constant(_) => "constant",
            SignalKind::Zoh { .. } => "zoh",
            SignalKind::Callable { .. } => "callable",
        };
        f.debug_struct("ControlSignal")
            .field("kind", &kind)
            .field("control_dim", &self.control_dim())
            .finish()
    }
}

impl ControlSignal {
    /// Constant control u(t) = u.
    pub fn constant(u: DVector<f64>) -> Self {
        Self {
            kind: SignalKind::Constant(u),
            bounds: None,
        }
    }

    /// The empty control for systems without control channels.
    pub fn none() -> Self {
        Self::constant(DVector::zeros(0))
    }

    /// Piecewise-constant (zero-order hold) signal: `u(t) = values[k]` for
    /// `t` in `[k*segment, (k+1)*segment)`, clamped to the final segment
    /// beyond the covered range.
    pub fn zoh(values: Vec<DVector<f64>>, segment: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("zero-order hold needs at least one segment".into()));
        }
        if !(segment > 0.0) || !segment.is_finite() {
            return Err(Error::Usage(format!(
                "segment duration must be positive, got {segment}"
            )));
        }
        let nc = values[0].len();
        if values.iter().any(|v| v.len() != nc) {
            return Err(Error::Usage("zero-order hold segments differ in dimension".into()));
        }
        Ok(Self {
            kind: SignalKind::Zoh { values, segment },
            bounds: None,
        })
    }

    /// Arbitrary time-dependent control; the caller guarantees bounds.
    pub fn callable(
        f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        control_dim: usize,
    ) -> Self {
        Self {
            kind: SignalKind::Callable {
                f: Arc::new(f),
                control_dim,
            },
            bounds: None,
        }
    }

    /// Random zero-order hold: per-segment values drawn uniformly from the
    /// bounds box, deterministic in the seed.
    pub fn random_zoh(bounds: &BoxDomain, horizon: f64, segment: f64, seed: u64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Usage(format!("horizon must be positive, got {horizon}")));
        }
        if !(segment > 0.0) || !segment.is_finite() {
            return Err(Error::Usage(format!(
                "segment duration must be positive, got {segment}"
            )));
        }
        let n_segments = (horizon / segment).ceil() as usize + 1;
        let mut rng = seeding::rng(seed);
        let nc = bounds.dim();
        let mut values = Vec::with_capacity(n_segments);
        for _ in 0..n_segments {
            let mut v = DVector::zeros(nc);
            for i in 0..nc {
                v[i] = rng.gen_range(bounds.lower()[i]..bounds.upper()[i]);
            }
            values.push(v);
        }
        let mut s = Self::zoh(values, segment)?;
        s.bounds = Some(bounds.clone());
        Ok(s)
    }

    /// Attach a bounds box and validate all stored values against it.
    pub fn with_bounds(mut self, bounds: BoxDomain) -> Result<Self> {
        if bounds.dim() != self.control_dim() {
            return Err(Error::Dimension {
                context: "control bounds",
                expected: self.control_dim(),
                found: bounds.dim(),
            });
        }
        let check = |v: &DVector<f64>| -> Result<()> {
            if !bounds.contains(v) {
                return Err(Error::Usage(format!(
                    "control value {v:?} lies outside the bounds box"
                )));
            }
            Ok(())
        };
        match &self.kind {
            SignalKind::Constant(v) => check(v)?,
            SignalKind::Zoh { values, .. } => {
                for v in values {
                    check(v)?;
                }
            }
            SignalKind::Callable { .. } => {}
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn bounds(&self) -> Option<&BoxDomain> {
        self.bounds.as_ref()
    }

    pub fn control_dim(&self) -> usize {
        match &self.kind {
            SignalKind::Constant(v) => v.len(),
            SignalKind::Zoh { values, .. } => values[0].len(),
            SignalKind::Callable { control_dim, .. } => *control_dim,
        }
    }

    /// Control value at time t (t < 0 is clamped to the first segment).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        match &self.kind {
            SignalKind::Constant(v) => v.clone(),
            SignalKind::Zoh { values, segment } => {
                let k = if t <= 0.0 {
                    0
                } else {
                    ((t / segment).floor() as usize).min(values.len() - 1)
                };
                values[k].clone()
            }
            SignalKind::Callable { f, .. } => f(t),
        }
    }
}

/// Sampling/certification domain: a bounding box plus optional constraint
/// functions. Membership means inside the box and `h_j(x) <= 0` for all j.
#[derive(Debug, Clone)]
pub struct StateDomain {
    bounds: BoxDomain,
    constraints: Option<ConstraintSet>,
}

impl StateDomain {
    pub fn new(bounds: BoxDomain) -> Self {
        Self {
            bounds,
            constraints: None,
        }
    }

    pub fn with_constraints(bounds: BoxDomain, constraints: ConstraintSet) -> Self {
        Self {
            bounds,
            constraints: Some(constraints),
        }
    }

    pub fn bounds(&self) -> &BoxDomain {
        &self.bounds
    }

    pub fn constraints(&self) -> Option<&ConstraintSet> {
        self.constraints.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn membership(&self, x: &DVector<f64>) -> bool {
        if !self.bounds.contains(x) {
            return false;
        }
        match &self.constraints {
            Some(cs) => cs.first_violation(x).is_none(),
            None => true,
        }
    }
}

/// Where a trajectory first left the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    /// Left the bounding box along this axis.
    BoxAxis(usize),
    /// Violated constraint function j.
    Constraint(usize),
}

/// Result of checking a trajectory against a domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainReport {
    Contained,
    Violation {
        time: f64,
        kind: ViolationKind,
        value: f64,
    },
}

impl DomainReport {
    pub fn is_contained(&self) -> bool {
        matches!(self, DomainReport::Contained)
    }
}

/// A solution path on a shared uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// Evaluate a scalar observable along the path.
    pub fn observable_path<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> Vec<f64> {
        self.states.iter().map(f).collect()
    }
}

/// Integrate the system with classical fixed-step fourth-order Runge-Kutta.
///
/// The grid is `k*dt` with the final step shortened so the last time is
/// exactly `horizon`; control values are evaluated at the Runge-Kutta
/// sub-stage times. States beyond [`STATE_BLOWUP`] abort with a divergence
/// error reporting the escape time.
pub fn integrate(
    system: &ControlAffineSystem,
    x0: &DVector<f64>,
    u: &ControlSignal,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x0.len() != system.state_dim() {
        return Err(Error::Dimension {
            context: "initial state",
            expected: system.state_dim(),
            found: x0.len(),
        });
    }
    if u.control_dim() != system.control_dim() {
        return Err(Error::Dimension {
            context: "control signal",
            expected: system.control_dim(),
            found: u.control_dim(),
        });
    }
    let times = time_grid(horizon, dt)?;
    let mut states = Vec::with_capacity(times.len());
    let mut controls = Vec::with_capacity(times.len());
    let mut x = x0.clone();
    states.push(x.clone());
    controls.push(u.eval(0.0));
    for k in 1..times.len() {
        let t = times[k - 1];
        let h = times[k] - t;
        let u0 = u.eval(t);
        let um = u.eval(t + 0.5 * h);
        let u1 = u.eval(times[k]);
        let k1 = system.eval_rhs(&x, &u0)?;
        let k2 = system.eval_rhs(&(&x + &k1 * (0.5 * h)), &um)?;
        let k3 = system.eval_rhs(&(&x + &k2 * (0.5 * h)), &um)?;
        let k4 = system.eval_rhs(&(&x + &k3 * h), &u1)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let norm = x.norm();
        if !norm.is_finite() || norm > STATE_BLOWUP {
            return Err(Error::Divergence {
                time: times[k],
                norm,
            });
        }
        states.push(x.clone());
        controls.push(u1);
    }
    Ok(Trajectory {
        times,
        states,
        controls,
    })
}

/// First time a trajectory leaves the domain (box or constraint check).
pub fn check_domain(traj: &Trajectory, domain: &StateDomain) -> DomainReport {
    for (t, x) in traj.times().iter().zip(traj.states()) {
        if let Some((axis, overshoot)) = domain.bounds().first_violation(x) {
            return DomainReport::Violation {
                time: *t,
                kind: ViolationKind::BoxAxis(axis),
                value: overshoot,
            };
        }
        if let Some(cs) = domain.constraints() {
            if let Some((j, value)) = cs.first_violation(x) {
                return DomainReport::Violation {
                    time: *t,
                    kind: ViolationKind::Constraint(j),
                    value,
                };
            }
        }
    }
    DomainReport::Contained
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Constraint;
    use nalgebra::dvector;

    #[test]
    fn duffing_rhs_known_points() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let x = dvector![1.0, 1.0];
        assert_eq!(sys.eval_rhs(&x, &dvector![0.0]).unwrap(), dvector![1.0, 1.0]);
        assert_eq!(sys.eval_rhs(&x, &dvector![1.0]).unwrap(), dvector![1.0, -1.0]);
    }

    #[test]
    fn rhs_dimension_mismatch_is_usage_error() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let err = sys.eval_rhs(&dvector![1.0], &dvector![0.0]).unwrap_err();
        assert!(err.is_usage(), "{err}");
        let err = sys
            .eval_rhs(&dvector![1.0, 1.0], &dvector![0.0, 0.0])
            .unwrap_err();
        assert!(err.is_usage(), "{err}");
    }

    #[test]
    fn zero_control_equals_drift() {
        let sys = ControlAffineSystem::duffing(2.0, -0.7, 0.3);
        let x = dvector![0.4, -1.2];
        let drift = sys.eval_rhs(&x, &dvector![0.0]).unwrap();
        assert_eq!(drift, dvector![-1.2, -0.3 * -1.2 - 2.0 * 0.4]);
    }

    #[test]
    fn rhs_is_affine_in_control() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.2);
        let x = dvector![0.7, -0.3];
        let f0 = sys.eval_rhs(&x, &dvector![0.0]).unwrap();
        let u1 = dvector![0.35];
        let u2 = dvector![-0.8];
        let lhs = sys.eval_rhs(&x, &(&u1 + &u2)).unwrap() - &f0;
        let rhs = (sys.eval_rhs(&x, &u1).unwrap() - &f0) + (sys.eval_rhs(&x, &u2).unwrap() - &f0);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn scalar_decay_matches_exponential() {
        let sys = ControlAffineSystem::autonomous_1d(-1.0);
        let traj = integrate(&sys, &dvector![1.0], &ControlSignal::none(), 1.0, 1e-3).unwrap();
        let x1 = traj.final_state()[0];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-9, "{x1}");
    }

    #[test]
    fn duffing_zero_control_matches_matrix_exponential() {
        // alpha=-1, delta=0, u=0 gives the linear field (x2, x1); the
        // initial state (1,1) sits on the growing eigenvector, so
        // x(t) = e^t (1,1)
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let traj = integrate(
            &sys,
            &dvector![1.0, 1.0],
            &ControlSignal::constant(dvector![0.0]),
            1.0,
            1e-3,
        )
        .unwrap();
        let x = traj.final_state();
        let e = 1.0f64.exp();
        assert!((x[0] - e).abs() < 1e-8 && (x[1] - e).abs() < 1e-8, "{x}");
    }

    #[test]
    fn grid_shortens_final_step() {
        let sys = ControlAffineSystem::autonomous_1d(-1.0);
        let traj = integrate(&sys, &dvector![1.0], &ControlSignal::none(), 1.0, 0.3).unwrap();
        let expect = [0.0, 0.3, 0.6, 0.9, 1.0];
        assert_eq!(traj.times().len(), expect.len());
        for (a, b) in traj.times().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rk4_order_at_least_four() {
        let sys = ControlAffineSystem::autonomous_1d(-1.0);
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let traj = integrate(&sys, &dvector![1.0], &ControlSignal::none(), 1.0, dt).unwrap();
            (traj.final_state()[0] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 14.0, "ratio {ratio}");
    }

    #[test]
    fn constant_control_matches_frozen_field() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.1);
        let ubar = dvector![0.4];
        let frozen = sys.frozen(&ubar).unwrap();
        let a = integrate(
            &sys,
            &dvector![0.5, 0.2],
            &ControlSignal::constant(ubar.clone()),
            1.0,
            1e-2,
        )
        .unwrap();
        let b = integrate(&frozen, &dvector![0.5, 0.2], &ControlSignal::none(), 1.0, 1e-2).unwrap();
        for (xa, xb) in a.states().iter().zip(b.states()) {
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn blow_up_reports_divergence_time() {
        // xdot = x^2 from x0=1 blows up at t=1
        let sys = ControlAffineSystem::new(
            "quadratic",
            1,
            |x: &DVector<f64>| DVector::from_column_slice(&[x[0] * x[0]]),
            vec![],
        )
        .unwrap();
        let err = integrate(&sys, &dvector![1.0], &ControlSignal::none(), 2.0, 1e-3).unwrap_err();
        match err {
            Error::Divergence { time, .. } => {
                assert!(time > 0.9 && time < 1.1, "time {time}");
            }
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn zoh_segments_and_clamping() {
        let sig = ControlSignal::zoh(vec![dvector![1.0], dvector![2.0], dvector![3.0]], 0.5).unwrap();
        assert_eq!(sig.eval(0.0)[0], 1.0);
        assert_eq!(sig.eval(0.49)[0], 1.0);
        assert_eq!(sig.eval(0.5)[0], 2.0);
        assert_eq!(sig.eval(1.2)[0], 3.0);
        assert_eq!(sig.eval(99.0)[0], 3.0);
        assert_eq!(sig.eval(-0.1)[0], 1.0);
    }

    #[test]
    fn random_zoh_respects_bounds_and_seed() {
        let bounds = BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap();
        let a = ControlSignal::random_zoh(&bounds, 3.0, 0.1, 42).unwrap();
        let b = ControlSignal::random_zoh(&bounds, 3.0, 0.1, 42).unwrap();
        let c = ControlSignal::random_zoh(&bounds, 3.0, 0.1, 43).unwrap();
        let mut saw_difference = false;
        for k in 0..=30 {
            let t = 0.1 * k as f64 + 0.05;
            let va = a.eval(t)[0];
            assert!((-1.0..=1.0).contains(&va));
            assert_eq!(va, b.eval(t)[0]);
            if (va - c.eval(t)[0]).abs() > 1e-12 {
                saw_difference = true;
            }
        }
        assert!(saw_difference, "different seeds gave identical signals");
    }

    #[test]
    fn domain_check_reports_first_violation() {
        let sys = ControlAffineSystem::autonomous_1d(1.0);
        let traj = integrate(&sys, &dvector![1.0], &ControlSignal::none(), 1.0, 1e-2).unwrap();
        // h(x) = x - 1.5 is first violated when e^t > 1.5, near t = ln 1.5
        let cs = ConstraintSet::new(vec![Constraint::affine("x <= 1.5", dvector![1.0], -1.5)]).unwrap();
        let domain = StateDomain::with_constraints(
            BoxDomain::from_slices(&[-10.0], &[10.0]).unwrap(),
            cs,
        );
        match check_domain(&traj, &domain) {
            DomainReport::Violation { time, kind, value } => {
                assert_eq!(kind, ViolationKind::Constraint(0));
                assert!((time - 1.5f64.ln()).abs() < 2e-2, "time {time}");
                assert!(value > 0.0);
            }
            DomainReport::Contained => panic!("expected violation"),
        }
        // fully inside box, no constraints: contained
        let wide = StateDomain::new(BoxDomain::from_slices(&[-10.0], &[10.0]).unwrap());
        assert!(check_domain(&traj, &wide).is_contained());
        // tight box: box-axis violation
        let tight = StateDomain::new(BoxDomain::from_slices(&[-1.2], &[1.2]).unwrap());
        match check_domain(&traj, &tight) {
            DomainReport::Violation { kind, .. } => assert_eq!(kind, ViolationKind::BoxAxis(0)),
            DomainReport::Contained => panic!("expected box violation"),
        }
    }

    #[test]
    fn membership_needs_box_and_constraints() {
        let cs = ConstraintSet::new(vec![Constraint::affine("x <= 0.5", dvector![1.0], -0.5)]).unwrap();
        let domain = StateDomain::with_constraints(
            BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap(),
            cs,
        );
        assert!(domain.membership(&dvector![0.4]));
        assert!(!domain.membership(&dvector![0.6])); // constraint fails
        assert!(!domain.membership(&dvector![2.0])); // box fails
    }
}
