//! Tightened-constraint certificates on the surrogate prediction, plus
//! ground-truth validation and Monte-Carlo soundness checks.
//!
//! A constraint `h(x) <= 0` is certified when the surrogate prediction
//! satisfies the tightened inequality `h_tilde(t) <= -epsilon` at every
//! point of the check grid. Soundness is validated empirically: a
//! certificate together with uniform epsilon-closeness of the prediction
//! implies true feasibility by arithmetic, and the Monte-Carlo driver
//! re-checks that implication on every trial.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::ConstraintSet;
use crate::dictionary::{Dictionary, ObservableCoeffs, Projection};
use crate::domain::BoxDomain;
use crate::dynamics::{integrate, ControlAffineSystem, ControlSignal, StateDomain};
use crate::edmd::build_matrices;
use crate::edmd::SampleSet;
use crate::error::{Error, Result};
use crate::quad::Quadrature;
use crate::seeding;
use crate::surrogate::{assemble_surrogate, BilinearSurrogate};

/// Tightening margin, probability level, and check grid for certification.
#[derive(Debug, Clone, Serialize)]
pub struct CertificationConfig {
    epsilon: f64,
    delta: f64,
    dt_check: f64,
    horizon: f64,
}

impl CertificationConfig {
    pub fn new(epsilon: f64, delta: f64, dt_check: f64, horizon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Usage(format!(
                "tightening margin must be strictly positive, got {epsilon}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Usage(format!(
                "probability level must lie in (0, 1), got {delta}"
            )));
        }
        if !(dt_check > 0.0) || !dt_check.is_finite() {
            return Err(Error::Usage(format!(
                "check step must be positive, got {dt_check}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Usage(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            epsilon,
            delta,
            dt_check,
            horizon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dt_check(&self) -> f64 {
        self.dt_check
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Same configuration with a different tightening margin.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.delta, self.dt_check, self.horizon)
    }

    /// Same configuration with a different check step.
    pub fn with_dt_check(&self, dt_check: f64) -> Result<Self> {
        Self::new(self.epsilon, self.delta, dt_check, self.horizon)
    }
}

/// How a constraint function was mapped into the dictionary span.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Representation {
    /// The constraint is itself a dictionary observable (composite
    /// dictionaries include constraints by label).
    Exact { index: usize },
    /// Least-squares projection onto the span, with its L2 residual.
    Projected { l2_residual: f64 },
}

/// A constraint together with its coefficient vector in the dictionary.
#[derive(Debug, Clone)]
pub struct RepresentedConstraint {
    label: String,
    coeffs: ObservableCoeffs,
    representation: Representation,
}

impl RepresentedConstraint {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coeffs(&self) -> &ObservableCoeffs {
        &self.coeffs
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.representation, Representation::Exact { .. })
    }

    pub fn residual(&self) -> f64 {
        match self.representation {
            Representation::Exact { .. } => 0.0,
            Representation::Projected { l2_residual } => l2_residual,
        }
    }
}

/// Map every constraint into the dictionary span: exactly when its label
/// names a dictionary observable, by L2 projection over the box otherwise.
pub fn represent_constraints(
    constraints: &ConstraintSet,
    dict: &Dictionary,
    bounds: &BoxDomain,
    quad_order: usize,
) -> Result<Vec<RepresentedConstraint>> {
    let mut quad: Option<Quadrature> = None;
    let mut out = Vec::with_capacity(constraints.len());
    for c in constraints.iter() {
        if let Some(index) = dict.index_of(c.label()) {
            out.push(RepresentedConstraint {
                label: c.label().to_string(),
                coeffs: ObservableCoeffs::unit(dict.clone(), index)?,
                representation: Representation::Exact { index },
            });
            continue;
        }
        if quad.is_none() {
            quad = Some(Quadrature::composite(
                bounds,
                &dict.quadrature_cells(),
                quad_order,
            )?);
        }
        let value = c.value_fn();
        let proj: Projection =
            crate::dictionary::project(dict, |x| value(x), quad.as_ref().unwrap())?;
        out.push(RepresentedConstraint {
            label: c.label().to_string(),
            coeffs: proj.coeffs,
            representation: Representation::Projected {
                l2_residual: proj.l2_residual,
            },
        });
    }
    Ok(out)
}

/// Per-constraint certification outcome.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Rejected {
        first_failure: f64,
        margin: f64,
        divergence: bool,
    },
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verdict::Certified)
    }
}

/// One constraint's row in the certificate.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintVerdict {
    pub label: String,
    pub verdict: Verdict,
    /// min over the grid of (-epsilon - h_tilde); positive means certified
    /// with room to spare.
    pub worst_margin: f64,
    pub exact_representation: bool,
    pub representation_residual: f64,
}

/// Check-grid metadata recorded in the certificate.
#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub horizon: f64,
    pub dt_check: f64,
    pub points: usize,
}

/// The certificate: per-constraint verdicts plus scenario metadata.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub certified: bool,
    pub constraints: Vec<ConstraintVerdict>,
    pub worst_margin: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub grid: GridInfo,
    pub diverged: Option<f64>,
    pub dictionary_kind: String,
    pub dictionary_size: usize,
    pub provenance: Vec<String>,
}

impl Certificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialization cannot fail")
    }
}

/// Check the tightened constraints `h_tilde_j(t_k) <= -epsilon` along the
/// surrogate prediction. Surrogate divergence before the horizon rejects
/// every constraint that had not already failed.
pub fn certify(
    surrogate: &BilinearSurrogate,
    represented: &[RepresentedConstraint],
    x0: &DVector<f64>,
    u: &ControlSignal,
    cfg: &CertificationConfig,
) -> Result<Certificate> {
    if represented.is_empty() {
        return Err(Error::Usage("certification needs at least one constraint".into()));
    }
    for rc in represented {
        if !rc.coeffs.dictionary().same_structure(surrogate.dictionary()) {
            return Err(Error::Usage(format!(
                "constraint '{}' is represented over a different dictionary",
                rc.label
            )));
        }
    }
    let z0 = surrogate.dictionary().eval(x0)?;
    let traj = surrogate.propagate(&z0, u, cfg.horizon, cfg.dt_check)?;
    let eps = cfg.epsilon;
    let mut rows = Vec::with_capacity(represented.len());
    let mut overall_worst = f64::INFINITY;
    for rc in represented {
        let c = rc.coeffs.coeffs();
        let mut worst = f64::INFINITY;
        let mut failure: Option<(f64, f64)> = None;
        for (k, z) in traj.states().iter().enumerate() {
            let h = c.dot(z);
            let margin = -eps - h;
            if margin < worst {
                worst = margin;
            }
            if failure.is_none() && h > -eps {
                failure = Some((traj.times()[k], margin));
            }
        }
        let verdict = match (failure, traj.diverged()) {
            (Some((t, margin)), _) => Verdict::Rejected {
                first_failure: t,
                margin,
                divergence: false,
            },
            (None, Some(td)) => Verdict::Rejected {
                first_failure: td,
                margin: worst,
                divergence: true,
            },
            (None, None) => Verdict::Certified,
        };
        overall_worst = overall_worst.min(worst);
        rows.push(ConstraintVerdict {
            label: rc.label.clone(),
            verdict,
            worst_margin: worst,
            exact_representation: rc.is_exact(),
            representation_residual: rc.residual(),
        });
    }
    let certified = traj.diverged().is_none() && rows.iter().all(|r| r.verdict.is_certified());
    Ok(Certificate {
        certified,
        constraints: rows,
        worst_margin: overall_worst,
        epsilon: eps,
        delta: cfg.delta,
        grid: GridInfo {
            horizon: cfg.horizon,
            dt_check: cfg.dt_check,
            points: traj.len(),
        },
        diverged: traj.diverged(),
        dictionary_kind: surrogate.dictionary().kind().as_str().to_string(),
        dictionary_size: surrogate.dictionary().len(),
        provenance: surrogate.provenance().iter().map(|p| p.to_string()).collect(),
    })
}

/// First true-constraint violation along the ground-truth trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrueViolation {
    pub time: f64,
    pub label: String,
    pub value: f64,
}

/// Ground-truth feasibility verdict on the check grid.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruthCheck {
    /// True when the trajectory was integrated over the full horizon and
    /// no constraint exceeded zero at any grid point.
    pub satisfied: bool,
    pub violation: Option<TrueViolation>,
    /// Set when the true integrator diverged before the horizon; the
    /// constraints could not be verified past that time.
    pub diverged: Option<f64>,
}

/// Integrate the true system and evaluate every constraint on the grid.
pub fn validate_certificate(
    system: &ControlAffineSystem,
    x0: &DVector<f64>,
    u: &ControlSignal,
    constraints: &ConstraintSet,
    horizon: f64,
    dt: f64,
) -> Result<GroundTruthCheck> {
    let traj = match integrate(system, x0, u, horizon, dt) {
        Ok(t) => t,
        Err(Error::Divergence { time, .. }) => {
            return Ok(GroundTruthCheck {
                satisfied: false,
                violation: None,
                diverged: Some(time),
            })
        }
        Err(e) => return Err(e),
    };
    for (k, x) in traj.states().iter().enumerate() {
        for c in constraints.iter() {
            let v = c.eval(x);
            if v > 0.0 {
                return Ok(GroundTruthCheck {
                    satisfied: false,
                    violation: Some(TrueViolation {
                        time: traj.times()[k],
                        label: c.label().to_string(),
                        value: v,
                    }),
                    diverged: None,
                });
            }
        }
    }
    Ok(GroundTruthCheck {
        satisfied: true,
        violation: None,
        diverged: None,
    })
}

/// Fixed scenario for the Monte-Carlo soundness experiment: everything is
/// pinned except the data draws, which take a fresh sub-seed per trial.
#[derive(Clone)]
pub struct SoundnessScenario {
    pub system: ControlAffineSystem,
    pub dict: Dictionary,
    pub sampling: StateDomain,
    pub x0: DVector<f64>,
    pub control: ControlSignal,
    pub constraints: ConstraintSet,
    pub m: usize,
    pub master_seed: u64,
}

/// One trial's bookkeeping in the soundness experiment.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub certified: bool,
    pub uniformly_close: bool,
    pub unsound: bool,
    pub implication_holds: bool,
    pub diverged: bool,
}

/// Aggregate outcome of the soundness experiment.
#[derive(Debug, Clone, Serialize)]
pub struct SoundnessReport {
    pub trials: usize,
    pub true_feasible: bool,
    pub certified: usize,
    pub unsound: usize,
    pub uniformly_close: usize,
    pub implication_failures: usize,
    pub unsoundness_rate: f64,
    pub closeness_fraction: f64,
    pub per_trial: Vec<TrialRecord>,
}

/// Run the Monte-Carlo soundness experiment: per trial, re-fit the
/// surrogate from a fresh data draw, certify, and compare against the
/// (fixed) ground truth. Each trial also re-checks the arithmetic
/// implication: tightened pass plus uniform epsilon-closeness forces true
/// feasibility on the grid.
pub fn soundness_trial(
    scenario: &SoundnessScenario,
    trials: usize,
    cfg: &CertificationConfig,
) -> Result<SoundnessReport> {
    if trials == 0 {
        return Err(Error::Usage("soundness experiment needs at least one trial".into()));
    }
    let represented = represent_constraints(
        &scenario.constraints,
        &scenario.dict,
        scenario.sampling.bounds(),
        20,
    )?;
    // ground truth is shared by every trial
    let truth = integrate(
        &scenario.system,
        &scenario.x0,
        &scenario.control,
        cfg.horizon,
        cfg.dt_check,
    )?;
    let true_values: Vec<Vec<f64>> = truth
        .states()
        .iter()
        .map(|x| scenario.constraints.iter().map(|c| c.eval(x)).collect())
        .collect();
    let true_feasible = true_values.iter().flatten().all(|&v| v <= 0.0);

    let nc = scenario.system.control_dim();
    let per_trial: Vec<TrialRecord> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialRecord> {
            let seed = seeding::subseed(scenario.master_seed, trial as u64);
            let samples = SampleSet::sample_iid(&scenario.sampling, scenario.m, seed)?;
            let mut fits = Vec::with_capacity(nc + 1);
            fits.push(build_matrices(
                &scenario.dict,
                &scenario.system,
                &DVector::zeros(nc),
                &samples,
            )?);
            for i in 0..nc {
                let mut e = DVector::zeros(nc);
                e[i] = 1.0;
                fits.push(build_matrices(&scenario.dict, &scenario.system, &e, &samples)?);
            }
            let surrogate = assemble_surrogate(&fits)?;
            let cert = certify(&surrogate, &represented, &scenario.x0, &scenario.control, cfg)?;

            // uniform closeness needs the predicted values themselves
            let z0 = surrogate.dictionary().eval(&scenario.x0)?;
            let pred = surrogate.propagate(&z0, &scenario.control, cfg.horizon, cfg.dt_check)?;
            let full_grid = pred.diverged().is_none() && pred.len() == truth.times().len();
            let mut close = full_grid;
            if full_grid {
                'outer: for (k, z) in pred.states().iter().enumerate() {
                    for (j, rc) in represented.iter().enumerate() {
                        let h_tilde = rc.coeffs().coeffs().dot(z);
                        if (true_values[k][j] - h_tilde).abs() > cfg.epsilon {
                            close = false;
                            break 'outer;
                        }
                    }
                }
            }
            let unsound = cert.certified && !true_feasible;
            // arithmetic implication: certified and uniformly close forces
            // feasibility of the truth on the grid
            let implication_holds = !(cert.certified && close) || true_feasible;
            Ok(TrialRecord {
                trial,
                seed,
                certified: cert.certified,
                uniformly_close: close,
                unsound,
                implication_holds,
                diverged: cert.diverged.is_some(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let certified = per_trial.iter().filter(|t| t.certified).count();
    let unsound = per_trial.iter().filter(|t| t.unsound).count();
    let uniformly_close = per_trial.iter().filter(|t| t.uniformly_close).count();
    let implication_failures = per_trial.iter().filter(|t| !t.implication_holds).count();
    Ok(SoundnessReport {
        trials,
        true_feasible,
        certified,
        unsound,
        uniformly_close,
        implication_failures,
        unsoundness_rate: unsound as f64 / trials as f64,
        closeness_fraction: uniformly_close as f64 / trials as f64,
        per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Constraint;
    use crate::dictionary::{composite_dictionary, monomial_dictionary};
    use crate::edmd::{galerkin_reference, Provenance};
    use nalgebra::dvector;

    fn reference_surrogate(dict: &Dictionary, bounds: &BoxDomain) -> BilinearSurrogate {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let l0 = galerkin_reference(dict, &sys, &dvector![0.0], bounds, 30).unwrap();
        let l1 = galerkin_reference(dict, &sys, &dvector![1.0], bounds, 30).unwrap();
        BilinearSurrogate::from_matrices(
            dict.clone(),
            l0.matrix().clone(),
            vec![l1.matrix().clone()],
            vec![
                Provenance::Reference { order: 30 },
                Provenance::Reference { order: 30 },
            ],
        )
        .unwrap()
    }

    fn x1_minus(label: &str, c: f64) -> Constraint {
        Constraint::affine(label, dvector![1.0, 0.0], -c)
    }

    #[test]
    fn config_rejects_bad_parameters() {
        assert!(CertificationConfig::new(0.0, 0.1, 0.01, 1.0).is_err());
        assert!(CertificationConfig::new(-0.1, 0.1, 0.01, 1.0).is_err());
        assert!(CertificationConfig::new(0.1, 0.0, 0.01, 1.0).is_err());
        assert!(CertificationConfig::new(0.1, 1.0, 0.01, 1.0).is_err());
        assert!(CertificationConfig::new(0.1, 0.1, 0.0, 1.0).is_err());
        assert!(CertificationConfig::new(0.1, 0.1, 0.01, 0.0).is_err());
        assert!(CertificationConfig::new(0.1, 0.1, 0.01, 1.0).is_ok());
    }

    #[test]
    fn representation_is_exact_for_composite_members() {
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let cs = ConstraintSet::new(vec![x1_minus("wall", 1.5)]).unwrap();
        let base = monomial_dictionary(2, 3).unwrap();
        let dict = composite_dictionary(cs.iter().cloned().collect::<Vec<_>>().as_slice(), &base)
            .unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 10).unwrap();
        assert_eq!(reps.len(), 1);
        assert!(reps[0].is_exact());
        assert_eq!(reps[0].residual(), 0.0);
        let idx = dict.index_of("wall").unwrap();
        assert_eq!(reps[0].coeffs().coeffs()[idx], 1.0);
        assert_eq!(reps[0].coeffs().coeffs().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn representation_projects_affine_onto_monomials() {
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let cs = ConstraintSet::new(vec![x1_minus("wall", 1.5)]).unwrap();
        let dict = monomial_dictionary(2, 3).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 10).unwrap();
        assert!(!reps[0].is_exact());
        assert!(reps[0].residual() < 1e-6, "residual {}", reps[0].residual());
        let c = reps[0].coeffs().coeffs();
        assert!((c[dict.index_of("1").unwrap()] + 1.5).abs() < 1e-9);
        assert!((c[dict.index_of("x1").unwrap()] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn far_constraint_is_certified() {
        // truth grows like e^t from (1,1); over one time unit x1 stays
        // below 3, far from the wall at 10
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let dict = monomial_dictionary(2, 5).unwrap();
        let s = reference_surrogate(&dict, &bounds);
        let cs = ConstraintSet::new(vec![x1_minus("wall", 10.0)]).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 20).unwrap();
        let cfg = CertificationConfig::new(0.1, 0.05, 0.01, 1.0).unwrap();
        let cert = certify(
            &s,
            &reps,
            &dvector![1.0, 1.0],
            &ControlSignal::constant(dvector![0.0]),
            &cfg,
        )
        .unwrap();
        assert!(cert.certified, "{}", cert.to_json());
        assert!(cert.worst_margin > 0.0);
        assert!(cert.diverged.is_none());
    }

    #[test]
    fn oversized_margin_rejects_at_time_zero() {
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let dict = monomial_dictionary(2, 5).unwrap();
        let s = reference_surrogate(&dict, &bounds);
        // h(x) = -x1 + 10 evaluates to 9 at the initial state; epsilon = 20
        // demands h_tilde <= -20 which already fails at t = 0
        let c = Constraint::affine("ceiling", dvector![-1.0, 0.0], 10.0);
        let cs = ConstraintSet::new(vec![c]).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 20).unwrap();
        let cfg = CertificationConfig::new(20.0, 0.05, 0.01, 1.0).unwrap();
        let cert = certify(
            &s,
            &reps,
            &dvector![1.0, 1.0],
            &ControlSignal::constant(dvector![0.0]),
            &cfg,
        )
        .unwrap();
        assert!(!cert.certified);
        match &cert.constraints[0].verdict {
            Verdict::Rejected {
                first_failure,
                divergence,
                ..
            } => {
                assert_eq!(*first_failure, 0.0);
                assert!(!divergence);
            }
            Verdict::Certified => panic!("expected rejection"),
        }
    }

    #[test]
    fn epsilon_monotonicity_on_same_prediction() {
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let dict = monomial_dictionary(2, 5).unwrap();
        let s = reference_surrogate(&dict, &bounds);
        let cs = ConstraintSet::new(vec![x1_minus("wall", 4.0)]).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 20).unwrap();
        let x0 = dvector![1.0, 1.0];
        let u = ControlSignal::constant(dvector![0.0]);
        let mut last_certified = true;
        // increasing epsilon can only lose the certificate, never regain it
        for eps in [1e-3, 0.05, 0.3, 0.8, 1.1, 1.2, 1.3] {
            let cfg = CertificationConfig::new(eps, 0.05, 0.01, 1.0).unwrap();
            let cert = certify(&s, &reps, &x0, &u, &cfg).unwrap();
            if !last_certified {
                assert!(
                    !cert.certified,
                    "certificate reappeared at larger epsilon {eps}"
                );
            }
            last_certified = cert.certified;
        }
        // sanity: the sweep actually crosses the boundary (x1 reaches
        // about e^1 = 2.72, so the margin to 4.0 is about 1.28)
        let tight = certify(
            &s,
            &reps,
            &x0,
            &u,
            &CertificationConfig::new(1e-3, 0.05, 0.01, 1.0).unwrap(),
        )
        .unwrap();
        let loose = certify(
            &s,
            &reps,
            &x0,
            &u,
            &CertificationConfig::new(1.3, 0.05, 0.01, 1.0).unwrap(),
        )
        .unwrap();
        assert!(tight.certified);
        assert!(!loose.certified);
    }

    #[test]
    fn grid_refinement_never_recovers_a_rejection() {
        let bounds = BoxDomain::centered(2, 2.0).unwrap();
        let dict = monomial_dictionary(2, 5).unwrap();
        let s = reference_surrogate(&dict, &bounds);
        let cs = ConstraintSet::new(vec![x1_minus("wall", 2.5)]).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 20).unwrap();
        let x0 = dvector![1.0, 1.0];
        let u = ControlSignal::constant(dvector![0.0]);
        for eps in [0.01, 0.2, 0.5] {
            let mut dt = 0.08;
            let mut prev_rejected = false;
            for _ in 0..4 {
                let cfg = CertificationConfig::new(eps, 0.05, dt, 1.0).unwrap();
                let cert = certify(&s, &reps, &x0, &u, &cfg).unwrap();
                if prev_rejected {
                    assert!(
                        !cert.certified,
                        "refinement to dt={dt} flipped a rejection at eps={eps}"
                    );
                }
                prev_rejected = !cert.certified;
                dt *= 0.5;
            }
        }
    }

    #[test]
    fn ground_truth_validation_reports_the_failing_constraint() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let x0 = dvector![1.0, 1.0];
        let u = ControlSignal::constant(dvector![0.0]);
        // x1(t) = e^t here, so a wall at 2 is crossed near t = ln 2
        let cs = ConstraintSet::new(vec![
            x1_minus("far-wall", 50.0),
            x1_minus("near-wall", 2.0),
        ])
        .unwrap();
        let check = validate_certificate(&sys, &x0, &u, &cs, 1.0, 0.001).unwrap();
        assert!(!check.satisfied);
        let v = check.violation.unwrap();
        assert_eq!(v.label, "near-wall");
        assert!(v.value > 0.0);
        assert!((v.time - 2.0f64.ln()).abs() < 0.01, "time {}", v.time);

        let feasible = ConstraintSet::new(vec![x1_minus("wall", 50.0)]).unwrap();
        let ok = validate_certificate(&sys, &x0, &u, &feasible, 1.0, 0.001).unwrap();
        assert!(ok.satisfied);
        assert!(ok.violation.is_none());
    }

    #[test]
    fn soundness_experiment_is_sound_on_bounded_duffing() {
        // constant control 0.5 puts the system on a bounded orbit with
        // |x1| <= 1.56; the wall at 2.0 is reachable by the surrogate only
        // through estimation error
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let dict = monomial_dictionary(2, 5).unwrap();
        let scenario = SoundnessScenario {
            system: sys,
            dict,
            sampling: StateDomain::new(BoxDomain::centered(2, 2.0).unwrap()),
            x0: dvector![1.0, 1.0],
            control: ControlSignal::constant(dvector![0.5]),
            constraints: ConstraintSet::new(vec![x1_minus("wall", 2.0)]).unwrap(),
            m: 100,
            master_seed: 2024,
        };
        let cfg = CertificationConfig::new(0.05, 0.05, 0.01, 2.0).unwrap();
        let report = soundness_trial(&scenario, 10, &cfg).unwrap();
        assert!(report.true_feasible);
        assert_eq!(report.unsound, 0);
        assert_eq!(report.implication_failures, 0);
        assert_eq!(report.per_trial.len(), 10);
        assert!(report.certified > 0, "no trial certified: {report:?}");
        // determinism
        let again = soundness_trial(&scenario, 10, &cfg).unwrap();
        assert_eq!(report.certified, again.certified);
        assert_eq!(report.uniformly_close, again.uniformly_close);
    }

    #[test]
    fn huge_epsilon_gives_full_closeness_and_no_certificates() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let dict = monomial_dictionary(2, 5).unwrap();
        let scenario = SoundnessScenario {
            system: sys,
            dict,
            sampling: StateDomain::new(BoxDomain::centered(2, 2.0).unwrap()),
            x0: dvector![1.0, 1.0],
            control: ControlSignal::constant(dvector![0.5]),
            constraints: ConstraintSet::new(vec![x1_minus("wall", 2.0)]).unwrap(),
            m: 50,
            master_seed: 7,
        };
        let cfg = CertificationConfig::new(1e3, 0.05, 0.01, 2.0).unwrap();
        let report = soundness_trial(&scenario, 3, &cfg).unwrap();
        // the bound dominates every deviation, and h <= -1000 is
        // unattainable for a wall sitting 4 units away at most
        assert_eq!(report.uniformly_close, 3);
        assert_eq!(report.certified, 0);
        assert_eq!(report.unsound, 0);
        assert_eq!(report.implication_failures, 0);
    }

    #[test]
    fn single_trial_rate_is_zero_or_one() {
        let sys = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
        let dict = monomial_dictionary(2, 3).unwrap();
        let scenario = SoundnessScenario {
            system: sys,
            dict,
            sampling: StateDomain::new(BoxDomain::centered(2, 2.0).unwrap()),
            x0: dvector![1.0, 1.0],
            control: ControlSignal::constant(dvector![0.5]),
            constraints: ConstraintSet::new(vec![x1_minus("wall", 2.0)]).unwrap(),
            m: 30,
            master_seed: 11,
        };
        let cfg = CertificationConfig::new(0.05, 0.05, 0.01, 1.0).unwrap();
        assert!(soundness_trial(&scenario, 0, &cfg).is_err());
        let report = soundness_trial(&scenario, 1, &cfg).unwrap();
        assert!(report.unsoundness_rate == 0.0 || report.unsoundness_rate == 1.0);
    }

    #[test]
    fn divergent_surrogate_is_rejected_with_reason() {
        // a surrogate with a strongly unstable mode blows past the lifted
        // bound well before the horizon
        let dict = monomial_dictionary(1, 1).unwrap();
        let l0 = nalgebra::dmatrix![0.0, 0.0; 0.0, 40.0];
        let s = BilinearSurrogate::from_matrices(
            dict.clone(),
            l0,
            vec![],
            vec![Provenance::Reference { order: 1 }],
        )
        .unwrap();
        let c = Constraint::affine("wall", dvector![1.0], -1e12);
        let cs = ConstraintSet::new(vec![c]).unwrap();
        let bounds = BoxDomain::from_slices(&[-2.0], &[2.0]).unwrap();
        let reps = represent_constraints(&cs, &dict, &bounds, 10).unwrap();
        let cfg = CertificationConfig::new(0.05, 0.05, 0.01, 2.0).unwrap();
        let cert = certify(&s, &reps, &dvector![1.0], &ControlSignal::none(), &cfg).unwrap();
        assert!(!cert.certified);
        let td = cert.diverged.expect("expected divergence");
        assert!(td < 2.0);
        match &cert.constraints[0].verdict {
            Verdict::Rejected { divergence, .. } => assert!(divergence),
            Verdict::Certified => panic!("expected rejection"),
        }
    }
}
