//! Reproducible Monte-Carlo studies: generator error decay, lifted
//! trajectory error probabilities, FEM mesh sweeps, and the Duffing
//! benchmark comparing the bilinear surrogate against the eDMDc baseline.
//!
//! Every driver is deterministic given its spec and master seed: trial
//! sub-seeds come from a splitmix fan-out of the master seed indexed by the
//! flat cell number, and parallel cells are collected back in index order
//! before aggregation.

use std::collections::HashMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::constraints::Constraint;
use crate::dictionary::{
    composite_dictionary, fem_dictionary, monomial_dictionary, Dictionary, FemMesh,
    ObservableCoeffs,
};
use crate::domain::BoxDomain;
use crate::dynamics::{integrate, ControlAffineSystem, ControlSignal, StateDomain};
use crate::edmd::{
    build_matrices, galerkin_reference, generator_error, EdmdFit, GeneratorMatrix, SampleSet,
};
use crate::error::{Error, Result};
use crate::seeding;
use crate::stats::{loglog_slope, median, wilson_lower};
use crate::surrogate::{fit_edmdc, BilinearSurrogate, ObservableSeries};

/// Normal quantile used for every reported Wilson interval.
pub const WILSON_Z: f64 = 1.96;

/// Relative-error thresholds reported by the Duffing benchmark.
pub const REL_THRESHOLDS: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// Fixed part of a sweep: system, dictionary, sampling region, initial
/// state, and the prediction grid.
#[derive(Clone)]
pub struct SweepScenario {
    pub system: ControlAffineSystem,
    pub dict: Dictionary,
    pub sampling: StateDomain,
    pub x0: DVector<f64>,
    pub horizon: f64,
    pub dt: f64,
}

/// Sweep sizes: sample counts, trials per count, thresholds, master seed.
#[derive(Clone)]
pub struct SweepSpec {
    pub scenario: SweepScenario,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub epsilons: Vec<f64>,
    pub master_seed: u64,
    /// Per-axis Gauss order of the quadrature reference (state dim <= 2).
    pub reference_order: usize,
    /// Sample count of the fallback sampled reference (state dim > 2).
    pub oracle_samples: usize,
}

impl SweepSpec {
    pub fn new(
        scenario: SweepScenario,
        m_values: Vec<usize>,
        trials: usize,
        epsilons: Vec<f64>,
        master_seed: u64,
    ) -> Self {
        Self {
            scenario,
            m_values,
            trials,
            epsilons,
            master_seed,
            reference_order: 20,
            oracle_samples: 1_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(Error::Usage("sweep needs at least one sample count".into()));
        }
        if self.m_values[0] == 0 {
            return Err(Error::Usage("sample counts must be at least 1".into()));
        }
        if !self.m_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Usage(
                "sample counts must be strictly increasing".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::Usage("sweep needs at least one trial per cell".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Usage("thresholds must be positive and finite".into()));
        }
        if !self.epsilons.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Usage("thresholds must be strictly increasing".into()));
        }
        if self.reference_order == 0 {
            return Err(Error::Usage("reference quadrature order must be positive".into()));
        }
        if self.scenario.x0.len() != self.scenario.system.state_dim() {
            return Err(Error::Dimension {
                context: "sweep initial state",
                expected: self.scenario.system.state_dim(),
                found: self.scenario.x0.len(),
            });
        }
        Ok(())
    }
}

/// The control values a bilinear surrogate is fit at: zero, then each unit
/// vector.
pub fn control_vertices(control_dim: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(control_dim + 1);
    out.push(DVector::zeros(control_dim));
    for i in 0..control_dim {
        let mut e = DVector::zeros(control_dim);
        e[i] = 1.0;
        out.push(e);
    }
    out
}

fn vertex_label(index: usize) -> String {
    if index == 0 {
        "drift".to_string()
    } else {
        format!("e{index}")
    }
}

/// Reference generator per control vertex: quadrature Galerkin matrices for
/// state dimension <= 2, a large sampled fit (flagged by its provenance)
/// otherwise.
pub fn reference_generators(spec: &SweepSpec) -> Result<Vec<GeneratorMatrix>> {
    let sc = &spec.scenario;
    let vertices = control_vertices(sc.system.control_dim());
    let mut refs = Vec::with_capacity(vertices.len());
    for (i, u) in vertices.iter().enumerate() {
        if sc.system.state_dim() <= 2 {
            refs.push(galerkin_reference(
                &sc.dict,
                &sc.system,
                u,
                sc.sampling.bounds(),
                spec.reference_order,
            )?);
        } else {
            // sampled oracle; seeds stay clear of the trial fan-out by
            // using the top of the index space
            let seed = seeding::subseed(spec.master_seed, u64::MAX - i as u64);
            let samples = SampleSet::sample_iid(&sc.sampling, spec.oracle_samples, seed)?;
            refs.push(build_matrices(&sc.dict, &sc.system, u, &samples)?.generator_matrix());
        }
    }
    Ok(refs)
}

fn vertex_fits(
    dict: &Dictionary,
    system: &ControlAffineSystem,
    samples: &SampleSet,
) -> Result<Vec<EdmdFit>> {
    control_vertices(system.control_dim())
        .iter()
        .map(|u| build_matrices(dict, system, u, samples))
        .collect()
}

fn surrogate_from_fits(fits: &[EdmdFit]) -> Result<BilinearSurrogate> {
    crate::surrogate::assemble_surrogate(fits)
}

/// Reference surrogate assembled from the per-vertex reference matrices.
pub fn reference_surrogate(
    dict: &Dictionary,
    refs: &[GeneratorMatrix],
) -> Result<BilinearSurrogate> {
    if refs.is_empty() {
        return Err(Error::Usage("need at least the drift reference matrix".into()));
    }
    BilinearSurrogate::from_matrices(
        dict.clone(),
        refs[0].matrix().clone(),
        refs[1..].iter().map(|r| r.matrix().clone()).collect(),
        refs.iter().map(|r| r.provenance().clone()).collect(),
    )
}

fn sanitize(msg: &str) -> String {
    msg.replace(',', ";").replace('\n', " ")
}

/// Median that treats non-finite entries as larger than every finite value
/// (a diverged trial should push the aggregate up, not poison it).
fn median_allow_inf(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values
        .iter()
        .map(|&x| if x.is_nan() { f64::INFINITY } else { x })
        .collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// generator sweep

/// One (m, trial) cell of the generator sweep.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorSweepRow {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    /// Frobenius error against the reference, one entry per control vertex.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub status: Option<String>,
}

/// Median errors at one sample count.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorMedianRow {
    pub m: usize,
    pub per_control: Vec<f64>,
    pub max: f64,
}

/// Empirical probability cell with its Wilson lower bound.
#[derive(Debug, Clone, Serialize)]
pub struct ProbabilityCell {
    pub m: usize,
    pub epsilon: f64,
    pub successes: usize,
    pub trials: usize,
    pub p_hat: f64,
    pub wilson_lower: f64,
}

/// Everything the generator sweep produces.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorSweepResult {
    pub control_labels: Vec<String>,
    pub rows: Vec<GeneratorSweepRow>,
    pub medians: Vec<GeneratorMedianRow>,
    /// probability of `max_error <= epsilon` per (m, epsilon)
    pub probabilities: Vec<ProbabilityCell>,
    /// log-log slope of the median error vs m, one per control vertex
    /// (NaN when the medians are not all positive finite)
    pub slopes: Vec<f64>,
    pub slope_max: f64,
    pub failed_cells: usize,
}

impl GeneratorSweepResult {
    /// Tidy CSV, one row per (m, trial) cell.
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("m,trial,seed");
        for l in &self.control_labels {
            s.push_str(&format!(",err_{l}"));
        }
        s.push_str(",err_max,status\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}", r.m, r.trial, r.seed));
            if r.status.is_none() {
                for e in &r.errors {
                    s.push_str(&format!(",{e}"));
                }
                s.push_str(&format!(",{},ok\n", r.max_error));
            } else {
                for _ in &self.control_labels {
                    s.push(',');
                }
                s.push_str(&format!(",,{}\n", r.status.as_deref().unwrap()));
            }
        }
        s
    }

    /// Tidy CSV, one row per (m, epsilon) probability cell.
    pub fn probabilities_csv(&self) -> String {
        let mut s = String::from("m,epsilon,successes,trials,p_hat,wilson_lower\n");
        for c in &self.probabilities {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.m, c.epsilon, c.successes, c.trials, c.p_hat, c.wilson_lower
            ));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            control_labels: &'a [String],
            medians: &'a [GeneratorMedianRow],
            probabilities: &'a [ProbabilityCell],
            slopes: &'a [f64],
            slope_max: f64,
            failed_cells: usize,
        }
        serde_json::to_string_pretty(&Summary {
            control_labels: &self.control_labels,
            medians: &self.medians,
            probabilities: &self.probabilities,
            slopes: &self.slopes,
            slope_max: self.slope_max,
            failed_cells: self.failed_cells,
        })
        .expect("summary serialization cannot fail")
    }
}

/// Parse rows back out of the CSV written by
/// [`GeneratorSweepResult::rows_csv`]. Useful for resuming a partially
/// completed sweep; values round-trip exactly because the emitter prints
/// shortest-representation floats.
pub fn parse_generator_rows_csv(text: &str) -> Result<Vec<GeneratorSweepRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty sweep CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5
        || cols[..3] != ["m", "trial", "seed"]
        || cols[cols.len() - 2..] != ["err_max", "status"]
        || cols[3..cols.len() - 2].iter().any(|c| !c.starts_with("err_"))
    {
        return Err(Error::Parse(format!("unrecognized sweep CSV header '{header}'")));
    }
    let k = cols.len() - 5;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "sweep CSV line {}: {} of {} fields",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let bad = |what: &str| Error::Parse(format!("sweep CSV line {}: bad {what}", lineno + 2));
        let m = fields[0].parse().map_err(|_| bad("m"))?;
        let trial = fields[1].parse().map_err(|_| bad("trial"))?;
        let seed = fields[2].parse().map_err(|_| bad("seed"))?;
        let status = *fields.last().unwrap();
        if status == "ok" {
            let mut errors = Vec::with_capacity(k);
            for f in &fields[3..3 + k] {
                errors.push(f.parse().map_err(|_| bad("error value"))?);
            }
            let max_error = fields[3 + k].parse().map_err(|_| bad("err_max"))?;
            rows.push(GeneratorSweepRow {
                m,
                trial,
                seed,
                errors,
                max_error,
                status: None,
            });
        } else {
            rows.push(GeneratorSweepRow {
                m,
                trial,
                seed,
                errors: Vec::new(),
                max_error: f64::NAN,
                status: Some(status.to_string()),
            });
        }
    }
    Ok(rows)
}

/// Fit generators at every control vertex for each (m, trial) cell and
/// compare against the reference in Frobenius norm. Failed cells are
/// recorded, not fatal.
pub fn run_generator_sweep(spec: &SweepSpec) -> Result<GeneratorSweepResult> {
    run_generator_sweep_with_skip(spec, &[])
}

/// Resume variant: cells whose (m, trial) key appears in `kept` are copied
/// verbatim instead of recomputed. Because every cell derives its seed from
/// the master seed and its own index, a merged run is bit-identical to a
/// fresh one.
pub fn run_generator_sweep_with_skip(
    spec: &SweepSpec,
    kept: &[GeneratorSweepRow],
) -> Result<GeneratorSweepResult> {
    spec.validate()?;
    let refs = reference_generators(spec)?;
    let sc = &spec.scenario;
    let n_vertices = refs.len();
    let mut kept_by_cell: HashMap<(usize, usize), &GeneratorSweepRow> = HashMap::new();
    for row in kept {
        let valid_m = spec.m_values.contains(&row.m) && row.trial < spec.trials;
        if !valid_m {
            return Err(Error::Usage(format!(
                "kept row (m={}, trial={}) is outside the sweep grid",
                row.m, row.trial
            )));
        }
        if row.status.is_none() && row.errors.len() != n_vertices {
            return Err(Error::Dimension {
                context: "kept sweep row errors",
                expected: n_vertices,
                found: row.errors.len(),
            });
        }
        if kept_by_cell.insert((row.m, row.trial), row).is_some() {
            return Err(Error::Usage(format!(
                "duplicate kept row for (m={}, trial={})",
                row.m, row.trial
            )));
        }
    }
    let cells = spec.m_values.len() * spec.trials;
    let rows: Vec<GeneratorSweepRow> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let m = spec.m_values[cell / spec.trials];
            let trial = cell % spec.trials;
            if let Some(row) = kept_by_cell.get(&(m, trial)) {
                return (*row).clone();
            }
            let seed = seeding::subseed(spec.master_seed, cell as u64);
            let outcome = (|| -> Result<(Vec<f64>, f64)> {
                let samples = SampleSet::sample_iid(&sc.sampling, m, seed)?;
                let fits = vertex_fits(&sc.dict, &sc.system, &samples)?;
                let mut errors = Vec::with_capacity(n_vertices);
                for (f, r) in fits.iter().zip(&refs) {
                    errors.push(generator_error(r, &f.generator_matrix())?);
                }
                let max = errors.iter().cloned().fold(0.0, f64::max);
                Ok((errors, max))
            })();
            match outcome {
                Ok((errors, max_error)) => GeneratorSweepRow {
                    m,
                    trial,
                    seed,
                    errors,
                    max_error,
                    status: None,
                },
                Err(e) => GeneratorSweepRow {
                    m,
                    trial,
                    seed,
                    errors: Vec::new(),
                    max_error: f64::NAN,
                    status: Some(sanitize(&e.to_string())),
                },
            }
        })
        .collect();

    let mut medians = Vec::with_capacity(spec.m_values.len());
    let mut probabilities = Vec::new();
    for &m in &spec.m_values {
        let ok: Vec<&GeneratorSweepRow> = rows
            .iter()
            .filter(|r| r.m == m && r.status.is_none())
            .collect();
        let mut per_control = Vec::with_capacity(n_vertices);
        for i in 0..n_vertices {
            let errs: Vec<f64> = ok.iter().map(|r| r.errors[i]).collect();
            per_control.push(if errs.is_empty() {
                f64::NAN
            } else {
                median(&errs).unwrap_or(f64::NAN)
            });
        }
        let maxes: Vec<f64> = ok.iter().map(|r| r.max_error).collect();
        let max_med = if maxes.is_empty() {
            f64::NAN
        } else {
            median(&maxes).unwrap_or(f64::NAN)
        };
        medians.push(GeneratorMedianRow {
            m,
            per_control,
            max: max_med,
        });
        for &eps in &spec.epsilons {
            let successes = maxes.iter().filter(|&&e| e <= eps).count();
            probabilities.push(ProbabilityCell {
                m,
                epsilon: eps,
                successes,
                trials: maxes.len(),
                p_hat: if maxes.is_empty() {
                    0.0
                } else {
                    successes as f64 / maxes.len() as f64
                },
                wilson_lower: wilson_lower(successes, maxes.len(), WILSON_Z),
            });
        }
    }

    let ms: Vec<f64> = spec.m_values.iter().map(|&m| m as f64).collect();
    let slope_of = |ys: Vec<f64>| loglog_slope(&ms, &ys).unwrap_or(f64::NAN);
    let slopes: Vec<f64> = (0..n_vertices)
        .map(|i| slope_of(medians.iter().map(|r| r.per_control[i]).collect()))
        .collect();
    let slope_max = slope_of(medians.iter().map(|r| r.max).collect());
    let failed_cells = rows.iter().filter(|r| r.status.is_some()).count();
    Ok(GeneratorSweepResult {
        control_labels: (0..n_vertices).map(vertex_label).collect(),
        rows,
        medians,
        probabilities,
        slopes,
        slope_max,
        failed_cells,
    })
}

// ---------------------------------------------------------------------------
// trajectory sweep

/// One (m, trial) cell of the lifted-trajectory sweep.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySweepRow {
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    /// Worst per-vertex generator error of this trial's fit.
    pub gen_error_max: f64,
    /// sup over the grid of the lifted-state deviation from the reference.
    pub sup_error: f64,
    pub diverged: Option<f64>,
    pub status: Option<String>,
}

/// Median sup-error at one sample count (diverged trials count as +inf).
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryMedianRow {
    pub m: usize,
    pub sup_median: f64,
}

/// Worst-over-time empirical probability cell: the minimum over grid times
/// of the per-time success fraction, with its Wilson bound at that time.
#[derive(Debug, Clone, Serialize)]
pub struct MinProbabilityCell {
    pub m: usize,
    pub epsilon: f64,
    pub min_p_hat: f64,
    pub wilson_lower: f64,
    pub argmin_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySweepResult {
    pub rows: Vec<TrajectorySweepRow>,
    pub medians: Vec<TrajectoryMedianRow>,
    pub min_probabilities: Vec<MinProbabilityCell>,
    pub grid_points: usize,
    pub failed_cells: usize,
}

impl TrajectorySweepResult {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("m,trial,seed,gen_error_max,sup_error,diverged_at,status\n");
        for r in &self.rows {
            let div = r.diverged.map(|t| t.to_string()).unwrap_or_default();
            if r.status.is_none() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},ok\n",
                    r.m, r.trial, r.seed, r.gen_error_max, r.sup_error, div
                ));
            } else {
                s.push_str(&format!(
                    "{},{},{},,,,{}\n",
                    r.m,
                    r.trial,
                    r.seed,
                    r.status.as_deref().unwrap()
                ));
            }
        }
        s
    }

    pub fn probabilities_csv(&self) -> String {
        let mut s = String::from("m,epsilon,min_p_hat,wilson_lower,argmin_time\n");
        for c in &self.min_probabilities {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                c.m, c.epsilon, c.min_p_hat, c.wilson_lower, c.argmin_time
            ));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialization cannot fail")
    }
}

/// Propagate fitted surrogates against the reference-matrix surrogate under
/// a fixed control signal and measure lifted-state deviations.
pub fn run_trajectory_sweep(spec: &SweepSpec, u: &ControlSignal) -> Result<TrajectorySweepResult> {
    spec.validate()?;
    let sc = &spec.scenario;
    let refs = reference_generators(spec)?;
    let ref_surrogate = reference_surrogate(&sc.dict, &refs)?;
    let z0 = sc.dict.eval(&sc.x0)?;
    let zref = ref_surrogate.propagate(&z0, u, sc.horizon, sc.dt)?;
    if let Some(td) = zref.diverged() {
        return Err(Error::Usage(format!(
            "reference trajectory diverges at t={td}; pick a bounded scenario"
        )));
    }
    let grid_points = zref.len();

    struct CellOutcome {
        row: TrajectorySweepRow,
        // per grid index: deviation from the reference, +inf past divergence
        deviations: Vec<f64>,
    }

    let cells = spec.m_values.len() * spec.trials;
    let outcomes: Vec<CellOutcome> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let m = spec.m_values[cell / spec.trials];
            let trial = cell % spec.trials;
            let seed = seeding::subseed(spec.master_seed, cell as u64);
            let outcome = (|| -> Result<(f64, Vec<f64>, Option<f64>)> {
                let samples = SampleSet::sample_iid(&sc.sampling, m, seed)?;
                let fits = vertex_fits(&sc.dict, &sc.system, &samples)?;
                let mut gen_err: f64 = 0.0;
                for (f, r) in fits.iter().zip(&refs) {
                    gen_err = gen_err.max(generator_error(r, &f.generator_matrix())?);
                }
                let s = surrogate_from_fits(&fits)?;
                let traj = s.propagate(&z0, u, sc.horizon, sc.dt)?;
                let mut deviations = vec![f64::INFINITY; grid_points];
                for (k, z) in traj.states().iter().enumerate() {
                    deviations[k] = (z - &zref.states()[k]).norm();
                }
                Ok((gen_err, deviations, traj.diverged()))
            })();
            match outcome {
                Ok((gen_error_max, deviations, diverged)) => {
                    let sup = deviations
                        .iter()
                        .cloned()
                        .fold(0.0, f64::max);
                    CellOutcome {
                        row: TrajectorySweepRow {
                            m,
                            trial,
                            seed,
                            gen_error_max,
                            sup_error: sup,
                            diverged,
                            status: None,
                        },
                        deviations,
                    }
                }
                Err(e) => CellOutcome {
                    row: TrajectorySweepRow {
                        m,
                        trial,
                        seed,
                        gen_error_max: f64::NAN,
                        sup_error: f64::NAN,
                        diverged: None,
                        status: Some(sanitize(&e.to_string())),
                    },
                    deviations: vec![f64::INFINITY; grid_points],
                },
            }
        })
        .collect();

    let mut medians = Vec::with_capacity(spec.m_values.len());
    let mut min_probabilities = Vec::new();
    for &m in &spec.m_values {
        let group: Vec<&CellOutcome> = outcomes.iter().filter(|c| c.row.m == m).collect();
        let ok: Vec<&CellOutcome> = group
            .iter()
            .cloned()
            .filter(|c| c.row.status.is_none())
            .collect();
        let sups: Vec<f64> = ok
            .iter()
            .map(|c| {
                if c.row.diverged.is_some() {
                    f64::INFINITY
                } else {
                    c.row.sup_error
                }
            })
            .collect();
        medians.push(TrajectoryMedianRow {
            m,
            sup_median: median_allow_inf(&sups),
        });
        for &eps in &spec.epsilons {
            let mut min_p = f64::INFINITY;
            let mut min_successes = 0;
            let mut argmin = 0.0;
            for k in 0..grid_points {
                let successes = ok.iter().filter(|c| c.deviations[k] <= eps).count();
                let p = if ok.is_empty() {
                    0.0
                } else {
                    successes as f64 / ok.len() as f64
                };
                if p < min_p {
                    min_p = p;
                    min_successes = successes;
                    argmin = zref.times()[k];
                }
            }
            if !min_p.is_finite() {
                min_p = 0.0;
            }
            min_probabilities.push(MinProbabilityCell {
                m,
                epsilon: eps,
                min_p_hat: min_p,
                wilson_lower: wilson_lower(min_successes, ok.len(), WILSON_Z),
                argmin_time: argmin,
            });
        }
    }
    let rows: Vec<TrajectorySweepRow> = outcomes.into_iter().map(|c| c.row).collect();
    let failed_cells = rows.iter().filter(|r| r.status.is_some()).count();
    Ok(TrajectorySweepResult {
        rows,
        medians,
        min_probabilities,
        grid_points,
        failed_cells,
    })
}

// ---------------------------------------------------------------------------
// FEM sweep

/// Mesh sweep over composite (constraint + hat function) dictionaries.
#[derive(Clone)]
pub struct FemSweepSpec {
    pub system: ControlAffineSystem,
    pub bounds: BoxDomain,
    pub x0: DVector<f64>,
    pub control: ControlSignal,
    pub horizon: f64,
    pub dt: f64,
    /// The observable whose prediction error is tracked.
    pub observable: Constraint,
    /// Include the observable in the composite dictionary (exact
    /// representation) or leave it out and project.
    pub embed_observable: bool,
    /// Constraints always embedded in the composite dictionary.
    pub extra_constraints: Vec<Constraint>,
    pub mesh_sizes: Vec<f64>,
    /// Sample count per mesh level (same length as `mesh_sizes`).
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub quad_order: usize,
}

impl FemSweepSpec {
    fn validate(&self) -> Result<()> {
        if self.mesh_sizes.is_empty() {
            return Err(Error::Usage("mesh sweep needs at least one mesh size".into()));
        }
        if self.mesh_sizes.iter().any(|&dx| !(dx > 0.0) || !dx.is_finite()) {
            return Err(Error::Usage("mesh sizes must be positive and finite".into()));
        }
        if self.m_values.len() != self.mesh_sizes.len() {
            return Err(Error::Dimension {
                context: "sample counts per mesh level",
                expected: self.mesh_sizes.len(),
                found: self.m_values.len(),
            });
        }
        if self.m_values.iter().any(|&m| m == 0) {
            return Err(Error::Usage("sample counts must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Usage("mesh sweep needs at least one trial".into()));
        }
        if self.quad_order == 0 {
            return Err(Error::Usage("quadrature order must be positive".into()));
        }
        Ok(())
    }
}

/// One sampled-fit trial at one mesh level.
#[derive(Debug, Clone, Serialize)]
pub struct FemTrialRow {
    pub level: usize,
    pub dx: f64,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub sup_error: f64,
    pub diverged: Option<f64>,
    pub status: Option<String>,
}

/// Per-level aggregate: quadrature-fit error (the m = infinity proxy)
/// against the sampled-fit median.
#[derive(Debug, Clone, Serialize)]
pub struct FemLevelSummary {
    pub level: usize,
    pub dx: f64,
    pub dictionary_size: usize,
    pub quadrature_error: f64,
    pub quadrature_diverged: Option<f64>,
    pub sampled_median: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FemSweepResult {
    pub levels: Vec<FemLevelSummary>,
    pub rows: Vec<FemTrialRow>,
    /// quadrature_error[i] / quadrature_error[i+1] for adjacent levels
    pub quadrature_ratios: Vec<f64>,
}

impl FemSweepResult {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("level,dx,fit,m,trial,seed,sup_error,diverged_at,status\n");
        for l in &self.levels {
            let div = l.quadrature_diverged.map(|t| t.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},quadrature,,,,{},{},ok\n",
                l.level, l.dx, l.quadrature_error, div
            ));
        }
        for r in &self.rows {
            let div = r.diverged.map(|t| t.to_string()).unwrap_or_default();
            if r.status.is_none() {
                s.push_str(&format!(
                    "{},{},sampled,{},{},{},{},{},ok\n",
                    r.level, r.dx, r.m, r.trial, r.seed, r.sup_error, div
                ));
            } else {
                s.push_str(&format!(
                    "{},{},sampled,{},{},{},,,{}\n",
                    r.level,
                    r.dx,
                    r.m,
                    r.trial,
                    r.seed,
                    r.status.as_deref().unwrap()
                ));
            }
        }
        s
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            levels: &'a [FemLevelSummary],
            quadrature_ratios: &'a [f64],
        }
        serde_json::to_string_pretty(&Summary {
            levels: &self.levels,
            quadrature_ratios: &self.quadrature_ratios,
        })
        .expect("summary serialization cannot fail")
    }
}

fn sup_abs_error(pred: &ObservableSeries, truth: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, v) in pred.values.iter().enumerate() {
        worst = worst.max((v - truth[k]).abs());
    }
    if pred.values.len() < truth.len() {
        // the prediction did not survive the full horizon
        f64::INFINITY
    } else {
        worst
    }
}

/// Sweep composite hat-function dictionaries over mesh sizes, separating
/// the quadrature-level fit (mesh-term only) from sampled fits.
pub fn run_fem_sweep(spec: &FemSweepSpec) -> Result<FemSweepResult> {
    spec.validate()?;
    let truth = integrate(&spec.system, &spec.x0, &spec.control, spec.horizon, spec.dt)?;
    let h_true: Vec<f64> = truth
        .states()
        .iter()
        .map(|x| spec.observable.eval(x))
        .collect();
    let sampling = StateDomain::new(spec.bounds.clone());

    let mut levels = Vec::with_capacity(spec.mesh_sizes.len());
    let mut rows = Vec::new();
    for (level, &dx) in spec.mesh_sizes.iter().enumerate() {
        let base = fem_dictionary(&FemMesh::new(spec.bounds.clone(), dx)?)?;
        let mut embedded = spec.extra_constraints.clone();
        if spec.embed_observable {
            embedded.push(spec.observable.clone());
        }
        let dict = if embedded.is_empty() {
            base
        } else {
            composite_dictionary(&embedded, &base)?
        };
        let h_coeffs = if let Some(idx) = dict.index_of(spec.observable.label()) {
            ObservableCoeffs::unit(dict.clone(), idx)?
        } else {
            let quad = crate::quad::Quadrature::composite(
                &spec.bounds,
                dict.quadrature_cells(),
                spec.quad_order,
            )?;
            let value = spec.observable.value_fn();
            crate::dictionary::project(&dict, |x| value(x), &quad)?.coeffs
        };

        // quadrature-level fit: the sampling error is quadrature error only
        let vertices = control_vertices(spec.system.control_dim());
        let mut refs = Vec::with_capacity(vertices.len());
        for u in &vertices {
            refs.push(galerkin_reference(
                &dict,
                &spec.system,
                u,
                &spec.bounds,
                spec.quad_order,
            )?);
        }
        let ref_surr = reference_surrogate(&dict, &refs)?;
        let pred = ref_surr.predict_observable(
            &h_coeffs,
            &spec.x0,
            &spec.control,
            spec.horizon,
            spec.dt,
        )?;
        let quadrature_error = sup_abs_error(&pred, &h_true);
        let quadrature_diverged = pred.diverged;

        let trial_rows: Vec<FemTrialRow> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let cell = (level * spec.trials + trial) as u64;
                let seed = seeding::subseed(spec.master_seed, cell);
                let m = spec.m_values[level];
                let outcome = (|| -> Result<(f64, Option<f64>)> {
                    let samples = SampleSet::sample_iid(&sampling, m, seed)?;
                    let fits = vertex_fits(&dict, &spec.system, &samples)?;
                    let s = surrogate_from_fits(&fits)?;
                    let pred = s.predict_observable(
                        &h_coeffs,
                        &spec.x0,
                        &spec.control,
                        spec.horizon,
                        spec.dt,
                    )?;
                    Ok((sup_abs_error(&pred, &h_true), pred.diverged))
                })();
                match outcome {
                    Ok((sup_error, diverged)) => FemTrialRow {
                        level,
                        dx,
                        m,
                        trial,
                        seed,
                        sup_error,
                        diverged,
                        status: None,
                    },
                    Err(e) => FemTrialRow {
                        level,
                        dx,
                        m,
                        trial,
                        seed,
                        sup_error: f64::NAN,
                        diverged: None,
                        status: Some(sanitize(&e.to_string())),
                    },
                }
            })
            .collect();
        let sampled: Vec<f64> = trial_rows
            .iter()
            .filter(|r| r.status.is_none())
            .map(|r| r.sup_error)
            .collect();
        levels.push(FemLevelSummary {
            level,
            dx,
            dictionary_size: dict.len(),
            quadrature_error,
            quadrature_diverged,
            sampled_median: median_allow_inf(&sampled),
        });
        rows.extend(trial_rows);
    }
    let quadrature_ratios = levels
        .windows(2)
        .map(|w| w[0].quadrature_error / w[1].quadrature_error)
        .collect();
    Ok(FemSweepResult {
        levels,
        rows,
        quadrature_ratios,
    })
}

// ---------------------------------------------------------------------------
// Duffing benchmark

/// The benchmark configuration: sample count, dictionary degree, data
/// seeds, the fixed control realization, and the eDMDc baseline protocol.
#[derive(Clone)]
pub struct DuffingBenchmarkSpec {
    pub m: usize,
    pub degree: u32,
    pub data_seeds: Vec<u64>,
    pub control_seed: u64,
    pub control_segment: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Half-width of the centered sampling box.
    pub sample_half_width: f64,
    pub include_edmdc: bool,
    pub edmdc_pairs: usize,
    pub edmdc_interval: f64,
}

impl DuffingBenchmarkSpec {
    /// The protocol used throughout: m=100 degree-5 fits over a centered
    /// box, T=3 at millisecond output resolution, and a 20-seed median.
    pub fn standard(control_seed: u64) -> Self {
        Self {
            m: 100,
            degree: 5,
            data_seeds: (0..20).map(|i| seeding::subseed(1000, i)).collect(),
            control_seed,
            control_segment: 0.1,
            horizon: 3.0,
            dt: 1e-3,
            sample_half_width: 4.0,
            include_edmdc: true,
            edmdc_pairs: 100,
            edmdc_interval: 0.01,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.edmdc_pairs == 0 {
            return Err(Error::Usage("sample counts must be at least 1".into()));
        }
        if self.data_seeds.is_empty() {
            return Err(Error::Usage("benchmark needs at least one data seed".into()));
        }
        if !(self.sample_half_width > 0.0) {
            return Err(Error::Usage("sampling box half-width must be positive".into()));
        }
        Ok(())
    }
}

/// Per-seed relative-error series and threshold crossings.
#[derive(Debug, Clone, Serialize)]
pub struct DuffingSeedSeries {
    pub seed_index: usize,
    pub data_seed: u64,
    /// relative x1 error of the bilinear prediction per grid point
    pub rel_bilinear: Vec<f64>,
    /// relative x1 error of the eDMDc prediction (empty when disabled)
    pub rel_edmdc: Vec<f64>,
    pub bilinear_diverged: Option<f64>,
    pub edmdc_diverged: Option<f64>,
    /// first time the relative error exceeds each of `REL_THRESHOLDS`
    /// (+inf when it never does)
    pub bilinear_threshold_times: [f64; 3],
    pub edmdc_threshold_times: [f64; 3],
    /// fit or prediction failure for this data seed; the series are empty
    /// and the seed contributes +inf to the medians
    pub status: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DuffingBenchmarkResult {
    pub times: Vec<f64>,
    pub truth_x1: Vec<f64>,
    pub truth_diverged: Option<f64>,
    pub seeds: Vec<DuffingSeedSeries>,
    /// pointwise median over seeds (diverged seeds count as +inf)
    pub median_rel_bilinear: Vec<f64>,
    pub median_rel_edmdc: Vec<f64>,
    pub thresholds: [f64; 3],
    /// first crossing times of the pointwise median curves
    pub median_bilinear_crossings: [f64; 3],
    pub median_edmdc_crossings: [f64; 3],
}

impl DuffingBenchmarkResult {
    /// Median curves, one row per grid time.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("t,truth_x1,median_rel_bilinear,median_rel_edmdc\n");
        for (k, &t) in self.times.iter().enumerate() {
            let e = self
                .median_rel_edmdc
                .get(k)
                .map(|v| v.to_string())
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{}\n",
                t, self.truth_x1[k], self.median_rel_bilinear[k], e
            ));
        }
        s
    }

    /// Per-seed relative errors, one row per (seed, grid time).
    pub fn per_seed_csv(&self) -> String {
        let mut s = String::from("seed_index,data_seed,t,rel_bilinear,rel_edmdc\n");
        for series in &self.seeds {
            for (k, &t) in self.times.iter().enumerate() {
                let b = series
                    .rel_bilinear
                    .get(k)
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                let e = series
                    .rel_edmdc
                    .get(k)
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    series.seed_index, series.data_seed, t, b, e
                ));
            }
        }
        s
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct SeedSummary<'a> {
            seed_index: usize,
            data_seed: u64,
            bilinear_diverged: Option<f64>,
            edmdc_diverged: Option<f64>,
            bilinear_threshold_times: &'a [f64; 3],
            edmdc_threshold_times: &'a [f64; 3],
            status: Option<&'a str>,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            thresholds: &'a [f64; 3],
            median_bilinear_crossings: &'a [f64; 3],
            median_edmdc_crossings: &'a [f64; 3],
            truth_diverged: Option<f64>,
            seeds: Vec<SeedSummary<'a>>,
        }
        let seeds = self
            .seeds
            .iter()
            .map(|s| SeedSummary {
                seed_index: s.seed_index,
                data_seed: s.data_seed,
                bilinear_diverged: s.bilinear_diverged,
                edmdc_diverged: s.edmdc_diverged,
                bilinear_threshold_times: &s.bilinear_threshold_times,
                edmdc_threshold_times: &s.edmdc_threshold_times,
                status: s.status.as_deref(),
            })
            .collect();
        serde_json::to_string_pretty(&Summary {
            thresholds: &self.thresholds,
            median_bilinear_crossings: &self.median_bilinear_crossings,
            median_edmdc_crossings: &self.median_edmdc_crossings,
            truth_diverged: self.truth_diverged,
            seeds,
        })
        .expect("summary serialization cannot fail")
    }
}

/// The benchmark's control input: a zero-order-hold signal with values
/// uniform in [-1, 1].
pub fn duffing_benchmark_control(seed: u64, horizon: f64, segment: f64) -> Result<ControlSignal> {
    let bounds = BoxDomain::from_slices(&[-1.0], &[1.0])?;
    ControlSignal::random_zoh(&bounds, horizon, segment, seed)
}

fn relative_series(pred: &ObservableSeries, truth: &[f64]) -> Vec<f64> {
    // zip so a series cut short (diverged truth or prediction) truncates
    // the comparison instead of indexing past the other
    pred.values
        .iter()
        .zip(truth)
        .map(|(v, t)| (v - t).abs() / t.abs().max(1e-12))
        .collect()
}

fn threshold_crossings(times: &[f64], rel: &[f64], covered: usize) -> [f64; 3] {
    let mut out = [f64::INFINITY; 3];
    for (i, &tau) in REL_THRESHOLDS.iter().enumerate() {
        for k in 0..covered {
            // a series that ends early (divergence) counts as crossed at
            // its last covered time
            if k >= rel.len() {
                out[i] = times[k];
                break;
            }
            if rel[k] > tau {
                out[i] = times[k];
                break;
            }
        }
    }
    out
}

/// Run the benchmark: fixed control realization, one bilinear surrogate and
/// one eDMDc model per data seed, relative x1 errors against the RK4 truth.
pub fn run_duffing_benchmark(spec: &DuffingBenchmarkSpec) -> Result<DuffingBenchmarkResult> {
    spec.validate()?;
    let system = ControlAffineSystem::duffing(-1.0, 1.0, 0.0);
    let x0 = DVector::from_vec(vec![1.0, 1.0]);
    let dict = monomial_dictionary(2, spec.degree)?;
    let control = duffing_benchmark_control(spec.control_seed, spec.horizon, spec.control_segment)?;
    let bounds = BoxDomain::centered(2, spec.sample_half_width)?;
    let sampling = StateDomain::new(bounds);
    let ubox = BoxDomain::from_slices(&[-1.0], &[1.0])?;

    // ground truth; a diverging truth truncates the comparison window
    let (times, truth_x1, truth_diverged) =
        match integrate(&system, &x0, &control, spec.horizon, spec.dt) {
            Ok(traj) => {
                let xs: Vec<f64> = traj.states().iter().map(|x| x[0]).collect();
                (traj.times().to_vec(), xs, None)
            }
            Err(Error::Divergence { time, .. }) => {
                let shorter = integrate(&system, &x0, &control, time - 2.0 * spec.dt, spec.dt)?;
                let xs: Vec<f64> = shorter.states().iter().map(|x| x[0]).collect();
                (shorter.times().to_vec(), xs, Some(time))
            }
            Err(e) => return Err(e),
        };
    let covered = times.len();

    let h = ObservableCoeffs::unit(dict.clone(), dict.index_of("x1").expect("x1 present"))?;
    let seeds: Vec<DuffingSeedSeries> = spec
        .data_seeds
        .par_iter()
        .enumerate()
        .map(|(seed_index, &data_seed)| -> Result<DuffingSeedSeries> {
            let body = || -> Result<DuffingSeedSeries> {
                let samples = SampleSet::sample_iid(&sampling, spec.m, data_seed)?;
                let fits = vertex_fits(&dict, &system, &samples)?;
                let surrogate = surrogate_from_fits(&fits)?;
                let pred =
                    surrogate.predict_observable(&h, &x0, &control, spec.horizon, spec.dt)?;
                let rel_bilinear = relative_series(&pred, &truth_x1);
                let bilinear_threshold_times = threshold_crossings(&times, &rel_bilinear, covered);
                let (rel_edmdc, edmdc_diverged, edmdc_threshold_times) = if spec.include_edmdc {
                    let model = fit_edmdc(
                        &dict,
                        &system,
                        &sampling,
                        &ubox,
                        spec.edmdc_pairs,
                        spec.edmdc_interval,
                        seeding::subseed(data_seed, 1),
                    )?;
                    let pred_e =
                        model.predict_observable(&h, &x0, &control, spec.horizon, spec.dt)?;
                    let rel = relative_series(&pred_e, &truth_x1);
                    let crossings = threshold_crossings(&times, &rel, covered);
                    (rel, pred_e.diverged, crossings)
                } else {
                    (Vec::new(), None, [f64::INFINITY; 3])
                };
                Ok(DuffingSeedSeries {
                    seed_index,
                    data_seed,
                    rel_bilinear,
                    rel_edmdc,
                    bilinear_diverged: pred.diverged,
                    edmdc_diverged,
                    bilinear_threshold_times,
                    edmdc_threshold_times,
                    status: None,
                })
            };
            match body() {
                Ok(series) => Ok(series),
                // a numerically degenerate draw is recorded against its seed
                // (empty series contribute +inf to the medians); setup errors
                // still abort the benchmark
                Err(e) if !e.is_usage() => Ok(DuffingSeedSeries {
                    seed_index,
                    data_seed,
                    rel_bilinear: Vec::new(),
                    rel_edmdc: Vec::new(),
                    bilinear_diverged: None,
                    edmdc_diverged: None,
                    bilinear_threshold_times: [times[0]; 3],
                    edmdc_threshold_times: [times[0]; 3],
                    status: Some(sanitize(&e.to_string())),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let median_curve = |get: &dyn Fn(&DuffingSeedSeries) -> &Vec<f64>| -> Vec<f64> {
        (0..covered)
            .map(|k| {
                let vals: Vec<f64> = seeds
                    .iter()
                    .map(|s| get(s).get(k).copied().unwrap_or(f64::INFINITY))
                    .collect();
                median_allow_inf(&vals)
            })
            .collect()
    };
    let median_rel_bilinear = median_curve(&|s| &s.rel_bilinear);
    let median_rel_edmdc = if spec.include_edmdc {
        median_curve(&|s| &s.rel_edmdc)
    } else {
        Vec::new()
    };
    let median_bilinear_crossings = threshold_crossings(&times, &median_rel_bilinear, covered);
    let median_edmdc_crossings = if spec.include_edmdc {
        threshold_crossings(&times, &median_rel_edmdc, covered)
    } else {
        [f64::INFINITY; 3]
    };
    Ok(DuffingBenchmarkResult {
        times,
        truth_x1,
        truth_diverged,
        seeds,
        median_rel_bilinear,
        median_rel_edmdc,
        thresholds: REL_THRESHOLDS,
        median_bilinear_crossings,
        median_edmdc_crossings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;
    use nalgebra::dvector;

    fn duffing_scenario(degree: u32, half_width: f64) -> SweepScenario {
        SweepScenario {
            system: ControlAffineSystem::duffing(-1.0, 1.0, 0.0),
            dict: monomial_dictionary(2, degree).unwrap(),
            sampling: StateDomain::new(BoxDomain::centered(2, half_width).unwrap()),
            x0: dvector![1.0, 1.0],
            horizon: 1.0,
            dt: 0.01,
        }
    }

    #[test]
    fn generator_sweep_shapes_and_nesting() {
        let spec = SweepSpec::new(
            duffing_scenario(3, 2.0),
            vec![50, 200],
            4,
            vec![0.05, 0.2, 1.0],
            42,
        );
        let res = run_generator_sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert_eq!(res.control_labels, vec!["drift", "e1"]);
        assert_eq!(res.failed_cells, 0);
        // monomials are invariant under the linear drift: the drift fit is
        // exact up to roundoff for any sample set
        for r in &res.rows {
            assert!(r.errors[0] < 1e-9, "drift error {}", r.errors[0]);
            assert!(r.errors[1] > 1e-6, "control error suspiciously small");
        }
        // fixed m: probability is non-decreasing in epsilon (nested events)
        for &m in &spec.m_values {
            let ps: Vec<f64> = res
                .probabilities
                .iter()
                .filter(|c| c.m == m)
                .map(|c| c.p_hat)
                .collect();
            assert!(ps.windows(2).all(|w| w[0] <= w[1]), "nesting violated: {ps:?}");
        }
    }

    #[test]
    fn generator_sweep_is_bit_reproducible() {
        let spec = SweepSpec::new(
            duffing_scenario(3, 2.0),
            vec![50, 100],
            3,
            vec![0.1, 0.5],
            7,
        );
        let a = run_generator_sweep(&spec).unwrap();
        let b = run_generator_sweep(&spec).unwrap();
        assert_eq!(a.rows_csv(), b.rows_csv());
        assert_eq!(a.probabilities_csv(), b.probabilities_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }

    #[test]
    fn rows_csv_round_trips_and_resume_reuses_kept_cells() {
        let spec = SweepSpec::new(
            duffing_scenario(3, 2.0),
            vec![40, 80],
            3,
            vec![0.1],
            13,
        );
        let full = run_generator_sweep(&spec).unwrap();
        let parsed = parse_generator_rows_csv(&full.rows_csv()).unwrap();
        assert_eq!(parsed.len(), full.rows.len());

        // keep half the cells, tamper one value: the merged run must carry
        // the tampered value through verbatim, proving it was not recomputed
        let mut kept: Vec<GeneratorSweepRow> =
            parsed.iter().filter(|r| r.trial == 0).cloned().collect();
        kept[0].max_error = 123.25;
        let resumed = run_generator_sweep_with_skip(&spec, &kept).unwrap();
        let marked = resumed
            .rows
            .iter()
            .find(|r| r.m == kept[0].m && r.trial == 0)
            .unwrap();
        assert_eq!(marked.max_error, 123.25);
        // untouched kept rows and recomputed rows both match the full run
        for (a, b) in full.rows.iter().zip(&resumed.rows) {
            if !(a.m == kept[0].m && a.trial == 0) {
                assert_eq!(a.seed, b.seed);
                assert_eq!(a.errors, b.errors);
            }
        }

        // a kept row pointing outside the grid is rejected
        let mut stray = parsed[0].clone();
        stray.m = 31;
        assert!(run_generator_sweep_with_skip(&spec, &[stray]).is_err());
        // duplicates are rejected
        let dup = vec![parsed[0].clone(), parsed[0].clone()];
        assert!(run_generator_sweep_with_skip(&spec, &dup).is_err());
    }

    #[test]
    fn generator_sweep_validates_spec() {
        let sc = duffing_scenario(2, 2.0);
        let bad_m = SweepSpec::new(sc.clone(), vec![100, 100], 2, vec![0.1], 1);
        assert!(run_generator_sweep(&bad_m).is_err());
        let bad_eps = SweepSpec::new(sc.clone(), vec![100], 2, vec![0.5, 0.1], 1);
        assert!(run_generator_sweep(&bad_eps).is_err());
        let no_trials = SweepSpec::new(sc, vec![100], 0, vec![0.1], 1);
        assert!(run_generator_sweep(&no_trials).is_err());
    }

    #[test]
    fn trajectory_sweep_exact_fits_give_zero_error() {
        // control-free linear system with an invariant dictionary: every
        // sampled fit reproduces the reference generator, so lifted
        // trajectories coincide
        let scenario = SweepScenario {
            system: ControlAffineSystem::autonomous_1d(-1.0),
            dict: monomial_dictionary(1, 2).unwrap(),
            sampling: StateDomain::new(BoxDomain::from_slices(&[-2.0], &[2.0]).unwrap()),
            x0: dvector![1.0],
            horizon: 1.0,
            dt: 0.01,
        };
        let spec = SweepSpec::new(scenario, vec![30], 3, vec![1e-6], 5);
        let res = run_trajectory_sweep(&spec, &ControlSignal::none()).unwrap();
        assert_eq!(res.failed_cells, 0);
        for r in &res.rows {
            assert!(r.sup_error < 1e-8, "sup error {}", r.sup_error);
            assert!(r.diverged.is_none());
        }
        // with such a tight threshold still satisfied, the worst-over-time
        // probability is 1
        for c in &res.min_probabilities {
            assert_eq!(c.min_p_hat, 1.0);
        }
    }

    #[test]
    fn trajectory_error_correlates_with_generator_error() {
        let mut scenario = duffing_scenario(3, 2.0);
        scenario.horizon = 2.0;
        let spec = SweepSpec::new(scenario, vec![100], 25, vec![0.5], 99);
        let u = ControlSignal::constant(dvector![0.5]);
        let res = run_trajectory_sweep(&spec, &u).unwrap();
        assert_eq!(res.failed_cells, 0);
        let gen: Vec<f64> = res.rows.iter().map(|r| r.gen_error_max).collect();
        let sup: Vec<f64> = res.rows.iter().map(|r| r.sup_error).collect();
        let rho = spearman(&gen, &sup).unwrap();
        assert!(rho > 0.0, "rank correlation {rho}");
    }

    #[test]
    fn longer_horizon_never_shrinks_sup_error() {
        let scenario = duffing_scenario(3, 2.0);
        let mut short = SweepSpec::new(scenario.clone(), vec![60], 4, vec![0.5], 11);
        short.scenario.horizon = 1.0;
        let mut long = SweepSpec::new(scenario, vec![60], 4, vec![0.5], 11);
        long.scenario.horizon = 2.0;
        let u = ControlSignal::constant(dvector![0.5]);
        let a = run_trajectory_sweep(&short, &u).unwrap();
        let b = run_trajectory_sweep(&long, &u).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.seed, rb.seed);
            assert!(
                rb.sup_error >= ra.sup_error - 1e-12,
                "horizon extension shrank the sup: {} vs {}",
                ra.sup_error,
                rb.sup_error
            );
        }
    }

    fn sine_observable() -> Constraint {
        // deliberately outside the hat span so the composite dictionary
        // stays independent after embedding
        Constraint::new(
            "h",
            |x: &DVector<f64>| (2.0 * x[0]).sin(),
            |x: &DVector<f64>| dvector![2.0 * (2.0 * x[0]).cos()],
        )
    }

    #[test]
    fn fem_sweep_embedded_observable_and_sampling_term() {
        // same mesh twice with different m: the quadrature term is
        // identical, so any drop in the sampled median is the sampling term
        let obs = sine_observable();
        let spec = FemSweepSpec {
            system: ControlAffineSystem::autonomous_1d(-1.0),
            bounds: BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap(),
            x0: dvector![0.5],
            control: ControlSignal::none(),
            horizon: 1.0,
            dt: 0.01,
            observable: obs,
            embed_observable: true,
            extra_constraints: vec![],
            mesh_sizes: vec![0.25, 0.25],
            m_values: vec![60, 2000],
            trials: 6,
            master_seed: 31,
            quad_order: 6,
        };
        let res = run_fem_sweep(&spec).unwrap();
        assert_eq!(res.levels.len(), 2);
        assert_eq!(res.rows.len(), 12);
        assert!(res.rows.iter().all(|r| r.status.is_none()));
        // identical mesh: identical quadrature error
        assert!(
            (res.levels[0].quadrature_error - res.levels[1].quadrature_error).abs() < 1e-12
        );
        // more data pulls the sampled fit toward the quadrature fit
        assert!(
            res.levels[1].sampled_median < res.levels[0].sampled_median,
            "sampling term did not shrink: {} vs {}",
            res.levels[0].sampled_median,
            res.levels[1].sampled_median
        );
    }

    #[test]
    fn fem_sweep_single_level_has_no_ratio() {
        let obs = sine_observable();
        let spec = FemSweepSpec {
            system: ControlAffineSystem::autonomous_1d(-1.0),
            bounds: BoxDomain::from_slices(&[-1.0], &[1.0]).unwrap(),
            x0: dvector![0.5],
            control: ControlSignal::none(),
            horizon: 0.5,
            dt: 0.01,
            observable: obs,
            embed_observable: true,
            extra_constraints: vec![],
            mesh_sizes: vec![0.5],
            m_values: vec![60],
            trials: 2,
            master_seed: 3,
            quad_order: 5,
        };
        let res = run_fem_sweep(&spec).unwrap();
        assert_eq!(res.levels.len(), 1);
        assert!(res.quadrature_ratios.is_empty());
    }

    #[test]
    fn duffing_benchmark_smoke_and_reproducibility() {
        let spec = DuffingBenchmarkSpec {
            m: 60,
            degree: 3,
            data_seeds: vec![5, 6, 7],
            control_seed: 17,
            control_segment: 0.2,
            horizon: 1.0,
            dt: 0.01,
            sample_half_width: 2.0,
            include_edmdc: true,
            edmdc_pairs: 60,
            edmdc_interval: 0.01,
        };
        let res = run_duffing_benchmark(&spec).unwrap();
        assert_eq!(res.seeds.len(), 3);
        assert_eq!(res.times.len(), res.truth_x1.len());
        assert_eq!(res.median_rel_bilinear.len(), res.times.len());
        // relative error starts at zero: the lift is evaluated at x0
        assert!(res.median_rel_bilinear[0] < 1e-12);
        for s in &res.seeds {
            assert!(s
                .bilinear_threshold_times
                .windows(2)
                .all(|w| w[0] <= w[1]));
        }
        let again = run_duffing_benchmark(&spec).unwrap();
        assert_eq!(res.curves_csv(), again.curves_csv());
        assert_eq!(res.per_seed_csv(), again.per_seed_csv());
        assert_eq!(res.summary_json(), again.summary_json());
    }
}
