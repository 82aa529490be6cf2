//! The five subcommands. Each one loads the JSON config, runs the library,
//! and writes artifacts that carry the SHA-256 of the exact config bytes:
//! CSV files as a leading `#` comment, JSON files as a field. Timestamps
//! appear only in summary JSON files so the data artifacts stay
//! byte-reproducible across reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use koopman_core::certify::{certify, represent_constraints, validate_certificate, Verdict};
use koopman_core::dictionary::Dictionary;
use koopman_core::experiments::{
    parse_generator_rows_csv, run_duffing_benchmark, run_fem_sweep, run_generator_sweep,
    run_generator_sweep_with_skip, run_trajectory_sweep, DuffingBenchmarkResult,
    DuffingBenchmarkSpec, FemSweepResult, FemSweepSpec, GeneratorSweepResult, SweepScenario,
    SweepSpec, TrajectorySweepResult,
};
use koopman_core::surrogate::{assemble_surrogate, fit_edmdc, BilinearSurrogate};
use koopman_core::{
    build_matrices, integrate, BoxDomain, CertificationConfig, ConstraintSet,
    ControlAffineSystem, SampleSet, StateDomain,
};

use crate::config::{self, LoadedConfig, RunConfig, SweepKindSpec};
use crate::svg::{self, Axes, Series, PALETTE};
use crate::{Failure, EXIT_OK, EXIT_REJECTED};

/// Relative-error floor shared with the library's benchmark convention.
const REL_FLOOR: f64 = 1e-12;

struct Pipeline {
    system: ControlAffineSystem,
    bounds: BoxDomain,
    dict: Dictionary,
}

fn pipeline(cfg: &RunConfig) -> Result<Pipeline, Failure> {
    let system = cfg.system.build();
    let bounds = cfg.sampling.build()?;
    if bounds.dim() != system.state_dim() {
        return Err(Failure::usage(format!(
            "sampling box has dimension {} but the system state has dimension {}",
            bounds.dim(),
            system.state_dim()
        )));
    }
    let dict = cfg.dictionary.build(&bounds)?;
    Ok(Pipeline {
        system,
        bounds,
        dict,
    })
}

struct FitInfo {
    control: String,
    condition: f64,
    residual: f64,
}

/// Fit the drift and every unit-control vertex from one i.i.d. sample set.
fn fit_surrogate(
    p: &Pipeline,
    m: usize,
    seed: u64,
) -> Result<(BilinearSurrogate, Vec<FitInfo>), Failure> {
    let domain = StateDomain::new(p.bounds.clone());
    let samples = SampleSet::sample_iid(&domain, m, seed)?;
    let nc = p.system.control_dim();
    let mut controls = vec![DVector::zeros(nc)];
    for i in 0..nc {
        let mut u = DVector::zeros(nc);
        u[i] = 1.0;
        controls.push(u);
    }
    let mut fits = Vec::with_capacity(controls.len());
    for u in &controls {
        fits.push(build_matrices(&p.dict, &p.system, u, &samples)?);
    }
    let infos = fits
        .iter()
        .enumerate()
        .map(|(i, f)| FitInfo {
            control: if i == 0 {
                "drift".to_string()
            } else {
                format!("e{i}")
            },
            condition: f.condition(),
            residual: f.residual(),
        })
        .collect();
    let surrogate = assemble_surrogate(&fits)?;
    Ok((surrogate, infos))
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn matrix_csv(m: &DMatrix<f64>, sha: &str) -> String {
    let mut s = format!("# config_sha256 = {sha}\n");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn hashed_csv(body: &str, sha: &str) -> String {
    format!("# config_sha256 = {sha}\n{body}")
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// fit

pub fn fit(config_path: &Path, out: &Path) -> Result<i32, Failure> {
    let LoadedConfig { config: cfg, sha256 } = config::load(config_path)?;
    let p = pipeline(&cfg)?;
    let (surrogate, infos) = fit_surrogate(&p, cfg.data.m, cfg.data.seed)?;
    ensure_dir(out)?;

    write_artifact(out, "L0.csv", &matrix_csv(surrogate.l0(), &sha256))?;
    for i in 0..surrogate.control_dim() {
        write_artifact(
            out,
            &format!("L_e{}.csv", i + 1),
            &matrix_csv(surrogate.vertex(i), &sha256),
        )?;
    }

    let manifest = json!({
        "config_sha256": sha256,
        "generated_unix": now_unix(),
        "system": p.system.name(),
        "dictionary": {
            "kind": surrogate.dictionary().kind().as_str(),
            "size": surrogate.dictionary().len(),
        },
        "samples": { "m": cfg.data.m, "seed": cfg.data.seed },
        "fits": infos.iter().map(|f| json!({
            "control": f.control,
            "gram_condition": f.condition,
            "residual": f.residual,
        })).collect::<Vec<_>>(),
        "provenance": surrogate.provenance().iter().map(|p| p.to_string()).collect::<Vec<_>>(),
    });
    write_artifact(out, "fit_manifest.json", &pretty(&manifest))?;

    println!(
        "fitted {} generator matrices of size {n} x {n} from m = {} samples",
        surrogate.control_dim() + 1,
        cfg.data.m,
        n = surrogate.dim()
    );
    for f in &infos {
        println!(
            "  {}: gram condition {:.3e}, residual {:.3e}",
            f.control, f.condition, f.residual
        );
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// predict

pub fn predict(config_path: &Path, out: &Path, no_edmdc: bool) -> Result<i32, Failure> {
    let LoadedConfig { config: cfg, sha256 } = config::load(config_path)?;
    let p = pipeline(&cfg)?;
    let (surrogate, _) = fit_surrogate(&p, cfg.data.m, cfg.data.seed)?;

    let pred_cfg = &cfg.prediction;
    let x0 = pred_cfg.x0();
    let u = pred_cfg.control.build()?;
    let obs = &pred_cfg.observable;

    // exact when the label names a dictionary element, projected otherwise
    let set = ConstraintSet::new(vec![obs.build()])?;
    let represented = represent_constraints(&set, &p.dict, &p.bounds, pred_cfg.quad_order)?;
    let h = represented[0].coeffs();

    let truth = integrate(&p.system, &x0, &u, pred_cfg.horizon, pred_cfg.dt)?;
    let h_true: Vec<f64> = truth.states().iter().map(|x| obs.eval(x)).collect();
    let pred = surrogate.predict_observable(h, &x0, &u, pred_cfg.horizon, pred_cfg.dt)?;

    let edmdc_pred = match (&cfg.edmdc, no_edmdc) {
        (Some(spec), false) => {
            let bounds =
                BoxDomain::from_slices(&spec.control_lower, &spec.control_upper)?;
            let domain = StateDomain::new(p.bounds.clone());
            let model = fit_edmdc(
                &p.dict,
                &p.system,
                &domain,
                &bounds,
                spec.pairs,
                spec.interval,
                koopman_core::seeding::subseed(cfg.data.seed, 1),
            )?;
            Some(model.predict_observable(h, &x0, &u, pred_cfg.horizon, pred_cfg.dt)?)
        }
        _ => None,
    };

    let rel = |pred: Option<&f64>, t: f64| -> Option<f64> {
        pred.map(|&v| (v - t).abs() / t.abs().max(REL_FLOOR))
    };
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();

    let mut body = String::from("t,h_true,h_bilinear,h_edmdc,rel_err_bilinear,rel_err_edmdc\n");
    for (k, &t) in truth.times().iter().enumerate() {
        let hb = pred.values.get(k);
        let he = edmdc_pred.as_ref().and_then(|s| s.values.get(k));
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t,
            h_true[k],
            cell(hb.copied()),
            cell(he.copied()),
            cell(rel(hb, h_true[k])),
            cell(rel(he, h_true[k])),
        ));
    }
    ensure_dir(out)?;
    write_artifact(out, "prediction.csv", &hashed_csv(&body, &sha256))?;

    let sup_rel = |series: &koopman_core::surrogate::ObservableSeries| -> f64 {
        series
            .values
            .iter()
            .zip(&h_true)
            .map(|(&v, &t)| (v - t).abs() / t.abs().max(REL_FLOOR))
            .fold(0.0f64, f64::max)
    };
    let sup_bilinear = sup_rel(&pred);
    let summary = json!({
        "config_sha256": sha256,
        "generated_unix": now_unix(),
        "grid_points": truth.times().len(),
        "observable": {
            "label": obs.label,
            "exact_representation": represented[0].is_exact(),
            "projection_residual": represented[0].residual(),
        },
        "bilinear": {
            "sup_rel_err": sup_bilinear,
            "diverged": pred.diverged,
            "covered_points": pred.values.len(),
        },
        "edmdc": edmdc_pred.as_ref().map(|s| json!({
            "sup_rel_err": sup_rel(s),
            "diverged": s.diverged,
            "covered_points": s.values.len(),
        })),
    });
    write_artifact(out, "predict_summary.json", &pretty(&summary))?;

    match pred.diverged {
        Some(t) => println!(
            "bilinear prediction diverged at t = {t:.3}; sup relative error before that {sup_bilinear:.3e}"
        ),
        None => println!("bilinear sup relative error {sup_bilinear:.3e} over the horizon"),
    }
    if let Some(s) = &edmdc_pred {
        match s.diverged {
            Some(t) => println!("eDMDc baseline diverged at t = {t:.3}"),
            None => println!("eDMDc sup relative error {:.3e}", sup_rel(s)),
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// certify

pub fn run_certify(config_path: &Path, out: &Path) -> Result<i32, Failure> {
    let LoadedConfig { config: cfg, sha256 } = config::load(config_path)?;
    let cert_cfg = cfg
        .certification
        .as_ref()
        .ok_or_else(|| Failure::usage("config has no certification block"))?;
    let p = pipeline(&cfg)?;
    let (surrogate, _) = fit_surrogate(&p, cfg.data.m, cfg.data.seed)?;

    let x0 = cfg.prediction.x0();
    let u = cfg.prediction.control.build()?;
    let constraints =
        ConstraintSet::new(cert_cfg.constraints.iter().map(|c| c.build()).collect())?;
    let represented =
        represent_constraints(&constraints, &p.dict, &p.bounds, cert_cfg.quad_order)?;
    let check = CertificationConfig::new(
        cert_cfg.epsilon,
        cert_cfg.delta,
        cert_cfg.dt_check,
        cfg.prediction.horizon,
    )?;
    let cert = certify(&surrogate, &represented, &x0, &u, &check)?;
    let ground = validate_certificate(
        &p.system,
        &x0,
        &u,
        &constraints,
        cfg.prediction.horizon,
        cert_cfg.dt_check,
    )?;

    ensure_dir(out)?;
    let cert_value: serde_json::Value =
        serde_json::from_str(&cert.to_json()).expect("certificate JSON parses back");
    let doc = json!({
        "config_sha256": sha256,
        "generated_unix": now_unix(),
        "certificate": cert_value,
        "ground_truth": serde_json::to_value(&ground).expect("ground truth serializes"),
    });
    write_artifact(out, "certificate.json", &pretty(&doc))?;

    if cert.certified {
        println!(
            "certified: all {} tightened constraints hold over [0, {}] with worst margin {:.3e}",
            cert.constraints.len(),
            cfg.prediction.horizon,
            cert.worst_margin
        );
        if !ground.satisfied {
            // the certificate is about the surrogate; disagreement with the
            // ground truth is exactly what the soundness experiments measure
            println!("note: ground-truth check disagrees (see certificate.json)");
        }
        Ok(EXIT_OK)
    } else {
        for c in &cert.constraints {
            if let Verdict::Rejected {
                first_failure,
                margin,
                divergence,
            } = c.verdict
            {
                let why = if divergence {
                    "surrogate diverged"
                } else {
                    "tightened constraint violated"
                };
                println!(
                    "rejected: '{}' at t = {first_failure:.3} ({why}, margin {margin:.3e})",
                    c.label
                );
            }
        }
        Ok(EXIT_REJECTED)
    }
}

// ---------------------------------------------------------------------------
// sweep

pub fn sweep(config_path: &Path, out: &Path, resume: bool) -> Result<i32, Failure> {
    let LoadedConfig { config: cfg, sha256 } = config::load(config_path)?;
    let sweep_cfg = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Failure::usage("config has no sweep block"))?;
    let p = pipeline(&cfg)?;
    ensure_dir(out)?;

    match sweep_cfg {
        SweepKindSpec::Generator {
            m_values,
            trials,
            epsilons,
            master_seed,
        } => {
            let spec = generator_spec(&cfg, &p, m_values, *trials, epsilons, *master_seed)?;
            let rows_path = out.join("generator_rows.csv");
            let result = if resume && rows_path.exists() {
                let text = fs::read_to_string(&rows_path).map_err(|e| {
                    Failure::usage(format!("cannot read {}: {e}", rows_path.display()))
                })?;
                let body: Vec<&str> =
                    text.lines().filter(|l| !l.starts_with('#')).collect();
                let kept = parse_generator_rows_csv(&body.join("\n"))?;
                println!("resuming: {} cells kept from {}", kept.len(), rows_path.display());
                run_generator_sweep_with_skip(&spec, &kept)?
            } else {
                run_generator_sweep(&spec)?
            };
            write_generator_outputs(out, &sha256, &result)?;
            println!(
                "generator error decay: slope of the worst-vertex median vs m is {:.3} \
                 ({} cells, {} failed)",
                result.slope_max,
                result.rows.len(),
                result.failed_cells
            );
            Ok(EXIT_OK)
        }
        SweepKindSpec::Trajectory {
            m_values,
            trials,
            epsilons,
            master_seed,
        } => {
            if resume {
                return Err(Failure::usage(
                    "--resume is only supported for the generator sweep",
                ));
            }
            let spec = generator_spec(&cfg, &p, m_values, *trials, epsilons, *master_seed)?;
            let u = cfg.prediction.control.build()?;
            let result = run_trajectory_sweep(&spec, &u)?;
            write_trajectory_outputs(out, &sha256, &result)?;
            let worst = result
                .medians
                .last()
                .map(|r| r.sup_median)
                .unwrap_or(f64::NAN);
            println!(
                "lifted-trajectory sweep: median sup error {worst:.3e} at the largest sample \
                 count ({} cells, {} failed)",
                result.rows.len(),
                result.failed_cells
            );
            Ok(EXIT_OK)
        }
        SweepKindSpec::MeshRefinement {
            mesh_sizes,
            m_values,
            trials,
            master_seed,
            quad_order,
            embed_observable,
        } => {
            if resume {
                return Err(Failure::usage(
                    "--resume is only supported for the generator sweep",
                ));
            }
            let spec = FemSweepSpec {
                system: p.system,
                bounds: p.bounds,
                x0: cfg.prediction.x0(),
                control: cfg.prediction.control.build()?,
                horizon: cfg.prediction.horizon,
                dt: cfg.prediction.dt,
                observable: cfg.prediction.observable.to_constraint(),
                embed_observable: *embed_observable,
                extra_constraints: vec![],
                mesh_sizes: mesh_sizes.clone(),
                m_values: m_values.clone(),
                trials: *trials,
                master_seed: *master_seed,
                quad_order: *quad_order,
            };
            let result = run_fem_sweep(&spec)?;
            write_fem_outputs(out, &sha256, &result)?;
            let ratios: Vec<String> = result
                .quadrature_ratios
                .iter()
                .map(|r| format!("{r:.3}"))
                .collect();
            println!(
                "mesh refinement: observable sup-error improvement ratios per halving [{}]",
                ratios.join(", ")
            );
            Ok(EXIT_OK)
        }
    }
}

fn generator_spec(
    cfg: &RunConfig,
    p: &Pipeline,
    m_values: &[usize],
    trials: usize,
    epsilons: &[f64],
    master_seed: u64,
) -> Result<SweepSpec, Failure> {
    let scenario = SweepScenario {
        system: p.system.clone(),
        dict: p.dict.clone(),
        sampling: StateDomain::new(p.bounds.clone()),
        x0: cfg.prediction.x0(),
        horizon: cfg.prediction.horizon,
        dt: cfg.prediction.dt,
    };
    Ok(SweepSpec::new(
        scenario,
        m_values.to_vec(),
        trials,
        epsilons.to_vec(),
        master_seed,
    ))
}

fn write_generator_outputs(
    out: &Path,
    sha: &str,
    result: &GeneratorSweepResult,
) -> Result<(), Failure> {
    write_artifact(out, "generator_rows.csv", &hashed_csv(&result.rows_csv(), sha))?;
    write_artifact(
        out,
        "generator_probabilities.csv",
        &hashed_csv(&result.probabilities_csv(), sha),
    )?;
    let summary: serde_json::Value =
        serde_json::from_str(&result.summary_json()).expect("summary JSON parses back");
    let doc = json!({
        "config_sha256": sha,
        "generated_unix": now_unix(),
        "summary": summary,
    });
    write_artifact(out, "generator_summary.json", &pretty(&doc))?;

    let mut series: Vec<Series> = Vec::new();
    for (i, label) in result.control_labels.iter().enumerate() {
        series.push(Series {
            label,
            color: PALETTE[i % PALETTE.len()],
            points: result
                .medians
                .iter()
                .map(|r| (r.m as f64, r.per_control[i]))
                .collect(),
        });
    }
    series.push(Series {
        label: "max",
        color: "#333333",
        points: result.medians.iter().map(|r| (r.m as f64, r.max)).collect(),
    });
    let plot = svg::line_plot(
        &Axes {
            title: "median generator error vs sample count",
            x_label: "m",
            y_label: "Frobenius error",
            log_x: true,
            log_y: true,
        },
        &series,
    );
    write_artifact(out, "generator_medians.svg", &plot)?;
    Ok(())
}

fn write_trajectory_outputs(
    out: &Path,
    sha: &str,
    result: &TrajectorySweepResult,
) -> Result<(), Failure> {
    write_artifact(out, "trajectory_rows.csv", &hashed_csv(&result.rows_csv(), sha))?;
    write_artifact(
        out,
        "trajectory_probabilities.csv",
        &hashed_csv(&result.probabilities_csv(), sha),
    )?;
    let summary: serde_json::Value =
        serde_json::from_str(&result.summary_json()).expect("summary JSON parses back");
    let doc = json!({
        "config_sha256": sha,
        "generated_unix": now_unix(),
        "summary": summary,
    });
    write_artifact(out, "trajectory_summary.json", &pretty(&doc))?;

    let series = vec![Series {
        label: "median sup error",
        color: PALETTE[0],
        points: result
            .medians
            .iter()
            .map(|r| (r.m as f64, r.sup_median))
            .collect(),
    }];
    let plot = svg::line_plot(
        &Axes {
            title: "lifted-trajectory sup error vs sample count",
            x_label: "m",
            y_label: "sup error",
            log_x: true,
            log_y: true,
        },
        &series,
    );
    write_artifact(out, "trajectory_medians.svg", &plot)?;
    Ok(())
}

fn write_fem_outputs(out: &Path, sha: &str, result: &FemSweepResult) -> Result<(), Failure> {
    write_artifact(out, "fem_rows.csv", &hashed_csv(&result.rows_csv(), sha))?;
    let summary: serde_json::Value =
        serde_json::from_str(&result.summary_json()).expect("summary JSON parses back");
    let doc = json!({
        "config_sha256": sha,
        "generated_unix": now_unix(),
        "summary": summary,
    });
    write_artifact(out, "fem_summary.json", &pretty(&doc))?;

    let series = vec![
        Series {
            label: "quadrature fit",
            color: PALETTE[0],
            points: result
                .levels
                .iter()
                .map(|l| (l.dx, l.quadrature_error))
                .collect(),
        },
        Series {
            label: "sampled fit (median)",
            color: PALETTE[1],
            points: result
                .levels
                .iter()
                .map(|l| (l.dx, l.sampled_median))
                .collect(),
        },
    ];
    let plot = svg::line_plot(
        &Axes {
            title: "observable sup error vs mesh size",
            x_label: "dx",
            y_label: "sup error",
            log_x: true,
            log_y: true,
        },
        &series,
    );
    write_artifact(out, "fem_errors.svg", &plot)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmark

pub fn duffing_bench(out: &Path, control_seed: u64, no_edmdc: bool) -> Result<i32, Failure> {
    let mut spec = DuffingBenchmarkSpec::standard(control_seed);
    if no_edmdc {
        spec.include_edmdc = false;
    }
    // no config file here: hash a canonical rendering of the spec instead
    let canonical = format!(
        "duffing-bench m={} degree={} seeds={} control_seed={} segment={} horizon={} dt={} \
         half_width={} edmdc={} pairs={} interval={}",
        spec.m,
        spec.degree,
        spec.data_seeds.len(),
        spec.control_seed,
        spec.control_segment,
        spec.horizon,
        spec.dt,
        spec.sample_half_width,
        spec.include_edmdc,
        spec.edmdc_pairs,
        spec.edmdc_interval
    );
    let sha = config::sha256_hex(canonical.as_bytes());

    let result = run_duffing_benchmark(&spec)?;
    ensure_dir(out)?;
    write_artifact(out, "curves.csv", &hashed_csv(&result.curves_csv(), &sha))?;
    write_artifact(out, "per_seed.csv", &hashed_csv(&result.per_seed_csv(), &sha))?;
    let summary: serde_json::Value =
        serde_json::from_str(&result.summary_json()).expect("summary JSON parses back");
    let doc = json!({
        "config_sha256": sha,
        "spec": canonical,
        "generated_unix": now_unix(),
        "summary": summary,
    });
    write_artifact(out, "summary.json", &pretty(&doc))?;
    write_artifact(out, "median_error.svg", &bench_plot(&result))?;

    for (i, &tau) in result.thresholds.iter().enumerate() {
        let b = result.median_bilinear_crossings[i];
        let e = result.median_edmdc_crossings[i];
        println!(
            "median relative x1 error exceeds {tau:.0e}: bilinear at t = {}, eDMDc at t = {}",
            fmt_time(b),
            fmt_time(e)
        );
    }
    Ok(EXIT_OK)
}

fn fmt_time(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.3}")
    } else {
        "never".to_string()
    }
}

fn bench_plot(result: &DuffingBenchmarkResult) -> String {
    let pair = |vals: &[f64]| -> Vec<(f64, f64)> {
        result
            .times
            .iter()
            .zip(vals)
            .map(|(&t, &v)| (t, v))
            .collect()
    };
    let mut series = vec![Series {
        label: "bilinear (median)",
        color: PALETTE[0],
        points: pair(&result.median_rel_bilinear),
    }];
    if !result.median_rel_edmdc.is_empty() {
        series.push(Series {
            label: "eDMDc (median)",
            color: PALETTE[1],
            points: pair(&result.median_rel_edmdc),
        });
    }
    svg::line_plot(
        &Axes {
            title: "median relative x1 error",
            x_label: "t",
            y_label: "relative error",
            log_x: false,
            log_y: true,
        },
        &series,
    )
}
