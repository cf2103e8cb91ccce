//! One runner per configuration mode. Each returns the JSON report and an
//! optional solver diagnosis.

use std::sync::Arc;

use fairlab::energy::{el_residual, estimate_chi_c, polish_porous_stationary, HlsFamily};
use fairlab::fastdiff::{self, delta_bounds, envelope as envelope_at, GridSpec, TOperatorConfig};
use fairlab::jko1d::{self, JkoConfig, JkoRunReport, SweepPoint};
use fairlab::kernel::psi::{psi_table as tabulate, PsiEvaluator};
use fairlab::{Frame, Params, RadialDensity, RadialGrid};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Numerics, RunConfig, Sweep};
use crate::svg::{Plot, Series};
use crate::{input, row, Artifacts, CliError};

type ModeResult = Result<(Value, Option<String>), CliError>;
type PointResult = Result<(SweepPoint, Value), String>;

fn jko_config(n: &Numerics) -> JkoConfig {
    JkoConfig {
        dt: n.dt,
        dt_max: n.dt_max,
        newton_tol: n.newton_tol,
        steady_tol: n.steady_tol,
        self_correction: n.self_correction,
        edge_correction: n.edge_correction,
        ..JkoConfig::default()
    }
}

fn t_config(params: &Params, n: &Numerics) -> Result<TOperatorConfig, CliError> {
    let spec = GridSpec { tail_mass: n.tail_mass, h0: n.h0, ratio: n.ratio, ..GridSpec::default() };
    let mut c = match n.r_max {
        Some(r) => {
            let grid = RadialGrid::graded(params.n(), r, n.h0, n.ratio, spec.h_max_frac * r)
                .map_err(|e| CliError::Config(format!("numerics: {e}")))?;
            TOperatorConfig::new(*params, Arc::new(grid))?
        }
        None => TOperatorConfig::with_default_grid(*params, spec)?,
    };
    c.fp_tol = n.fp_tol;
    c.max_iter = n.max_iter;
    Ok(c)
}

fn header(cfg: &RunConfig, params: Option<&Params>) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("mode".into(), json!(cfg.mode));
    m.insert("name".into(), json!(cfg.label()));
    if let Some(p) = params {
        m.insert("params".into(), json!(p));
    }
    m
}

/// Radius beyond which `rho` stays below `frac` of its maximum.
fn visible_radius(rho: &RadialDensity, frac: f64) -> f64 {
    let cut = frac * rho.max_value();
    let r = rho.nodes().iter().zip(rho.values()).filter(|(_, v)| **v >= cut).map(|(r, _)| *r).fold(0.0, f64::max);
    (1.2 * r).min(rho.grid().r_max()).max(rho.nodes()[1])
}

fn mirrored(rho: &RadialDensity, r_cut: f64) -> Vec<(f64, f64)> {
    let inside: Vec<(f64, f64)> =
        rho.nodes().iter().zip(rho.values()).filter(|(r, _)| **r <= r_cut).map(|(r, v)| (*r, *v)).collect();
    let mut pts: Vec<(f64, f64)> = inside.iter().rev().filter(|p| p.0 > 0.0).map(|p| (-p.0, p.1)).collect();
    pts.extend(inside);
    pts
}

fn write_trajectory(out: &mut Artifacts, name: &str, rep: &JkoRunReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..rep.times.len())
        .map(|i| {
            let e = &rep.energies[i];
            row(&[
                rep.times[i],
                e.total,
                e.entropy,
                e.interaction,
                rep.second_moment[i],
                rep.com[i],
                rep.min_cell[i],
                rep.max_density[i],
            ])
        })
        .collect();
    out.csv(name, &["t", "F_total", "U", "W", "V", "com", "min_cell", "max_density"], &rows)
}

fn blow_up_diagnosis(rep: &JkoRunReport) -> Option<String> {
    rep.blow_up
        .as_ref()
        .map(|b| format!("blow-up detected at t = {} (max density {:e}): {}", b.time, b.max_density, b.reason))
}

pub fn fixed_point(cfg: &RunConfig, out: &mut Artifacts) -> ModeResult {
    let params = cfg.params()?;
    let n = &cfg.numerics;
    let tconf = t_config(&params, n)?;
    let init = input::radial(&cfg.initial, tconf.grid(), &params)?;
    let fp = fastdiff::solve_stationary(&init, &tconf)?;
    let deltas = (fp.delta_lower, fp.delta_upper);
    let rho = &fp.density;

    let mut profile = Vec::with_capacity(rho.nodes().len());
    let mut env = Vec::with_capacity(rho.nodes().len());
    for (&r, &v) in rho.nodes().iter().zip(rho.values()) {
        let (lo, hi) = envelope_at(&tconf, deltas, r);
        profile.push(row(&[r, v, lo, hi]));
        env.push(row(&[r, lo, hi]));
    }
    out.csv("profile.csv", &["r", "rho", "lower", "upper"], &profile)?;
    out.csv("envelope.csv", &["r", "lower", "upper"], &env)?;

    let mut jko_json = Value::Null;
    let mut jko_series = None;
    if n.compare_jko {
        let q0 = input::quantiles(&cfg.initial, &params, n.m)?;
        let rep = jko1d::run(&q0, &params.with_frame(Frame::Rescaled), n.t_end, &jko_config(n))?;
        let cells = rep.final_state.cell_densities();
        let sup = cells.iter().map(|(x, d)| (d - rho.value_at(*x)).abs()).fold(0.0, f64::max);
        write_trajectory(out, "jko_trajectory.csv", &rep)?;
        out.csv("jko_profile.csv", &["x", "rho"], &cells.iter().map(|c| row(&[c.0, c.1])).collect::<Vec<_>>())?;
        let jmax = rep.final_state.max_density();
        jko_json = json!({
            "M": n.m,
            "converged_to_steady": rep.converged_to_steady,
            "final_time": rep.final_time(),
            "rejected_steps": rep.rejected_steps,
            "max_density": jmax,
            "max_density_relative_difference": (jmax - fp.max_density).abs() / fp.max_density,
            "sup_density_difference": sup,
            "sup_density_relative_difference": sup / fp.max_density,
            "blow_up": rep.blow_up,
        });
        jko_series = Some(Series::new(format!("JKO, M = {}", n.m), cells).dashed());
    }

    let r_cut = visible_radius(rho, 1e-3);
    let mut plot = Plot::new(format!("Stationary state, k = {}, chi = {}", params.k(), params.chi()), "x", "density")
        .with(Series::new("fixed point", mirrored(rho, r_cut)));
    if let Some(s) = jko_series {
        plot = plot.with(Series::new(s.name, s.points.into_iter().filter(|p| p.0.abs() <= r_cut).collect()).dashed());
    }
    out.svg("density.svg", &plot)?;
    let lower: Vec<(f64, f64)> = rho.nodes().iter().map(|&r| (r, envelope_at(&tconf, deltas, r).0)).collect();
    let upper: Vec<(f64, f64)> = rho.nodes().iter().map(|&r| (r, envelope_at(&tconf, deltas, r).1)).collect();
    out.svg(
        "logdensity.svg",
        &Plot::new("Stationary state and envelopes", "r", "density")
            .log_y()
            .with(Series::new("fixed point", rho.nodes().iter().copied().zip(rho.values().iter().copied()).collect()))
            .with(Series::new("lower envelope", lower).dashed())
            .with(Series::new("upper envelope", upper).dashed()),
    )?;

    let reference = cfg.reference.as_ref().map(|r| {
        let dev = (fp.max_density - r.max_density).abs() / r.max_density;
        json!({
            "expected_max_density": r.max_density,
            "computed_max_density": fp.max_density,
            "relative_deviation": dev,
            "rel_tol": r.rel_tol,
            "within_tolerance": dev <= r.rel_tol,
        })
    });

    let diagnosis = (!fp.converged).then(|| {
        format!(
            "fixed-point iteration did not converge: residual {:e} after {} iterations",
            fp.final_residual, fp.iterations
        )
    });
    let mut m = header(cfg, Some(&params));
    m.insert("grid_nodes".into(), json!(rho.nodes().len()));
    m.insert("fixed_point".into(), json!(fp));
    m.insert("reference".into(), json!(reference));
    m.insert("jko".into(), jko_json);
    Ok((Value::Object(m), diagnosis))
}

pub fn jko(cfg: &RunConfig, out: &mut Artifacts) -> ModeResult {
    let params = cfg.params()?;
    let n = &cfg.numerics;
    let q0 = input::quantiles(&cfg.initial, &params, n.m)?;
    let rep = jko1d::run(&q0, &params, n.t_end, &jko_config(n))?;
    let x = &rep.final_state;
    write_trajectory(out, "trajectory.csv", &rep)?;
    let cells = x.cell_densities();
    out.csv("profile.csv", &["x", "rho"], &cells.iter().map(|c| row(&[c.0, c.1])).collect::<Vec<_>>())?;
    let qrows: Vec<Vec<String>> = x.mass_coordinates().iter().zip(x.positions()).map(|(w, p)| row(&[*w, *p])).collect();
    out.csv("quantiles.csv", &["w", "x"], &qrows)?;
    out.svg(
        "density.svg",
        &Plot::new(format!("JKO scheme, k = {}, chi = {}, M = {}", params.k(), params.chi(), n.m), "x", "density")
            .with(Series::new(format!("t = {:.4}", rep.final_time()), cells))
            .with(Series::new("t = 0", q0.cell_densities()).dashed()),
    )?;
    out.svg(
        "energy.svg",
        &Plot::new("Free energy", "t", "F")
            .with(Series::new("F", rep.times.iter().zip(&rep.energies).map(|(t, e)| (*t, e.total)).collect())),
    )?;

    let el = if rep.converged_to_steady && params.frame() == Frame::Rescaled {
        rep.steady_profile.as_ref().and_then(|p| el_residual(p, &params).ok())
    } else {
        None
    };
    let mut m = header(cfg, Some(&params));
    m.insert(
        "summary".into(),
        json!({
            "M": n.m,
            "steps": rep.times.len() - 1,
            "final_time": rep.final_time(),
            "converged_to_steady": rep.converged_to_steady,
            "rejected_steps": rep.rejected_steps,
            "max_energy_increase": rep.max_energy_increase,
            "max_newton_iterations": rep.newton_stats.iter().max(),
            "com": x.com(),
            "second_moment": x.second_moment(),
            "min_cell": x.min_cell(),
            "max_density": x.max_density(),
            "blow_up": rep.blow_up,
        }),
    );
    m.insert("initial_energy".into(), json!(rep.energies[0]));
    m.insert("final_energy".into(), json!(rep.energies.last()));
    m.insert("el_residual".into(), json!(el));
    Ok((Value::Object(m), blow_up_diagnosis(&rep)))
}

/// Euler–Lagrange checks of one converged sweep point.
fn steady_check(pt: &SweepPoint, params: &Params, sweep: &Sweep) -> Value {
    let Some(profile) = pt.profile.as_ref().filter(|_| pt.converged && !pt.blow_up) else {
        return Value::Null;
    };
    let jko_el = el_residual(profile, params).ok().map(|e| e.sup_residual);
    let mut polish = Value::Null;
    if params.k() < 0.0 && sweep.polish {
        for factor in [1.3, 1.6, 2.0, 3.0] {
            let grid = match RadialGrid::uniform(1, factor * profile.grid().r_max(), sweep.polish_nodes) {
                Ok(g) => Arc::new(g),
                Err(_) => break,
            };
            let Ok(rep) = polish_porous_stationary(profile, params, grid.clone(), 1e-13, 5000) else {
                continue;
            };
            let el = el_residual(&rep.density, params).ok();
            let pmax = rep.density.max_value();
            let diff = grid
                .nodes()
                .iter()
                .zip(rep.density.values())
                .map(|(r, v)| (profile.value_at(*r) - v).abs())
                .fold(0.0, f64::max);
            let support = el.map(|e| e.support_radius);
            polish = json!({
                "iterations": rep.iterations,
                "converged": rep.converged,
                "last_update": rep.last_update,
                "el_residual": el.map(|e| e.sup_residual),
                "support_radius": support,
                "grid_radius": grid.r_max(),
                "support_inside_grid": support.is_some_and(|s| s < grid.r_max()),
                "relative_difference_to_jko": diff / pmax,
            });
            break;
        }
    }
    json!({ "el_residual_jko": jko_el, "polish": polish })
}

pub fn chi_sweep(cfg: &RunConfig, jobs: usize, out: &mut Artifacts) -> ModeResult {
    let base = cfg.params()?.with_frame(Frame::Rescaled);
    let k = base.k();
    let n = &cfg.numerics;
    let sweep = &cfg.sweep;
    let hls = if k < 0.0 { Some(estimate_chi_c(&base, HlsFamily::Default, sweep.hls_budget)?) } else { None };
    // The logarithmic case has critical value 1 in the sweep's normalisation.
    let reference = hls.as_ref().map_or(1.0, |e| e.chi_c);
    let mut chis: Vec<f64> = sweep.chi.iter().copied().chain(sweep.fractions.iter().map(|f| f * reference)).collect();
    chis.sort_by(f64::total_cmp);
    chis.dedup();
    let q0 = input::quantiles(&cfg.initial, &base, n.m)?;
    let jc = jko_config(n);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let results: Vec<(f64, PointResult)> = pool.install(|| {
        chis.par_iter()
            .map(|&chi| {
                let res = base
                    .with_chi(chi)
                    .and_then(|p| jko1d::sweep_point(&q0, &p, n.t_end, &jc).map(|pt| (pt, p)))
                    .map(|(pt, p)| {
                        let check = steady_check(&pt, &p, sweep);
                        (pt, check)
                    })
                    .map_err(|e| e.to_string());
                (chi, res)
            })
            .collect()
    });

    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (chi, res) in results {
        match res {
            Ok((pt, check)) => {
                let el = check["polish"]["el_residual"].as_f64().or(check["el_residual_jko"].as_f64());
                let support = check["polish"]["support_radius"].as_f64();
                rows.push(vec![
                    chi.to_string(),
                    (chi / reference).to_string(),
                    pt.converged.to_string(),
                    pt.blow_up.to_string(),
                    pt.free_energy.to_string(),
                    pt.second_moment.to_string(),
                    pt.max_density.to_string(),
                    pt.final_time.to_string(),
                    el.map_or(String::new(), |v| v.to_string()),
                    support.map_or(String::new(), |v| v.to_string()),
                ]);
                entries.push(json!({ "point": pt, "fraction": chi / reference, "steady_state": check }));
                points.push(pt);
            }
            Err(e) => entries.push(json!({ "chi": chi, "error": e })),
        }
    }
    out.csv(
        "sweep.csv",
        &[
            "chi",
            "fraction",
            "converged",
            "blow_up",
            "free_energy",
            "second_moment",
            "max_density",
            "final_time",
            "el_residual",
            "support_radius",
        ],
        &rows,
    )?;

    let crossing = jko1d::zero_energy_crossing(&points, k);
    let quantity = |p: &SweepPoint| {
        if k == 0.0 {
            p.second_moment
        } else {
            p.free_energy.max(0.0).powf((2.0 - k) / 2.0)
        }
    };
    let good: Vec<(f64, f64)> =
        points.iter().filter(|p| p.converged && !p.blow_up).map(|p| (p.chi, quantity(p))).collect();
    let y_label = if k == 0.0 { "V".to_string() } else { format!("F^({})", (2.0 - k) / 2.0) };
    let mut plot =
        Plot::new("Steady states along the sweep", "chi", y_label).with(Series::new("steady states", good.clone()));
    if let (Some(c), Some(last)) = (crossing, good.last()) {
        plot = plot.with(Series::new("extrapolation", vec![*last, (c, 0.0)]).dashed());
    }
    out.svg("energy.svg", &plot)?;

    let diagnosis = crossing.is_none().then(|| "no zero-energy crossing: fewer than two converged points".to_string());
    let mut m = header(cfg, Some(&base));
    m.insert("M".into(), json!(n.m));
    m.insert("reference_chi_c".into(), json!(reference));
    m.insert("hls_estimate".into(), json!(hls));
    m.insert("crossing".into(), json!(crossing));
    m.insert("crossing_relative_to_reference".into(), json!(crossing.map(|c| (c - reference) / reference)));
    m.insert("points".into(), Value::Array(entries));
    Ok((Value::Object(m), diagnosis))
}

pub fn psi_table(cfg: &RunConfig, out: &mut Artifacts) -> ModeResult {
    let p = cfg.psi.as_ref().expect("validated");
    let s_values: Vec<f64> = (0..p.s_count).map(|i| p.s_max * i as f64 / (p.s_count - 1) as f64).collect();
    let count = ((p.k_stop - p.k_start) / p.k_step + 1e-9).floor() as usize + 1;
    let ks: Vec<f64> = (0..count).map(|i| ((p.k_start + i as f64 * p.k_step) * 1e10).round() / 1e10).collect();
    let mut rows = Vec::new();
    let mut families = Vec::new();
    let mut curves: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for &k in &ks {
        let eval = match PsiEvaluator::new(p.n, k) {
            Ok(e) => e,
            Err(e) => {
                families.push(json!({ "k": k, "error": e.to_string() }));
                continue;
            }
        };
        let table = tabulate(&eval, &s_values);
        let mut prev: Option<f64> = None;
        let mut sign_changes = 0;
        let mut decreases = 0;
        for r in &table {
            let sign = if r.psi > 0.0 {
                1
            } else if r.psi < 0.0 {
                -1
            } else {
                0
            };
            let increasing = prev.map(|q| r.psi >= q);
            if let Some(q) = prev {
                if q.signum() != r.psi.signum() && q != 0.0 && r.psi != 0.0 {
                    sign_changes += 1;
                }
                if r.psi < q {
                    decreases += 1;
                }
            }
            rows.push(vec![
                k.to_string(),
                r.s.to_string(),
                r.psi.to_string(),
                r.backend.clone(),
                sign.to_string(),
                increasing.map_or(String::new(), |b| b.to_string()),
            ]);
            prev = Some(r.psi);
        }
        let (lo, hi) = table.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, r| (a.0.min(r.psi), a.1.max(r.psi)));
        families.push(json!({
            "k": k,
            "backend": eval.backend().name(),
            "newtonian": eval.is_newtonian(),
            "sub_newtonian": eval.is_sub_newtonian(),
            "far_field_limit": eval.far_field_limit(),
            "points": table.len(),
            "skipped": s_values.len() - table.len(),
            "min": lo,
            "max": hi,
            "sign_changes": sign_changes,
            "decreasing_steps": decreases,
        }));
        curves.push((k, table.iter().map(|r| (r.s, if r.psi.abs() <= 10.0 { r.psi } else { f64::NAN })).collect()));
    }
    out.csv("psi.csv", &["k", "s", "psi", "backend", "sign", "increasing"], &rows)?;
    let stride = curves.len().div_ceil(8).max(1);
    let mut plot = Plot::new(format!("psi_k, N = {}", p.n), "s", "psi");
    for (k, pts) in curves.into_iter().step_by(stride) {
        plot = plot.with(Series::new(format!("k = {k}"), pts));
    }
    out.svg("psi.svg", &plot)?;
    let mut m = header(cfg, None);
    m.insert("N".into(), json!(p.n));
    m.insert("families".into(), Value::Array(families));
    Ok((Value::Object(m), None))
}

pub fn envelope(cfg: &RunConfig, out: &mut Artifacts) -> ModeResult {
    let params = cfg.params()?;
    let tconf = t_config(&params, &cfg.numerics)?;
    let deltas = delta_bounds(&tconf)?;
    let nodes = tconf.grid().nodes();
    let rows: Vec<Vec<String>> = nodes
        .iter()
        .map(|&r| {
            let (lo, hi) = envelope_at(&tconf, deltas, r);
            row(&[r, lo, hi])
        })
        .collect();
    out.csv("envelope.csv", &["r", "lower", "upper"], &rows)?;
    let pts = |f: fn((f64, f64)) -> f64| nodes.iter().map(|&r| (r, f(envelope_at(&tconf, deltas, r)))).collect();
    out.svg(
        "envelope.svg",
        &Plot::new(format!("Envelopes, k = {}, chi = {}", params.k(), params.chi()), "r", "density")
            .log_y()
            .with(Series::new("lower", pts(|e| e.0)))
            .with(Series::new("upper", pts(|e| e.1))),
    )?;
    let mut m = header(cfg, Some(&params));
    m.insert(
        "envelope".into(),
        json!({
            "a": tconf.a(),
            "b": tconf.b(),
            "delta_lower": deltas.0,
            "delta_upper": deltas.1,
            "truncation_radius": tconf.truncation_radius(),
            "grid_nodes": nodes.len(),
            "upper_at_origin": envelope_at(&tconf, deltas, 0.0).1,
            "lower_at_origin": envelope_at(&tconf, deltas, 0.0).0,
        }),
    );
    Ok((Value::Object(m), None))
}
