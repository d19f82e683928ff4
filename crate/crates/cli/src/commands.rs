//! Subcommand implementations.

use std::path::Path;

use nalgebra::Vector2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use seisgrav::amplitudes::{transport_alpha0, Family, FamilyRay};
use seisgrav::gravity::{hydrostatic_pressure, solve_phi_grid, solve_phi_radial, Gravity};
use seisgrav::interface::{GLANCING_TOL, 
    brewster_slowness, classify_covector, principal_r, symbols, CovectorClass, InterfaceJets, InterfaceSides,
};
use seisgrav::inversion::{
    add_relative_noise, layer_strip, order1_pattern, recover_order0, recover_order1, synthesize_layer_data,
    synthesize_order0, synthesize_order1, ReflectionSample, SampleOrder,
};
use seisgrav::media::Medium;
use seisgrav::rays::PhasePoint;
use seisgrav::ucp::{bound_check, carleman_sides, empirical_beta0, CarlemanOrder};
use seisgrav::verify;
use seisgrav::Vec3;

use crate::output::{num, OutDir, Plot};
use crate::scenario::{FamilyKind, Scenario, Solver};
use crate::CliError;

/// Flags shared by every subcommand.
pub struct Run<'a> {
    pub scenario: &'a Scenario,
    pub seed: u64,
    pub tol: Option<f64>,
    pub out: OutDir,
}

pub fn trace(run: &mut Run) -> Result<(), CliError> {
    let medium = run.scenario.medium()?;
    let spec = run.scenario.rays()?;
    let starts = spec.starts();
    if starts.is_empty() {
        return Err(CliError::Schema("rays: no sources or fan given".into()));
    }
    let mut summary = Vec::new();
    let mut plot = Plot::new("Principal amplitude along rays", "arc length s", "alpha0");
    for (i, (x, dir)) in starts.iter().enumerate() {
        if !medium.in_domain(x) {
            return Err(CliError::Core(seisgrav::Error::OutOfDomain));
        }
        let start = PhasePoint::on_shell(&medium, medium.region_index(x), *x, *dir, spec.tau);
        let family = match spec.family {
            FamilyKind::Plane => Family::Plane,
            FamilyKind::Point => Family::Point { s_start: spec.s_start },
        };
        let mut ray = FamilyRay::new(start, family);
        if let Some(t) = run.tol {
            ray.tol.rtol = t;
        }
        let (path, samples) = transport_alpha0(&medium, &ray, spec.s_end)?;
        let rows: Vec<Vec<String>> = samples
            .iter()
            .map(|s| {
                vec![num(s.s), num(s.x.x), num(s.x.y), num(s.x.z), num(s.alpha0_ode), num(s.alpha0_closed), num(s.div_n), num(s.spreading)]
            })
            .collect();
        run.out.csv(&format!("trace_ray{i}.csv"), &["s", "x", "y", "z", "alpha0_ode", "alpha0_closed", "div_n", "spreading"], &rows)?;
        let gap = samples.iter().map(|s| ((s.alpha0_ode - s.alpha0_closed) / s.alpha0_closed).abs()).fold(0.0, f64::max);
        let end = path.end.point.x;
        summary.push(json!({
            "ray": i,
            "start": [x.x, x.y, x.z],
            "end": [end.x, end.y, end.z],
            "travel_time": path.travel_time(),
            "termination": format!("{:?}", path.termination),
            "interface_events": path.interface_events().count(),
            "max_relative_alpha0_gap": gap,
        }));
        plot = plot.series(&format!("ray {i}"), samples.iter().map(|s| (s.s, s.alpha0_ode)).collect());
    }
    run.out.jsonl("trace.jsonl", &summary)?;
    run.out.plot("trace_alpha0.svg", &plot)
}

pub fn gravity(run: &mut Run) -> Result<(), CliError> {
    let medium = run.scenario.medium()?;
    let g = &run.scenario.gravity;
    let radial = solve_phi_radial(&medium, g.k0)?;
    let pressure = hydrostatic_pressure(&medium, &radial)?;
    let r_max = 1.5 * medium.domain_radius();
    let n = g.samples.max(2);
    let grid = match g.solver {
        Solver::Grid => Some(solve_phi_grid(&medium, g.grid(), g.k0)?),
        Solver::Radial => None,
    };
    let mut rows = Vec::new();
    let (mut phi_pts, mut p_pts, mut grid_pts) = (Vec::new(), Vec::new(), Vec::new());
    let mut grid_gap: f64 = 0.0;
    for i in 0..n {
        let r = r_max * i as f64 / (n - 1) as f64;
        let (phi, d1, d2) = radial.profile(r, None);
        let p0 = pressure.at(r);
        let mut row = vec![num(r), num(phi), num(d1), num(d2), num(p0)];
        if let Some(gg) = &grid {
            let x = Vec3::new(r, 0.0, 0.0);
            let v = if r < g.half_extent { gg.phi(&x) } else { f64::NAN };
            if v.is_finite() {
                grid_gap = grid_gap.max((v - phi).abs());
                grid_pts.push((r, v));
            }
            row.push(num(v));
        }
        rows.push(row);
        phi_pts.push((r, phi));
        p_pts.push((r, p0));
    }
    let mut header = vec!["r", "phi", "dphi_dr", "d2phi_dr2", "p0"];
    if grid.is_some() {
        header.push("phi_grid");
    }
    run.out.csv("gravity.csv", &header, &rows)?;
    let mut rec = json!({
        "k0": g.k0,
        "total_mass": radial.total_mass(),
        "phi_center": radial.profile(0.0, None).0,
        "p0_center": pressure.at(0.0),
        "solver": format!("{:?}", g.solver),
    });
    if let Some(gg) = &grid {
        rec["grid_cells"] = json!(g.cells);
        rec["grid_iterations"] = json!(gg.iterations);
        rec["grid_residual"] = json!(gg.residual);
        rec["max_grid_vs_radial"] = json!(grid_gap);
    }
    run.out.jsonl("gravity.jsonl", &[rec])?;
    let mut plot = Plot::new("Gravitational potential", "r", "phi").series("radial", phi_pts);
    if grid.is_some() {
        plot = plot.series("grid (x axis)", grid_pts);
    }
    for r in medium.radii().unwrap_or_default() {
        plot = plot.marker("interface", r);
    }
    run.out.plot("gravity_phi.svg", &plot)?;
    run.out.plot("gravity_p0.svg", &Plot::new("Hydrostatic pressure", "r", "p0").series("p0", p_pts))
}

fn critical_slowness(sides: &InterfaceSides) -> Option<f64> {
    (sides.plus.c > sides.minus.c).then(|| 1.0 / sides.plus.c)
}

pub fn reflectivity(run: &mut Run) -> Result<(), CliError> {
    let spec = run.scenario.interface()?;
    let sides = spec.sides();
    let tau = spec.tau;
    // Stop where the faster side is still clear of the glancing band.
    let p_end = (1.0 - (2.0 * GLANCING_TOL).powi(2)).sqrt() / sides.minus.c.max(sides.plus.c);
    let n = spec.curve_points;
    let mut rows = Vec::new();
    let (mut r_pts, mut t_pts) = (Vec::new(), Vec::new());
    for i in 0..n {
        let p = p_end * i as f64 / (n - 1) as f64;
        let eta = Vector2::new(p * tau, 0.0);
        let s = symbols(&sides, tau, &eta)?;
        let class = classify_covector(&sides, tau, &eta)?;
        rows.push(vec![num(p), num(s.reflection), num(s.transmission), format!("{class:?}")]);
        r_pts.push((p, s.reflection));
        t_pts.push((p, s.transmission));
    }
    run.out.csv("reflectivity.csv", &["slowness", "reflection", "transmission", "class"], &rows)?;
    let brewster = brewster_slowness(&sides);
    let critical = critical_slowness(&sides);
    let mut rec = json!({ "max_slowness": p_end, "brewster_slowness": brewster, "critical_slowness": critical });
    if let Some(b) = brewster {
        let eta = Vector2::new(b * tau, 0.0);
        rec["reflection_at_brewster"] = json!(principal_r(&sides, tau, &eta)?);
        rec["brewster_class"] = json!(format!("{:?}", classify_covector(&sides, tau, &eta)?));
    }
    run.out.jsonl("reflectivity.jsonl", &[rec])?;
    let mut plot = Plot::new("Principal reflection and transmission", "tangential slowness", "coefficient")
        .series("R", r_pts)
        .series("T", t_pts);
    if let Some(b) = brewster {
        plot = plot.marker("Brewster", b);
    }
    if let Some(c) = critical {
        plot = plot.marker("critical", c);
    }
    run.out.plot("reflectivity.svg", &plot)
}

fn synthesize_samples(run: &Run) -> Result<(Vec<ReflectionSample>, Vec<ReflectionSample>), CliError> {
    let spec = run.scenario.interface()?;
    let sides = spec.sides();
    if spec.slownesses.is_empty() {
        return Err(CliError::Schema("interface.slownesses is empty".into()));
    }
    let mut order0 = synthesize_order0(&sides, spec.tau, &spec.slownesses)?;
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
        add_relative_noise(&mut order0, spec.noise, &mut rng);
    }
    let order1 = match (spec.jets(), spec.pattern) {
        (Some(j), Some([a, b])) => {
            let etas: Vec<_> = order1_pattern(a, b).into_iter().map(|e| e * spec.tau).collect();
            synthesize_order1(&sides, &j, spec.tau, &etas)?
        }
        _ => Vec::new(),
    };
    Ok((order0, order1))
}

const SAMPLE_HEADER: [&str; 6] = ["order", "tau", "eta1", "eta2", "re", "im"];

fn sample_row(s: &ReflectionSample) -> Vec<String> {
    let order = match s.order {
        SampleOrder::Principal => "0",
        SampleOrder::Minus1 => "-1",
    };
    vec![order.into(), num(s.tau), num(s.eta[0]), num(s.eta[1]), num(s.value.re), num(s.value.im)]
}

pub fn synthesize(run: &mut Run) -> Result<(), CliError> {
    let (o0, o1) = synthesize_samples(run)?;
    let rows: Vec<Vec<String>> = o0.iter().chain(&o1).map(sample_row).collect();
    run.out.csv("samples.csv", &SAMPLE_HEADER, &rows)?;
    let noise = run.scenario.interface()?.noise;
    run.out.jsonl("synthesize.jsonl", &[json!({ "order0": o0.len(), "order_minus1": o1.len(), "noise": noise, "seed": run.seed })])?;
    let plot = Plot::new("Synthetic order-0 reflection samples", "tangential slowness", "value")
        .series("R samples", o0.iter().map(|s| (s.slowness(), s.value.re)).collect());
    run.out.plot("samples.svg", &plot)
}

/// Read samples written by `synthesize`; classes are recomputed against `sides`.
pub fn read_samples(path: &Path, sides: &InterfaceSides) -> Result<Vec<ReflectionSample>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let field = |k: usize| -> Result<f64, CliError> {
            rec.get(k)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Parse(format!("{} row {}: bad column {}", path.display(), line + 2, SAMPLE_HEADER[k])))
        };
        let order = match rec.get(0).map(str::trim) {
            Some("0") => SampleOrder::Principal,
            Some("-1") => SampleOrder::Minus1,
            other => return Err(CliError::Parse(format!("{} row {}: unknown order {other:?}", path.display(), line + 2))),
        };
        let (tau, eta) = (field(1)?, Vector2::new(field(2)?, field(3)?));
        let class = classify_covector(sides, tau, &eta).unwrap_or(CovectorClass::Glancing(seisgrav::media::Side::Minus));
        out.push(ReflectionSample { tau, eta, order, value: Complex64::new(field(4)?, field(5)?), class });
    }
    Ok(out)
}

pub fn invert_interface(run: &mut Run, samples: Option<&Path>) -> Result<(), CliError> {
    let spec = run.scenario.interface()?;
    let truth = spec.sides();
    let (o0, o1) = match samples {
        Some(p) => {
            let all = read_samples(p, &truth)?;
            all.into_iter().partition(|s| s.order == SampleOrder::Principal)
        }
        None => synthesize_samples(run)?,
    };
    let fit0 = recover_order0(&truth.minus, &o0)?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let mut records = vec![json!({
        "order": 0,
        "rho_plus": fit0.plus.rho,
        "c_plus": fit0.plus.c,
        "relative_error": rel(fit0.plus.rho, truth.plus.rho).max(rel(fit0.plus.c, truth.plus.c)),
        "residual": fit0.residual,
        "condition": fit0.condition,
        "samples": fit0.samples,
    })];
    if !o1.is_empty() {
        let sides = InterfaceSides { minus: truth.minus, plus: fit0.plus };
        let fit1 = recover_order1(&sides, &o1)?;
        let mut rec = json!({
            "order": -1,
            "jets": fit1.jets,
            "rank": fit1.rank,
            "condition": fit1.condition,
            "singular_values": fit1.singular_values,
            "residual": fit1.residual,
        });
        if let Some(j) = spec.jets() {
            rec["max_abs_error"] = json!(jet_error(&fit1.jets, &j));
        }
        records.push(rec);
    }
    run.out.jsonl("invert_interface.jsonl", &records)?;
    let curve = |sides: &InterfaceSides| -> Vec<(f64, f64)> {
        // Stop where the faster side is still clear of the glancing band.
    let p_end = (1.0 - (2.0 * GLANCING_TOL).powi(2)).sqrt() / sides.minus.c.max(sides.plus.c);
        (0..200)
            .filter_map(|i| {
                let p = p_end * (1.0 - 1e-9) * i as f64 / 199.0;
                principal_r(sides, 1.0, &Vector2::new(p, 0.0)).ok().map(|r| (p, r))
            })
            .collect()
    };
    let fitted = InterfaceSides { minus: truth.minus, plus: fit0.plus };
    let plot = Plot::new("Order-0 interface fit", "tangential slowness", "R")
        .series("data", o0.iter().map(|s| (s.slowness(), s.value.re)).collect())
        .series("fitted", curve(&fitted))
        .series("scenario", curve(&truth));
    run.out.plot("invert_interface.svg", &plot)
}

fn jet_error(a: &InterfaceJets, b: &InterfaceJets) -> f64 {
    (a.dlog_c - b.dlog_c).abs().max((a.dlog_sqrt_rho - b.dlog_sqrt_rho).abs()).max((a.grad_phi - b.grad_phi).amax())
}

pub fn invert_layers(run: &mut Run) -> Result<(), CliError> {
    let truth = run.scenario.medium()?;
    let mut cfg = run.scenario.layer_config();
    if let Some(t) = run.tol {
        cfg.tol.rtol = t;
    }
    let data = synthesize_layer_data(&truth, &cfg)?;
    let rep = layer_strip(&data, &cfg)?;
    let radii = truth.radii()?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, l) in rep.layers.iter().enumerate() {
        let (r_t, region) = (radii.get(k).copied().unwrap_or(f64::NAN), k + 1);
        let (rho_t, c_t) = if region < truth.regions().len() { truth.radial_values(region, r_t * 0.999) } else { (f64::NAN, f64::NAN) };
        let e = [(l.radius, r_t), (l.rho, rho_t), (l.c, c_t)].iter().map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        worst = worst.max(e);
        rows.push(vec![l.layer.to_string(), num(l.radius), num(l.rho), num(l.c), num(r_t), num(rho_t), num(c_t), num(l.phi_mismatch)]);
    }
    if rep.layers.len() != radii.len() {
        worst = f64::INFINITY;
    }
    run.out.csv("invert_layers.csv", &["layer", "radius", "rho", "c", "true_radius", "true_rho", "true_c", "phi_mismatch"], &rows)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        arrivals: usize,
        layers_found: usize,
        layers_expected: usize,
        max_relative_error: f64,
        report: &'a seisgrav::inversion::LayerStripReport,
    }
    let summary = Summary {
        arrivals: data.arrivals.len(),
        layers_found: rep.layers.len(),
        layers_expected: radii.len(),
        max_relative_error: worst,
        report: &rep,
    };
    run.out.jsonl("invert_layers.jsonl", &[summary])?;
    let rebuilt = rep.medium()?;
    let profile = |m: &Medium| -> Vec<(f64, f64)> {
        (0..=400)
            .map(|i| {
                let r = m.domain_radius() * i as f64 / 400.0;
                let x = Vec3::new(r, 0.0, 0.0);
                (r, m.eval_region(m.region_index(&x), &x).c)
            })
            .collect()
    };
    let plot = Plot::new("Wave speed by layer stripping", "r", "c")
        .series("model", profile(&truth))
        .series("recovered", profile(&rebuilt));
    run.out.plot("invert_layers.svg", &plot)
}

pub fn check_carleman(run: &mut Run) -> Result<(), CliError> {
    let spec = run.scenario.carleman()?;
    let base = spec.config();
    let second = CarlemanOrder::Second { coeffs: spec.coeffs() };
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, f) in spec.functions.iter().enumerate() {
        let tf = f.build();
        let beta0 = match spec.beta0 {
            Some(b) => b,
            None => empirical_beta0(&tf, second, &base, &spec.beta_grid)?,
        };
        let mut plot = Plot::new(&format!("Carleman ratio, function {i}"), "beta", "log(lhs / rhs)");
        for (name, order) in [("second", second), ("fourth", CarlemanOrder::Fourth)] {
            let chk = bound_check(&tf, order, &base, beta0, spec.coarse, spec.fine)?;
            for p in &chk.fine {
                rows.push(vec![
                    i.to_string(),
                    name.into(),
                    num(p.beta),
                    num(p.sides.shift),
                    num(p.sides.log_lhs),
                    num(p.sides.log_rhs),
                    num(p.log_ratio),
                ]);
            }
            let cfg = seisgrav::ucp::CarlemanConfig { beta: 2.0 * beta0, ..base };
            let (one, two) = (carleman_sides(&tf, order, &cfg)?, carleman_sides(&tf.scaled(2.0), order, &cfg)?);
            let scaling = [two.log_lhs - one.log_lhs, two.log_rhs - one.log_rhs]
                .iter()
                .map(|d| (d.exp() / 4.0 - 1.0).abs())
                .fold(0.0, f64::max);
            records.push(json!({
                "function": i,
                "order": name,
                "beta0": beta0,
                "bounded": chk.bounded,
                "log_fitted_constant": chk.log_fitted_constant,
                "log_fine_max": chk.log_fine_max,
                "trend": chk.trend,
                "scaling_deviation": scaling,
            }));
            plot = plot.series(name, chk.fine.iter().map(|p| (p.beta, p.log_ratio)).collect());
        }
        run.out.plot(&format!("carleman_f{i}.svg"), &plot)?;
    }
    run.out.csv("carleman.csv", &["function", "order", "beta", "log_shift", "log_lhs", "log_rhs", "log_ratio"], &rows)?;
    run.out.jsonl("carleman.jsonl", &records)
}

/// Returns whether every selected check passed.
pub fn verify_suite(out: &mut OutDir, only: &[usize]) -> Result<bool, CliError> {
    let ids: Vec<usize> = if only.is_empty() { (1..=verify::check_count()).collect() } else { only.to_vec() };
    let mut reports = Vec::new();
    for id in ids {
        let r = verify::run_check(id).ok_or_else(|| CliError::Schema(format!("no check {id}; valid ids are 1..={}", verify::check_count())))?;
        println!("{r}");
        reports.push(r);
    }
    out.jsonl("verify.jsonl", &reports)?;
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("{passed} of {} checks passed", reports.len());
    Ok(passed == reports.len())
}
