//! Subcommand bodies. Each writes its files into a staged run directory.

use std::sync::Arc;

use anyhow::{Context, Result};
use eos_lab::eos_core::{count_distribution, exact_count_table, symmetric_xy, CountTable, OutcomeSet, OutcomeWindow};
use eos_lab::fock_oracle::{evolve, OracleOptions};
use eos_lab::phase_space::{QpdGrid, StateModel, Window};
use eos_lab::post_measurement::{chain, prime_params, ChainOptions, ChainStage, StageResult};
use eos_lab::reconstruction::{
    analytic_avg_fidelity_consecutive, analytic_avg_fidelity_single, avg_fidelity_mc, eight_port_reference, ParameterFamily,
    Scheme,
};

use crate::config::{Config, ConfigError, StateConfig};
use crate::output::{csv, num, RunDir};
use crate::svg::{heat_map, line_plot, Series};

/// Count tables larger than this are refused rather than allocated.
const MAX_TABLE: usize = 4_000_000;

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn grid_csv(grid: &QpdGrid) -> Vec<u8> {
    let rows = (0..grid.nx).flat_map(|ix| {
        (0..grid.ny).map(move |iy| {
            let p = grid.point(ix, iy);
            vec![num(p.re), num(p.im), num(grid.at(ix, iy))]
        })
    });
    csv(&["x", "y", "value"], rows)
}

fn grid_svg(title: &str, grid: &QpdGrid) -> String {
    let w = grid.window();
    let values: Vec<f64> = (0..grid.nx).flat_map(|ix| (0..grid.ny).map(move |iy| grid.at(ix, iy))).collect();
    heat_map(title, "x", "y", (w.x_min, w.x_max, w.y_min, w.y_max), grid.nx, grid.ny, &values)
}

fn count_csv(table: &CountTable) -> Vec<u8> {
    let k = table.window.ranges.len();
    let header: Vec<String> = match k {
        2 => vec!["dn_x".into(), "dn_y".into()],
        _ => (0..k).map(|i| format!("dn_{i}")).collect(),
    };
    let mut h: Vec<&str> = header.iter().map(String::as_str).collect();
    h.push("p");
    let rows = table.probs.iter().enumerate().map(|(i, &p)| {
        let mut r: Vec<String> = table.window.outcome(i).0.iter().map(|d| d.to_string()).collect();
        r.push(num(p));
        r
    });
    csv(&h, rows)
}

fn zeta_tag(z: f64) -> String {
    format!("{z}").replace('.', "p").replace('-', "m")
}

pub fn count_dist(cfg: &Config, out: &mut RunDir) -> Result<()> {
    let state = cfg.state.build()?;
    let zetas: Vec<Option<f64>> =
        if cfg.count_dist.zetas.is_empty() { vec![None] } else { cfg.count_dist.zetas.iter().map(|&z| Some(z)).collect() };
    let mut summary = Vec::new();
    for z in zetas {
        let setup = cfg.setup.build(z)?;
        let window = OutcomeWindow::for_state(&setup, &state);
        if window.len() > MAX_TABLE {
            return Err(config_err(format!("count window has {} entries (max {MAX_TABLE})", window.len())));
        }
        let table = count_distribution(&setup, &state, &window)?;
        let tag = zeta_tag(setup.zeta.norm());
        out.write(&format!("counts_zeta{tag}.csv"), &count_csv(&table))?;
        if let [(x0, x1), (y0, y1)] = window.ranges[..] {
            let dims = window.dims();
            let svg = heat_map(
                &format!("count distribution, ζ = {}", setup.zeta.norm()),
                "Δn_X",
                "Δn_Y",
                (x0 as f64, x1 as f64, y0 as f64, y1 as f64),
                dims[0],
                dims[1],
                &table.probs,
            );
            out.write(&format!("counts_zeta{tag}.svg"), svg.as_bytes())?;
        }
        for (ch, (m, v)) in table.channel_moments().into_iter().enumerate() {
            summary.push(vec![num(setup.zeta.norm()), ch.to_string(), num(m), num(v), num(table.total()), num(table.boundary_mass())]);
        }
    }
    out.write("count_summary.csv", &csv(&["zeta", "channel", "mean", "variance", "total", "boundary_mass"], summary))?;
    Ok(())
}

pub fn s_curves(cfg: &Config, out: &mut RunDir) -> Result<()> {
    let c = &cfg.s_curves;
    if c.points < 2 || !(c.zeta_max > c.zeta_min) || c.zeta_min <= 0.0 {
        return Err(config_err("s_curves needs points ≥ 2 and 0 < zeta_min < zeta_max"));
    }
    let zetas: Vec<f64> = (0..c.points).map(|k| c.zeta_min + (c.zeta_max - c.zeta_min) * k as f64 / (c.points - 1) as f64).collect();
    let mut header = vec!["zeta".to_string(), "s_tilde".to_string()];
    header.extend(c.s_values.iter().map(|s| format!("s_prime_from_{s}")));
    let mut rows = Vec::new();
    let mut series: Vec<Series> = std::iter::once("s̃".to_string())
        .chain(c.s_values.iter().map(|s| format!("s′ (s = {s})")))
        .map(|label| Series { label, points: Vec::new(), dashed: false })
        .collect();
    for &z in &zetas {
        let setup = cfg.setup.build(Some(z))?;
        let st = setup.ordering().s_x;
        let mut row = vec![num(z), num(st)];
        series[0].points.push((z, st));
        for (k, &s) in c.s_values.iter().enumerate() {
            match prime_params(&setup, s, s) {
                Ok((sp, _)) => {
                    row.push(num(sp));
                    series[k + 1].points.push((z, sp));
                }
                // outside the admissible range the map is undefined
                Err(eos_lab::Error::OrderingOutOfRange { .. }) => row.push(String::new()),
                Err(e) => return Err(e.into()),
            }
        }
        rows.push(row);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    out.write("s_curves.csv", &csv(&h, rows))?;
    out.write("s_curves.svg", line_plot("ordering parameters", "ζ", "s", &series).as_bytes())?;
    Ok(())
}

fn chain_options(cfg: &Config) -> ChainOptions {
    let p = &cfg.post_state;
    let half = if p.half_width > 0.0 { p.half_width } else { 4.0 + (p.n_max as f64).sqrt() };
    ChainOptions { window: Window::square(half, p.grid), n_max: p.n_max, seed: cfg.seed }
}

fn write_stages(out: &mut RunDir, results: &[StageResult]) -> Result<()> {
    let mut rows = Vec::new();
    for (k, r) in results.iter().enumerate() {
        let n = k + 1;
        out.write(&format!("stage{n}_wigner.csv"), &grid_csv(&r.grid))?;
        out.write(&format!("stage{n}_wigner.svg"), grid_svg(&format!("post-measurement Wigner, stage {n}"), &r.grid).as_bytes())?;
        let o: Vec<String> = r.outcomes.0.iter().map(|d| d.to_string()).collect();
        rows.push(vec![
            n.to_string(),
            o.join(" "),
            num(r.probability),
            num(r.purity),
            num(r.excess_kurtosis.0),
            num(r.excess_kurtosis.1),
        ]);
    }
    out.write("stages.csv", &csv(&["stage", "outcomes", "probability", "purity", "excess_kurtosis_x", "excess_kurtosis_y"], rows))
}

fn run_chain(cfg: &Config, out: &mut RunDir, stages: usize) -> Result<()> {
    let state = cfg.state.build()?;
    let setup = cfg.setup.build(None)?;
    let list = &cfg.post_state.outcomes;
    let list: Vec<Vec<i64>> = if list.is_empty() { vec![Vec::new()] } else { list.clone() };
    let stages: Result<Vec<ChainStage>> = list
        .iter()
        .take(stages)
        .map(|o| {
            let outcomes = if o.is_empty() {
                None
            } else if o.len() != setup.len() {
                return Err(config_err(format!("outcome list {o:?} does not match {} channels", setup.len())));
            } else {
                Some(OutcomeSet(o.clone()))
            };
            Ok(ChainStage { setup: setup.clone(), outcomes })
        })
        .collect();
    out.write("input_wigner.csv", &{
        let opts = chain_options(cfg);
        grid_csv(&eos_lab::phase_space::qpd_grid(&state, &opts.window, eos_lab::phase_space::OrderingParams::wigner())?)
    })?;
    let results = chain(&stages?, &state, &chain_options(cfg))?;
    write_stages(out, &results)
}

pub fn post_state(cfg: &Config, out: &mut RunDir) -> Result<()> {
    run_chain(cfg, out, 1)
}

pub fn chain_cmd(cfg: &Config, out: &mut RunDir) -> Result<()> {
    run_chain(cfg, out, usize::MAX)
}

fn scheme(label: &str, zeta: f64, beta: f64) -> Result<Scheme> {
    match label {
        "XY" => Ok(Scheme::xy(zeta, beta)),
        "XYXY" => Ok(Scheme::xyxy(zeta, beta)),
        "XY->XY" => Ok(Scheme::xy_then_xy(zeta, beta)),
        other => Err(config_err(format!("unknown scheme `{other}`"))),
    }
}

fn family_for(cfg: &Config, state: &StateModel) -> Result<ParameterFamily> {
    let f = &cfg.fidelity;
    let coherent = || ParameterFamily::coherent(f.coherent_half_width, f.coherent_nodes);
    match f.family.as_str() {
        "coherent" => Ok(coherent()),
        "fock" => Ok(ParameterFamily::fock(f.fock_n_max)),
        "auto" => Ok(match state {
            StateModel::Vacuum | StateModel::Coherent(_) => coherent(),
            _ => ParameterFamily::fock(f.fock_n_max),
        }),
        other => Err(config_err(format!("unknown family `{other}`"))),
    }
}

pub fn fidelity_sweep(cfg: &Config, out: &mut RunDir) -> Result<()> {
    let f = &cfg.fidelity;
    if f.samples == 0 {
        return Err(config_err("fidelity.samples must be at least 1"));
    }
    let schemes: Vec<&str> = f.schemes.iter().map(String::as_str).collect();
    for s in &schemes {
        scheme(s, 1.0, 1.0)?;
    }
    let mut rows = Vec::new();
    for (si, sc) in f.states.iter().enumerate() {
        let state = sc.build()?;
        let label = sc.label();
        let family = Arc::new(family_for(cfg, &state)?);
        let coherent_input = matches!(state, StateModel::Vacuum | StateModel::Coherent(_));
        let mut series: Vec<Series> = Vec::new();
        for (ki, s) in schemes.iter().enumerate() {
            let mut pts = Vec::new();
            for (zi, &z) in f.zetas.iter().enumerate() {
                // distinct deterministic stream per (state, scheme, ζ)
                let seed = cfg.seed ^ ((si as u64) << 48 | (ki as u64) << 32 | zi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let est = avg_fidelity_mc(&state, &scheme(s, z, cfg.setup.beta)?, &family, f.samples, seed)
                    .with_context(|| format!("{label}, {s}, ζ = {z}"))?;
                rows.push(vec![num(z), s.to_string(), label.clone(), num(est.mean), num(est.stderr), est.n_samples.to_string()]);
                pts.push((z, est.mean));
            }
            series.push(Series { label: (*s).to_string(), points: pts, dashed: false });
            if coherent_input {
                let closed: Option<fn(f64) -> f64> = match *s {
                    "XY" | "XYXY" => Some(analytic_avg_fidelity_single),
                    "XY->XY" => Some(analytic_avg_fidelity_consecutive),
                    _ => None,
                };
                if let Some(fun) = closed {
                    let name = format!("{s} closed form");
                    let mut cp = Vec::new();
                    for &z in &f.zetas {
                        rows.push(vec![num(z), name.clone(), label.clone(), num(fun(z)), num(0.0), "0".into()]);
                        cp.push((z, fun(z)));
                    }
                    series.push(Series { label: name, points: cp, dashed: false });
                }
            }
        }
        let seed = cfg.seed ^ ((si as u64) << 48 | 0xFFFF).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        match eight_port_reference(&state, &family, f.samples, seed) {
            Ok(est) => {
                for &z in &f.zetas {
                    rows.push(vec![num(z), "eight-port".into(), label.clone(), num(est.mean), num(est.stderr), est.n_samples.to_string()]);
                }
                let (lo, hi) = f.zetas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| (a.min(z), b.max(z)));
                series.push(Series { label: "eight-port".into(), points: vec![(lo, est.mean), (hi, est.mean)], dashed: true });
            }
            Err(eos_lab::Error::UnsupportedFamily) => {}
            Err(e) => return Err(e.into()),
        }
        out.write(
            &format!("fidelity_state{}.svg", si + 1),
            line_plot(&format!("average fidelity, {label}"), "ζ", "F", &series).as_bytes(),
        )?;
    }
    out.write("fidelity.csv", &csv(&["zeta", "scheme", "state", "mean", "stderr", "n_samples"], rows))
}

/// Result of `oracle-check`; `passed` is false when any budgeted check fails.
pub struct OracleReport {
    pub passed: bool,
}

pub fn oracle_check(cfg: &Config, out: &mut RunDir) -> Result<OracleReport> {
    let o = &cfg.oracle;
    let setup = symmetric_xy(o.zeta, o.beta);
    let mut passed = true;
    let mut rows = Vec::new();
    let mut record = |rows: &mut Vec<Vec<String>>, check: &str, state: &str, value: f64, budget: Option<f64>| {
        let ok = budget.map(|b| value <= b);
        if ok == Some(false) {
            passed = false;
        }
        rows.push(vec![
            check.into(),
            state.into(),
            num(value),
            budget.map(num).unwrap_or_default(),
            ok.map(|b| if b { "PASS" } else { "FAIL" }).unwrap_or("INFO").into(),
        ]);
    };
    let detuned = o.detune != 0.0;
    let opts = OracleOptions {
        waveplates: detuned.then(|| setup.channels.iter().map(|c| (c.phi, c.theta + o.detune)).collect()),
        ..OracleOptions::default()
    };
    let states: Vec<StateConfig> = o.states.clone();
    for sc in &states {
        let state = sc.build()?;
        let label = sc.label();
        let table = evolve(&setup, &state, &opts)?.outcome_probabilities();
        record(&mut rows, "total_mass_defect", &label, (1.0 - table.total()).abs(), None);
        if !detuned {
            let exact = exact_count_table(&setup, &state, &table.window)?;
            let d = table.probs.iter().zip(&exact.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            record(&mut rows, "oracle_vs_exact_max_abs", &label, d, Some(o.budget));
        }
        if matches!(state, StateModel::Vacuum) {
            for (ch, (m, _)) in table.channel_moments().into_iter().enumerate() {
                record(&mut rows, &format!("vacuum_mean_channel{ch}"), &label, m.abs(), Some(o.balance_budget));
            }
        }
        out.write(&format!("oracle_counts_{}.csv", label.replace(['(', ')'], "_").trim_end_matches('_')), &count_csv(&table))?;
    }
    if o.gaussian_beta > 0.0 {
        // normal-approximation accuracy; reported, not budgeted
        let g = symmetric_xy(o.gaussian_zeta, o.gaussian_beta);
        let state = StateModel::Vacuum;
        let window = OutcomeWindow::for_state(&g, &state);
        let exact = exact_count_table(&g, &state, &window)?;
        let approx = count_distribution(&g, &state, &window)?;
        let d = exact.probs.iter().zip(&approx.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let peak = exact.probs.iter().cloned().fold(0.0, f64::max);
        record(&mut rows, "exact_vs_gaussian_max_abs", "vacuum", d, None);
        record(&mut rows, "exact_vs_gaussian_relative_to_peak", "vacuum", d / peak, None);
    }
    out.write("oracle_checks.csv", &csv(&["check", "state", "value", "budget", "status"], rows))?;
    Ok(OracleReport { passed })
}
