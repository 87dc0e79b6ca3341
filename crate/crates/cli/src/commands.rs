use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use qtraj::analytics::*;
use qtraj::state::density_from_pure;
use qtraj::trajectory::{
    capture_first_crossings, run_ensemble, run_trajectory_indexed, StepOutcome,
};
use qtraj::{EnsembleOptions, MeasurementSettings, Scheme};

use crate::config::{self, Config};
use crate::output::{num, OutDir};
use crate::CliError;

/// Overrides shared by the config-driven commands.
pub struct Overrides {
    pub seed: Option<u64>,
    pub snapshot_stride: Option<usize>,
}

fn resolve(path: &Path, o: &Overrides) -> Result<Config, CliError> {
    let mut c = config::load(path)?;
    if let Some(s) = o.seed {
        c.simulation.seed = s;
    }
    if let Some(s) = o.snapshot_stride {
        c.simulation.snapshot_stride = s;
    }
    Ok(c)
}

pub fn simulate(path: &Path, out: &Path, o: &Overrides) -> Result<(), CliError> {
    let t0 = Instant::now();
    let c = resolve(path, o)?;
    let cfg = c.simulation.trajectory_config()?;
    let reference = c.simulation.reference(&cfg)?;
    let mut dir = OutDir::create(out)?;
    let sum = run_ensemble(&cfg, &EnsembleOptions::new(c.simulation.trajectories))?;
    let refs = match reference {
        Some((kind, eta)) => Some(closed_form_curve(&CurveSpec {
            kind,
            gamma: cfg.gamma,
            eta,
            times: sum.times.clone(),
        })?),
        None => None,
    };
    let rows = (0..sum.times.len()).map(|k| {
        vec![
            num(sum.times[k]),
            num(sum.mean_concurrence[k]),
            num(sum.std_concurrence[k]),
            num(sum.mean_purity[k]),
            refs.as_ref().map(|r| num(r[k])).unwrap_or_default(),
        ]
    });
    dir.csv(
        "ensemble.csv",
        &[
            "time_us",
            "mean_concurrence",
            "std_concurrence",
            "mean_purity",
            "analytic_reference",
        ],
        rows,
    )?;
    for &index in &c.output.trajectories {
        let rec = run_trajectory_indexed(&cfg, index)?;
        let rows = (0..rec.times.len()).map(|k| {
            let (label, clicks, r) = match k.checked_sub(1).map(|i| rec.steps[i].outcome) {
                None => (String::new(), String::new(), [None; 4]),
                Some(o) => (o.label(), o.clicks().to_string(), readouts(&o)),
            };
            let mut row = vec![k.to_string(), num(rec.times[k]), label, clicks];
            row.extend(r.iter().map(|x| x.map(num).unwrap_or_default()));
            row.push(num(rec.concurrence[k]));
            row.push(num(rec.purity[k]));
            row
        });
        dir.csv(
            &format!("trajectory_{index}.csv"),
            &[
                "step",
                "time_us",
                "outcome",
                "clicks",
                "r1",
                "r2",
                "r3",
                "r4",
                "concurrence",
                "purity",
            ],
            rows,
        )?;
    }
    let secs = t0.elapsed().as_secs_f64();
    dir.manifest("simulate", Some(c.simulation.seed), &c, secs)?;
    eprintln!(
        "simulate: {} trajectories x {} steps, {} clicks, {:.2} s",
        sum.trajectories,
        cfg.steps(),
        sum.total_clicks,
        secs
    );
    Ok(())
}

fn readouts(o: &StepOutcome) -> [Option<f64>; 4] {
    match *o {
        StepOutcome::Photodetection { .. } => [None; 4],
        StepOutcome::Homodyne { r3, r4 } => [Some(r3), Some(r4), None, None],
        StepOutcome::Heterodyne { r_i, r_q, r_x, r_y } => {
            [Some(r_i), Some(r_q), Some(r_x), Some(r_y)]
        }
        StepOutcome::Mixed { r_i, r_q, .. } | StepOutcome::MixedDiscard { r_i, r_q } => {
            [Some(r_i), Some(r_q), None, None]
        }
    }
}

#[derive(Serialize)]
struct BoundEcho<'a> {
    kind: &'a str,
    gamma_mhz: f64,
    eta: f64,
    tmax_us: f64,
    points: usize,
}

pub fn bound(
    kind: &str,
    gamma: f64,
    eta: f64,
    tmax: f64,
    points: usize,
    out: &Path,
) -> Result<(), CliError> {
    let t0 = Instant::now();
    let k = match kind {
        "pure_hom" => CurveKind::PureBound,
        "pd_eta" => CurveKind::PdEtaBound,
        "hom_eta" => CurveKind::HomEtaBound,
        other => {
            return Err(CliError::Config(format!(
                "kind: unknown bound `{other}` (pure_hom, pd_eta, hom_eta)"
            )))
        }
    };
    if !(gamma > 0.0 && tmax > 0.0 && points >= 1) {
        return Err(CliError::Config(
            "gamma, tmax and points must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(CliError::Config("eta: must lie in [0, 1]".into()));
    }
    let times = uniform_grid(tmax, points);
    let values = closed_form_curve(&CurveSpec {
        kind: k,
        gamma,
        eta: Some(eta),
        times: times.clone(),
    })?;
    let mut dir = OutDir::create(out)?;
    dir.csv(
        "bound.csv",
        &["time_us", "concurrence_bound"],
        times
            .iter()
            .zip(&values)
            .map(|(t, v)| vec![num(*t), num(*v)]),
    )?;
    let echo = BoundEcho {
        kind,
        gamma_mhz: gamma,
        eta,
        tmax_us: tmax,
        points,
    };
    dir.manifest("bound", None, &echo, t0.elapsed().as_secs_f64())?;
    Ok(())
}

#[derive(Serialize)]
struct WhichPathEcho {
    theta_deg: f64,
    vartheta_deg: f64,
    half_width: f64,
    points: usize,
}

pub fn whichpath(
    theta: f64,
    vartheta: f64,
    half_width: f64,
    points: usize,
    out: &Path,
) -> Result<(), CliError> {
    let t0 = Instant::now();
    if points < 2 || !(half_width > 0.0) {
        return Err(CliError::Config(
            "grid: need points >= 2 and half_width > 0".into(),
        ));
    }
    let g = which_path_grid(
        theta.to_radians(),
        vartheta.to_radians(),
        half_width,
        points,
    );
    let n = g.axis.len();
    let rows = (0..n * n).map(|k| {
        let (a, b) = (g.source1[k], g.source2[k]);
        vec![
            num(g.axis[k / n]),
            num(g.axis[k % n]),
            num(a),
            num(b),
            num((a - b).abs()),
        ]
    });
    let mut dir = OutDir::create(out)?;
    dir.csv(
        "whichpath.csv",
        &["X3", "X4", "density_source1", "density_source2", "abs_diff"],
        rows,
    )?;
    let echo = WhichPathEcho {
        theta_deg: theta,
        vartheta_deg: vartheta,
        half_width,
        points,
    };
    dir.manifest("whichpath", None, &echo, t0.elapsed().as_secs_f64())?;
    eprintln!(
        "whichpath: max |source1 - source2| = {:e}",
        g.max_abs_diff()
    );
    Ok(())
}

pub fn maxstats(path: &Path, out: &Path, o: &Overrides) -> Result<(), CliError> {
    let t0 = Instant::now();
    let c = resolve(path, o)?;
    let cfg = c.simulation.trajectory_config()?;
    if cfg.scheme != Scheme::Homodyne {
        return Err(CliError::Config(
            "simulation.scheme: maxstats needs homodyne".into(),
        ));
    }
    let cap = c
        .capture
        .as_ref()
        .ok_or_else(|| CliError::Config("capture: section required for maxstats".into()))?;
    if !(0.0 < cap.threshold && cap.threshold <= 1.0) {
        return Err(CliError::Config(
            "capture.threshold: must lie in (0, 1]".into(),
        ));
    }
    if cap.bins == 0 || cap.count == 0 {
        return Err(CliError::Config(
            "capture: count and bins must be >= 1".into(),
        ));
    }
    let limit = cap
        .max_trajectories
        .unwrap_or(c.simulation.trajectories.max(20 * cap.count));
    let (captures, used) = capture_first_crossings(&cfg, cap.count, cap.threshold, limit)?;
    let st = max_conc_state_stats(&captures, cap.bins)?;
    let mut dir = OutDir::create(out)?;
    let e = &st.hist_b.edges;
    dir.csv(
        "maxstats_marginals.csv",
        &["bin_lo", "bin_hi", "count_b", "count_c", "count_e"],
        (0..cap.bins).map(|k| {
            vec![
                num(e[k]),
                num(e[k + 1]),
                st.hist_b.counts[k].to_string(),
                st.hist_c.counts[k].to_string(),
                st.hist_e.counts[k].to_string(),
            ]
        }),
    )?;
    dir.csv(
        "maxstats_joint.csv",
        &["c_lo", "c_hi", "e_lo", "e_hi", "count"],
        (0..cap.bins * cap.bins).map(|k| {
            let (i, j) = (k / cap.bins, k % cap.bins);
            vec![
                num(e[i]),
                num(e[i + 1]),
                num(e[j]),
                num(e[j + 1]),
                st.joint_ce[k].to_string(),
            ]
        }),
    )?;
    dir.csv(
        "maxstats_summary.csv",
        &[
            "captures",
            "trajectories",
            "threshold",
            "a_violations",
            "max_abs_a",
            "b_mode_at_one",
            "mean_b",
            "skew_c",
            "skew_e",
            "max_norm_error",
        ],
        [vec![
            st.count.to_string(),
            used.to_string(),
            num(cap.threshold),
            st.a_violations.to_string(),
            num(st.max_abs_a),
            st.b_mode_at_one().to_string(),
            num(st.mean_b),
            num(st.skew_c),
            num(st.skew_e),
            num(st.max_norm_error),
        ]],
    )?;
    dir.manifest(
        "maxstats",
        Some(c.simulation.seed),
        &c,
        t0.elapsed().as_secs_f64(),
    )?;
    eprintln!(
        "maxstats: {} captures from {used} trajectories, |A| >= 0.02 in {}, skew C {:.3}, skew E {:.3}",
        st.count, st.a_violations, st.skew_c, st.skew_e
    );
    Ok(())
}

#[derive(Serialize)]
struct SmeEcho<'a> {
    scheme: &'a str,
    states: usize,
    corrupt: bool,
    dts: &'a [f64],
}

/// Returns whether the order test passed.
pub fn smecheck(
    scheme: &str,
    states: usize,
    seed: u64,
    corrupt: bool,
    out: &Path,
) -> Result<bool, CliError> {
    let t0 = Instant::now();
    let sc = match Scheme::parse(scheme) {
        Some(s @ (Scheme::Homodyne | Scheme::Heterodyne)) => s,
        _ => {
            return Err(CliError::Config(format!(
                "scheme: `{scheme}` has no SME form (homodyne, heterodyne)"
            )))
        }
    };
    if states == 0 {
        return Err(CliError::Config("states: must be >= 1".into()));
    }
    let mut rng = qtraj::trajectory::trajectory_rng(seed, 0);
    let sample: Vec<_> = (0..states)
        .map(|_| density_from_pure(&random_pure(&mut rng)))
        .collect();
    let dts = [1e-3, 5e-4, 2.5e-4];
    let s = MeasurementSettings::ideal(dts[0], 0.0, std::f64::consts::FRAC_PI_2);
    let rep = kraus_sme_order_test(sc, &s, 1.0, &sample, &dts, corrupt)?;
    let mut dir = OutDir::create(out)?;
    dir.csv(
        "smecheck.csv",
        &["dt", "difference"],
        rep.dts
            .iter()
            .zip(&rep.differences)
            .map(|(d, x)| vec![num(*d), num(*x)]),
    )?;
    let echo = SmeEcho {
        scheme,
        states,
        corrupt,
        dts: &dts,
    };
    dir.manifest("smecheck", Some(seed), &echo, t0.elapsed().as_secs_f64())?;
    println!(
        "{} slope {:.4} (accepted [{}, {}]) {}",
        sc.name(),
        rep.slope,
        ORDER_SLOPE_RANGE.0,
        ORDER_SLOPE_RANGE.1,
        if rep.pass { "PASS" } else { "FAIL" }
    );
    Ok(rep.pass)
}

fn random_pure(rng: &mut impl rand::Rng) -> qtraj::PureState {
    use rand_distr::StandardNormal;
    let v = qtraj::state::CVec4::from_fn(|_, _| {
        qtraj::C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    qtraj::PureState::from_vector(v).expect("gaussian vector is nonzero")
}
