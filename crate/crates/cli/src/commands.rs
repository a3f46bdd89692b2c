use std::time::Instant;

use anyhow::Result;
use dln::coefficients::{alpha, beta, gamma};
use dln::ivp::problems;
use dln::nse2d::{run_constant_steps, ManufacturedCase, NseRunConfig, NseSolverConfig, NseStepper};
use dln::{
    adapt_loop_lte, adapt_loop_nd, integrate_fixed, one_leg_coefficients, refactor_coefficients, AdaptiveRun,
    ControllerConfig, EstimatorKind, IvpProblem, RowFlag, StageSolveConfig, StepPair, StepPath, Theta,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig, OdeCase};
use crate::output::{Artifacts, Check};
use crate::plot;

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `log2(e(k) / e(k/2))`
pub fn rate(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

fn rates(errors: &[f64]) -> Vec<Option<f64>> {
    std::iter::once(None)
        .chain(errors.windows(2).map(|w| Some(rate(w[0], w[1]))))
        .collect()
}

fn theta_of(value: f64) -> Result<Theta> {
    Ok(Theta::new(value)?)
}

#[derive(Serialize)]
struct CoeffRow {
    theta: f64,
    eps: f64,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    beta0: f64,
    beta1: f64,
    beta2: f64,
    gamma0: f64,
    gamma1: f64,
    gamma2: f64,
    /// with `k_n + k_{n-1} = 2`
    khat: f64,
    a1: f64,
    a0: f64,
    b: f64,
    c2: f64,
    c1: f64,
    c0: f64,
    sum_alpha: f64,
    sum_beta: f64,
}

pub fn coeffs(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut gamma_ok = true;
    for &th in &cfg.thetas {
        let theta = theta_of(th)?;
        for &eps in &cfg.eps {
            let pair = StepPair::new(1.0 + eps, 1.0 - eps)?;
            let c = one_leg_coefficients(theta, pair);
            let r = refactor_coefficients(theta, pair);
            let [alpha0, alpha1, alpha2] = alpha(theta);
            let [beta0, beta1, beta2] = beta(theta, eps);
            let [gamma0, gamma1, gamma2] = gamma(theta, eps);
            let (sum_alpha, sum_beta) = (c.alpha.iter().sum::<f64>(), c.beta.iter().sum::<f64>());
            worst = worst.max(sum_alpha.abs()).max((sum_beta - 1.0).abs());
            if th == 0.0 || th == 1.0 {
                gamma_ok &= [gamma0, gamma1, gamma2].iter().all(|g| g.abs() < 1e-12);
            }
            rows.push(CoeffRow {
                theta: th,
                eps,
                alpha0,
                alpha1,
                alpha2,
                beta0,
                beta1,
                beta2,
                gamma0,
                gamma1,
                gamma2,
                khat: c.khat,
                a1: r.a1,
                a0: r.a0,
                b: r.b,
                c2: r.c2,
                c1: r.c1,
                c0: r.c0,
                sum_alpha,
                sum_beta,
            });
        }
    }
    let mut out = Artifacts::default();
    out.add_csv("coeffs.csv", to_csv(&rows)?);
    out.checks.push(Check::new("coefficient sums", worst <= 1e-12, format!("max deviation {worst:.2e}")));
    out.checks.push(Check::new("gamma vanishes at theta in {0, 1}", gamma_ok, ""));
    out.summary.push(format!("{} coefficient rows", rows.len()));
    Ok(out)
}

#[derive(Serialize)]
struct OdeRow {
    theta: f64,
    level: usize,
    k_max: f64,
    steps: usize,
    error: f64,
    rate: Option<f64>,
}

fn ode_steps(cfg: &ExperimentConfig, level: usize) -> Vec<f64> {
    let m = 1usize << level;
    if cfg.variable_steps {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut coarse = vec![cfg.k];
        let mut t = cfg.k;
        while t < cfg.t_end - 1e-12 {
            let last = *coarse.last().unwrap();
            let next = (last * rng.random_range(0.5..2.0)).clamp(0.2 * cfg.k, 5.0 * cfg.k).min(cfg.t_end - t);
            coarse.push(next);
            t += next;
        }
        coarse.iter().flat_map(|&k| std::iter::repeat_n(k / m as f64, m)).collect()
    } else {
        let n = ((cfg.t_end / cfg.k).round() as usize).max(2) * m;
        vec![cfg.t_end / n as f64; n]
    }
}

fn ode_error(cfg: &ExperimentConfig, theta: Theta, steps: &[f64]) -> Result<f64> {
    let problem = match cfg.ode_case {
        OdeCase::ForcedDecay => problems::forced_decay(1.0),
        OdeCase::Zero => problems::zero(3).with_exact(|_| DVector::from_element(3, 1.25)),
    };
    let y0 = problem.exact(0.0).expect("exact solution");
    let y1 = problem.exact(steps[0]).expect("exact solution");
    let traj = integrate_fixed(&problem, 0.0, y0, y1, steps, theta, &StageSolveConfig::default(), StepPath::Refactorized)?;
    Ok(traj.max_error(&problem).expect("exact solution"))
}

pub fn ivp_converge(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let cells: Vec<(f64, usize)> = cfg.thetas.iter().flat_map(|&t| (0..=cfg.levels).map(move |l| (t, l))).collect();
    let results: Vec<Result<(f64, usize, f64, usize, f64)>> = cells
        .par_iter()
        .map(|&(th, level)| {
            let steps = ode_steps(cfg, level);
            let err = ode_error(cfg, theta_of(th)?, &steps)?;
            let k_max = steps.iter().cloned().fold(0.0, f64::max);
            Ok((th, level, k_max, steps.len(), err))
        })
        .collect();
    let mut out = Artifacts::default();
    let mut rows = Vec::new();
    for &th in &cfg.thetas {
        let mine: Vec<_> = cells.iter().zip(&results).filter(|((t, _), _)| *t == th).map(|(_, r)| r).collect();
        if let Some(Err(e)) = mine.iter().find(|r| r.is_err()) {
            out.checks.push(Check::new(format!("theta {th}: solve"), false, e.to_string()));
            continue;
        }
        let ok: Vec<_> = mine.into_iter().map(|r| *r.as_ref().unwrap()).collect();
        let errs: Vec<f64> = ok.iter().map(|r| r.4).collect();
        let finite = errs.iter().all(|e| e.is_finite());
        out.checks.push(Check::new(format!("theta {th}: finite errors"), finite, ""));
        if cfg.ode_case == OdeCase::Zero {
            let worst = errs.iter().cloned().fold(0.0, f64::max);
            out.checks.push(Check::new(format!("theta {th}: zero rhs stays put"), worst <= 1e-13, format!("{worst:.2e}")));
        }
        let rs = rates(&errs);
        out.summary.push(format!(
            "theta {th:.4}: rates {}",
            rs.iter().flatten().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
        ));
        for ((_, level, k_max, steps, error), rate) in ok.into_iter().zip(rs) {
            rows.push(OdeRow {
                theta: th,
                level,
                k_max,
                steps,
                error,
                rate,
            });
        }
    }
    out.add_csv("ivp_convergence.csv", to_csv(&rows)?);
    Ok(out)
}

fn manufactured_case(cfg: &ExperimentConfig) -> Result<ManufacturedCase> {
    Ok(ManufacturedCase::new(cfg.case.into(), cfg.omega, cfg.tau)?)
}

#[derive(Serialize)]
struct NseRow {
    theta: f64,
    k: f64,
    u_linf_l2: f64,
    rate_u_l2: Option<f64>,
    u_linf_h1: f64,
    rate_u_h1: Option<f64>,
    p_l2_beta: f64,
    rate_p: Option<f64>,
    max_identity_residual: f64,
    max_divergence: f64,
    min_stability_margin: f64,
}

pub fn nse_converge(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let case = manufactured_case(cfg)?;
    let cells: Vec<(f64, usize)> = cfg.thetas.iter().flat_map(|&t| (0..=cfg.levels).map(move |l| (t, l))).collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(th, level)| {
            let start = Instant::now();
            let run = run_constant_steps(&NseRunConfig {
                theta: theta_of(th)?,
                n: cfg.grid,
                side_length: cfg.side_length,
                case,
                k: cfg.k / (1u64 << level) as f64,
                t_end: cfg.t_end,
                solver: NseSolverConfig::default(),
            });
            Ok::<_, anyhow::Error>((run?, start.elapsed()))
        })
        .collect();
    let mut out = Artifacts::default();
    let mut rows = Vec::new();
    for &th in &cfg.thetas {
        let mut runs = Vec::new();
        for ((t, level), r) in cells.iter().zip(&results) {
            if *t != th {
                continue;
            }
            match r {
                Ok((run, wall)) => {
                    runs.push((cfg.k / (1u64 << level) as f64, run));
                    out.summary.push(format!("theta {th:.4} k {:.5}: {:.2} s", cfg.k / (1u64 << level) as f64, wall.as_secs_f64()));
                }
                Err(e) => out.checks.push(Check::new(format!("theta {th} level {level}: run"), false, e.to_string())),
            }
        }
        let col = |f: &dyn Fn(&dln::nse2d::NseRun) -> f64| runs.iter().map(|(_, r)| f(r)).collect::<Vec<f64>>();
        let (u, h, p) = (col(&|r| r.u_linf_l2), col(&|r| r.u_linf_h1), col(&|r| r.p_l2_beta));
        let (ru, rh, rp) = (rates(&u), rates(&h), rates(&p));
        for (i, (k, run)) in runs.iter().enumerate() {
            let id = run.ledger.max_identity_residual();
            let div = run.ledger.max_divergence();
            let margin = run.stability.min_margin();
            out.checks.push(Check::new(format!("theta {th:.4} k {k}: energy identity"), id <= 1e-8, format!("{id:.2e}")));
            out.checks.push(Check::new(format!("theta {th:.4} k {k}: divergence"), div <= 1e-10, format!("{div:.2e}")));
            out.checks.push(Check::new(format!("theta {th:.4} k {k}: stability bound"), run.stability.holds(), format!("{margin:.3e}")));
            rows.push(NseRow {
                theta: th,
                k: *k,
                u_linf_l2: u[i],
                rate_u_l2: ru[i],
                u_linf_h1: h[i],
                rate_u_h1: rh[i],
                p_l2_beta: p[i],
                rate_p: rp[i],
                max_identity_residual: id,
                max_divergence: div,
                min_stability_margin: margin,
            });
        }
        let fmt = |v: &[Option<f64>]| v.iter().flatten().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
        out.summary.push(format!("theta {th:.4}: velocity rates [{}], pressure rates [{}]", fmt(&ru), fmt(&rp)));
    }
    out.add_csv("nse_convergence.csv", to_csv(&rows)?);
    Ok(out)
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    k: f64,
    energy: f64,
    energy_error: f64,
    #[serde(rename = "E_ND")]
    e_nd: f64,
    #[serde(rename = "E_VD")]
    e_vd: f64,
    estimator: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    algorithm: &'static str,
    theta: f64,
    accepted: usize,
    rejected: usize,
    forced_at_min: usize,
    max_accepted_estimator: f64,
    final_t: f64,
    max_identity_residual: f64,
}

struct AdaptCell {
    algorithm: &'static str,
    theta: f64,
    tol: f64,
    run: Result<AdaptiveRun<dln::nse2d::VelocityField>, String>,
    stepper: NseStepper,
    wall: f64,
}

pub fn nse_adapt(cfg: &ExperimentConfig, svg: bool) -> Result<Artifacts> {
    let case = manufactured_case(cfg)?;
    let algorithms: &[&'static str] = match cfg.algorithm {
        Algorithm::Lte => &["lte"],
        Algorithm::Nd => &["nd"],
        Algorithm::Both => &["lte", "nd"],
    };
    let cells: Vec<(&'static str, f64)> = algorithms
        .iter()
        .flat_map(|&a| cfg.thetas.iter().map(move |&t| (a, t)))
        .collect();
    let results: Vec<Result<AdaptCell>> = cells
        .par_iter()
        .map(|&(algorithm, th)| {
            let tol = if algorithm == "lte" { cfg.tol } else { cfg.tol_nd };
            let controller = ControllerConfig {
                tol,
                kappa: cfg.kappa,
                k0: cfg.k0,
                k_min: cfg.kmin,
                k_max: cfg.kmax,
                estimator_kind: EstimatorKind::Relative,
                ..Default::default()
            };
            let mut stepper = NseStepper::new(case, cfg.grid, cfg.side_length, theta_of(th)?, NseSolverConfig::default())?;
            dln::nse2d::time_diameter_ok(cfg.kmax, &stepper.grid);
            let u0 = stepper.initial_state();
            let start = Instant::now();
            let run = if algorithm == "lte" {
                adapt_loop_lte(&mut stepper, 0.0, u0, &controller, cfg.t_end)
            } else {
                adapt_loop_nd(&mut stepper, 0.0, u0, &controller, cfg.t_end)
            };
            Ok(AdaptCell {
                algorithm,
                theta: th,
                tol,
                run: run.map_err(|a| a.error.to_string()),
                stepper,
                wall: start.elapsed().as_secs_f64(),
            })
        })
        .collect();

    let mut out = Artifacts::default();
    let mut summary = Vec::new();
    for cell in results {
        let cell = cell?;
        let key = format!("{}_theta{:.4}", cell.algorithm, cell.theta);
        let run = match &cell.run {
            Ok(run) => run,
            Err(e) => {
                out.checks.push(Check::new(format!("{key}: run completed"), false, e.clone()));
                continue;
            }
        };
        let led = &run.ledger;
        let after_startup: Vec<_> = led.accepted().filter(|r| r.flag != RowFlag::Startup).collect();
        let max_est = after_startup.iter().map(|r| r.estimator).fold(0.0, f64::max);
        let over = after_startup.iter().filter(|r| !(r.estimator < cell.tol)).count();
        let forced = led.rows.iter().filter(|r| r.flag == RowFlag::ForcedAtMin).count();
        let in_bounds = led.rows.iter().all(|r| r.k_n <= cfg.kmax * (1.0 + 1e-12));
        out.checks.push(Check::new(format!("{key}: accepted criterion below tol"), over == 0, format!("{over} above, max {max_est:.3e}")));
        out.checks.push(Check::new(format!("{key}: steps within bounds"), in_bounds, ""));
        out.checks.push(Check::new(
            format!("{key}: energy identity"),
            cell.stepper.max_identity_residual <= 1e-8,
            format!("{:.2e}", cell.stepper.max_identity_residual),
        ));
        out.checks.push(Check::new(
            format!("{key}: divergence"),
            cell.stepper.max_divergence <= 1e-10,
            format!("{:.2e}", cell.stepper.max_divergence),
        ));

        let traces: Vec<TraceRow> = led
            .accepted()
            .map(|r| {
                let t = r.t_n + r.k_n;
                TraceRow {
                    t,
                    k: r.k_n,
                    energy: r.energy,
                    energy_error: (r.energy - cell.stepper.exact_energy(t)).abs(),
                    e_nd: r.e_nd,
                    e_vd: r.e_vd,
                    estimator: r.estimator,
                }
            })
            .collect();
        if svg {
            let series = |f: &dyn Fn(&TraceRow) -> f64| traces.iter().map(|r| (r.t, f(r))).collect::<Vec<_>>();
            out.svg.insert(format!("steps_{key}.svg"), plot::line_chart(&format!("k_n ({key})"), "k", &series(&|r| r.k))?);
            let est: Vec<(f64, f64)> = traces
                .iter()
                .filter(|r| r.estimator > 0.0)
                .map(|r| (r.t, r.estimator.log10()))
                .collect();
            out.svg.insert(format!("estimator_{key}.svg"), plot::line_chart(&format!("log10 criterion ({key})"), "log10", &est)?);
            out.svg.insert(format!("energy_{key}.svg"), plot::line_chart(&format!("energy ({key})"), "energy", &series(&|r| r.energy))?);
        }
        out.add_csv(format!("traces_{key}.csv"), to_csv(&traces)?);
        out.add_csv(format!("ledger_{key}.csv"), led.to_csv_string());
        out.add_csv(format!("flags_{key}.csv"), led.flags_csv());
        out.summary.push(format!(
            "{key}: {} accepted, {} rejected, {forced} forced at k_min, {:.1} s",
            led.accepted_count(),
            led.rejected_count(),
            cell.wall
        ));
        summary.push(SummaryRow {
            algorithm: cell.algorithm,
            theta: cell.theta,
            accepted: led.accepted_count(),
            rejected: led.rejected_count(),
            forced_at_min: forced,
            max_accepted_estimator: max_est,
            final_t: run.times.last().copied().unwrap_or(0.0),
            max_identity_residual: cell.stepper.max_identity_residual,
        });
    }
    out.add_csv("adapt_summary.csv", to_csv(&summary)?);
    Ok(out)
}
