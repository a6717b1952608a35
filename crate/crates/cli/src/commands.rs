//! The six subcommands.

use serde::Serialize;

use mginf_core::diffusion::{
    laguerre, laguerre_rodrigues, perf_variance_exact, perf_variance_series, BasisFamily,
    LimitInitial, LimitSampler, PerfFunctional, SamplerFunctional,
};
use mginf_core::ensemble::{
    clt_report, exact_mm_infinity_oracle, fluid_error_report, run_ensemble, CellStats,
    DISTRIBUTION_LEVEL, VARIANCE_RTOL,
};
use mginf_core::fluid::FluidModel;
use mginf_core::law::ServiceLaw;
use mginf_core::measure::PointMeasure;
use mginf_core::rng::replication_rng;
use mginf_core::scaling::{predicted_qv, simulate_normalized};
use mginf_core::sim::{martingale_statistic, ProfilePath};
use mginf_core::testfn::TestFunction;
use mginf_core::transport::{
    solve_transport, solved_path, transport_residual, MeasurePathFn, TransportInitial,
};
use mginf_core::{Result, ScalingScheme};

use crate::config::ExperimentConfig;
use crate::output::{check_line, fmt9, quantile, Meta, OutputFormat, OutputSink};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

pub fn cmd_simulate(
    config: &ExperimentConfig,
    seed: u64,
    sink: &OutputSink,
    format: OutputFormat,
) -> Result<u8> {
    let meta = Meta::new("simulate", config, seed);
    let plan = config.plan(seed)?;
    let run = run_ensemble(&plan)?;

    // raw replication values, plot-ready
    let mut rows = Vec::new();
    for (ni, &n) in run.n_values.iter().enumerate() {
        for (ti, &t) in run.t_grid.iter().enumerate() {
            for (fi, label) in run.labels.iter().enumerate() {
                for (r, v) in run.values[ni][ti][fi].iter().enumerate() {
                    rows.push(format!("{n},{},{label},{r},{}", fmt9(t), fmt9(*v)));
                }
            }
        }
    }
    sink.write_csv(&meta, "values.csv", "n,t,functional_id,replication,value", &rows)
        .map_err(io_err)?;

    // per-cell summaries
    #[derive(Serialize)]
    struct SummaryRow {
        n: u32,
        t: f64,
        functional: String,
        #[serde(flatten)]
        stats: CellStats,
    }
    #[derive(Serialize)]
    struct Summary {
        meta: Meta,
        cells: Vec<SummaryRow>,
    }
    let mut cells = Vec::new();
    for (ni, &n) in run.n_values.iter().enumerate() {
        for (ti, &t) in run.t_grid.iter().enumerate() {
            for (fi, label) in run.labels.iter().enumerate() {
                cells.push(SummaryRow {
                    n,
                    t,
                    functional: label.clone(),
                    stats: run.stats(ni, ti, fi),
                });
            }
        }
    }
    match format {
        OutputFormat::Json => sink
            .write_json("summary.json", &Summary { meta: meta.clone(), cells })
            .map_err(io_err)?,
        OutputFormat::Csv => {
            let rows: Vec<String> = cells
                .iter()
                .map(|c| {
                    format!(
                        "{},{},{},{},{},{},{},{},{}",
                        c.n,
                        fmt9(c.t),
                        c.functional,
                        fmt9(c.stats.mean),
                        fmt9(c.stats.variance),
                        fmt9(c.stats.standard_error),
                        fmt9(c.stats.skewness),
                        fmt9(c.stats.excess_kurtosis),
                        c.stats.count
                    )
                })
                .collect();
            sink.write_csv(
                &meta,
                "summary.csv",
                "n,t,functional,mean,variance,standard_error,skewness,excess_kurtosis,count",
                &rows,
            )
            .map_err(io_err)?;
        }
    }

    // trace of the first replication of the first scaling index, plus its
    // profile snapshots at every grid time
    if let Some(&n0) = plan.n_values.first() {
        let mut rng = replication_rng(seed, n0 as u64, 0);
        let horizon = plan.t_grid.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
        let path = simulate_normalized(&plan.scheme, n0, horizon, &mut rng)?;
        let rows: Vec<String> = path
            .arrival_times()
            .iter()
            .zip(path.service_times())
            .enumerate()
            .map(|(i, (a, s))| format!("{i},{},{}", fmt9(*a), fmt9(*s)))
            .collect();
        sink.write_csv(&meta, "path_first.csv", "event_index,arrival_time,service_time", &rows)
            .map_err(io_err)?;
        for &t in &plan.t_grid {
            let snap = path.snapshot(t)?;
            let rows: Vec<String> = snap
                .atoms()
                .iter()
                .map(|a| format!("{},{}", fmt9(a.position), fmt9(a.weight)))
                .collect();
            sink.write_csv(
                &meta,
                &format!("snapshot_t{t}.csv"),
                "position,weight",
                &rows,
            )
            .map_err(io_err)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_fluid(
    config: &ExperimentConfig,
    seed: u64,
    sink: &OutputSink,
    format: OutputFormat,
) -> Result<u8> {
    let meta = Meta::new("fluid", config, seed);
    let model = config.fluid_model()?;
    let times = config
        .fluid_grid
        .as_ref()
        .map(|g| g.times())
        .unwrap_or_else(|| config.t_grid.clone());

    #[derive(Serialize)]
    struct FluidRow {
        t: f64,
        x_star: f64,
        s_star: f64,
        w_star: f64,
    }
    let rows_data: Vec<FluidRow> = times
        .iter()
        .map(|&t| FluidRow {
            t,
            x_star: model.congestion(t),
            s_star: model.service(t),
            w_star: model.workload(t),
        })
        .collect();

    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Out {
                meta: Meta,
                rows: Vec<FluidRow>,
            }
            sink.write_json("fluid.json", &Out { meta, rows: rows_data })
                .map_err(io_err)?;
        }
        OutputFormat::Csv => {
            let rows: Vec<String> = rows_data
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{}",
                        fmt9(r.t),
                        fmt9(r.x_star),
                        fmt9(r.s_star),
                        fmt9(r.w_star)
                    )
                })
                .collect();
            sink.write_csv(&meta, "fluid.csv", "t,X_star,S_star,W_star", &rows)
                .map_err(io_err)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_diffusion(
    config: &ExperimentConfig,
    seed: u64,
    sink: &OutputSink,
    format: OutputFormat,
) -> Result<u8> {
    let meta = Meta::new("diffusion", config, seed);
    let law = &config.service_law;
    let k = config.diffusion.k_max;
    let basis = match law {
        ServiceLaw::Exponential { .. } => BasisFamily::laguerre(law, k.max(1) - 1)?,
        _ => BasisFamily::gram_schmidt(law, k.max(1) - 1)?,
    };
    let functionals = [
        PerfFunctional::Congestion,
        PerfFunctional::Service,
        PerfFunctional::Workload,
    ];
    let sampler = LimitSampler::build(
        config.lambda,
        &basis,
        &LimitInitial::Zero,
        &functionals
            .iter()
            .map(|f| SamplerFunctional::Performance(*f))
            .collect::<Vec<_>>(),
        &config.t_grid,
        k,
        config.diffusion.grid_steps,
    )?;
    let ens = sampler.sample_ensemble(config.diffusion.replications, seed, 0xd1ff);

    #[derive(Serialize)]
    struct DiffusionRow {
        t: f64,
        functional: String,
        variance_exact: f64,
        variance_series_k: f64,
        q05: f64,
        q50: f64,
        q95: f64,
    }
    let mut rows_data = Vec::new();
    for (ti, &t) in sampler.output_times().iter().enumerate() {
        for (fi, f) in functionals.iter().enumerate() {
            let mut col = ens.column(ti, fi);
            col.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
            rows_data.push(DiffusionRow {
                t,
                functional: f.label().to_string(),
                variance_exact: perf_variance_exact(config.lambda, law, *f, t)?,
                variance_series_k: perf_variance_series(config.lambda, &basis, *f, t, k)?,
                q05: quantile(&col, 0.05),
                q50: quantile(&col, 0.50),
                q95: quantile(&col, 0.95),
            });
        }
    }

    match format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Out {
                meta: Meta,
                rows: Vec<DiffusionRow>,
            }
            sink.write_json("diffusion.json", &Out { meta, rows: rows_data })
                .map_err(io_err)?;
        }
        OutputFormat::Csv => {
            let rows: Vec<String> = rows_data
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        fmt9(r.t),
                        r.functional,
                        fmt9(r.variance_exact),
                        fmt9(r.variance_series_k),
                        fmt9(r.q05),
                        fmt9(r.q50),
                        fmt9(r.q95)
                    )
                })
                .collect();
            sink.write_csv(
                &meta,
                "diffusion.csv",
                "t,functional,variance_exact,variance_series_K,q05,q50,q95",
                &rows,
            )
            .map_err(io_err)?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate_fluid(
    config: &ExperimentConfig,
    seed: u64,
    sink: &OutputSink,
) -> Result<u8> {
    let meta = Meta::new("validate-fluid", config, seed);
    let plan = config.plan(seed)?;
    let run = run_ensemble(&plan)?;
    let model = config.fluid_model()?;
    let report = fluid_error_report(&run, &model, &plan)?;

    #[derive(Serialize)]
    struct Out {
        meta: Meta,
        pass: bool,
        report: mginf_core::ensemble::FluidErrorReport,
    }
    let pass = report.all_within_band();
    sink.write_json("validate_fluid.json", &Out { meta, pass, report: report.clone() })
        .map_err(io_err)?;

    let mut lines = Vec::new();
    for r in &report.rows {
        lines.push(check_line(
            &format!("fluid n={} t={} {}", r.n, r.t, r.functional),
            !r.flagged,
            &format!(
                "mean {} fluid {} deviation {} ({}x se)",
                fmt9(r.ensemble_mean),
                fmt9(r.fluid_value),
                fmt9(r.deviation),
                fmt9(if r.standard_error > 0.0 {
                    r.deviation.abs() / r.standard_error
                } else {
                    0.0
                })
            ),
        ));
    }
    for (n, sup) in &report.sup_deviation_per_n {
        lines.push(format!("       sup |deviation| at n={n}: {}", fmt9(*sup)));
    }
    println!("{}", lines.join("\n"));
    Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}

pub fn cmd_validate_clt(config: &ExperimentConfig, seed: u64, sink: &OutputSink) -> Result<u8> {
    let meta = Meta::new("validate-clt", config, seed);
    let plan = config.plan(seed)?;
    let run = run_ensemble(&plan)?;
    let model = config.fluid_model()?;
    let report = clt_report(&run, &model, &plan)?;

    let pass = report
        .rows
        .iter()
        .all(|r| r.variance_rel_error.abs() <= VARIANCE_RTOL && r.ks_fitted_pass);

    #[derive(Serialize)]
    struct Out {
        meta: Meta,
        pass: bool,
        variance_rtol: f64,
        distribution_level: f64,
        report: mginf_core::ensemble::CltReport,
    }
    sink.write_json(
        "validate_clt.json",
        &Out {
            meta,
            pass,
            variance_rtol: VARIANCE_RTOL,
            distribution_level: DISTRIBUTION_LEVEL,
            report: report.clone(),
        },
    )
    .map_err(io_err)?;

    for r in &report.rows {
        println!(
            "{}",
            check_line(
                &format!("clt n={} t={} {}", r.n, r.t, r.functional),
                r.variance_rel_error.abs() <= VARIANCE_RTOL && r.ks_fitted_pass,
                &format!(
                    "variance {} vs {} ({:+.2}%), skew {:+.3}, exkurt {:+.3}, KS fitted {} (crit {})",
                    fmt9(r.empirical_variance),
                    fmt9(r.predicted_variance),
                    r.variance_rel_error * 100.0,
                    r.skewness,
                    r.excess_kurtosis,
                    fmt9(r.ks_fitted),
                    fmt9(r.ks_fitted_critical),
                ),
            )
        );
    }
    Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}

/// The deterministic analytic/property battery; no randomness beyond fixed
/// seeds, nonzero exit on any failure.
pub fn cmd_selftest(sink: &OutputSink) -> Result<u8> {
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut lines = Vec::new();
    let mut record = |name: &str, pass: bool, detail: String| {
        lines.push(check_line(name, pass, &detail));
        checks.push((name.to_string(), pass));
    };

    let law = ServiceLaw::exponential(1.0).expect("unit rate");
    let model = FluidModel::empty_start(1.0, law.clone())?;

    // classical-transient pinning of fluid and diffusion congestion values
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0, 4.0] {
        let oracle = exact_mm_infinity_oracle(1.0, &law, t, 100)?;
        worst = worst.max((model.congestion(t) - oracle.mean / 100.0).abs());
        let var = perf_variance_exact(1.0, &law, PerfFunctional::Congestion, t)?;
        worst = worst.max((var - oracle.variance() / 100.0).abs());
    }
    record("transient-oracle pinning", worst <= 1e-12, format!("worst gap {}", fmt9(worst)));

    // transport solver residuals and the fluid identification
    let horizon = 3.0;
    let g = MeasurePathFn::linear_forcing(law.clone(), 1.0, horizon);
    let problems = [
        (TransportInitial::Measure(PointMeasure::dirac(1.0)), MeasurePathFn::zero(horizon)),
        (TransportInitial::Zero, g.clone()),
    ];
    let probes = [
        TestFunction::gaussian_bump(0.5, 0.8),
        TestFunction::logistic(1.0, 0.7),
    ];
    let mut worst_res: f64 = 0.0;
    let mut residual_rows = Vec::new();
    for (k, gg) in &problems {
        let x = solved_path(k.clone(), gg.clone());
        for &t in &[0.75, 2.0] {
            for phi in &probes {
                let r = transport_residual(&x, k, gg, t, phi)?;
                residual_rows.push(format!("{},{},{}", fmt9(t), phi.label(), fmt9(r)));
                worst_res = worst_res.max(r.abs());
            }
        }
    }
    record("transport solver residual", worst_res <= 1e-6, format!("worst {}", fmt9(worst_res)));

    let mut worst_ident: f64 = 0.0;
    for &t in &[0.75, 2.0] {
        for phi in &probes {
            let via_solver = solve_transport(&TransportInitial::Zero, &g, t, phi)?;
            worst_ident = worst_ident.max((via_solver - model.pairing(t, phi)?).abs());
        }
    }
    record("solver matches fluid profile", worst_ident <= 1e-6, format!("worst {}", fmt9(worst_ident)));

    // basis battery
    let basis = BasisFamily::laguerre(&law, 12)?;
    let ortho = basis.orthonormality_error(10)?;
    record("Laguerre orthonormality (order 10)", ortho <= 1e-8, format!("defect {}", fmt9(ortho)));
    let mut rod: f64 = 0.0;
    for i in 0..=8 {
        let mut x = 0.0;
        while x <= 20.0 {
            rod = rod.max((laguerre(i, x) - laguerre_rodrigues(i, x)).abs());
            x += 0.5;
        }
    }
    record("recurrence vs Rodrigues (order 8)", rod <= 1e-9, format!("worst {}", fmt9(rod)));
    let gs = BasisFamily::gram_schmidt(&law, 6)?;
    let mut gs_gap: f64 = 0.0;
    for i in 0..=6 {
        let sign = if gs.h(i, 0.0) >= 0.0 { 1.0 } else { -1.0 };
        let mut x = 0.0;
        while x <= 8.0 {
            gs_gap = gs_gap.max((sign * gs.h(i, x) - laguerre(i, x)).abs());
            x += 0.5;
        }
    }
    record("Gram-Schmidt rediscovers Laguerre", gs_gap <= 1e-6, format!("worst {}", fmt9(gs_gap)));

    // law closed forms: mean/tail/tail-excess identities per config law
    let laws = [
        ServiceLaw::exponential(2.0).expect("rate"),
        ServiceLaw::uniform(0.0, 2.0).expect("bounds"),
        ServiceLaw::deterministic(1.5).expect("point"),
        ServiceLaw::mixture(vec![
            (0.5, ServiceLaw::exponential(1.0).expect("rate")),
            (0.5, ServiceLaw::uniform(0.5, 1.5).expect("bounds")),
        ])
        .expect("mixture"),
    ];
    let mut law_ok = true;
    let mut law_worst: f64 = 0.0;
    for l in &laws {
        let gap = (l.tail_excess(0.0) - l.mean()).abs();
        law_worst = law_worst.max(gap);
        law_ok &= gap <= 1e-9 && l.tail(0.0) == 1.0;
        let far = l.upper_quantile() + 1.0;
        law_ok &= (l.integrated_tail(far) - l.mean()).abs() <= 1e-6 * l.mean();
    }
    record("service-law partial moments", law_ok, format!("worst excess gap {}", fmt9(law_worst)));

    // conservation of the fluid curves for a mixed model
    let mixed = FluidModel::empty_start(1.3, laws[3].clone())?;
    let mut cons: f64 = 0.0;
    for i in 0..=30 {
        let t = i as f64 * 0.2;
        cons = cons.max((mixed.congestion(t) + mixed.service(t) - 1.3 * t).abs());
    }
    record("fluid conservation", cons <= 1e-9, format!("worst {}", fmt9(cons)));

    // shift duality is bit-exact on a probe measure
    let mu = PointMeasure::from_atoms(vec![(0.3, 0.7), (-1.2, 0.1), (5.5, 2.0)]).expect("atoms");
    let phi = TestFunction::gaussian_bump(0.4, 0.9);
    let dual_ok = (0..6).all(|i| {
        let t = i as f64 * 0.7 - 2.0;
        mu.shift(t).integrate(&phi) == mu.integrate(&phi.shift(t))
    });
    record("shift duality bit-exact", dual_ok, String::new());

    // Parseval collapse where the series converges at the default truncation
    let basis32 = BasisFamily::laguerre(&law, 32)?;
    let exact_w = perf_variance_exact(1.0, &law, PerfFunctional::Workload, 1.0)?;
    let series_w = perf_variance_series(1.0, &basis32, PerfFunctional::Workload, 1.0, 32)?;
    let rel_w = ((series_w - exact_w) / exact_w).abs();
    record("Parseval collapse (workload, K=32)", rel_w <= 0.01, format!("defect {:.3}%", rel_w * 100.0));

    // martingale cancellation with no arrivals, and the qv formula
    let quiet = ProfilePath::inject(vec![], vec![], PointMeasure::dirac(0.8), 2.0)?;
    let m0 = martingale_statistic(&quiet, &phi, 0.0, &law, 1.5)?;
    record("zero-arrival martingale cancellation", m0.abs() <= 1e-8, format!("|M| = {}", fmt9(m0.abs())));
    let scheme = ScalingScheme::new(1.0, law.clone(), PointMeasure::empty())?;
    let qv = predicted_qv(&scheme, 100, &TestFunction::constant(1.0), 2.0)?;
    record("predicted quadratic variation", (qv - 0.02).abs() <= 1e-10, format!("value {}", fmt9(qv)));

    println!("{}", lines.join("\n"));
    let failed: Vec<&String> = checks.iter().filter(|(_, p)| !p).map(|(n, _)| n).collect();
    if sink.enabled() {
        // residual report artifact (t, functional_id, residual)
        let canonical: ExperimentConfig = serde_json::from_str(crate::CANONICAL_CONFIG).expect("canonical config parses");
        let meta = Meta::new("selftest", &canonical, 0);
        sink.write_csv(&meta, "residuals.csv", "t,functional_id,residual", &residual_rows)
            .map_err(io_err)?;
    }
    if failed.is_empty() {
        println!("selftest: all {} checks passed", checks.len());
        Ok(EXIT_OK)
    } else {
        println!("selftest: {} of {} checks FAILED: {failed:?}", failed.len(), checks.len());
        Ok(EXIT_ACCEPTANCE)
    }
}

fn io_err(e: std::io::Error) -> mginf_core::CoreError {
    mginf_core::CoreError::Precondition(format!("io error: {e}"))
}
