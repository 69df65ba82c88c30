use std::fs;
use std::path::Path;

use abx_core::cramer_rao::cr_lower_bound;
use abx_core::simulator::outcomes_to_csv;
use abx_core::{
    ade, booking_rate, classify_sign, dm_asymptotic_variance, fnp_curves, growth_scan, gte,
    logit_scenario, naive_test_power, rejection_curves, run_replications,
    run_replications_detailed, Arm, CurveMode, GrowthScan, InitialState, LogitParams,
    PlatformModel, PowerCurve, SimConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    AnalyzeArgs, FigureArgs, FigureId, FileConfig, Format, NRange, OutputArgs, ScenarioArgs,
    ScenarioId, SimulateArgs,
};
use crate::error::{invalid, CliError};
use crate::svg::{Chart, Series};

const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_FIG3_R: u64 = 50_000;

struct Ctx {
    file: FileConfig,
    scenario: ScenarioArgs,
    output: OutputArgs,
}

impl Ctx {
    fn new(
        scenario: ScenarioArgs,
        output: OutputArgs,
        default_format: Format,
    ) -> Result<Ctx, CliError> {
        let file = FileConfig::load(scenario.config.as_deref())?;
        let dir = scenario
            .config
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf);
        let scenario = scenario.merge(&file, dir.as_deref());
        let output = output.merge(&file, default_format);
        fs::create_dir_all(output.dir()).map_err(|e| {
            CliError::Validation(format!(
                "cannot create output directory {}: {e}",
                output.dir().display()
            ))
        })?;
        Ok(Ctx {
            file,
            scenario,
            output,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.output.dir().join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Numerical(format!("cannot serialize {name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }

    fn alpha(&self, flag: Option<f64>) -> f64 {
        flag.or(self.file.alpha).unwrap_or(DEFAULT_ALPHA)
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.file.seed).unwrap_or(0)
    }
}

// -- analyze ----------------------------------------------------------------

#[derive(Serialize)]
struct Analysis {
    scenario: String,
    #[serde(rename = "K")]
    k: usize,
    a: f64,
    rho0: f64,
    rho1: f64,
    gte: f64,
    ade: f64,
    sign_class: abx_core::SignClass,
    asymptotics: abx_core::AsymptoticReport,
    cr_bound: abx_core::CRBound,
    warnings: Vec<String>,
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args.scenario, args.output, Format::Json)?;
    let model = ctx.scenario.build(ScenarioId::Logit)?;
    let a = ctx.scenario.allocation();
    let report = dm_asymptotic_variance(&model, a)?;
    let cr = cr_lower_bound(&model, a)?;
    let analysis = Analysis {
        scenario: ctx.scenario.label(ScenarioId::Logit),
        k: model.k(),
        a,
        rho0: booking_rate(&model, Arm::Control)?,
        rho1: booking_rate(&model, Arm::Treatment)?,
        gte: gte(&model)?,
        ade: ade(&model, a)?,
        sign_class: classify_sign(&model),
        asymptotics: report,
        cr_bound: cr,
        warnings: model.warnings(),
    };

    let rows: Vec<(&str, f64)> = vec![
        ("rho0", analysis.rho0),
        ("rho1", analysis.rho1),
        ("gte", analysis.gte),
        ("ade", analysis.ade),
        ("v0", analysis.asymptotics.v0),
        ("v1", analysis.asymptotics.v1),
        ("cov_tail", analysis.asymptotics.cov_tail),
        ("sigma_tilde_sq", analysis.asymptotics.sigma_tilde_sq),
        ("naive_limit", analysis.asymptotics.naive_limit),
        ("sigma_ub_sq", analysis.cr_bound.sigma_ub_sq),
    ];
    println!(
        "scenario  {}  (K = {}, a = {a})",
        analysis.scenario, analysis.k
    );
    println!("sign      {:?}", analysis.sign_class);
    for (name, v) in &rows {
        println!("{name:<15} {v:>14.8}");
    }
    for w in &analysis.warnings {
        println!("note: {w}");
    }

    if ctx.output.wants(Format::Json) {
        ctx.write_json("analysis.json", &analysis)?;
    }
    if ctx.output.wants(Format::Csv) {
        let mut csv = String::from("quantity,value\n");
        for (name, v) in &rows {
            csv.push_str(&format!("{name},{v}\n"));
        }
        ctx.write("analysis.csv", &csv)?;
    }
    if ctx.output.wants(Format::Svg) {
        return invalid("analyze has no svg output");
    }
    Ok(())
}

// -- simulate ---------------------------------------------------------------

fn parse_initial(s: &str) -> Result<InitialState, CliError> {
    match s {
        "control" => Ok(InitialState::ControlSteadyState),
        "treatment" => Ok(InitialState::TreatmentSteadyState),
        "experiment" => Ok(InitialState::ExperimentSteadyState),
        other => other.parse().map(InitialState::Fixed).map_err(|_| {
            CliError::Validation(format!(
                "--initial must be control, treatment, experiment or a listing count, got {other:?}"
            ))
        }),
    }
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args.scenario, args.output, Format::Json)?;
    if ctx.output.wants(Format::Svg) {
        return invalid("simulate has no svg output");
    }
    let model = ctx.scenario.build(ScenarioId::Logit)?;
    let n = args.n.or(ctx.file.n).unwrap_or(2000);
    let r = args.r.or(ctx.file.r).unwrap_or(1000);
    let initial = match args.initial.or(ctx.file.initial.clone()) {
        Some(s) => parse_initial(&s)?,
        None => InitialState::ControlSteadyState,
    };
    let cfg = SimConfig::new(model, ctx.scenario.allocation(), n, r)
        .with_seed(ctx.seed(args.seed))
        .with_alpha(ctx.alpha(args.alpha))
        .with_initial(initial);
    let (summary, outcomes) = run_replications_detailed(&cfg)?;
    println!(
        "reject_rate {:.5} (se {:.5}), mean gte_hat {:.6} (se {:.6}), degenerate {}",
        summary.reject_rate,
        summary.reject_se,
        summary.mean_gte_hat,
        summary.gte_hat_se,
        summary.degenerate_count
    );
    if ctx.output.wants(Format::Json) {
        ctx.write("summary.json", &(summary.to_json() + "\n"))?;
    }
    if ctx.output.wants(Format::Csv) {
        ctx.write("replications.csv", &outcomes_to_csv(&outcomes))?;
    }
    Ok(())
}

// -- figures ----------------------------------------------------------------

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).round() as u64)
        .collect()
}

fn curve_chart(curve: &PowerCurve, title: &str, y_label: &str) -> Chart {
    let col =
        |f: fn(&abx_core::PowerRow) -> f64| curve.rows.iter().map(|r| (r.n as f64, f(r))).collect();
    Chart {
        title: title.into(),
        x_label: "N".into(),
        y_label: y_label.into(),
        log_x: true,
        series: vec![
            Series {
                name: "naive".into(),
                points: col(|r| r.naive),
            },
            Series {
                name: "unbiased".into(),
                points: col(|r| r.unbiased),
            },
        ],
    }
}

fn emit<T: Serialize>(
    ctx: &Ctx,
    stem: &str,
    csv: &str,
    json: &T,
    chart: impl FnOnce() -> Chart,
) -> Result<(), CliError> {
    if ctx.output.wants(Format::Csv) {
        ctx.write(&format!("{stem}.csv"), csv)?;
    }
    if ctx.output.wants(Format::Json) {
        ctx.write_json(&format!("{stem}.json"), json)?;
    }
    if ctx.output.wants(Format::Svg) {
        ctx.write(&format!("{stem}.svg"), &chart().render())?;
    }
    Ok(())
}

pub const FIG3_CSV_HEADER: &str = "N,reject_rate,reject_se,analytic_fpp";
pub const SWEEP_CSV_HEADER: &str = "parameter,value,sigma_ub_sq,naive_limit";

#[derive(Serialize)]
struct Fig3Row {
    #[serde(rename = "N")]
    n: u64,
    reject_rate: f64,
    reject_se: f64,
    analytic_fpp: f64,
}

#[derive(Serialize)]
struct SweepRow {
    parameter: &'static str,
    value: f64,
    sigma_ub_sq: f64,
    naive_limit: f64,
}

pub fn figures(args: FigureArgs) -> Result<(), CliError> {
    let ctx = Ctx::new(args.scenario.clone(), args.output.clone(), Format::Csv)?;
    let a = ctx.scenario.allocation();
    match args.figure {
        FigureId::Fig1 => {
            let ks = if !args.k_grid.is_empty() {
                args.k_grid.clone()
            } else {
                ctx.file
                    .k_grid
                    .clone()
                    .unwrap_or_else(|| vec![100, 150, 200, 250, 300])
            };
            let scan: GrowthScan =
                growth_scan(ctx.scenario.family(ScenarioId::Logit)?.as_ref(), &ks, a)?;
            if let Some(fit) = scan.log_fit {
                println!(
                    "log sigma_ub_sq vs K: slope {:.4e}, R^2 {:.5}",
                    fit.slope, fit.r_squared
                );
            }
            emit(&ctx, "fig1", &scan.to_csv(), &scan, || Chart {
                title: "Variance bound and naive limit".into(),
                x_label: "K".into(),
                y_label: "variance".into(),
                log_x: false,
                series: vec![
                    Series {
                        name: "sigma_ub_sq".into(),
                        points: scan
                            .rows
                            .iter()
                            .map(|r| (r.k as f64, r.sigma_ub_sq))
                            .collect(),
                    },
                    Series {
                        name: "naive_limit".into(),
                        points: scan
                            .rows
                            .iter()
                            .map(|r| (r.k as f64, r.naive_limit))
                            .collect(),
                    },
                ],
            })
        }
        FigureId::Fig2 => {
            let model = ctx.scenario.build(ScenarioId::Logit)?;
            let grid = log_grid(1e3, 1e5, 20);
            let curve = fnp_curves(
                &model,
                a,
                &grid,
                ctx.alpha(args.alpha),
                &ctx.scenario.label(ScenarioId::Logit),
            )?;
            emit(&ctx, "fig2", &curve.to_csv(), &curve, || {
                curve_chart(&curve, "Log10 false negative probability", "log10 FNP")
            })
        }
        FigureId::Fig3 => fig3(&ctx, &args, a),
        FigureId::Fig4 => {
            let model = ctx.scenario.build(ScenarioId::Example2)?;
            let grid = log_grid(1e3, 1e5, 20);
            let curve = rejection_curves(
                &model,
                a,
                &grid,
                ctx.alpha(args.alpha),
                CurveMode::Power,
                &ctx.scenario.label(ScenarioId::Example2),
            )?;
            emit(&ctx, "fig4", &curve.to_csv(), &curve, || {
                curve_chart(&curve, "Power of the naive and unbiased tests", "power")
            })
        }
        FigureId::AppendixC => appendix_c(&ctx, a),
    }
}

fn fig3(ctx: &Ctx, args: &FigureArgs, a: f64) -> Result<(), CliError> {
    let model = ctx.scenario.build(ScenarioId::Example1)?;
    let alpha = ctx.alpha(args.alpha);
    let r = args.r.or(ctx.file.r).unwrap_or(DEFAULT_FIG3_R);
    let seed = ctx.seed(args.seed);
    let grid: Vec<u64> = match args.n_range.or(ctx.file.n_range).unwrap_or(NRange::Short) {
        NRange::Short => vec![100, 250, 500, 1000, 2500, 5000],
        NRange::Long => log_grid(1e3, 1e5, 10),
    };
    let rows = grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let cfg = SimConfig::new(model.clone(), a, n, r)
                .with_seed(seed.wrapping_add(i as u64))
                .with_alpha(alpha);
            let s = run_replications(&cfg)?;
            eprintln!("N = {n}: reject_rate {:.4}", s.reject_rate);
            Ok(Fig3Row {
                n,
                reject_rate: s.reject_rate,
                reject_se: s.reject_se,
                analytic_fpp: naive_test_power(&model, a, n, alpha)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut csv = format!("{FIG3_CSV_HEADER}\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.n, row.reject_rate, row.reject_se, row.analytic_fpp
        ));
    }
    emit(ctx, "fig3", &csv, &rows, || Chart {
        title: "False positive probability of the naive test".into(),
        x_label: "N".into(),
        y_label: "FPP".into(),
        log_x: true,
        series: vec![
            Series {
                name: "simulated".into(),
                points: rows.iter().map(|r| (r.n as f64, r.reject_rate)).collect(),
            },
            Series {
                name: "analytic".into(),
                points: rows.iter().map(|r| (r.n as f64, r.analytic_fpp)).collect(),
            },
        ],
    })
}

fn sweep_points(base: LogitParams) -> Vec<(&'static str, f64, LogitParams)> {
    let mut pts = Vec::new();
    for k in [100usize, 150, 200, 250, 300] {
        pts.push(("K", k as f64, LogitParams { k, ..base }));
    }
    for i in 0..=4 {
        let v = 1.5 + 0.25 * i as f64;
        pts.push((
            "lambda_bar",
            v,
            LogitParams {
                lambda_bar: v,
                ..base
            },
        ));
    }
    for i in 1..=10 {
        let v = 0.01 * i as f64;
        pts.push(("delta", v, LogitParams { delta: v, ..base }));
    }
    for i in 0..=4 {
        let v = 0.5 + 0.25 * i as f64;
        pts.push(("eps_bar", v, LogitParams { eps_bar: v, ..base }));
    }
    pts
}

fn appendix_c(ctx: &Ctx, a: f64) -> Result<(), CliError> {
    let base = ctx.scenario.sweep_base()?;
    let rows = sweep_points(base)
        .par_iter()
        .map(|&(parameter, value, p)| {
            let model: PlatformModel = logit_scenario(&p)?;
            let report = dm_asymptotic_variance(&model, a)?;
            Ok(SweepRow {
                parameter,
                value,
                sigma_ub_sq: cr_lower_bound(&model, a)?.sigma_ub_sq,
                naive_limit: report.naive_limit,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.parameter, r.value, r.sigma_ub_sq, r.naive_limit
        ));
    }
    if ctx.output.wants(Format::Csv) {
        ctx.write("appendixC.csv", &csv)?;
    }
    if ctx.output.wants(Format::Json) {
        ctx.write_json("appendixC.json", &rows)?;
    }
    if ctx.output.wants(Format::Svg) {
        for param in ["K", "lambda_bar", "delta", "eps_bar"] {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.parameter == param).collect();
            let chart = Chart {
                title: format!("Variance bound and naive limit, varying {param}"),
                x_label: param.into(),
                y_label: "variance".into(),
                log_x: false,
                series: vec![
                    Series {
                        name: "sigma_ub_sq".into(),
                        points: sel.iter().map(|r| (r.value, r.sigma_ub_sq)).collect(),
                    },
                    Series {
                        name: "naive_limit".into(),
                        points: sel.iter().map(|r| (r.value, r.naive_limit)).collect(),
                    },
                ],
            };
            ctx.write(&format!("appendixC_{param}.svg"), &chart.render())?;
        }
    }
    Ok(())
}
