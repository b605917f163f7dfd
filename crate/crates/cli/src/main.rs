//! `kfplab`: command-line front end.
//!
//! Exit codes: 0 pass, 1 a check failed or a computation did not converge,
//! 2 usage or configuration error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use kfplab_core::geometry::estimate_structural_constants;
use kfplab_core::kernel::{covariance, QuadratureSpec};
use kfplab_core::moduli::{m_transform, n_transform, u_mu_transform, v_mu_transform, ModulusDoc};
use kfplab_core::representation::{cauchy_solve, repr_field, Expr, ReprKind};
use kfplab_core::verify::{report_write, run_scenario, Scenario};
use kfplab_core::{DomainBox, KfpError, Modulus, ModelStructure};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kfplab", version, about = "Kolmogorov-Fokker-Planck kernels, moduli and estimate checks")]
struct Cli {
    /// Scenario JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output: report directory for `verify`, a file otherwise (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Absolute accuracy target of the quadratures.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Block structure, exponents and sampled quasi-distance constants.
    Structure {
        /// Block sizes, e.g. `1,1`; taken from the config when absent.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// CSV of `omega, M, N, U^mu, V^mu` on a radius grid.
    Moduli {
        /// Modulus as JSON; the config bank when absent.
        #[arg(long)]
        modulus: Option<String>,
        /// Radii; 13 log-spaced points in `[1e-4, 1]` when absent.
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// `Gamma(x,t;y,s)` and its covariance.
    Kernel {
        /// `x1,..,xN,t,y1,..,yN,s`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eval: Vec<f64>,
    },
    /// `u(x,t) = int Gamma(x,t;y,s) f(y) dy` for a datum expression in `x1..xN`.
    Cauchy {
        #[arg(long)]
        datum: String,
        /// `x1,..,xN,t`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        from: f64,
    },
    /// `T_ij g` for a named scenario source.
    Hessian {
        #[arg(long)]
        source: String,
        /// `x1,..,xN,t`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Vec<f64>,
        /// `i,j`, zero-based.
        #[arg(long, value_delimiter = ',')]
        ij: Vec<usize>,
    },
    /// Runs every check of the scenario and writes the reports.
    Verify,
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<KfpError>() {
        Some(
            KfpError::Config { .. }
            | KfpError::Io(_)
            | KfpError::InvalidArgument { .. }
            | KfpError::Dimension { .. }
            | KfpError::Expression(_),
        ) => 2,
        _ => 1,
    }
}

fn scenario(cli: &Cli) -> anyhow::Result<Scenario> {
    let path = cli.config.as_ref().ok_or_else(|| usage("--config is required"))?;
    let sc = Scenario::load(path)?;
    if cli.seed.is_none() && cli.tolerance.is_none() {
        return Ok(sc);
    }
    let mut doc = sc.doc().clone();
    if let Some(seed) = cli.seed {
        doc.seed = seed;
    }
    if let Some(tol) = cli.tolerance {
        doc.repr.budget = tol;
    }
    Ok(Scenario::from_doc(doc)?)
}

fn emit(cli: &Cli, text: &str) -> anyhow::Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).with_context(|| p.display().to_string()).map_err(|e| usage(e.to_string())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn split_point(v: &[f64], n: usize, what: &str) -> anyhow::Result<(Vec<f64>, f64)> {
    if v.len() != n + 1 {
        bail!(usage(format!("{what} needs {} numbers, got {}", n + 1, v.len())));
    }
    Ok((v[..n].to_vec(), v[n]))
}

fn structure(cli: &Cli, m: &Option<Vec<usize>>, samples: usize) -> anyhow::Result<bool> {
    let (s, domain, seed) = match (m, &cli.config) {
        (Some(m), _) => {
            let s = ModelStructure::build(m, None)?;
            let d = DomainBox::cube(s.dim(), 1.0, (0.0, 1.0));
            (s, d, cli.seed.unwrap_or(0))
        }
        (None, Some(_)) => {
            let sc = scenario(cli)?;
            (sc.structure.clone(), sc.domain.clone(), sc.seed)
        }
        (None, None) => bail!(usage("give --m or --config")),
    };
    let c = estimate_structural_constants(&s, samples, seed, &domain)?;
    let v = json!({
        "structure": s.to_doc(),
        "dim": s.dim(),
        "q": s.q(),
        "hom_dim": s.hom_dim(),
        "exponents": s.exponents(),
        "kappa": c.kappa,
        "vartheta": c.vartheta,
        "c_e": c.c_e,
        "c_holder": c.c_holder,
        "c_holder_ts": c.c_holder_ts,
        "sample_count": c.sample_count,
        "seed": c.seed,
    });
    emit(cli, &format!("{}\n", serde_json::to_string_pretty(&v)?))?;
    Ok(true)
}

fn cell(v: kfplab_core::Result<f64>) -> anyhow::Result<String> {
    match v {
        Ok(x) => Ok(x.to_string()),
        Err(KfpError::Divergent) => Ok("inf".into()),
        Err(e) => Err(e.into()),
    }
}

fn moduli(cli: &Cli, modulus: &Option<String>, radii: &Option<Vec<f64>>, mu: Option<f64>) -> anyhow::Result<bool> {
    let sc = match &cli.config {
        Some(_) => Some(scenario(cli)?),
        None => None,
    };
    let bank: Vec<Modulus> = match (modulus, &sc) {
        (Some(text), _) => {
            let doc: ModulusDoc = serde_json::from_str(text).map_err(|e| usage(format!("--modulus: {e}")))?;
            vec![Modulus::from_doc(&doc)?]
        }
        (None, Some(sc)) if !sc.moduli.is_empty() => sc.moduli.clone(),
        _ => bail!(usage("give --modulus or a config with a moduli bank")),
    };
    let structure = match &sc {
        Some(sc) => sc.structure.clone(),
        None => ModelStructure::build(&[1, 1], None)?,
    };
    let mu = mu.or(sc.as_ref().map(|s| s.mu)).unwrap_or(0.25);
    let radii = radii.clone().unwrap_or_else(|| (0..13).map(|k| 10f64.powf(-4.0 + k as f64 / 3.0)).collect());
    if radii.iter().any(|r| !(*r > 0.0)) {
        bail!(usage("radii must be > 0"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["modulus", "r", "omega", "M", "N", "U_mu", "V_mu"])?;
    for m in &bank {
        for &r in &radii {
            w.write_record([
                m.name().to_string(),
                r.to_string(),
                m.eval(r).to_string(),
                cell(m_transform(m, r))?,
                cell(n_transform(m, r))?,
                cell(u_mu_transform(m, mu, r, &structure))?,
                cell(v_mu_transform(m, mu, r, &structure))?,
            ])?;
        }
    }
    emit(cli, &String::from_utf8(w.into_inner()?)?)?;
    Ok(true)
}

fn kernel(cli: &Cli, eval: &[f64]) -> anyhow::Result<bool> {
    let sc = scenario(cli)?;
    let n = sc.structure.dim();
    if eval.len() != 2 * n + 2 {
        bail!(usage(format!("--eval needs x (N = {n}), t, y, s: {} numbers, got {}", 2 * n + 2, eval.len())));
    }
    let (x, t, y, s) = (&eval[..n], eval[n], &eval[n + 1..2 * n + 1], eval[2 * n + 1]);
    let model = sc.coefficients.without_perturbation();
    let v = if t > s {
        let ws = covariance(&model, t, s)?;
        json!({
            "gamma": ws.gamma(x, y),
            "mean": (&ws.e_ts * nalgebra::DVector::from_column_slice(y)).as_slice(),
            "covariance": ws.c.row_iter().map(|r| r.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    } else {
        json!({ "gamma": 0.0 })
    };
    emit(cli, &format!("{}\n", serde_json::to_string_pretty(&v)?))?;
    Ok(true)
}

fn cauchy(cli: &Cli, datum: &str, at: &[f64], from: f64) -> anyhow::Result<bool> {
    let sc = scenario(cli)?;
    let n = sc.structure.dim();
    let (x, t) = split_point(at, n, "--at")?;
    if !(t > from) {
        bail!(usage("the evaluation time must exceed --from"));
    }
    let f = Expr::parse(datum, n)?;
    let g = |y: &[f64]| f.eval(y, from);
    let mut spec = QuadratureSpec { max_order: 256, ..Default::default() };
    if let Some(tol) = cli.tolerance {
        spec.tol = tol;
    }
    let model = sc.coefficients.without_perturbation();
    let r = cauchy_solve(&model, &g, from, &x, t, &spec)?;
    let v = json!({ "u": r.value, "error_estimate": r.error_estimate, "order": r.inner_order });
    emit(cli, &format!("{}\n", serde_json::to_string_pretty(&v)?))?;
    Ok(true)
}

fn hessian(cli: &Cli, source: &str, at: &[f64], ij: &[usize]) -> anyhow::Result<bool> {
    let sc = scenario(cli)?;
    let n = sc.structure.dim();
    let q = sc.structure.q();
    let (x, t) = split_point(at, n, "--at")?;
    let [i, j] = ij else { bail!(usage("--ij needs two indices")) };
    if *i >= q || *j >= q {
        bail!(usage(format!("--ij indices must be < q = {q}")));
    }
    let kind = ReprKind::Hessian(*i, *j);
    let model = &sc.coefficients;
    let v = if let Some(src) = sc.sources.iter().find(|s| s.name == source) {
        let time_only = model.without_perturbation();
        let r = repr_field(&time_only, src, kind, &[(x.clone(), t)], &sc.repr)?;
        json!({ "value": r[0].value, "error_estimate": r[0].error_estimate, "slices": r[0].slices })
    } else if let Some(u) = sc.solutions.iter().find(|u| u.name == source) {
        let (fm, src) = if model.is_time_only() {
            (model.clone(), u.source(model, sc.seed)?)
        } else {
            (model.frozen_at(&x)?, u.frozen_source(model, &x, sc.seed)?)
        };
        let r = repr_field(&fm, &src, kind, &[(x.clone(), t)], &sc.repr)?;
        json!({
            "value": r[0].value,
            "error_estimate": r[0].error_estimate,
            "slices": r[0].slices,
            "exact": u.hessian(&x, t)[(*i, *j)],
        })
    } else {
        bail!(usage(format!("no source named `{source}`")));
    };
    emit(cli, &format!("{}\n", serde_json::to_string_pretty(&v)?))?;
    Ok(true)
}

fn verify(cli: &Cli, threads: usize) -> anyhow::Result<bool> {
    let sc = scenario(cli)?;
    let bundle = run_scenario(&sc);
    let out = cli.out.clone().unwrap_or_else(|| Path::new("reports").join(&sc.name));
    let info = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.name,
        "seed": sc.seed,
        "threads": threads,
        "tolerance": cli.tolerance,
    });
    report_write(&bundle, &out, &info)?;
    for r in &bundle.reports {
        println!(
            "{:<6} {:<28} c*={:<12.4e} stability={:.3}",
            if r.pass { "PASS" } else { "FAIL" },
            r.inequality_id,
            r.c_star,
            r.stability
        );
    }
    for f in &bundle.failures {
        println!("ERROR  {:?}: {}", f.check, f.error);
    }
    println!("reports written to {}", out.display());
    Ok(bundle.pass())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Some(t) = cli.tolerance {
        if !(t > 0.0) {
            bail!(usage("--tolerance must be > 0"));
        }
    }
    match &cli.cmd {
        Cmd::Structure { m, samples } => structure(cli, m, *samples),
        Cmd::Moduli { modulus, radii, mu } => moduli(cli, modulus, radii, *mu),
        Cmd::Kernel { eval } => kernel(cli, eval),
        Cmd::Cauchy { datum, at, from } => cauchy(cli, datum, at, *from),
        Cmd::Hessian { source, at, ij } => hessian(cli, source, at, ij),
        Cmd::Verify => verify(cli, rayon::current_num_threads()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
