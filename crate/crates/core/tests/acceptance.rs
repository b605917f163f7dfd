//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! lines print in order; exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kfplab_core::kernel::{covariance, QuadratureSpec};
use kfplab_core::moduli::{dini_integral, log_dini_integral, m_transform, n_transform, u_mu_transform};
use kfplab_core::representation::cauchy_solve;
use kfplab_core::verify::{report_write, run_check, run_scenario, CheckId, ReportBundle, Scenario};
use kfplab_core::{CoefficientModel, EstimateReport, Modulus, ModelStructure};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

type Outcome = Result<(bool, String), String>;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).expect("shipped scenario loads")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn single(sc: &Scenario, id: CheckId) -> Result<EstimateReport, String> {
    run_check(sc, id).map_err(|e| e.to_string())?.into_iter().next().ok_or_else(|| "no report".into())
}

fn c1_normalization() -> Outcome {
    let mut worst = 0.0f64;
    for name in ["kolmogorov_1934.json", "piecewise_switch.json"] {
        let r = single(&load(name), CheckId::Normalization)?;
        if r.samples != 25 {
            return Err(format!("{name}: expected 25 grid points, got {}", r.samples));
        }
        worst = worst.max(r.c_star);
    }
    Ok((worst <= 1e-8, format!("max |int Gamma - 1| = {worst:.2e} over 2 x 25 points")))
}

fn c2_covariance() -> Outcome {
    let s = ModelStructure::build(&[1, 1], None).map_err(|e| e.to_string())?;
    let model = CoefficientModel::constant(s.clone(), DMatrix::from_element(1, 1, 1.0), 1.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut worst_h = 0.0f64;
    for tau in [0.1, 1.0, 10.0] {
        let c = model.covariance_matrix(tau, 0.0).map_err(|e| e.to_string())?;
        let exact = DMatrix::from_row_slice(2, 2, &[tau, -tau * tau / 2.0, -tau * tau / 2.0, tau.powi(3) / 3.0]);
        worst = worst.max((&c - &exact).norm() / exact.norm());
        for lambda in [0.5, 2.0, 3.0] {
            let big = model.covariance_matrix(lambda * lambda * tau, 0.0).map_err(|e| e.to_string())?;
            let d = s.d0(lambda);
            let hom = &d * &c * &d;
            worst_h = worst_h.max((&big - &hom).norm() / hom.norm());
        }
    }
    Ok((worst <= 1e-12 && worst_h <= 1e-12, format!("closed form {worst:.2e}, homogeneity {worst_h:.2e}")))
}

fn c3_heat() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for n in 1..=3usize {
        let s = ModelStructure::build(&[n], None).map_err(|e| e.to_string())?;
        let mut a = DMatrix::<f64>::identity(n, n);
        if n > 1 {
            a[(0, 1)] = 0.3;
            a[(1, 0)] = 0.3;
        }
        let model = CoefficientModel::constant(s, a.clone(), 0.5).map_err(|e| e.to_string())?;
        let a_inv = a.clone().try_inverse().unwrap();
        for _ in 0..200 {
            let sv = rng.random_range(-1.0..1.0);
            let tau = (rng.random_range(-3.0f64..1.0)).exp();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v = DVector::from_column_slice(&x) - DVector::from_column_slice(&y);
            let quad = v.dot(&(&a_inv * &v));
            let exact = (4.0 * std::f64::consts::PI * tau).powf(-(n as f64) / 2.0) / a.determinant().sqrt()
                * (-quad / (4.0 * tau)).exp();
            let got = covariance(&model, sv + tau, sv).map_err(|e| e.to_string())?.gamma(&x, &y);
            worst = worst.max(rel(got, exact));
        }
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.2e} over 600 samples, N = 1..3")))
}

fn c4_residual() -> Outcome {
    let mut orders = Vec::new();
    for name in ["kolmogorov_1934.json", "piecewise_switch.json", "kolmogorov_3d.json"] {
        let r = single(&load(name), CheckId::LgammaResidual)?;
        orders.push(r.extra["observed_order"]);
    }
    let min = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((min >= 1.9, format!("observed orders {orders:.3?}")))
}

fn c5_chapman() -> Outcome {
    let r = single(&load("kolmogorov_1934.json"), CheckId::ChapmanKolmogorov)?;
    Ok((r.c_star <= 1e-6, format!("relative deviation {:.2e} at (s,r,t) = (0,0.5,1)", r.c_star)))
}

/// `int N(y; m, S) exp(-1/2 (y-c)^T P (y-c)) dy`.
fn gaussian_overlap(m: &DVector<f64>, s: &DMatrix<f64>, c: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let n = m.len();
    let det = (DMatrix::identity(n, n) + s * p).determinant();
    let k = (s + p.clone().try_inverse().unwrap()).try_inverse().unwrap();
    let d = m - c;
    det.powf(-0.5) * (-0.5 * d.dot(&(&k * &d))).exp()
}

fn c6_cauchy() -> Outcome {
    let s = ModelStructure::build(&[1, 1], None).map_err(|e| e.to_string())?;
    let model = CoefficientModel::constant(s.clone(), DMatrix::from_element(1, 1, 1.0), 1.0).map_err(|e| e.to_string())?;
    let c = DVector::from_vec(vec![0.2, -0.1]);
    let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let (cc, pp) = (c.clone(), p.clone());
    let datum = move |y: &[f64]| {
        let d = DVector::from_column_slice(y) - &cc;
        (-0.5 * d.dot(&(&pp * &d))).exp()
    };
    let spec = QuadratureSpec { order: 16, max_order: 512, tol: 1e-10 };
    let grid: Vec<Vec<f64>> = (0..5).flat_map(|i| (0..5).map(move |j| vec![-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64])).collect();
    let mut sup_err = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        for x in &grid {
            let got = cauchy_solve(&model, &datum, 0.0, x, t, &spec).map_err(|e| e.to_string())?.value;
            // law of y given x: N(E(-t) x, 2 E(-t) C E(-t)^T), C = [[t, -t^2/2], [-t^2/2, t^3/3]]
            let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, t, 1.0]);
            let cv = DMatrix::from_row_slice(2, 2, &[t, -t * t / 2.0, -t * t / 2.0, t.powi(3) / 3.0]);
            let m = &e * DVector::from_column_slice(x);
            let sy = &e * cv * e.transpose() * 2.0;
            sup_err = sup_err.max((got - gaussian_overlap(&m, &sy, &c, &p)).abs());
        }
    }
    let mut sups = Vec::new();
    for j in 1..=6 {
        let t = 4f64.powi(-j);
        let mut e = 0.0f64;
        for x in &grid {
            let got = cauchy_solve(&model, &datum, 0.0, x, t, &spec).map_err(|e| e.to_string())?.value;
            e = e.max((got - datum(x)).abs());
        }
        sups.push(e);
    }
    let monotone = sups.windows(2).all(|w| w[1] < w[0]);
    Ok((
        sup_err <= 1e-8 && monotone,
        format!("sup error {sup_err:.2e}; sup |u - f| along t = 4^-j: {}", sups.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")),
    ))
}

fn c7_roundtrip() -> Outcome {
    let flagship = load("kolmogorov_1934.json");
    let frozen = single(&flagship, CheckId::HessianRoundtrip)?;
    let mut doc = flagship.doc().clone();
    doc.coefficients.perturbation = None;
    let bank = r#"[
        {"kind":"manufactured","name":"wide","center":[0.0,0.0],"width":[0.8,0.9],"tau":0.0,"T":1.0},
        {"kind":"manufactured","name":"shifted","center":[0.3,-0.2],"width":[0.5,0.4],"amplitude":2.0,"tau":0.0,"T":1.0}
    ]"#;
    doc.sources.extend(serde_json::from_str::<Vec<_>>(bank).map_err(|e| e.to_string())?);
    let constant = Scenario::from_doc(doc).map_err(|e| e.to_string())?;
    let plain = single(&constant, CheckId::HessianRoundtrip)?;
    Ok((
        plain.c_star <= 1e-4 && frozen.c_star <= 1e-3 && frozen.extra["frozen"] == 1.0,
        format!(
            "constant coefficients {:.2e} over {} solutions, frozen split (eps = 0.1) {:.2e}",
            plain.c_star,
            constant.solutions.len(),
            frozen.c_star
        ),
    ))
}

/// `4 int int exp(-mu (a^2 + w^6)) (a + w)^alpha 3 w^2 da dw` over the
/// positive quadrant, i.e. the `m = [1, 1]` Gaussian moment of `||z||^alpha`
/// with `z_2 = w^3`.
fn kolmogorov_moment(mu: f64, alpha: f64) -> f64 {
    let rule = kfplab_core::quadrature::gauss_legendre(24);
    let mut panels = vec![0.0];
    let mut a = 1e-9;
    while a < 8.0 {
        panels.push(a);
        a *= 2.0;
    }
    panels.push(8.0);
    let pts: Vec<(f64, f64)> = panels
        .windows(2)
        .flat_map(|p| {
            let (h, c) = (0.5 * (p[1] - p[0]), 0.5 * (p[1] + p[0]));
            rule.nodes.iter().zip(&rule.weights).map(move |(x, w)| (c + h * x, h * w)).collect::<Vec<_>>()
        })
        .collect();
    let mut total = 0.0;
    for &(a, wa) in &pts {
        for &(w, ww) in &pts {
            total += wa * ww * (-mu * (a * a + w.powi(6))).exp() * (a + w).powf(alpha) * 3.0 * w * w;
        }
    }
    4.0 * total
}

fn c8_moduli() -> Outcome {
    let mut worst = 0.0f64;
    for alpha in [0.2, 0.5, 0.8] {
        let w = Modulus::power(1.5, alpha).map_err(|e| e.to_string())?;
        let k = 1.0 + 1.0 / alpha + 1.0 / (1.0 - alpha);
        for r in [1e-4, 0.01, 0.3, 1.0, 5.0] {
            let m = m_transform(&w, r).map_err(|e| e.to_string())?;
            let n = n_transform(&w, r).map_err(|e| e.to_string())?;
            worst = worst.max(rel(m, 1.5 * k * r.powf(alpha)));
            worst = worst.max(rel(n, 1.5 * k * k * r.powf(alpha)));
        }
        // N = 1: int exp(-mu z^2) (r|z|)^alpha / alpha dz
        let heat = ModelStructure::build(&[1], None).map_err(|e| e.to_string())?;
        for mu in [0.25, 1.0] {
            for r in [0.01, 0.5, 2.0] {
                let u = u_mu_transform(&w, mu, r, &heat).map_err(|e| e.to_string())?;
                let exact = 1.5 * r.powf(alpha) / alpha * statrs::function::gamma::gamma((1.0 + alpha) / 2.0)
                    * mu.powf(-(1.0 + alpha) / 2.0);
                worst = worst.max(rel(u, exact));
            }
        }
        let kolmogorov = ModelStructure::build(&[1, 1], None).map_err(|e| e.to_string())?;
        for mu in [0.25, 1.0] {
            let moment = kolmogorov_moment(mu, alpha);
            for r in [0.01, 0.5, 2.0] {
                let u = u_mu_transform(&w, mu, r, &kolmogorov).map_err(|e| e.to_string())?;
                worst = worst.max(rel(u, 1.5 * r.powf(alpha) / alpha * moment));
            }
        }
    }
    let dini = Modulus::log_power(1.5).map_err(|e| e.to_string())?;
    let d = dini_integral(&dini).map_err(|e| e.to_string())?;
    let ld = log_dini_integral(&dini).map_err(|e| e.to_string())?;
    let separated = (d - 2.0).abs() < 1e-6 && ld == f64::INFINITY;
    Ok((
        worst <= 1e-6 && separated,
        format!("max relative error {worst:.2e}; (1+|log r|)^-1.5: Dini {d:.6}, log-Dini {ld}"),
    ))
}

fn pass_list(reports: &[&EstimateReport]) -> (bool, String) {
    let ok = reports.iter().all(|r| r.pass && r.c_star.is_finite());
    let text = reports
        .iter()
        .map(|r| format!("{} c*={:.3e} stab={:.3}", r.inequality_id, r.c_star, r.stability))
        .collect::<Vec<_>>()
        .join("; ");
    (ok, text)
}

fn c9_singular(bundle: &ReportBundle) -> Outcome {
    let reps: Vec<&EstimateReport> = bundle.reports.iter().filter(|r| r.inequality_id.starts_with("singular_")).collect();
    if !reps.iter().any(|r| r.inequality_id.contains("rough_t")) {
        return Err("no report for the source rough in t".into());
    }
    if let Some(f) = bundle.failures.iter().find(|f| f.check == CheckId::SingularBounds) {
        return Err(f.error.clone());
    }
    Ok(pass_list(&reps))
}

fn c10_schauder(bundle: &ReportBundle, flagship: &Scenario) -> Outcome {
    let reps: Vec<&EstimateReport> = bundle.reports.iter().filter(|r| r.inequality_id.starts_with("schauder_")).collect();
    if reps.len() != 2 {
        return Err(format!("expected 2 Schauder reports, got {}", reps.len()));
    }
    let (ok, text) = pass_list(&reps);
    let zero = flagship.with_zero_solutions();
    let zs = single(&zero, CheckId::SchauderSpace)?.c_star;
    let zt = single(&zero, CheckId::SchauderTime)?.c_star;
    Ok((ok && zs == 0.0 && zt == 0.0, format!("{text}; u = 0 gives {zs} / {zt}")))
}

fn c11_sde(bundle: &ReportBundle, flagship: &Scenario) -> Outcome {
    let r = bundle
        .reports
        .iter()
        .find(|r| r.inequality_id == "sde_density")
        .ok_or_else(|| "no sde_density report".to_string())?;
    let (z, cov) = (r.extra["z_max"], r.extra["cov_rel"]);
    Ok((
        flagship.sde.n_paths >= 100_000 && z <= 4.0 && cov <= 0.05,
        format!("{} paths: mean within {z:.2} SE, covariance within {:.2}%", flagship.sde.n_paths, 100.0 * cov),
    ))
}

fn files(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let text = std::fs::read_to_string(&p).unwrap();
            let text = if p.extension().is_some_and(|x| x == "json") {
                let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
                if let Some(o) = v.as_object_mut() {
                    o.remove("build_info");
                }
                serde_json::to_string(&v).unwrap()
            } else {
                text
            };
            out.insert(p.strip_prefix(dir).unwrap().display().to_string(), text);
        }
    }
    out
}

fn c12_determinism(first: &ReportBundle) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(|e| e.to_string())?;
    let second = pool.install(|| run_scenario(&load("kolmogorov_1934.json")));
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    report_write(first, a.path(), &serde_json::json!({ "threads": 1 })).map_err(|e| e.to_string())?;
    report_write(&second, b.path(), &serde_json::json!({ "threads": 3 })).map_err(|e| e.to_string())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    Ok((
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} files compared between 1 and 3 threads, {} differ {:?}", fa.len(), differing.len(), differing),
    ))
}

fn report(k: usize, name: &str, start: Instant, o: Outcome, failed: &mut usize) {
    let (ok, text) = o.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !ok {
        *failed += 1;
    }
    println!(
        "[{}] {k:>2} {name}: {text} ({:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mut failed = 0usize;
    let t = Instant::now();
    report(1, "normalization", t, c1_normalization(), &mut failed);
    let t = Instant::now();
    report(2, "covariance closed form", t, c2_covariance(), &mut failed);
    let t = Instant::now();
    report(3, "heat-kernel reduction", t, c3_heat(), &mut failed);
    let t = Instant::now();
    report(4, "L Gamma = 0", t, c4_residual(), &mut failed);
    let t = Instant::now();
    report(5, "Chapman-Kolmogorov", t, c5_chapman(), &mut failed);
    let t = Instant::now();
    report(6, "Cauchy closed form", t, c6_cauchy(), &mut failed);
    let t = Instant::now();
    report(7, "Hessian round trip", t, c7_roundtrip(), &mut failed);
    let t = Instant::now();
    report(8, "moduli calculus", t, c8_moduli(), &mut failed);

    let t = Instant::now();
    let flagship = load("kolmogorov_1934.json");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let bundle = pool.install(|| run_scenario(&flagship));
    report(9, "singular-operator bounds", t, c9_singular(&bundle), &mut failed);
    let t = Instant::now();
    report(10, "Schauder estimates", t, c10_schauder(&bundle, &flagship), &mut failed);
    let t = Instant::now();
    report(11, "SDE oracle", t, c11_sde(&bundle, &flagship), &mut failed);
    let t = Instant::now();
    report(12, "determinism", t, c12_determinism(&bundle), &mut failed);

    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
