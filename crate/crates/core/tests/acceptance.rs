//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Takes the better part of an hour on one
//! core; set `NMG_THREADS` to use more.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use nmg::checks::{gradcheck, spectral_check};
use nmg::cli::{reproduce_problem, OptimArgs, TrainingRecord, DEFAULT_EVAL_SEED};
use nmg::field::adjoint;
use nmg::loss::{loss_median, rademacher_field, LossConfig};
use nmg::report::TableReport;
use nmg::{conv_down, conv_same, conv_up, GridField, MgNetwork, ModelKind, ProblemSpec, StrideSpec, PROBLEM_NAMES};

// Written straight to stdout so the lines survive libtest's output capture.
macro_rules! say {
    ($($t:tt)*) => {{
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($t)*);
        let _ = out.flush();
    }};
}

/// Reference baseline radii for `J = 3..=11`.
const LMG_P5: [f64; 9] = [0.11, 0.13, 0.15, 0.16, 0.17, 0.19, 0.20, 0.21, 0.23];
const LMG_P9: [f64; 9] = [0.16, 0.22, 0.25, 0.28, 0.30, 0.32, 0.35, 0.37, 0.40];
const LMG_PM: [f64; 9] = [0.073, 0.094, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17];
const LMG_ANISO2: [f64; 9] = [0.23, 0.29, 0.31, 0.33, 0.36, 0.38, 0.41, 0.44, 0.47];
const LMG_MIXED14: [f64; 9] = [0.11, 0.14, 0.15, 0.17, 0.18, 0.19, 0.21, 0.22, 0.24];
const LMG_TOL: f64 = 0.02;
const DEPTHS: std::ops::RangeInclusive<u32> = 3..=11;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn fmt_rho(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() && v < 1.0 => format!("{v:.3}"),
        Some(v) if v.is_finite() => format!("{v:.3}(-)"),
        _ => "-".into(),
    }
}

fn lmg_column_check(values: &[Option<f64>], reference: &[f64]) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    let mut ok = values.len() == reference.len();
    for (v, r) in values.iter().zip(reference) {
        match v {
            Some(v) if v.is_finite() => worst = worst.max((v - r).abs()),
            _ => ok = false,
        }
    }
    (ok && worst <= LMG_TOL, worst)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let p5 = ProblemSpec::by_name("p5").unwrap();
    let cfg = LossConfig::default().with_seed(DEFAULT_EVAL_SEED);
    let values: Vec<Option<f64>> = DEPTHS
        .map(|j| {
            let net = MgNetwork::build(ModelKind::Lmg, j, &p5).unwrap();
            loss_median(&net, &cfg, 20).ok()
        })
        .collect();
    let (ok, worst) = lmg_column_check(&values, &LMG_P5);
    let list: Vec<String> = values.iter().map(|v| fmt_rho(*v)).collect();
    Outcome::new(
        ok,
        format!(
            "LMG on p5, 20-seed median, J=3..11: [{}]; max deviation {worst:.3} (tolerance {LMG_TOL}); {:.0}s",
            list.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let aniso = ProblemSpec::by_name("aniso10").unwrap();
    let net = MgNetwork::build(ModelKind::Lmg, 8, &aniso).unwrap();
    let rho = loss_median(&net, &LossConfig::default().with_seed(DEFAULT_EVAL_SEED), 5).unwrap();
    Outcome::new(rho >= 0.9, format!("LMG on aniso10 at J=8: rho1 {} (needs >= 0.9)", fmt_rho(Some(rho))))
}

fn column(report: &TableReport, model: ModelKind) -> Vec<Option<f64>> {
    DEPTHS.map(|j| report.get(j, model).map(|c| c.value().unwrap_or(f64::INFINITY))).collect()
}

fn at(report: &TableReport, model: ModelKind, j: u32) -> f64 {
    report.get(j, model).and_then(|c| c.value()).unwrap_or(f64::INFINITY)
}

fn record(records: &[TrainingRecord], model: ModelKind) -> Option<&TrainingRecord> {
    records.iter().find(|r| r.model == model.name())
}

fn criterion_3(report: &TableReport, records: &[TrainingRecord]) -> Outcome {
    let Some(rec) = record(records, ModelKind::S1mgS) else {
        return Outcome::new(false, "no training record for s1mg_s");
    };
    let train_final = rec.final_loss.unwrap_or(f64::INFINITY);
    let eval5 = at(report, ModelKind::S1mgS, 5);
    let eval11 = at(report, ModelKind::S1mgS, 11);
    let ok = rec.error.is_none() && train_final <= 0.09 && eval5 <= 0.09 && eval11 <= 0.15 && rec.seconds <= 900.0;
    Outcome::new(
        ok,
        format!(
            "s1MG(s) on p5: final training loss {}, rho1(J=5) {} (<= 0.09), rho1(J=11) {} (<= 0.15), trained in {:.0}s (<= 900s)",
            fmt_rho(Some(train_final)),
            fmt_rho(Some(eval5)),
            fmt_rho(Some(eval11)),
            rec.seconds
        ),
    )
}

fn criterion_4(report: &TableReport) -> Outcome {
    let s3 = column(report, ModelKind::S3mgS);
    let lmg = column(report, ModelKind::Lmg);
    let r5 = at(report, ModelKind::S3mgS, 5);
    let r11 = at(report, ModelKind::S3mgS, 11);
    let dominated: Vec<u32> = DEPTHS
        .zip(s3.iter().zip(&lmg))
        .filter(|(_, (s, l))| !matches!((s, l), (Some(s), Some(l)) if s < l))
        .map(|(j, _)| j)
        .collect();
    let ok = r5 <= 0.07 && r11 <= 0.14 && dominated.is_empty();
    let list: Vec<String> = s3.iter().map(|v| fmt_rho(*v)).collect();
    Outcome::new(
        ok,
        format!(
            "s3MG(s) on p5: rho1(J=5) {} (<= 0.07), rho1(J=11) {} (<= 0.14), J=3..11 [{}], below LMG at every J: {}",
            fmt_rho(Some(r5)),
            fmt_rho(Some(r11)),
            list.join(", "),
            if dominated.is_empty() { "yes".to_string() } else { format!("no, fails at J={dominated:?}") }
        ),
    )
}

fn criterion_5(report: &TableReport) -> Outcome {
    let f5 = at(report, ModelKind::Fmg, 5);
    let f7 = at(report, ModelKind::Fmg, 7);
    let fmg_ok = f5.is_finite() && f7 >= 2.0 * f5;
    let rs: Vec<f64> = (3..=8).map(|j| at(report, ModelKind::S1mgRs, j)).collect();
    let rs_ok = rs.iter().any(|&v| v >= 0.5);
    Outcome::new(
        fmg_ok && rs_ok,
        format!(
            "fMG on p5: rho1(J=5) {}, rho1(J=7) {} (needs >= 2x); s1MG(rs) on p5 J=3..8: [{}] (needs >= 0.5 or '-')",
            fmt_rho(Some(f5)),
            fmt_rho(Some(f7)),
            rs.iter().map(|v| fmt_rho(Some(*v))).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn property_suite() -> Result<(), String> {
    let fail = |what: &str, v: f64| Err(format!("{what}: {v:e}"));
    // Adjoint identities.
    for seed in 0..8u64 {
        let f = rademacher_field((15, 15), seed, 0).scaled(0.3);
        let y = rademacher_field((7, 7), seed, 1).scaled(0.7);
        let g = rademacher_field((15, 15), seed, 2);
        let k = nmg::Kernel::new(3, rademacher_field((3, 3), seed, 3).values().iter().map(|v| v * 0.4 + 0.1).collect())
            .unwrap();
        let lhs = conv_down(&f, &k, StrideSpec::COARSEN).unwrap().dot(&y).unwrap();
        let rhs = f.dot(&conv_up(&y, &k, StrideSpec::COARSEN, 15, 15).unwrap()).unwrap();
        let kg = adjoint::conv_down_kernel(&y, &f, StrideSpec::COARSEN, 3).unwrap();
        let rk: f64 = k.weights().iter().zip(kg.weights()).map(|(a, b)| a * b).sum();
        let same_l = conv_same(&f, &k).dot(&g).unwrap();
        let same_r = f.dot(&adjoint::conv_same_field(&g, &k)).unwrap();
        for (a, b) in [(lhs, rhs), (lhs, rk), (same_l, same_r)] {
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return fail("adjoint identity", (a - b).abs());
            }
        }
    }
    for name in PROBLEM_NAMES {
        let problem = ProblemSpec::by_name(name).unwrap();
        // Symmetry of every level operator.
        let net = MgNetwork::build(ModelKind::Lmg, 6, &problem).unwrap();
        for level in 1..=net.levels().len() + 1 {
            let n = net.level_side(level);
            let x = rademacher_field((n, n), 1, 0);
            let y = rademacher_field((n, n), 1, 1);
            let p = net.apply_level_operator(level, &x).unwrap().dot(&y).unwrap();
            let q = x.dot(&net.apply_level_operator(level, &y).unwrap()).unwrap();
            if (p - q).abs() > 1e-12 * p.abs().max(1.0) {
                return fail(&format!("symmetry {name} level {level}"), (p - q).abs());
            }
        }
        for kind in ModelKind::ALL {
            let net = MgNetwork::build(kind, 3, &problem).unwrap();
            let n = net.fine_side();
            // Fixed point of the V-cycle.
            if kind != ModelKind::Unet {
                let x = rademacher_field((n, n), 5, 0);
                let b = problem.apply(&x).unwrap();
                let d = GridField::axpy(1.0, &net.vcycle(1, &x, &b).unwrap(), -1.0, &x).unwrap().max_abs();
                if d > 1e-10 {
                    return fail(&format!("fixed point {name} {kind:?}"), d);
                }
            }
            // Linearity of N.
            let x = rademacher_field((n, n), 6, 0);
            let y = rademacher_field((n, n), 6, 1);
            let lhs = net.apply_n(&GridField::axpy(1.5, &x, -0.25, &y).unwrap()).unwrap();
            let rhs = GridField::axpy(1.5, &net.apply_n(&x).unwrap(), -0.25, &net.apply_n(&y).unwrap()).unwrap();
            let d = GridField::axpy(1.0, &lhs, -1.0, &rhs).unwrap().max_abs();
            if d > 1e-12 * lhs.max_abs().max(1.0) {
                return fail(&format!("linearity {name} {kind:?}"), d);
            }
        }
        // Dense spectral agreement.
        for j in [2, 3] {
            let s = spectral_check(&problem, j, &LossConfig::default().with_seed(DEFAULT_EVAL_SEED), 20).unwrap();
            if s.gap() > 0.03 {
                return fail(&format!("spectral gap {name} J={j}"), s.gap());
            }
        }
    }
    // Gradients against finite differences.
    for name in ["p5", "mixed34"] {
        let problem = ProblemSpec::by_name(name).unwrap();
        for kind in ModelKind::ALL.into_iter().filter(|k| k.is_trainable()) {
            let net = MgNetwork::build(kind, 3, &problem).unwrap();
            let r = gradcheck(&net, &LossConfig::default().with_seed(7), 1e-3).unwrap();
            if r.max_rel_err > 1e-5 {
                return fail(&format!("gradcheck {name} {kind:?}"), r.max_rel_err);
            }
        }
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let result = property_suite();
    let took = start.elapsed();
    let ok = result.is_ok() && took < Duration::from_secs(60);
    Outcome::new(
        ok,
        match result {
            Ok(()) => format!(
                "adjoints, symmetry, fixed point, linearity, gradcheck, dense spectra all within tolerance in {:.1}s (< 60s)",
                took.as_secs_f64()
            ),
            Err(e) => format!("{e} ({:.1}s)", took.as_secs_f64()),
        },
    )
}

fn criterion_7(reports: &BTreeMap<String, TableReport>) -> Outcome {
    let expected =
        [("p5", &LMG_P5), ("p9", &LMG_P9), ("pm", &LMG_PM), ("aniso2", &LMG_ANISO2), ("mixed14", &LMG_MIXED14)];
    let mut ok = reports.len() == PROBLEM_NAMES.len();
    let mut parts = vec![format!("{} tables", reports.len())];
    for (name, reference) in expected {
        let Some(report) = reports.get(name) else {
            ok = false;
            parts.push(format!("{name}: missing"));
            continue;
        };
        let (pass, worst) = lmg_column_check(&column(report, ModelKind::Lmg), reference);
        ok &= pass;
        parts.push(format!("{name} LMG max deviation {worst:.3}"));
    }
    for report in reports.values() {
        let complete = report.models().len() == ModelKind::ALL.len() && report.depths() == DEPTHS.collect::<Vec<_>>();
        if !complete {
            ok = false;
            parts.push(format!("{} incomplete", report.problem));
        }
    }
    Outcome::new(ok, parts.join("; "))
}

fn optim_defaults() -> OptimArgs {
    OptimArgs {
        steps: 500,
        lr: None,
        optimizer: None,
        momentum: 0.9,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        seed: 0,
        batch: 10,
        power: 10,
        fixed_batch: false,
    }
}

#[test]
fn acceptance() {
    if let Ok(n) = std::env::var(nmg::cli::THREADS_ENV) {
        if let Ok(n) = n.parse() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let mut lines = Vec::new();
    let mut report = |id: u32, o: Outcome| {
        let line = format!("criterion {id}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        say!("{line}");
        lines.push((o.pass, line));
    };

    report(6, criterion_6());
    report(2, criterion_2());
    report(1, criterion_1());

    let start = Instant::now();
    let optim = optim_defaults();
    let eval = LossConfig::default().with_seed(DEFAULT_EVAL_SEED);
    let depths: Vec<u32> = DEPTHS.collect();
    let mut reports = BTreeMap::new();
    let mut p5_records = Vec::new();
    for name in PROBLEM_NAMES {
        let problem = ProblemSpec::by_name(name).unwrap();
        let (table, records) = reproduce_problem(&problem, &ModelKind::ALL, &depths, &optim, 5, &eval, None).unwrap();
        say!("{}", table.to_markdown());
        if name == "p5" {
            p5_records = records;
        }
        reports.insert(name.to_string(), table);
    }
    say!("full reproduction took {:.0}s", start.elapsed().as_secs_f64());
    let p5 = &reports["p5"];
    report(3, criterion_3(p5, &p5_records));
    report(4, criterion_4(p5));
    report(5, criterion_5(p5));
    report(7, criterion_7(&reports));

    say!("summary:");
    for (_, line) in &lines {
        say!("{line}");
    }
    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
