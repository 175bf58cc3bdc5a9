use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use vstar_core::sampling::{self, Rng};
use vstar_core::smoothfn::random_polynomial;
use vstar_core::states::lightcone_roots;
use vstar_core::{Complex64, ComplexMap, FormalSeries, Observable, QuadraticObservable, Sign, SmoothMap, StarProduct};

use crate::config::{ExperimentConfig, ModeKind, StateKind};
use crate::report::{complex, num, real, Report};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CheckKind {
    Assoc,
    Jacobi,
    Vertical,
    Flip,
    Hermitean,
    Positivity,
    Uncertainty,
    PairConsistency,
}

impl CheckKind {
    fn name(self) -> &'static str {
        match self {
            CheckKind::Assoc => "assoc",
            CheckKind::Jacobi => "jacobi",
            CheckKind::Vertical => "vertical",
            CheckKind::Flip => "flip",
            CheckKind::Hermitean => "hermitean",
            CheckKind::Positivity => "positivity",
            CheckKind::Uncertainty => "uncertainty",
            CheckKind::PairConsistency => "pair-consistency",
        }
    }
}

fn lambda(cfg: &ExperimentConfig, what: &str) -> Result<f64, CliError> {
    cfg.lambda_num
        .ok_or_else(|| CliError::Config(format!("{what} needs lambda_num (or --lambda)")))
}

pub fn lightcone(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let lambda = lambda(cfg, "lightcone")?;
    let sp = cfg.star_product()?;
    if cfg.n < 2 {
        return Err(CliError::Config("lightcone needs n >= 2".into()));
    }
    let metric = cfg.metric()?;
    let g = (cfg.state == StateKind::Coherent).then_some(&metric);
    let cone = lightcone_roots(&sp, g, lambda, &cfg.lightcone.points())?;
    let rows = cone
        .iter()
        .map(|c| vec![num(c.spatial_norm), num(c.spatial_norm), num(c.v0)])
        .collect();
    let json = json!({
        "command": "lightcone",
        "lambda": lambda,
        "rows": cone.iter().map(|c| json!({
            "spatial_norm": c.spatial_norm,
            "v0_classical": c.spatial_norm,
            "v0_deformed": c.v0,
            "residual": c.residual,
        })).collect::<Vec<_>>(),
    });
    Ok(Report::new(
        json,
        vec!["spatial_norm", "v0_classical", "v0_deformed"],
        rows,
        true,
    ))
}

fn class_of(sign: Sign) -> &'static str {
    match sign {
        Sign::Positive => "timelike",
        Sign::Zero => "lightlike",
        Sign::Negative => "spacelike",
    }
}

pub fn distance(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let sp = cfg.star_product()?;
    let state = cfg.state()?;
    let (a, is_eta) = cfg.observable_matrix()?;
    let f = QuadraticObservable::new(a)?.to_map();
    let expectation = state.expect(&sp, &f)?;
    let tol = 1e-9 * expectation.max_abs().max(1.0);
    let expectation = expectation
        .real_within(tol)
        .ok_or_else(|| CliError::Numeric("expectation of a real observable is not real".into()))?;
    let variance = state.variance(&sp, &f)?;
    let formal = class_of(expectation.formal_sign(vstar_core::formal::ZERO_TOL));
    let mut json = json!({
        "command": "distance",
        "point": cfg.tm_point(),
        "observable": if is_eta { "eta" } else { "quadratic" },
        "state": cfg.state,
        "lambda_order": sp.lambda_order(),
        "expectation": real(&expectation),
        "variance": real(&variance),
    });
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (name, s) in [("expectation", &expectation), ("variance", &variance)] {
        for (k, c) in s.coeffs().iter().enumerate() {
            rows.push(vec![name.into(), k.to_string(), num(*c)]);
        }
    }
    if is_eta {
        json["causal_class_formal"] = formal.into();
        rows.push(vec!["causal_class_formal".into(), String::new(), formal.into()]);
    }
    if let Some(l) = cfg.lambda_num {
        let (e, v) = (expectation.eval_at(l), variance.eval_at(l));
        json["lambda"] = l.into();
        json["expectation_at_lambda"] = e.into();
        json["variance_at_lambda"] = v.into();
        rows.push(vec!["expectation_at_lambda".into(), String::new(), num(e)]);
        rows.push(vec!["variance_at_lambda".into(), String::new(), num(v)]);
        if is_eta {
            let sign = if e > 1e-12 {
                Sign::Positive
            } else if e < -1e-12 {
                Sign::Negative
            } else {
                Sign::Zero
            };
            json["causal_class"] = class_of(sign).into();
            rows.push(vec!["causal_class".into(), String::new(), class_of(sign).into()]);
        }
    }
    Ok(Report::new(json, vec!["quantity", "order", "value"], rows, true))
}

fn random_complex(rng: &mut Rng, n: usize) -> Result<ComplexMap, CliError> {
    let vars: Vec<usize> = (0..2 * n).collect();
    let center = vec![0.0; 2 * n];
    Ok(ComplexMap::new(
        random_polynomial(rng, 2 * n, &vars, &center, 0, 3)?,
        random_polynomial(rng, 2 * n, &vars, &center, 0, 3)?,
    )?)
}

fn sample_point(rng: &mut Rng, n: usize, radius: f64) -> Vec<f64> {
    let mut x = sampling::uniform_box(rng, n, 1.0);
    x.extend(sampling::uniform_box(rng, n, 1.2 * radius));
    x
}

fn spec(f: &ComplexMap) -> Value {
    serde_json::to_value(f).unwrap_or(Value::Null)
}

/// Per-order maxima over trials; the first trial above `tol` is named.
fn per_order(
    check: CheckKind,
    tol: f64,
    orders: usize,
    trials: impl IntoIterator<Item = Result<(Vec<f64>, Value), CliError>>,
) -> Result<Report, CliError> {
    let mut worst = vec![0.0f64; orders];
    let mut failing = Value::Null;
    let mut count = 0;
    for (index, trial) in trials.into_iter().enumerate() {
        let (defects, sample) = trial?;
        count += 1;
        for (w, d) in worst.iter_mut().zip(&defects) {
            *w = w.max(*d);
        }
        if failing.is_null() && defects.iter().any(|d| !(*d <= tol)) {
            failing = json!({ "index": index, "defects": defects, "sample": sample });
        }
    }
    let pass = failing.is_null();
    let rows = worst
        .iter()
        .enumerate()
        .map(|(k, w)| {
            vec![
                check.name().into(),
                k.to_string(),
                num(*w),
                num(tol),
                (*w <= tol).to_string(),
            ]
        })
        .collect();
    let json = json!({
        "command": "check",
        "check": check.name(),
        "pass": pass,
        "samples": count,
        "tolerance": tol,
        "max_defect_per_order": worst,
        "failing_sample": failing,
    });
    Ok(Report::new(
        json,
        vec!["check", "order", "max_defect", "tolerance", "pass"],
        rows,
        pass,
    ))
}

fn defects(s: &FormalSeries<Complex64>) -> Vec<f64> {
    s.coeffs().iter().map(|c| c.norm()).collect()
}

pub fn check(cfg: &ExperimentConfig, which: CheckKind) -> Result<Report, CliError> {
    let mut rng = sampling::rng(cfg.samples.seed);
    let count = cfg.samples.count;
    let n = cfg.n;
    if which == CheckKind::Jacobi {
        return jacobi(cfg, &mut rng);
    }
    let sp = cfg.star_product()?;
    let radius = sp.support_radius().unwrap_or(1.0);
    let orders = sp.lambda_order() + 1;
    match which {
        CheckKind::Jacobi => jacobi(cfg, &mut rng),
        CheckKind::Assoc => {
            let tol = if cfg.mode()? == ModeKind::GeneralVertical {
                1e-8
            } else {
                1e-10
            };
            let fiber: Vec<usize> = (n..2 * n).collect();
            let trials: Vec<_> = (0..count)
                .map(|_| {
                    let center = vec![0.0; n];
                    let mut poly = || random_polynomial(&mut rng, 2 * n, &fiber, &center, 0, 3);
                    let (f, g, h) = (poly()?, poly()?, poly()?);
                    let x = sample_point(&mut rng, n, radius);
                    let d = defects(&sp.associator_at(&f, &g, &h, &x)?);
                    Ok((d, json!({ "point": x, "f": f, "g": g, "h": h })))
                })
                .collect();
            per_order(which, tol, orders, trials)
        }
        CheckKind::Vertical => {
            let base: Vec<usize> = (0..n).collect();
            let trials: Vec<_> = (0..count)
                .map(|_| {
                    let f = random_complex(&mut rng, n)?;
                    let u = random_polynomial(&mut rng, n, &base, &vec![0.0; n], 0, 3)?;
                    let x = sample_point(&mut rng, n, radius);
                    let d = sp.check_verticality(&[(f.clone(), u.clone())], std::slice::from_ref(&x))?;
                    Ok((d, json!({ "point": x, "f": spec(&f), "u": u })))
                })
                .collect();
            per_order(which, 0.0, orders, trials)
        }
        CheckKind::Flip | CheckKind::Hermitean => {
            let trials: Vec<_> = (0..count)
                .map(|_| {
                    let (f, g) = (random_complex(&mut rng, n)?, random_complex(&mut rng, n)?);
                    let x = sample_point(&mut rng, n, radius);
                    let pair = [(f.clone(), g.clone())];
                    let d = if which == CheckKind::Flip {
                        sp.check_flip_symmetry(&pair, std::slice::from_ref(&x))?
                    } else {
                        sp.check_hermitean(&pair, std::slice::from_ref(&x))?
                    };
                    Ok((d, json!({ "point": x, "f": spec(&f), "g": spec(&g) })))
                })
                .collect();
            per_order(which, 1e-12, orders, trials)
        }
        CheckKind::PairConsistency => pair_consistency(cfg, &sp, &mut rng),
        CheckKind::Positivity => {
            let state = cfg.state()?;
            let report = state.positivity_scan(&sp, &state.default_family(), count, cfg.samples.seed)?;
            let guaranteed = state.positivity_guaranteed(&sp);
            let json = json!({
                "command": "check",
                "check": which.name(),
                "pass": report.ok,
                "state": cfg.state,
                "checked": report.checked,
                "guaranteed_by_theory": guaranteed,
                "failing_sample": report.witness,
            });
            let rows = vec![vec![
                which.name().into(),
                report.checked.to_string(),
                report.ok.to_string(),
                guaranteed.to_string(),
            ]];
            Ok(Report::new(
                json,
                vec!["check", "checked", "pass", "guaranteed_by_theory"],
                rows,
                report.ok,
            ))
        }
        CheckKind::Uncertainty => {
            if n < 2 {
                return Err(CliError::Config("the uncertainty check needs n >= 2".into()));
            }
            let state = cfg.state()?;
            let (f, g) = (SmoothMap::coordinate(n, 2 * n)?, SmoothMap::coordinate(n + 1, 2 * n)?);
            let u = state.uncertainty_check(&sp, &f, &g)?;
            let rows = (0..u.lhs.coeffs().len())
                .map(|k| vec![k.to_string(), num(*u.lhs.coeff(k)), num(*u.rhs.coeff(k))])
                .collect();
            let json = json!({
                "command": "check",
                "check": which.name(),
                "pass": u.holds,
                "observables": ["v0", "v1"],
                "point": cfg.tm_point(),
                "lhs": real(&u.lhs),
                "rhs": real(&u.rhs),
                "sign": u.sign,
            });
            Ok(Report::new(json, vec!["order", "lhs", "rhs"], rows, u.holds))
        }
    }
}

fn jacobi(cfg: &ExperimentConfig, rng: &mut Rng) -> Result<Report, CliError> {
    let theta = cfg.theta()?;
    let radius = theta.support_radius().unwrap_or(1.0);
    let trials: Vec<_> = (0..cfg.samples.count)
        .map(|_| {
            let x = sample_point(rng, cfg.n, radius);
            Ok((
                vec![theta.jacobi_defect(std::slice::from_ref(&x))?],
                json!({ "point": x }),
            ))
        })
        .collect();
    per_order(CheckKind::Jacobi, 1e-9, 1, trials)
}

/// `Φ(p, v) = (p - v, p + v)`.
fn pair_map(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let i = r % n;
        match (c == i, c == n + i, r >= n) {
            (true, _, _) => 1.0,
            (_, true, true) => 1.0,
            (_, true, false) => -1.0,
            _ => 0.0,
        }
    })
}

fn apply(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(x)).iter().copied().collect()
}

fn pair_consistency(cfg: &ExperimentConfig, sp: &StarProduct, rng: &mut Rng) -> Result<Report, CliError> {
    let n = cfg.n;
    let phi = pair_map(n);
    let zero = vec![0.0; 2 * n];
    let radius = sp.support_radius();
    let mut trials = Vec::new();
    for k in 0..cfg.samples.count {
        let (f, g) = (random_complex(rng, n)?, random_complex(rng, n)?);
        let outside = radius.is_some() && k % 2 == 1;
        let x = match radius {
            Some(r) if outside => {
                let mut x = sampling::uniform_box(rng, n, 1.0);
                x.extend(sampling::uniform_shell(rng, n, 1.1 * r, 3.0 * r));
                x
            }
            _ => sample_point(rng, n, radius.unwrap_or(1.0)),
        };
        let qq = apply(&phi, &x);
        let pair = sp.pair_picture_star(&f, &g, &qq)?;
        let expected = if outside {
            FormalSeries::<Complex64>::constant(f.value(&qq)? * g.value(&qq)?, sp.lambda_order())
        } else {
            sp.star_at(&f.pullback_affine(&phi, &zero)?, &g.pullback_affine(&phi, &zero)?, &x)?
        };
        let against = if outside { "pointwise" } else { "tm_picture" };
        trials.push(Ok((
            defects(&pair.checked_sub(&expected)?),
            json!({ "q_q_prime": qq, "compared_with": against, "f": spec(&f), "g": spec(&g) }),
        )));
    }
    per_order(CheckKind::PairConsistency, 1e-10, sp.lambda_order() + 1, trials)
}

pub fn pairs_demo(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let n = cfg.n;
    if n < 2 {
        return Err(CliError::Config("pairs-demo needs n >= 2".into()));
    }
    let sp = cfg.star_product()?;
    let radius = sp.support_radius();
    let pairs: Vec<Vec<f64>> = if cfg.pairs.is_empty() {
        let scale = radius.unwrap_or(1.0);
        [0.25, 0.5, 1.0, 1.5, 3.0]
            .iter()
            .map(|t| {
                let mut qq = vec![0.0; 2 * n];
                qq[0] = -t * scale;
                qq[n] = t * scale;
                qq
            })
            .collect()
    } else {
        cfg.pairs.clone()
    };
    // relative coordinates v^a = (q'^a - q^a) / 2 on M x M
    let rel: Vec<SmoothMap> = (0..n)
        .map(|a| {
            let mut w = vec![0.0; 2 * n];
            w[a] = -0.5;
            w[n + a] = 0.5;
            SmoothMap::linear(&w)
        })
        .collect();
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut pass = true;
    for (index, qq) in pairs.iter().enumerate() {
        let v: Vec<f64> = (0..n).map(|a| 0.5 * (qq[n + a] - qq[a])).collect();
        let norm = sampling::norm(&v);
        let outside = radius.is_some_and(|r| norm >= r);
        let mut commutators = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let c = sp
                    .pair_picture_star(&rel[a], &rel[b], qq)?
                    .checked_sub(&sp.pair_picture_star(&rel[b], &rel[a], qq)?)?;
                if outside && c.max_abs() != 0.0 {
                    pass = false;
                }
                for (k, z) in c.coeffs().iter().enumerate() {
                    rows.push(vec![
                        index.to_string(),
                        num(norm),
                        outside.to_string(),
                        a.to_string(),
                        b.to_string(),
                        k.to_string(),
                        num(z.re),
                        num(z.im),
                    ]);
                }
                commutators.push(json!({ "a": a, "b": b, "coefficients": complex(&c) }));
            }
        }
        entries.push(json!({
            "q_q_prime": qq,
            "fiber_norm": norm,
            "outside_support": outside,
            "commutators": commutators,
        }));
    }
    let json = json!({
        "command": "pairs-demo",
        "support_radius": radius,
        "pass": pass,
        "pairs": entries,
    });
    Ok(Report::new(
        json,
        vec!["pair", "fiber_norm", "outside_support", "a", "b", "order", "re", "im"],
        rows,
        pass,
    ))
}
