use blowuplab::asymptotics::{analyze, AnalysisOptions};
use blowuplab::envelope::Envelope;
use blowuplab::homogeneous::{HomogeneousFn, Kernel};
use blowuplab::integrator::{integrate_blowup, Control, ToleranceMode};
use blowuplab::problem::{
    certified_profile, manufactured_reference, Corrector, Forcing, ProblemSpec,
};
use blowuplab::spectral::decompose;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commands::{Failure, EXIT_OK, EXIT_RUN_ERROR};
use crate::Common;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn closed_form() -> Check {
    let spec = ProblemSpec::reference(
        1.0,
        2.0,
        Forcing::Zero,
        None,
        0.0,
        DVector::from_vec(vec![1.0]),
    )
    .unwrap();
    let sd = decompose(&spec.matrix, 1e-10).unwrap();
    let ctrl = Control::default().with_norm_cap(1e6);
    let rep = match integrate_blowup(&spec, &sd, &ctrl) {
        Ok(traj) => analyze(
            &traj,
            &spec,
            &sd,
            &AnalysisOptions::for_tolerance(ctrl.rel_tol),
        ),
        Err(e) => return check("closed_form", false, e.to_string()),
    };
    let t = rep.tstar_hat.unwrap_or(f64::NAN);
    let xi = rep.xi_star.as_ref().map_or(f64::NAN, |x| x[0].abs());
    let pass = (t - 0.5).abs() <= 1e-5 && (xi - 0.5f64.sqrt()).abs() <= 1e-4;
    check("closed_form", pass, format!("T* = {t}, |xi*| = {xi}"))
}

fn random_diagonalizable(rng: &mut ChaCha8Rng, n: usize, symmetric: bool) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..5.0)));
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    if symmetric {
        let q = m.qr().q();
        &q * d * q.transpose()
    } else {
        let s = DMatrix::identity(n, n) * 2.0 + m;
        let s_inv = s
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(n, n));
        s_inv * d * s
    }
}

fn spectral_identities(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < cases {
        let n = rng.gen_range(1..=6);
        let symmetric = rng.gen_bool(0.5);
        let a = random_diagonalizable(rng, n, symmetric);
        let Ok(sd) = decompose(&a, 1e-10) else {
            continue;
        };
        let norm_a = a.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(sd.identity_residuals().max_relative(norm_a));
        done += 1;
    }
    check(
        "spectral_identities",
        worst <= 1e-8,
        format!("max relative residual {worst:e}"),
    )
}

fn homogeneity(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..=5);
        let alpha = rng.gen_range(0.25..3.0);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let kernels = [
            Kernel::Euclidean,
            Kernel::PNorm(rng.gen_range(1.0..4.0)),
            Kernel::QuadraticForm(&m * m.transpose() + DMatrix::identity(n, n)),
        ];
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let c = rng.gen_range(0.1..10.0);
        for k in kernels {
            let h = HomogeneousFn::new(n, alpha, k).unwrap();
            let (Ok(hx), Ok(hcx)) = (h.evaluate(&x), h.evaluate(&(&x * c))) else {
                return check("homogeneity", false, "evaluation failed".into());
            };
            worst = worst.max((hcx - c.powf(alpha) * hx).abs() / hcx);
        }
    }
    check(
        "homogeneity",
        worst <= 1e-12,
        format!("max relative defect {worst:e}"),
    )
}

fn envelope_quadrature() -> Check {
    let envs = [
        Envelope::power(1.0, 0.25, 0.5, 0.0).unwrap(),
        Envelope::power(2.0, 1.0, 0.5, 0.0).unwrap(),
        Envelope::log(1.0, 3.0, 0.5, 0.0).unwrap(),
    ];
    let mut worst = 0.0_f64;
    for env in &envs {
        for k in 0..=12 {
            let u = 1e-6 * (0.5e6f64).powf(k as f64 / 12.0);
            let Ok(num) = env.e1_numeric(u) else {
                return check(
                    "envelope_quadrature",
                    false,
                    format!("quadrature failed at u = {u}"),
                );
            };
            worst = worst.max((num - env.e1_at(u)).abs() / env.e1_at(u));
        }
    }
    check(
        "envelope_quadrature",
        worst <= 1e-6,
        format!("max relative error {worst:e}"),
    )
}

fn certificates(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst = 0.0_f64;
    let mut accepted = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=4);
        let a = random_diagonalizable(rng, n, true);
        let Ok(sd) = decompose(&a, 1e-10) else {
            continue;
        };
        let h = HomogeneousFn::euclidean(n, 1.0).unwrap();
        let y0 = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
        let spec = ProblemSpec::forced(a, h, Forcing::Zero, None, 0.0, y0).unwrap();
        let ctrl = Control::default().with_norm_cap(1e6 * spec.y0.norm());
        let Ok(traj) = integrate_blowup(&spec, &sd, &ctrl) else {
            continue;
        };
        let rep = analyze(
            &traj,
            &spec,
            &sd,
            &AnalysisOptions::for_tolerance(ctrl.rel_tol),
        );
        if rep.accepted {
            accepted += 1;
            let e = rep.cert_eigen_residual.unwrap_or(f64::INFINITY);
            let hr = rep.cert_h_residual.unwrap_or(f64::INFINITY);
            worst = worst.max(e).max(hr);
        }
    }
    check(
        "certificates",
        accepted > 0 && worst <= 1e-3,
        format!("{accepted}/{cases} accepted, worst residual {worst:e}"),
    )
}

fn manufactured_oracle() -> Check {
    let h = HomogeneousFn::euclidean(1, 1.0).unwrap();
    let xi = certified_profile(&DVector::from_vec(vec![1.0]), 1.0, &h).unwrap();
    let corr = Corrector::Power {
        c: 0.1,
        delta: 0.5,
        w: DVector::from_vec(vec![1.0]),
    };
    let (spec, sol) = manufactured_reference(1.0, 1.0, xi, corr, 1.0, 0.0).unwrap();
    let sd = decompose(&spec.matrix, 1e-10).unwrap();
    let ctrl = Control::default()
        .with_rel_tol(1e-7)
        .with_norm_cap(1e4)
        .with_mode(ToleranceMode::Global);
    let traj = match integrate_blowup(&spec, &sd, &ctrl) {
        Ok(t) => t,
        Err(e) => return check("manufactured_oracle", false, e.to_string()),
    };
    let worst = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, y)| {
            let e = sol.y_exact(*t);
            (y - &e).norm() / e.norm()
        })
        .fold(0.0, f64::max);
    check(
        "manufactured_oracle",
        worst <= 10.0 * ctrl.rel_tol,
        format!("max relative error {worst:e} at rel_tol {:e}", ctrl.rel_tol),
    )
}

fn eigenvalue_selection() -> Check {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
    let sd = decompose(&a, 1e-10).unwrap();
    let h = HomogeneousFn::euclidean(2, 1.0).unwrap();
    let spec = ProblemSpec::forced(
        a,
        h,
        Forcing::Zero,
        None,
        0.0,
        DVector::from_vec(vec![1.0, 1.0]),
    )
    .unwrap();
    let ctrl = Control::default().with_norm_cap(1e7);
    let lambda = integrate_blowup(&spec, &sd, &ctrl)
        .ok()
        .map(|traj| {
            analyze(
                &traj,
                &spec,
                &sd,
                &AnalysisOptions::for_tolerance(ctrl.rel_tol),
            )
        })
        .and_then(|rep| rep.lambda_hat);
    check(
        "eigenvalue_selection",
        lambda == Some(3.0),
        format!("Lambda = {lambda:?}"),
    )
}

pub fn run(cases: usize, common: &Common) -> Result<u8, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let checks = vec![
        closed_form(),
        spectral_identities(&mut rng, cases),
        homogeneity(&mut rng, cases),
        envelope_quadrature(),
        certificates(&mut rng, cases),
        manufactured_oracle(),
        eigenvalue_selection(),
    ];
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if checks.iter().all(|c| c.pass) {
        EXIT_OK
    } else {
        EXIT_RUN_ERROR
    })
}
