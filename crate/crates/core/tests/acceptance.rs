//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a plain `main` so every line is printed even when an earlier
//! criterion fails. Exit status is nonzero if any criterion fails.

use std::time::Instant;

use bilevel_core::certify::{self, Certificate, CertifyOptions, TraceParams};
use bilevel_core::instances::{self, Dims, Instance};
use bilevel_core::linalg::dvec;
use bilevel_core::oracle::{OptimalSet, Oracle, OracleConfig};
use bilevel_core::prox::ProxOperator;
use bilevel_core::sampling::domain_samples;
use bilevel_core::solver::{run_bilevel, step_sizes, NoiseDistribution, NoiseSpec, SolverConfig};
use bilevel_core::suites;
use bilevel_core::trace::{RunStatus, Trace};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Everything needed to run and judge one instance.
struct Setup<'a> {
    inst: &'a Instance,
    oracle: Oracle<'a>,
    mu: f64,
    nu: f64,
    cert: Certificate,
}

fn setup(inst: &Instance) -> Result<Setup<'_>, String> {
    let cfg = OracleConfig::default();
    let steps = step_sizes(&inst.model, &inst.prox_p, &inst.prox_u, 32, &cfg).map_err(|e| e.to_string())?;
    let oracle = Oracle::new(&inst.model, &inst.prox_u, cfg).map_err(|e| e.to_string())?;
    let cert = certify::certify(&oracle, &inst.prox_p, steps.mu, steps.nu, &CertifyOptions::default())
        .map_err(|e| e.to_string())?;
    Ok(Setup { inst, oracle, mu: steps.mu, nu: steps.nu, cert })
}

fn upper_corner(op: &ProxOperator) -> DVector<f64> {
    op.map_unit_cube(&vec![1.0; op.dim()])
}

fn noiseless_run(s: &Setup, kappa: usize, max_outer: usize) -> Result<Trace, String> {
    let mut cfg = SolverConfig::new(s.mu, s.nu, kappa);
    cfg.max_outer = max_outer;
    cfg.stop_tol = 1e-12;
    let p0 = upper_corner(&s.inst.prox_p);
    let u0 = DVector::zeros(s.inst.model.n_decision());
    run_bilevel(&s.inst.model, &s.inst.prox_p, &s.inst.prox_u, &cfg, &p0, &u0, Some(&s.oracle))
        .map_err(|e| e.to_string())
}

fn vertex_instances(count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..count).map(|_| instances::vertex_optimum_instance(&mut rng, Dims::small())).collect()
}

fn criterion_1() -> Outcome {
    let ops = [
        ProxOperator::new_box(dvec(&[-1.0, 0.0, 2.0]), dvec(&[1.0, 3.0, 2.5])).unwrap(),
        ProxOperator::new_ball(dvec(&[0.5, -1.0, 0.0]), 2.0).unwrap(),
        ProxOperator::new_box_l1(dvec(&[-10.0, -1.0, 0.0]), dvec(&[10.0, 1.0, 4.0]), dvec(&[0.5, 0.0, 2.0])).unwrap(),
    ];
    let mut worst = Vec::new();
    for (k, op) in ops.iter().enumerate() {
        for r in suites::prox_suite(op, 10_000, 100 + k as u64) {
            if !r.pass {
                return Err(format!("{} failed on variant {k}: worst slack {:e}", r.name, r.worst_slack));
            }
            worst.push(r.worst_slack);
        }
    }
    let w = worst.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("3 variants x 10^4 pairs, optimality on 10^3; worst slack {w:.2e}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut total = 0;
    for k in 0..100 {
        let dims = if k % 2 == 0 { Dims::small() } else { Dims::medium() };
        let model = if k % 3 == 0 {
            instances::random_special_case_model(&mut rng, dims)
        } else {
            instances::random_affine_model(&mut rng, dims)
        };
        let prox_p = ProxOperator::symmetric_box(model.n_param(), 1.0).unwrap();
        let prox_u = ProxOperator::symmetric_box(model.n_decision(), 2.0).unwrap();
        let r = suites::condensation_suite(&model, &prox_p, &prox_u, 10, k).map_err(|e| e.to_string())?;
        total += r.samples;
        if !r.pass {
            return Err(format!("model {k}: slack {:e}", r.worst_slack));
        }
    }
    Ok(format!("{total} random (model, p, u) agree to 1e-9 relative"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    for k in 0..100u64 {
        let model = if k % 2 == 0 {
            instances::random_special_case_model(&mut rng, Dims::small())
        } else {
            instances::random_affine_model(&mut rng, Dims::small())
        };
        let prox_p = ProxOperator::symmetric_box(model.n_param(), 1.0).unwrap();
        let prox_u = ProxOperator::symmetric_box(model.n_decision(), 0.5).unwrap();
        let cfg = OracleConfig::default();
        let steps = step_sizes(&model, &prox_p, &prox_u, 32, &cfg).map_err(|e| e.to_string())?;
        let eta = certify::contraction_rate(&model, &domain_samples(&prox_p, 64), steps.mu).map_err(|e| e.to_string())?;
        let oracle = Oracle::new(&model, &prox_u, cfg).map_err(|e| e.to_string())?;
        let r = suites::contraction_suite(&oracle, &prox_p, steps.mu, eta, 100, 5, k).map_err(|e| e.to_string())?;
        worst = worst.min(r.worst_slack);
        if !r.pass {
            return Err(format!("instance {k}: worst slack {:e} (eta {eta})", r.worst_slack));
        }
    }
    Ok(format!("100 instances, k <= 100; worst slack {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lowest: f64 = 1.0;
    let mut stable = 0;
    for k in 0..20u64 {
        let inst = instances::random_instance(&mut rng, Dims::small(), 1.0, 0.3);
        let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).map_err(|e| e.to_string())?;
        let r = suites::gradient_suite(&oracle, &inst.prox_p, 200, 1e-5, 0.95, k).map_err(|e| e.to_string())?;
        lowest = lowest.min(r.fraction);
        stable += r.stable_points;
        if !r.result.pass {
            return Err(format!("instance {k}: agreement {:.3} on {} stable points", r.fraction, r.stable_points));
        }
    }
    Ok(format!("20 instances, {stable} stable points; lowest agreement {lowest:.3}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut insts = vec![instances::scalar_tracking()];
    for _ in 0..10 {
        insts.push(instances::random_instance(&mut rng, Dims::small(), 1.0, 0.5));
    }
    let mut worst = f64::INFINITY;
    for (k, inst) in insts.iter().enumerate() {
        let f = certify::estimate_f(&inst.model, &inst.prox_u, &domain_samples(&inst.prox_p, 64)).map_err(|e| e.to_string())?;
        let oracle = Oracle::new(&inst.model, &inst.prox_u, OracleConfig::default()).map_err(|e| e.to_string())?;
        let r = suites::gradient_error_suite(&oracle, &inst.prox_p, f, 1000, k as u64).map_err(|e| e.to_string())?;
        worst = worst.min(r.worst_slack);
        if r.failures > 0 {
            return Err(format!("instance {k}: {} violations, worst slack {:e}", r.failures, r.worst_slack));
        }
    }
    Ok(format!("{} instances x 10^3 (p, u), zero violations; worst slack {worst:.2e}", insts.len()))
}

fn criterion_6() -> Outcome {
    let mut insts = vec![instances::scalar_tracking()];
    insts.extend(vertex_instances(10));
    let mut runs = 0;
    for (k, inst) in insts.iter().enumerate() {
        let s = setup(inst)?;
        let k_min = s.cert.k_min.ok_or_else(|| format!("instance {k}: not certified within kappa_max"))?;
        for kappa in [k_min, k_min + 3] {
            let trace = noiseless_run(&s, kappa, 10_000)?;
            let params = TraceParams { mu: s.mu, nu: s.nu, kappa };
            let report = certify::verify_iss_trace(&trace.rows, params, &s.cert, Some(&s.oracle)).map_err(|e| e.to_string())?;
            runs += 1;
            if report.verdict != "pass" {
                let failed: Vec<String> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed())
                    .map(|c| format!("{} (slack {:e})", c.name, c.worst_slack.unwrap_or(f64::NAN)))
                    .collect();
                return Err(format!("instance {k}, kappa {kappa}: {}", failed.join(", ")));
            }
        }
    }
    Ok(format!("{runs} noiseless runs (scalar + 10 special-case, kappa in {{K_min, K_min+3}}) verified"))
}

fn check_convergence(s: &Setup, set: &OptimalSet, label: &str) -> Result<(usize, f64, f64), String> {
    let k_min = s.cert.k_min.ok_or_else(|| format!("{label}: not certified"))?;
    let trace = noiseless_run(s, k_min, 10_000)?;
    let last = trace.last();
    let dist = certify::dist_to_pstar(&last.p, set).map_err(|e| e.to_string())?;
    let lambda = certify::lambda_fn(&last.p, s.nu, &s.inst.prox_p, &s.oracle).map_err(|e| e.to_string())?;
    if trace.status != RunStatus::Converged || dist > 1e-4 || lambda > 1e-6 {
        return Err(format!(
            "{label}: status {:?} after {} iterations, dist {dist:e}, Lambda {lambda:e}",
            trace.status, last.ell
        ));
    }
    Ok((last.ell, dist, lambda))
}

fn criterion_7() -> Outcome {
    let scalar = instances::scalar_tracking();
    let s = setup(&scalar)?;
    // Hand values: J̄(p) = p²/4 is increasing on [0.5, 2].
    let hand = OptimalSet {
        candidates: vec![bilevel_core::oracle::Candidate { p: vec![0.5], value: 0.0625, lambda: 0.0, starts: 1 }],
        j_star: 0.0625,
        isolated: true,
        unconverged: vec![],
        cluster_radius: 1e-6,
    };
    let oracle_set = s.oracle.solve_outer_exact(&scalar.prox_p, s.nu).map_err(|e| e.to_string())?;
    if (oracle_set.p_star()[0] - 0.5).abs() > 1e-9 || (oracle_set.j_star - 0.0625).abs() > 1e-12 {
        return Err(format!("oracle optimum {} / {} disagrees with hand values", oracle_set.p_star(), oracle_set.j_star));
    }
    let (iters, _, _) = check_convergence(&s, &hand, "scalar")?;
    let mut most = iters;
    for (k, inst) in vertex_instances(10).iter().enumerate() {
        let s = setup(inst)?;
        let set = s.oracle.solve_outer_exact(&inst.prox_p, s.nu).map_err(|e| e.to_string())?;
        let (iters, _, _) = check_convergence(&s, &set, &format!("instance {k}"))?;
        most = most.max(iters);
    }
    Ok(format!("scalar in {iters} iterations; 10 special-case instances, at most {most} iterations"))
}

/// Mean `dist_to_P⋆` over the last 10% of a noisy run.
fn plateau(inst: &Instance, s: &Setup, set: &OptimalSet, kappa: usize, delta: f64) -> Result<f64, String> {
    let mut cfg = SolverConfig::new(s.mu, s.nu, kappa);
    cfg.max_outer = 2_000;
    cfg.noise = Some(NoiseSpec { amplitude: delta, seed: 8, distribution: NoiseDistribution::UniformBall });
    let p0 = upper_corner(&inst.prox_p);
    let u0 = DVector::zeros(inst.model.n_decision());
    let trace = run_bilevel(&inst.model, &inst.prox_p, &inst.prox_u, &cfg, &p0, &u0, None).map_err(|e| e.to_string())?;
    let tail = &trace.rows[trace.rows.len() - trace.rows.len() / 10..];
    Ok(tail.iter().map(|r| set.dist(&r.p)).sum::<f64>() / tail.len() as f64)
}

fn criterion_8() -> Outcome {
    let deltas = [1e-1, 1e-2, 1e-3];
    let sweep = |inst: &Instance| -> Result<Vec<f64>, String> {
        let s = setup(inst)?;
        let set = s.oracle.solve_outer_exact(&inst.prox_p, s.nu).map_err(|e| e.to_string())?;
        let kappa = s.cert.k_min.ok_or("not certified")?;
        deltas.iter().map(|d| plateau(inst, &s, &set, kappa, *d)).collect()
    };
    let main = sweep(&instances::scalar_tracking())?;
    let interior = sweep(&instances::scalar_tracking_interior())?;
    let finite = main.iter().all(|v| v.is_finite());
    let monotone = main.windows(2).all(|w| w[1] <= w[0]);
    let halves = main.windows(2).all(|w| w[1] <= 0.5 * w[0]);
    let info = format!(
        "plateaus {:?}; interior-optimum variant (informational) {:?}",
        main.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
        interior.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
    );
    if finite && monotone && halves {
        Ok(info)
    } else {
        Err(info)
    }
}

fn criterion_9() -> Outcome {
    for eta in [0.3, 0.6, 0.9] {
        let start = (1..).find(|k| f64::powi(eta, *k) < 1e-3).unwrap() as usize;
        for kappa in start..start + 50 {
            let (_, g0) = certify::gamma_kappa_gain(eta, kappa, 1.0).map_err(|e| e.to_string())?;
            let (_, g1) = certify::gamma_kappa_gain(eta, kappa + 1, 1.0).map_err(|e| e.to_string())?;
            if ((g1 / g0) / eta - 1.0).abs() > 0.1 {
                return Err(format!("eta {eta}, kappa {kappa}: ratio {}", g1 / g0));
            }
        }
    }
    // λ⋆ halving on certified instances with η > 0.
    let mut checked = 0;
    for inst in vertex_instances(5) {
        let s = setup(&inst)?;
        let c = &s.cert.constants;
        let full = certify::min_kappa(c, 10_000).map_err(|e| e.to_string())?;
        let halved = certify::Constants { lambda_star: c.lambda_star / 2.0, ..c.clone() };
        let half = certify::min_kappa(&halved, 10_000).map_err(|e| e.to_string())?;
        match (full, half) {
            (Some(f), Some(h)) if h <= f => checked += 1,
            (None, _) => checked += 1,
            other => return Err(format!("K_min {other:?} increased when lambda_star was halved")),
        }
    }
    Ok(format!("ratio within 10% of eta for eta in {{0.3, 0.6, 0.9}}; K_min monotone on {checked} instances"))
}

fn criterion_10() -> Outcome {
    let once = || -> Result<(String, String, String), String> {
        let inst = vertex_instances(1).remove(0);
        let s = setup(&inst)?;
        let k = s.cert.k_min.unwrap_or(1);
        let plain = noiseless_run(&s, k, 500)?;
        let mut cfg = SolverConfig::new(s.mu, s.nu, k);
        cfg.max_outer = 300;
        cfg.noise = Some(NoiseSpec { amplitude: 0.05, seed: 77, distribution: NoiseDistribution::UniformBall });
        let p0 = upper_corner(&inst.prox_p);
        let noisy = run_bilevel(&inst.model, &inst.prox_p, &inst.prox_u, &cfg, &p0, &DVector::zeros(inst.model.n_decision()), Some(&s.oracle))
            .map_err(|e| e.to_string())?;
        Ok((plain.to_csv(), noisy.to_csv(), serde_json::to_string_pretty(&s.cert).unwrap()))
    };
    let a = once()?;
    let b = once()?;
    if a == b {
        Ok(format!("trace.csv ({} + {} bytes) and certificate.json ({} bytes) identical", a.0.len(), a.1.len(), a.2.len()))
    } else {
        Err("outputs differ between reruns".into())
    }
}

/// Documents the known gap: at an interior optimum `Λ ~ e` while
/// `J⋆ ~ e²`, so the fitted slope `b2 = max Λ/J⋆` grows like the inverse
/// of the closest sample distance. Informational only.
fn interior_note() -> String {
    let inst = instances::scalar_tracking_interior();
    match setup(&inst) {
        Ok(s) => format!("interior-optimum scalar instance: b2 = {:.3e}, K_min = {:?}", s.cert.constants.b2, s.cert.k_min),
        Err(e) => format!("interior-optimum scalar instance: {e}"),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("prox laws", criterion_1),
        ("condensation", criterion_2),
        ("inner contraction", criterion_3),
        ("value-function gradient", criterion_4),
        ("gradient-error bound", criterion_5),
        ("dissipation and interconnection inequalities", criterion_6),
        ("convergence", criterion_7),
        ("ISS envelope under noise", criterion_8),
        ("gain asymptotics", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("[PASS] criterion {:>2} {name}: {msg} ({secs:.1} s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] criterion {:>2} {name}: {msg} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("[INFO] {}", interior_note());
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
