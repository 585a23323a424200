//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use hetdp::bounds::{
    lemma_check, make_equal_revenue, make_public_private, random_profile, two_level_spec,
    RandomProfileSpec,
};
use hetdp::mechanisms::RngState;
use hetdp::optimizer::{
    affine_segments, optimize_affine, optimize_threshold, ratio, two_level_affine_closed_form,
};
use hetdp::oracle::{empirical_mse, grid_oracle_affine, Estimator, SourceDistribution};
use hetdp::sweep::{Axis, Family, Param, Scale, SweepSpec};
use hetdp::PrivacyProfile;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn worked_example() -> PrivacyProfile {
    PrivacyProfile::from_pairs([(0.5, 1), (1.0, 1)], 0).unwrap()
}

fn worked_example_values() -> Outcome {
    let r = ratio(&worked_example());
    ensure(rel_err(r.mse_thr, 17.0 / 8.0) <= 1e-12, || {
        format!("mse_thr = {} (want 17/8)", r.mse_thr)
    })?;
    ensure(rel_err(r.mse_aff, 37.0 / 36.0) <= 1e-12, || {
        format!("mse_aff = {} (want 37/36)", r.mse_aff)
    })?;
    ensure(
        rel_err(r.ratio, 153.0 / 74.0) <= 1e-12 && r.ratio > 2.0,
        || format!("ratio = {} (want 153/74)", r.ratio),
    )?;
    Ok(format!(
        "thr {} aff {} ratio {}",
        r.mse_thr, r.mse_aff, r.ratio
    ))
}

fn public_private_tight_instance() -> Outcome {
    let p = make_public_private(10_000, 0.001, 12).unwrap();
    let r = ratio(&p).ratio;
    ensure((1.93..=1.97).contains(&r), || format!("ratio = {r}"))?;
    Ok(format!("ratio {r:.6}"))
}

fn public_private_sweep() -> Outcome {
    let mut summary = Vec::new();
    for n2 in [1.0, 12.0, 100.0, 1000.0] {
        let spec = SweepSpec::new(
            Family::PublicPrivate,
            Axis {
                param: Param::N1,
                lo: 1e2,
                hi: 1e7,
                scale: Scale::Log,
                steps: 50,
            },
            Axis {
                param: Param::Eps1,
                lo: 1e-4,
                hi: 1.0,
                scale: Scale::Log,
                steps: 50,
            },
        )
        .with_fixed(Param::N2, n2);
        let rows = spec.evaluate().map_err(|e| e.to_string())?;
        let worst = rows.iter().map(|r| r.ratio).fold(f64::MIN, f64::max);
        ensure(worst <= 2.0 + 1e-9, || {
            format!("n2={n2}: ratio {worst} exceeds 2")
        })?;

        // Rows are row-major in axis1 (n1), 50 entries per row.
        let arg = rows.iter().position(|r| r.ratio == worst).unwrap();
        let (i, j) = (arg / 50, arg % 50);
        // signed distance from the optimal-balance curve
        let g = |k: usize| {
            let r = &rows[k];
            r.axis1 / (1.0 + 8.0 / (r.axis1 * r.axis2 * r.axis2)) - n2
        };
        let mut neighbours = Vec::new();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if (0..50).contains(&a) && (0..50).contains(&b) {
                    neighbours.push(g((a * 50 + b) as usize));
                }
            }
        }
        let crosses = neighbours.iter().any(|&v| v >= 0.0) && neighbours.iter().any(|&v| v <= 0.0);
        ensure(crosses, || {
            format!(
                "n2={n2}: argmax at n1={} eps1={} is more than one cell from the curve",
                rows[arg].axis1, rows[arg].axis2
            )
        })?;
        summary.push(format!("n2={n2}: max {worst:.4}"));
    }
    Ok(summary.join(", "))
}

fn two_level_factor_four() -> Outcome {
    let spec = two_level_spec();
    let mut rng = RngState::derive(0xacce_0004, 0);
    let mut worst: f64 = 0.0;
    for k in 0..10_000 {
        let p = random_profile(&mut rng, &spec);
        ensure(p.num_levels() == 2 && p.public_count() == 0, || {
            format!("instance {k} is not two-level: {p:?}")
        })?;
        let r = ratio(&p).ratio;
        ensure(r <= 4.0 + 1e-9, || {
            format!("instance {k}: ratio {r} for {p:?}")
        })?;
        worst = worst.max(r);
    }
    let example = ratio(&worked_example()).ratio;
    ensure(example > 2.0, || {
        format!("worked example ratio {example} is not above 2")
    })?;
    Ok(format!(
        "max random ratio {worst:.4}, worked example {example:.4}"
    ))
}

fn two_level_closed_form() -> Outcome {
    let spec = two_level_spec();
    let mut rng = RngState::derive(0xacce_0005, 0);
    let (mut worst_mse, mut worst_tau): (f64, f64) = (0.0, 0.0);
    for k in 0..1000 {
        let p = random_profile(&mut rng, &spec);
        let [a, b] = p.levels() else {
            return Err(format!("instance {k} is not two-level"));
        };
        let closed = two_level_affine_closed_form(a.count, a.epsilon, b.count, b.epsilon)
            .map_err(|e| e.to_string())?;
        let exact = optimize_affine(&p).mse;
        let e = rel_err(closed, exact);
        ensure(e <= 1e-9, || {
            format!("instance {k}: closed {closed} vs optimizer {exact}")
        })?;
        worst_mse = worst_mse.max(e);

        let r = 1.0 + 8.0 / (a.count as f64 * a.epsilon * a.epsilon);
        let t = affine_segments(&p)[1]
            .stationary_point()
            .ok_or_else(|| format!("instance {k}: no stationary point"))?;
        let e = rel_err(t, r * a.epsilon);
        ensure(e <= 1e-12, || {
            format!("instance {k}: stationary {t} vs R eps1 {}", r * a.epsilon)
        })?;
        worst_tau = worst_tau.max(e);
    }
    Ok(format!(
        "max rel err mse {worst_mse:.2e}, stationary point {worst_tau:.2e}"
    ))
}

fn equal_revenue_sandwich() -> Outcome {
    let mut lines = Vec::new();
    for m in 2u32..=14 {
        let p = make_equal_revenue(m).unwrap();
        let n = (1u64 << m) - 1;
        let r = ratio(&p).ratio;
        let mf = m as f64;
        let lower = mf * mf / 5.0;
        let upper = (1.0 + (n as f64).log2()).powi(2).min(mf * mf);
        // relative slack only guards rounding at the m²/5 end
        ensure(
            r >= lower * (1.0 - 1e-12) && r <= upper * (1.0 + 1e-12),
            || format!("m={m}: ratio {r} outside [{lower}, {upper}]"),
        )?;
        for l in p.levels() {
            let mass = l.epsilon * p.n_at_threshold(l.epsilon) as f64;
            ensure(mass < 2.0, || {
                format!("m={m}: eps {} gives eps*n = {mass}", l.epsilon)
            })?;
        }
        if m == 2 || m == 14 {
            lines.push(format!("m={m}: {lower:.2} <= {r:.4} <= {upper:.2}"));
        }
    }
    Ok(lines.join(", "))
}

fn threshold_selection_lemma() -> Outcome {
    let spec = RandomProfileSpec::default();
    let mut rng = RngState::derive(0xacce_0007, 0);
    let mut checked = 0;
    for k in 0..1000 {
        let p = random_profile(&mut rng, &spec);
        let lo = p.min_epsilon().unwrap() / 10.0;
        let hi = p.max_epsilon().unwrap() * 10.0;
        for _ in 0..10 {
            let tau = rng.log_uniform(lo, hi);
            let c = lemma_check(&p, tau).map_err(|e| e.to_string())?;
            ensure(
                c.threshold_mass >= c.s_tau / c.factor * (1.0 - 1e-12),
                || {
                    format!(
                        "profile {k} tau {tau}: eps*n = {} < s/factor = {}",
                        c.threshold_mass,
                        c.s_tau / c.factor
                    )
                },
            )?;
            ensure(
                c.mse_thr <= c.factor * c.factor * c.mse_aff * (1.0 + 1e-12),
                || {
                    format!(
                        "profile {k} tau {tau}: mse_thr {} > factor^2 mse_aff {}",
                        c.mse_thr,
                        c.factor * c.factor * c.mse_aff
                    )
                },
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (profile, tau) pairs"))
}

fn grid_oracle_agreement() -> Outcome {
    let spec = RandomProfileSpec::default();
    let mut rng = RngState::derive(0xacce_0008, 0);
    let (mut with_public, mut levels_seen) = (0, [false; 13]);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let p = random_profile(&mut rng, &spec);
        with_public += usize::from(p.public_count() > 0);
        levels_seen[p.num_levels()] = true;
        let exact = optimize_affine(&p).mse;
        let (_, grid) = grid_oracle_affine(&p, 100_000).map_err(|e| e.to_string())?;
        let e = rel_err(grid, exact);
        ensure(e <= 1e-6, || {
            format!("profile {k}: grid {grid} vs exact {exact}")
        })?;
        worst = worst.max(e);
    }
    ensure(with_public > 0 && with_public < 100, || {
        format!("{with_public}/100 profiles have public data")
    })?;
    ensure(levels_seen[1] && levels_seen[12], || {
        "level counts do not span 1..=12".into()
    })?;
    Ok(format!(
        "max rel err {worst:.2e}, {with_public}/100 with public data"
    ))
}

fn monte_carlo() -> Outcome {
    const TRIALS: u64 = 1_000_000;
    let mut lines = Vec::new();
    let cases = [
        ("worked example", worked_example()),
        ("equal revenue m=3", make_equal_revenue(3).unwrap()),
    ];
    for (seed, (name, p)) in cases.iter().enumerate() {
        let (eps, _) = optimize_threshold(p);
        let estimators = [
            ("affine", Estimator::Affine(optimize_affine(p))),
            ("threshold", Estimator::Threshold(eps)),
        ];
        for (label, est) in estimators {
            let analytic = est.analytic_mse(p);
            let mc = empirical_mse(
                p,
                &est,
                SourceDistribution::RademacherHalf,
                TRIALS,
                seed as u64,
            )
            .map_err(|e| e.to_string())?;
            let z = mc.z_score(analytic).ok_or("zero standard error")?;
            ensure(z.abs() <= 4.0, || {
                format!(
                    "{name} {label}: empirical {} vs analytic {analytic} (z = {z:.2})",
                    mc.empirical_mse
                )
            })?;
            lines.push(format!("{name} {label} z={z:+.2}"));
        }
    }
    let p = make_equal_revenue(3).unwrap();
    let (eps, _) = optimize_threshold(&p);
    let mc = empirical_mse(
        &p,
        &Estimator::Threshold(eps),
        SourceDistribution::PointMass(0.0),
        TRIALS,
        7,
    )
    .map_err(|e| e.to_string())?;
    ensure(mc.empirical_mse > 0.5, || {
        format!(
            "point-mass threshold mse {} is not above 1/2",
            mc.empirical_mse
        )
    })?;
    lines.push(format!("point mass threshold mse {:.4}", mc.empirical_mse));
    Ok(lines.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 worked example risks", worked_example_values),
        (
            "2 public/private tight instance",
            public_private_tight_instance,
        ),
        ("3 public/private factor-2 sweep", public_private_sweep),
        ("4 two-level factor-4 bound", two_level_factor_four),
        ("5 two-level closed form", two_level_closed_form),
        ("6 equal-revenue sandwich", equal_revenue_sandwich),
        ("7 threshold selection lemma", threshold_selection_lemma),
        ("8 grid oracle agreement", grid_oracle_agreement),
        ("9 Monte Carlo validation", monte_carlo),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(detail) => println!("[PASS] AC{name} ({ms:.0} ms): {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] AC{name} ({ms:.0} ms): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
