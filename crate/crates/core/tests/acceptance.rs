//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! cargo test -p ood-sentinel --test acceptance

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use common::{fixture, latent_model, load};
use ood_sentinel::calibration::{
    distance, fit_gamma, gamma_cdf, gamma_quantile, split_indices, GammaParams, DEFAULT_SPLIT,
};
use ood_sentinel::detection::batch_detect;
use ood_sentinel::evaluation::{aggregate_row, build_test_mix, confusion, f1, Label};
use ood_sentinel::recipe::{parse_recipe, recipe_dimension, Block, Recipe, Term, TermKind};
use ood_sentinel::representation::{compose, cosine_similarity, LanguageFeatures};
use ood_sentinel::rng::SplitMix64;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn table_statistics() -> Outcome {
    let f1 = [88.03, 88.68, 60.06, 88.84, 60.56, 89.08, 59.81, 81.77, 59.88, 60.07];
    let (mean, std) = aggregate_row(&f1).map_err(|e| e.to_string())?;
    let (m, s) = (round2(mean), round2(std));
    check(
        m == 73.67 && s == 13.74,
        format!("mean {mean:.4} -> {m:.2} (want 73.67), std {std:.4} -> {s:.2} (want 13.74)"),
    )
}

fn gamma_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let dist = Gamma::new(2.0, 3.0).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let fit = fit_gamma(&xs).map_err(|e| e.to_string())?;
    let (k, mean) = (fit.params.shape(), fit.params.mean());
    check(
        (1.90..=2.10).contains(&k) && ((mean - 6.0) / 6.0).abs() <= 0.02 && fit.converged,
        format!("k {k:.4}, k*theta {mean:.4}, converged {}", fit.converged),
    )
}

fn quantile_round_trip() -> Outcome {
    let mut rng = SplitMix64::new(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = uniform(&mut rng, 0.1, 50.0);
        let theta = uniform(&mut rng, 0.01, 100.0);
        let p = uniform(&mut rng, 0.001, 0.999);
        let params = GammaParams::new(k, theta).map_err(|e| e.to_string())?;
        let x = gamma_quantile(&params, p).map_err(|e| format!("k {k} theta {theta} p {p}: {e}"))?;
        worst = worst.max((gamma_cdf(&params, x) - p).abs());
    }
    check(worst <= 1e-9, format!("max |cdf(quantile(p)) - p| = {worst:.3e}"))
}

fn exponential_case() -> Outcome {
    let params = GammaParams::new(1.0, 1.0).map_err(|e| e.to_string())?;
    let q = gamma_quantile(&params, 0.9).map_err(|e| e.to_string())?;
    let err = (q - 10f64.ln()).abs();
    check(err <= 1e-9, format!("quantile(0.9) = {q:.15}, |q - ln 10| = {err:.3e}"))
}

fn threshold_coverage() -> Outcome {
    let train = load("id_train.emb");
    let model = latent_model("v", "");
    let (_, yf) = split_indices(train.count(), DEFAULT_SPLIT, model.provenance.seed).map_err(|e| e.to_string())?;
    let mut covered = 0;
    for &i in &yf {
        let eps = distance(&train.row_f64(i), &model.omega_mean).map_err(|e| e.to_string())?;
        if eps <= model.threshold {
            covered += 1;
        }
    }
    let frac = covered as f64 / yf.len() as f64;
    check(
        (0.87..=0.93).contains(&frac),
        format!("{covered}/{} of Yf within threshold ({frac:.4})", yf.len()),
    )
}

fn separation() -> Outcome {
    let model = latent_model("v", "");
    let (mix, labels) =
        build_test_mix(&load("id_test.emb"), &load("ood_rot60.emb"), 0).map_err(|e| e.to_string())?;
    let verdicts: Vec<_> = batch_detect(&model, Some(&mix), None, None, None)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.verdict)
        .collect();
    let c = confusion(&labels, &verdicts).map_err(|e| e.to_string())?;
    let n_id = labels.iter().filter(|l| **l == Label::Id).count();
    let score = f1(&c).unwrap_or(0.0);
    check(
        score >= 0.95 && n_id * 2 == labels.len(),
        format!("F1 {score:.4} (tp {} fp {} tn {} fn {})", c.tp, c.fp, c.tn, c.fn_),
    )
}

/// Factors are mostly small, with an occasional one below `max_factor`.
fn random_term(rng: &mut SplitMix64, max_factor: u32) -> Term {
    let kind = [TermKind::V, TermKind::Pi, TermKind::PiBar][rng.below(3)];
    let factor = match rng.below(6) {
        0..=2 => 1,
        3 | 4 => 2 + rng.below(4) as u32,
        _ => 6 + rng.below(max_factor as usize - 6) as u32,
    };
    Term::new(kind, factor).unwrap()
}

fn random_terms(rng: &mut SplitMix64, min: usize, max_factor: u32) -> Vec<Term> {
    (0..min + rng.below(3)).map(|_| random_term(rng, max_factor)).collect()
}

fn random_recipe(rng: &mut SplitMix64, max_factor: u32) -> Recipe {
    match rng.below(3) {
        0 => Recipe::Term(random_term(rng, max_factor)),
        1 => Recipe::add(random_terms(rng, 2, max_factor)).unwrap(),
        _ => {
            let blocks = (0..2 + rng.below(3))
                .map(|_| {
                    if rng.below(2) == 0 {
                        Block::Term(random_term(rng, max_factor))
                    } else {
                        Block::Add(random_terms(rng, 2, max_factor))
                    }
                })
                .collect();
            Recipe::append(blocks).unwrap()
        }
    }
}

fn parser_round_trip() -> Outcome {
    let t = |kind, factor| Term::new(kind, factor).unwrap();
    let documented = [
        (
            "(pi,3v)",
            Recipe::Append(vec![Block::Term(t(TermKind::Pi, 1)), Block::Term(t(TermKind::V, 3))]),
        ),
        ("2pibar", Recipe::Term(t(TermKind::PiBar, 2))),
        ("2pi+v", Recipe::Add(vec![t(TermKind::Pi, 2), t(TermKind::V, 1)])),
        (
            "(2pi,2pibar)",
            Recipe::Append(vec![Block::Term(t(TermKind::Pi, 2)), Block::Term(t(TermKind::PiBar, 2))]),
        ),
    ];
    for (text, ast) in &documented {
        let parsed = parse_recipe(text).map_err(|e| format!("{text}: {e}"))?;
        if &parsed != ast {
            return Err(format!("{text} parsed to {parsed:?}"));
        }
    }
    let mut rng = SplitMix64::new(7);
    for n in 0..10_000 {
        let ast = random_recipe(&mut rng, 100_000);
        let text = ast.render();
        let back = parse_recipe(&text).map_err(|e| format!("case {n} {text}: {e}"))?;
        if back != ast || back.render() != text {
            return Err(format!("case {n}: {text} came back as {back:?}"));
        }
    }
    Ok("4 table notations, 10000 generated ASTs".into())
}

fn compose_dimension_agreement() -> Outcome {
    let mut rng = SplitMix64::new(8);
    for n in 0..10_000 {
        let recipe = random_recipe(&mut rng, 40);
        let (dv, np, nb) = (1 + rng.below(64), 1 + rng.below(16), 1 + rng.below(16));
        let mut vec_of = |len: usize| -> Vec<f64> { (0..len).map(|_| uniform(&mut rng, -1.0, 1.0)).collect() };
        let v = vec_of(dv);
        let feats = LanguageFeatures::new(vec_of(np), vec_of(nb)).map_err(|e| e.to_string())?;
        let omega = compose(&recipe, Some(&v), &feats).map_err(|e| format!("case {n} {recipe}: {e}"))?;
        let want = recipe_dimension(&recipe, dv, np, nb).map_err(|e| e.to_string())?;
        if omega.len() != want {
            return Err(format!(
                "case {n} {recipe} dims ({dv},{np},{nb}): compose {} vs {want}",
                omega.len()
            ));
        }
    }
    Ok("10000 random (recipe, dims) pairs".into())
}

fn calibrate_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("model{run}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_ood-sentinel"))
            .args(["calibrate", "--id"])
            .arg(fixture("id_train.emb"))
            .arg("--prompts-normal")
            .arg(fixture("prompts_normal.emb"))
            .arg("--prompts-anom")
            .arg(fixture("prompts_anom.emb"))
            .args(["--recipe", "(pi,2pibar,3v)", "--seed", "42", "--split", "0.6", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    check(
        files[0] == files[1],
        format!("two runs, {} and {} bytes", files[0].len(), files[1].len()),
    )
}

fn cosine_invariants() -> Outcome {
    let mut rng = SplitMix64::new(10);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = 1 + rng.below(64);
        let a: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -10.0, 10.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -10.0, 10.0)).collect();
        let c = 10f64.powf(uniform(&mut rng, -3.0, 3.0));
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let flipped: Vec<f64> = a.iter().map(|x| -x * c).collect();
        let cos = |x: &[f64], y: &[f64]| cosine_similarity(x, y).map_err(|e| e.to_string());
        let base = cos(&a, &b)?;
        worst = worst
            .max((cos(&scaled, &b)? - base).abs())
            .max((cos(&a, &a)? - 1.0).abs())
            .max((cos(&a, &flipped)? + 1.0).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:.3e} over 10000 cases"))
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let ms = Duration::from_millis;
    let criteria = [
        Criterion { name: "table statistics", budget: Some(ms(1)), run: table_statistics },
        Criterion { name: "gamma fit recovery", budget: Some(ms(1000)), run: gamma_recovery },
        Criterion { name: "quantile round trip", budget: Some(ms(5000)), run: quantile_round_trip },
        Criterion { name: "exponential quantile", budget: None, run: exponential_case },
        Criterion { name: "threshold coverage", budget: Some(ms(5000)), run: threshold_coverage },
        Criterion { name: "end-to-end separation", budget: Some(ms(5000)), run: separation },
        Criterion { name: "recipe parser", budget: None, run: parser_round_trip },
        Criterion { name: "compose/recipe_dimension", budget: None, run: compose_dimension_agreement },
        Criterion { name: "calibrate determinism", budget: None, run: calibrate_determinism },
        Criterion { name: "cosine invariants", budget: None, run: cosine_invariants },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.filter(|b| elapsed > *b);
        let (ok, detail) = match (outcome, over) {
            (Ok(d), None) => (true, d),
            (Ok(d), Some(b)) => (false, format!("{d}; took {elapsed:?}, budget {b:?}")),
            (Err(d), _) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {}: {detail} [{:.1} ms]",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64() * 1e3
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
