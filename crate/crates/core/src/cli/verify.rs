//! Property suites behind `submult verify`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Suite, VerifyArgs};
use crate::asm::{
    chunk_rng, decimal12, fast_pair_defect, is_exact_zero, measure_asm_sampled, sub_pair_defect,
    SAMPLE_CHUNK,
};
use crate::circle::{arg_distance, chord_distance, UnitPoint};
use crate::constructions::{
    mm_gap_analysis, random_det_one_diagonal, random_tadpole, sr_bound, sr_closed_form_ratio,
    sr_sample, spectrum_dck, tadpole, tadpole_case, tadpole_generators, tadpole_group_order,
    tadpole_mul, LambdaMode, MillerMorenoParams, SrParams, TadpoleCase, TadpoleSampler,
};
use crate::error::{Error, Result};
use crate::groups::{close_with, ClosureOptions};
use crate::linalg::{eigensolve_dense, exact_vs_numeric, UMatrix};

/// Tolerance for comparing closed-form and numeric spectra (scaled angle).
pub const SPECTRUM_TOLERANCE: f64 = 1e-8;
/// Slack on the tadpole bound `1/(2p²)` for real-angle samples.
pub const BOUND_SLACK: f64 = 1e-9;
/// Agreement between the measured and closed-form `S_r` ratios.
pub const SR_FORMULA_TOLERANCE: f64 = 1e-10;
/// Float slack in the chord/arc inequalities.
pub const CONVERSION_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub parameters: Value,
    pub evidence: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

impl<'de> Deserialize<'de> for Suite {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        <Suite as clap::ValueEnum>::from_str(&s, false).map_err(serde::de::Error::custom)
    }
}

pub fn run_suite(args: &VerifyArgs) -> Result<VerifyReport> {
    let tol = |default: f64| args.tolerance.unwrap_or(default);
    match args.suite {
        Suite::LemmaSpectrum => lemma_spectrum(args.p.unwrap_or(7), args.trials, args.seed, tol(SPECTRUM_TOLERANCE)),
        Suite::TadpoleClosure => tadpole_closure(args.p.unwrap_or(3), args.max_elements, args.seed),
        Suite::TadpoleBound => tadpole_bound(args.p.unwrap_or(3), args.pairs, args.seed, tol(BOUND_SLACK)),
        Suite::MmGap => mm_gap(args.p.unwrap_or(3), args.q.unwrap_or(151), args.beta_order),
        Suite::SrBound => sr_bound_suite(args.r, args.n, args.samples, args.seed, tol(SR_FORMULA_TOLERANCE)),
        Suite::Conversions => conversions(args.samples, args.seed, tol(CONVERSION_SLACK)),
    }
}

fn first_failure<T>(items: impl IntoIterator<Item = Option<T>>) -> Option<T> {
    items.into_iter().flatten().next()
}

/// Closed-form spectrum of `D·C^k` against the dense eigensolver, for every
/// `k` and `trials` random determinant-one `D` (even trials exact, odd
/// trials real angles).
pub fn lemma_spectrum(p: u64, trials: u64, seed: u64, tolerance: f64) -> Result<VerifyReport> {
    let rows: Vec<(f64, Option<Value>)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let mut rng = chunk_rng(seed, t);
            let den = if t % 2 == 0 { Some(rng.gen_range(2..=60)) } else { None };
            let d = random_det_one_diagonal(p, den, &mut rng);
            let mut worst: f64 = 0.0;
            let mut bad = None;
            for k in 0..p {
                let exact = spectrum_dck(&d, k, p)?;
                let m = UMatrix::MonomialCycle {
                    d: d.clone(),
                    k: k as usize,
                };
                let num = eigensolve_dense(&m.to_dense())?;
                let dist = exact_vs_numeric(&exact, &num.values).unwrap_or(f64::INFINITY);
                worst = worst.max(dist);
                if dist > tolerance && bad.is_none() {
                    bad = Some(json!({"trial": t, "d": d, "k": k, "distance": dist}));
                }
            }
            Ok((worst, bad))
        })
        .collect::<Result<_>>()?;
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let bad = first_failure(rows.into_iter().map(|r| r.1));
    Ok(VerifyReport {
        suite: Suite::LemmaSpectrum,
        passed: bad.is_none(),
        parameters: json!({"p": p, "trials": trials, "seed": seed, "tolerance": tolerance}),
        evidence: json!({"checked": trials * p, "max_distance": worst}),
        counterexample: bad,
        generated_at: None,
    })
}

/// Closes the tadpole generators, checks the order against the parameter
/// count, membership of random parameter sets, and the product law on
/// random triples.
pub fn tadpole_closure(p: u64, max_elements: usize, seed: u64) -> Result<VerifyReport> {
    let expected = tadpole_group_order(p);
    if expected > max_elements as u64 {
        return Err(Error::InvalidParams(format!(
            "tadpole group for p = {p} has {expected} elements; raise --max-elements"
        )));
    }
    let opts = ClosureOptions {
        max_elements,
        ..ClosureOptions::default()
    };
    let g = close_with(&tadpole_generators(p)?, &opts)?;
    let mut rng = chunk_rng(seed, 0);
    let mut bad = None;
    let den = Some(p * p);
    let mut members = 0;
    for _ in 0..200 {
        let t = random_tadpole(p, den, &mut rng);
        if g.index_of(&tadpole(&t)?).is_some() {
            members += 1;
        } else if bad.is_none() {
            bad = Some(json!({"missing": t}));
        }
    }
    let mut triples = 0;
    for _ in 0..1000 {
        let a = random_tadpole(p, den, &mut rng);
        let b = random_tadpole(p, den, &mut rng);
        let c = random_tadpole(p, den, &mut rng);
        let ab = tadpole_mul(&a, &b)?;
        let left = tadpole_mul(&ab, &c)?;
        let right = tadpole_mul(&a, &tadpole_mul(&b, &c)?)?;
        let law = tadpole(&ab)? == tadpole(&a)?.matmul(&tadpole(&b)?)?;
        if (left != right || !law) && bad.is_none() {
            bad = Some(json!({"a": a, "b": b, "c": c, "associative": left == right, "product_law": law}));
        }
        triples += 1;
    }
    let order_ok = g.complete && g.len() as u64 == expected;
    if !order_ok && bad.is_none() {
        bad = Some(json!({"order": g.len(), "expected": expected, "complete": g.complete}));
    }
    Ok(VerifyReport {
        suite: Suite::TadpoleClosure,
        passed: bad.is_none(),
        parameters: json!({"p": p, "seed": seed, "max_elements": max_elements}),
        evidence: json!({
            "order": g.len(),
            "expected_order": expected,
            "random_members": members,
            "triples_checked": triples,
        }),
        counterexample: bad,
        generated_at: None,
    })
}

/// Sampled tadpole pairs with real angles stay within `1/(2p²)`, and exact
/// pairs outside the product-diagonal case have defect exactly 0.
pub fn tadpole_bound(p: u64, pairs: u64, seed: u64, slack: f64) -> Result<VerifyReport> {
    let bound = 1.0 / (2.0 * (p * p) as f64);
    let real = measure_asm_sampled(&TadpoleSampler { p, exact_den: None }, pairs, seed)?;
    let exact_den = Some(4 * p * p * 5);
    let chunks = pairs.div_ceil(SAMPLE_CHUNK);
    let rows: Vec<([u64; 4], f64, Option<Value>)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut rng = chunk_rng(seed ^ 0x5eed, c);
            let mut counts = [0u64; 4];
            let mut case4_max: f64 = 0.0;
            let mut bad = None;
            let end = ((c + 1) * SAMPLE_CHUNK).min(pairs);
            for _ in c * SAMPLE_CHUNK..end {
                let a = random_tadpole(p, exact_den, &mut rng);
                let b = random_tadpole(p, exact_den, &mut rng);
                let (ma, mb) = (tadpole(&a)?, tadpole(&b)?);
                let d = fast_pair_defect(&ma.spectrum()?, &mb.spectrum()?, &ma.matmul(&mb)?.spectrum()?);
                let case = tadpole_case(&a, &b);
                counts[case as usize] += 1;
                if case == TadpoleCase::ProductDiagonal {
                    case4_max = case4_max.max(d.value());
                    if d.value() > bound + slack && bad.is_none() {
                        bad = Some(json!({"a": a, "b": b, "defect": d}));
                    }
                } else if !is_exact_zero(&d) && bad.is_none() {
                    bad = Some(json!({"a": a, "b": b, "case": case, "defect": d}));
                }
            }
            Ok((counts, case4_max, bad))
        })
        .collect::<Result<_>>()?;
    let mut counts = [0u64; 4];
    let mut case4_max: f64 = 0.0;
    for r in &rows {
        for (c, n) in counts.iter_mut().zip(r.0) {
            *c += n;
        }
        case4_max = case4_max.max(r.1);
    }
    let mut bad = first_failure(rows.into_iter().map(|r| r.2));
    if real.epsilon() > bound + slack && bad.is_none() {
        bad = Some(json!({"worst_real_pair": real.worst}));
    }
    Ok(VerifyReport {
        suite: Suite::TadpoleBound,
        passed: bad.is_none(),
        parameters: json!({"p": p, "pairs": pairs, "seed": seed, "slack": slack}),
        evidence: json!({
            "bound": decimal12(bound),
            "max_defect_real_angles": decimal12(real.epsilon()),
            "worst_real_pair": real.worst,
            "exact_case_counts": {
                "both_diagonal": counts[TadpoleCase::BothDiagonal as usize],
                "one_diagonal": counts[TadpoleCase::OneDiagonal as usize],
                "none_diagonal": counts[TadpoleCase::NoneDiagonal as usize],
                "product_diagonal": counts[TadpoleCase::ProductDiagonal as usize],
            },
            "max_defect_product_diagonal_exact": decimal12(case4_max),
        }),
        counterexample: bad,
        generated_at: None,
    })
}

/// Counting and gap checks for the default Miller–Moreno instance.
pub fn mm_gap(p: u64, q: u64, beta_order: u64) -> Result<VerifyReport> {
    let params = MillerMorenoParams::default_instance(p, q)?.with_beta_orders(vec![beta_order])?;
    let r = mm_gap_analysis(&params)?;
    let predicted_exceeds = {
        let n2 = (r.n * r.n) as u64;
        // 1/(2(n²-1)) - 1/q > 1/(2n²)  iff  q > 2n²(n²-1)
        q > 2 * n2 * (n2 - 1)
    };
    let passed = r.cardinality_ok
        && r.spectra_match_y
        && r.midpoint_ok
        && r.root_ok
        && (!predicted_exceeds || r.exceeds_threshold);
    Ok(VerifyReport {
        suite: Suite::MmGap,
        passed,
        parameters: json!({"p": p, "q": q, "beta_order": beta_order, "theta_exponents": params.theta_exponents}),
        evidence: json!({"analysis": r, "threshold_violation_predicted": predicted_exceeds}),
        counterexample: None,
        generated_at: None,
    })
}

/// `S_r` pairs: measured ratio within `4r²/(1-r²)²` and equal to the closed
/// form `|γ/(αβ) - 1|`.
pub fn sr_bound_suite(r: f64, n: usize, samples: u64, seed: u64, tolerance: f64) -> Result<VerifyReport> {
    let params = SrParams {
        n,
        r,
        lambda_mode: LambdaMode::Sampled,
    };
    params.validate()?;
    let bound = sr_bound(r);
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let rows: Vec<(f64, f64, u64, Option<Value>)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut rng = chunk_rng(seed, c);
            let (mut max_ratio, mut max_diff, mut violations) = (0.0f64, 0.0f64, 0u64);
            let mut bad = None;
            let end = ((c + 1) * SAMPLE_CHUNK).min(samples);
            for index in c * SAMPLE_CHUNK..end {
                let a = sr_sample(&params, &mut rng);
                let b = sr_sample(&params, &mut rng);
                let d = sub_pair_defect(&a.matrix(), &b.matrix())?.sub_defect;
                let cf = sr_closed_form_ratio(&a, &b);
                max_ratio = max_ratio.max(d);
                max_diff = max_diff.max((d - cf).abs());
                let over = d > bound;
                violations += u64::from(over);
                if (over || (d - cf).abs() > tolerance) && bad.is_none() {
                    bad = Some(json!({"index": index, "a": a, "b": b, "ratio": d, "closed_form": cf}));
                }
            }
            Ok((max_ratio, max_diff, violations, bad))
        })
        .collect::<Result<_>>()?;
    let max_ratio = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_diff = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let violations: u64 = rows.iter().map(|r| r.2).sum();
    let bad = first_failure(rows.into_iter().map(|r| r.3));
    Ok(VerifyReport {
        suite: Suite::SrBound,
        passed: bad.is_none(),
        parameters: json!({"r": r, "n": n, "samples": samples, "seed": seed, "tolerance": tolerance}),
        evidence: json!({
            "bound": bound,
            "max_ratio": max_ratio,
            "violations": violations,
            "max_closed_form_difference": max_diff,
        }),
        counterexample: bad,
        generated_at: None,
    })
}

fn conversion_holds(z: &UnitPoint, w: &UnitPoint, slack: f64) -> (bool, f64, f64) {
    let chord = chord_distance(z, w);
    let arc = std::f64::consts::TAU * arg_distance(z, w).value();
    let ok = chord <= arc + slack && arc <= std::f64::consts::PI * chord + slack;
    (ok, chord, arc)
}

/// `|z - w| <= 2π·d(z, w) <= π|z - w|` on random pairs and on all pairs of
/// 60th roots of unity.
pub fn conversions(samples: u64, seed: u64, slack: f64) -> Result<VerifyReport> {
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let rows: Vec<(u64, Option<Value>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut n = 0;
            let mut bad = None;
            let end = ((c + 1) * SAMPLE_CHUNK).min(samples);
            for _ in c * SAMPLE_CHUNK..end {
                let z = UnitPoint::approx(rng.gen(), 0.0);
                let w = UnitPoint::approx(rng.gen(), 0.0);
                let (ok, chord, arc) = conversion_holds(&z, &w, slack);
                n += 1;
                if !ok && bad.is_none() {
                    bad = Some(json!({"z": z, "w": w, "chord": chord, "arc": arc}));
                }
            }
            (n, bad)
        })
        .collect();
    let mut checked: u64 = rows.iter().map(|r| r.0).sum();
    let mut bad = first_failure(rows.into_iter().map(|r| r.1));
    for i in 0..60 {
        for j in 0..60 {
            let (z, w) = (UnitPoint::exact(i, 60), UnitPoint::exact(j, 60));
            let (ok, chord, arc) = conversion_holds(&z, &w, slack);
            checked += 1;
            if !ok && bad.is_none() {
                bad = Some(json!({"z": z, "w": w, "chord": chord, "arc": arc}));
            }
        }
    }
    Ok(VerifyReport {
        suite: Suite::Conversions,
        passed: bad.is_none(),
        parameters: json!({"samples": samples, "seed": seed, "slack": slack}),
        evidence: json!({"pairs_checked": checked}),
        counterexample: bad,
        generated_at: None,
    })
}
