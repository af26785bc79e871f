//! Spectral defect measurement.
//!
//! For a pair `(A, B)` the ASM defect is
//! `max_{γ ∈ σ(AB)} min_{α ∈ σ(A), β ∈ σ(B)} dist(αβ, γ)` with `dist` the
//! scaled argument distance; the submultiplicative defect replaces `dist` by
//! `|γ - αβ| / (ρ(A)ρ(B))`. A group's `ε*` is the largest pair defect.
//!
//! Spectra are treated as sets here; multiplicity never changes a max-min
//! distance.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::circle::{
    arg_distance, chord_distance, format_ratio, parse_ratio, turn_distance, Distance,
    UnitPoint,
};
use crate::error::{Error, Result};
use crate::groups::GroupClosure;
use crate::linalg::{spectral_radius, GeneralMatrix, Spectrum, UMatrix, C64};

/// Pairs handled per deterministic RNG stream in sampled mode.
pub const SAMPLE_CHUNK: u64 = 256;

/// Largest common denominator for the integer fast path.
const MAX_COMMON_DEN: u64 = 1 << 62;

impl Serialize for Distance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DistanceDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Distance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = DistanceDoc::deserialize(d)?;
        match doc.exact {
            Some(s) => parse_ratio(&s)
                .map(Distance::Exact)
                .ok_or_else(|| serde::de::Error::custom(format!("bad rational {s:?}"))),
            None => Ok(Distance::Approx {
                value: doc.value,
                err: doc.err,
            }),
        }
    }
}

/// Rendering of a measured value: exact `"num/den"` when available, a
/// 12-significant-digit decimal, and the raw float with its uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceDoc {
    pub exact: Option<String>,
    pub decimal: String,
    pub value: f64,
    pub err: f64,
}

impl From<&Distance> for DistanceDoc {
    fn from(d: &Distance) -> Self {
        DistanceDoc {
            exact: d.exact().map(format_ratio),
            decimal: decimal12(d.value()),
            value: d.value(),
            err: d.err(),
        }
    }
}

/// `x` rounded to 12 significant digits, shortest rendering.
pub fn decimal12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    rounded.to_string()
}

/// An eigenvalue witness: on the circle for unitary pairs, a complex number
/// for the semigroup path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Witness {
    Unit(UnitPoint),
    Complex { re: f64, im: f64 },
}

impl From<C64> for Witness {
    fn from(z: C64) -> Self {
        Witness::Complex { re: z.re, im: z.im }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairLabel {
    Indices { a: usize, b: usize },
    Sampled {
        index: u64,
        a: serde_json::Value,
        b: serde_json::Value,
    },
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDefect {
    pub pair: PairLabel,
    /// Scaled-argument defect; absent on the non-unitary path.
    pub asm_defect: Option<Distance>,
    /// Euclidean defect normalized by `ρ(A)ρ(B)`.
    pub sub_defect: f64,
    pub witness_gamma: Option<Witness>,
    pub witness_alpha: Option<Witness>,
    pub witness_beta: Option<Witness>,
}

/// Spectra of a witness pair, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessSets {
    pub sigma_a: Vec<UnitPoint>,
    pub sigma_b: Vec<UnitPoint>,
    pub product_set: Vec<UnitPoint>,
    pub sigma_ab: Vec<UnitPoint>,
}

/// Distinct products `αβ`, sorted by angle (exact dedup for exact points).
pub fn product_set(a: &Spectrum, b: &Spectrum) -> Vec<UnitPoint> {
    let mut out = Vec::new();
    for x in a.distinct() {
        for y in b.distinct() {
            out.push(x.mul(&y));
        }
    }
    Spectrum::new(out).distinct()
}

/// Reference defect computation straight from the definition, exact
/// whenever the three spectra are.
pub fn defect_from_spectra(
    sa: &Spectrum,
    sb: &Spectrum,
    sab: &Spectrum,
) -> (Distance, UnitPoint, UnitPoint, UnitPoint) {
    let da = sa.distinct();
    let db = sb.distinct();
    let mut products = Vec::with_capacity(da.len() * db.len());
    for x in &da {
        for y in &db {
            products.push((x.mul(y), x, y));
        }
    }
    let mut worst: Option<(Distance, UnitPoint, UnitPoint, UnitPoint)> = None;
    for g in sab.distinct() {
        let mut best: Option<(Distance, usize)> = None;
        for (idx, (p, _, _)) in products.iter().enumerate() {
            let d = arg_distance(p, &g);
            let better = match &best {
                None => true,
                Some((b, _)) => d.cmp_value(b) == Ordering::Less,
            };
            if better {
                best = Some((d, idx));
            }
        }
        let (d, idx) = best.expect("empty spectrum");
        let better = match &worst {
            None => true,
            Some((w, ..)) => d.cmp_value(w) == Ordering::Greater,
        };
        if better {
            let (_, x, y) = &products[idx];
            worst = Some((d, g.clone(), (*x).clone(), (*y).clone()));
        }
    }
    worst.expect("empty spectrum")
}

/// Defect of one ordered unitary pair.
pub fn pair_defect(a: &UMatrix, b: &UMatrix) -> Result<PairDefect> {
    let sa = a.spectrum()?;
    let sb = b.spectrum()?;
    let sab = a.matmul(b)?.spectrum()?;
    Ok(pair_defect_from(&sa, &sb, &sab, PairLabel::Direct))
}

fn pair_defect_from(sa: &Spectrum, sb: &Spectrum, sab: &Spectrum, label: PairLabel) -> PairDefect {
    let (d, g, x, y) = defect_from_spectra(sa, sb, sab);
    // nearest in arc is nearest in chord; ρ = 1 for unitaries
    let sub = chord_distance(&x.mul(&y), &g);
    PairDefect {
        pair: label,
        asm_defect: Some(d),
        sub_defect: sub,
        witness_gamma: Some(Witness::Unit(g)),
        witness_alpha: Some(Witness::Unit(x)),
        witness_beta: Some(Witness::Unit(y)),
    }
}

// ---- fast path -----------------------------------------------------------

/// Angles of a spectrum over a common denominator, or as floats.
#[derive(Clone, Debug)]
enum AngleSet {
    Int(Vec<u64>),
    Float(Vec<f64>, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum FastValue {
    /// numerator over the common denominator
    Int(u64),
    Float(f64, f64),
}

impl FastValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FastValue::Int(a), FastValue::Int(b)) => a.cmp(b),
            _ => self.as_f64().total_cmp(&other.as_f64()),
        }
    }

    fn as_f64(&self) -> f64 {
        match self {
            FastValue::Int(_) => unreachable!("integer value needs its denominator"),
            FastValue::Float(v, _) => *v,
        }
    }
}

/// Common denominator of every point, when all are exact and it fits.
fn common_denominator<'a>(spectra: impl IntoIterator<Item = &'a Spectrum>) -> Option<u64> {
    let mut l: u64 = 1;
    for s in spectra {
        for z in &s.points {
            let d = z.as_exact()?.denom_u64()?;
            l = l.lcm(&d);
            if l > MAX_COMMON_DEN {
                return None;
            }
        }
    }
    Some(l)
}

fn to_angle_set(s: &Spectrum, den: Option<u64>) -> AngleSet {
    match den {
        Some(l) => {
            let mut v: Vec<u64> = s
                .points
                .iter()
                .map(|z| {
                    let a = z.as_exact().unwrap();
                    let scale = BigInt::from(l) / a.denom();
                    (a.numer() * scale).to_u64().unwrap()
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            AngleSet::Int(v)
        }
        None => {
            let mut v: Vec<f64> = s.points.iter().map(UnitPoint::turn).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let err = s.points.iter().map(UnitPoint::err).fold(0.0, f64::max);
            AngleSet::Float(v, err)
        }
    }
}

fn nearest_int(sorted: &[u64], g: u64, den: u64) -> u64 {
    let i = sorted.partition_point(|&p| p < g);
    let n = sorted.len();
    let cyc = |x: u64| {
        let d = x.abs_diff(g);
        d.min(den - d)
    };
    cyc(sorted[i % n]).min(cyc(sorted[(i + n - 1) % n]))
}

fn nearest_float(sorted: &[f64], g: f64) -> f64 {
    let i = sorted.partition_point(|&p| p < g);
    let n = sorted.len();
    turn_distance(sorted[i % n], g).min(turn_distance(sorted[(i + n - 1) % n], g))
}

fn fast_defect(a: &AngleSet, b: &AngleSet, c: &AngleSet, den: u64) -> FastValue {
    match (a, b, c) {
        (AngleSet::Int(a), AngleSet::Int(b), AngleSet::Int(c)) => {
            let mut prods: Vec<u64> = Vec::with_capacity(a.len() * b.len());
            for &x in a {
                for &y in b {
                    let s = x + y;
                    prods.push(if s >= den { s - den } else { s });
                }
            }
            prods.sort_unstable();
            prods.dedup();
            FastValue::Int(c.iter().map(|&g| nearest_int(&prods, g, den)).max().unwrap_or(0))
        }
        _ => {
            let (fa, ea) = float_view(a, den);
            let (fb, eb) = float_view(b, den);
            let (fc, ec) = float_view(c, den);
            let mut prods: Vec<f64> = Vec::with_capacity(fa.len() * fb.len());
            for &x in &fa {
                for &y in &fb {
                    prods.push((x + y).rem_euclid(1.0));
                }
            }
            prods.sort_by(f64::total_cmp);
            let worst = fc
                .iter()
                .map(|&g| nearest_float(&prods, g))
                .fold(0.0, f64::max);
            FastValue::Float(worst, ea + eb + ec)
        }
    }
}

fn float_view(s: &AngleSet, den: u64) -> (Vec<f64>, f64) {
    match s {
        AngleSet::Int(v) => (v.iter().map(|&x| x as f64 / den as f64).collect(), 0.0),
        AngleSet::Float(v, e) => (v.clone(), *e),
    }
}

fn fast_to_distance(v: FastValue, den: u64) -> Distance {
    match v {
        FastValue::Int(n) => Distance::Exact(BigRational::new(BigInt::from(n), BigInt::from(den))),
        FastValue::Float(value, err) => Distance::Approx { value, err },
    }
}

fn prepare(sa: &Spectrum, sb: &Spectrum, sab: &Spectrum) -> (AngleSet, AngleSet, AngleSet, u64) {
    let den = common_denominator([sa, sb, sab]);
    (
        to_angle_set(sa, den),
        to_angle_set(sb, den),
        to_angle_set(sab, den),
        den.unwrap_or(1),
    )
}

/// Defect value through the integer/float fast path.
pub fn fast_pair_defect(sa: &Spectrum, sb: &Spectrum, sab: &Spectrum) -> Distance {
    let (a, b, c, den) = prepare(sa, sb, sab);
    fast_to_distance(fast_defect(&a, &b, &c, den), den)
}

// ---- reports -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Exhaustive { group_order: usize, pairs: u64 },
    Sampled { pairs: u64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Values above `hi`.
    pub overflow: u64,
}

impl Histogram {
    pub fn new(hi: f64, bins: usize) -> Self {
        Histogram {
            lo: 0.0,
            hi,
            counts: vec![0; bins.max(1)],
            overflow: 0,
        }
    }

    pub fn add(&mut self, v: f64) {
        if v > self.hi {
            self.overflow += 1;
            return;
        }
        let bins = self.counts.len();
        let i = (((v - self.lo) / (self.hi - self.lo)) * bins as f64).floor();
        let i = (i.max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
    }

    fn merge(mut self, other: &Histogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// scaled argument distance
    Asm,
    /// Euclidean distance over `ρ(A)ρ(B)`
    Sub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsmReport {
    pub quantity: Quantity,
    pub epsilon_star: Distance,
    pub mode: Mode,
    /// Sampled runs and truncated closures only bound `ε*` from below.
    pub lower_bound: bool,
    pub exact: bool,
    pub worst: Option<PairDefect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_sets: Option<WitnessSets>,
    pub histogram: Histogram,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

impl AsmReport {
    /// `ε*` as a float.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_star.value()
    }
}

#[derive(Clone, Debug)]
pub struct MeasureOptions {
    pub bins: usize,
    /// Enumerate `(j, i)` instead of `(i, j)`; the result must not change.
    pub transpose: bool,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            bins: 20,
            transpose: false,
        }
    }
}

#[derive(Clone, Debug)]
struct Best {
    value: FastValue,
    /// linear pair index, for the deterministic tie-break
    index: u64,
}

fn better(a: &Best, b: &Best) -> bool {
    match a.value.cmp(&b.value) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.index < b.index,
    }
}

fn merge_best(a: Option<Best>, b: Option<Best>) -> Option<Best> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
    }
}

fn fast_value_f64(v: FastValue, den: u64) -> f64 {
    match v {
        FastValue::Int(n) => n as f64 / den as f64,
        FastValue::Float(x, _) => x,
    }
}

fn witness_sets(sa: &Spectrum, sb: &Spectrum, sab: &Spectrum) -> WitnessSets {
    WitnessSets {
        sigma_a: sa.points.clone(),
        sigma_b: sb.points.clone(),
        product_set: product_set(sa, sb),
        sigma_ab: sab.points.clone(),
    }
}

/// Exhaustive `ε*` over all ordered pairs of a complete closure.
pub fn measure_asm(g: &GroupClosure) -> Result<AsmReport> {
    measure_asm_with(g, &MeasureOptions::default())
}

pub fn measure_asm_with(g: &GroupClosure, opts: &MeasureOptions) -> Result<AsmReport> {
    if !g.complete {
        return Err(Error::IncompleteClosure);
    }
    let n = g.len();
    let spectra: Vec<Spectrum> = g
        .elements
        .par_iter()
        .map(UMatrix::spectrum)
        .collect::<Result<_>>()?;
    let den = common_denominator(spectra.iter());
    let sets: Vec<AngleSet> = spectra.iter().map(|s| to_angle_set(s, den)).collect();
    let den_v = den.unwrap_or(1);
    let hist0 = Histogram::new(0.5, opts.bins);

    let (best, hist) = (0..n)
        .into_par_iter()
        .map(|row| -> Result<(Option<Best>, Histogram)> {
            let mut best = None;
            let mut hist = hist0.clone();
            for col in 0..n {
                let (i, j) = if opts.transpose { (col, row) } else { (row, col) };
                let c = g.product_index(i, j)?;
                let v = fast_defect(&sets[i], &sets[j], &sets[c], den_v);
                hist.add(fast_value_f64(v, den_v));
                best = merge_best(
                    best,
                    Some(Best {
                        value: v,
                        index: (i * n + j) as u64,
                    }),
                );
            }
            Ok((best, hist))
        })
        .try_reduce(
            || (None, hist0.clone()),
            |(b1, h1), (b2, h2)| Ok((merge_best(b1, b2), h1.merge(&h2))),
        )?;

    let best = best.expect("closure has at least one element");
    let (i, j) = ((best.index / n as u64) as usize, (best.index % n as u64) as usize);
    let c = g.product_index(i, j)?;
    let worst = pair_defect_from(
        &spectra[i],
        &spectra[j],
        &spectra[c],
        PairLabel::Indices { a: i, b: j },
    );
    let eps = fast_to_distance(best.value, den_v);
    let exact = eps.is_exact();
    Ok(AsmReport {
        quantity: Quantity::Asm,
        epsilon_star: eps,
        mode: Mode::Exhaustive {
            group_order: n,
            pairs: (n * n) as u64,
        },
        lower_bound: false,
        exact,
        worst: Some(worst),
        witness_sets: Some(witness_sets(&spectra[i], &spectra[j], &spectra[c])),
        histogram: hist,
        notes: Vec::new(),
        generated_at: None,
    })
}

/// One sampled pair of unitary matrices with descriptors for the report.
pub struct SampledPair {
    pub a: UMatrix,
    pub b: UMatrix,
    pub label_a: serde_json::Value,
    pub label_b: serde_json::Value,
}

/// Source of pairs for sampled measurement. `index` is the global pair
/// index; implementations may use it (enumeration) or ignore it and draw
/// from `rng` (random sampling).
pub trait PairSource: Sync {
    fn pair(&self, index: u64, rng: &mut ChaCha8Rng) -> Result<SampledPair>;
}

/// Enumerates all ordered pairs of a closure in index order.
pub struct ClosurePairs<'a>(pub &'a GroupClosure);

impl PairSource for ClosurePairs<'_> {
    fn pair(&self, index: u64, _rng: &mut ChaCha8Rng) -> Result<SampledPair> {
        let n = self.0.len() as u64;
        let (i, j) = ((index / n % n) as usize, (index % n) as usize);
        Ok(SampledPair {
            a: self.0.elements[i].clone(),
            b: self.0.elements[j].clone(),
            label_a: serde_json::json!(i),
            label_b: serde_json::json!(j),
        })
    }
}

/// RNG for a chunk of pairs: independent of worker count.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

struct SampledWorst {
    best: Best,
    den: u64,
    pair: SampledPair,
    spectra: (Spectrum, Spectrum, Spectrum),
}

/// Max pair defect over `pair_count` sampled pairs: a lower bound on `ε*`.
pub fn measure_asm_sampled(
    source: &dyn PairSource,
    pair_count: u64,
    seed: u64,
) -> Result<AsmReport> {
    measure_asm_sampled_with(source, pair_count, seed, &MeasureOptions::default())
}

fn cmp_sampled(a: &SampledWorst, b: &SampledWorst) -> Ordering {
    let (va, vb) = (a.best.value, b.best.value);
    let ord = match (va, vb) {
        (FastValue::Int(x), FastValue::Int(y)) => {
            // compare x/da with y/db exactly
            (x as u128 * b.den as u128).cmp(&(y as u128 * a.den as u128))
        }
        _ => fast_value_f64(va, a.den).total_cmp(&fast_value_f64(vb, b.den)),
    };
    ord.then(b.best.index.cmp(&a.best.index))
}

pub fn measure_asm_sampled_with(
    source: &dyn PairSource,
    pair_count: u64,
    seed: u64,
    opts: &MeasureOptions,
) -> Result<AsmReport> {
    if pair_count == 0 {
        return Err(Error::InvalidParams("pair_count must be at least 1".into()));
    }
    let chunks = pair_count.div_ceil(SAMPLE_CHUNK);
    let hist0 = Histogram::new(0.5, opts.bins);
    let results: Vec<(Option<SampledWorst>, Histogram, bool)> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut rng = chunk_rng(seed, c);
            let mut worst: Option<SampledWorst> = None;
            let mut hist = hist0.clone();
            let mut all_exact = true;
            let end = ((c + 1) * SAMPLE_CHUNK).min(pair_count);
            for index in c * SAMPLE_CHUNK..end {
                let pair = source.pair(index, &mut rng)?;
                let sa = pair.a.spectrum()?;
                let sb = pair.b.spectrum()?;
                let sab = pair.a.matmul(&pair.b)?.spectrum()?;
                let (a, b, ab, den) = prepare(&sa, &sb, &sab);
                let v = fast_defect(&a, &b, &ab, den);
                all_exact &= matches!(v, FastValue::Int(_));
                hist.add(fast_value_f64(v, den));
                let cand = SampledWorst {
                    best: Best { value: v, index },
                    den,
                    pair,
                    spectra: (sa, sb, sab),
                };
                worst = match worst {
                    None => Some(cand),
                    Some(w) => Some(if cmp_sampled(&cand, &w) == Ordering::Greater { cand } else { w }),
                };
            }
            Ok((worst, hist, all_exact))
        })
        .collect::<Result<_>>()?;

    let mut hist = hist0;
    let mut exact = true;
    let mut worst: Option<SampledWorst> = None;
    for (w, h, e) in results {
        hist = hist.merge(&h);
        exact &= e;
        if let Some(w) = w {
            worst = match worst {
                None => Some(w),
                Some(cur) => Some(if cmp_sampled(&w, &cur) == Ordering::Greater { w } else { cur }),
            };
        }
    }
    let w = worst.expect("at least one pair");
    let eps = fast_to_distance(w.best.value, w.den);
    let (sa, sb, sab) = &w.spectra;
    let defect = pair_defect_from(
        sa,
        sb,
        sab,
        PairLabel::Sampled {
            index: w.best.index,
            a: w.pair.label_a.clone(),
            b: w.pair.label_b.clone(),
        },
    );
    Ok(AsmReport {
        quantity: Quantity::Asm,
        epsilon_star: eps,
        mode: Mode::Sampled {
            pairs: pair_count,
            seed,
        },
        lower_bound: true,
        exact,
        worst: Some(defect),
        witness_sets: Some(witness_sets(sa, sb, sab)),
        histogram: hist,
        notes: Vec::new(),
        generated_at: None,
    })
}

// ---- semigroup path ------------------------------------------------------

/// Submultiplicative defect of a general pair over nonzero eigenvalues.
///
/// `γ` ranges over the nonzero eigenvalues of `AB` and `α`, `β` over the
/// nonzero eigenvalues of `A`, `B`. A product with no nonzero eigenvalue has
/// defect 0.
pub fn sub_pair_defect(a: &GeneralMatrix, b: &GeneralMatrix) -> Result<PairDefect> {
    let ra = spectral_radius(a)?;
    let rb = spectral_radius(b)?;
    let scale = ra * rb;
    if scale <= 0.0 {
        return Err(Error::ZeroSpectralRadius);
    }
    let alphas = a.nonzero_eigenvalues()?;
    let betas = b.nonzero_eigenvalues()?;
    let gammas = a.matmul(b)?.nonzero_eigenvalues()?;
    let mut worst: Option<(f64, C64, C64, C64)> = None;
    for g in &gammas {
        let mut best: Option<(f64, C64, C64)> = None;
        for x in &alphas {
            for y in &betas {
                let d = (g - x * y).norm() / scale;
                if best.is_none_or(|(b, _, _)| d < b) {
                    best = Some((d, *x, *y));
                }
            }
        }
        let (d, x, y) = best.ok_or(Error::ZeroSpectralRadius)?;
        if worst.is_none_or(|(w, ..)| d > w) {
            worst = Some((d, *g, x, y));
        }
    }
    Ok(match worst {
        Some((d, g, x, y)) => PairDefect {
            pair: PairLabel::Direct,
            asm_defect: None,
            sub_defect: d,
            witness_gamma: Some(g.into()),
            witness_alpha: Some(x.into()),
            witness_beta: Some(y.into()),
        },
        None => PairDefect {
            pair: PairLabel::Direct,
            asm_defect: None,
            sub_defect: 0.0,
            witness_gamma: None,
            witness_alpha: None,
            witness_beta: None,
        },
    })
}

/// Source of general-matrix pairs for sampled semigroup measurement.
pub trait GeneralPairSource: Sync {
    fn pair(
        &self,
        index: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(GeneralMatrix, GeneralMatrix, serde_json::Value, serde_json::Value)>;
}

const SUB_HIST_HI: f64 = 2.0;

const SUB_NOTE: &str =
    "semigroup path: gamma ranges over nonzero eigenvalues of AB, alpha and beta over nonzero eigenvalues";

fn sub_report(
    worst: Option<(f64, u64, PairDefect)>,
    mode: Mode,
    lower_bound: bool,
    hist: Histogram,
) -> AsmReport {
    let (eps, worst) = match worst {
        Some((d, _, p)) => (d, Some(p)),
        None => (0.0, None),
    };
    AsmReport {
        quantity: Quantity::Sub,
        epsilon_star: Distance::Approx {
            value: eps,
            err: 0.0,
        },
        mode,
        lower_bound,
        exact: false,
        worst,
        witness_sets: None,
        histogram: hist,
        notes: vec![SUB_NOTE.to_string()],
        generated_at: None,
    }
}

fn keep_worse(
    cur: Option<(f64, u64, PairDefect)>,
    cand: (f64, u64, PairDefect),
) -> Option<(f64, u64, PairDefect)> {
    match cur {
        None => Some(cand),
        Some(c) => {
            let take = cand.0 > c.0 || (cand.0 == c.0 && cand.1 < c.1);
            Some(if take { cand } else { c })
        }
    }
}

/// Exhaustive submultiplicative `ε*` over all ordered pairs of a list.
pub fn measure_sub(elements: &[GeneralMatrix]) -> Result<AsmReport> {
    let n = elements.len();
    if n == 0 {
        return Err(Error::InvalidParams("empty element list".into()));
    }
    let hist0 = Histogram::new(SUB_HIST_HI, MeasureOptions::default().bins);
    let mut hist = hist0.clone();
    let mut worst = None;
    let rows: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut h = hist0.clone();
            let mut w = None;
            for j in 0..n {
                let mut d = sub_pair_defect(&elements[i], &elements[j])?;
                d.pair = PairLabel::Indices { a: i, b: j };
                h.add(d.sub_defect);
                w = keep_worse(w, (d.sub_defect, (i * n + j) as u64, d));
            }
            Ok((w, h))
        })
        .collect::<Result<_>>()?;
    for (w, h) in rows {
        hist = hist.merge(&h);
        if let Some(w) = w {
            worst = keep_worse(worst, w);
        }
    }
    Ok(sub_report(
        worst,
        Mode::Exhaustive {
            group_order: n,
            pairs: (n * n) as u64,
        },
        false,
        hist,
    ))
}

/// Sampled submultiplicative defect: a lower bound on `ε*`.
pub fn measure_sub_sampled(
    source: &dyn GeneralPairSource,
    pair_count: u64,
    seed: u64,
) -> Result<AsmReport> {
    if pair_count == 0 {
        return Err(Error::InvalidParams("pair_count must be at least 1".into()));
    }
    let hist0 = Histogram::new(SUB_HIST_HI, MeasureOptions::default().bins);
    let chunks = pair_count.div_ceil(SAMPLE_CHUNK);
    let rows: Vec<_> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut rng = chunk_rng(seed, c);
            let mut h = hist0.clone();
            let mut w = None;
            let end = ((c + 1) * SAMPLE_CHUNK).min(pair_count);
            for index in c * SAMPLE_CHUNK..end {
                let (a, b, la, lb) = source.pair(index, &mut rng)?;
                let mut d = sub_pair_defect(&a, &b)?;
                d.pair = PairLabel::Sampled { index, a: la, b: lb };
                h.add(d.sub_defect);
                w = keep_worse(w, (d.sub_defect, index, d));
            }
            Ok((w, h))
        })
        .collect::<Result<_>>()?;
    let mut hist = hist0;
    let mut worst = None;
    for (w, h) in rows {
        hist = hist.merge(&h);
        if let Some(w) = w {
            worst = keep_worse(worst, w);
        }
    }
    Ok(sub_report(
        worst,
        Mode::Sampled {
            pairs: pair_count,
            seed,
        },
        true,
        hist,
    ))
}

/// Converts between the two scales: an `ε'`-ASM unitary group is
/// `2π·ε'`-submultiplicative, and an `ε`-submultiplicative one is
/// `ε/2`-ASM. Returns `(2π·e, e/2)`.
pub fn conversion_check(e: f64) -> (f64, f64) {
    (std::f64::consts::TAU * e, e / 2.0)
}

/// Exact rational `ε*` if the report carries one.
pub fn exact_epsilon(r: &AsmReport) -> Option<BigRational> {
    r.epsilon_star.exact().cloned()
}

/// `true` when the exact rational is zero.
pub fn is_exact_zero(d: &Distance) -> bool {
    d.exact().is_some_and(|r| r.is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{close, close_with, ClosureOptions};
    use crate::linalg::{random_unitary, CMat, UNITARITY_TOLERANCE};
    use proptest::prelude::*;

    fn ex(n: i64, d: u64) -> UnitPoint {
        UnitPoint::exact(n, d)
    }

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn q8() -> Vec<UMatrix> {
        vec![
            UMatrix::Diagonal(vec![ex(1, 4), ex(3, 4)]),
            UMatrix::MonomialCycle {
                d: vec![UnitPoint::one(), ex(1, 2)],
                k: 1,
            },
        ]
    }

    fn cycle(p: usize) -> UMatrix {
        UMatrix::MonomialCycle {
            d: vec![UnitPoint::one(); p],
            k: 1,
        }
    }

    #[test]
    fn q8_generator_pair() {
        let g = q8();
        let d = pair_defect(&g[0], &g[1]).unwrap();
        assert_eq!(d.asm_defect, Some(Distance::Exact(q(1, 4))));
        assert!((d.sub_defect - 2f64.sqrt()).abs() < 1e-12);
        // brute force over the 2x2x2 eigenvalue combinations
        let sig = [0.25, 0.75];
        let mut worst: f64 = 0.0;
        for gamma in sig {
            let mut best = f64::INFINITY;
            for a in sig {
                for b in sig {
                    best = best.min(turn_distance(a + b, gamma));
                }
            }
            worst = worst.max(best);
        }
        assert_eq!(worst, 0.25);
    }

    #[test]
    fn trivial_pairs() {
        let i = UMatrix::identity(3);
        assert_eq!(pair_defect(&i, &i).unwrap().asm_defect, Some(Distance::zero()));
        let a = UMatrix::Diagonal(vec![ex(1, 5), ex(2, 7), ex(3, 11)]);
        let b = UMatrix::Diagonal(vec![ex(4, 5), ex(1, 13), ex(1, 2)]);
        assert_eq!(pair_defect(&a, &b).unwrap().asm_defect, Some(Distance::zero()));
    }

    #[test]
    fn exhaustive_examples() {
        let c = close(&[cycle(5)], 100).unwrap();
        let r = measure_asm(&c).unwrap();
        assert_eq!(r.epsilon_star, Distance::zero());
        assert!(r.exact);

        let g = close(&q8(), 100).unwrap();
        let r = measure_asm(&g).unwrap();
        assert_eq!(r.epsilon_star, Distance::Exact(q(1, 4)));
        assert_eq!(r.histogram.total(), 64);
        assert!(!r.lower_bound);
    }

    #[test]
    fn incomplete_closure_rejected() {
        let g = close(&[cycle(7)], 3).unwrap();
        assert_eq!(measure_asm(&g).unwrap_err(), Error::IncompleteClosure);
    }

    #[test]
    fn fast_path_matches_reference() {
        let g = close(&q8(), 100).unwrap();
        for a in &g.elements {
            for b in &g.elements {
                let sa = a.spectrum().unwrap();
                let sb = b.spectrum().unwrap();
                let sab = a.matmul(b).unwrap().spectrum().unwrap();
                let slow = defect_from_spectra(&sa, &sb, &sab).0;
                assert_eq!(fast_pair_defect(&sa, &sb, &sab), slow);
            }
        }
    }

    #[test]
    fn conjugation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_unitary(2, &mut rng);
        let gens: Vec<UMatrix> = q8()
            .iter()
            .map(|g| UMatrix::dense(&p * g.to_dense() * p.adjoint(), UNITARITY_TOLERANCE).unwrap())
            .collect();
        let g = close(&gens, 100).unwrap();
        let r = measure_asm(&g).unwrap();
        assert!(!r.exact);
        assert!((r.epsilon() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn cayley_and_transposed_enumeration_agree() {
        let g = close(&q8(), 100).unwrap();
        let g2 = close_with(
            &q8(),
            &ClosureOptions {
                cayley: true,
                ..ClosureOptions::default()
            },
        )
        .unwrap();
        let r1 = measure_asm(&g).unwrap();
        let r2 = measure_asm(&g2).unwrap();
        let r3 = measure_asm_with(
            &g,
            &MeasureOptions {
                transpose: true,
                ..MeasureOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.epsilon_star, r3.epsilon_star);
    }

    #[test]
    fn sampled_enumeration_matches_exhaustive() {
        let g = close(&q8(), 100).unwrap();
        let n = g.len() as u64;
        let ex = measure_asm(&g).unwrap();
        let sa = measure_asm_sampled(&ClosurePairs(&g), n * n, 1).unwrap();
        assert_eq!(sa.epsilon_star, ex.epsilon_star);
        assert_eq!(sa.histogram.counts, ex.histogram.counts);
        assert!(sa.lower_bound);
        assert!(sa.exact);
    }

    #[test]
    fn sub_path_basics() {
        let i = GeneralMatrix::new(CMat::identity(3, 3));
        let r = measure_sub(std::slice::from_ref(&i)).unwrap();
        assert_eq!(r.epsilon(), 0.0);
        let z = GeneralMatrix::new(CMat::zeros(2, 2));
        let o = GeneralMatrix::new(CMat::identity(2, 2));
        assert_eq!(sub_pair_defect(&z, &o).unwrap_err(), Error::ZeroSpectralRadius);
    }

    #[test]
    fn conversions() {
        let (s, a) = conversion_check(1.0 / 18.0);
        assert!((s - 0.349065850398866).abs() < 1e-12);
        assert!((a - 1.0 / 36.0).abs() < 1e-15);
        assert_eq!(conversion_check(0.0), (0.0, 0.0));
    }

    #[test]
    fn report_json_roundtrip() {
        let g = close(&q8(), 100).unwrap();
        let r = measure_asm(&g).unwrap();
        let s = serde_json::to_string_pretty(&r).unwrap();
        assert!(s.contains(r#""exact": "1/4""#));
        assert!(s.contains(r#""decimal": "0.25""#));
        let back: AsmReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(decimal12(0.25), "0.25");
        assert_eq!(decimal12(1.0 / 18.0), "0.0555555555556");
        assert_eq!(decimal12(0.0), "0");
    }

    #[test]
    fn histogram_binning() {
        let mut h = Histogram::new(0.5, 20);
        h.add(0.0);
        h.add(0.25);
        h.add(0.5);
        h.add(0.7);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.total(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn arc_defect_bound_implies_chord_bound(
            angles in proptest::collection::vec((0i64..120, 0i64..120), 1..4)
        ) {
            // random diagonal pairs with a twisted product spectrum
            let a = UMatrix::Diagonal(angles.iter().map(|&(x, _)| ex(x, 120)).collect());
            let b = UMatrix::MonomialCycle {
                d: angles.iter().map(|&(_, y)| ex(y, 120)).collect(),
                k: 1 % angles.len(),
            };
            let d = pair_defect(&a, &b).unwrap();
            let eps = d.asm_defect.unwrap().value();
            let (sub_bound, _) = conversion_check(eps);
            prop_assert!(d.sub_defect <= sub_bound + 1e-12);
            prop_assert!(eps <= 0.5);
        }
    }
}
