//! Builders for the extremal examples.
//!
//! * cycle matrices and the closed-form spectrum of `D·C^k`;
//! * tadpole matrices: `2p×2p` block matrices with head `D·C^k` and a
//!   diagonal tail of `p²`-th roots of unity, together with their group law;
//! * Miller–Moreno generator pairs `(X, Y)` for minimal nonabelian
//!   `(p, q)`-groups, and the gap analysis that forces large defects;
//! * the rank-one semigroup `S_r`;
//! * the prime sets `Q(p)`.

use nalgebra::DVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asm::{GeneralPairSource, PairSource, SampledPair};
use crate::circle::{
    format_ratio, nearest_root_of_unity, RationalAngle, UnitPoint, DEFAULT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::linalg::{shift_diag, CMat, GeneralMatrix, Spectrum, UMatrix, C64};

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n < 4 {
        return true;
    }
    if n.is_multiple_of(2) {
        return false;
    }
    let mut d = 3;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Primes `<= limit` by the sieve of Eratosthenes.
pub fn primes_up_to(limit: u64) -> Vec<u64> {
    if limit < 2 {
        return Vec::new();
    }
    let n = limit as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for i in 2..=n {
        if composite[i] {
            continue;
        }
        out.push(i as u64);
        let mut j = i * i;
        while j <= n {
            composite[j] = true;
            j += i;
        }
    }
    out
}

/// The `p×p` cycle matrix with ones on the superdiagonal and at `(p, 1)`.
pub fn cycle_matrix(p: usize) -> Result<UMatrix> {
    if p < 2 {
        return Err(Error::InvalidParams(format!("cycle matrix needs p >= 2, got {p}")));
    }
    Ok(UMatrix::MonomialCycle {
        d: vec![UnitPoint::one(); p],
        k: 1,
    })
}

/// Generators `diag(i, -i)` and `[[0, 1], [-1, 0]]` of the quaternion group.
pub fn q8_generators() -> Vec<UMatrix> {
    vec![
        UMatrix::Diagonal(vec![UnitPoint::exact(1, 4), UnitPoint::exact(3, 4)]),
        UMatrix::MonomialCycle {
            d: vec![UnitPoint::one(), UnitPoint::exact(1, 2)],
            k: 1,
        },
    ]
}

/// `p`-th roots of unity `{1, θ, …, θ^{p-1}}`, exact.
pub fn roots_of_unity(p: u64) -> Vec<UnitPoint> {
    (0..p as i64).map(|j| UnitPoint::exact(j, p)).collect()
}

/// `true` if the angles of `d` sum to 0 mod 1 (exactly, or within
/// tolerance plus the stated uncertainty for approximate entries).
pub fn det_is_one(d: &[UnitPoint]) -> bool {
    let det = d.iter().fold(UnitPoint::one(), |acc, z| acc.mul(z));
    det.approx_eq(&UnitPoint::one(), DEFAULT_TOLERANCE)
}

/// Spectrum of `D·C^k` for a determinant-one diagonal `D` and prime `p`:
/// `σ(D)` when `p | k`, otherwise every `p`-th root of unity.
pub fn spectrum_dck(d: &[UnitPoint], k: u64, p: u64) -> Result<Spectrum> {
    if !is_prime(p) {
        return Err(Error::InvalidParams(format!("{p} is not prime")));
    }
    if d.len() as u64 != p {
        return Err(Error::DimensionMismatch {
            left: p as usize,
            right: d.len(),
        });
    }
    if !det_is_one(d) {
        return Err(Error::DeterminantNotOne);
    }
    if k.is_multiple_of(p) {
        Ok(Spectrum::new(d.to_vec()))
    } else {
        Ok(Spectrum::new(roots_of_unity(p)))
    }
}

// ---- tadpoles --------------------------------------------------------------

/// Parameters `(D, k, a_1..a_{p-1})` of a tadpole matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TadpoleParams {
    pub p: u64,
    /// Diagonal of `D` (the head weight); angles must sum to 0 mod 1.
    pub d_angles: Vec<UnitPoint>,
    pub k: u64,
    /// `a[j-1]` is `a_j` for `j = 1..p-1`.
    pub a: Vec<u64>,
}

impl TadpoleParams {
    pub fn identity(p: u64) -> Self {
        TadpoleParams {
            p,
            d_angles: vec![UnitPoint::one(); p as usize],
            k: 0,
            a: vec![0; p as usize - 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        if p < 3 || !is_prime(p) {
            return Err(Error::InvalidParams(format!("p = {p} must be an odd prime")));
        }
        if self.d_angles.len() as u64 != p {
            return Err(Error::InvalidParams(format!(
                "D has {} entries, expected {p}",
                self.d_angles.len()
            )));
        }
        if !det_is_one(&self.d_angles) {
            return Err(Error::InvalidParams("det(D) must be 1".into()));
        }
        if self.k >= p {
            return Err(Error::InvalidParams(format!("k = {} not in [0, {})", self.k, p)));
        }
        if self.a.len() as u64 != p - 1 || self.a.iter().any(|&x| x >= p) {
            return Err(Error::InvalidParams(format!(
                "a must hold {} entries in [0, {p})",
                p - 1
            )));
        }
        Ok(())
    }

    /// Exponent of `ξ = e^{2πi/p²}` in tail entry `j` (`j = 0..p-1`,
    /// with entry 0 fixed at 1): `j·k + a_j·p mod p²`.
    pub fn tail_exponent(&self, j: u64) -> u64 {
        if j == 0 {
            return 0;
        }
        let p2 = self.p * self.p;
        (j * self.k + self.a[j as usize - 1] * self.p) % p2
    }

    pub fn tail(&self) -> Vec<UnitPoint> {
        let p2 = self.p * self.p;
        (0..self.p)
            .map(|j| UnitPoint::exact(self.tail_exponent(j) as i64, p2))
            .collect()
    }

    pub fn head(&self) -> UMatrix {
        UMatrix::MonomialCycle {
            d: self.d_angles.clone(),
            k: self.k as usize,
        }
        .normalize()
    }

    pub fn is_diagonal(&self) -> bool {
        self.k == 0
    }
}

/// The `2p×2p` tadpole matrix `diag(D·C^k, 1, ξ^{k+a_1 p}, …)`.
pub fn tadpole(params: &TadpoleParams) -> Result<UMatrix> {
    params.validate()?;
    Ok(UMatrix::BlockDiag(vec![params.head(), UMatrix::Diagonal(params.tail())]).normalize())
}

/// Parameters of the product `A·B`.
///
/// Heads multiply as `D_A·σ_k(D_B)·C^{k+ℓ}`. Tail exponents add to
/// `j(k+ℓ) + (a_j+b_j)p`; when `k+ℓ >= p` the reduction `r = k+ℓ-p` moves
/// `j·p` into the `p`-part, giving `c_j = a_j + b_j + j`, otherwise
/// `c_j = a_j + b_j` (all mod `p`).
pub fn tadpole_mul(a: &TadpoleParams, b: &TadpoleParams) -> Result<TadpoleParams> {
    if a.p != b.p {
        return Err(Error::PrimeMismatch {
            left: a.p,
            right: b.p,
        });
    }
    let p = a.p;
    let sum = a.k + b.k;
    let wrap = sum / p;
    let d = a
        .d_angles
        .iter()
        .zip(shift_diag(&b.d_angles, a.k as i64))
        .map(|(x, y)| x.mul(&y))
        .collect();
    let c = (1..p)
        .map(|j| (a.a[j as usize - 1] + b.a[j as usize - 1] + j * wrap) % p)
        .collect();
    Ok(TadpoleParams {
        p,
        d_angles: d,
        k: sum % p,
        a: c,
    })
}

pub fn tadpole_inverse(a: &TadpoleParams) -> TadpoleParams {
    let p = a.p;
    let inv: Vec<UnitPoint> = a.d_angles.iter().map(UnitPoint::inv).collect();
    let k_inv = (p - a.k % p) % p;
    let carry = u64::from(a.k != 0);
    TadpoleParams {
        p,
        d_angles: shift_diag(&inv, -(a.k as i64)),
        k: k_inv,
        a: (1..p)
            .map(|j| (2 * p * p - a.a[j as usize - 1] - j * carry) % p)
            .collect(),
    }
}

/// The case split used for tadpole pairs: which of `A`, `B`, `AB` are
/// diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TadpoleCase {
    /// both diagonal
    BothDiagonal,
    /// exactly one of `A`, `B` diagonal
    OneDiagonal,
    /// none of `A`, `B`, `AB` diagonal
    NoneDiagonal,
    /// `A`, `B` not diagonal but `AB` diagonal
    ProductDiagonal,
}

pub fn tadpole_case(a: &TadpoleParams, b: &TadpoleParams) -> TadpoleCase {
    match (a.is_diagonal(), b.is_diagonal()) {
        (true, true) => TadpoleCase::BothDiagonal,
        (true, false) | (false, true) => TadpoleCase::OneDiagonal,
        (false, false) if (a.k + b.k).is_multiple_of(a.p) => TadpoleCase::ProductDiagonal,
        (false, false) => TadpoleCase::NoneDiagonal,
    }
}

/// Uniformly random determinant-one diagonal: `p - 1` free angles, the
/// last set to minus their sum. With `exact_den` the angles are multiples
/// of `1/exact_den`.
pub fn random_det_one_diagonal(p: u64, exact_den: Option<u64>, rng: &mut impl Rng) -> Vec<UnitPoint> {
    let p = p as usize;
    match exact_den {
        Some(den) => {
            let mut nums: Vec<i64> = (0..p - 1).map(|_| rng.gen_range(0..den as i64)).collect();
            let s: i64 = nums.iter().sum();
            nums.push(-s);
            nums.into_iter().map(|n| UnitPoint::exact(n, den)).collect()
        }
        None => {
            let mut t: Vec<f64> = (0..p - 1).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = t.iter().sum();
            t.push(-s);
            t.into_iter()
                .map(|x| UnitPoint::approx(x, 4.0 * f64::EPSILON * p as f64))
                .collect()
        }
    }
}

pub fn random_tadpole(p: u64, exact_den: Option<u64>, rng: &mut impl Rng) -> TadpoleParams {
    TadpoleParams {
        p,
        d_angles: random_det_one_diagonal(p, exact_den, rng),
        k: rng.gen_range(0..p),
        a: (1..p).map(|_| rng.gen_range(0..p)).collect(),
    }
}

/// Random tadpole pairs for sampled measurement.
#[derive(Clone, Debug)]
pub struct TadpoleSampler {
    pub p: u64,
    /// Use exact angles with this denominator instead of real angles.
    pub exact_den: Option<u64>,
}

impl TadpoleSampler {
    pub fn sample_params(&self, rng: &mut ChaCha8Rng) -> (TadpoleParams, TadpoleParams) {
        let a = random_tadpole(self.p, self.exact_den, rng);
        let b = random_tadpole(self.p, self.exact_den, rng);
        (a, b)
    }
}

impl PairSource for TadpoleSampler {
    fn pair(&self, _index: u64, rng: &mut ChaCha8Rng) -> Result<SampledPair> {
        let (pa, pb) = self.sample_params(rng);
        Ok(SampledPair {
            a: tadpole(&pa)?,
            b: tadpole(&pb)?,
            label_a: serde_json::to_value(&pa).expect("params serialize"),
            label_b: serde_json::to_value(&pb).expect("params serialize"),
        })
    }
}

/// Generators of the tadpole group whose heads have `p²`-th root weights:
/// the pure cycle, the unit tail shifts `a = e_j`, and the weights
/// `diag(…, ξ, …, ξ^{-1})`. The closure has order `p^{3p-2}`.
pub fn tadpole_generators(p: u64) -> Result<Vec<UMatrix>> {
    let n = p as usize;
    let p2 = p * p;
    let mut gens = vec![tadpole(&TadpoleParams {
        k: 1,
        ..TadpoleParams::identity(p)
    })?];
    for j in 0..n - 1 {
        let mut t = TadpoleParams::identity(p);
        t.a[j] = 1;
        gens.push(tadpole(&t)?);
    }
    for j in 0..n - 1 {
        let mut t = TadpoleParams::identity(p);
        t.d_angles[j] = UnitPoint::exact(1, p2);
        t.d_angles[n - 1] = UnitPoint::exact(-1, p2);
        gens.push(tadpole(&t)?);
    }
    Ok(gens)
}

/// `p^{3p-2}`: `(p²)^{p-1}` weights, `p` shifts, `p^{p-1}` tail offsets.
pub fn tadpole_group_order(p: u64) -> u64 {
    p.pow(3 * p as u32 - 2)
}

/// A pair `A`, `B` with non-diagonal heads whose product is diagonal with
/// `p - 1` eigenvalues at scaled distance `1/(2p²)` from the nearest
/// `p²`-th root of unity.
///
/// `D_B = σ_{-k}(D_A^{-1}·E)` so that `D_{AB} = D_A·σ_k(D_B) = E`, where `E`
/// has `p - 1` entries at angle `1/(2p²)` and a last entry restoring
/// determinant 1.
pub fn case4_witness(d_a: &[UnitPoint], k: u64) -> Result<(TadpoleParams, TadpoleParams)> {
    let p = d_a.len() as u64;
    if k == 0 || k >= p {
        return Err(Error::InvalidParams(format!("k = {k} must be in [1, p)")));
    }
    let den = 2 * p * p;
    let mut e: Vec<UnitPoint> = (0..p - 1).map(|_| UnitPoint::exact(1, den)).collect();
    e.push(UnitPoint::exact(-(p as i64 - 1), den));
    let inv_e: Vec<UnitPoint> = d_a.iter().zip(&e).map(|(x, y)| x.inv().mul(y)).collect();
    let a = TadpoleParams {
        p,
        d_angles: d_a.to_vec(),
        k,
        a: vec![0; p as usize - 1],
    };
    let b = TadpoleParams {
        p,
        d_angles: shift_diag(&inv_e, -(k as i64)),
        k: p - k,
        a: vec![0; p as usize - 1],
    };
    a.validate()?;
    b.validate()?;
    Ok((a, b))
}

// ---- Miller–Moreno pairs -------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MillerMorenoParams {
    pub p: u64,
    pub q: u64,
    /// Number of `p×p` blocks.
    pub m: usize,
    /// `m` rows of `p` exponents: `θ_{i,j} = e^{2πi·e_{ij}/q}`.
    pub theta_exponents: Vec<Vec<u64>>,
    /// Orders of `β_1..β_ℓ` (powers of `p`); `β_i = e^{2πi/order}`. The
    /// first `m` scale the cycle blocks, the rest are trailing scalars.
    pub beta_orders: Vec<u64>,
}

fn is_power_of(mut x: u64, p: u64) -> bool {
    if x == 0 {
        return false;
    }
    while x.is_multiple_of(p) {
        x /= p;
    }
    x == 1
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = (acc as u128 * b as u128 % m as u128) as u64;
        }
        b = (b as u128 * b as u128 % m as u128) as u64;
        e >>= 1;
    }
    acc
}

impl MillerMorenoParams {
    /// `m = 1`, `β_1 = 1`, and `θ` exponents `(1, g, …, g^{p-1}) mod q` for
    /// the smallest `g > 1` of multiplicative order `p` mod `q`. Requires
    /// `q ≡ 1 (mod p)`.
    pub fn default_instance(p: u64, q: u64) -> Result<Self> {
        if !is_prime(p) || !is_prime(q) || p == q {
            return Err(Error::InvalidParams(format!("p = {p}, q = {q} must be distinct primes")));
        }
        if q % p != 1 {
            return Err(Error::InvalidParams(format!("default instance needs q ≡ 1 (mod p), got p = {p}, q = {q}")));
        }
        let g = (2..q)
            .find(|&g| pow_mod(g, p, q) == 1)
            .ok_or_else(|| Error::InvalidParams("no element of order p mod q".into()))?;
        let row = (0..p).map(|j| pow_mod(g, j, q)).collect();
        let params = MillerMorenoParams {
            p,
            q,
            m: 1,
            theta_exponents: vec![row],
            beta_orders: vec![1],
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_beta_orders(mut self, orders: Vec<u64>) -> Result<Self> {
        self.beta_orders = orders;
        self.validate()?;
        Ok(self)
    }

    pub fn ell(&self) -> usize {
        self.beta_orders.len()
    }

    pub fn dim(&self) -> usize {
        self.m * self.p as usize + (self.ell() - self.m)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p, self.q);
        if !is_prime(p) || !is_prime(q) {
            return Err(Error::InvalidParams("p and q must be prime".into()));
        }
        if self.m == 0 || self.theta_exponents.len() != self.m {
            return Err(Error::InvalidParams("need m >= 1 rows of theta exponents".into()));
        }
        for row in &self.theta_exponents {
            if row.len() as u64 != p {
                return Err(Error::InvalidParams(format!("theta row must have {p} entries")));
            }
            if row.iter().any(|&e| e % q == 0) {
                return Err(Error::InvalidParams("each theta must have order q".into()));
            }
            if row.iter().all(|&e| e % q == row[0] % q) {
                return Err(Error::InvalidParams("X_i must be non-scalar".into()));
            }
            if row.iter().map(|&e| e % q).sum::<u64>() % q != 0 {
                return Err(Error::InvalidParams("det(X_i) must be 1".into()));
            }
        }
        if self.ell() < self.m {
            return Err(Error::InvalidParams("need at least m beta orders".into()));
        }
        if self.beta_orders.iter().any(|&o| !is_power_of(o, p)) {
            return Err(Error::InvalidParams("beta orders must be powers of p".into()));
        }
        Ok(())
    }

    fn beta(&self, i: usize) -> UnitPoint {
        UnitPoint::exact(1, self.beta_orders[i])
    }
}

/// Generator pair `(X, Y)`: `X = diag(X_1, …, X_m, 1, …, 1)` with diagonal
/// blocks of `q`-th roots, `Y = diag(β_1 C, …, β_m C, β_{m+1}, …, β_ℓ)`.
pub fn miller_moreno(params: &MillerMorenoParams) -> Result<(UMatrix, UMatrix)> {
    params.validate()?;
    let p = params.p as usize;
    let mut xb = Vec::new();
    let mut yb = Vec::new();
    for (i, row) in params.theta_exponents.iter().enumerate() {
        xb.push(UMatrix::Diagonal(
            row.iter().map(|&e| UnitPoint::exact(e as i64, params.q)).collect(),
        ));
        yb.push(UMatrix::MonomialCycle {
            d: vec![params.beta(i); p],
            k: 1,
        });
    }
    let tail = params.ell() - params.m;
    if tail > 0 {
        xb.push(UMatrix::Diagonal(vec![UnitPoint::one(); tail]));
        yb.push(UMatrix::Diagonal((params.m..params.ell()).map(|i| params.beta(i)).collect()));
    }
    Ok((
        UMatrix::BlockDiag(xb).normalize(),
        UMatrix::BlockDiag(yb).normalize(),
    ))
}

fn set_of(points: &[UnitPoint]) -> Vec<RationalAngle> {
    let mut v: Vec<RationalAngle> = points
        .iter()
        .map(|z| z.as_exact().expect("exact spectrum").clone())
        .collect();
    v.sort();
    v.dedup();
    v
}

fn ratio_str(r: &BigRational) -> String {
    format_ratio(r)
}

fn dist_to_set(z: &RationalAngle, set: &[RationalAngle]) -> BigRational {
    set.iter()
        .map(|w| z.distance(w))
        .min()
        .expect("nonempty set")
}

/// Result of the counting and gap argument for a Miller–Moreno pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmGapReport {
    pub p: u64,
    pub q: u64,
    pub n: usize,
    pub m: usize,
    /// Largest `|σ(X^kY)·σ(Y^{-1})|` over `k = 1..q-1`.
    pub distinct_products: usize,
    /// `n² - n - mp² + p + mp`.
    pub cardinality_bound: i64,
    pub n2_minus_1: usize,
    pub cardinality_ok: bool,
    /// `σ(X^kY) = σ(Y)` for every `k = 1..q-1`.
    pub spectra_match_y: bool,
    pub widest_gap: String,
    pub midpoint: String,
    /// Distance from the midpoint to the product set.
    pub midpoint_distance: String,
    /// `1/(2(n²-1))`.
    pub midpoint_lower_bound: String,
    pub nearest_q_root: String,
    /// A `k` whose `σ(X^k)` contains `nearest_q_root`.
    pub root_k: u64,
    /// Distance from `nearest_q_root` to the product set.
    pub root_distance: String,
    /// `1/(2(n²-1)) - 1/q`.
    pub predicted_lower_bound: String,
    pub midpoint_ok: bool,
    /// `root_distance >= predicted_lower_bound`
    pub root_ok: bool,
    /// `1/(2n²)`.
    pub threshold: String,
    /// Max over `k` of the pair defect of `(X^kY, Y^{-1})`.
    pub max_pair_defect: String,
    pub max_pair_defect_k: u64,
    pub max_pair_defect_value: f64,
    pub exceeds_threshold: bool,
}

pub fn mm_gap_analysis(params: &MillerMorenoParams) -> Result<MmGapReport> {
    let (x, y) = miller_moreno(params)?;
    let n = params.dim();
    let (p, q, m) = (params.p as i64, params.q, params.m as i64);
    let y_inv = y.inverse();
    let sig_y = set_of(&y.spectrum()?.points);
    let sig_yinv = set_of(&y_inv.spectrum()?.points);

    let products = |a: &[RationalAngle], b: &[RationalAngle]| {
        let mut v: Vec<RationalAngle> = a.iter().flat_map(|s| b.iter().map(|t| s.add(t))).collect();
        v.sort();
        v.dedup();
        v
    };

    let mut distinct_max = 0;
    let mut spectra_match = true;
    let mut best: Option<(BigRational, u64)> = None;
    let mut xk = UMatrix::identity(n);
    let mut xk_spectra = Vec::with_capacity(q as usize);
    let mut base_products = Vec::new();
    for k in 1..q {
        xk = xk.matmul(&x)?;
        let a = xk.matmul(&y)?;
        let sa = set_of(&a.spectrum()?.points);
        spectra_match &= sa == sig_y;
        let prod = products(&sa, &sig_yinv);
        distinct_max = distinct_max.max(prod.len());
        let sxk = set_of(&xk.spectrum()?.points);
        let defect = sxk
            .iter()
            .map(|g| dist_to_set(g, &prod))
            .max()
            .expect("nonempty spectrum");
        if best.as_ref().is_none_or(|(b, _)| &defect > b) {
            best = Some((defect, k));
        }
        if k == 1 {
            base_products = prod;
        }
        xk_spectra.push(sxk);
    }

    // widest gap of the product set (identical for every k when the
    // spectra match)
    let pts = &base_products;
    let mut widest = BigRational::zero();
    let mut mid = RationalAngle::zero();
    for i in 0..pts.len() {
        let a = pts[i].as_ratio();
        let b = if i + 1 < pts.len() {
            pts[i + 1].as_ratio().clone()
        } else {
            pts[0].as_ratio() + BigRational::one()
        };
        let gap = &b - a;
        if gap > widest {
            widest = gap.clone();
            let two = BigRational::from_integer(BigInt::from(2));
            mid = RationalAngle::from_ratio(a + gap / two);
        }
    }
    let midpoint_distance = dist_to_set(&mid, pts);
    let root = nearest_root_of_unity(&UnitPoint::Exact(mid.clone()), q);
    let root_k = xk_spectra
        .iter()
        .position(|s| s.contains(&root))
        .map(|i| i as u64 + 1)
        .unwrap_or(0);
    let root_distance = dist_to_set(&root, pts);

    let n_i = n as i64;
    let n2 = BigInt::from(n_i * n_i);
    let frac = |num: BigInt, den: BigInt| BigRational::new(num, den);
    let mid_lb = frac(BigInt::one(), BigInt::from(2) * (&n2 - 1));
    let predicted = &mid_lb - frac(BigInt::one(), BigInt::from(q));
    let threshold = frac(BigInt::one(), BigInt::from(2) * &n2);
    let (max_defect, max_k) = best.expect("q >= 2");
    Ok(MmGapReport {
        p: params.p,
        q,
        n,
        m: params.m,
        distinct_products: distinct_max,
        cardinality_bound: n_i * n_i - n_i - m * p * p + p + m * p,
        n2_minus_1: n * n - 1,
        cardinality_ok: (distinct_max as i64) <= n_i * n_i - n_i - m * p * p + p + m * p
            && distinct_max < n * n,
        spectra_match_y: spectra_match,
        widest_gap: ratio_str(&widest),
        midpoint: ratio_str(mid.as_ratio()),
        midpoint_distance: ratio_str(&midpoint_distance),
        midpoint_lower_bound: ratio_str(&mid_lb),
        nearest_q_root: ratio_str(root.as_ratio()),
        root_k,
        root_distance: ratio_str(&root_distance),
        predicted_lower_bound: ratio_str(&predicted),
        midpoint_ok: midpoint_distance >= mid_lb,
        root_ok: root_distance >= predicted,
        threshold: ratio_str(&threshold),
        max_pair_defect: ratio_str(&max_defect),
        max_pair_defect_k: max_k,
        max_pair_defect_value: crate::circle::ratio_to_f64(&max_defect),
        exceeds_threshold: max_defect > threshold,
    })
}

// ---- S_r -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed { re: f64, im: f64 },
    /// modulus uniform in `[1/2, 2]`, phase uniform
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrParams {
    /// Matrix dimension; the vectors live in `C^{n-1}`.
    pub n: usize,
    pub r: f64,
    pub lambda_mode: LambdaMode,
}

impl SrParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams("S_r needs n >= 2".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidParams(format!("r = {} not in (0, 1)", self.r)));
        }
        Ok(())
    }

    /// `4r²/(1-r²)²`.
    pub fn bound(&self) -> f64 {
        sr_bound(self.r)
    }
}

pub fn sr_bound(r: f64) -> f64 {
    4.0 * r * r / ((1.0 - r * r) * (1.0 - r * r))
}

/// An element `λ·[[1, x*], [y, y·x*]]` of `S_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrElement {
    pub lambda: [f64; 2],
    /// `x` (enters as the row `x*`)
    pub x: Vec<[f64; 2]>,
    /// `y` (the column)
    pub y: Vec<[f64; 2]>,
}

fn to_c(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|z| C64::new(z[0], z[1])).collect()
}

/// `u*v = Σ conj(u_i) v_i`.
fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

impl SrElement {
    pub fn lambda(&self) -> C64 {
        C64::new(self.lambda[0], self.lambda[1])
    }

    pub fn matrix(&self) -> GeneralMatrix {
        let x = to_c(&self.x);
        let y = to_c(&self.y);
        let n = x.len() + 1;
        // u = (1; y), v = (1; x), M = λ u v*
        let u = DVector::from_iterator(n, std::iter::once(C64::new(1.0, 0.0)).chain(y));
        let v = DVector::from_iterator(n, std::iter::once(C64::new(1.0, 0.0)).chain(x));
        let m: CMat = (&u * v.adjoint()) * self.lambda();
        GeneralMatrix::rank_one(m)
    }

    /// Closed-form nonzero eigenvalue `λ(1 + x*y)`.
    pub fn eigenvalue(&self) -> C64 {
        self.lambda() * (C64::new(1.0, 0.0) + inner(&to_c(&self.x), &to_c(&self.y)))
    }
}

/// Closed-form nonzero eigenvalue of `A·B`: `λμ(1 + a*y)(1 + x*b)` for
/// `A = (λ, a, b)`, `B = (μ, x, y)`.
pub fn sr_product_eigenvalue(a: &SrElement, b: &SrElement) -> C64 {
    let one = C64::new(1.0, 0.0);
    let (aa, ab) = (to_c(&a.x), to_c(&a.y));
    let (bx, by) = (to_c(&b.x), to_c(&b.y));
    a.lambda() * b.lambda() * (one + inner(&aa, &by)) * (one + inner(&bx, &ab))
}

/// Closed-form defect `|γ/(αβ) - 1|`.
pub fn sr_closed_form_ratio(a: &SrElement, b: &SrElement) -> f64 {
    let g = sr_product_eigenvalue(a, b);
    (g / (a.eigenvalue() * b.eigenvalue()) - C64::new(1.0, 0.0)).norm()
}

fn ball_vector(dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    // Gaussian direction, radius scaled by U^{1/(2·dim)} (real dimension 2·dim)
    let mut v: Vec<f64> = (0..2 * dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: f64 = rng.gen();
    let rad = radius * u.powf(1.0 / (2 * dim) as f64);
    for x in &mut v {
        *x *= rad / norm;
    }
    v.chunks(2).map(|c| [c[0], c[1]]).collect()
}

/// Random element of `S_r` with `x`, `y` uniform on the ball of radius
/// `0.999·r`.
pub fn sr_sample(params: &SrParams, rng: &mut impl Rng) -> SrElement {
    let dim = params.n - 1;
    let x = ball_vector(dim, 0.999 * params.r, rng);
    let y = ball_vector(dim, 0.999 * params.r, rng);
    let lambda = match &params.lambda_mode {
        LambdaMode::Fixed { re, im } => [*re, *im],
        LambdaMode::Sampled => {
            let m: f64 = rng.gen_range(0.5..2.0);
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            [m * t.cos(), m * t.sin()]
        }
    };
    SrElement { lambda, x, y }
}

#[derive(Clone, Debug)]
pub struct SrSampler(pub SrParams);

impl GeneralPairSource for SrSampler {
    fn pair(
        &self,
        _index: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(GeneralMatrix, GeneralMatrix, serde_json::Value, serde_json::Value)> {
        let a = sr_sample(&self.0, rng);
        let b = sr_sample(&self.0, rng);
        Ok((
            a.matrix(),
            b.matrix(),
            serde_json::to_value(&a).expect("element serializes"),
            serde_json::to_value(&b).expect("element serializes"),
        ))
    }
}

// ---- Q(p) ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct QSetParams {
    pub p: u64,
    pub epsilon_p: BigRational,
}

impl QSetParams {
    pub fn new(p: u64, epsilon_p: BigRational) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::InvalidParams(format!("{p} is not prime")));
        }
        let half = BigRational::new(BigInt::one(), BigInt::from(2 * p));
        if !epsilon_p.is_positive() || epsilon_p >= half {
            return Err(Error::InvalidParams(format!(
                "epsilon_p = {} must lie in (0, 1/(2p)) = (0, {})",
                format_ratio(&epsilon_p),
                format_ratio(&half)
            )));
        }
        Ok(QSetParams { p, epsilon_p })
    }

    /// `δ_p = 1/(2p) - ε_p`.
    pub fn delta(&self) -> BigRational {
        BigRational::new(BigInt::one(), BigInt::from(2 * self.p)) - &self.epsilon_p
    }

    /// `floor(1/(2δ_p))`: every prime above it is excluded.
    pub fn cutoff(&self) -> BigInt {
        let d = self.delta();
        (BigRational::one() / (d * BigRational::from_integer(BigInt::from(2)))).floor().to_integer()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QVerdict {
    pub q: u64,
    pub member: bool,
    /// Smallest `k` with `k/q` inside some open interval, when excluded.
    pub witness_k: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QSetReport {
    pub p: u64,
    pub epsilon_p: String,
    pub delta_p: String,
    pub cutoff: String,
    pub cutoff_reason: String,
    pub scanned_up_to: u64,
    /// `true` when the scan covered every prime up to the cutoff.
    pub complete: bool,
    pub primes: Vec<u64>,
    pub verdicts: Vec<QVerdict>,
}

fn overflow() -> Error {
    Error::InvalidParams("q-set arithmetic overflow; use a smaller denominator".into())
}

/// First `k` in `1..q` with `k/q` inside an open interval of radius `δ`
/// around some `(2j+1)/(2p)`, if any.
///
/// `|k/q - (2j+1)/(2p)| < δ_num/δ_den` is tested as
/// `|2pk - (2j+1)q|·δ_den < 2pq·δ_num` in integers.
pub fn q_excluding_k(p: u64, q: u64, delta: &BigRational) -> Result<Option<u64>> {
    let dn = delta.numer().to_u128().ok_or_else(overflow)?;
    let dd = delta.denom().to_u128().ok_or_else(overflow)?;
    let (p128, q128) = (p as u128, q as u128);
    let rhs = (2 * p128 * q128).checked_mul(dn).ok_or_else(overflow)?;
    for k in 1..q {
        let x = 2 * p128 * k as u128;
        let t = x / q128;
        let mut best = u128::MAX;
        for m in t.saturating_sub(1)..=t + 2 {
            if m % 2 == 1 && m < 2 * p128 {
                let mq = m * q128;
                best = best.min(x.abs_diff(mq));
            }
        }
        let lhs = best.checked_mul(dd).ok_or_else(overflow)?;
        if lhs < rhs {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Primes `q <= min(q_max, floor(1/(2δ_p)))` whose fractions `k/q` all
/// avoid the open `δ_p`-intervals around the odd multiples of `1/(2p)`.
pub fn q_set(params: &QSetParams, q_max: Option<u64>) -> Result<QSetReport> {
    let delta = params.delta();
    let cutoff = params.cutoff();
    let cutoff_u64 = cutoff.to_u64().unwrap_or(u64::MAX);
    let limit = match q_max {
        Some(m) => m.min(cutoff_u64),
        None => cutoff_u64,
    };
    if limit > 50_000_000 {
        return Err(Error::InvalidParams(format!(
            "cutoff {cutoff} is too large to scan; pass an explicit q_max"
        )));
    }
    let mut verdicts = Vec::new();
    let mut primes = Vec::new();
    for q in primes_up_to(limit) {
        let w = q_excluding_k(params.p, q, &delta)?;
        if w.is_none() {
            primes.push(q);
        }
        verdicts.push(QVerdict {
            q,
            member: w.is_none(),
            witness_k: w,
        });
    }
    Ok(QSetReport {
        p: params.p,
        epsilon_p: format_ratio(&params.epsilon_p),
        delta_p: format_ratio(&delta),
        cutoff: cutoff.to_string(),
        cutoff_reason: format!(
            "every prime q > 1/(2 delta_p) = {} has some k/q within delta_p of a midpoint",
            format_ratio(&(BigRational::one() / (delta.clone() * BigRational::from_integer(BigInt::from(2)))))
        ),
        scanned_up_to: limit,
        complete: limit >= cutoff_u64,
        primes,
        verdicts,
    })
}
