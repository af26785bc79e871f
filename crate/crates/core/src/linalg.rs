//! Complex matrices with structure-aware spectra.
//!
//! [`UMatrix`] models unitary matrices. Diagonal, weighted-cycle (`D·C^k`) and
//! block-diagonal matrices keep their structure under multiplication, so their
//! spectra are available in closed form and stay exact when every angle is
//! rational. Anything else falls back to dense storage and a numeric Schur
//! decomposition.
//!
//! [`GeneralMatrix`] is the non-unitary path used by rank-one semigroups.

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::circle::{RationalAngle, UnitPoint, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Default tolerance for the unitarity check `max |A*A - I|`.
pub const UNITARITY_TOLERANCE: f64 = 1e-9;

const SCHUR_MAX_ITER: usize = 10_000;
const SCHUR_RETRIES: u64 = 4;

/// A unitary matrix, stored in the most specific structured form available.
#[derive(Clone, Debug, PartialEq)]
pub enum UMatrix {
    /// Dense unitary matrix. `exact_lost` records that exact structured
    /// inputs were materialized to floating point to produce it.
    Dense { entries: CMat, exact_lost: bool },
    Diagonal(Vec<UnitPoint>),
    /// `D·C^k` where `C` is the `p×p` cycle matrix (`C[i][i+1] = 1`,
    /// `C[p-1][0] = 1`) and `p = d.len()`.
    MonomialCycle { d: Vec<UnitPoint>, k: usize },
    BlockDiag(Vec<UMatrix>),
}

/// Cyclic shift `σ_k(D)` with `σ_k(D)_j = d_{(j+k) mod p}`, so that
/// `C^k D C^{-k} = σ_k(D)`.
pub fn shift_diag(d: &[UnitPoint], k: i64) -> Vec<UnitPoint> {
    let p = d.len() as i64;
    (0..p)
        .map(|j| d[(j + k).rem_euclid(p) as usize].clone())
        .collect()
}

fn pointwise(a: &[UnitPoint], b: &[UnitPoint]) -> Vec<UnitPoint> {
    a.iter().zip(b).map(|(x, y)| x.mul(y)).collect()
}

impl UMatrix {
    pub fn identity(n: usize) -> Self {
        UMatrix::Diagonal(vec![UnitPoint::one(); n])
    }

    /// Dense unitary matrix; fails if `max |A*A - I| > tol`.
    pub fn dense(entries: CMat, tol: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                left: entries.nrows(),
                right: entries.ncols(),
            });
        }
        let dev = unitarity_deviation(&entries);
        if dev > tol {
            return Err(Error::NonUnitary { deviation: dev });
        }
        Ok(UMatrix::Dense {
            entries,
            exact_lost: false,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            UMatrix::Dense { entries, .. } => entries.nrows(),
            UMatrix::Diagonal(d) => d.len(),
            UMatrix::MonomialCycle { d, .. } => d.len(),
            UMatrix::BlockDiag(bs) => bs.iter().map(UMatrix::dim).sum(),
        }
    }

    /// `true` when no floating point has entered the representation.
    pub fn is_exact(&self) -> bool {
        match self {
            UMatrix::Dense { .. } => false,
            UMatrix::Diagonal(d) | UMatrix::MonomialCycle { d, .. } => {
                d.iter().all(UnitPoint::is_exact)
            }
            UMatrix::BlockDiag(bs) => bs.iter().all(UMatrix::is_exact),
        }
    }

    /// `true` when the matrix is structured (not dense).
    pub fn is_structured(&self) -> bool {
        match self {
            UMatrix::Dense { .. } => false,
            UMatrix::BlockDiag(bs) => bs.iter().all(UMatrix::is_structured),
            _ => true,
        }
    }

    /// Structural diagonality (after normalization).
    pub fn is_diagonal(&self) -> bool {
        match self {
            UMatrix::Diagonal(_) => true,
            UMatrix::MonomialCycle { d, k } => k % d.len() == 0,
            UMatrix::BlockDiag(bs) => bs.iter().all(UMatrix::is_diagonal),
            UMatrix::Dense { entries, .. } => {
                let n = entries.nrows();
                (0..n).all(|i| (0..n).all(|j| i == j || entries[(i, j)].norm() == 0.0))
            }
        }
    }

    /// Puts the matrix in canonical structured form: `D·C^0` becomes
    /// diagonal, nested block lists are flattened, and a block list made of
    /// diagonal blocks only collapses into one diagonal.
    pub fn normalize(self) -> Self {
        match self {
            UMatrix::MonomialCycle { d, k } => {
                let p = d.len();
                let k = if p == 0 { 0 } else { k % p };
                if k == 0 {
                    UMatrix::Diagonal(d)
                } else {
                    UMatrix::MonomialCycle { d, k }
                }
            }
            UMatrix::BlockDiag(bs) => {
                let mut flat = Vec::with_capacity(bs.len());
                for b in bs {
                    match b.normalize() {
                        UMatrix::BlockDiag(inner) => flat.extend(inner),
                        other => flat.push(other),
                    }
                }
                // merge adjacent diagonal blocks
                let mut merged: Vec<UMatrix> = Vec::with_capacity(flat.len());
                for b in flat {
                    if let (Some(UMatrix::Diagonal(prev)), UMatrix::Diagonal(cur)) =
                        (merged.last_mut(), &b)
                    {
                        prev.extend(cur.iter().cloned());
                        continue;
                    }
                    merged.push(b);
                }
                if merged.len() == 1 {
                    merged.pop().unwrap()
                } else {
                    UMatrix::BlockDiag(merged)
                }
            }
            other => other,
        }
    }

    /// Block dimensions of the top-level structure.
    fn partition(&self) -> Vec<usize> {
        match self {
            UMatrix::BlockDiag(bs) => bs.iter().map(UMatrix::dim).collect(),
            other => vec![other.dim()],
        }
    }

    /// Splits a diagonal into blocks of the given sizes.
    fn split_diagonal(d: &[UnitPoint], parts: &[usize]) -> Vec<UMatrix> {
        let mut out = Vec::with_capacity(parts.len());
        let mut at = 0;
        for &len in parts {
            out.push(UMatrix::Diagonal(d[at..at + len].to_vec()));
            at += len;
        }
        out
    }

    /// Materializes the matrix as dense complex entries.
    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        match self {
            UMatrix::Dense { entries, .. } => entries.clone(),
            UMatrix::Diagonal(d) => {
                let mut m = CMat::zeros(n, n);
                for (i, z) in d.iter().enumerate() {
                    m[(i, i)] = point_to_c64(z);
                }
                m
            }
            UMatrix::MonomialCycle { d, k } => {
                let mut m = CMat::zeros(n, n);
                for (i, z) in d.iter().enumerate() {
                    m[(i, (i + k) % n)] = point_to_c64(z);
                }
                m
            }
            UMatrix::BlockDiag(bs) => {
                let mut m = CMat::zeros(n, n);
                let mut at = 0;
                for b in bs {
                    let bd = b.to_dense();
                    let len = b.dim();
                    m.view_mut((at, at), (len, len)).copy_from(&bd);
                    at += len;
                }
                m
            }
        }
    }

    fn dense_product(a: &UMatrix, b: &UMatrix) -> UMatrix {
        let lost = |m: &UMatrix| match m {
            UMatrix::Dense { exact_lost, .. } => *exact_lost,
            other => other.is_exact(),
        };
        UMatrix::Dense {
            entries: a.to_dense() * b.to_dense(),
            exact_lost: lost(a) || lost(b),
        }
    }

    /// Matrix product, staying in the most specific closed structured form.
    pub fn matmul(&self, other: &UMatrix) -> Result<UMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        use UMatrix::*;
        let out = match (self, other) {
            (Diagonal(a), Diagonal(b)) => Diagonal(pointwise(a, b)),
            (Diagonal(a), MonomialCycle { d, k }) => MonomialCycle {
                d: pointwise(a, d),
                k: *k,
            },
            (MonomialCycle { d, k }, Diagonal(b)) => MonomialCycle {
                d: pointwise(d, &shift_diag(b, *k as i64)),
                k: *k,
            },
            (MonomialCycle { d: da, k: ka }, MonomialCycle { d: db, k: kb }) => {
                let p = da.len();
                MonomialCycle {
                    d: pointwise(da, &shift_diag(db, *ka as i64)),
                    k: (ka + kb) % p,
                }
            }
            (BlockDiag(bs), BlockDiag(cs)) if self.partition() == other.partition() => {
                let blocks = bs
                    .iter()
                    .zip(cs)
                    .map(|(b, c)| b.matmul(c))
                    .collect::<Result<Vec<_>>>()?;
                BlockDiag(blocks)
            }
            (BlockDiag(bs), Diagonal(d)) => {
                let parts = Self::split_diagonal(d, &self.partition());
                let blocks = bs
                    .iter()
                    .zip(&parts)
                    .map(|(b, c)| b.matmul(c))
                    .collect::<Result<Vec<_>>>()?;
                BlockDiag(blocks)
            }
            (Diagonal(d), BlockDiag(cs)) => {
                let parts = Self::split_diagonal(d, &other.partition());
                let blocks = parts
                    .iter()
                    .zip(cs)
                    .map(|(b, c)| b.matmul(c))
                    .collect::<Result<Vec<_>>>()?;
                BlockDiag(blocks)
            }
            _ => Self::dense_product(self, other),
        };
        Ok(out.normalize())
    }

    /// Inverse; for dense input this is the conjugate transpose.
    pub fn inverse(&self) -> UMatrix {
        match self {
            UMatrix::Dense {
                entries,
                exact_lost,
            } => UMatrix::Dense {
                entries: entries.adjoint(),
                exact_lost: *exact_lost,
            },
            UMatrix::Diagonal(d) => UMatrix::Diagonal(d.iter().map(UnitPoint::inv).collect()),
            // (D C^k)^{-1} = C^{-k} D^{-1} = σ_{-k}(D^{-1}) C^{-k}
            UMatrix::MonomialCycle { d, k } => {
                let p = d.len();
                let inv: Vec<UnitPoint> = d.iter().map(UnitPoint::inv).collect();
                UMatrix::MonomialCycle {
                    d: shift_diag(&inv, -(*k as i64)),
                    k: (p - k % p) % p,
                }
                .normalize()
            }
            UMatrix::BlockDiag(bs) => UMatrix::BlockDiag(bs.iter().map(UMatrix::inverse).collect()),
        }
    }

    pub fn pow(&self, e: u64) -> Result<UMatrix> {
        let mut acc = UMatrix::identity(self.dim());
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.matmul(&base)?;
            }
            base = base.matmul(&base)?;
            e >>= 1;
        }
        Ok(acc)
    }

    /// Eigenvalues with algebraic multiplicity.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let mut points = Vec::with_capacity(self.dim());
        self.collect_spectrum(&mut points)?;
        Ok(Spectrum::new(points))
    }

    fn collect_spectrum(&self, out: &mut Vec<UnitPoint>) -> Result<()> {
        match self {
            UMatrix::Diagonal(d) => out.extend(d.iter().cloned()),
            UMatrix::MonomialCycle { d, k } => out.extend(monomial_cycle_spectrum(d, *k)),
            UMatrix::BlockDiag(bs) => {
                for b in bs {
                    b.collect_spectrum(out)?;
                }
            }
            UMatrix::Dense { entries, .. } => {
                let dev = unitarity_deviation(entries);
                if dev > UNITARITY_TOLERANCE {
                    return Err(Error::NonUnitary { deviation: dev });
                }
                let eig = eigensolve_dense(entries)?;
                // for points near the circle the angle error is at most half
                // the chord error (|arg(z/w)| <= π|z - w|, scaled by 1/2π)
                let err = (eig.error_bound / 2.0).max(f64::EPSILON * entries.nrows() as f64);
                for z in &eig.values {
                    out.push(UnitPoint::from_complex(z.re, z.im, err));
                }
            }
        }
        Ok(())
    }
}

/// Closed-form spectrum of `D·C^k`.
///
/// The index map `j -> j+k (mod p)` splits into `g = gcd(k, p)` cycles of
/// length `L = p/g`; each cycle contributes the factor `λ^L - Π d_j` to the
/// characteristic polynomial, whose roots are the `L`-th roots of the cycle
/// product. For prime `p` and `k ≢ 0` this is `λ^p - det D`.
pub fn monomial_cycle_spectrum(d: &[UnitPoint], k: usize) -> Vec<UnitPoint> {
    let p = d.len();
    if p == 0 {
        return Vec::new();
    }
    let k = k % p;
    if k == 0 {
        return d.to_vec();
    }
    let g = k.gcd(&p);
    let len = p / g;
    let mut out = Vec::with_capacity(p);
    for c in 0..g {
        let members = (0..len).map(|t| &d[(c + t * k) % p]);
        let all_exact = d.iter().all(UnitPoint::is_exact);
        if all_exact {
            let mut sum = RationalAngle::zero();
            for z in members {
                sum = sum.add(z.as_exact().unwrap());
            }
            for t in 0..len {
                let r = (sum.as_ratio() + BigRational::from_integer(BigInt::from(t)))
                    / BigRational::from_integer(BigInt::from(len));
                out.push(UnitPoint::Exact(RationalAngle::from_ratio(r)));
            }
        } else {
            let (mut sum, mut err) = (0.0f64, 0.0f64);
            for z in members {
                sum += z.turn();
                err += z.err();
            }
            let sum = sum.rem_euclid(1.0);
            for t in 0..len {
                out.push(UnitPoint::approx(
                    (sum + t as f64) / len as f64,
                    err / len as f64 + f64::EPSILON,
                ));
            }
        }
    }
    out
}

pub fn point_to_c64(z: &UnitPoint) -> C64 {
    let (re, im) = z.to_complex();
    C64::new(re, im)
}

/// `max |A*A - I|` over entries.
pub fn unitarity_deviation(a: &CMat) -> f64 {
    let n = a.nrows();
    let g = a.adjoint() * a;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Multiset of eigenvalues on the unit circle, sorted by angle.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub points: Vec<UnitPoint>,
    pub exact: bool,
}

fn cmp_points(a: &UnitPoint, b: &UnitPoint) -> Ordering {
    match (a, b) {
        (UnitPoint::Exact(x), UnitPoint::Exact(y)) => x.cmp(y),
        _ => a.turn().total_cmp(&b.turn()),
    }
}

impl Spectrum {
    pub fn new(mut points: Vec<UnitPoint>) -> Self {
        points.sort_by(cmp_points);
        let exact = points.iter().all(UnitPoint::is_exact);
        Spectrum { points, exact }
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// Distinct values (exact dedup for exact points, tolerance otherwise).
    pub fn distinct(&self) -> Vec<UnitPoint> {
        let mut out: Vec<UnitPoint> = Vec::new();
        for z in &self.points {
            if !out.iter().any(|w| w.approx_eq(z, DEFAULT_TOLERANCE)) {
                out.push(z.clone());
            }
        }
        out
    }
}

/// Max scaled-angle distance under the best cyclic alignment of two sorted
/// spectra. Returns `None` when the multiset sizes differ.
pub fn spectrum_match_distance(a: &Spectrum, b: &Spectrum) -> Option<f64> {
    if a.dim() != b.dim() {
        return None;
    }
    let n = a.dim();
    if n == 0 {
        return Some(0.0);
    }
    let mut ta: Vec<f64> = a.points.iter().map(UnitPoint::turn).collect();
    let mut tb: Vec<f64> = b.points.iter().map(UnitPoint::turn).collect();
    ta.sort_by(f64::total_cmp);
    tb.sort_by(f64::total_cmp);
    let best = (0..n)
        .map(|s| {
            (0..n)
                .map(|i| crate::circle::turn_distance(ta[i], tb[(i + s) % n]))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    Some(best)
}

/// Numeric eigenvalues of a dense matrix with an a posteriori error bound.
#[derive(Clone, Debug)]
pub struct Eigenvalues {
    pub values: Vec<C64>,
    /// Every true eigenvalue lies within this distance of a reported value
    /// (`‖A - Q·diag(T)·Q*‖_F`, a Bauer–Fike bound for the normal
    /// approximant).
    pub error_bound: f64,
}

/// Eigenvalues via complex Schur decomposition, ordered by angle then modulus.
pub fn eigensolve_dense(a: &CMat) -> Result<Eigenvalues> {
    let n = a.nrows();
    if n == 0 || !a.is_square() {
        return Err(Error::DimensionMismatch {
            left: a.nrows(),
            right: a.ncols(),
        });
    }
    // Francis iterations can stall on permutation-like inputs; retry on
    // seeded unitary conjugates, which share the spectrum.
    let mut attempt = None;
    for retry in 0..=SCHUR_RETRIES {
        let (basis, work) = if retry == 0 {
            (None, a.clone())
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(retry);
            let p = random_unitary(n, &mut rng);
            let work = p.adjoint() * a * &p;
            (Some(p), work)
        };
        if let Some(schur) = nalgebra::linalg::Schur::try_new(work, 1e-15, SCHUR_MAX_ITER) {
            let (q, t) = schur.unpack();
            let q = match basis {
                Some(p) => p * q,
                None => q,
            };
            attempt = Some((q, t));
            break;
        }
    }
    let (q, t) = attempt.ok_or(Error::ConvergenceFailure { dim: n })?;
    let mut values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let diag = CMat::from_diagonal(&nalgebra::DVector::from_vec(values.clone()));
    let residual = a - &q * diag * q.adjoint();
    let error_bound = residual.norm();
    values.sort_by(|x, y| {
        let ax = x.im.atan2(x.re).rem_euclid(std::f64::consts::TAU);
        let ay = y.im.atan2(y.re).rem_euclid(std::f64::consts::TAU);
        ax.total_cmp(&ay).then(x.norm().total_cmp(&y.norm()))
    });
    Ok(Eigenvalues {
        values,
        error_bound,
    })
}

/// Haar-ish random unitary from the QR factorization of a complex Gaussian
/// matrix, with the phases of `R`'s diagonal folded back into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Non-unitary square matrix for the semigroup path.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralMatrix {
    pub entries: CMat,
    /// Rank at most one by construction; the only possible nonzero
    /// eigenvalue is then the trace.
    pub rank_le_one: bool,
}

impl GeneralMatrix {
    pub fn new(entries: CMat) -> Self {
        GeneralMatrix {
            entries,
            rank_le_one: false,
        }
    }

    pub fn rank_one(entries: CMat) -> Self {
        GeneralMatrix {
            entries,
            rank_le_one: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matmul(&self, other: &GeneralMatrix) -> Result<GeneralMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(GeneralMatrix {
            entries: &self.entries * &other.entries,
            rank_le_one: self.rank_le_one || other.rank_le_one,
        })
    }

    /// All eigenvalues (numeric), with multiplicity.
    pub fn eigenvalues(&self) -> Result<Eigenvalues> {
        eigensolve_dense(&self.entries)
    }

    /// Eigenvalues with modulus above the rank-detection threshold.
    pub fn nonzero_eigenvalues(&self) -> Result<Vec<C64>> {
        let scale = self.entries.norm().max(f64::MIN_POSITIVE);
        let cut = 1e-10 * scale;
        if self.rank_le_one {
            let tr = self.entries.trace();
            return Ok(if tr.norm() > cut { vec![tr] } else { Vec::new() });
        }
        let eig = self.eigenvalues()?;
        Ok(eig.values.into_iter().filter(|z| z.norm() > cut).collect())
    }
}

/// Spectral radius `ρ(A) = max |λ|`.
pub fn spectral_radius(a: &GeneralMatrix) -> Result<f64> {
    if a.entries.iter().all(|z| z.norm() == 0.0) {
        return Ok(0.0);
    }
    if a.rank_le_one {
        return Ok(a.entries.trace().norm());
    }
    Ok(a
        .eigenvalues()?
        .values
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

// ---- JSON ----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum MatrixDoc {
    Dense {
        dim: usize,
        entries: Vec<Vec<[f64; 2]>>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        exact_lost: bool,
    },
    Diagonal {
        dim: usize,
        entries: Vec<UnitPoint>,
    },
    MonomialCycle {
        dim: usize,
        d: Vec<UnitPoint>,
        k: usize,
    },
    BlockDiag {
        dim: usize,
        blocks: Vec<MatrixDoc>,
    },
}

fn dense_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn rows_to_dense(dim: usize, rows: &[Vec<[f64; 2]>]) -> std::result::Result<CMat, String> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(format!("dense entries must be {dim}x{dim}"));
    }
    Ok(CMat::from_fn(dim, dim, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

impl MatrixDoc {
    fn from_matrix(m: &UMatrix) -> Self {
        let dim = m.dim();
        match m {
            UMatrix::Dense {
                entries,
                exact_lost,
            } => MatrixDoc::Dense {
                dim,
                entries: dense_rows(entries),
                exact_lost: *exact_lost,
            },
            UMatrix::Diagonal(d) => MatrixDoc::Diagonal {
                dim,
                entries: d.clone(),
            },
            UMatrix::MonomialCycle { d, k } => MatrixDoc::MonomialCycle {
                dim,
                d: d.clone(),
                k: *k,
            },
            UMatrix::BlockDiag(bs) => MatrixDoc::BlockDiag {
                dim,
                blocks: bs.iter().map(MatrixDoc::from_matrix).collect(),
            },
        }
    }

    fn into_matrix(self) -> std::result::Result<UMatrix, String> {
        let check = |dim: usize, got: usize| {
            if dim == got && dim > 0 {
                Ok(())
            } else {
                Err(format!("declared dim {dim} but found {got}"))
            }
        };
        match self {
            MatrixDoc::Dense {
                dim,
                entries,
                exact_lost,
            } => {
                let m = rows_to_dense(dim, &entries)?;
                let dev = unitarity_deviation(&m);
                if dev > UNITARITY_TOLERANCE {
                    return Err(format!("dense matrix is not unitary (deviation {dev:.3e})"));
                }
                Ok(UMatrix::Dense {
                    entries: m,
                    exact_lost,
                })
            }
            MatrixDoc::Diagonal { dim, entries } => {
                check(dim, entries.len())?;
                Ok(UMatrix::Diagonal(entries))
            }
            MatrixDoc::MonomialCycle { dim, d, k } => {
                check(dim, d.len())?;
                Ok(UMatrix::MonomialCycle { d, k: k % dim })
            }
            MatrixDoc::BlockDiag { dim, blocks } => {
                let blocks = blocks
                    .into_iter()
                    .map(MatrixDoc::into_matrix)
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let got = blocks.iter().map(UMatrix::dim).sum();
                check(dim, got)?;
                Ok(UMatrix::BlockDiag(blocks))
            }
        }
    }
}

impl Serialize for UMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixDoc::from_matrix(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for UMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        MatrixDoc::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct GeneralDoc {
    dim: usize,
    entries: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    rank_le_one: bool,
}

impl Serialize for GeneralMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GeneralDoc {
            dim: self.dim(),
            entries: dense_rows(&self.entries),
            rank_le_one: self.rank_le_one,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeneralMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GeneralDoc::deserialize(d)?;
        let entries = rows_to_dense(doc.dim, &doc.entries).map_err(serde::de::Error::custom)?;
        Ok(GeneralMatrix {
            entries,
            rank_le_one: doc.rank_le_one,
        })
    }
}

/// Max-norm distance between two dense matrices.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Max distance from each exact point of `a` to the matching point of `b`,
/// used to compare exact spectra with numeric ones.
pub fn exact_vs_numeric(exact: &Spectrum, numeric: &[C64]) -> Option<f64> {
    let numeric = Spectrum::new(
        numeric
            .iter()
            .map(|z| UnitPoint::from_complex(z.re, z.im, 0.0))
            .collect(),
    );
    spectrum_match_distance(exact, &numeric)
}
