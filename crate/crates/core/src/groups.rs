//! Finite closures of unitary generator sets.
//!
//! Closure is breadth-first by word length with generators multiplied on the
//! right, so element indices are reproducible. Exact structured elements are
//! deduplicated by their exact normalized form; as soon as a dense generator
//! is involved every element is keyed by its entries rounded to a grid.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circle::UnitPoint;
use crate::error::{Error, Result};
use crate::linalg::{CMat, GeneralMatrix, UMatrix, C64};

/// Default rounding grid for dense canonical keys.
pub const DEFAULT_KEY_TOLERANCE: f64 = 1e-7;

/// Rank threshold for the Burnside span test.
pub const SPAN_RANK_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum ElementKey {
    Exact(String),
    Rounded(Vec<i64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum KeyMode {
    Exact,
    Rounded(f64),
}

fn write_points(out: &mut String, pts: &[UnitPoint]) {
    for z in pts {
        let a = z.as_exact().expect("exact key requested for approximate point");
        let _ = write!(out, "{},", a);
    }
}

fn write_exact_key(m: &UMatrix, out: &mut String) {
    match m {
        UMatrix::Diagonal(d) => {
            out.push_str("D[");
            write_points(out, d);
            out.push(']');
        }
        UMatrix::MonomialCycle { d, k } => {
            let _ = write!(out, "M{k}[");
            write_points(out, d);
            out.push(']');
        }
        UMatrix::BlockDiag(bs) => {
            out.push('B');
            out.push('(');
            for b in bs {
                write_exact_key(b, out);
            }
            out.push(')');
        }
        UMatrix::Dense { .. } => unreachable!("dense element in exact key mode"),
    }
}

fn key_of(m: &UMatrix, mode: KeyMode) -> ElementKey {
    match mode {
        KeyMode::Exact => {
            let mut s = String::new();
            write_exact_key(m, &mut s);
            ElementKey::Exact(s)
        }
        KeyMode::Rounded(tol) => {
            let dense = m.to_dense();
            let mut v = Vec::with_capacity(2 * dense.len());
            for z in dense.iter() {
                v.push((z.re / tol).round() as i64);
                v.push((z.im / tol).round() as i64);
            }
            ElementKey::Rounded(v)
        }
    }
}

fn has_approx_points(m: &UMatrix) -> bool {
    match m {
        UMatrix::Dense { .. } => false,
        UMatrix::Diagonal(d) | UMatrix::MonomialCycle { d, .. } => {
            d.iter().any(|z| !z.is_exact())
        }
        UMatrix::BlockDiag(bs) => bs.iter().any(has_approx_points),
    }
}

#[derive(Clone, Debug)]
pub struct ClosureOptions {
    pub max_elements: usize,
    /// Rounding grid for dense keys.
    pub key_tolerance: f64,
    pub cayley: bool,
}

impl Default for ClosureOptions {
    fn default() -> Self {
        ClosureOptions {
            max_elements: 100_000,
            key_tolerance: DEFAULT_KEY_TOLERANCE,
            cayley: false,
        }
    }
}

/// The group generated by a finite set of unitary matrices, possibly
/// truncated at a budget.
#[derive(Clone, Debug)]
pub struct GroupClosure {
    pub generators: Vec<UMatrix>,
    pub elements: Vec<UMatrix>,
    /// `false` when the element budget ran out before closure.
    pub complete: bool,
    /// Row-major product table: `cayley[i * len + j]` is the index of
    /// `elements[i] * elements[j]`.
    pub cayley: Option<Vec<u32>>,
    keys: HashMap<ElementKey, usize>,
    mode: KeyMode,
}

/// Closes `generators` with at most `max_elements` elements.
pub fn close(generators: &[UMatrix], max_elements: usize) -> Result<GroupClosure> {
    close_with(
        generators,
        &ClosureOptions {
            max_elements,
            ..ClosureOptions::default()
        },
    )
}

pub fn close_with(generators: &[UMatrix], opts: &ClosureOptions) -> Result<GroupClosure> {
    let dim = generators
        .first()
        .map(UMatrix::dim)
        .ok_or_else(|| Error::InvalidParams("no generators".into()))?;
    for g in generators {
        if g.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: g.dim(),
            });
        }
        if has_approx_points(g) {
            return Err(Error::ClosureRefused(
                "a structured generator has an irrational angle; use sampling".into(),
            ));
        }
    }
    let mode = if generators.iter().all(UMatrix::is_structured) {
        KeyMode::Exact
    } else {
        KeyMode::Rounded(opts.key_tolerance)
    };
    let generators: Vec<UMatrix> = generators.iter().cloned().map(UMatrix::normalize).collect();

    let id = UMatrix::identity(dim);
    let mut keys = HashMap::new();
    keys.insert(key_of(&id, mode), 0);
    let mut elements = vec![id];
    let mut complete = true;
    let mut head = 0;
    'bfs: while head < elements.len() {
        for g in &generators {
            let prod = elements[head].matmul(g)?;
            let key = key_of(&prod, mode);
            if keys.contains_key(&key) {
                continue;
            }
            if elements.len() >= opts.max_elements {
                complete = false;
                break 'bfs;
            }
            keys.insert(key, elements.len());
            elements.push(prod);
        }
        head += 1;
    }

    let mut closure = GroupClosure {
        generators,
        elements,
        complete,
        cayley: None,
        keys,
        mode,
    };
    if opts.cayley && complete {
        closure.build_cayley()?;
    }
    Ok(closure)
}

impl GroupClosure {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }

    /// `true` when elements are keyed exactly (all structured, exact angles).
    pub fn is_exact(&self) -> bool {
        self.mode == KeyMode::Exact
    }

    pub fn index_of(&self, m: &UMatrix) -> Option<usize> {
        let m = m.clone().normalize();
        self.keys.get(&key_of(&m, self.mode)).copied()
    }

    /// Index of `elements[i] * elements[j]`, from the table when present.
    pub fn product_index(&self, i: usize, j: usize) -> Result<usize> {
        if let Some(t) = &self.cayley {
            return Ok(t[i * self.len() + j] as usize);
        }
        let prod = self.elements[i].matmul(&self.elements[j])?;
        self.index_of(&prod)
            .ok_or_else(|| Error::InvalidParams("product left the closure".into()))
    }

    pub fn build_cayley(&mut self) -> Result<()> {
        if !self.complete {
            return Err(Error::IncompleteClosure);
        }
        let n = self.len();
        let rows: Vec<Vec<u32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let prod = self.elements[i].matmul(&self.elements[j])?;
                        self.keys
                            .get(&key_of(&prod, self.mode))
                            .map(|&x| x as u32)
                            .ok_or_else(|| Error::InvalidParams("product left the closure".into()))
                    })
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        self.cayley = Some(rows.concat());
        Ok(())
    }

    fn commutes(&self, a: &UMatrix, b: &UMatrix) -> Result<bool> {
        let ab = a.matmul(b)?;
        let ba = b.matmul(a)?;
        Ok(key_of(&ab, self.mode) == key_of(&ba, self.mode))
    }

    /// Indices of central elements (those commuting with every generator).
    pub fn centre(&self) -> Result<Vec<usize>> {
        if !self.complete {
            return Err(Error::IncompleteClosure);
        }
        let flags: Vec<bool> = self
            .elements
            .par_iter()
            .map(|e| {
                for g in &self.generators {
                    if !self.commutes(e, g)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(flags
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
            .collect())
    }

    /// `|G| / |Z(G)|`.
    pub fn quotient_order_mod_centre(&self) -> Result<usize> {
        let z = self.centre()?;
        Ok(self.len() / z.len())
    }

    /// `true` if every element's inverse is present.
    pub fn has_inverses(&self) -> bool {
        self.elements
            .iter()
            .all(|e| self.index_of(&e.inverse()).is_some())
    }

    pub fn to_doc(&self) -> ClosureDoc {
        ClosureDoc {
            generators: self.generators.clone(),
            element_count: Some(self.len()),
            complete: Some(self.complete),
            cayley: self.cayley.clone(),
        }
    }
}

/// JSON form of a closure. Only `generators` is required on import.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosureDoc {
    pub generators: Vec<UMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cayley: Option<Vec<u32>>,
}

impl ClosureDoc {
    /// Rebuilds the closure and checks it against the recorded metadata.
    pub fn rebuild(&self, opts: &ClosureOptions) -> Result<GroupClosure> {
        let mut opts = opts.clone();
        if let Some(n) = self.element_count {
            opts.max_elements = opts.max_elements.max(n);
        }
        opts.cayley |= self.cayley.is_some();
        let g = close_with(&self.generators, &opts)?;
        if let Some(n) = self.element_count {
            if self.complete == Some(true) && (g.len() != n || !g.complete) {
                return Err(Error::Parse(format!(
                    "closure document records {n} elements, rebuilt {}",
                    g.len()
                )));
            }
        }
        if let (Some(want), Some(got)) = (&self.cayley, &g.cayley) {
            if want != got {
                return Err(Error::Parse("Cayley table does not match rebuilt closure".into()));
            }
        }
        Ok(g)
    }
}

fn vectorize(m: &CMat) -> DVector<C64> {
    DVector::from_iterator(m.len(), m.iter().copied())
}

/// Burnside test: the elements act irreducibly on `C^dim` iff the algebra
/// they generate is all of `M_dim(C)`, i.e. has dimension `dim²`.
///
/// The algebra is grown from the span of the elements by multiplying basis
/// vectors by the elements until the span stops growing; the final rank is
/// read off the eigenvalues of the Gram matrix.
pub fn is_irreducible(elements: &[UMatrix], dim: usize) -> bool {
    let mats: Vec<CMat> = elements.iter().map(UMatrix::to_dense).collect();
    algebra_dimension(&mats, dim) == dim * dim
}

/// Dimension of the algebra generated by `mats` (closed under products).
pub fn algebra_dimension(mats: &[CMat], dim: usize) -> usize {
    let target = dim * dim;
    let mut basis: Vec<DVector<C64>> = Vec::new();
    let mut basis_mats: Vec<CMat> = Vec::new();
    let try_add = |m: &CMat, basis: &mut Vec<DVector<C64>>, basis_mats: &mut Vec<CMat>| {
        let mut v = vectorize(m);
        let norm0 = v.norm();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dotc(&v);
                v -= b * c;
            }
        }
        let r = v.norm();
        if r > SPAN_RANK_TOLERANCE * norm0.max(1.0) {
            basis.push(v / C64::new(r, 0.0));
            basis_mats.push(m.clone());
            true
        } else {
            false
        }
    };
    for m in mats {
        try_add(m, &mut basis, &mut basis_mats);
        if basis.len() == target {
            break;
        }
    }
    let mut frontier = 0;
    while frontier < basis_mats.len() && basis.len() < target {
        let b = basis_mats[frontier].clone();
        for m in mats {
            try_add(&(&b * m), &mut basis, &mut basis_mats);
            if basis.len() == target {
                break;
            }
        }
        frontier += 1;
    }
    gram_rank(&basis_mats)
}

/// Numerical rank of a family of matrices from its Gram matrix.
pub fn gram_rank(mats: &[CMat]) -> usize {
    if mats.is_empty() {
        return 0;
    }
    let vs: Vec<DVector<C64>> = mats.iter().map(vectorize).collect();
    let k = vs.len();
    let gram = CMat::from_fn(k, k, |i, j| vs[i].dotc(&vs[j]));
    let eig = gram.symmetric_eigenvalues();
    let top = eig.iter().cloned().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    eig.iter().filter(|&&e| e > SPAN_RANK_TOLERANCE * top).count()
}

/// A finite sample from an infinite semigroup.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemigroupSample {
    pub elements: Vec<GeneralMatrix>,
    pub sampler: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_unitary, UNITARITY_TOLERANCE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(n: i64, d: u64) -> UnitPoint {
        UnitPoint::exact(n, d)
    }

    fn cycle(p: usize) -> UMatrix {
        UMatrix::MonomialCycle {
            d: vec![UnitPoint::one(); p],
            k: 1,
        }
    }

    pub(crate) fn q8() -> Vec<UMatrix> {
        vec![
            UMatrix::Diagonal(vec![ex(1, 4), ex(3, 4)]),
            UMatrix::MonomialCycle {
                d: vec![UnitPoint::one(), ex(1, 2)],
                k: 1,
            },
        ]
    }

    #[test]
    fn cyclic_group() {
        let g = close(&[cycle(5)], 100).unwrap();
        assert!(g.complete);
        assert_eq!(g.len(), 5);
        for k in 0..5u64 {
            assert!(g.index_of(&cycle(5).pow(k).unwrap()).is_some());
        }
        assert_eq!(g.centre().unwrap().len(), 5);
        assert_eq!(g.quotient_order_mod_centre().unwrap(), 1);
    }

    #[test]
    fn q8_centre() {
        let g = close(&q8(), 100).unwrap();
        assert_eq!(g.len(), 8);
        let z = g.centre().unwrap();
        let zs: Vec<&UMatrix> = z.iter().map(|&i| &g.elements[i]).collect();
        assert_eq!(zs.len(), 2);
        assert!(zs.contains(&&UMatrix::identity(2)));
        assert!(zs.contains(&&UMatrix::Diagonal(vec![ex(1, 2), ex(1, 2)])));
        assert_eq!(g.quotient_order_mod_centre().unwrap(), 4);
        // brute force over all 8 elements
        let brute: Vec<usize> = (0..8)
            .filter(|&i| {
                (0..8).all(|j| {
                    let a = g.elements[i].to_dense();
                    let b = g.elements[j].to_dense();
                    crate::linalg::max_abs_diff(&(&a * &b), &(&b * &a)) < 1e-12
                })
            })
            .collect();
        assert_eq!(brute, z);
    }

    #[test]
    fn budget_exhaustion_is_not_an_error() {
        let g = close(&[cycle(7)], 4).unwrap();
        assert!(!g.complete);
        assert_eq!(g.len(), 4);
        assert_eq!(g.centre(), Err(Error::IncompleteClosure));
        assert_eq!(g.quotient_order_mod_centre(), Err(Error::IncompleteClosure));
    }

    #[test]
    fn refuses_irrational_structured_generators() {
        let g = UMatrix::Diagonal(vec![UnitPoint::approx(0.1234, 0.0), UnitPoint::one()]);
        assert!(matches!(close(&[g], 10), Err(Error::ClosureRefused(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let e = close(&[cycle(3), cycle(2)], 10).unwrap_err();
        assert_eq!(e, Error::DimensionMismatch { left: 3, right: 2 });
    }

    #[test]
    fn dense_generators_use_rounded_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_unitary(2, &mut rng);
        let gens: Vec<UMatrix> = q8()
            .iter()
            .map(|g| UMatrix::dense(&p * g.to_dense() * p.adjoint(), UNITARITY_TOLERANCE).unwrap())
            .collect();
        let g = close(&gens, 100).unwrap();
        assert!(!g.is_exact());
        assert_eq!(g.len(), 8);
        assert_eq!(g.centre().unwrap().len(), 2);
    }

    #[test]
    fn closure_axioms_and_idempotence() {
        let mut g = close_with(
            &q8(),
            &ClosureOptions {
                cayley: true,
                ..ClosureOptions::default()
            },
        )
        .unwrap();
        assert!(g.has_inverses());
        assert_eq!(g.index_of(&UMatrix::identity(2)), Some(0));
        let again = close(&g.elements, 1000).unwrap();
        assert_eq!(again.len(), g.len());
        g.build_cayley().unwrap();
        let t = g.cayley.clone().unwrap();
        let n = g.len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, b, c) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
            let ab_c = t[t[a * n + b] as usize * n + c];
            let a_bc = t[a * n + t[b * n + c] as usize];
            assert_eq!(ab_c, a_bc);
        }
    }

    #[test]
    fn doc_roundtrip_rebuilds() {
        let g = close_with(
            &q8(),
            &ClosureOptions {
                cayley: true,
                ..ClosureOptions::default()
            },
        )
        .unwrap();
        let doc = g.to_doc();
        let s = serde_json::to_string(&doc).unwrap();
        let back: ClosureDoc = serde_json::from_str(&s).unwrap();
        assert_eq!(back, doc);
        let g2 = back.rebuild(&ClosureOptions::default()).unwrap();
        assert_eq!(g2.len(), 8);
        assert_eq!(g2.cayley, g.cayley);

        let mut wrong = doc.clone();
        wrong.element_count = Some(9);
        assert!(wrong.rebuild(&ClosureOptions::default()).is_err());
    }

    #[test]
    fn irreducibility() {
        assert!(!is_irreducible(&[UMatrix::identity(3)], 3));
        assert!(is_irreducible(&q8(), 2));
        // heads: C together with the diagonal 9th roots, p = 3
        let mut gens = vec![cycle(3)];
        for j in 0..3 {
            let mut d = vec![UnitPoint::one(); 3];
            d[j] = ex(1, 9);
            gens.push(UMatrix::Diagonal(d));
        }
        let g = close(&gens, 10_000).unwrap();
        assert!(g.complete);
        assert_eq!(g.len(), 729 * 3);
        assert!(is_irreducible(&g.elements, 3));
        assert_eq!(gram_rank(&g.elements.iter().take(200).map(UMatrix::to_dense).collect::<Vec<_>>()), 9);
        // a diagonal group is reducible
        assert!(!is_irreducible(&gens[1..], 3));
    }
}
