//! Arithmetic on the complex unit circle.
//!
//! Points are stored as fractions of a full turn. An exact point `k/N` stands
//! for `e^{2πik/N}`; an approximate point carries a floating angle in `[0, 1)`
//! together with an absolute uncertainty, also measured in turns.
//!
//! Multiplying points adds angles mod 1, and the scaled argument distance
//! `(1/2π)|arg(z/w)|` is the shorter arc between two points measured in turns.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Default absolute tolerance, in turns, for comparisons that involve
/// approximate points.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Reduced rational angle `num/den` of a full turn with `0 <= num < den`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalAngle(BigRational);

impl RationalAngle {
    /// Builds `num/den` reduced mod 1. Panics if `den == 0`.
    pub fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Self {
        let den = den.into();
        assert!(!den.is_zero(), "rational angle with zero denominator");
        Self::from_ratio(BigRational::new(num.into(), den))
    }

    /// Reduces an arbitrary rational into `[0, 1)`.
    pub fn from_ratio(r: BigRational) -> Self {
        let floor = r.floor();
        RationalAngle(r - floor)
    }

    pub fn zero() -> Self {
        RationalAngle(BigRational::zero())
    }

    /// The `j`-th power of the primitive `q`-th root `e^{2πi/q}`.
    pub fn root_of_unity(j: i64, q: u64) -> Self {
        Self::new(j, q)
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Denominator as `u64`, if it fits.
    pub fn denom_u64(&self) -> Option<u64> {
        self.denom().to_u64()
    }

    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.0)
    }

    /// Angle addition mod 1, i.e. the product of the represented points.
    pub fn add(&self, other: &Self) -> Self {
        Self::from_ratio(&self.0 + &other.0)
    }

    /// Angle negation mod 1, i.e. the inverse (conjugate) point.
    pub fn neg(&self) -> Self {
        Self::from_ratio(-&self.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_ratio(&self.0 - &other.0)
    }

    /// Multiplies the angle by an integer, i.e. raises the point to a power.
    pub fn scale(&self, m: i64) -> Self {
        Self::from_ratio(&self.0 * BigRational::from_integer(BigInt::from(m)))
    }

    /// Scaled argument distance to `other`, in `[0, 1/2]`.
    pub fn distance(&self, other: &Self) -> BigRational {
        let d = self.sub(other).0;
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        if d > half {
            BigRational::one() - d
        } else {
            d
        }
    }
}

impl fmt::Debug for RationalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl fmt::Display for RationalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

/// Converts a rational to the nearest `f64` without overflowing on huge parts.
pub fn ratio_to_f64(r: &BigRational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Shift both parts down until they fit.
            let bits = r.denom().bits().max(r.numer().bits());
            let shift = bits.saturating_sub(900);
            let n = (r.numer() >> shift).to_f64().unwrap_or(0.0);
            let d = (r.denom() >> shift).to_f64().unwrap_or(1.0);
            n / d
        }
    }
}

/// Formats a rational as `"num/den"`.
pub fn format_ratio(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `"num/den"` or a bare integer into a rational.
pub fn parse_ratio(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(BigRational::new(n, d))
            }
        }
        None => s.parse::<BigInt>().ok().map(BigRational::from_integer),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IntRepr {
    Small(i64),
    Text(String),
}

impl IntRepr {
    fn from_big(b: &BigInt) -> Self {
        match b.to_i64() {
            Some(v) => IntRepr::Small(v),
            None => IntRepr::Text(b.to_string()),
        }
    }

    fn into_big(self) -> Result<BigInt, String> {
        match self {
            IntRepr::Small(v) => Ok(BigInt::from(v)),
            IntRepr::Text(s) => s.parse().map_err(|_| format!("bad integer {s:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AngleDoc {
    num: IntRepr,
    den: IntRepr,
}

impl Serialize for RationalAngle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AngleDoc {
            num: IntRepr::from_big(self.numer()),
            den: IntRepr::from_big(self.denom()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RationalAngle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = AngleDoc::deserialize(d)?;
        let num = doc.num.into_big().map_err(serde::de::Error::custom)?;
        let den = doc.den.into_big().map_err(serde::de::Error::custom)?;
        if den.sign() != Sign::Plus {
            return Err(serde::de::Error::custom("angle denominator must be positive"));
        }
        Ok(RationalAngle::new(num, den))
    }
}

/// A point on the unit circle.
#[derive(Clone, Debug, PartialEq)]
pub enum UnitPoint {
    Exact(RationalAngle),
    /// `turn` in `[0, 1)`; `err` is an absolute bound on the angle error.
    Approx { turn: f64, err: f64 },
}

/// Scaled argument distance, exact when both endpoints were exact.
#[derive(Clone, Debug, PartialEq)]
pub enum Distance {
    Exact(BigRational),
    Approx { value: f64, err: f64 },
}

impl Distance {
    pub fn zero() -> Self {
        Distance::Exact(BigRational::zero())
    }

    pub fn value(&self) -> f64 {
        match self {
            Distance::Exact(r) => ratio_to_f64(r),
            Distance::Approx { value, .. } => *value,
        }
    }

    pub fn err(&self) -> f64 {
        match self {
            Distance::Exact(_) => 0.0,
            Distance::Approx { err, .. } => *err,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Distance::Exact(_))
    }

    pub fn exact(&self) -> Option<&BigRational> {
        match self {
            Distance::Exact(r) => Some(r),
            Distance::Approx { .. } => None,
        }
    }

    /// Total order used for max/min reductions: exact pairs compare exactly,
    /// anything else compares by the floating value.
    pub fn cmp_value(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Distance::Exact(a), Distance::Exact(b)) => a.cmp(b),
            _ => self.value().total_cmp(&other.value()),
        }
    }
}

fn wrap_turn(x: f64) -> f64 {
    let t = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs.
    if t >= 1.0 {
        0.0
    } else {
        t
    }
}

impl UnitPoint {
    pub fn one() -> Self {
        UnitPoint::Exact(RationalAngle::zero())
    }

    pub fn exact(num: i64, den: u64) -> Self {
        UnitPoint::Exact(RationalAngle::new(num, den))
    }

    /// Approximate point from an arbitrary real angle in turns.
    pub fn approx(turn: f64, err: f64) -> Self {
        UnitPoint::Approx {
            turn: wrap_turn(turn),
            err: err.max(0.0),
        }
    }

    /// Approximate point at the argument of a nonzero complex number.
    pub fn from_complex(re: f64, im: f64, err: f64) -> Self {
        let turn = im.atan2(re) / std::f64::consts::TAU;
        Self::approx(turn, err)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, UnitPoint::Exact(_))
    }

    pub fn as_exact(&self) -> Option<&RationalAngle> {
        match self {
            UnitPoint::Exact(a) => Some(a),
            UnitPoint::Approx { .. } => None,
        }
    }

    /// Angle in turns, in `[0, 1)`.
    pub fn turn(&self) -> f64 {
        match self {
            UnitPoint::Exact(a) => a.to_f64(),
            UnitPoint::Approx { turn, .. } => *turn,
        }
    }

    /// Uncertainty bound in turns (0 for exact points).
    pub fn err(&self) -> f64 {
        match self {
            UnitPoint::Exact(_) => 0.0,
            UnitPoint::Approx { err, .. } => *err,
        }
    }

    /// `(re, im)` of the represented complex number.
    pub fn to_complex(&self) -> (f64, f64) {
        let t = std::f64::consts::TAU * self.turn();
        (t.cos(), t.sin())
    }

    pub fn mul(&self, other: &Self) -> Self {
        match (self, other) {
            (UnitPoint::Exact(a), UnitPoint::Exact(b)) => UnitPoint::Exact(a.add(b)),
            _ => UnitPoint::approx(self.turn() + other.turn(), self.err() + other.err()),
        }
    }

    pub fn inv(&self) -> Self {
        match self {
            UnitPoint::Exact(a) => UnitPoint::Exact(a.neg()),
            UnitPoint::Approx { turn, err } => UnitPoint::approx(-turn, *err),
        }
    }

    pub fn pow(&self, m: i64) -> Self {
        match self {
            UnitPoint::Exact(a) => UnitPoint::Exact(a.scale(m)),
            UnitPoint::Approx { turn, err } => {
                UnitPoint::approx(turn * m as f64, err * m.unsigned_abs() as f64)
            }
        }
    }

    /// Equality: exact for exact pairs, within `tol` plus the stated
    /// uncertainties otherwise.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        match arg_distance(self, other) {
            Distance::Exact(d) => d.is_zero(),
            Distance::Approx { value, err } => value <= tol + err,
        }
    }
}

impl fmt::Display for UnitPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitPoint::Exact(a) => write!(f, "{a}"),
            UnitPoint::Approx { turn, .. } => write!(f, "~{turn}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PointDoc {
    Exact { num: IntRepr, den: IntRepr },
    Approx { angle: String, err: String },
}

impl Serialize for UnitPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            UnitPoint::Exact(a) => a.serialize(s),
            UnitPoint::Approx { turn, err } => PointDoc::Approx {
                angle: turn.to_string(),
                err: err.to_string(),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for UnitPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match PointDoc::deserialize(d)? {
            PointDoc::Exact { num, den } => {
                let num = num.into_big().map_err(serde::de::Error::custom)?;
                let den = den.into_big().map_err(serde::de::Error::custom)?;
                if den.sign() != Sign::Plus {
                    return Err(serde::de::Error::custom("angle denominator must be positive"));
                }
                Ok(UnitPoint::Exact(RationalAngle::new(num, den)))
            }
            PointDoc::Approx { angle, err } => {
                let turn: f64 = angle.parse().map_err(serde::de::Error::custom)?;
                let err: f64 = err.parse().map_err(serde::de::Error::custom)?;
                if !(0.0..1.0).contains(&turn) || err.is_nan() || err < 0.0 {
                    return Err(serde::de::Error::custom("approximate angle out of range"));
                }
                Ok(UnitPoint::Approx { turn, err })
            }
        }
    }
}

/// Scaled argument distance `(1/2π)|arg(z/w)|`, the shorter arc in turns.
pub fn arg_distance(z: &UnitPoint, w: &UnitPoint) -> Distance {
    match (z, w) {
        (UnitPoint::Exact(a), UnitPoint::Exact(b)) => Distance::Exact(a.distance(b)),
        _ => {
            Distance::Approx {
                value: turn_distance(z.turn(), w.turn()),
                err: z.err() + w.err(),
            }
        }
    }
}

/// Scaled distance between two raw turn values.
pub fn turn_distance(a: f64, b: f64) -> f64 {
    wrap_turn(a - b).min(wrap_turn(b - a))
}

/// Euclidean distance `|z - w|` between the represented complex numbers.
pub fn chord_distance(z: &UnitPoint, w: &UnitPoint) -> f64 {
    let d = match arg_distance(z, w) {
        Distance::Exact(r) => ratio_to_f64(&r),
        Distance::Approx { value, .. } => value,
    };
    2.0 * (std::f64::consts::PI * d).sin()
}

pub fn mul(z: &UnitPoint, w: &UnitPoint) -> UnitPoint {
    z.mul(w)
}

/// The `q`-th root of unity `j/q` closest to `z`; ties go to the smaller `j`.
pub fn nearest_root_of_unity(z: &UnitPoint, q: u64) -> RationalAngle {
    assert!(q >= 1, "root order must be positive");
    match z {
        UnitPoint::Exact(a) => {
            // j = round(a*q) with halves rounded down, taken mod q.
            let scaled = a.as_ratio() * BigRational::from_integer(BigInt::from(q));
            let floor = scaled.floor();
            let frac = &scaled - &floor;
            let half = BigRational::new(BigInt::one(), BigInt::from(2));
            let mut j = floor.to_integer();
            if frac > half {
                j += 1;
            }
            // j == q wraps to 0, the smaller exponent in the tie 0 vs q.
            let j = j.mod_floor(&BigInt::from(q));
            RationalAngle::new(j, q)
        }
        UnitPoint::Approx { turn, .. } => {
            let scaled = turn * q as f64;
            let floor = scaled.floor();
            let mut j = floor as i128;
            if scaled - floor > 0.5 {
                j += 1;
            }
            let j = j.rem_euclid(q as i128) as i64;
            RationalAngle::new(j, q)
        }
    }
}

/// `true` when the rational is a nonnegative value strictly below 1.
pub fn in_unit_interval(r: &BigRational) -> bool {
    !r.is_negative() && r < &BigRational::one()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn normalization() {
        let a = RationalAngle::new(-1, 4);
        assert_eq!(a, RationalAngle::new(3, 4));
        assert_eq!(RationalAngle::new(6, 3), RationalAngle::zero());
        assert_eq!(RationalAngle::zero().denom(), &BigInt::from(1));
        assert_eq!(RationalAngle::new(4, 6).numer(), &BigInt::from(2));
    }

    #[test]
    fn consecutive_roots_are_one_over_n_apart() {
        for n in [2u64, 3, 7, 60] {
            let d = arg_distance(&UnitPoint::exact(1, n), &UnitPoint::one());
            assert_eq!(d, Distance::Exact(q(1, n as i64)));
        }
    }

    #[test]
    fn identity_distance_is_zero() {
        let z = UnitPoint::exact(5, 17);
        assert_eq!(arg_distance(&z, &z), Distance::zero());
        let w = UnitPoint::approx(0.3, 0.0);
        assert_eq!(arg_distance(&w, &w).value(), 0.0);
    }

    #[test]
    fn i_to_minus_one() {
        let i = UnitPoint::exact(1, 4);
        let m1 = UnitPoint::exact(1, 2);
        assert_eq!(arg_distance(&i, &m1), Distance::Exact(q(1, 4)));
        // atan2 oracle on i / (-1) = -i
        let oracle = (-1.0f64).atan2(0.0).abs() / std::f64::consts::TAU;
        assert!((oracle - 0.25).abs() < 1e-15);
    }

    #[test]
    fn multiplication() {
        let theta = UnitPoint::exact(1, 3);
        assert_eq!(theta.mul(&theta), UnitPoint::exact(2, 3));
        assert_eq!(UnitPoint::exact(1, 4).mul(&UnitPoint::exact(3, 4)), UnitPoint::one());
        // ξ^{k+a p} ξ^{l+b p} with p = 5, ξ = e^{2πi/25}
        let (p, k, l, a, b) = (5i64, 2i64, 4i64, 3i64, 4i64);
        let lhs = UnitPoint::exact(k + a * p, 25).mul(&UnitPoint::exact(l + b * p, 25));
        assert_eq!(lhs, UnitPoint::exact((k + l) + (a + b) * p, 25));
        // exact x exact keeps lcm denominators
        let m = UnitPoint::exact(1, 4).mul(&UnitPoint::exact(1, 6));
        assert_eq!(m, UnitPoint::exact(5, 12));
        // approx errors add
        let m = UnitPoint::approx(0.9, 1e-10).mul(&UnitPoint::approx(0.2, 2e-10));
        assert!((m.turn() - 0.1).abs() < 1e-12);
        assert!((m.err() - 3e-10).abs() < 1e-20);
    }

    #[test]
    fn chord_examples() {
        let one = UnitPoint::one();
        assert!((chord_distance(&one, &UnitPoint::exact(1, 2)) - 2.0).abs() < 1e-15);
        for x in [0.0, 0.1, 0.25, 0.37, 0.5] {
            let z = UnitPoint::approx(x, 0.0);
            let (re, im) = z.to_complex();
            let direct = ((re - 1.0).powi(2) + im * im).sqrt();
            let formula = 2.0 * (std::f64::consts::PI * x).sin();
            assert!((chord_distance(&one, &z) - formula).abs() < 1e-14);
            assert!((direct - formula).abs() < 1e-14);
        }
        let i = UnitPoint::exact(1, 4);
        let c = chord_distance(&one, &i);
        let a = std::f64::consts::TAU * arg_distance(&one, &i).value();
        assert!((c - 2f64.sqrt()).abs() < 1e-15);
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!(c <= a);
    }

    #[test]
    fn nearest_root_examples() {
        assert_eq!(nearest_root_of_unity(&UnitPoint::exact(1, 3), 3), RationalAngle::new(1, 3));
        assert_eq!(
            nearest_root_of_unity(&UnitPoint::approx(0.49, 0.0), 2),
            RationalAngle::new(1, 2)
        );
        for qq in [2u64, 3, 7, 151] {
            let mid = UnitPoint::exact(1, 2 * qq);
            assert_eq!(nearest_root_of_unity(&mid, qq), RationalAngle::zero());
        }
        // near 1 from below wraps to 0
        assert_eq!(nearest_root_of_unity(&UnitPoint::exact(99, 100), 3), RationalAngle::zero());
        // midpoint 1 - 1/(2q) is a tie between (q-1)/q and q/q = 0; smaller exponent wins
        assert_eq!(nearest_root_of_unity(&UnitPoint::exact(5, 6), 3), RationalAngle::new(2, 3));
    }

    #[test]
    fn approx_point_serde_roundtrip() {
        let z = UnitPoint::approx(0.123_456_789_012_345_68, 3e-12);
        let s = serde_json::to_string(&z).unwrap();
        let back: UnitPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(z, back);
        let e = UnitPoint::exact(3, 7);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"num":3,"den":7}"#);
        assert_eq!(serde_json::from_str::<UnitPoint>(&s).unwrap(), e);
    }

    #[test]
    fn parse_ratio_forms() {
        assert_eq!(parse_ratio("1/6"), Some(q(1, 6)));
        assert_eq!(parse_ratio(" 2 / 4 "), Some(q(1, 2)));
        assert_eq!(parse_ratio("3"), Some(q(3, 1)));
        assert_eq!(parse_ratio("1/0"), None);
        assert_eq!(parse_ratio("x"), None);
    }

    fn arb_exact() -> impl Strategy<Value = UnitPoint> {
        (1u64..200).prop_flat_map(|d| (0..d as i64, Just(d))).prop_map(|(n, d)| UnitPoint::exact(n, d))
    }

    fn arb_point() -> impl Strategy<Value = UnitPoint> {
        prop_oneof![arb_exact(), (0.0f64..1.0).prop_map(|t| UnitPoint::approx(t, 0.0))]
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(z in arb_point(), w in arb_point(), u in arb_point()) {
            let dzw = arg_distance(&z, &w).value();
            prop_assert!((0.0..=0.5).contains(&dzw));
            prop_assert_eq!(dzw, arg_distance(&w, &z).value());
            let dzu = arg_distance(&z, &u).value();
            let duw = arg_distance(&u, &w).value();
            prop_assert!(dzw <= dzu + duw + 1e-12);
        }

        #[test]
        fn chord_arc_sandwich(z in arb_point(), w in arb_point()) {
            let c = chord_distance(&z, &w);
            let a = std::f64::consts::TAU * arg_distance(&z, &w).value();
            prop_assert!(c <= a + 1e-12);
            prop_assert!(a <= std::f64::consts::PI * c + 1e-12);
        }

        #[test]
        fn exact_path_stays_exact(z in arb_exact(), w in arb_exact()) {
            prop_assert!(z.mul(&w).is_exact());
            prop_assert!(arg_distance(&z, &w).is_exact());
            prop_assert!(z.inv().mul(&z) == UnitPoint::one());
        }

        #[test]
        fn nearest_root_within_half_step(z in arb_point(), qq in 1u64..500) {
            let r = nearest_root_of_unity(&z, qq);
            let d = arg_distance(&z, &UnitPoint::Exact(r)).value();
            prop_assert!(d <= 0.5 / qq as f64 + 1e-12);
        }
    }
}
