//! Clebsch–Gordan coefficients, Wigner 6j symbols and dipole matrix elements of a
//! hyperfine-coupled alkali atom. Condon–Shortley phases throughout.
//!
//! Values are evaluated exactly with rational arithmetic (the squares of CG and 6j
//! symbols are rational) and memoized by their 2j-tuples.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::{OnceLock, RwLock};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-integer stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);
    pub const HALF: HalfInt = HalfInt(1);
    pub const ONE: HalfInt = HalfInt(2);

    pub const fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn int(n: i32) -> Self {
        HalfInt(2 * n)
    }

    pub const fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn abs(self) -> Self {
        HalfInt(self.0.abs())
    }

    /// Multiplicity 2j+1.
    pub fn multiplicity(self) -> usize {
        (self.0 + 1).max(0) as usize
    }

    /// Projections −j, −j+1, …, j.
    pub fn projections(self) -> impl Iterator<Item = HalfInt> + Clone {
        let t = self.0;
        (0..(t + 1).max(0)).map(move |k| HalfInt(-t + 2 * k))
    }

    /// Checks that m is an allowed projection of j.
    pub fn admits(self, m: HalfInt) -> bool {
        self.0 >= 0 && m.0.abs() <= self.0 && (self.0 - m.0) % 2 == 0
    }

    /// Parses "3/2", "2", "-1/2".
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::QuantumNumber(format!("cannot parse half-integer '{s}'"));
        match s.split_once('/') {
            Some((n, "2")) => n.trim().parse::<i32>().map(HalfInt).map_err(|_| bad()),
            Some(_) => Err(bad()),
            None => s.trim().parse::<i32>().map(HalfInt::int).map_err(|_| bad()),
        }
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Add for HalfInt {
    type Output = HalfInt;
    fn add(self, o: HalfInt) -> HalfInt {
        HalfInt(self.0 + o.0)
    }
}

impl Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, o: HalfInt) -> HalfInt {
        HalfInt(self.0 - o.0)
    }
}

impl Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

/// Angular momenta of the D-line dipole reduction: excited J, ground S, nuclear I.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedDipoleContext {
    pub j: HalfInt,
    pub s: HalfInt,
    pub i: HalfInt,
    /// Decay-rate scale γ in rad/s.
    pub gamma: f64,
}

impl ReducedDipoleContext {
    pub fn rb85_d2() -> Self {
        ReducedDipoleContext {
            j: HalfInt::from_twice(3),
            s: HalfInt::HALF,
            i: HalfInt::from_twice(5),
            gamma: crate::units::gamma_rad_s(crate::units::RB85_GAMMA_HZ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s != HalfInt::HALF {
            return Err(Error::QuantumNumber(format!("ground momentum S must be 1/2, got {}", self.s)));
        }
        if self.j != HalfInt::HALF && self.j != HalfInt::from_twice(3) {
            return Err(Error::QuantumNumber(format!("J must be 1/2 or 3/2, got {}", self.j)));
        }
        if self.i.twice() < 0 || !(self.gamma > 0.0) {
            return Err(Error::QuantumNumber("nuclear spin must be nonnegative and gamma positive".into()));
        }
        Ok(())
    }

    /// Excited hyperfine levels F' ∈ |J−I| … J+I.
    pub fn excited_levels(&self) -> Vec<HalfInt> {
        coupled_range(self.j, self.i)
    }

    /// Ground hyperfine levels F ∈ |S−I| … S+I.
    pub fn ground_levels(&self) -> Vec<HalfInt> {
        coupled_range(self.s, self.i)
    }
}

pub fn coupled_range(a: HalfInt, b: HalfInt) -> Vec<HalfInt> {
    let lo = (a.twice() - b.twice()).abs();
    let hi = a.twice() + b.twice();
    (lo..=hi).step_by(2).map(HalfInt::from_twice).collect()
}

fn triangle(a: i32, b: i32, c: i32) -> bool {
    a >= 0 && b >= 0 && c >= 0 && c <= a + b && c >= (a - b).abs() && (a + b + c) % 2 == 0
}

fn factorial(n: i64) -> BigInt {
    debug_assert!(n >= 0);
    (2..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn fact_ratio(num: &[i64], den: &[i64]) -> BigRational {
    let n = num.iter().fold(BigInt::one(), |a, &k| a * factorial(k));
    let d = den.iter().fold(BigInt::one(), |a, &k| a * factorial(k));
    BigRational::new(n, d)
}

/// sign(s) · sqrt(s² · p), evaluated in floating point at the end.
fn signed_sqrt(sum: &BigRational, square: &BigRational) -> f64 {
    if sum.is_zero() {
        return 0.0;
    }
    let v = (sum * sum * square).to_f64().unwrap_or(f64::NAN).sqrt();
    if sum.is_negative() {
        -v
    } else {
        v
    }
}

type Cache = RwLock<HashMap<[i32; 6], f64>>;

fn cached(cell: &'static OnceLock<Cache>, key: [i32; 6], f: impl FnOnce() -> f64) -> f64 {
    let cache = cell.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(v) = cache.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return *v;
    }
    let v = f();
    cache.write().unwrap_or_else(|e| e.into_inner()).insert(key, v);
    v
}

static CG_CACHE: OnceLock<Cache> = OnceLock::new();
static SIXJ_CACHE: OnceLock<Cache> = OnceLock::new();

/// ⟨j1 m1; j2 m2 | J M⟩.
pub fn clebsch_gordan(j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j: HalfInt, m: HalfInt) -> f64 {
    let (a, am, b, bm, c, cm) = (j1.0, m1.0, j2.0, m2.0, j.0, m.0);
    if !(j1.admits(m1) && j2.admits(m2) && j.admits(m)) || am + bm != cm || !triangle(a, b, c) {
        return 0.0;
    }
    cached(&CG_CACHE, [a, am, b, bm, c, cm], || cg_exact(a, am, b, bm, c, cm))
}

fn cg_exact(a: i32, am: i32, b: i32, bm: i32, c: i32, cm: i32) -> f64 {
    let h = |x: i32| -> i64 {
        debug_assert!(x % 2 == 0);
        (x / 2) as i64
    };
    let square = BigRational::from_integer(BigInt::from(c + 1))
        * fact_ratio(
            &[
                h(a + b - c),
                h(a - b + c),
                h(-a + b + c),
                h(a + am),
                h(a - am),
                h(b + bm),
                h(b - bm),
                h(c + cm),
                h(c - cm),
            ],
            &[h(a + b + c + 2)],
        );
    let mut sum = BigRational::zero();
    for k in 0..=h(a + b - c) {
        let den = [k, h(a + b - c) - k, h(a - am) - k, h(b + bm) - k, h(c - b + am) + k, h(c - a - bm) + k];
        if den.iter().any(|&x| x < 0) {
            continue;
        }
        let term = fact_ratio(&[], &den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    signed_sqrt(&sum, &square)
}

/// Wigner 6j symbol {j1 j2 j3; j4 j5 j6}.
pub fn wigner_6j(j1: HalfInt, j2: HalfInt, j3: HalfInt, j4: HalfInt, j5: HalfInt, j6: HalfInt) -> f64 {
    let t = [j1.0, j2.0, j3.0, j4.0, j5.0, j6.0];
    if !(triangle(t[0], t[1], t[2]) && triangle(t[0], t[4], t[5]) && triangle(t[3], t[1], t[5]) && triangle(t[3], t[4], t[2])) {
        return 0.0;
    }
    cached(&SIXJ_CACHE, t, || sixj_exact(t))
}

fn delta_sq(a: i32, b: i32, c: i32) -> BigRational {
    let h = |x: i32| (x / 2) as i64;
    fact_ratio(&[h(a + b - c), h(a - b + c), h(-a + b + c)], &[h(a + b + c + 2)])
}

fn sixj_exact(t: [i32; 6]) -> f64 {
    let h = |x: i32| (x / 2) as i64;
    let [j1, j2, j3, j4, j5, j6] = t;
    let square = delta_sq(j1, j2, j3) * delta_sq(j1, j5, j6) * delta_sq(j4, j2, j6) * delta_sq(j4, j5, j3);
    let a = [h(j1 + j2 + j3), h(j1 + j5 + j6), h(j4 + j2 + j6), h(j4 + j5 + j3)];
    let b = [h(j1 + j2 + j4 + j5), h(j2 + j3 + j5 + j6), h(j3 + j1 + j6 + j4)];
    let lo = *a.iter().max().unwrap();
    let hi = *b.iter().min().unwrap();
    let mut sum = BigRational::zero();
    for k in lo..=hi {
        let term = fact_ratio(&[k + 1], &[k - a[0], k - a[1], k - a[2], k - a[3], b[0] - k, b[1] - k, b[2] - k]);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    signed_sqrt(&sum, &square)
}

/// ⟨F‖d‖F0⟩ in units of ⟨J‖d‖S⟩.
pub fn reduced_dipole(f: HalfInt, f0: HalfInt, ctx: &ReducedDipoleContext) -> f64 {
    let e = f0.0 + ctx.j.0 + ctx.i.0 - 2;
    if e % 2 != 0 {
        return 0.0;
    }
    let phase = if (e / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let sixj = wigner_6j(ctx.s, ctx.i, f0, f, HalfInt::ONE, ctx.j);
    phase * (((f.0 + 1) * (f0.0 + 1)) as f64).sqrt() * sixj
}

/// ⟨F M| d_q |F0 M0⟩ in units of ⟨J‖d‖S⟩, q ∈ {−1, 0, 1}.
pub fn dipole_element(f: HalfInt, m: HalfInt, q: i32, f0: HalfInt, m0: HalfInt, ctx: &ReducedDipoleContext) -> f64 {
    if !(-1..=1).contains(&q) {
        return 0.0;
    }
    let cg = clebsch_gordan(f0, m0, HalfInt::ONE, HalfInt::int(q), f, m);
    if cg == 0.0 {
        return 0.0;
    }
    reduced_dipole(f, f0, ctx) / ((f.0 + 1) as f64).sqrt() * cg
}
