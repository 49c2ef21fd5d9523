//! Clebsch–Gordan coefficients and the write/read transition amplitudes that
//! set the mixing angle of the atom–photon state.
//!
//! Coefficients follow the Condon–Shortley phase convention. They are
//! evaluated with the Racah closed form in exact rational arithmetic; only the
//! final square root is taken in floating point.

mod half_int;

use std::collections::BTreeMap;
use std::fmt;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

pub use half_int::HalfInt;

use crate::error::{Error, Result};

/// A Clebsch–Gordan coefficient held exactly as `sign · sqrt(square)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactCg {
    pub sign: i8,
    pub square: BigRational,
}

impl ExactCg {
    fn zero() -> Self {
        ExactCg {
            sign: 0,
            square: BigRational::zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn to_f64(&self) -> f64 {
        f64::from(self.sign) * ratio_to_f64(&self.square).sqrt()
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn factorial(n: i32) -> BigInt {
    debug_assert!(n >= 0);
    (2..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

fn triangle(j1: HalfInt, j2: HalfInt, j3: HalfInt) -> bool {
    let (a, b, c) = (j1.twice(), j2.twice(), j3.twice());
    a >= 0 && b >= 0 && c >= 0 && c >= (a - b).abs() && c <= a + b && (a + b + c) % 2 == 0
}

/// `⟨j1 m1; j2 m2 | J M⟩` in exact form. Invalid couplings give an exact zero.
pub fn cg_exact(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> ExactCg {
    if !(j1.admits(m1) && j2.admits(m2) && j.admits(m)) || m1 + m2 != m || !triangle(j1, j2, j) {
        return ExactCg::zero();
    }
    // All combinations below are integers once the selection rules hold.
    let h = |x: HalfInt| x.twice() / 2;
    let (a, b, c) = (j1 + j2 - j, j1 - j2 + j, -j1 + j2 + j);
    let prefactor_num = BigInt::from(j.twice() + 1)
        * factorial(h(a))
        * factorial(h(b))
        * factorial(h(c))
        * factorial(h(j1 + m1))
        * factorial(h(j1 - m1))
        * factorial(h(j2 + m2))
        * factorial(h(j2 - m2))
        * factorial(h(j + m))
        * factorial(h(j - m));
    let prefactor = BigRational::new(prefactor_num, factorial(h(j1 + j2 + j) + 1));

    let d1 = h(a);
    let d2 = h(j1 - m1);
    let d3 = h(j2 + m2);
    let d4 = h(j - j2 + m1);
    let d5 = h(j - j1 - m2);
    let k_min = 0.max(-d4).max(-d5);
    let k_max = d1.min(d2).min(d3);
    let mut sum = BigRational::zero();
    for k in k_min..=k_max {
        let den = factorial(k)
            * factorial(d1 - k)
            * factorial(d2 - k)
            * factorial(d3 - k)
            * factorial(d4 + k)
            * factorial(d5 + k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return ExactCg::zero();
    }
    let sign = if sum.is_positive() { 1 } else { -1 };
    ExactCg {
        sign,
        square: prefactor * &sum * &sum,
    }
}

/// `⟨j1 m1; j2 m2 | J M⟩` (Condon–Shortley). Returns exactly `0.0` for
/// forbidden couplings.
pub fn cg(j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j: HalfInt, m: HalfInt) -> f64 {
    cg_exact(j1, m1, j2, m2, j, m).to_f64()
}

/// Hyperfine levels `|a⟩` (initial ground), `|b⟩` (final ground) and `|c⟩`
/// (excited) connected by dipole transitions `a → c` (write absorption) and
/// `c → b` (Raman emission).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelScheme {
    f_a: HalfInt,
    f_b: HalfInt,
    f_c: HalfInt,
}

impl LevelScheme {
    pub fn new(f_a: HalfInt, f_b: HalfInt, f_c: HalfInt) -> Result<Self> {
        for (name, f) in [("F_a", f_a), ("F_b", f_b), ("F_c", f_c)] {
            if f.twice() < 0 {
                return Err(Error::InvalidScheme(format!("{name} = {f} is negative")));
            }
        }
        if !triangle(f_a, HalfInt::ONE, f_c) {
            return Err(Error::InvalidScheme(format!(
                "a -> c transition violates the dipole triangle rule: F_a = {f_a}, F_c = {f_c}"
            )));
        }
        if !triangle(f_c, HalfInt::ONE, f_b) {
            return Err(Error::InvalidScheme(format!(
                "c -> b transition violates the dipole triangle rule: F_c = {f_c}, F_b = {f_b}"
            )));
        }
        Ok(LevelScheme { f_a, f_b, f_c })
    }

    /// 85Rb D1 line: `F_a = 3`, `F_b = 2`, `F_c = 3`.
    pub fn rubidium85_d1() -> Self {
        LevelScheme {
            f_a: HalfInt::from_int(3),
            f_b: HalfInt::from_int(2),
            f_c: HalfInt::from_int(3),
        }
    }

    pub fn f_a(&self) -> HalfInt {
        self.f_a
    }

    pub fn f_b(&self) -> HalfInt {
        self.f_b
    }

    pub fn f_c(&self) -> HalfInt {
        self.f_c
    }
}

impl fmt::Display for LevelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_a={} F_b={} F_c={}", self.f_a, self.f_b, self.f_c)
    }
}

/// Emitted-photon helicity in the `c → b` step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Helicity {
    Minus,
    Plus,
}

impl Helicity {
    pub const BOTH: [Helicity; 2] = [Helicity::Minus, Helicity::Plus];

    pub fn value(self) -> i32 {
        match self {
            Helicity::Minus => -1,
            Helicity::Plus => 1,
        }
    }

    pub fn from_value(alpha: i32) -> Result<Self> {
        match alpha {
            -1 => Ok(Helicity::Minus),
            1 => Ok(Helicity::Plus),
            _ => Err(Error::invalid(format!(
                "helicity must be -1 or +1, got {alpha}"
            ))),
        }
    }

    pub(crate) fn as_half_int(self) -> HalfInt {
        HalfInt::from_int(self.value())
    }
}

/// The transition amplitudes
/// `X_m(α) = ⟨F_a m; 1 1 | F_c m+1⟩ ⟨F_c m+1; 1 α | F_b m+1+α⟩`
/// for every `m` of level `a` and both helicities.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingTable {
    scheme: LevelScheme,
    entries: BTreeMap<(HalfInt, Helicity), ExactCg>,
}

impl BranchingTable {
    pub fn scheme(&self) -> &LevelScheme {
        &self.scheme
    }

    /// `X_m(α)`; zero for projections outside level `a`.
    pub fn amplitude(&self, m: HalfInt, alpha: Helicity) -> f64 {
        self.entries.get(&(m, alpha)).map_or(0.0, ExactCg::to_f64)
    }

    pub fn exact(&self, m: HalfInt, alpha: Helicity) -> Option<&ExactCg> {
        self.entries.get(&(m, alpha))
    }

    /// Iterates `(m, α, X_m(α))` in ascending `m`, `α = -1` first.
    pub fn iter(&self) -> impl Iterator<Item = (HalfInt, Helicity, f64)> + '_ {
        self.entries.iter().map(|(&(m, a), x)| (m, a, x.to_f64()))
    }

    /// `Σ_m X_m(α)²`, exact.
    pub fn sum_of_squares(&self, alpha: Helicity) -> BigRational {
        self.entries
            .iter()
            .filter(|((_, a), _)| *a == alpha)
            .fold(BigRational::zero(), |acc, (_, x)| acc + &x.square)
    }

    /// `cos²η = Σ_m X_m²(-1) / Σ_m Σ_α X_m²(α)`, exact.
    pub fn cos2_eta(&self) -> Result<BigRational> {
        let minus = self.sum_of_squares(Helicity::Minus);
        let total = &minus + self.sum_of_squares(Helicity::Plus);
        if total.is_zero() {
            return Err(Error::Numerical(format!(
                "no allowed decay channels for {}: mixing angle undefined",
                self.scheme
            )));
        }
        Ok(minus / total)
    }
}

pub fn branching_table(scheme: &LevelScheme) -> BranchingTable {
    let one = HalfInt::ONE;
    let mut entries = BTreeMap::new();
    for m in scheme.f_a.projections() {
        let m_c = m + one;
        let write = cg_exact(scheme.f_a, m, one, one, scheme.f_c, m_c);
        for alpha in Helicity::BOTH {
            let a = alpha.as_half_int();
            let x = if write.is_zero() {
                ExactCg::zero()
            } else {
                let emit = cg_exact(scheme.f_c, m_c, one, a, scheme.f_b, m_c + a);
                ExactCg {
                    sign: write.sign * emit.sign,
                    square: &write.square * &emit.square,
                }
            };
            entries.insert((m, alpha), x);
        }
    }
    BranchingTable {
        scheme: *scheme,
        entries,
    }
}

/// The mixing angle `η ∈ [0, π/2]` with `cos²η` from [`BranchingTable::cos2_eta`].
pub fn mixing_angle(scheme: &LevelScheme) -> Result<f64> {
    let cos2 = ratio_to_f64(&branching_table(scheme).cos2_eta()?);
    Ok(cos2.clamp(0.0, 1.0).sqrt().acos())
}
