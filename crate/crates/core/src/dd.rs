//! Double-double scalar: an unevaluated sum `hi + lo` of two `f64`s,
//! giving roughly 106 significant bits.
//!
//! Used as the reference precision for finite-difference gradient checks,
//! where `f64` rounding of an O(1) loss (about 1e-11 after dividing by
//! `2h`) would otherwise swamp gradients near the absolute floor. Only the
//! operations the model uses (arithmetic, `sqrt`, `exp`, `ln`, `tanh`,
//! comparisons) are computed to full precision; the remaining `Float`
//! methods fall back to `f64` on the high part.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, Sub, SubAssign};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    pub const fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Dd::from_f64(hi);
        }
        let (s, e) = quick_two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    fn exp_dd(self) -> Self {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::one();
        }
        // x = k ln2 + r, then exp(r) = exp(r / 2^10)^(2^10).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from_f64(k)).scale_pow2(-10);
        let mut term = Dd::one();
        let mut sum = Dd::one();
        for i in 1..=20 {
            term = term * r / Dd::from_f64(i as f64);
            sum += term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale_pow2(k as i32)
    }

    fn ln_dd(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::from_f64(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        if !self.hi.is_finite() {
            return self;
        }
        // Newton on exp(y) = x.
        let mut y = Dd::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp_dd() - Dd::one();
        }
        y
    }

    fn sqrt_dd(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::from_f64(self.hi.sqrt());
        }
        let x = Dd::from_f64(self.hi.sqrt());
        x + (self - x * x) / (x + x)
    }

    fn tanh_dd(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Dd::from_f64(self.hi.signum());
        }
        // tanh x = m / (m + 2) with m = exp(2x) - 1, summed directly for
        // small arguments to avoid cancellation.
        let two_x = self + self;
        let m = if two_x.hi.abs() < 0.5 {
            let mut term = two_x;
            let mut sum = two_x;
            for i in 2..=30 {
                term = term * two_x / Dd::from_f64(i as f64);
                sum += term;
            }
            sum
        } else {
            two_x.exp_dd() - Dd::one()
        };
        m / (m + Dd::from_f64(2.0))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() {
            return Dd::from_f64(q1);
        }
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd::new(s, e) + Dd::from_f64(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, b: Dd) -> Dd {
        self - b * (self / b).trunc()
    }
}

macro_rules! assign_op {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Dd {
            fn $m(&mut self, b: Dd) {
                *self = *self $op b;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl PartialOrd for Dd {
    fn partial_cmp(&self, b: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&b.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&b.lo),
            o => Some(o),
        }
    }
}

impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}{:+e}", self.hi, self.lo)
    }
}

impl Zero for Dd {
    fn zero() -> Self {
        Dd::from_f64(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd::from_f64(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Dd::from_f64)
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.hi.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.hi.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
}

impl FromPrimitive for Dd {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        Some(Dd::renorm(hi, (n - hi as i64) as f64))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        Some(Dd::renorm(hi, (n as i128 - hi as i128) as f64))
    }
    fn from_f64(x: f64) -> Option<Self> {
        Some(Dd::from_f64(x))
    }
}

impl NumCast for Dd {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        n.to_f64().map(Dd::from_f64)
    }
}

macro_rules! via_f64 {
    ($($m:ident),*) => {
        $(fn $m(self) -> Self { Dd::from_f64(self.hi.$m()) })*
    };
}

impl Float for Dd {
    fn nan() -> Self {
        Dd::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        Dd::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Dd::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Dd::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Dd::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Dd::from_f64(f64::MIN_POSITIVE)
    }
    fn max_value() -> Self {
        Dd::from_f64(f64::MAX)
    }
    fn epsilon() -> Self {
        Dd::from_f64(f64::EPSILON * f64::EPSILON)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan() || self.lo.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let f = self.hi.floor();
        if f == self.hi {
            Dd::renorm(f, self.lo.floor())
        } else {
            Dd::from_f64(f)
        }
    }
    fn ceil(self) -> Self {
        -(-self).floor()
    }
    fn round(self) -> Self {
        (self + Dd::from_f64(0.5)).floor()
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Dd::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Dd::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = if n < 0 { self.recip() } else { self };
        let mut e = n.unsigned_abs();
        let mut acc = Dd::one();
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base *= base;
            e >>= 1;
        }
        acc
    }
    fn powf(self, n: Self) -> Self {
        (n * self.ln_dd()).exp_dd()
    }
    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }
    fn exp(self) -> Self {
        self.exp_dd()
    }
    fn ln(self) -> Self {
        self.ln_dd()
    }
    fn log(self, base: Self) -> Self {
        self.ln_dd() / base.ln_dd()
    }
    fn max(self, b: Self) -> Self {
        if self.is_nan() || b > self {
            b
        } else {
            self
        }
    }
    fn min(self, b: Self) -> Self {
        if self.is_nan() || b < self {
            b
        } else {
            self
        }
    }
    fn abs_sub(self, b: Self) -> Self {
        if self > b {
            self - b
        } else {
            Dd::zero()
        }
    }
    fn hypot(self, b: Self) -> Self {
        (self * self + b * b).sqrt_dd()
    }
    fn atan2(self, b: Self) -> Self {
        Dd::from_f64(self.hi.atan2(b.hi))
    }
    fn sin_cos(self) -> (Self, Self) {
        (Dd::from_f64(self.hi.sin()), Dd::from_f64(self.hi.cos()))
    }
    fn tanh(self) -> Self {
        self.tanh_dd()
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
    via_f64!(exp2, log2, log10, cbrt, sin, cos, tan, asin, acos, atan, exp_m1, ln_1p, sinh, cosh, asinh, acosh, atanh);
}

impl Real for Dd {
    const BYTES: usize = 16;
    const NAME: &'static str = "double-double";

    fn of(x: f64) -> Self {
        Dd::from_f64(x)
    }
    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.hi.to_le_bytes());
        out.extend_from_slice(&self.lo.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        Dd::new(f64::read_le(&bytes[..8]), f64::read_le(&bytes[8..16]))
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        for i in 0..m as isize {
            for j in 0..n as isize {
                let mut acc = Dd::zero();
                for l in 0..k as isize {
                    acc += *a.offset(i * rsa + l * csa) * *b.offset(l * rsb + j * csb);
                }
                let cij = c.offset(i * rsc + j * csc);
                *cij = if beta.is_zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * *cij
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(got: Dd, hi: f64, lo: f64) {
        let err = (got - Dd::new(hi, lo)).hi.abs();
        assert!(err <= 1e-28 * hi.abs().max(1e-300), "{got} vs {hi:e}{lo:+e}: {err:e}");
    }

    // Reference values computed with 200-bit arbitrary precision.
    #[test]
    fn transcendentals_match_high_precision_reference() {
        close(Dd::from_f64(0.5).exp(), 1.6487212707001282, -4.731568479435833e-17);
        close(Dd::from_f64(-3.25).exp(), 0.03877420783172201, 1.1433418851841824e-18);
        close(Dd::from_f64(20.0).exp(), 485165195.4097903, 4.880277289790406e-10);
        close(Dd::from_f64(1e-3).exp(), 1.0010005001667084, -4.290842058948394e-17);
        close(Dd::from_f64(0.75).ln(), -0.2876820724517809, -2.607160616442564e-17);
        close(Dd::from_f64(3.0).ln(), 1.0986122886681098, -9.07129723500153e-17);
        close(Dd::from_f64(1e5).ln(), 11.512925464970229, -1.971996919909995e-16);
        close(Dd::from_f64(0.3).tanh(), 0.2913126124515909, -6.4602656586469586e-18);
        close(Dd::from_f64(-2.0).tanh(), -0.9640275800758169, 1.9413550547557176e-17);
        close(
            Dd::from_f64(2.0).sqrt(),
            std::f64::consts::SQRT_2,
            -9.667293313452913e-17,
        );
        close(Dd::from_f64(0.125).sqrt(), 0.3535533905932738, -2.4168233283632284e-17);
    }

    #[test]
    fn tiny_tanh_is_accurate_in_absolute_terms() {
        let got = Dd::from_f64(1e-4).tanh();
        assert!((got - Dd::new(9.999999966666667e-05, 4.51890806545438e-21)).hi.abs() < 1e-34);
    }

    #[test]
    fn arithmetic_keeps_extra_bits() {
        close(Dd::one() / Dd::from_f64(3.0), 0.3333333333333333, 1.850371707708594e-17);
        let tiny = Dd::from_f64(1e-20);
        let x = (Dd::one() + tiny) - Dd::one();
        assert_eq!(x.hi, 1e-20);
        assert!(Dd::new(1.0, 1e-20) > Dd::one());
        assert_eq!(Dd::from_f64(1.5).powi(3).hi, 3.375);
    }
}
