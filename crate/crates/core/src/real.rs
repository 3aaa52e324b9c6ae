//! Scalar abstraction so the annulus return map can run in `f64` or in
//! multiprecision ([`Mp`], backed by `astro-float`).

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

pub trait Real:
    Clone
    + fmt::Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn ln(&self) -> Self;
    fn exp(&self) -> Self;
    fn cos(&self) -> Self;
    fn sin(&self) -> Self;
    fn pi() -> Self;

    fn powr(&self, e: &Self) -> Self {
        (self.ln() * e.clone()).exp()
    }
    fn tau() -> Self {
        Self::pi() * Self::from_f64(2.0)
    }
    fn is_positive(&self) -> bool {
        *self > Self::from_f64(0.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn pi() -> Self {
        std::f64::consts::PI
    }
    fn powr(&self, e: &Self) -> Self {
        self.powf(*e)
    }
}

/// Working precision of [`Mp`] in bits.
pub const MP_PRECISION: usize = 192;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("astro-float constants cache"));
}

fn with_cc<T>(f: impl FnOnce(&mut Consts) -> T) -> T {
    CONSTS.with(|c| f(&mut c.borrow_mut()))
}

/// Multiprecision real with [`MP_PRECISION`] bits of mantissa.
#[derive(Clone)]
pub struct Mp(BigFloat);

impl Mp {
    pub fn inner(&self) -> &BigFloat {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        !(self.0.is_nan() || self.0.is_inf())
    }

    /// Decimal rendering with the full working precision.
    pub fn to_decimal(&self) -> String {
        format!("{}", self.0)
    }

    pub fn parse(s: &str) -> Option<Mp> {
        let v = with_cc(|cc| BigFloat::parse(s, astro_float::Radix::Dec, MP_PRECISION, RM, cc));
        (!v.is_nan()).then_some(Mp(v))
    }

    pub fn abs(&self) -> Mp {
        Mp(self.0.abs())
    }
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mp({})", self.0)
    }
}

impl fmt::Display for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl PartialEq for Mp {
    fn eq(&self, other: &Self) -> bool {
        self.0.partial_cmp(&other.0) == Some(Ordering::Equal)
    }
}

impl PartialOrd for Mp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl Add for Mp {
    type Output = Mp;
    fn add(self, o: Mp) -> Mp {
        Mp(self.0.add(&o.0, MP_PRECISION, RM))
    }
}

impl Sub for Mp {
    type Output = Mp;
    fn sub(self, o: Mp) -> Mp {
        Mp(self.0.sub(&o.0, MP_PRECISION, RM))
    }
}

impl Mul for Mp {
    type Output = Mp;
    fn mul(self, o: Mp) -> Mp {
        Mp(self.0.mul(&o.0, MP_PRECISION, RM))
    }
}

impl Div for Mp {
    type Output = Mp;
    fn div(self, o: Mp) -> Mp {
        Mp(self.0.div(&o.0, MP_PRECISION, RM))
    }
}

impl Neg for Mp {
    type Output = Mp;
    fn neg(self) -> Mp {
        Mp(self.0.neg())
    }
}

impl Real for Mp {
    fn from_f64(v: f64) -> Self {
        Mp(BigFloat::from_f64(v, MP_PRECISION))
    }

    fn to_f64(&self) -> f64 {
        if self.0.is_nan() {
            return f64::NAN;
        }
        if self.0.is_inf() {
            return if self.0.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        match self.0.as_raw_parts() {
            Some((words, _, sign, exp, _)) => {
                let n = words.len();
                if n == 0 || words.iter().all(|w| *w == 0) {
                    return 0.0;
                }
                let hi = words[n - 1] as f64;
                let lo = if n >= 2 { words[n - 2] as f64 } else { 0.0 };
                let bits = Word::BITS as i32;
                let m = hi * 2f64.powi(-bits) + lo * 2f64.powi(-2 * bits);
                let v = m * 2f64.powi(exp);
                if sign == Sign::Neg {
                    -v
                } else {
                    v
                }
            }
            None => 0.0,
        }
    }

    fn ln(&self) -> Self {
        Mp(with_cc(|cc| self.0.ln(MP_PRECISION, RM, cc)))
    }

    fn exp(&self) -> Self {
        Mp(with_cc(|cc| self.0.exp(MP_PRECISION, RM, cc)))
    }

    fn cos(&self) -> Self {
        Mp(with_cc(|cc| self.0.cos(MP_PRECISION, RM, cc)))
    }

    fn sin(&self) -> Self {
        Mp(with_cc(|cc| self.0.sin(MP_PRECISION, RM, cc)))
    }

    fn pi() -> Self {
        Mp(with_cc(|cc| cc.pi(MP_PRECISION, RM)))
    }
}

type Word = astro_float::Word;
