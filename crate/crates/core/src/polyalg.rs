//! Univariate real polynomials, derivative-energy Gram matrices and
//! Sturm-sequence root counting.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

/// Relative magnitude below which trailing chain coefficients are dropped.
const EPS_COEFF: f64 = 1e-12;
/// Relative magnitude below which an evaluated chain element counts as zero.
const EPS_SIGN: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("polynomial is identically zero")]
    ZeroPolynomial,
    #[error("Sturm chain degenerated: {0}")]
    DegenerateChain(&'static str),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("empty interval ({0}, {1}]")]
    EmptyInterval(f64, f64),
}

/// Real polynomial stored by ascending-degree coefficients.
///
/// `coeffs[i]` multiplies `t^i`. Trailing exact zeros are trimmed on
/// construction, but the constant term is always kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `coeff · t^degree`.
    pub fn monomial(degree: usize, coeff: f64) -> Self {
        let mut c = vec![0.0; degree + 1];
        c[degree] = coeff;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn leading_coeff(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    /// Horner evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// Upper bound on the magnitude of the terms summed by `eval` at `t`.
    fn eval_scale(&self, t: f64) -> f64 {
        let at = t.abs();
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * at + c.abs())
    }

    /// k-th formal derivative.
    pub fn differentiate(&self, k: usize) -> Self {
        if k == 0 {
            return self.clone();
        }
        if k > self.degree() {
            return Self::zero();
        }
        let coeffs = (k..self.coeffs.len())
            .map(|i| self.coeffs[i] * falling_factorial(i, k))
            .collect();
        Self::new(coeffs)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * alpha).collect())
    }

    /// `t ↦ p(s·t)`.
    pub fn compose_scale(&self, s: f64) -> Self {
        let mut f = 1.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|&c| {
                let v = c * f;
                f *= s;
                v
            })
            .collect();
        Self::new(coeffs)
    }

    /// `t ↦ p(t + t0)` by repeated synthetic division.
    pub fn shift(&self, t0: f64) -> Self {
        let mut c = self.coeffs.clone();
        let n = c.len();
        for i in 0..n {
            for j in (i..n - 1).rev() {
                c[j] += t0 * c[j + 1];
            }
        }
        Self::new(c)
    }

    /// Quotient and remainder of Euclidean division by `divisor`.
    ///
    /// The divisor's leading coefficient must be nonzero (it is, after
    /// construction trimming, unless the divisor is the zero polynomial).
    pub fn div_rem(&self, divisor: &Polynomial) -> (Polynomial, Polynomial) {
        let dd = divisor.degree();
        let lead = divisor.leading_coeff();
        if self.degree() < dd {
            return (Self::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let mut quot = vec![0.0; self.degree() - dd + 1];
        for k in (0..quot.len()).rev() {
            let q = rem[k + dd] / lead;
            quot[k] = q;
            for (j, &dc) in divisor.coeffs.iter().enumerate() {
                rem[k + j] -= q * dc;
            }
            rem[k + dd] = 0.0;
        }
        rem.truncate(dd.max(1));
        (Self::new(quot), Self::new(rem))
    }

    /// Drops trailing coefficients with magnitude below `eps`.
    fn strip_below(&self, eps: f64) -> Self {
        let mut c = self.coeffs.clone();
        while c.len() > 1 && c[c.len() - 1].abs() < eps {
            c.pop();
        }
        if c.len() == 1 && c[0].abs() < eps {
            c[0] = 0.0;
        }
        Self::new(c)
    }

    /// Rescales to unit max-abs coefficient.
    fn unit_scaled(&self) -> Self {
        let m = self.max_abs_coeff();
        if m == 0.0 {
            self.clone()
        } else {
            self.scale(1.0 / m)
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let c = (0..n)
            .map(|i| self.coeffs.get(i).unwrap_or(&0.0) + rhs.coeffs.get(i).unwrap_or(&0.0))
            .collect();
        Polynomial::new(c)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let c = (0..n)
            .map(|i| self.coeffs.get(i).unwrap_or(&0.0) - rhs.coeffs.get(i).unwrap_or(&0.0))
            .collect();
        Polynomial::new(c)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut c = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// i·(i−1)·…·(i−k+1); zero when k > i.
pub fn falling_factorial(i: usize, k: usize) -> f64 {
    if k > i {
        return 0.0;
    }
    ((i - k + 1)..=i).fold(1.0, |acc, v| acc * v as f64)
}

/// Gram matrix of the k-th derivative of the monomial basis `1, t, …, t^m`
/// over `[0, horizon]`, in closed form.
pub fn gram_matrix(m: usize, k: usize, horizon: f64) -> Result<DMatrix<f64>, PolyError> {
    if !(horizon > 0.0) {
        return Err(PolyError::NonPositiveHorizon(horizon));
    }
    let n = m + 1;
    let mut g = DMatrix::zeros(n, n);
    for i in k..n {
        for j in i..n {
            let p = (i + j - 2 * k) as i32;
            let v = falling_factorial(i, k) * falling_factorial(j, k) * horizon.powi(p + 1)
                / f64::from(p + 1);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Canonical Sturm sequence `p, p', −rem(p_{i−1}, p_i), …`.
///
/// Every element is rescaled to unit max-abs coefficient, and trailing
/// coefficients below `1e-12` of the head's scale are stripped. The cascade
/// stops at the first remainder that vanishes under that tolerance; the last
/// element is then the (approximate) gcd of `p` and `p'`.
pub fn sturm_chain(p: &Polynomial) -> Result<Vec<Polynomial>, PolyError> {
    let head_scale = p.max_abs_coeff();
    if head_scale == 0.0 {
        return Err(PolyError::ZeroPolynomial);
    }
    if !head_scale.is_finite() {
        return Err(PolyError::DegenerateChain("non-finite coefficients"));
    }
    let head = p.unit_scaled().strip_below(EPS_COEFF);
    let mut chain = vec![head.clone()];
    if head.degree() == 0 {
        return Ok(chain);
    }
    let deriv = head.differentiate(1).unit_scaled().strip_below(EPS_COEFF);
    chain.push(deriv);
    loop {
        let n = chain.len();
        let last = &chain[n - 1];
        if last.degree() == 0 {
            break;
        }
        let (_, rem) = chain[n - 2].div_rem(last);
        let rem = rem.strip_below(EPS_COEFF);
        if rem.is_zero() {
            break;
        }
        let next = (-&rem).unit_scaled();
        if next.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(PolyError::DegenerateChain("non-finite remainder"));
        }
        chain.push(next);
        if chain.len() > p.degree() + 1 {
            return Err(PolyError::DegenerateChain("remainder degrees failed to drop"));
        }
    }
    Ok(chain)
}

fn sign_at(p: &Polynomial, t: f64) -> i8 {
    let v = p.eval(t);
    if v.abs() < EPS_SIGN * p.eval_scale(t) || v == 0.0 {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

fn count_variations(signs: impl Iterator<Item = i8>) -> usize {
    let mut last = 0i8;
    let mut n = 0;
    for s in signs.filter(|&s| s != 0) {
        if last != 0 && s != last {
            n += 1;
        }
        last = s;
    }
    n
}

/// Number of sign variations of the chain at `t`, zeros skipped.
pub fn sign_variations(chain: &[Polynomial], t: f64) -> usize {
    count_variations(chain.iter().map(|p| sign_at(p, t)))
}

/// Sign variations at `+∞` (`positive = true`) or `−∞`.
pub fn sign_variations_at_infinity(chain: &[Polynomial], positive: bool) -> usize {
    count_variations(chain.iter().map(|p| {
        let lc = p.leading_coeff();
        let s = if lc > 0.0 { 1 } else if lc < 0.0 { -1 } else { 0 };
        if !positive && p.degree() % 2 == 1 {
            -s
        } else {
            s
        }
    }))
}

/// Distinct real roots of `p` on the half-open interval `(a, b]`.
pub fn count_distinct_real_roots(p: &Polynomial, a: f64, b: f64) -> Result<usize, PolyError> {
    if !(a < b) {
        return Err(PolyError::EmptyInterval(a, b));
    }
    let chain = sturm_chain(p)?;
    count_with_chain(&chain, a, b)
}

/// Same as [`count_distinct_real_roots`] but reusing a precomputed chain.
pub fn count_with_chain(chain: &[Polynomial], a: f64, b: f64) -> Result<usize, PolyError> {
    let va = sign_variations(chain, a);
    let vb = sign_variations(chain, b);
    // Sign-variation counts are non-increasing in exact arithmetic.
    va.checked_sub(vb)
        .ok_or(PolyError::DegenerateChain("sign variations increased across interval"))
}

/// Distinct real roots of `p` on `(0, horizon]`, counted after rescaling time
/// to the unit interval so that monomial coefficients stay comparable.
pub fn count_roots_on_horizon(p: &Polynomial, horizon: f64) -> Result<usize, PolyError> {
    if !(horizon > 0.0) {
        return Err(PolyError::NonPositiveHorizon(horizon));
    }
    count_distinct_real_roots(&p.compose_scale(horizon), 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(c: &[f64]) -> Polynomial {
        Polynomial::new(c.to_vec())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(poly(&[1.0, 0.0, 1.0]).eval(2.0), 5.0);
        assert_eq!(poly(&[0.0]).eval(3.7), 0.0);
        assert_eq!(poly(&[-2.5]).eval(1e6), -2.5);
    }

    #[test]
    fn differentiate_examples() {
        assert_eq!(poly(&[0.0, 0.0, 1.0]).differentiate(1), poly(&[0.0, 2.0]));
        assert_eq!(poly(&[1.0, 1.0, 1.0]).differentiate(0), poly(&[1.0, 1.0, 1.0]));
        assert_eq!(poly(&[1.0, 2.0, 3.0]).differentiate(3), poly(&[0.0]));
    }

    #[test]
    fn gram_small_cases() {
        let g = gram_matrix(2, 2, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if (i, j) == (2, 2) { 4.0 } else { 0.0 };
                assert_eq!(g[(i, j)], want);
            }
        }
        let g = gram_matrix(3, 2, 1.0).unwrap();
        assert_eq!(g[(2, 2)], 4.0);
        assert_eq!(g[(2, 3)], 6.0);
        assert_eq!(g[(3, 2)], 6.0);
        assert_eq!(g[(3, 3)], 12.0);
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 3)], 0.0);
    }

    #[test]
    fn gram_rejects_bad_horizon() {
        assert_eq!(gram_matrix(3, 2, 0.0), Err(PolyError::NonPositiveHorizon(0.0)));
        assert!(gram_matrix(3, 2, -1.0).is_err());
    }

    /// 20-point composite Simpson with many panels; independent of the
    /// closed-form path.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + h * i as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn gram_matches_quadrature() {
        let (m, k, horizon) = (5, 2, 2.0);
        let g = gram_matrix(m, k, horizon).unwrap();
        for i in 0..=m {
            for j in 0..=m {
                let di = Polynomial::monomial(i, 1.0).differentiate(k);
                let dj = Polynomial::monomial(j, 1.0).differentiate(k);
                let q = simpson(|t| di.eval(t) * dj.eval(t), 0.0, horizon, 2000);
                let tol = 1e-9 * q.abs().max(1.0);
                assert!((g[(i, j)] - q).abs() <= tol, "({i},{j}) {} vs {q}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn sturm_chain_textbook() {
        let chain = sturm_chain(&poly(&[-2.0, 0.0, 1.0])).unwrap();
        assert_eq!(chain.len(), 3);
        // Rescaled by positive constants: t²−2 → (t²−2)/2, 2t → t, 2 → 1.
        assert_eq!(chain[0], poly(&[-1.0, 0.0, 0.5]));
        assert_eq!(chain[1], poly(&[0.0, 1.0]));
        assert_eq!(chain[2], poly(&[1.0]));

        let chain = sturm_chain(&poly(&[-1.0, 1.0])).unwrap();
        assert_eq!(chain, vec![poly(&[-1.0, 1.0]), poly(&[1.0])]);
    }

    #[test]
    fn sturm_zero_polynomial() {
        assert_eq!(sturm_chain(&poly(&[0.0, 0.0])), Err(PolyError::ZeroPolynomial));
        assert_eq!(
            count_distinct_real_roots(&Polynomial::zero(), 0.0, 1.0),
            Err(PolyError::ZeroPolynomial)
        );
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_distinct_real_roots(&poly(&[-2.0, 0.0, 1.0]), 0.0, 2.0), Ok(1));
        assert_eq!(count_distinct_real_roots(&poly(&[1.0, 0.0, 1.0]), 0.0, 10.0), Ok(0));
        assert_eq!(count_distinct_real_roots(&poly(&[1.0, -2.0, 1.0]), 0.0, 2.0), Ok(1));
    }

    #[test]
    fn half_open_convention() {
        // Root at 1: excluded at the left end, included at the right end.
        let p = poly(&[-1.0, 1.0]);
        assert_eq!(count_distinct_real_roots(&p, 1.0, 2.0), Ok(0));
        assert_eq!(count_distinct_real_roots(&p, 0.0, 1.0), Ok(1));
        let q = poly(&[-2.0, 3.0, -1.0]); // roots 1, 2
        assert_eq!(count_distinct_real_roots(&q, 1.0, 2.0), Ok(1));
    }

    #[test]
    fn empty_interval_rejected() {
        assert!(matches!(
            count_distinct_real_roots(&poly(&[1.0, 1.0]), 1.0, 1.0),
            Err(PolyError::EmptyInterval(..))
        ));
    }

    #[test]
    fn horizon_count_matches_direct() {
        let p = &(&poly(&[-1.0, 1.0]) * &poly(&[-3.0, 1.0])) * &poly(&[-4.5, 1.0]);
        assert_eq!(count_roots_on_horizon(&p, 5.0), Ok(3));
        assert_eq!(count_roots_on_horizon(&p, 4.0), Ok(2));
        assert_eq!(count_distinct_real_roots(&p, 0.0, 4.0), Ok(2));
    }

    #[test]
    fn shift_and_scale() {
        let p = poly(&[1.0, -2.0, 0.5, 3.0]);
        let s = p.shift(1.5);
        let c = p.compose_scale(-0.7);
        for &t in &[-2.0, 0.0, 0.3, 4.0] {
            assert!((s.eval(t) - p.eval(t + 1.5)).abs() < 1e-12 * (1.0 + p.eval(t + 1.5).abs()));
            assert!((c.eval(t) - p.eval(-0.7 * t)).abs() < 1e-12 * (1.0 + p.eval(-0.7 * t).abs()));
        }
    }

    #[test]
    fn div_rem_reconstructs() {
        let a = poly(&[3.0, -1.0, 2.0, 0.0, 1.0]);
        let b = poly(&[1.0, 1.0, 2.0]);
        let (q, r) = a.div_rem(&b);
        assert!(r.degree() < b.degree());
        let back = &(&q * &b) + &r;
        for (x, y) in back.coeffs().iter().zip(a.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
