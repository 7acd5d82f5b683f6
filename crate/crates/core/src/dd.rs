//! Compensated double-double accumulation for cancellation-heavy dot
//! products.
//!
//! The multi-server solver accumulates its path-sum series in a sign-flipped
//! basis where every term is nonnegative, so the accumulated matrices carry
//! full relative precision. The deep cancellation the model genuinely
//! contains then happens in a handful of final contractions; evaluating
//! those as plain `f64` dots would lose everything, while an error-free
//! product plus a two-float running sum keeps ~32 significant digits through
//! the cancellation.

/// Unevaluated sum of two doubles, `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TwoFloat {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, f64::mul_add(a, b, -p))
}

impl TwoFloat {
    pub fn zero() -> Self {
        TwoFloat::default()
    }

    #[inline]
    pub fn add_f64(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    /// Accumulate `a * b` exactly.
    #[inline]
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_prod(a, b);
        self.add_f64(p);
        self.lo += e;
    }

    /// Accumulate `a * b * c` with one rounding on the first partial.
    #[inline]
    pub fn add_product3(&mut self, a: f64, b: f64, c: f64) {
        let (p, e) = two_prod(a, b);
        self.add_product(p, c);
        self.add_product(e, c);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    pub fn from_f64(x: f64) -> Self {
        TwoFloat { hi: x, lo: 0.0 }
    }

    /// Renormalized product with a plain double.
    #[inline]
    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let lo = f64::mul_add(self.lo, b, e);
        let (hi, lo) = two_sum(p, lo);
        TwoFloat { hi, lo }
    }

    /// Renormalized product of two two-floats.
    #[inline]
    pub fn mul_dd(self, b: TwoFloat) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let lo = e + self.hi * b.lo + self.lo * b.hi;
        let (hi, lo) = two_sum(p, lo);
        TwoFloat { hi, lo }
    }

    #[inline]
    pub fn add_dd(&mut self, b: TwoFloat) {
        self.add_f64(b.hi);
        self.lo += b.lo;
    }

    #[inline]
    pub fn sub_dd(self, b: TwoFloat) -> Self {
        let mut out = self;
        out.add_f64(-b.hi);
        out.lo -= b.lo;
        let (hi, lo) = two_sum(out.hi, out.lo);
        TwoFloat { hi, lo }
    }

    /// Reciprocal of a double, with one Newton correction.
    pub fn recip(x: f64) -> Self {
        let hi = 1.0 / x;
        let residual = f64::mul_add(hi, x, -1.0);
        TwoFloat { hi, lo: -residual * hi }
    }
}

/// `base^r` for `r = 0..n`, carried in two-float precision so that diagonal
/// basis changes stay consistent to well below the final cancellation depth.
pub(crate) fn power_table(base: TwoFloat, n: usize) -> Vec<TwoFloat> {
    let mut table = Vec::with_capacity(n);
    let mut current = TwoFloat::from_f64(1.0);
    for _ in 0..n {
        table.push(current);
        current = current.mul_dd(base);
    }
    table
}

/// Compensated dot product of two slices.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = TwoFloat::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc.add_product(x, y);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deep_cancellation_survives() {
        // sum of (x, -x(1-1e-17)) pairs at wildly different scales; the
        // plain f64 dot returns garbage while the compensated one keeps the
        // tiny residual.
        let big = 3.5e15;
        let a = vec![big, -big, 1.0];
        let b = vec![1.0 + 1e-16, 1.0, 1.0];
        let exact = big * 1e-16 + 1.0;
        let compensated = dot(&a, &b);
        assert!((compensated - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn triple_product_accumulation() {
        let mut acc = TwoFloat::zero();
        acc.add_product3(1e8, 1e8, 1.0);
        acc.add_product3(-1e8, 1e8, 1.0);
        acc.add_product3(3.0, 7.0, 2.0);
        assert_eq!(acc.value(), 42.0);
    }

    #[test]
    fn power_table_inverse_consistency() {
        // Powers of -g and of its reciprocal must cancel to ~1e-30, far
        // beyond what plain f64 powers would achieve.
        let g = 0.731731082123;
        let forward = power_table(TwoFloat::from_f64(-g), 12);
        let backward = power_table(TwoFloat::recip(-g), 12);
        for r in 0..12 {
            let product = forward[r].mul_dd(backward[r]);
            let err = (product.hi - 1.0).abs() + product.lo.abs();
            assert!(err < 1e-29, "power {r}: error {err}");
        }
    }

    #[test]
    fn mul_f64_keeps_precision() {
        let a = TwoFloat { hi: 1.0, lo: 1e-20 };
        let b = a.mul_f64(3.0);
        assert!((b.hi + b.lo - 3.0 - 3e-20).abs() < 1e-32);
    }
}
