//! Scalar helpers backed by `libm` (the float intrinsics need `std`).

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Integer power by repeated squaring; exact for small exponents on dyadic inputs.
#[inline]
pub fn powi(mut base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + libm::log(-libm::expm1(-y))
    } else {
        libm::log(libm::expm1(y))
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `k!/(k-d)!`, the coefficient of `t^(k-d)` in the `d`-th derivative of `t^k`.
#[inline]
pub fn falling_factorial(k: usize, d: usize) -> f64 {
    if d > k {
        return 0.0;
    }
    let mut acc = 1.0;
    for j in (k - d + 1)..=k {
        acc *= j as f64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &x in &[-20.0, -1.0, 0.0, 0.5, 3.0, 40.0] {
            let y = softplus(x);
            assert!((softplus_inv(y) - x).abs() < 1e-9 * (1.0 + x.abs()), "{x}");
        }
        assert!((softplus(0.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling_factorial(5, 3), 60.0);
        assert_eq!(falling_factorial(3, 3), 6.0);
        assert_eq!(falling_factorial(2, 3), 0.0);
        assert_eq!(falling_factorial(4, 0), 1.0);
    }
}
