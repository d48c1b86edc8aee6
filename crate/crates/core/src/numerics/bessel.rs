//! Bessel function of the first kind, order zero.
//!
//! Three regimes:
//! - `|x| <= 8`: ascending power series. The largest term stays near 1e2, so
//!   cancellation costs at most two digits.
//! - `8 < |x| <= 1000`: Miller backward recurrence normalized with
//!   `J0 + 2 * sum(J_2k) = 1`.
//! - `|x| > 1000`: Hankel asymptotic expansion.

use std::f64::consts::{FRAC_PI_4, PI};

use super::NumericsError;

const SERIES_LIMIT: f64 = 8.0;
const RECURRENCE_LIMIT: f64 = 1000.0;

/// `J0(x)` with absolute error below 1e-12 on `|x| <= 50`.
///
/// Evaluated on `|x|`, so `bessel_j0(x) == bessel_j0(-x)` bit for bit.
pub fn bessel_j0(x: f64) -> Result<f64, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::NonFinite(x));
    }
    let ax = x.abs();
    let value = if ax <= SERIES_LIMIT {
        series(ax)
    } else if ax <= RECURRENCE_LIMIT {
        miller(ax)
    } else {
        hankel(ax)
    };
    Ok(value)
}

fn series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
        k += 1.0;
    }
    sum
}

fn miller(x: f64) -> f64 {
    // Even start index well past the turning point k ~ x.
    let start = 2 * (((x + 20.0 + 6.0 * x.sqrt()) / 2.0) as usize) + 2;
    let two_over_x = 2.0 / x;
    let mut next = 0.0; // J_{k+1}
    let mut current = 1e-30; // J_k
    let mut even_sum = 0.0; // sum of J_{2j}, j >= 1
    for k in (1..=start).rev() {
        let prev = k as f64 * two_over_x * current - next;
        next = current;
        current = prev;
        let order = k - 1;
        if order > 0 && order % 2 == 0 {
            even_sum += current;
        }
        if current.abs() > 1e250 {
            current *= 1e-250;
            next *= 1e-250;
            even_sum *= 1e-250;
        }
    }
    current / (current + 2.0 * even_sum)
}

fn hankel(x: f64) -> f64 {
    let inv = 1.0 / x;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut pow = 1.0;
    for k in 0..12 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= -(odd * odd) / (8.0 * k as f64);
            pow *= inv;
        }
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * a * pow;
        } else {
            q += sign * a * pow;
        }
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Integral representation J0(x) = (1/pi) * int_0^pi cos(x sin t) dt; the
    // trapezoid rule is spectrally accurate for this periodic integrand.
    fn integral_j0(x: f64) -> f64 {
        let n = 400;
        let h = PI / n as f64;
        let mut sum = 0.5 * (1.0 + (x * PI.sin()).cos());
        for i in 1..n {
            sum += (x * (i as f64 * h).sin()).cos();
        }
        sum * h / PI
    }

    #[test]
    fn value_at_zero_is_one() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
    }

    #[test]
    fn value_at_pi() {
        let v = bessel_j0(PI).unwrap();
        assert!((v - (-0.304_242_177_644_093_86)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn first_zero() {
        // Bisection on the series, independent of the dispatch above.
        let (mut lo, mut hi) = (2.0, 3.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if series(lo) * series(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((lo - 2.404_825_557_695_773).abs() < 1e-12);
        assert!(bessel_j0(2.404826).unwrap().abs() < 1e-5);
    }

    #[test]
    fn regimes_agree_with_integral() {
        let mut x = 0.0;
        while x <= 50.0 {
            let got = bessel_j0(x).unwrap();
            let want = integral_j0(x);
            assert!((got - want).abs() < 1e-13, "x={x}: {got} vs {want}");
            x += 0.173;
        }
    }

    #[test]
    fn series_and_recurrence_overlap() {
        for &x in &[4.0, 6.5, 7.9, 8.0] {
            assert!((series(x) - miller(x)).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn recurrence_and_asymptotic_overlap() {
        for &x in &[600.0, 999.0] {
            assert!((miller(x) - hankel(x)).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(bessel_j0(f64::NAN).is_err());
        assert!(bessel_j0(f64::INFINITY).is_err());
    }

    proptest::proptest! {
        #[test]
        fn even_and_bounded(x in -2000.0f64..2000.0) {
            let a = bessel_j0(x).unwrap();
            let b = bessel_j0(-x).unwrap();
            proptest::prop_assert_eq!(a.to_bits(), b.to_bits());
            proptest::prop_assert!(a.abs() <= 1.0);
        }
    }
}
