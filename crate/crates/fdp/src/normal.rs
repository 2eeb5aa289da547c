//! Standard normal CDF, density and quantile.
//!
//! FDP estimates at small thresholds are tail-sensitive, so the CDF is
//! computed from erf/erfc evaluated to full double precision: a power
//! series on the central range and a Lentz continued fraction in the
//! tails. Absolute error of `std_normal_cdf` is below 1e-15 and the
//! relative error stays small deep into the tails.

use crate::error::{FdpError, Result};

const FRAC_1_SQRT_PI: f64 = 0.564189583547756286948079451561;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// erf(x) for |x| <= 2 via the Maclaurin-type series
/// erf(x) = (2/sqrt(pi)) e^{-x^2} sum_{n>=0} 2^n x^{2n+1} / (1*3*...*(2n+1)).
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x2 / (2.0 * n as f64 + 1.0);
        let new = sum + term;
        if new == sum || n > 200 {
            break;
        }
        sum = new;
    }
    2.0 * FRAC_1_SQRT_PI * (-x2).exp() * sum
}

/// erfc(x) for x >= 2 via the continued fraction
/// erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...)))),
/// evaluated with the modified Lentz algorithm.
fn erfc_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for n in 1..=300 {
        let a = n as f64 / 2.0;
        // b = x for every level.
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() * FRAC_1_SQRT_PI / f
}

/// Complementary error function to near machine precision.
pub fn erfc(x: f64) -> f64 {
    if x >= 2.0 {
        erfc_cf(x)
    } else if x <= -2.0 {
        2.0 - erfc_cf(-x)
    } else {
        1.0 - erf_series(x)
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_PI / SQRT_2 * (-0.5 * x * x).exp()
}

/// Standard normal cumulative distribution function Φ(x).
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(FdpError::Domain(format!("non-finite argument to Φ: {x}")));
    }
    Ok(0.5 * erfc(-x / SQRT_2))
}

/// Φ(x) without the domain check, for hot loops that already guarantee
/// finite input.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile Φ⁻¹(alpha) for alpha in (0, 1).
///
/// Starts from the Abramowitz–Stegun 26.2.23 rational approximation and
/// polishes with Newton steps on the CDF.
pub fn std_normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FdpError::Domain(format!("quantile requires alpha in (0,1), got {alpha}")));
    }
    if alpha == 0.5 {
        return Ok(0.0);
    }
    let lower = alpha < 0.5;
    let a = if lower { alpha } else { 1.0 - alpha };

    // Initial guess, accurate to ~4.5e-4.
    let t = (-2.0 * a.ln()).sqrt();
    let num = 2.515517 + t * (0.802853 + t * 0.010328);
    let den = 1.0 + t * (1.432788 + t * (0.189269 + t * 0.001308));
    let mut x = -(t - num / den);

    // Newton iterations; bracket in the lower tail.
    let (mut lo, mut hi) = (-40.0f64, 0.0f64);
    for _ in 0..60 {
        let f = phi(x) - a;
        if f > 0.0 {
            hi = x;
        } else if f < 0.0 {
            lo = x;
        }
        let d = std_normal_pdf(x);
        let mut step = if d > 0.0 { f / d } else { 0.0 };
        // Fall back to bisection when Newton leaves the bracket.
        let mut next = x - step;
        if !(lo..=hi).contains(&next) || step == 0.0 {
            next = 0.5 * (lo + hi);
            step = x - next;
        }
        x = next;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(if lower { x } else { -x })
}

#[cfg(test)]
mod tests {
    use super::*;

    // High-precision reference values (40-digit erfc oracle, frozen).
    const CDF_GOLDEN: &[(f64, f64)] = &[
        (-8.0, 6.2209605742717841235e-16),
        (-6.0, 9.865876450376981407e-10),
        (-5.0, 2.8665157187919391167e-7),
        (-4.0, 0.000031671241833119921254),
        (-3.0, 0.0013498980316300945267),
        (-2.5758293035489004, 0.0050000000000000054487),
        (-2.236, 0.012675885579111173897),
        (-2.0, 0.0227501319481792072),
        (-1.5, 0.066807201268858066004),
        (-1.0, 0.15865525393145705141),
        (-0.5, 0.30853753872598689636),
        (-0.1, 0.46017216272297101633),
        (0.1, 0.53982783727702898367),
        (0.5, 0.69146246127401310364),
        (1.0, 0.84134474606854294859),
        (1.3, 0.90319951541438967446),
        (2.0, 0.9772498680518207928),
        (2.236, 0.9873241144208888261),
        (3.0, 0.99865010196836990547),
        (4.0, 0.99996832875816688008),
        (5.0, 0.99999971334842812081),
        (6.0, 0.99999999901341235496),
        (8.0, 0.9999999999999993779),
    ];

    #[test]
    fn cdf_matches_high_precision_oracle() {
        for &(x, want) in CDF_GOLDEN {
            let got = std_normal_cdf(x).unwrap();
            assert!(
                (got - want).abs() <= 1e-15,
                "Φ({x}) = {got}, want {want}, err {}",
                (got - want).abs()
            );
            // Relative accuracy in the lower tail matters for quantile Newton steps.
            if x < -1.0 {
                assert!((got - want).abs() <= 1e-14 * want.max(1e-300));
            }
        }
    }

    #[test]
    fn cdf_center_and_saturation() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(40.0).unwrap() - 1.0).abs() <= 1e-15);
        assert!(std_normal_cdf(-40.0).unwrap() >= 0.0);
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_symmetry_on_grid() {
        let mut x = -8.0;
        while x <= 8.0 {
            let s = std_normal_cdf(x).unwrap() + std_normal_cdf(-x).unwrap();
            assert!((s - 1.0).abs() <= 1e-15, "Φ({x}) + Φ(-{x}) = {s}");
            x += 0.0831;
        }
    }

    #[test]
    fn cdf_monotone() {
        let mut prev = 0.0;
        let mut x = -10.0;
        while x <= 10.0 {
            let c = std_normal_cdf(x).unwrap();
            assert!(c >= prev);
            prev = c;
            x += 0.01;
        }
    }

    #[test]
    fn quantile_known_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        let q = std_normal_quantile(0.005).unwrap();
        assert!((q - (-2.5758293035489004)).abs() <= 1e-12, "got {q}");
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(-0.2).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn round_trip_identities() {
        // quantile(cdf(x)) == x on (-8, 8). Above the median the round trip
        // passes through alpha near 1, where one ulp of alpha moves x by
        // eps/pdf(x), so the tolerance carries that conditioning term.
        let mut x = -8.0 + 1e-9;
        while x < 8.0 {
            let back = std_normal_quantile(std_normal_cdf(x).unwrap()).unwrap();
            let tol = 1e-12 + 4.0 * f64::EPSILON / std_normal_pdf(x);
            assert!((back - x).abs() <= tol, "x={x}, back={back}");
            x += 0.371;
        }
        // cdf(quantile(a)) == a on (1e-15, 1-1e-15)
        for &a in &[1e-15, 1e-12, 1e-8, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.9999, 1.0 - 1e-12] {
            let back = std_normal_cdf(std_normal_quantile(a).unwrap()).unwrap();
            assert!((back - a).abs() <= 1e-12, "a={a}, back={back}");
        }
    }
}
