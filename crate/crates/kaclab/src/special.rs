//! Scalar special functions: Bessel `J_0`, sphere surface areas in log
//! form, and the angular kernel of the radial Fourier inversion.
//!
//! The inversion integrals evaluate `J_0` millions of times at arguments up
//! to ~1e4, so `J_0` is a rational-approximation implementation (absolute
//! error below 1e-12 over that whole range) rather than a series.

use std::f64::consts::{FRAC_PI_4, PI};

pub use statrs::function::erf::{erf, erfc};
pub use statrs::function::gamma::ln_gamma;

/// Log surface area of the unit sphere `S^{m-1}` in `R^m`:
/// `|S^{m-1}| = 2 pi^{m/2} / Gamma(m/2)`.
///
/// `m = 1` gives `log 2` (two points), `m = 2` gives `log(2 pi)`.
pub fn log_sphere_area(m: u32) -> f64 {
    assert!(m >= 1, "need m >= 1, got {m}");
    let half = 0.5 * f64::from(m);
    std::f64::consts::LN_2 + half * PI.ln() - ln_gamma(half)
}

/// Angular factor `Lambda_d(x)` of the d-dimensional radial inverse
/// transform: the surface integral of `e^{i x <e, omega>}` over the unit
/// sphere (unnormalized measure).
///
/// `Lambda_2(x) = 2 pi J_0(x)`, `Lambda_3(x) = 4 pi sin(x)/x`, and
/// `Lambda_d(0) = |S^{d-1}|`.  Only `d = 2, 3` are supported; higher
/// dimensions would need general `J_{d/2-1}` kernels.
pub fn radial_angular_kernel(d: u32, x: f64) -> f64 {
    match d {
        2 => 2.0 * PI * bessel_j0(x),
        3 => {
            if x.abs() < 1e-6 {
                // sin(x)/x = 1 - x^2/6 + O(x^4); x^4/120 < 1e-25 here
                4.0 * PI * (1.0 - x * x / 6.0)
            } else {
                4.0 * PI * x.sin() / x
            }
        }
        _ => panic!("radial angular kernel implemented for d = 2, 3 only, got {d}"),
    }
}

// Rational approximations below follow the classical Cephes layout: on
// [0, 5] a polynomial quotient times the exact first two zeros, beyond 5
// the Hankel asymptotic form with degree 6/6 and 7/7 quotients.

/* 5.783185962946784521175995758455807035071 */
const DR1: f64 = 5.783185962946784;
/* 30.47126234366208639907816317502275584842 */
const DR2: f64 = 30.471262343662087;

const SQRT_FRAC_2_PI: f64 = 0.7978845608028654;

/// Bessel function of the first kind, order zero.
///
/// Absolute error stays below ~1e-13 for `|x| <= 1e4`; the large-argument
/// limit is set by the accuracy of the `cos(x - pi/4)` argument reduction.
pub fn bessel_j0(mut x: f64) -> f64 {
    if x < 0.0 {
        x = -x;
    }

    if x <= 5.0 {
        let z = x * x;
        if x < 1e-5 {
            return 1.0 - z / 4.0;
        }
        let p = (z - DR1) * (z - DR2);
        return p * eval_polynomial(z, &RP) / eval_polynomial_1(z, &RQ);
    }

    let w = 5.0 / x;
    let q = 25.0 / (x * x);
    let p = eval_polynomial(q, &PP) / eval_polynomial(q, &PQ);
    let q = eval_polynomial(q, &QP) / eval_polynomial_1(q, &QQ);
    let xn = x - FRAC_PI_4;
    let p = p * f64::cos(xn) - w * q * f64::sin(xn);
    p * SQRT_FRAC_2_PI / f64::sqrt(x)
}

/// Horner evaluation, `coeffs[0]` is the leading coefficient.
fn eval_polynomial(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Same with an implicit leading coefficient of 1.
fn eval_polynomial_1(x: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().fold(1.0, |acc, &c| acc * x + c)
}

static RP: [f64; 4] = [
    -4.794432209782018e9,
    1.9561749194655657e12,
    -2.4924834436096772e14,
    9.708622510473064e15,
];
static RQ: [f64; 8] = [
    4.99563147152651e2,
    1.737854016763747e5,
    4.844096583399621e7,
    1.1185553704535683e10,
    2.112775201154892e12,
    3.1051822985742256e14,
    3.1812195594320496e16,
    1.7108629408104315e18,
];

static PP: [f64; 7] = [
    7.969367292973471e-4,
    8.283523921074408e-2,
    1.239533716464143,
    5.447250030587687,
    8.74716500199817,
    5.303240382353949,
    1.0,
];

static PQ: [f64; 7] = [
    9.244088105588637e-4,
    8.562884743544745e-2,
    1.2535274390105895,
    5.470977403304171,
    8.761908832370695,
    5.306052882353947,
    1.0,
];

static QP: [f64; 8] = [
    -1.1366383889846916e-2,
    -1.2825271867050931,
    -1.9553954425773597e1,
    -9.320601521237683e1,
    -1.7768116798048806e2,
    -1.4707750515495118e2,
    -5.141053267665993e1,
    -6.050143506007285,
];

static QQ: [f64; 7] = [
    6.43178256118178e1,
    8.564300259769806e2,
    3.8824018360540163e3,
    7.240467741956525e3,
    5.930727011873169e3,
    2.0620933166032783e3,
    2.420057402402914e2,
];
