//! Closed-form scalar functions for drifted Brownian motion absorbed at 0
//! and its Doob transform, the Bessel-3 process.
//!
//! The killed transition density is recovered by inverting the h-transform
//! against the explicit Bessel-3 density, so every density here is exact.
//! All `sinh(xy/t) * exp(-(x^2+y^2)/2t)` products are evaluated through the
//! difference-of-Gaussians form
//! `1/2 [exp(-(x-y)^2/2t) - exp(-(x+y)^2/2t)]`
//! which neither overflows for large `xy/t` nor cancels for small `xy/t`.

use crate::error::{QsdError, Result};

/// Threshold on `(x+y)^2/(2t)` below which `sinh_remainder` switches to the
/// alternating series branch.
pub const SERIES_SWITCH: f64 = 1e-2;

/// Drift magnitude `r > 0` of `X_t = X_0 + B_t - r t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    r: f64,
}

impl DriftParams {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(QsdError::NonPositiveDrift(r));
        }
        Ok(Self { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Principal eigenvalue `lambda_0 = r^2/2` of the absorbed generator.
    pub fn lambda0(&self) -> f64 {
        0.5 * self.r * self.r
    }

    /// Eigenfunction `eta(x) = x e^{r x} / r^2` (normalisation fixed once
    /// and for all; it cancels in every ratio we form).
    pub fn eta(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        x * (self.r * x).exp() / (self.r * self.r)
    }

    /// Yaglom-limit density `r^2 x e^{-r x}`.
    pub fn yaglom_pdf(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        self.r * self.r * x * (-self.r * x).exp()
    }

    /// Yaglom-limit distribution function `1 - (1 + r x) e^{-r x}`.
    pub fn yaglom_cdf(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let rx = self.r * x;
        // 1 - (1+rx)e^{-rx}, rewritten to avoid cancellation near 0.
        -f64::exp_m1(-rx) - rx * (-rx).exp()
    }

    /// Moments of the Yaglom limit: `alpha(x^k) = (k+1)!/r^k`.
    pub fn yaglom_moment(&self, k: u32) -> f64 {
        let mut v = 1.0;
        for j in 2..=(k + 1) {
            v *= j as f64;
        }
        v / self.r.powi(k as i32)
    }
}

/// Standard normal CDF through the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `sinh(xy/t) e^{-(x^2+y^2)/2t}`, stable for all argument magnitudes.
#[inline]
pub fn sinh_gauss(t: f64, x: f64, y: f64) -> f64 {
    debug_assert!(t > 0.0 && x >= 0.0 && y >= 0.0);
    let u = (x - y) * (x - y) / (2.0 * t);
    0.5 * (-u).exp() * (-f64::exp_m1(-2.0 * x * y / t))
}

/// Bessel-3 transition density `q_t(x, y)` in `y`, started from `x`.
///
/// At `x = 0` the continuous limit `(2/sqrt(2 pi t)) (y^2/t) e^{-y^2/2t}`
/// is returned.
pub fn bessel3_density(t: f64, x: f64, y: f64) -> f64 {
    debug_assert!(t > 0.0 && x >= 0.0 && y >= 0.0);
    let norm = 2.0 / (2.0 * std::f64::consts::PI * t).sqrt();
    if x == 0.0 {
        return norm * y * y / t * (-y * y / (2.0 * t)).exp();
    }
    norm * y / x * sinh_gauss(t, x, y)
}

/// Distribution function of the Bessel-3 marginal started from `x > 0`:
/// `Phi((y-x)/st) + Phi((y+x)/st) - 1 + (st/(x sqrt(2 pi)))(e^{-(y+x)^2/2t} - e^{-(y-x)^2/2t})`
/// with `st = sqrt(t)`, obtained by integrating the density in closed form.
pub fn bessel3_cdf(t: f64, x: f64, y: f64) -> f64 {
    debug_assert!(t > 0.0 && x > 0.0);
    if y <= 0.0 {
        return 0.0;
    }
    let st = t.sqrt();
    let gauss = |d: f64| (-d * d / (2.0 * t)).exp();
    normal_cdf((y - x) / st) + normal_cdf((y + x) / st) - 1.0
        + st / (x * (2.0 * std::f64::consts::PI).sqrt()) * (gauss(y + x) - gauss(y - x))
}

/// Sub-Markovian density `p_t(x, y)` of the killed drifted Brownian motion:
/// `e^{-lambda_0 t} (eta(x)/eta(y)) q_t(x, y)`.
pub fn killed_density(params: DriftParams, t: f64, x: f64, y: f64) -> f64 {
    debug_assert!(t > 0.0 && x > 0.0 && y >= 0.0);
    let r = params.r();
    let pref = (-r * (y - x) - params.lambda0() * t).exp();
    pref / (2.0 * std::f64::consts::PI * t).sqrt() * 2.0 * sinh_gauss(t, x, y)
}

/// `P_x(tau_0 > t)` for the drifted Brownian motion, by the reflection
/// principle: `Phi((x - r t)/sqrt(t)) - e^{2 r x} Phi((-x - r t)/sqrt(t))`.
///
/// The reflected term is the product of a huge exponential and a tiny
/// normal tail; for `(x + r t)/sqrt(t) > 36` it is evaluated through the
/// asymptotic tail expansion to avoid overflow and underflow.
pub fn survival_probability(params: DriftParams, t: f64, x: f64) -> f64 {
    debug_assert!(t > 0.0 && x > 0.0);
    let r = params.r();
    let st = t.sqrt();
    let a = (x - r * t) / st;
    let b = (x + r * t) / st;
    let reflected = if b <= 36.0 {
        // 2 r x <= b^2 / 2 < 650 here, so the exponential stays finite
        (2.0 * r * x).exp() * normal_cdf(-b)
    } else {
        // e^{2 r x} Phi(-b) = e^{-a^2/2} / (b sqrt(2 pi)) * (1 - 1/b^2 + ...)
        let b2 = b * b;
        let series = 1.0 - (1.0 - (3.0 - (15.0 - 105.0 / b2) / b2) / b2) / b2;
        (-0.5 * a * a).exp() / (b * (2.0 * std::f64::consts::PI).sqrt()) * series
    };
    normal_cdf(a) - reflected
}

/// Normalisation `K_t = t sqrt(2 pi t) / 2` under which `K_t mu Q_t f`
/// converges to `gamma(f) = int f(y) y^2 dy`.
pub fn k_factor(t: f64) -> f64 {
    debug_assert!(t > 0.0);
    0.5 * t * (2.0 * std::f64::consts::PI * t).sqrt()
}

/// The nonnegative remainder `xy/t - sinh(xy/t) e^{-(x^2+y^2)/2t}`.
///
/// Equal to `1/2 [g(v) - g(u)]` with `g(z) = expm1(-z) + z`,
/// `u = (x-y)^2/2t`, `v = (x+y)^2/2t`. When `v < SERIES_SWITCH` both
/// `g` values cancel to leading order and the alternating power series
/// `sum_{n>=2} a_n(x,y) / (2 t^n)` is used instead, truncated at the first
/// term below `1e-18` relative; the terms decrease in magnitude there, so
/// the discarded tail is bounded by the first dropped term.
pub fn sinh_remainder(t: f64, x: f64, y: f64) -> f64 {
    debug_assert!(t > 0.0 && x > 0.0 && y > 0.0);
    let u = (x - y) * (x - y) / (2.0 * t);
    let v = (x + y) * (x + y) / (2.0 * t);
    if v < SERIES_SWITCH {
        // sum_{n>=2} (-1)^n (v^n - u^n) / (2 n!)
        let mut vn = v * v;
        let mut un = u * u;
        let mut fact = 2.0;
        let mut sign = 1.0;
        let mut sum = 0.0;
        for n in 2..60u32 {
            let term = sign * (vn - un) / (2.0 * fact);
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            vn *= v;
            un *= u;
            fact *= (n + 1) as f64;
            sign = -sign;
        }
        sum
    } else {
        let g = |z: f64| f64::exp_m1(-z) + z;
        (0.5 * (g(v) - g(u))).max(0.0)
    }
}

/// Series coefficient `a_n(x,y) = ((-1)^n / (2^n n!)) ((x+y)^{2n} - (x-y)^{2n})`,
/// defined for `n >= 3`. The remainder expansion reads
/// `xy/t - sinh(xy/t) e^{-(x^2+y^2)/2t} = sum_{n>=2} a_n(x,y)/(2 t^n)`
/// with the same formula extended to `n = 2`, where it gives
/// `a_2/2 = xy(x^2+y^2)/2`.
pub fn expansion_coefficient(n: u32, x: f64, y: f64) -> Result<f64> {
    if n < 3 {
        return Err(QsdError::InvalidArgument(format!(
            "expansion coefficient a_n defined for n >= 3, got {n}"
        )));
    }
    let mut fact = 1.0f64;
    for j in 2..=n {
        fact *= j as f64;
    }
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let p = (x + y).powi(2 * n as i32) - (x - y).powi(2 * n as i32);
    Ok(sign / (2f64.powi(n as i32) * fact) * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn params(r: f64) -> DriftParams {
        DriftParams::new(r).unwrap()
    }

    #[test]
    fn rejects_nonpositive_drift() {
        assert!(DriftParams::new(0.0).is_err());
        assert!(DriftParams::new(-1.0).is_err());
        assert!(DriftParams::new(f64::NAN).is_err());
    }

    #[test]
    fn lambda0_values() {
        assert_eq!(params(2.0).lambda0(), 2.0);
        assert_eq!(params(1.0).lambda0(), 0.5);
        assert_eq!(params(0.5).lambda0(), 0.125);
    }

    #[test]
    fn eta_values() {
        let p = params(1.0);
        assert_eq!(p.eta(0.0), 0.0);
        assert_relative_eq!(p.eta(1.0), std::f64::consts::E, max_relative = 1e-15);
        let p2 = params(2.0);
        assert_relative_eq!(p2.eta(1.0), 2f64.exp() / 4.0, max_relative = 1e-15);
    }

    #[test]
    fn yaglom_pdf_values() {
        let p = params(1.0);
        assert_relative_eq!(p.yaglom_pdf(1.0), (-1f64).exp(), max_relative = 1e-15);
        assert_eq!(p.yaglom_pdf(0.0), 0.0);
        // argmax at 1/r, by grid search
        for &r in &[0.5, 1.0, 3.0] {
            let p = params(r);
            let (mut best_x, mut best) = (0.0, 0.0);
            let mut x = 1e-3;
            while x < 20.0 / r {
                if p.yaglom_pdf(x) > best {
                    best = p.yaglom_pdf(x);
                    best_x = x;
                }
                x += 1e-3 / r;
            }
            assert_abs_diff_eq!(best_x, 1.0 / r, epsilon = 2e-3 / r);
        }
    }

    #[test]
    fn yaglom_cdf_values() {
        let p = params(1.0);
        assert_eq!(p.yaglom_cdf(0.0), 0.0);
        assert_relative_eq!(p.yaglom_cdf(100.0), 1.0, max_relative = 1e-12);
        // oracle: quadrature of the pdf on [0, 2]
        let oracle = quad::integrate(|x| p.yaglom_pdf(x), 0.0, 2.0, 200);
        assert_relative_eq!(p.yaglom_cdf(2.0), oracle, max_relative = 1e-12);
        assert_relative_eq!(p.yaglom_cdf(2.0), 1.0 - 3.0 * (-2f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn yaglom_moments() {
        let p = params(1.0);
        assert_eq!(p.yaglom_moment(0), 1.0);
        assert_eq!(p.yaglom_moment(1), 2.0);
        assert_eq!(p.yaglom_moment(2), 6.0);
        assert_eq!(params(2.0).yaglom_moment(2), 1.5);
    }

    #[test]
    fn bessel3_limit_branch_and_mass() {
        let v = bessel3_density(1.0, 0.0, 1.0);
        let expect = 2.0 / (2.0 * std::f64::consts::PI).sqrt() * (-0.5f64).exp();
        assert_relative_eq!(v, expect, max_relative = 1e-14);
        // limit branch is the continuous limit of the x > 0 formula
        let near = bessel3_density(1.0, 1e-9, 1.0);
        assert_relative_eq!(v, near, max_relative = 1e-8);
        // total mass in y for x = 1
        let mass = quad::integrate(|y| bessel3_density(1.0, 1.0, y), 0.0, 30.0, 600);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bessel3_detailed_balance() {
        let (t, x, y) = (1.0, 1.0, 2.0);
        let lhs = x * x * bessel3_density(t, x, y);
        let rhs = y * y * bessel3_density(t, y, x);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
    }

    #[test]
    fn bessel3_cdf_matches_quadrature() {
        for &(t, x) in &[(1.0, 1.0), (0.5, 2.0), (3.0, 0.7)] {
            for &y in &[0.3, 1.0, 2.5, 6.0] {
                let q = quad::integrate(|z| bessel3_density(t, x, z), 0.0, y, 400);
                assert_abs_diff_eq!(bessel3_cdf(t, x, y), q, epsilon = 1e-12);
            }
            assert_eq!(bessel3_cdf(t, x, 0.0), 0.0);
            assert_relative_eq!(bessel3_cdf(t, x, 60.0), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn doob_identity() {
        // bessel3 = e^{lambda0 t} (eta(y)/eta(x)) p_t(x,y), for every r
        let (t, x, y) = (1.0, 1.0, 2.0);
        for &r in &[0.5, 1.0, 2.0, 3.0] {
            let p = params(r);
            let lhs = (p.lambda0() * t).exp() * p.eta(y) / p.eta(x) * killed_density(p, t, x, y);
            assert_relative_eq!(lhs, bessel3_density(t, x, y), max_relative = 1e-12);
        }
    }

    #[test]
    fn killed_density_boundary_and_mass() {
        let p = params(1.0);
        assert_eq!(killed_density(p, 1.0, 1.0, 0.0), 0.0);
        let mass = quad::integrate(|y| killed_density(p, 1.0, 1.0, y), 0.0, 40.0, 800);
        assert_relative_eq!(mass, survival_probability(p, 1.0, 1.0), max_relative = 1e-10);
    }

    #[test]
    fn survival_values() {
        let p = params(1.0);
        let expect = 0.5 - 2f64.exp() * normal_cdf(-2.0);
        assert_relative_eq!(survival_probability(p, 1.0, 1.0), expect, max_relative = 1e-14);
        assert_abs_diff_eq!(expect, 0.331898, epsilon = 1e-6);
        // t -> 0+ gives 1
        assert_relative_eq!(survival_probability(p, 1e-8, 1.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn k_factor_values() {
        assert_relative_eq!(k_factor(1.0), (2.0 * std::f64::consts::PI).sqrt() / 2.0, max_relative = 1e-15);
        assert_relative_eq!(k_factor(2.0), 2.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(k_factor(4.0), 4.0 * (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn sinh_remainder_sign_bound_and_limit() {
        for &t in &[0.1, 1.0, 10.0, 1e4, 1e8] {
            for &x in &[0.2, 1.0, 5.0] {
                for &y in &[0.3, 1.0, 8.0] {
                    let rem = sinh_remainder(t, x, y);
                    assert!(rem >= 0.0, "negative remainder at t={t} x={x} y={y}");
                    let bound = x * y * (x * x + y * y) / (2.0 * t * t);
                    assert!(
                        rem <= bound * (1.0 + 1e-12),
                        "bound violated at t={t} x={x} y={y}: {rem} > {bound}"
                    );
                }
            }
        }
        // t^2 * remainder -> xy(x^2+y^2)/2 = 5 at (x, y) = (1, 2)
        let t = 1e7;
        assert_relative_eq!(t * t * sinh_remainder(t, 1.0, 2.0), 5.0, max_relative = 1e-6);
    }

    #[test]
    fn sinh_remainder_branches_agree() {
        // overlap region around the switch: compare series vs direct by
        // scaling t so (x+y)^2/2t straddles SERIES_SWITCH
        for &scale in &[0.5, 0.9, 1.0, 1.1, 2.0] {
            let (x, y) = (1.0, 2.0);
            let t = (x + y) * (x + y) / (2.0 * SERIES_SWITCH) * scale;
            let direct = {
                let u = (x - y) * (x - y) / (2.0 * t);
                let v = (x + y) * (x + y) / (2.0 * t);
                let g = |z: f64| f64::exp_m1(-z) + z;
                0.5 * (g(v) - g(u))
            };
            assert_relative_eq!(sinh_remainder(t, x, y), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn expansion_coefficient_values() {
        assert!(expansion_coefficient(2, 1.0, 1.0).is_err());
        assert_relative_eq!(
            expansion_coefficient(3, 1.0, 1.0).unwrap(),
            -4.0 / 3.0,
            max_relative = 1e-14
        );
        assert_abs_diff_eq!(expansion_coefficient(4, 1.0, 1e-12).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn expansion_partial_sums_converge_to_remainder() {
        let (t, x, y) = (10.0, 1.0, 2.0);
        let a2 = x * y * (x * x + y * y) / 2.0;
        let mut sum = a2 / (t * t);
        for n in 3..30 {
            sum += expansion_coefficient(n, x, y).unwrap() / (2.0 * t.powi(n as i32));
        }
        assert_relative_eq!(sum, sinh_remainder(t, x, y), max_relative = 1e-12);
    }

    #[test]
    fn chapman_kolmogorov() {
        let p = params(1.0);
        for &(x, s, t, y) in &[(1.0, 0.5, 0.5, 2.0), (0.7, 1.0, 2.0, 1.3), (2.0, 0.3, 1.0, 0.5)] {
            let conv = quad::integrate(
                |z| killed_density(p, s, x, z) * killed_density(p, t, z, y),
                0.0,
                50.0,
                1000,
            );
            assert_abs_diff_eq!(conv, killed_density(p, s + t, x, y), epsilon = 1e-8);
            let conv_q = quad::integrate(
                |z| bessel3_density(s, x, z) * bessel3_density(t, z, y),
                0.0,
                50.0,
                1000,
            );
            assert_abs_diff_eq!(conv_q, bessel3_density(s + t, x, y), epsilon = 1e-8);
        }
    }

    #[test]
    fn gamma_invariance() {
        // int_0^M x^2 q_t(x, y) dx -> y^2, with a Gaussian tail remainder
        let (t, y) = (1.0f64, 1.5);
        let m = y + 14.0 * t.sqrt();
        let val = quad::integrate(|x| x * x * bessel3_density(t, x, y), 0.0, m, 2000);
        // tail bound: x^2 q_t(x,y) <= (2/sqrt(2 pi t)) x y e^{-(x-y)^2/2t},
        // integrated beyond m by the Gaussian tail closed form
        let tail = {
            let norm = 2.0 / (2.0 * std::f64::consts::PI * t).sqrt();
            let a = m - y;
            norm * y * (t * (-a * a / (2.0 * t)).exp()
                + (y + a) * (2.0 * std::f64::consts::PI * t).sqrt() * normal_cdf(-a / t.sqrt()))
        };
        assert!(tail < 1e-10);
        assert_abs_diff_eq!(val, y * y, epsilon = 1e-9);
    }

    #[test]
    fn survival_matches_quadrature_lattice() {
        for &r in &[0.5, 1.0, 2.0] {
            let p = params(r);
            for &x in &[0.3, 1.0, 3.0] {
                for &t in &[0.25f64, 1.0, 4.0] {
                    let ymax = x + 14.0 * t.sqrt() + 20.0 / r;
                    let mass = quad::integrate(|y| killed_density(p, t, x, y), 0.0, ymax, 2000);
                    assert_abs_diff_eq!(mass, survival_probability(p, t, x), epsilon = 1e-10);
                }
            }
        }
    }
}
