//! Wasserstein-1, total-variation and Kolmogorov distances between
//! discretized laws, with certified truncation and interpolation error.
//!
//! The sup over `Lip_{1,1}` test functions (Lipschitz-1, value 1 at 0)
//! equals the classical CDF-integral form of W1 for differences of
//! probability measures: the constant offset `f(0)` cancels in
//! `mu(f) - nu(f)`, and `sup_{Lip_1} |mu(f) - nu(f)| = int |F_mu - F_nu|`
//! in one dimension. Total variation is taken as the sup over |f| <= 1,
//! i.e. the L1 distance of densities with range [0, 2].

use serde::Serialize;

use crate::error::{QsdError, Result};
use crate::laws::DiscretizedLaw;

/// Largest admissible first-moment error bar on the inputs of W1.
pub const FIRST_MOMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DistanceKind {
    W1,
    Tv,
    Kolmogorov,
}

impl std::fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceKind::W1 => write!(f, "w1"),
            DistanceKind::Tv => write!(f, "tv"),
            DistanceKind::Kolmogorov => write!(f, "kolmogorov"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistanceResult {
    pub value: f64,
    pub error_bound: f64,
    pub kind: DistanceKind,
}

/// Union of both grids, with 0 prepended so the leading segment is covered.
fn merged_knots(a: &DiscretizedLaw, b: &DiscretizedLaw) -> Vec<f64> {
    let mut knots = Vec::with_capacity(a.grid().len() + b.grid().len() + 1);
    knots.push(0.0);
    knots.extend_from_slice(a.grid());
    knots.extend_from_slice(b.grid());
    knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    knots.dedup();
    knots
}

/// Exact integral of |d| for a piecewise-linear d given at knots.
fn integrate_abs_pwl(knots: &[f64], d: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..knots.len() - 1 {
        let h = knots[i + 1] - knots[i];
        let (d0, d1) = (d[i], d[i + 1]);
        total += if d0 * d1 >= 0.0 {
            0.5 * h * (d0.abs() + d1.abs())
        } else {
            // sign change: two triangles
            0.5 * h * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs())
        };
    }
    total
}

/// Bound on the CDF interpolation defect of both laws, integrated:
/// per segment the piecewise-linear CDF misses the true one by at most
/// `h^2 max|F''| / 8 = h^2 max|pdf'| / 8`, with pdf' estimated from the
/// stored pdf by one-sided differences.
fn cdf_interp_error(knots: &[f64], law: &DiscretizedLaw) -> f64 {
    let mut err = 0.0;
    for w in knots.windows(2) {
        let h = w[1] - w[0];
        let slope = (law.pdf_at(w[1]) - law.pdf_at(w[0])).abs() / h.max(1e-300);
        err += h * h * h * slope / 8.0;
    }
    err
}

fn pdf_interp_error(knots: &[f64], law: &DiscretizedLaw) -> f64 {
    // L1 defect of the linear pdf between knots, bounded through the
    // curvature proxy |slope change| across neighbouring segments
    let mut err = 0.0;
    for i in 1..knots.len() - 1 {
        let h0 = knots[i] - knots[i - 1];
        let h1 = knots[i + 1] - knots[i];
        let s0 = (law.pdf_at(knots[i]) - law.pdf_at(knots[i - 1])) / h0.max(1e-300);
        let s1 = (law.pdf_at(knots[i + 1]) - law.pdf_at(knots[i])) / h1.max(1e-300);
        err += (s1 - s0).abs() * (h0 + h1).powi(2) / 8.0;
    }
    err
}

/// `W1(a, b) = int_0^inf |F_a - F_b| dy` on the merged grid.
pub fn wasserstein1(a: &DiscretizedLaw, b: &DiscretizedLaw) -> Result<DistanceResult> {
    if a.first_moment_err() > FIRST_MOMENT_TOL || b.first_moment_err() > FIRST_MOMENT_TOL {
        return Err(QsdError::Quadrature(format!(
            "first-moment error bars {} / {} exceed {FIRST_MOMENT_TOL}",
            a.first_moment_err(),
            b.first_moment_err()
        )));
    }
    let knots = merged_knots(a, b);
    let d: Vec<f64> = knots.iter().map(|&y| a.cdf_at(y) - b.cdf_at(y)).collect();
    let value = integrate_abs_pwl(&knots, &d);
    // beyond the shorter grid, |F - 1| integrates to the tail-mean bound
    let error_bound = a.tail_mean_bound()
        + b.tail_mean_bound()
        + cdf_interp_error(&knots, a)
        + cdf_interp_error(&knots, b);
    Ok(DistanceResult { value, error_bound, kind: DistanceKind::W1 })
}

/// Total variation as `int |pdf_a - pdf_b| dy`, range [0, 2].
pub fn total_variation(a: &DiscretizedLaw, b: &DiscretizedLaw) -> Result<DistanceResult> {
    let knots = merged_knots(a, b);
    let d: Vec<f64> = knots.iter().map(|&y| a.pdf_at(y) - b.pdf_at(y)).collect();
    let value = integrate_abs_pwl(&knots, &d);
    let error_bound = a.tail_mass_bound()
        + b.tail_mass_bound()
        + pdf_interp_error(&knots, a)
        + pdf_interp_error(&knots, b);
    Ok(DistanceResult { value: value.min(2.0), error_bound, kind: DistanceKind::Tv })
}

/// Kolmogorov distance: max of |F_a - F_b| over the merged knots; the
/// inter-knot modulus goes into the error bound (the piecewise-linear
/// difference attains its sup at a knot, so only the interpolation defect
/// of the true CDFs is unaccounted for).
pub fn kolmogorov(a: &DiscretizedLaw, b: &DiscretizedLaw) -> Result<DistanceResult> {
    let knots = merged_knots(a, b);
    let value = knots
        .iter()
        .map(|&y| (a.cdf_at(y) - b.cdf_at(y)).abs())
        .fold(0.0, f64::max);
    let mut modulus: f64 = 0.0;
    for w in knots.windows(2) {
        let h = w[1] - w[0];
        let p = a.pdf_at(w[0]).max(a.pdf_at(w[1])) + b.pdf_at(w[0]).max(b.pdf_at(w[1]));
        modulus = modulus.max(0.25 * h * p);
    }
    let error_bound = modulus + a.tail_mass_bound() + b.tail_mass_bound();
    Ok(DistanceResult { value: value.min(1.0), error_bound, kind: DistanceKind::Kolmogorov })
}

pub fn distance(kind: DistanceKind, a: &DiscretizedLaw, b: &DiscretizedLaw) -> Result<DistanceResult> {
    match kind {
        DistanceKind::W1 => wasserstein1(a, b),
        DistanceKind::Tv => total_variation(a, b),
        DistanceKind::Kolmogorov => kolmogorov(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::DriftParams;
    use crate::laws::{yaglom_law, DiscretizedLaw, GridSpec};
    use crate::quad;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn yaglom(r: f64) -> DiscretizedLaw {
        let p = DriftParams::new(r).unwrap();
        let spec = GridSpec::default_for(p, 1.0, 0.0).with_nodes(4000);
        yaglom_law(p, &spec).unwrap()
    }

    /// Near-Dirac at `c`: a narrow triangle of half-width `w`.
    fn near_dirac(c: f64, w: f64) -> DiscretizedLaw {
        let density = move |y: f64| {
            let d = (y - c).abs();
            if d >= w {
                0.0
            } else {
                (w - d) / (w * w)
            }
        };
        let knots: Vec<f64> = (0..=400).map(|i| c - w + 2.0 * w * i as f64 / 400.0).collect();
        DiscretizedLaw::from_unnormalized(density, knots, 0.0, 0.0).unwrap()
    }

    #[test]
    fn identical_laws_are_at_distance_zero() {
        let a = yaglom(1.0);
        assert_eq!(wasserstein1(&a, &a).unwrap().value, 0.0);
        assert_eq!(total_variation(&a, &a).unwrap().value, 0.0);
        assert_eq!(kolmogorov(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn w1_between_yaglom_scalings() {
        // Gamma(2)/r laws are stochastically ordered: W1 = mean gap = 1
        let a = yaglom(1.0);
        let b = yaglom(2.0);
        let d = wasserstein1(&a, &b).unwrap();
        assert_abs_diff_eq!(d.value, 1.0, epsilon = 1e-6);
        // CDF-integral oracle on a fine grid
        let p1 = DriftParams::new(1.0).unwrap();
        let p2 = DriftParams::new(2.0).unwrap();
        let oracle = quad::integrate(
            |y| (p1.yaglom_cdf(y) - p2.yaglom_cdf(y)).abs(),
            0.0,
            60.0,
            2000,
        );
        assert!(
            (d.value - oracle).abs() <= d.error_bound + 1e-10,
            "{} vs oracle {} (bound {})",
            d.value,
            oracle,
            d.error_bound
        );
    }

    #[test]
    fn w1_between_near_diracs() {
        let a = near_dirac(1.0, 1e-4);
        let b = near_dirac(3.0, 1e-4);
        assert_abs_diff_eq!(wasserstein1(&a, &b).unwrap().value, 2.0, epsilon = 1e-3);
        assert_abs_diff_eq!(kolmogorov(&a, &b).unwrap().value, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(total_variation(&a, &b).unwrap().value, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn tv_between_yaglom_scalings() {
        let a = yaglom(1.0);
        let b = yaglom(2.0);
        let d = total_variation(&a, &b).unwrap();
        // oracle: int |x e^{-x} - 4 x e^{-2x}| dx, sign change at ln 4
        let p1 = DriftParams::new(1.0).unwrap();
        let p2 = DriftParams::new(2.0).unwrap();
        let oracle = quad::integrate(
            |x| (p1.yaglom_pdf(x) - p2.yaglom_pdf(x)).abs(),
            0.0,
            60.0,
            4000,
        );
        assert_abs_diff_eq!(d.value, oracle, epsilon = 1e-4);
    }

    #[test]
    fn kolmogorov_below_half_tv() {
        // the inequality holds for the underlying laws; on discretized laws
        // it can be violated by at most the combined evaluation error
        for (a, b) in [(yaglom(1.0), yaglom(2.0)), (yaglom(1.0), yaglom(1.3))] {
            let k = kolmogorov(&a, &b).unwrap();
            let tv = total_variation(&a, &b).unwrap();
            let slack = k.error_bound + 0.5 * tv.error_bound;
            assert!(k.value <= 0.5 * tv.value + slack, "k={} tv={}", k.value, tv.value);
        }
    }

    #[test]
    fn w1_dominates_mean_gap() {
        let a = yaglom(1.0);
        let b = yaglom(2.0);
        let d = wasserstein1(&a, &b).unwrap();
        let gap = (a.first_moment() - b.first_moment()).abs()
            - a.first_moment_err()
            - b.first_moment_err();
        assert!(d.value >= gap - 1e-12);
    }

    #[test]
    fn refinement_stability() {
        let p = DriftParams::new(1.0).unwrap();
        let coarse = GridSpec::default_for(p, 1.0, 0.0).with_nodes(4000);
        let fine = GridSpec::default_for(p, 1.0, 0.0).with_nodes(8000);
        let m = crate::measures::InitialMeasure::dirac(1.0).unwrap();
        let a1 = crate::laws::conditional_law(p, &m, 1.0, &coarse).unwrap();
        let a2 = crate::laws::conditional_law(p, &m, 1.0, &fine).unwrap();
        let y1 = yaglom_law(p, &coarse).unwrap();
        let y2 = yaglom_law(p, &fine).unwrap();
        let d1 = wasserstein1(&a1, &y1).unwrap();
        let d2 = wasserstein1(&a2, &y2).unwrap();
        assert!((d1.value - d2.value).abs() <= d1.error_bound, "{} vs bound {}", (d1.value - d2.value).abs(), d1.error_bound);
        let t1 = total_variation(&a1, &y1).unwrap();
        let t2 = total_variation(&a2, &y2).unwrap();
        assert!((t1.value - t2.value).abs() <= t1.error_bound);
        let k1 = kolmogorov(&a1, &y1).unwrap();
        let k2 = kolmogorov(&a2, &y2).unwrap();
        assert!((k1.value - k2.value).abs() <= k1.error_bound);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn triangle_and_symmetry(r1 in 0.6f64..2.5, r2 in 0.6f64..2.5, r3 in 0.6f64..2.5) {
            let (a, b, c) = (yaglom(r1), yaglom(r2), yaglom(r3));
            for kind in [DistanceKind::W1, DistanceKind::Tv, DistanceKind::Kolmogorov] {
                let ab = distance(kind, &a, &b).unwrap();
                let ba = distance(kind, &b, &a).unwrap();
                let ac = distance(kind, &a, &c).unwrap();
                let cb = distance(kind, &c, &b).unwrap();
                prop_assert!((ab.value - ba.value).abs() <= 1e-12);
                let slack = 2.0 * (ab.error_bound + ac.error_bound + cb.error_bound) + 1e-12;
                prop_assert!(ab.value <= ac.value + cb.value + slack);
            }
        }
    }
}
