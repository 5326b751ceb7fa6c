//! Discretized one-dimensional laws: the conditional law
//! `P_mu(X_t in . | tau_0 > t)`, the Q-process marginal, the time-s law
//! conditioned on survival to time t, and the K_t-normalised functionals.
//!
//! All densities are assembled from the difference-of-Gaussians form of
//! `sinh(xy/t) e^{-(x^2+y^2)/2t}`, in which the `e^{-lambda_0 t}` factor
//! cancels analytically, so construction stays stable far beyond the point
//! where the raw killed density underflows.

use serde::Serialize;

use crate::analytic::{
    bessel3_density, sinh_gauss, sinh_remainder, survival_probability, DriftParams,
};
use crate::error::{QsdError, Result};
use crate::measures::InitialMeasure;
use crate::quad;

/// Hybrid geometric-then-linear evaluation grid on (0, y_max].
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub y_max: f64,
    pub y_knee: f64,
    pub nodes: usize,
}

impl GridSpec {
    /// Default grid: the bulk of every conditional law sits on the 1/r
    /// scale while transient mass travels like sqrt(t), so
    /// `y_max = max(20/r, support + 12 sqrt(t))`.
    pub fn default_for(params: DriftParams, t: f64, support_max: f64) -> Self {
        let y_max = (20.0 / params.r()).max(support_max + 12.0 * t.sqrt());
        Self { y_max, y_knee: (1.0 / params.r()).min(y_max / 10.0), nodes: 4000 }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    /// Knots: a geometric quarter from `y_knee * 1e-4` up to `y_knee`,
    /// then linear up to `y_max`.
    pub fn knots(&self) -> Vec<f64> {
        assert!(self.nodes >= 16 && self.y_knee > 0.0 && self.y_max > self.y_knee);
        let n_geo = self.nodes / 4;
        let n_lin = self.nodes - n_geo;
        let y0 = self.y_knee * 1e-4;
        let ratio = (self.y_knee / y0).ln() / (n_geo as f64);
        let mut knots: Vec<f64> = (0..n_geo).map(|i| y0 * (ratio * i as f64).exp()).collect();
        let step = (self.y_max - self.y_knee) / n_lin as f64;
        knots.extend((0..=n_lin).map(|i| self.y_knee + step * i as f64));
        knots
    }
}

/// A law on (0, infinity) discretized on a grid, with certified tail
/// bounds for the mass and the first moment beyond the grid.
#[derive(Debug, Clone)]
pub struct DiscretizedLaw {
    grid: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    tail_mass_bound: f64,
    tail_mean_bound: f64,
    first_moment: f64,
    first_moment_err: f64,
}

impl DiscretizedLaw {
    /// Builds a law from an unnormalised density, normalising by the grid
    /// mass plus the certified raw tail bound so that
    /// `cdf.last() + tail_mass_bound = 1`.
    pub fn from_unnormalized<F: Fn(f64) -> f64>(
        density: F,
        knots: Vec<f64>,
        tail_mass_raw: f64,
        tail_mean_raw: f64,
    ) -> Result<Self> {
        let masses = quad::panel_masses(&density, &knots);
        let mut cdf = Vec::with_capacity(knots.len());
        // the first knot is > 0; its panel from 0 is included
        let lead = quad::gl16(&density, 0.0, knots[0]);
        let mut acc = lead;
        cdf.push(acc);
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        let total = acc + tail_mass_raw;
        if !(total.is_finite() && total > 0.0) {
            return Err(QsdError::Quadrature(format!("law mass {total}")));
        }
        let pdf: Vec<f64> = knots.iter().map(|&y| density(y) / total).collect();
        cdf.iter_mut().for_each(|c| *c /= total);
        let mean_body = quad::gl16(&|y| y * density(y), 0.0, knots[0])
            + quad::integrate_knots(|y| y * density(y), &knots)
            ;
        let tail_mass_bound = tail_mass_raw / total;
        let tail_mean_bound = tail_mean_raw / total;
        let first_moment = mean_body / total;
        let law = Self {
            grid: knots,
            pdf,
            cdf,
            tail_mass_bound,
            tail_mean_bound,
            first_moment,
            first_moment_err: tail_mean_bound + 1e-12 * first_moment.abs(),
        };
        law.validate()?;
        Ok(law)
    }

    /// Builds a law from an exact pdf/cdf pair (used for the Yaglom limit,
    /// whose distribution function is closed-form).
    pub fn from_exact<F, G>(pdf_f: F, cdf_f: G, knots: Vec<f64>, tail_mean_raw: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64,
    {
        let pdf: Vec<f64> = knots.iter().map(|&y| pdf_f(y)).collect();
        let cdf: Vec<f64> = knots.iter().map(|&y| cdf_f(y)).collect();
        let tail = 1.0 - cdf.last().unwrap();
        let mean = quad::gl16(&|y| y * pdf_f(y), 0.0, knots[0])
            + quad::integrate_knots(|y| y * pdf_f(y), &knots);
        let law = Self {
            grid: knots,
            pdf,
            cdf,
            tail_mass_bound: tail.max(0.0),
            tail_mean_bound: tail_mean_raw,
            first_moment: mean,
            first_moment_err: tail_mean_raw + 1e-12 * mean.abs(),
        };
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        let ok_mono = self.cdf.windows(2).all(|w| w[1] >= w[0] - 1e-14);
        let last = *self.cdf.last().unwrap();
        let closed = (last + self.tail_mass_bound - 1.0).abs() <= 1e-8;
        if !(self.cdf[0] >= 0.0 && ok_mono && closed && self.pdf.iter().all(|p| *p >= -1e-300)) {
            return Err(QsdError::Quadrature(format!(
                "law invariants violated: cdf0={} last+tail={}",
                self.cdf[0],
                last + self.tail_mass_bound
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn tail_mass_bound(&self) -> f64 {
        self.tail_mass_bound
    }

    pub fn tail_mean_bound(&self) -> f64 {
        self.tail_mean_bound
    }

    pub fn first_moment(&self) -> f64 {
        self.first_moment
    }

    pub fn first_moment_err(&self) -> f64 {
        self.first_moment_err
    }

    pub fn y_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Piecewise-linear CDF; 0 at 0, constant beyond the grid.
    pub fn cdf_at(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= self.y_max() {
            return *self.cdf.last().unwrap();
        }
        if y <= self.grid[0] {
            return self.cdf[0] * y / self.grid[0];
        }
        let i = match self.grid.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return self.cdf[i],
            Err(i) => i - 1,
        };
        let w = (y - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    /// Piecewise-linear pdf; 0 outside the grid.
    pub fn pdf_at(&self, y: f64) -> f64 {
        if y < self.grid[0] || y > self.y_max() {
            return 0.0;
        }
        let i = match self.grid.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return self.pdf[i],
            Err(i) => i - 1,
        };
        let w = (y - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        self.pdf[i] * (1.0 - w) + self.pdf[i + 1] * w
    }

    /// Expectation of `f` against the discretized pdf, by panel quadrature.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        quad::gl16(&|y| f(y) * self.pdf_at(y), 0.0, self.grid[0])
            + quad::integrate_knots(|y| f(y) * self.pdf_at(y), &self.grid)
    }

    /// CSV body with header `y,pdf,cdf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("y,pdf,cdf\n");
        for i in 0..self.grid.len() {
            s.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", self.grid[i], self.pdf[i], self.cdf[i]));
        }
        s
    }
}

/// Provenance sidecar written next to a law CSV.
#[derive(Debug, Clone, Serialize)]
pub struct LawSidecar {
    pub schema_version: u32,
    pub tail_mass_bound: f64,
    pub r: f64,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub measure_hash: String,
}

/// Certified bound on `int_M^inf y^k e^{-beta y} e^{-(y-x)^2/2t} dy`
/// for `M >= x`: split the Gaussian in half and bound one half by its
/// value at `M`, the other by the full-line moment.
fn gauss_tail_bound(m_cut: f64, x: f64, t: f64, beta: f64, k: u32) -> f64 {
    debug_assert!(m_cut >= x);
    let half = (-(m_cut - x) * (m_cut - x) / (4.0 * t)).exp() * (-beta * m_cut).exp();
    let full = (4.0 * std::f64::consts::PI * t).sqrt();
    let moment = match k {
        0 => full,
        1 => x.abs() * full + full * (2.0 * t).sqrt(), // |y| <= |x| + |y-x|; E|y-x| < sqrt(2t')
        2 => (x * x + 2.0 * t) * full,
        _ => unreachable!(),
    };
    half * moment
}

/// Quadrature atoms `(x_i, w_i)` discretizing the measure for inner
/// x-integrals: exact atoms for atomic measures, a composite Gauss-Legendre
/// rule against the piecewise-linear density for grid measures.
pub(crate) fn measure_atoms(measure: &InitialMeasure) -> Vec<(f64, f64)> {
    if let Some(atoms) = measure.atoms() {
        return atoms.to_vec();
    }
    // 16-point panels on a coarsened cover of the measure grid
    let spec = measure.to_spec();
    let (x, pdf) = match &spec {
        crate::measures::MeasureSpec::Grid { x, pdf, .. } => (x.clone(), pdf.clone()),
        _ => unreachable!(),
    };
    let interp = |t: f64| -> f64 {
        match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => pdf[i],
            Err(0) => 0.0,
            Err(i) if i >= x.len() => 0.0,
            Err(i) => {
                let w = (t - x[i - 1]) / (x[i] - x[i - 1]);
                pdf[i - 1] * (1.0 - w) + pdf[i] * w
            }
        }
    };
    let panels = 128usize;
    let (a, b) = (x[0], *x.last().unwrap());
    let h = (b - a) / panels as f64;
    let mut atoms = Vec::with_capacity(panels * 16);
    // reuse the 16-point rule through a weighted-sample trick: integrate
    // delta-like functionals by collecting (node, weight * pdf(node))
    for p in 0..panels {
        let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
        let c = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (xi, wi) in gl16_nodes() {
            for sgn in [-1.0, 1.0] {
                let node = c + sgn * half * xi;
                atoms.push((node, wi * half * interp(node)));
            }
        }
    }
    atoms
}

fn gl16_nodes() -> [(f64, f64); 8] {
    [
        (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
        (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
        (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
        (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
        (0.755_404_408_355_003_0, 0.124_628_971_255_533_9),
        (0.865_631_202_387_831_7, 0.095_158_511_682_492_8),
        (0.944_575_023_073_232_6, 0.062_253_523_938_647_9),
        (0.989_400_934_991_649_9, 0.027_152_459_411_754_1),
    ]
}

/// The Yaglom limit as a discretized law with exact CDF values.
pub fn yaglom_law(params: DriftParams, spec: &GridSpec) -> Result<DiscretizedLaw> {
    let knots = spec.knots();
    let r = params.r();
    let m = *knots.last().unwrap();
    // int_M^inf (1 - F) dy = e^{-rM}(M + 2/r)
    let tail_mean = (-r * m).exp() * (m + 2.0 / r);
    DiscretizedLaw::from_exact(
        |y| params.yaglom_pdf(y),
        |y| params.yaglom_cdf(y),
        knots,
        tail_mean,
    )
}

/// `P_mu(X_t in . | tau_0 > t)` as a discretized law.
///
/// The unnormalised density
/// `h(y) = int (e^{rx}/x) e^{-ry} [e^{-(y-x)^2/2t} - e^{-(y+x)^2/2t}] mu(dx)`
/// carries no `e^{-lambda_0 t}` factor; normalisation is by quadrature.
pub fn conditional_law(
    params: DriftParams,
    measure: &InitialMeasure,
    t: f64,
    spec: &GridSpec,
) -> Result<DiscretizedLaw> {
    if !(t > 0.0) {
        return Err(QsdError::InvalidArgument(format!("t = {t} must be positive")));
    }
    let surv = measure.integrate(|x| survival_probability(params, t, x))?;
    if surv < 1e-300 {
        return Err(QsdError::Underflow(format!(
            "P_mu(tau_0 > {t}) = {surv} < 1e-300; use the K_t-normalised path"
        )));
    }
    let r = params.r();
    let atoms = measure_atoms(measure);
    let knots = spec.knots();
    let m_cut = *knots.last().unwrap();
    let density = |y: f64| -> f64 {
        atoms
            .iter()
            .map(|&(x, w)| w * (r * x).exp() / x * (-r * y).exp() * 2.0 * sinh_gauss(t, x, y))
            .sum()
    };
    let (mut tail0, mut tail1) = (0.0, 0.0);
    for &(x, w) in &atoms {
        let c = w * (r * x).exp() / x;
        tail0 += c * gauss_tail_bound(m_cut, x, t, r, 0);
        tail1 += c * gauss_tail_bound(m_cut, x, t, r, 1);
    }
    let mut law = DiscretizedLaw::from_unnormalized(density, knots, tail0, tail1)?;
    // the measure's own declared tail is a relative slop on the whole law
    law.tail_mass_bound += measure.tail_bound();
    Ok(law)
}

/// `Q_{eta o mu}(X_s in .)`: the Bessel-3 marginal started from the
/// eta-reweighted initial measure.
pub fn qprocess_marginal(
    measure: &InitialMeasure,
    params: DriftParams,
    s: f64,
    spec: &GridSpec,
) -> Result<DiscretizedLaw> {
    if !(s > 0.0) {
        return Err(QsdError::InvalidArgument(format!("s = {s} must be positive")));
    }
    let eta_mu = measure.eta_transform(params)?;
    let atoms = measure_atoms(&eta_mu);
    let knots = spec.knots();
    let m_cut = *knots.last().unwrap();
    let density = |y: f64| -> f64 {
        atoms.iter().map(|&(x, w)| w * bessel3_density(s, x, y)).sum()
    };
    let (mut tail0, mut tail1) = (0.0, 0.0);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s).sqrt();
    for &(x, w) in &atoms {
        let c = w * norm / x;
        tail0 += c * gauss_tail_bound(m_cut, x, s, 0.0, 1);
        tail1 += c * gauss_tail_bound(m_cut, x, s, 0.0, 2);
    }
    let mut law = DiscretizedLaw::from_unnormalized(density, knots, tail0, tail1)?;
    law.tail_mass_bound += eta_mu.tail_bound();
    Ok(law)
}

/// `u (gamma(1/eta) - K_u Q_u[1/eta](y)) = (u r^2 / y) int e^{-rz} rem(u,y,z) dz`,
/// the 1/u-order defect of the survival-ratio normaliser at state `y`.
/// Converges to `psi_{delta_y}(1) = (y^2 + alpha(z^2))/2` as `u -> inf`.
pub(crate) fn unit_gap(params: DriftParams, u: f64, y: f64) -> f64 {
    let r = params.r();
    let z_cut = y + 12.0 * u.sqrt() + 40.0 / r;
    let panels = ((z_cut * 4.0) as usize).clamp(64, 4000);
    let integral = quad::integrate(
        |z| {
            if z <= 0.0 {
                0.0
            } else {
                (-r * z).exp() * sinh_remainder(u, y, z)
            }
        },
        0.0,
        z_cut,
        panels,
    );
    u * u * r * r / y * integral
}

/// Direct evaluation of `K_u Q_u[1/eta](y)`, accurate for small `u` where
/// `1 - unit_gap/u` would cancel.
pub(crate) fn unit_kt_direct(params: DriftParams, u: f64, y: f64) -> f64 {
    let r = params.r();
    let z_cut = y + 12.0 * u.sqrt() + 40.0 / r;
    let panels = ((z_cut * 4.0) as usize).clamp(64, 4000);
    let integral = quad::integrate(
        |z| {
            if z <= 0.0 {
                0.0
            } else {
                (-r * z).exp() * sinh_gauss(u, y, z)
            }
        },
        0.0,
        z_cut,
        panels,
    );
    u * r * r / y * integral
}

/// `K_u Q_u[1/eta](y)`: gap form for u >= 1, direct form below.
pub(crate) fn unit_kt(params: DriftParams, u: f64, y: f64) -> f64 {
    if u >= 1.0 {
        1.0 - unit_gap(params, u, y) / u
    } else {
        unit_kt_direct(params, u, y)
    }
}

/// Tabulated `y -> K_u Q_u[1/eta](y)` on [y_lo, y_hi]: each evaluation is
/// itself a quadrature, so law construction and sweep integrands
/// interpolate a precomputed table instead of nesting quadratures.
pub(crate) struct UnitKtTable {
    params: DriftParams,
    u: f64,
    ys: Vec<f64>,
    vals: Vec<f64>,
}

impl UnitKtTable {
    pub fn build(params: DriftParams, u: f64, y_hi: f64, nodes: usize) -> Self {
        let y_lo = y_hi * 1e-4;
        let ys: Vec<f64> = (0..nodes)
            .map(|i| y_lo + (y_hi - y_lo) * i as f64 / (nodes - 1) as f64)
            .collect();
        let vals = ys.iter().map(|&y| unit_kt(params, u, y)).collect();
        Self { params, u, ys, vals }
    }

    /// Node count matched to the curvature scale of the map, which
    /// shrinks like sqrt(u) for short horizons.
    pub fn recommended_nodes(u: f64) -> usize {
        if u >= 1.0 {
            1024
        } else {
            ((1024.0 / u.sqrt()) as usize).min(8192)
        }
    }

    pub fn kt_at(&self, y: f64) -> f64 {
        let ys = &self.ys;
        let n = ys.len();
        if y <= ys[0] {
            return unit_kt(self.params, self.u, y.max(ys[0] * 1e-6));
        }
        if y >= ys[n - 1] {
            return self.vals[n - 1];
        }
        let i = match ys.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return self.vals[i],
            Err(i) => i - 1,
        };
        // cubic through the four nodes around the cell, window clamped at the edges
        let lo = i.saturating_sub(1).min(n - 4);
        let mut acc = 0.0;
        for j in lo..lo + 4 {
            let mut w = 1.0;
            for k in lo..lo + 4 {
                if k != j {
                    w *= (y - ys[k]) / (ys[j] - ys[k]);
                }
            }
            acc += w * self.vals[j];
        }
        acc
    }

    /// `u (1 - K_u Q_u[1/eta](y))`, the tabulated unit gap.
    pub fn gap_at(&self, y: f64) -> f64 {
        self.u * (1.0 - self.kt_at(y))
    }
}

/// `P_mu(X_s in . | tau_0 > t)` for `0 < s <= t`. For `s = t` this is
/// `conditional_law`; otherwise the density is proportional to
/// `[int p_s(x,y) mu(dx)] eta(y) K_{t-s} Q_{t-s}[1/eta](y)`, in which the
/// common factor `e^{-lambda_0 (t-s)} / K_{t-s}` of the survival
/// probabilities has been cancelled.
pub fn time_s_conditional_law(
    params: DriftParams,
    measure: &InitialMeasure,
    s: f64,
    t: f64,
    spec: &GridSpec,
) -> Result<DiscretizedLaw> {
    if !(s > 0.0 && s <= t) {
        return Err(QsdError::InvalidArgument(format!("need 0 < s <= t, got s={s} t={t}")));
    }
    if s == t {
        return conditional_law(params, measure, t, spec);
    }
    let u = t - s;
    let r = params.r();
    let atoms = measure_atoms(measure);
    let knots = spec.knots();
    let m_cut = *knots.last().unwrap();
    let table = UnitKtTable::build(params, u, m_cut, UnitKtTable::recommended_nodes(u));
    // p_s(x,y) eta(y) = (e^{rx - lambda_0 s}/(r^2 sqrt(2 pi s))) y * 2 sinh_gauss;
    // constants independent of y are dropped (normalisation absorbs them)
    let density = |y: f64| -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let base: f64 = atoms
            .iter()
            .map(|&(x, w)| w * (r * x).exp() / x * y * 2.0 * sinh_gauss(s, x, y))
            .sum();
        base * table.kt_at(y)
    };
    // K_u Q_u[1/eta] <= gamma(1/eta) = 1, so the q-process-marginal tail
    // bound covers this law as well
    let (mut tail0, mut tail1) = (0.0, 0.0);
    for &(x, w) in &atoms {
        let c = w * (r * x).exp() / x;
        tail0 += c * gauss_tail_bound(m_cut, x, s, 0.0, 1);
        tail1 += c * gauss_tail_bound(m_cut, x, s, 0.0, 2);
    }
    let mut law = DiscretizedLaw::from_unnormalized(density, knots, tail0, tail1)?;
    law.tail_mass_bound += measure.tail_bound();
    Ok(law)
}

/// `K_t mu Q_t f`: the double integral
/// `int int f(y) t (y/x) sinh(xy/t) e^{-(x^2+y^2)/2t} dy mu(dx)`,
/// through the stable product form. `y_cut` is the caller-certified point
/// beyond which `|f(y)| y^4` is negligible.
pub fn kt_mu_qt<F: Fn(f64) -> f64>(
    measure: &InitialMeasure,
    t: f64,
    f: F,
    y_cut: f64,
) -> Result<f64> {
    if !(y_cut.is_finite() && y_cut > 0.0) {
        return Err(QsdError::Quadrature(format!(
            "cannot certify truncation: y_cut = {y_cut}"
        )));
    }
    let hi = y_cut.max(measure.support_max() + 12.0 * t.sqrt());
    let panels = ((hi * 8.0) as usize).clamp(200, 20_000);
    let atoms = measure_atoms(measure);
    let v = atoms
        .iter()
        .map(|&(x, w)| {
            w * quad::integrate(
                |y| {
                    if y <= 0.0 {
                        0.0
                    } else {
                        f(y) * t * y / x * sinh_gauss(t, x, y)
                    }
                },
                0.0,
                hi,
                panels,
            )
        })
        .sum::<f64>();
    if !v.is_finite() {
        return Err(QsdError::Quadrature("K_t mu Q_t f not finite".into()));
    }
    Ok(v)
}

/// `gamma(f) - K_t mu Q_t f`, computed directly from the nonnegative
/// remainder so no cancellation occurs even when the gap is O(1/t):
/// `int int f(y) t (y/x) [xy/t - sinh(xy/t) e^{-(x^2+y^2)/2t}] dy mu(dx)`.
pub fn kt_gap<F: Fn(f64) -> f64>(
    measure: &InitialMeasure,
    t: f64,
    f: F,
    y_cut: f64,
) -> Result<f64> {
    if !(y_cut.is_finite() && y_cut > 0.0) {
        return Err(QsdError::Quadrature(format!(
            "cannot certify truncation: y_cut = {y_cut}"
        )));
    }
    let panels = ((y_cut * 8.0) as usize).clamp(200, 20_000);
    let atoms = measure_atoms(measure);
    let v = atoms
        .iter()
        .map(|&(x, w)| {
            w * quad::integrate(
                |y| {
                    if y <= 0.0 {
                        0.0
                    } else {
                        f(y) * t * y / x * sinh_remainder(t, x, y)
                    }
                },
                0.0,
                y_cut,
                panels,
            )
        })
        .sum::<f64>();
    if !v.is_finite() {
        return Err(QsdError::Quadrature("gamma(f) - K_t mu Q_t f not finite".into()));
    }
    Ok(v)
}

/// `gamma(f) = int f(y) y^2 dy` on (0, y_cut].
pub fn gamma_functional<F: Fn(f64) -> f64>(f: F, y_cut: f64) -> f64 {
    let panels = ((y_cut * 8.0) as usize).clamp(200, 20_000);
    quad::integrate(|y| f(y) * y * y, 0.0, y_cut, panels)
}

/// Grid-independent sanity hook used by tests: normalisation of the
/// conditional law against the closed-form survival probability.
pub fn conditional_mass_check(
    params: DriftParams,
    measure: &InitialMeasure,
    t: f64,
    spec: &GridSpec,
) -> Result<f64> {
    let law = conditional_law(params, measure, t, spec)?;
    Ok(law.cdf().last().unwrap() + law.tail_mass_bound())
}
