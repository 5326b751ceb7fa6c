//! Initial measures on (0, infinity): finite atomic mixtures and
//! piecewise-linear grid densities with a declared tail mass bound.
//!
//! Grid measures *are* their piecewise-linear density plus the declared
//! tail; every integral is taken against that object, and tail
//! contributions of unbounded integrands are modelled by an exponential
//! continuation at the decay rate fitted from the last grid cells. The
//! fit is what gates the exponential-moment integrability checks: a fitted decay
//! rate at or below the drift `r` is reported as non-finite.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::DriftParams;
use crate::error::{QsdError, Result};
use crate::quad;

/// Overflow threshold above which a moment is reported as non-finite.
pub const OVERFLOW_THRESHOLD: f64 = 1e300;

/// JSON wire format for measures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MeasureSpec {
    Atomic { atoms: Vec<(f64, f64)> },
    Grid { x: Vec<f64>, pdf: Vec<f64>, tail: f64 },
}

#[derive(Debug, Clone)]
enum Kind {
    Atomic(Vec<(f64, f64)>),
    Grid { x: Vec<f64>, pdf: Vec<f64>, tail: f64 },
}

/// A probability measure on (0, infinity).
#[derive(Debug, Clone)]
pub struct InitialMeasure {
    kind: Kind,
}

/// Result of a (possibly exponentially weighted) moment computation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentReport {
    pub k: u32,
    /// true if the integrand carried the weight `e^{r x}`
    pub exponential: bool,
    /// `+inf` sentinel when non-finite
    pub value: f64,
    pub finite: bool,
}

impl InitialMeasure {
    pub fn atomic(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(QsdError::InvalidMeasure("no atoms".into()));
        }
        let mut mass = 0.0;
        for &(x, w) in &atoms {
            if !(x > 0.0) || !x.is_finite() {
                return Err(QsdError::InvalidMeasure(format!("atom location {x} not in (0, inf)")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(QsdError::InvalidMeasure(format!("atom weight {w} not positive")));
            }
            mass += w;
        }
        if (mass - 1.0).abs() > 1e-12 {
            return Err(QsdError::InvalidMeasure(format!(
                "atomic weights sum to {mass}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { kind: Kind::Atomic(atoms) })
    }

    pub fn dirac(x: f64) -> Result<Self> {
        Self::atomic(vec![(x, 1.0)])
    }

    pub fn grid(x: Vec<f64>, pdf: Vec<f64>, tail: f64) -> Result<Self> {
        if x.len() < 2 || x.len() != pdf.len() {
            return Err(QsdError::InvalidMeasure("grid needs >= 2 matching nodes".into()));
        }
        if !(x[0] > 0.0) {
            return Err(QsdError::InvalidMeasure("grid nodes must be positive".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QsdError::InvalidMeasure("grid not strictly increasing".into()));
        }
        if pdf.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(QsdError::InvalidMeasure("density values must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&tail) {
            return Err(QsdError::InvalidMeasure(format!("tail bound {tail} not in [0, 1)")));
        }
        let mass = trapezoid(&x, &pdf) + tail;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(QsdError::InvalidMeasure(format!(
                "trapezoid mass + tail = {mass}, expected 1 within 1e-8"
            )));
        }
        Ok(Self { kind: Kind::Grid { x, pdf, tail } })
    }

    /// Grid discretization of the Yaglom limit `r^2 x e^{-rx}` on
    /// (0, x_max], normalised so trapezoid mass + tail is exactly 1.
    pub fn yaglom_grid(params: DriftParams, x_max: f64, n: usize) -> Result<Self> {
        Self::from_density(|x| params.yaglom_pdf(x), x_max, n)
    }

    /// Grid measure with density proportional to `e^{-rate x}`.
    pub fn exp_density(rate: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(QsdError::InvalidMeasure(format!("decay rate {rate} not positive")));
        }
        Self::from_density(|x| rate * (-rate * x).exp(), x_max, n)
    }

    /// Grid measure from an unnormalised density evaluated on a uniform
    /// grid over (0, x_max]; the tail bound is the fitted exponential
    /// continuation beyond x_max.
    pub fn from_density<F: Fn(f64) -> f64>(f: F, x_max: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(QsdError::InvalidMeasure("need at least 8 grid nodes".into()));
        }
        let x0 = x_max * 1e-9;
        let x: Vec<f64> = (0..n)
            .map(|i| x0 + (x_max - x0) * i as f64 / (n - 1) as f64)
            .collect();
        let mut pdf: Vec<f64> = x.iter().map(|&xi| f(xi)).collect();
        if pdf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(QsdError::InvalidMeasure("density not finite and nonnegative".into()));
        }
        let mass = trapezoid(&x, &pdf);
        let tail_raw = match fitted_decay(&x, &pdf) {
            Some(rho) if rho > 0.0 => pdf[n - 1] / rho,
            _ => 0.0,
        };
        let scale = 1.0 / (mass + tail_raw);
        pdf.iter_mut().for_each(|p| *p *= scale);
        Self::grid(x, pdf, tail_raw * scale)
    }

    pub fn from_spec(spec: MeasureSpec) -> Result<Self> {
        match spec {
            MeasureSpec::Atomic { atoms } => Self::atomic(atoms),
            MeasureSpec::Grid { x, pdf, tail } => Self::grid(x, pdf, tail),
        }
    }

    pub fn to_spec(&self) -> MeasureSpec {
        match &self.kind {
            Kind::Atomic(atoms) => MeasureSpec::Atomic { atoms: atoms.clone() },
            Kind::Grid { x, pdf, tail } => {
                MeasureSpec::Grid { x: x.clone(), pdf: pdf.clone(), tail: *tail }
            }
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_spec(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_spec()).expect("measure serialization")
    }

    /// SHA-256 of the wire form, for run manifests.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_json().as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self.kind, Kind::Atomic(_))
    }

    pub fn atoms(&self) -> Option<&[(f64, f64)]> {
        match &self.kind {
            Kind::Atomic(a) => Some(a),
            _ => None,
        }
    }

    pub fn tail_bound(&self) -> f64 {
        match &self.kind {
            Kind::Atomic(_) => 0.0,
            Kind::Grid { tail, .. } => *tail,
        }
    }

    /// Largest atom location, or the last grid node.
    pub fn support_max(&self) -> f64 {
        match &self.kind {
            Kind::Atomic(atoms) => atoms.iter().map(|a| a.0).fold(0.0, f64::max),
            Kind::Grid { x, .. } => *x.last().unwrap(),
        }
    }

    /// `mu(f) = int f dmu`. For grid measures the integral runs against the
    /// piecewise-linear density; the declared tail bound is not added (it
    /// bounds the omitted mass and is reported separately by callers that
    /// need a certified error bar).
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let v = match &self.kind {
            Kind::Atomic(atoms) => atoms.iter().map(|&(x, w)| w * f(x)).sum(),
            Kind::Grid { x, pdf, .. } => {
                quad::integrate_knots(|t| f(t) * interp(x, pdf, t), x)
            }
        };
        if !v.is_finite() {
            return Err(QsdError::InvalidMeasure(
                "integrand non-finite on the measure support".into(),
            ));
        }
        Ok(v)
    }

    /// The reweighted measure `eta o mu (dx) = eta(x) mu(dx) / mu(eta)`.
    pub fn eta_transform(&self, params: DriftParams) -> Result<InitialMeasure> {
        match &self.kind {
            Kind::Atomic(atoms) => {
                let reweighted: Vec<(f64, f64)> =
                    atoms.iter().map(|&(x, w)| (x, w * params.eta(x))).collect();
                let norm: f64 = reweighted.iter().map(|a| a.1).sum();
                if !norm.is_finite() || norm <= 0.0 {
                    return Err(QsdError::Integrability(format!(
                        "mu(eta) = {norm}, cannot reweight"
                    )));
                }
                InitialMeasure::atomic(
                    reweighted.into_iter().map(|(x, w)| (x, w / norm)).collect(),
                )
            }
            Kind::Grid { x, pdf, tail } => {
                let rho = fitted_decay(x, pdf).ok_or_else(|| {
                    QsdError::Integrability("cannot fit tail decay of grid density".into())
                })?;
                let r = params.r();
                if rho <= r {
                    return Err(QsdError::Integrability(format!(
                        "fitted tail decay {rho:.6} <= drift {r}: mu(eta) diverges"
                    )));
                }
                let mut new_pdf: Vec<f64> =
                    x.iter().zip(pdf).map(|(&xi, &p)| p * params.eta(xi)).collect();
                // tail mass carried at rate rho beyond the last node, weighted by eta
                let xe = *x.last().unwrap();
                let tail_eta = tail
                    * rho
                    * ((r * xe).exp() / (r * r))
                    * (xe / (rho - r) + 1.0 / ((rho - r) * (rho - r)));
                let norm = trapezoid(x, &new_pdf) + tail_eta;
                if !norm.is_finite() || norm <= 0.0 {
                    return Err(QsdError::Integrability(format!("mu(eta) = {norm}")));
                }
                new_pdf.iter_mut().for_each(|p| *p /= norm);
                InitialMeasure::grid(x.clone(), new_pdf, tail_eta / norm)
            }
        }
    }

    /// `int x^k e^{r x} mu(dx)` with divergence detection for grid tails.
    pub fn check_integrability(&self, params: DriftParams, k: u32) -> MomentReport {
        self.weighted_moment(k, Some(params))
    }

    /// Plain moment `mu(x^k)`.
    pub fn moment(&self, k: u32) -> MomentReport {
        self.weighted_moment(k, None)
    }

    fn weighted_moment(&self, k: u32, exp_weight: Option<DriftParams>) -> MomentReport {
        let r = exp_weight.map(|p| p.r()).unwrap_or(0.0);
        let f = |x: f64| x.powi(k as i32) * (r * x).exp();
        let value = match &self.kind {
            Kind::Atomic(atoms) => atoms.iter().map(|&(x, w)| w * f(x)).sum::<f64>(),
            Kind::Grid { x, pdf, tail } => {
                let body = quad::integrate_knots(|t| f(t) * interp(x, pdf, t), x);
                let tail_term = if *tail == 0.0 {
                    0.0
                } else {
                    match fitted_decay(x, pdf) {
                        // boundary case rho == r included: reported non-finite
                        Some(rho) if rho > r => {
                            let xe = *x.last().unwrap();
                            // exponential continuation carrying mass `tail`:
                            // tail * rho * e^{r xe} int_0^inf (xe+u)^k e^{-(rho-r) u} du
                            *tail * rho
                                * (r * xe).exp()
                                * quad::integrate_decaying(
                                    |u| (xe + u).powi(k as i32) * (-(rho - r) * u).exp(),
                                    0.0,
                                    2.0 / (rho - r),
                                    8,
                                    1e-14,
                                    200,
                                )
                        }
                        _ => f64::INFINITY,
                    }
                };
                body + tail_term
            }
        };
        let finite = value.is_finite() && value < OVERFLOW_THRESHOLD;
        MomentReport {
            k,
            exponential: exp_weight.is_some(),
            value: if finite { value } else { f64::INFINITY },
            finite,
        }
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Piecewise-linear interpolation on the grid; zero outside.
fn interp(x: &[f64], y: &[f64], t: f64) -> f64 {
    if t <= x[0] || t >= *x.last().unwrap() {
        if t == x[0] {
            return y[0];
        }
        if t == *x.last().unwrap() {
            return *y.last().unwrap();
        }
        return 0.0;
    }
    let i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return y[i],
        Err(i) => i - 1,
    };
    let w = (t - x[i]) / (x[i + 1] - x[i]);
    y[i] * (1.0 - w) + y[i + 1] * w
}

/// Log-slope fit of the density over the last grid cells; returns the decay
/// rate `rho` with `pdf ~ e^{-rho x}`, or None if too few positive values.
fn fitted_decay(x: &[f64], pdf: &[f64]) -> Option<f64> {
    let n = x.len();
    let take = 8.min(n);
    let pts: Vec<(f64, f64)> = (n - take..n)
        .filter(|&i| pdf[i] > 0.0)
        .map(|i| (x[i], pdf[i].ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    Some(-slope)
}
