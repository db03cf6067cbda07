//! Internal-energy densities `j*(s, chi)` and mixing potentials
//! `W = beta_hat + gamma_hat`.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Pointwise internal-energy density `j*(s, chi)`, convex in `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnergyModel {
    /// `s^2/2 - s chi + chi^2/2`, temperature `theta = s - chi`.
    Caginalp,
    /// `exp(s - ell chi)`, i.e. `lambda(chi) = ell chi`.
    Entropy { ell: f64 },
    /// `-log(s - chi)` on `s > chi`.
    PenroseFife,
    /// `s^2/2`, no coupling to `chi`.
    DecoupledQuadratic,
}

impl EnergyModel {
    pub fn domain_ok(&self, s: f64, chi: f64) -> bool {
        match self {
            EnergyModel::PenroseFife => s - chi > 0.0,
            _ => true,
        }
    }

    /// `j*(s, chi)`, `+inf` outside the domain.
    pub fn jstar(&self, s: f64, chi: f64) -> f64 {
        match *self {
            EnergyModel::Caginalp => 0.5 * (s - chi) * (s - chi),
            EnergyModel::Entropy { ell } => (s - ell * chi).exp(),
            EnergyModel::PenroseFife => {
                if s - chi > 0.0 {
                    -(s - chi).ln()
                } else {
                    f64::INFINITY
                }
            }
            EnergyModel::DecoupledQuadratic => 0.5 * s * s,
        }
    }

    fn check(&self, s: f64, chi: f64) -> Result<()> {
        if self.domain_ok(s, chi) && s.is_finite() && chi.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain { s, chi })
        }
    }

    pub fn jstar_ds(&self, s: f64, chi: f64) -> Result<f64> {
        self.check(s, chi)?;
        Ok(self.ds(s, chi))
    }

    pub fn jstar_dchi(&self, s: f64, chi: f64) -> Result<f64> {
        self.check(s, chi)?;
        Ok(self.dchi(s, chi))
    }

    pub(crate) fn ds(&self, s: f64, chi: f64) -> f64 {
        match *self {
            EnergyModel::Caginalp => s - chi,
            EnergyModel::Entropy { ell } => (s - ell * chi).exp(),
            EnergyModel::PenroseFife => -1.0 / (s - chi),
            EnergyModel::DecoupledQuadratic => s,
        }
    }

    pub(crate) fn dchi(&self, s: f64, chi: f64) -> f64 {
        match *self {
            EnergyModel::Caginalp => chi - s,
            EnergyModel::Entropy { ell } => -ell * (s - ell * chi).exp(),
            EnergyModel::PenroseFife => 1.0 / (s - chi),
            EnergyModel::DecoupledQuadratic => 0.0,
        }
    }

    pub(crate) fn dss(&self, s: f64, chi: f64) -> f64 {
        match *self {
            EnergyModel::Caginalp | EnergyModel::DecoupledQuadratic => 1.0,
            EnergyModel::Entropy { ell } => (s - ell * chi).exp(),
            EnergyModel::PenroseFife => 1.0 / ((s - chi) * (s - chi)),
        }
    }

    pub(crate) fn dchichi(&self, s: f64, chi: f64) -> f64 {
        match *self {
            EnergyModel::Caginalp => 1.0,
            EnergyModel::Entropy { ell } => ell * ell * (s - ell * chi).exp(),
            EnergyModel::PenroseFife => 1.0 / ((s - chi) * (s - chi)),
            EnergyModel::DecoupledQuadratic => 0.0,
        }
    }

    /// Finite lower bound of `j*` on its domain, `None` when unbounded below.
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            EnergyModel::PenroseFife => None,
            _ => Some(0.0),
        }
    }

    /// Whether the s-block needs the fractional step rule.
    pub fn is_domain_restricted(&self) -> bool {
        matches!(self, EnergyModel::PenroseFife)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnergyModel::Caginalp => "caginalp",
            EnergyModel::Entropy { .. } => "entropy",
            EnergyModel::PenroseFife => "penrose_fife",
            EnergyModel::DecoupledQuadratic => "decoupled_quadratic",
        }
    }
}

impl fmt::Display for EnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyModel::Entropy { ell } => write!(f, "entropy {ell:?}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for EnergyModel {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, String> {
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.as_slice() {
            ["caginalp"] => Ok(EnergyModel::Caginalp),
            ["penrose_fife"] => Ok(EnergyModel::PenroseFife),
            ["decoupled_quadratic"] => Ok(EnergyModel::DecoupledQuadratic),
            ["entropy"] => Ok(EnergyModel::Entropy { ell: 1.0 }),
            ["entropy", ell] => {
                let ell: f64 = ell.parse().map_err(|_| format!("bad entropy coefficient `{ell}`"))?;
                if !ell.is_finite() {
                    return Err("entropy coefficient must be finite".into());
                }
                Ok(EnergyModel::Entropy { ell })
            }
            _ => Err(format!("unknown model `{text}`")),
        }
    }
}

/// Mixing potential `W = beta_hat + gamma_hat` with convex `beta_hat` and
/// `gamma = gamma_hat'` Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Potential {
    /// `(chi^2 - 1)^2` split as `chi^4 + (1 - 2 chi^2)`.
    DoubleWell,
    /// `chi log chi + (1 - chi) log(1 - chi) - chi^2` on `[0, 1]`.
    Logarithmic,
    /// `I_[0,1](chi) - chi^2`.
    DoubleObstacle,
}

/// Prox evaluation with the data a Newton method needs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ProxPoint {
    pub x: f64,
    /// `d prox / d w`, in `[0, 1]`.
    pub slope: f64,
    /// `beta_hat''(x)` where finite, used in place of `(1/slope - 1)/lam`.
    pub curvature: f64,
}

const LOGIT_CAP: f64 = 40.0;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Root of `4 lam x^3 + x = w`.
fn cubic_prox(w: f64, lam: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let target = w.abs();
    // g(x) = 4 lam x^3 + x - target is increasing and convex on x > 0, so
    // Newton from an upper bound decreases monotonically onto the root.
    let mut x = target.min((target / (4.0 * lam)).cbrt());
    for _ in 0..200 {
        let g = 4.0 * lam * x * x * x + x - target;
        let next = x - g / (12.0 * lam * x * x + 1.0);
        if !(next < x) || next <= 0.0 {
            break;
        }
        x = next;
    }
    x.copysign(w)
}

/// Solves `lam log(x / (1 - x)) + x = w` in the logit variable.
/// Returns `(x, x (1 - x))`.
fn logit_prox(w: f64, lam: f64) -> (f64, f64) {
    let h = |z: f64| lam * z + sigmoid(z) - w;
    let (mut lo, mut hi) = ((w - 1.0) / lam, w / lam);
    let mut z = 0.5 * (lo + hi);
    let mut hz = h(z);
    // Newton steps are kept only when they stay in the bracket and halve
    // |h|; otherwise bisect. Plain Newton can cycle on the sigmoid.
    for _ in 0..400 {
        if hz == 0.0 {
            break;
        }
        if hz > 0.0 {
            hi = z
        } else {
            lo = z
        }
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + z.abs()) {
            break;
        }
        let newton = z - hz / (lam + sigmoid(z) * sigmoid(-z));
        let mut next = 0.5 * (lo + hi);
        let mut h_next = f64::NAN;
        if newton > lo && newton < hi {
            let hn = h(newton);
            if hn.abs() <= 0.5 * hz.abs() {
                next = newton;
                h_next = hn;
            }
        }
        if h_next.is_nan() {
            h_next = h(next);
        }
        let done = (next - z).abs() <= 1e-16 * (1.0 + z.abs());
        z = next;
        hz = h_next;
        if done {
            break;
        }
    }
    (sigmoid(z), sigmoid(z) * sigmoid(-z))
}

impl Potential {
    pub fn in_domain(&self, chi: f64) -> bool {
        match self {
            Potential::DoubleWell => chi.is_finite(),
            _ => (0.0..=1.0).contains(&chi),
        }
    }

    pub fn beta_hat(&self, x: f64) -> f64 {
        match self {
            Potential::DoubleWell => x * x * x * x,
            Potential::Logarithmic => {
                if !(0.0..=1.0).contains(&x) {
                    return f64::INFINITY;
                }
                let xlogx = |t: f64| if t == 0.0 { 0.0 } else { t * t.ln() };
                xlogx(x) + xlogx(1.0 - x)
            }
            Potential::DoubleObstacle => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn gamma_hat(&self, x: f64) -> f64 {
        match self {
            Potential::DoubleWell => 1.0 - 2.0 * x * x,
            _ => -x * x,
        }
    }

    /// `gamma = gamma_hat'`.
    pub fn gamma_prime(&self, x: f64) -> f64 {
        match self {
            Potential::DoubleWell => -4.0 * x,
            _ => -2.0 * x,
        }
    }

    /// `gamma' = gamma_hat''` (constant for every shipped potential).
    pub fn gamma_slope(&self) -> f64 {
        match self {
            Potential::DoubleWell => -4.0,
            _ => -2.0,
        }
    }

    /// Lipschitz constant of `gamma`.
    pub fn gamma_lipschitz(&self) -> f64 {
        self.gamma_slope().abs()
    }

    /// `W = beta_hat + gamma_hat`, `+inf` outside `dom(beta_hat)`.
    pub fn w_eval(&self, x: f64) -> f64 {
        let b = self.beta_hat(x);
        if b.is_infinite() {
            b
        } else {
            b + self.gamma_hat(x)
        }
    }

    /// `argmin_x beta_hat(x) + (x - w)^2 / (2 lam)`.
    pub fn prox_beta(&self, w: f64, lam: f64) -> Result<f64> {
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::InvalidParameter(format!("prox parameter {lam} must be positive")));
        }
        if !w.is_finite() {
            return Err(Error::InvalidParameter(format!("prox argument {w} must be finite")));
        }
        Ok(self.prox_point(w, lam).x)
    }

    pub(crate) fn prox_point(&self, w: f64, lam: f64) -> ProxPoint {
        match self {
            Potential::DoubleWell => {
                let x = cubic_prox(w, lam);
                let curvature = 12.0 * x * x;
                ProxPoint { x, slope: 1.0 / (1.0 + lam * curvature), curvature }
            }
            Potential::Logarithmic => {
                let (x, x1mx) = logit_prox(w, lam);
                let curvature = 1.0 / x1mx;
                let slope = if curvature.is_finite() { x1mx / (x1mx + lam) } else { 0.0 };
                ProxPoint { x, slope, curvature }
            }
            Potential::DoubleObstacle => {
                let x = w.clamp(0.0, 1.0);
                let slope = if (0.0..=1.0).contains(&w) { 1.0 } else { 0.0 };
                ProxPoint { x, slope, curvature: 0.0 }
            }
        }
    }

    /// The element of `d beta_hat(x)` closest to `target`; infinite
    /// subgradients at the logarithmic endpoints are capped.
    pub fn subgradient_selection(&self, x: f64, target: f64) -> f64 {
        match self {
            Potential::DoubleWell => 4.0 * x * x * x,
            Potential::Logarithmic => {
                if x <= 0.0 {
                    -LOGIT_CAP
                } else if x >= 1.0 {
                    LOGIT_CAP
                } else {
                    (x / (1.0 - x)).ln().clamp(-LOGIT_CAP, LOGIT_CAP)
                }
            }
            Potential::DoubleObstacle => {
                if x <= 0.0 {
                    target.min(0.0)
                } else if x >= 1.0 {
                    target.max(0.0)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Potential::DoubleWell => "double_well",
            Potential::Logarithmic => "logarithmic",
            Potential::DoubleObstacle => "double_obstacle",
        }
    }
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Potential {
    type Err = String;

    fn from_str(text: &str) -> std::result::Result<Self, String> {
        match text.trim() {
            "double_well" => Ok(Potential::DoubleWell),
            "logarithmic" => Ok(Potential::Logarithmic),
            "double_obstacle" => Ok(Potential::DoubleObstacle),
            other => Err(format!("unknown potential `{other}`")),
        }
    }
}
