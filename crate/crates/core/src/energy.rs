//! The driving functional, its regularization, stationarity residuals of the
//! incremental problem, and the chain-rule audit.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::metric::SpectralPlan;
use crate::models::{EnergyModel, Potential};
use crate::stepper::Trajectory;

/// The pair `u = (s, chi)` on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    s: Field,
    chi: Field,
}

impl State {
    pub fn new(s: Field, chi: Field) -> Result<State> {
        if s.grid() != chi.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(State { s, chi })
    }

    pub fn s(&self) -> &Field {
        &self.s
    }

    pub fn chi(&self) -> &Field {
        &self.chi
    }

    pub fn grid(&self) -> Grid {
        self.s.grid()
    }

    pub fn into_parts(self) -> (Field, Field) {
        (self.s, self.chi)
    }

    /// First node where `(s, chi)` leaves the model or potential domain.
    pub fn first_infeasible(&self, m: &EnergyModel, p: &Potential) -> Option<usize> {
        self.s.values().iter().zip(self.chi.values()).position(|(&s, &c)| !m.domain_ok(s, c) || !p.in_domain(c))
    }

    pub fn is_feasible(&self, m: &EnergyModel, p: &Potential) -> bool {
        self.first_infeasible(m, p).is_none()
    }

    pub(crate) fn require_feasible(&self, m: &EnergyModel, p: &Potential) -> Result<()> {
        match self.first_infeasible(m, p) {
            None => Ok(()),
            Some(i) => Err(Error::Infeasible(format!(
                "node {i}: s = {}, chi = {} ({} / {})",
                self.s.values()[i],
                self.chi.values()[i],
                m.name(),
                p.name()
            ))),
        }
    }
}

/// Per-step record certifying an accepted incremental step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCertificate {
    /// `eta = d_s j*(s, chi)` nodewise.
    pub eta: Field,
    /// The selection `xi in beta(chi)` recovered from prox optimality.
    pub xi: Field,
    pub residual_s: f64,
    pub residual_chi: f64,
    pub outer_iterations: usize,
    pub s_iterations: usize,
    pub chi_iterations: usize,
    /// `Phi_eps(u_prev) - Phi_eps(u) - ||u - u_prev||_H^2 / (2 tau)`.
    pub descent_gap: f64,
}

pub(crate) fn quadrature_terms(m: &EnergyModel, p: &Potential, u: &State) -> (f64, f64) {
    let mut j = 0.0;
    let mut w = 0.0;
    for (&s, &c) in u.s.values().iter().zip(u.chi.values()) {
        j += m.jstar(s, c);
        w += p.w_eval(c);
    }
    let vol = u.grid().cell_volume();
    (vol * j, vol * w)
}

/// `Phi(u) = h^d sum_i [j*(s_i, chi_i) + W(chi_i)] + dirichlet_energy(chi)`.
pub fn total_energy(m: &EnergyModel, p: &Potential, u: &State) -> f64 {
    if !u.is_feasible(m, p) {
        return f64::INFINITY;
    }
    let (j, w) = quadrature_terms(m, p, u);
    j + w + u.chi.dirichlet_energy()
}

/// `Phi(u) + (eps / 2) ||s||_H^2`.
pub fn total_energy_eps(m: &EnergyModel, p: &Potential, u: &State, eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be nonnegative")));
    }
    let e = total_energy(m, p, u);
    if eps == 0.0 {
        return Ok(e);
    }
    Ok(e + 0.5 * eps * u.s.inner_h(&u.s)?)
}

/// `A^{-1}(s - s_prev) / tau + P0(d_s j* + eps s)` on raw data: the H-gradient
/// of the s-block objective on the mean slice, zero mean by construction.
pub(crate) fn s_gradient(
    m: &EnergyModel,
    plan: &SpectralPlan,
    s: &[f64],
    s_prev: &[f64],
    chi: &[f64],
    tau: f64,
    eps: f64,
) -> Vec<f64> {
    let diff: Vec<f64> = s.iter().zip(s_prev).map(|(a, b)| a - b).collect();
    let mut g = plan.inv_a_raw(&diff);
    let psi: Vec<f64> = s.iter().zip(chi).map(|(&si, &ci)| m.ds(si, ci) + eps * si).collect();
    let mean = plan.grid().cell_volume() * psi.iter().sum::<f64>();
    g.iter_mut().zip(&psi).for_each(|(gi, pi)| *gi = *gi / tau + (pi - mean));
    g
}

/// `||r||_{V0'}` for `r = A g`, evaluated as `sqrt((A g, g)_H)`.
pub(crate) fn v0_dual_norm_of_a(grid: Grid, g: &[f64]) -> f64 {
    (2.0 * crate::grid::dirichlet_energy_raw(grid, g)).sqrt()
}

/// H-gradient of the smooth part of the chi-block objective.
pub(crate) fn chi_gradient(
    m: &EnergyModel,
    p: &Potential,
    chi: &[f64],
    chi_prev: &[f64],
    s: &[f64],
    grid: Grid,
    tau: f64,
) -> Vec<f64> {
    let mut lap = vec![0.0; chi.len()];
    crate::grid::laplace_into(grid, chi, &mut lap);
    (0..chi.len())
        .map(|i| (chi[i] - chi_prev[i]) / tau - lap[i] + p.gamma_prime(chi[i]) + m.dchi(s[i], chi[i]))
        .collect()
}

/// Residuals of the discrete Euler-Lagrange system of one incremental step:
/// the s-equation in `V0'` and the chi-equation in `H`, with `xi` the
/// selection from `beta(chi)`.
#[allow(clippy::too_many_arguments)]
pub fn stationarity_residual(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u: &State,
    u_prev: &State,
    xi: &Field,
    tau: f64,
    eps: f64,
) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau = {tau} must be positive")));
    }
    let grid = plan.grid();
    if u.grid() != grid || u_prev.grid() != grid || xi.grid() != grid {
        return Err(Error::GridMismatch);
    }
    u.require_feasible(m, p)?;
    let g = s_gradient(m, plan, u.s.values(), u_prev.s.values(), u.chi.values(), tau, eps);
    let res_s = v0_dual_norm_of_a(grid, &g);
    let mut r = chi_gradient(m, p, u.chi.values(), u_prev.chi.values(), u.s.values(), grid, tau);
    r.iter_mut().zip(xi.values()).for_each(|(ri, x)| *ri += x);
    let res_chi = (grid.cell_volume() * r.iter().map(|v| v * v).sum::<f64>()).sqrt();
    Ok((res_s, res_chi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRuleReport {
    /// `Delta J - [(Delta s, eta^n) + (Delta chi, d_chi j*(u^n))]` per step.
    pub discrepancies: Vec<f64>,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Compares the increment of `J = h^d sum j*` along a trajectory with the
/// chain-rule prediction from the step certificates.
pub fn chain_rule_audit(m: &EnergyModel, trajectory: &Trajectory) -> ChainRuleReport {
    let states = &trajectory.states;
    let vol = states[0].grid().cell_volume();
    let jsum = |u: &State| -> f64 { u.s.values().iter().zip(u.chi.values()).map(|(&s, &c)| m.jstar(s, c)).sum() };
    let discrepancies: Vec<f64> = trajectory
        .certificates
        .iter()
        .enumerate()
        .map(|(k, cert)| {
            let (prev, cur) = (&states[k], &states[k + 1]);
            let dj = vol * (jsum(cur) - jsum(prev));
            let mut lin = 0.0;
            for i in 0..cur.s.len() {
                let (s, c) = (cur.s.values()[i], cur.chi.values()[i]);
                lin += (s - prev.s.values()[i]) * cert.eta.values()[i] + (c - prev.chi.values()[i]) * m.dchi(s, c);
            }
            dj - vol * lin
        })
        .collect();
    let max_abs = discrepancies.iter().fold(0.0, |a: f64, d| a.max(d.abs()));
    let mean_abs = if discrepancies.is_empty() {
        0.0
    } else {
        discrepancies.iter().map(|d| d.abs()).sum::<f64>() / discrepancies.len() as f64
    };
    ChainRuleReport { discrepancies, max_abs, mean_abs }
}
