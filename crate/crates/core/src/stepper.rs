//! Minimizing-movement time stepping.
//!
//! Each step minimizes
//! `F(U) = ||U - U_prev||_H^2 / (2 tau) + Phi_eps(U)`
//! by alternating exact block solves:
//!
//! * the s-block is strictly convex on the slice `mean(s) = mean(s_prev)` and
//!   is solved by damped Newton, the Newton systems by conjugate gradients
//!   preconditioned with the exact spectral inverse of the constant-coefficient
//!   operator;
//! * the chi-block is solved by a semismooth Newton method on the prox
//!   fixed-point form `chi = prox_{alpha beta_hat}(y)`, `xi = (y - chi)/alpha`,
//!   which treats `1/tau - Delta_h` implicitly, `gamma + d_chi j*` through
//!   their derivatives and `beta_hat` only through its pointwise prox. A
//!   backtracking forward-backward step is taken whenever the Newton step
//!   fails to decrease both the objective and the residual.
//!
//! Both blocks decrease `F`, so every accepted step carries a descent
//! certificate.

use crate::energy::{chi_gradient, stationarity_residual, total_energy_eps, v0_dual_norm_of_a, State, StepCertificate};
use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy_raw, dot, laplace_into, Field, Grid};
use crate::linalg::pcg;
use crate::metric::SpectralPlan;
use crate::models::{EnergyModel, Potential};
use crate::par::Exec;

/// Slack admitted on the descent certificate of an accepted step.
pub const DESCENT_SLACK: f64 = 1e-10;

const CG_REL_TOL: f64 = 1e-13;
const CG_MAX_ITER: usize = 400;
const MAX_BACKTRACKS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOptions {
    pub tau: f64,
    pub eps: f64,
    pub tol_s: f64,
    pub tol_chi: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Fraction of the distance to the domain boundary a single update may
    /// consume (domain-restricted models only).
    pub barrier_fraction: f64,
}

impl StepOptions {
    pub fn new(tau: f64) -> StepOptions {
        StepOptions { tau, eps: 0.0, tol_s: 1e-9, tol_chi: 1e-9, max_outer: 200, max_inner: 100, barrier_fraction: 0.9 }
    }

    pub fn with_eps(mut self, eps: f64) -> StepOptions {
        self.eps = eps;
        self
    }

    pub fn with_tolerances(mut self, tol_s: f64, tol_chi: f64) -> StepOptions {
        self.tol_s = tol_s;
        self.tol_chi = tol_chi;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> StepOptions {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParameter(what));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be nonnegative", self.eps));
        }
        if !(self.tol_s > 0.0 && self.tol_chi > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be positive".into());
        }
        if !(self.barrier_fraction > 0.0 && self.barrier_fraction < 1.0) {
            return bad(format!("barrier_fraction = {} not in (0, 1)", self.barrier_fraction));
        }
        Ok(())
    }

    /// [`StepOptions::validate`] plus the step restriction `tau * L_gamma < 1`
    /// that keeps each incremental problem strictly convex.
    pub fn validate_for(&self, p: &Potential) -> Result<()> {
        self.validate()?;
        if self.tau * p.gamma_lipschitz() >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "tau = {} must be below 1/L_gamma = {} for the {} potential",
                self.tau,
                1.0 / p.gamma_lipschitz(),
                p.name()
            )));
        }
        Ok(())
    }
}

/// Result of an s-block solve.
#[derive(Clone, Debug)]
pub struct SBlockSolution {
    pub s: Field,
    pub iterations: usize,
    pub residual: f64,
}

/// Result of a chi-block solve.
#[derive(Clone, Debug)]
pub struct ChiBlockSolution {
    pub chi: Field,
    pub xi: Field,
    pub iterations: usize,
    pub residual: f64,
}

fn mean_raw(grid: Grid, v: &[f64]) -> f64 {
    grid.cell_volume() * v.iter().sum::<f64>()
}

/// `||v||_{V0'}^2` of the zero-mean part of raw data.
pub(crate) fn norm_v0p_sq_raw(plan: &SpectralPlan, v: &[f64]) -> f64 {
    let c = plan.forward(v);
    let acc: f64 = c.iter().zip(plan.eigenvalues()).skip(1).map(|(ck, l)| ck * ck / l).sum();
    plan.grid().cell_volume() * acc
}

// ---------------------------------------------------------------------------
// s-block

struct SEval {
    g: Vec<f64>,
    residual: f64,
    objective: f64,
}

struct SBlock<'a> {
    model: &'a EnergyModel,
    plan: &'a SpectralPlan,
    s_prev: &'a [f64],
    chi: &'a [f64],
    tau: f64,
    eps: f64,
}

impl SBlock<'_> {
    fn eval(&self, s: &[f64]) -> Option<SEval> {
        let grid = self.plan.grid();
        let vol = grid.cell_volume();
        let m = self.model;
        let mut density = 0.0;
        for (&si, &ci) in s.iter().zip(self.chi) {
            if !m.domain_ok(si, ci) {
                return None;
            }
            density += m.jstar(si, ci) + 0.5 * self.eps * si * si;
        }
        let diff: Vec<f64> = s.iter().zip(self.s_prev).map(|(a, b)| a - b).collect();
        let inv = self.plan.inv_a_raw(&diff);
        let objective = vol * (0.5 * dot(&inv, &diff) / self.tau + density);
        let psi: Vec<f64> = s.iter().zip(self.chi).map(|(&si, &ci)| m.ds(si, ci) + self.eps * si).collect();
        let psi_mean = mean_raw(grid, &psi);
        let g: Vec<f64> = inv.iter().zip(&psi).map(|(a, b)| a / self.tau + (b - psi_mean)).collect();
        let residual = v0_dual_norm_of_a(grid, &g);
        Some(SEval { g, residual, objective })
    }

    fn newton_direction(&self, s: &[f64], g: &[f64]) -> Vec<f64> {
        let grid = self.plan.grid();
        let m = self.model;
        let hess: Vec<f64> = s.iter().zip(self.chi).map(|(&si, &ci)| m.dss(si, ci) + self.eps).collect();
        let hbar = mean_raw(grid, &hess);
        let tau = self.tau;
        let op = |v: &[f64]| -> Vec<f64> {
            let inv = self.plan.inv_a_raw(v);
            let hv: Vec<f64> = hess.iter().zip(v).map(|(h, x)| h * x).collect();
            let hv_mean = mean_raw(grid, &hv);
            inv.iter().zip(&hv).map(|(a, b)| a / tau + (b - hv_mean)).collect()
        };
        let prec = |r: &[f64]| -> Vec<f64> {
            self.plan.apply_multiplier(r, |lam, k| if k == 0 { 0.0 } else { 1.0 / (1.0 / (tau * lam) + hbar) })
        };
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut d = pcg(op, prec, &rhs, CG_REL_TOL, CG_MAX_ITER).x;
        let dm = mean_raw(grid, &d);
        d.iter_mut().for_each(|x| *x -= dm);
        d
    }

    fn max_step(&self, s: &[f64], d: &[f64], fraction: f64) -> f64 {
        if !self.model.is_domain_restricted() {
            return 1.0;
        }
        s.iter()
            .zip(d)
            .zip(self.chi)
            .filter(|((_, &di), _)| di < 0.0)
            .map(|((&si, &di), &ci)| fraction * (si - ci) / -di)
            .fold(1.0, f64::min)
    }

    fn solve(&self, start: &[f64], tol: f64, opts: &StepOptions) -> Result<(Vec<f64>, usize, f64)> {
        let mut s = start.to_vec();
        let mut cur =
            self.eval(&s).ok_or_else(|| Error::Infeasible("s-block started outside the model domain".into()))?;
        for it in 0..=opts.max_inner {
            if cur.residual <= tol {
                return Ok((s, it, cur.residual));
            }
            if it == opts.max_inner {
                break;
            }
            let d = self.newton_direction(&s, &cur.g);
            let slope = dot(&cur.g, &d) * self.plan.grid().cell_volume();
            let slack = 1e-14 * (1.0 + cur.objective.abs());
            let mut t = self.max_step(&s, &d, opts.barrier_fraction);
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let trial: Vec<f64> = s.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                if let Some(next) = self.eval(&trial) {
                    let armijo = next.objective <= cur.objective + 1e-4 * t * slope;
                    let flat = next.objective <= cur.objective + slack && next.residual < cur.residual;
                    if armijo || flat {
                        accepted = Some((trial, next));
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((trial, next)) => {
                    s = trial;
                    cur = next;
                }
                None => break,
            }
        }
        Err(Error::NonConvergence {
            stage: "s-block Newton",
            iterations: opts.max_inner,
            residual_s: cur.residual,
            residual_chi: f64::NAN,
        })
    }
}

/// Minimizes `||s - s_prev||_{V0'}^2 / (2 tau) + h^d sum j*(s_i, chi_i) +
/// (eps/2) ||s||_H^2` over `mean(s) = mean(s_prev)`, starting from `s_prev`.
pub fn s_block_solve(
    m: &EnergyModel,
    plan: &SpectralPlan,
    s_prev: &Field,
    chi: &Field,
    opts: &StepOptions,
) -> Result<SBlockSolution> {
    opts.validate()?;
    if s_prev.grid() != plan.grid() || chi.grid() != plan.grid() {
        return Err(Error::GridMismatch);
    }
    let block = SBlock { model: m, plan, s_prev: s_prev.values(), chi: chi.values(), tau: opts.tau, eps: opts.eps };
    let (s, iterations, residual) = block.solve(s_prev.values(), opts.tol_s, opts)?;
    Ok(SBlockSolution { s: Field::new(plan.grid(), s)?, iterations, residual })
}

// ---------------------------------------------------------------------------
// chi-block

struct ChiEval {
    chi: Vec<f64>,
    xi: Vec<f64>,
    grad: Vec<f64>,
    residual: f64,
    smooth: f64,
    objective: f64,
}

struct ChiBlock<'a> {
    model: &'a EnergyModel,
    potential: &'a Potential,
    grid: Grid,
    plan: &'a SpectralPlan,
    chi_prev: &'a [f64],
    s: &'a [f64],
    tau: f64,
    /// Prox parameter of the fixed-point reformulation.
    alpha: f64,
}

impl ChiBlock<'_> {
    fn eval(&self, chi: Vec<f64>, xi: Vec<f64>) -> Option<ChiEval> {
        let (m, p) = (self.model, self.potential);
        let vol = self.grid.cell_volume();
        let mut prox_term = 0.0;
        let mut pointwise = 0.0;
        let mut beta = 0.0;
        for ((&c, &s), &cp) in chi.iter().zip(self.s).zip(self.chi_prev) {
            if !p.in_domain(c) || !m.domain_ok(s, c) {
                return None;
            }
            let d = c - cp;
            prox_term += d * d;
            pointwise += p.gamma_hat(c) + m.jstar(s, c);
            beta += p.beta_hat(c);
        }
        let smooth = vol * (0.5 * prox_term / self.tau + pointwise) + dirichlet_energy_raw(self.grid, &chi);
        let objective = smooth + vol * beta;
        let grad = chi_gradient(m, p, &chi, self.chi_prev, self.s, self.grid, self.tau);
        let r2: f64 = grad.iter().zip(&xi).map(|(g, x)| (g + x) * (g + x)).sum();
        let residual = (vol * r2).sqrt();
        Some(ChiEval { chi, xi, grad, residual, smooth, objective })
    }

    fn prox_split(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let chi: Vec<f64> = y.iter().map(|&yi| self.potential.prox_point(yi, self.alpha).x).collect();
        let xi = y.iter().zip(&chi).map(|(yi, ci)| (yi - ci) / self.alpha).collect();
        (chi, xi)
    }

    /// Nodewise feasibility of a trial relative to the current iterate.
    fn keeps_margin(&self, current: &[f64], trial: &[f64], fraction: f64) -> bool {
        if !self.model.is_domain_restricted() {
            return true;
        }
        trial.iter().zip(current).zip(self.s).all(|((&t, &c), &s)| s - t >= (1.0 - fraction) * (s - c))
    }

    fn newton_direction(&self, y: &[f64], cur: &ChiEval) -> Vec<f64> {
        let (m, p) = (self.model, self.potential);
        let n = y.len();
        let mut slope = vec![0.0; n];
        let mut curv = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut inactive = vec![false; n];
        for i in 0..n {
            let pt = p.prox_point(y[i], self.alpha);
            diag[i] = 1.0 / self.tau + p.gamma_slope() + m.dchichi(self.s[i], cur.chi[i]);
            if pt.slope > 0.0 && pt.curvature.is_finite() {
                inactive[i] = true;
                slope[i] = pt.slope;
                curv[i] = pt.curvature;
            }
        }
        let restrict = |v: &mut [f64]| {
            v.iter_mut().zip(&inactive).for_each(|(x, &on)| {
                if !on {
                    *x = 0.0
                }
            })
        };
        let k_apply = |v: &[f64]| -> Vec<f64> {
            let mut lap = vec![0.0; n];
            laplace_into(self.grid, v, &mut lap);
            (0..n).map(|i| diag[i] * v[i] - lap[i]).collect()
        };
        let count = inactive.iter().filter(|&&b| b).count().max(1);
        let shift = (0..n).filter(|&i| inactive[i]).map(|i| diag[i] + curv[i]).sum::<f64>() / count as f64;
        let shift = shift.max(0.5 / self.tau);
        let op = |v: &[f64]| -> Vec<f64> {
            let mut out = k_apply(v);
            out.iter_mut().zip(v).zip(&curv).for_each(|((o, x), c)| *o += c * x);
            restrict(&mut out);
            out
        };
        let prec = |r: &[f64]| -> Vec<f64> {
            let mut out = self.plan.shifted_solve_raw(r, shift, 1.0);
            restrict(&mut out);
            out
        };
        let mut rhs: Vec<f64> = cur.grad.iter().zip(&cur.xi).map(|(g, x)| -(g + x)).collect();
        let full_rhs = rhs.clone();
        restrict(&mut rhs);
        let e = pcg(op, prec, &rhs, CG_REL_TOL, CG_MAX_ITER).x;
        let ke = k_apply(&e);
        (0..n).map(|i| if inactive[i] { e[i] / slope[i] } else { self.alpha * (full_rhs[i] - ke[i]) }).collect()
    }

    /// One backtracking forward-backward step from `cur`; returns the new
    /// `y` and evaluation.
    fn forward_backward(&self, cur: &ChiEval, fraction: f64) -> Option<(Vec<f64>, ChiEval)> {
        let p = self.potential;
        let vol = self.grid.cell_volume();
        let h = self.grid.h();
        let coupling = cur.chi.iter().zip(self.s).map(|(&c, &s)| self.model.dchichi(s, c)).fold(0.0, f64::max);
        let mut lip = 1.0 / self.tau + 4.0 * self.grid.dims() as f64 / (h * h) + p.gamma_lipschitz() + coupling;
        for _ in 0..MAX_BACKTRACKS {
            let step = 1.0 / lip;
            let w: Vec<f64> = cur.chi.iter().zip(&cur.grad).map(|(c, g)| c - step * g).collect();
            let chi: Vec<f64> = w.iter().map(|&wi| p.prox_point(wi, step).x).collect();
            if self.keeps_margin(&cur.chi, &chi, fraction) {
                let xi: Vec<f64> = w.iter().zip(&chi).map(|(wi, ci)| (wi - ci) / step).collect();
                if let Some(next) = self.eval(chi, xi) {
                    let mut lin = 0.0;
                    let mut sq = 0.0;
                    for i in 0..cur.chi.len() {
                        let d = next.chi[i] - cur.chi[i];
                        lin += cur.grad[i] * d;
                        sq += d * d;
                    }
                    let model = cur.smooth + vol * (lin + 0.5 * lip * sq);
                    if next.smooth <= model + 1e-14 * (1.0 + cur.smooth.abs()) {
                        let y = next.chi.iter().zip(&next.xi).map(|(c, x)| c + self.alpha * x).collect();
                        return Some((y, next));
                    }
                }
            }
            lip *= 2.0;
        }
        None
    }

    fn initial_y(&self, chi: &[f64]) -> Vec<f64> {
        let grad = chi_gradient(self.model, self.potential, chi, self.chi_prev, self.s, self.grid, self.tau);
        chi.iter().zip(&grad).map(|(&c, &g)| c + self.alpha * self.potential.subgradient_selection(c, -g)).collect()
    }

    fn solve(
        &self,
        start: &[f64],
        start_y: Option<Vec<f64>>,
        tol: f64,
        opts: &StepOptions,
    ) -> Result<(ChiEval, Vec<f64>, usize)> {
        let infeasible = || Error::Infeasible("chi-block started outside the domain".into());
        let mut y = start_y.unwrap_or_else(|| self.initial_y(start));
        let (chi, xi) = self.prox_split(&y);
        let mut cur = match self.eval(chi, xi) {
            Some(e) if self.keeps_margin(start, &e.chi, opts.barrier_fraction) => e,
            _ => {
                // Warm start drifted out of the domain; take an FB step from
                // the start point instead.
                let xi = vec![0.0; start.len()];
                let base = self.eval(start.to_vec(), xi).ok_or_else(infeasible)?;
                let (y0, e) = self.forward_backward(&base, opts.barrier_fraction).ok_or_else(infeasible)?;
                y = y0;
                e
            }
        };
        for it in 0..=opts.max_inner {
            if cur.residual <= tol {
                return Ok((cur, y, it));
            }
            if it == opts.max_inner {
                break;
            }
            let delta = self.newton_direction(&y, &cur);
            let slack = 1e-14 * (1.0 + cur.objective.abs());
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS / 2 {
                let y_t: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + t * b).collect();
                let (chi, xi) = self.prox_split(&y_t);
                if self.keeps_margin(&cur.chi, &chi, opts.barrier_fraction) {
                    if let Some(next) = self.eval(chi, xi) {
                        if next.objective <= cur.objective + slack && next.residual < cur.residual {
                            accepted = Some((y_t, next));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            let (y_next, next) = match accepted {
                Some(a) => a,
                None => match self.forward_backward(&cur, opts.barrier_fraction) {
                    Some(a) if a.1.objective <= cur.objective + slack => a,
                    _ => break,
                },
            };
            y = y_next;
            cur = next;
        }
        Err(Error::NonConvergence {
            stage: "chi-block Newton",
            iterations: opts.max_inner,
            residual_s: f64::NAN,
            residual_chi: cur.residual,
        })
    }
}

/// Minimizes `||chi - chi_prev||_H^2 / (2 tau) + dirichlet_energy(chi) +
/// h^d sum [W(chi_i) + j*(s_i, chi_i)]`, starting from `chi_prev`.
pub fn chi_block_solve(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    chi_prev: &Field,
    s: &Field,
    opts: &StepOptions,
) -> Result<ChiBlockSolution> {
    opts.validate_for(p)?;
    if chi_prev.grid() != plan.grid() || s.grid() != plan.grid() {
        return Err(Error::GridMismatch);
    }
    let block = ChiBlock {
        model: m,
        potential: p,
        grid: plan.grid(),
        plan,
        chi_prev: chi_prev.values(),
        s: s.values(),
        tau: opts.tau,
        alpha: opts.tau,
    };
    let (eval, _, iterations) = block.solve(chi_prev.values(), None, opts.tol_chi, opts)?;
    Ok(ChiBlockSolution {
        chi: Field::new(plan.grid(), eval.chi)?,
        xi: Field::new(plan.grid(), eval.xi)?,
        iterations,
        residual: eval.residual,
    })
}

// ---------------------------------------------------------------------------
// Steps and runs

/// `||du||_H^2 = ||ds||_{V0'}^2 + ||dchi||_H^2` between two states.
pub fn metric_distance_sq(plan: &SpectralPlan, a: &State, b: &State) -> f64 {
    let ds: Vec<f64> = a.s().values().iter().zip(b.s().values()).map(|(x, y)| x - y).collect();
    let dc: Vec<f64> = a.chi().values().iter().zip(b.chi().values()).map(|(x, y)| x - y).collect();
    norm_v0p_sq_raw(plan, &ds) + plan.grid().cell_volume() * dot(&dc, &dc)
}

/// One implicit-Euler step as an incremental minimization.
pub fn incremental_step(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u_prev: &State,
    opts: &StepOptions,
) -> Result<(State, StepCertificate)> {
    opts.validate_for(p)?;
    let grid = plan.grid();
    if u_prev.grid() != grid {
        return Err(Error::GridMismatch);
    }
    u_prev.require_feasible(m, p)?;

    let s_prev = u_prev.s().values();
    let chi_prev = u_prev.chi().values();
    fn sblock<'a>(
        m: &'a EnergyModel,
        plan: &'a SpectralPlan,
        s_prev: &'a [f64],
        chi: &'a [f64],
        opts: &StepOptions,
    ) -> SBlock<'a> {
        SBlock { model: m, plan, s_prev, chi, tau: opts.tau, eps: opts.eps }
    }

    let mut s = s_prev.to_vec();
    let mut chi = chi_prev.to_vec();
    let mut xi = vec![0.0; chi.len()];
    let mut y: Option<Vec<f64>> = None;
    let (mut s_iters, mut chi_iters) = (0, 0);
    let mut res = (f64::INFINITY, f64::INFINITY);
    let mut converged = None;

    for outer in 1..=opts.max_outer {
        let (s_new, its, _) = sblock(m, plan, s_prev, &chi, opts).solve(&s, opts.tol_s, opts)?;
        s = s_new;
        s_iters += its;

        let cblock = ChiBlock { model: m, potential: p, grid, plan, chi_prev, s: &s, tau: opts.tau, alpha: opts.tau };
        let (eval, y_new, its) = cblock.solve(&chi, y.take(), opts.tol_chi, opts)?;
        chi_iters += its;
        y = Some(y_new);
        chi = eval.chi;
        xi = eval.xi;

        let rs = sblock(m, plan, s_prev, &chi, opts)
            .eval(&s)
            .map(|e| e.residual)
            .ok_or_else(|| Error::Infeasible("block alternation left the model domain".into()))?;
        res = (rs, eval.residual);
        if rs <= opts.tol_s && eval.residual <= opts.tol_chi {
            converged = Some(outer);
            break;
        }
    }
    let Some(outer_iterations) = converged else {
        return Err(Error::NonConvergence {
            stage: "block alternation",
            iterations: opts.max_outer,
            residual_s: res.0,
            residual_chi: res.1,
        });
    };

    let u = State::new(Field::new(grid, s)?, Field::new(grid, chi)?)?;
    let xi = Field::new(grid, xi)?;
    let (residual_s, residual_chi) = stationarity_residual(m, p, plan, &u, u_prev, &xi, opts.tau, opts.eps)?;
    let eta = Field::new(grid, u.s().values().iter().zip(u.chi().values()).map(|(&s, &c)| m.ds(s, c)).collect())?;
    let phi_prev = total_energy_eps(m, p, u_prev, opts.eps)?;
    let phi = total_energy_eps(m, p, &u, opts.eps)?;
    let descent_gap = phi_prev - phi - metric_distance_sq(plan, &u, u_prev) / (2.0 * opts.tau);
    if descent_gap < -DESCENT_SLACK {
        return Err(Error::DescentViolation { violation: -descent_gap });
    }
    let cert = StepCertificate {
        eta,
        xi,
        residual_s,
        residual_chi,
        outer_iterations,
        s_iterations: s_iters,
        chi_iterations: chi_iters,
        descent_gap,
    };
    Ok((u, cert))
}

/// Per-step diagnostics row.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub energy_eps: f64,
    /// `||u^n - u^{n-1}||_H^2 / (2 tau)`, zero at step 0.
    pub step_dissipation: f64,
    pub mean_s: f64,
    pub min_chi: f64,
    pub max_chi: f64,
    pub residual_s: f64,
    pub residual_chi: f64,
    pub inner_iters_s: usize,
    pub inner_iters_chi: usize,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str = "step,t,energy,energy_eps,step_dissipation,mean_s,\
        min_chi,max_chi,residual_s,residual_chi,inner_iters_s,inner_iters_chi";

    /// CSV row with 17 significant digits per float.
    pub fn csv_row(&self) -> String {
        let f = |x: f64| format!("{x:.16e}");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            f(self.t),
            f(self.energy),
            f(self.energy_eps),
            f(self.step_dissipation),
            f(self.mean_s),
            f(self.min_chi),
            f(self.max_chi),
            f(self.residual_s),
            f(self.residual_chi),
            self.inner_iters_s,
            self.inner_iters_chi
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: EnergyModel,
    pub potential: Potential,
    pub tau: f64,
    pub eps: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// `certificates[n - 1]` certifies `states[n]`.
    pub certificates: Vec<StepCertificate>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.certificates.len()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Rebuilds the diagnostics table from the stored states and certificates.
    pub fn recompute_diagnostics(&self, plan: &SpectralPlan) -> Result<Vec<Diagnostics>> {
        (0..self.states.len())
            .map(|n| {
                let cert = n.checked_sub(1).map(|k| &self.certificates[k]);
                diagnostics_row(self, plan, n, cert)
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(Diagnostics::CSV_HEADER);
        out.push('\n');
        for row in &self.diagnostics {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }
}

fn diagnostics_row(
    traj: &Trajectory,
    plan: &SpectralPlan,
    n: usize,
    cert: Option<&StepCertificate>,
) -> Result<Diagnostics> {
    let (m, p) = (&traj.model, &traj.potential);
    let u = &traj.states[n];
    let step_dissipation =
        if n == 0 { 0.0 } else { metric_distance_sq(plan, u, &traj.states[n - 1]) / (2.0 * traj.tau) };
    Ok(Diagnostics {
        step: n,
        t: traj.times[n],
        energy: crate::energy::total_energy(m, p, u),
        energy_eps: total_energy_eps(m, p, u, traj.eps)?,
        step_dissipation,
        mean_s: u.s().mean(),
        min_chi: u.chi().min(),
        max_chi: u.chi().max(),
        residual_s: cert.map_or(0.0, |c| c.residual_s),
        residual_chi: cert.map_or(0.0, |c| c.residual_chi),
        inner_iters_s: cert.map_or(0, |c| c.s_iterations),
        inner_iters_chi: cert.map_or(0, |c| c.chi_iterations),
    })
}

/// Runs `steps` incremental steps of size `t_final / steps`; `opts.tau` is
/// replaced by that value.
pub fn run(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u0: &State,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
) -> Result<Trajectory> {
    if u0.grid() != plan.grid() {
        return Err(Error::GridMismatch);
    }
    u0.require_feasible(m, p)?;
    let opts = if steps > 0 {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("final time {t_final} must be positive")));
        }
        opts.with_tau(t_final / steps as f64)
    } else {
        *opts
    };
    opts.validate_for(p)?;
    let mut traj = Trajectory {
        model: *m,
        potential: *p,
        tau: opts.tau,
        eps: opts.eps,
        times: vec![0.0],
        states: vec![u0.clone()],
        certificates: Vec::with_capacity(steps),
        diagnostics: Vec::with_capacity(steps + 1),
    };
    traj.diagnostics.push(diagnostics_row(&traj, plan, 0, None)?);
    for n in 1..=steps {
        let (u, cert) = incremental_step(m, p, plan, traj.last(), &opts)
            .map_err(|e| Error::StepFailed { step: n, source: Box::new(e) })?;
        traj.times.push(n as f64 * opts.tau);
        traj.states.push(u);
        traj.certificates.push(cert);
        let row = diagnostics_row(&traj, plan, n, traj.certificates.last())?;
        traj.diagnostics.push(row);
    }
    Ok(traj)
}

/// `max_n ||s_a - s_b||_{V0'} + ||chi_a - chi_b||_H` over matching steps.
/// `s` differences are measured on their zero-mean part.
pub fn trajectory_distance(plan: &SpectralPlan, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::InvalidParameter(format!(
            "trajectories have {} and {} states",
            a.states.len(),
            b.states.len()
        )));
    }
    let vol = plan.grid().cell_volume();
    let mut worst: f64 = 0.0;
    for (ua, ub) in a.states.iter().zip(&b.states) {
        let ds: Vec<f64> = ua.s().values().iter().zip(ub.s().values()).map(|(x, y)| x - y).collect();
        let dc: Vec<f64> = ua.chi().values().iter().zip(ub.chi().values()).map(|(x, y)| x - y).collect();
        let d = norm_v0p_sq_raw(plan, &ds).sqrt() + (vol * dot(&dc, &dc)).sqrt();
        worst = worst.max(d);
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct EpsContinuation {
    pub eps: Vec<f64>,
    /// `(i, j, distance)` for every pair `i < j` of the eps list.
    pub pairwise: Vec<(usize, usize, f64)>,
    /// Distance of each run to the `eps = 0` run, when the list ends with 0.
    /// Repeated values are allowed and give zero distance.
    pub to_zero: Option<Vec<f64>>,
}

/// Runs the same problem for each regularization parameter and measures the
/// pairwise trajectory distances.
#[allow(clippy::too_many_arguments)]
pub fn eps_continuation(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u0: &State,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    eps_list: &[f64],
    exec: Exec,
) -> Result<EpsContinuation> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("empty eps list".into()));
    }
    let ordered = eps_list.windows(2).all(|w| w[1] <= w[0]);
    if !ordered || eps_list.iter().any(|&e| !(e >= 0.0)) {
        return Err(Error::InvalidParameter("eps list must be nonincreasing and nonnegative".into()));
    }
    let runs: Vec<Result<Trajectory>> =
        exec.map(eps_list, |&eps| run(m, p, plan, u0, t_final, steps, &opts.with_eps(eps)));
    let runs: Vec<Trajectory> = runs.into_iter().collect::<Result<_>>()?;
    let mut pairwise = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            pairwise.push((i, j, trajectory_distance(plan, &runs[i], &runs[j])?));
        }
    }
    let to_zero = if eps_list.last() == Some(&0.0) {
        let zero = runs.last().expect("nonempty");
        Some(runs.iter().map(|r| trajectory_distance(plan, r, zero)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(EpsContinuation { eps: eps_list.to_vec(), pairwise, to_zero })
}
