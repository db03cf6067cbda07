//! Verification trials: Caginalp change of variables, continuous dependence,
//! manufactured heat decay, a priori estimates, eps-continuation, the
//! chain-rule audit, and suites over every model/potential combination.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::energy::{chain_rule_audit, total_energy_eps, State};
use crate::error::{Error, Result};
use crate::grid::{dot, Field, Grid};
use crate::metric::SpectralPlan;
use crate::models::{EnergyModel, Potential};
use crate::par::Exec;
use crate::rng::Lcg;
use crate::stepper::{eps_continuation, metric_distance_sq, run, StepOptions, Trajectory};

/// Acceptance rule of a reported quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
    Finite,
    /// Reported for information only.
    Measured,
}

impl Bound {
    pub fn accepts(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(t) => v <= t,
            Bound::AtLeast(t) => v >= t,
            Bound::Between(lo, hi) => lo <= v && v <= hi,
            Bound::Finite => v.is_finite(),
            Bound::Measured => true,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::AtMost(t) => write!(f, "<={t:e}"),
            Bound::AtLeast(t) => write!(f, ">={t:e}"),
            Bound::Between(lo, hi) => write!(f, "[{lo:e},{hi:e}]"),
            Bound::Finite => write!(f, "finite"),
            Bound::Measured => write!(f, "measured"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialReport {
    pub name: String,
    pub quantities: Vec<Quantity>,
    /// Per-step measurements.
    pub series: Vec<(String, Vec<f64>)>,
    pub runtime: Duration,
}

impl TrialReport {
    pub fn new(name: impl Into<String>) -> TrialReport {
        TrialReport { name: name.into(), quantities: Vec::new(), series: Vec::new(), runtime: Duration::ZERO }
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, bound: Bound) {
        let passed = bound.accepts(value);
        self.quantities.push(Quantity { name: name.into(), value, bound, passed });
    }

    pub fn push_series(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.series.push((name.into(), values));
    }

    /// Appends every quantity of `other`, prefixing names with `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: TrialReport) {
        for q in other.quantities {
            self.quantities.push(Quantity { name: format!("{prefix}{}", q.name), ..q });
        }
        for (name, s) in other.series {
            self.series.push((format!("{prefix}{name}"), s));
        }
    }

    pub fn passed(&self) -> bool {
        self.quantities.iter().all(|q| q.passed)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|q| q.name == name).map(|q| q.value)
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, s)| s.as_slice())
    }

    /// `PASS|FAIL <suite> <quantity> <value> <tolerance>` per quantity.
    pub fn lines(&self, suite: &str) -> Vec<String> {
        self.quantities
            .iter()
            .map(|q| {
                let tag = if q.passed { "PASS" } else { "FAIL" };
                format!("{tag} {suite} {} {:e} {}", q.name, q.value, q.bound)
            })
            .collect()
    }

    fn timed(mut self, start: Instant) -> TrialReport {
        self.runtime = start.elapsed();
        self
    }
}

fn h_norm(grid: Grid, v: &[f64]) -> f64 {
    (grid.cell_volume() * dot(v, v)).sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

// ---------------------------------------------------------------------------
// Reference data

/// A smooth feasible state for every model/potential pairing:
/// `chi` in `(0, 1)` and `s - chi >= 0.4`.
pub fn reference_state(grid: Grid) -> State {
    let shape = |x: &[f64]| {
        let y = if x.len() > 1 { x[1] } else { 0.0 };
        (PI * x[0]).cos() * (1.0 + 0.3 * (PI * y).cos())
    };
    let chi = grid.sample(|x| 0.5 + 0.25 * shape(x) + 0.08 * (3.0 * PI * x[0]).cos()).expect("finite samples");
    let s = grid.sample(|x| 1.6 + 0.3 * (2.0 * PI * x[0]).cos() + 0.2 * shape(x)).expect("finite samples");
    State::new(s, chi).expect("same grid")
}

/// Smooth random field `mean + sum_k c_k q_k` over the cosine modes with
/// `max(k) <= max_mode`, coefficients uniform in `[-amplitude, amplitude)`
/// scaled by `1 / (1 + |k|^2)`.
pub fn smooth_random_field(grid: Grid, seed: u64, mean: f64, amplitude: f64, max_mode: usize) -> Field {
    let mut rng = Lcg::new(seed);
    let mut values = vec![mean; grid.len()];
    let ky_max = if grid.dims() == 2 { max_mode } else { 0 };
    for ky in 0..=ky_max.min(grid.n() - 1) {
        for kx in 0..=max_mode.min(grid.n() - 1) {
            if kx == 0 && ky == 0 {
                continue;
            }
            let c = rng.next_centered(0.0, amplitude) / (1.0 + (kx * kx + ky * ky) as f64);
            let mode: Vec<usize> = if grid.dims() == 1 { vec![kx] } else { vec![kx, ky] };
            let q = grid.cosine_mode(&mode);
            values.iter_mut().zip(q.values()).for_each(|(v, qi)| *v += c * qi);
        }
    }
    Field::new(grid, values).expect("finite values")
}

// ---------------------------------------------------------------------------
// Caginalp cross-check

/// Dense `Delta_h` with reflecting boundaries, built face by face.
fn dense_laplacian(grid: Grid) -> DMatrix<f64> {
    let n = grid.n();
    let len = grid.len();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut lap = DMatrix::zeros(len, len);
    let mut face = |a: usize, b: usize| {
        lap[(a, a)] -= inv_h2;
        lap[(b, b)] -= inv_h2;
        lap[(a, b)] += inv_h2;
        lap[(b, a)] += inv_h2;
    };
    if grid.dims() == 1 {
        for i in 0..n - 1 {
            face(i, i + 1);
        }
    } else {
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                if ix + 1 < n {
                    face(idx, idx + 1);
                }
                if iy + 1 < n {
                    face(idx, idx + n);
                }
            }
        }
    }
    lap
}

/// One fully implicit Euler step of
/// `theta_t + chi_t - Delta theta = 0`,
/// `chi_t - Delta chi + W'(chi) - theta = 0`
/// with the double-well `W`, solved by Newton on the stacked system with a
/// dense Jacobian until the max-norm residual is below `tol`.
pub fn reference_caginalp_step(
    grid: Grid,
    theta_prev: &[f64],
    chi_prev: &[f64],
    tau: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = grid.len();
    let lap = dense_laplacian(grid);
    let mut x = DVector::from_iterator(2 * len, theta_prev.iter().chain(chi_prev).copied());
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let th = x.rows(0, len);
        let ch = x.rows(len, len);
        let lth = &lap * th;
        let lch = &lap * ch;
        let mut r = DVector::zeros(2 * len);
        for i in 0..len {
            r[i] = th[i] + ch[i] - theta_prev[i] - chi_prev[i] - tau * lth[i];
            let w = 4.0 * ch[i] * ch[i] * ch[i] - 4.0 * ch[i];
            r[len + i] = ch[i] - chi_prev[i] - tau * lch[i] + tau * (w - th[i]);
        }
        r
    };
    let mut r = residual(&x);
    for _ in 0..60 {
        if r.amax() <= tol {
            return Ok((x.rows(0, len).iter().copied().collect(), x.rows(len, len).iter().copied().collect()));
        }
        let mut jac = DMatrix::zeros(2 * len, 2 * len);
        for i in 0..len {
            for j in 0..len {
                jac[(i, j)] = -tau * lap[(i, j)];
                jac[(len + i, len + j)] = -tau * lap[(i, j)];
            }
            let c = x[len + i];
            jac[(i, i)] += 1.0;
            jac[(i, len + i)] = 1.0;
            jac[(len + i, i)] = -tau;
            jac[(len + i, len + i)] += 1.0 + tau * (12.0 * c * c - 4.0);
        }
        let step = jac.lu().solve(&(-&r)).ok_or_else(|| Error::Degenerate("singular reference Jacobian".into()))?;
        x += step;
        r = residual(&x);
    }
    Err(Error::NonConvergence {
        stage: "reference Newton",
        iterations: 60,
        residual_s: r.amax(),
        residual_chi: f64::NAN,
    })
}

/// Runs the gradient-flow solver in the `(s, chi)` variables and the
/// reference `(theta, chi)` discretization from the same data and reports
/// `max_n ||theta_gf - theta_ref||_H + ||chi_gf - chi_ref||_H`. The reference
/// Newton tolerance is the smaller of the two inner tolerances.
pub fn caginalp_crosscheck(
    plan: &SpectralPlan,
    p: &Potential,
    theta0: &Field,
    chi0: &Field,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
) -> Result<TrialReport> {
    let start = Instant::now();
    if *p != Potential::DoubleWell {
        return Err(Error::InvalidParameter(format!(
            "the reference solver needs the smooth double_well potential, got {}",
            p.name()
        )));
    }
    let grid = plan.grid();
    let m = EnergyModel::Caginalp;
    let s0 = Field::new(grid, theta0.values().iter().zip(chi0.values()).map(|(a, b)| a + b).collect())?;
    let u0 = State::new(s0, chi0.clone())?;
    let opts = opts.with_eps(0.0);
    let traj = run(&m, p, plan, &u0, t_final, steps, &opts)?;
    let tau = traj.tau;
    let tol = opts.tol_s.min(opts.tol_chi);

    let mut theta = theta0.values().to_vec();
    let mut chi = chi0.values().to_vec();
    let mut dist = vec![0.0];
    for u in traj.states.iter().skip(1) {
        let (th, ch) = reference_caginalp_step(grid, &theta, &chi, tau, tol)?;
        theta = th;
        chi = ch;
        let theta_gf = diff(u.s().values(), u.chi().values());
        dist.push(h_norm(grid, &diff(&theta_gf, &theta)) + h_norm(grid, &diff(u.chi().values(), &chi)));
    }
    let max = dist.iter().fold(0.0, |a: f64, &d| a.max(d));
    let mut report = TrialReport::new("caginalp");
    report.check("distance", max, Bound::AtMost(1e-7));
    report.push_series("distance", dist);
    Ok(report.timed(start))
}

/// Cross-check at the given inner tolerance and at 100 times tighter
/// tolerances; passes when the distance shrinks at least tenfold.
#[allow(clippy::too_many_arguments)]
pub fn caginalp_tolerance_scaling(
    plan: &SpectralPlan,
    theta0: &Field,
    chi0: &Field,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    exec: Exec,
) -> Result<TrialReport> {
    let start = Instant::now();
    let tight = opts.with_tolerances(opts.tol_s * 1e-2, opts.tol_chi * 1e-2);
    let p = Potential::DoubleWell;
    let (loose, fine) = exec.join(
        || caginalp_crosscheck(plan, &p, theta0, chi0, t_final, steps, opts),
        || caginalp_crosscheck(plan, &p, theta0, chi0, t_final, steps, &tight),
    );
    let (loose, fine) = (loose?, fine?);
    let d_loose = loose.value("distance").unwrap_or(f64::NAN);
    let d_fine = fine.value("distance").unwrap_or(f64::NAN);
    let mut report = TrialReport::new("caginalp");
    report.check("distance", d_loose, Bound::AtMost(1e-7));
    report.check("distance_tight", d_fine, Bound::AtMost(1e-7));
    let shrink = if d_fine > 0.0 { d_loose / d_fine } else { f64::INFINITY };
    report.check("shrink_factor", shrink, Bound::AtLeast(10.0));
    Ok(report.timed(start))
}

// ---------------------------------------------------------------------------
// Continuous dependence

/// Runs both trajectories and measures
/// `D(t_n) = ||s_a - s_b||_{V0'}^2 + ||chi_a - chi_b||_H^2` and `D(t_n)/D(0)`.
#[allow(clippy::too_many_arguments)]
pub fn continuous_dependence_trial(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u0_a: &State,
    u0_b: &State,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    exec: Exec,
) -> Result<TrialReport> {
    let start = Instant::now();
    let d0 = metric_distance_sq(plan, u0_a, u0_b);
    let scale = 1.0 + u0_a.s().max_abs().max(u0_b.s().max_abs());
    if u0_a != u0_b && d0 <= 1e-28 * scale * scale {
        return Err(Error::Degenerate("initial states differ only in the s-mean; D(0) = 0".into()));
    }
    let mean_gap = (u0_a.s().mean() - u0_b.s().mean()).abs();
    if mean_gap > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!(
            "initial entropies differ in mean by {mean_gap:e}; perturbations must be mean-free"
        )));
    }
    let (ta, tb) =
        exec.join(|| run(m, p, plan, u0_a, t_final, steps, opts), || run(m, p, plan, u0_b, t_final, steps, opts));
    let (ta, tb) = (ta?, tb?);
    let dist: Vec<f64> = ta.states.iter().zip(&tb.states).map(|(a, b)| metric_distance_sq(plan, a, b)).collect();
    let mut report = TrialReport::new("continuous_dependence");
    report.check("mean_offset", (ta.last().s().mean() - tb.last().s().mean()).abs(), Bound::Measured);
    if d0 == 0.0 {
        let max = dist.iter().fold(0.0, |a: f64, &d| a.max(d));
        report.check("max_distance", max, Bound::AtMost(0.0));
        report.push_series("distance", dist);
        return Ok(report.timed(start));
    }
    let ratios: Vec<f64> = dist.iter().map(|d| d / d0).collect();
    let max_ratio = ratios.iter().fold(0.0, |a: f64, &r| a.max(r));
    // Least-squares rate through the origin: log R(t) ~ rate t.
    let (mut num, mut den) = (0.0, 0.0);
    for (n, r) in ratios.iter().enumerate() {
        let t = ta.times[n];
        num += t * r.ln();
        den += t * t;
    }
    let rate = if den > 0.0 { num / den } else { 0.0 };
    let amplification = dist.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    report.check("max_ratio", max_ratio, Bound::Finite);
    report.check("fitted_rate", rate, Bound::Finite);
    report.check("one_step_constant", (amplification - 1.0) / ta.tau, Bound::Finite);
    report.push_series("distance", dist);
    report.push_series("ratio", ratios);
    Ok(report.timed(start))
}

/// Base state for the continuous-dependence study: `chi` near the spinodal
/// region of the double well, so that differences grow.
pub fn dependence_state(grid: Grid) -> State {
    let s = grid.sample(|x| 0.3 + 0.2 * (2.0 * PI * x[0]).cos()).expect("finite samples");
    let chi = grid.sample(|x| 0.1 + 0.1 * (PI * x[0]).cos()).expect("finite samples");
    State::new(s, chi).expect("same grid")
}

/// `u + delta (p_s, p_chi)` with `p_s` mean-free; `p_chi` has a nonzero mean.
pub fn perturbed(u: &State, delta: f64) -> Result<State> {
    let grid = u.grid();
    let ps = grid.sample(|x| (2.0 * PI * x[0]).cos() + 0.5 * (PI * x[0]).cos())?;
    let pc = grid.sample(|x| 0.5 + (PI * x[0]).cos())?;
    let ps = ps.project_zero_mean().into_field();
    State::new(u.s().plus_scaled(delta, &ps)?, u.chi().plus_scaled(delta, &pc)?)
}

/// Compares the Gronwall ratio across perturbation amplitudes and under one
/// joint halving of `h` and `tau`.
#[allow(clippy::too_many_arguments)]
pub fn continuous_dependence_study(
    m: &EnergyModel,
    p: &Potential,
    grid: Grid,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    deltas: &[f64],
    exec: Exec,
) -> Result<TrialReport> {
    let start = Instant::now();
    let coarse = SpectralPlan::new(grid);
    let fine_grid = Grid::new(grid.dims(), 2 * grid.n())?;
    let fine = SpectralPlan::new(fine_grid);
    let delta_ref = deltas.last().copied().unwrap_or(1e-3);
    let mut cases: Vec<(&SpectralPlan, usize, f64)> = deltas.iter().map(|&d| (&coarse, steps, d)).collect();
    cases.push((&fine, 2 * steps, delta_ref));
    let results = exec.map(&cases, |&(plan, n_steps, delta)| -> Result<f64> {
        let u_a = dependence_state(plan.grid());
        let u_b = perturbed(&u_a, delta)?;
        let r = continuous_dependence_trial(m, p, plan, &u_a, &u_b, t_final, n_steps, opts, Exec::Sequential)?;
        Ok(r.value("max_ratio").unwrap_or(f64::NAN))
    });
    let ratios: Vec<f64> = results.into_iter().collect::<Result<_>>()?;
    let (amp, refined) = ratios.split_at(deltas.len());
    let mut report = TrialReport::new("continuous_dependence");
    for (d, r) in deltas.iter().zip(amp) {
        report.check(format!("max_ratio_delta_{d:e}"), *r, Bound::Finite);
    }
    let hi = amp.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lo = amp.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    report.check("amplitude_spread", hi / lo - 1.0, Bound::AtMost(0.2));
    let base = amp[amp.len() - 1];
    report.check("refinement_change", (refined[0] / base - 1.0).abs(), Bound::AtMost(0.5));
    report.push_series("max_ratio", ratios);
    Ok(report.timed(start))
}

// ---------------------------------------------------------------------------
// Manufactured heat decay

/// DecoupledQuadratic runs from `s0 = sum a_j q_{k_j}` with `chi` frozen at
/// the double-well minimizer `1`; checks each amplitude against
/// `a_j (1 + tau lambda_{k_j} (1 + eps))^{-N}` and the leakage into all
/// other modes.
pub fn manufactured_superposition(
    plan: &SpectralPlan,
    modes: &[(Vec<usize>, f64)],
    t_final: f64,
    steps: usize,
    eps: f64,
    opts: &StepOptions,
) -> Result<TrialReport> {
    let start = Instant::now();
    let grid = plan.grid();
    let mut s0 = vec![0.0; grid.len()];
    let mut qs = Vec::with_capacity(modes.len());
    for (k, a) in modes {
        if k.iter().all(|&c| c == 0) {
            return Err(Error::InvalidParameter("the constant mode does not decay".into()));
        }
        let q = grid.try_cosine_mode(k)?;
        s0.iter_mut().zip(q.values()).for_each(|(s, qi)| *s += a * qi);
        qs.push(q);
    }
    let u0 = State::new(Field::new(grid, s0)?, Field::constant(grid, 1.0))?;
    let opts = opts.with_eps(eps);
    let traj = run(&EnergyModel::DecoupledQuadratic, &Potential::DoubleWell, plan, &u0, t_final, steps, &opts)?;
    let s = traj.last().s().values();
    let mut residual = s.to_vec();
    let mut amp_err: f64 = 0.0;
    for ((k, a), q) in modes.iter().zip(&qs) {
        let coef = grid.cell_volume() * dot(s, q.values()) / grid.cosine_mode_norm_sq(k);
        let lam = plan.eigenvalue(k);
        let expected = a * (1.0 + traj.tau * lam * (1.0 + eps)).powi(-(steps as i32));
        amp_err = amp_err.max((coef - expected).abs());
        residual.iter_mut().zip(q.values()).for_each(|(r, qi)| *r -= coef * qi);
    }
    let leak = residual.iter().fold(0.0, |m: f64, r| m.max(r.abs()));
    let chi_drift = traj.last().chi().values().iter().fold(0.0, |m: f64, c| m.max((c - 1.0).abs()));
    let mut report = TrialReport::new("manufactured");
    report.check("amplitude_error", amp_err, Bound::AtMost(1e-10));
    report.check("leakage", leak, Bound::AtMost(1e-10));
    report.check("chi_drift", chi_drift, Bound::AtMost(1e-10));
    Ok(report.timed(start))
}

/// Single-mode implicit heat decay.
pub fn manufactured_heat_decay(
    plan: &SpectralPlan,
    mode: &[usize],
    amplitude: f64,
    t_final: f64,
    steps: usize,
    eps: f64,
    opts: &StepOptions,
) -> Result<TrialReport> {
    manufactured_superposition(plan, &[(mode.to_vec(), amplitude)], t_final, steps, eps, opts)
}

// ---------------------------------------------------------------------------
// A priori estimates

/// Telescoped energy balance and the discrete bounds on `eta`, `d_chi j*`,
/// `xi` and `Delta_h chi` along an accepted trajectory.
pub fn estimate_suite(m: &EnergyModel, p: &Potential, plan: &SpectralPlan, traj: &Trajectory) -> Result<TrialReport> {
    let start = Instant::now();
    let grid = plan.grid();
    let tau = traj.tau;
    let phi0 = total_energy_eps(m, p, &traj.states[0], traj.eps)?;
    let phin = total_energy_eps(m, p, traj.last(), traj.eps)?;
    // sum tau ||du/tau||^2 = sum ||du||^2 / tau
    let dissipated: f64 = traj.states.windows(2).map(|w| metric_distance_sq(plan, &w[1], &w[0]) / tau).sum();
    let drop = phi0 - phin;
    let mut report = TrialReport::new("estimates");
    report.check("energy_balance", 0.5 * dissipated + phin - phi0, Bound::AtMost(1e-8));
    report.check("unhalved_balance", dissipated + phin - phi0, Bound::Measured);
    report.check("dissipation_sum", dissipated, Bound::Measured);
    if drop > 1e-12 * (1.0 + phi0.abs()) {
        report.check("dissipation_to_drop", dissipated / drop, Bound::Between(0.5, 2.0));
    }
    let mut eta: f64 = 0.0;
    let mut dchi: f64 = 0.0;
    let mut xi: f64 = 0.0;
    let mut lap: f64 = 0.0;
    for (u, c) in traj.states.iter().skip(1).zip(&traj.certificates) {
        eta = eta.max(c.eta.norm_h());
        xi = xi.max(c.xi.norm_h());
        let dc: Vec<f64> =
            u.s().values().iter().zip(u.chi().values()).map(|(&s, &x)| m.jstar_dchi(s, x)).collect::<Result<_>>()?;
        dchi = dchi.max(h_norm(grid, &dc));
        lap = lap.max(u.chi().laplace_neumann().norm_h());
    }
    report.check("max_eta", eta, Bound::Finite);
    report.check("max_dchi_jstar", dchi, Bound::Finite);
    report.check("max_xi", xi, Bound::Finite);
    report.check("max_laplace_chi", lap, Bound::Finite);
    Ok(report.timed(start))
}

// ---------------------------------------------------------------------------
// eps-continuation and chain rule

/// Distances of the runs at each positive eps to the `eps = 0` run, their
/// monotone decrease, and the least-squares order in eps.
#[allow(clippy::too_many_arguments)]
pub fn eps_continuation_trial(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u0: &State,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    eps_positive: &[f64],
    exec: Exec,
) -> Result<TrialReport> {
    let start = Instant::now();
    let mut list = eps_positive.to_vec();
    list.push(0.0);
    let cont = eps_continuation(m, p, plan, u0, t_final, steps, opts, &list, exec)?;
    let dist: Vec<f64> = cont.to_zero.expect("list ends with zero")[..eps_positive.len()].to_vec();
    let mut report = TrialReport::new("eps_continuation");
    for (e, d) in eps_positive.iter().zip(&dist) {
        report.check(format!("distance_eps_{e:e}"), *d, Bound::Finite);
    }
    let monotone = dist.windows(2).all(|w| w[1] < w[0]);
    report.check("monotone", if monotone { 1.0 } else { 0.0 }, Bound::AtLeast(1.0));
    for (w, d) in eps_positive.windows(2).zip(dist.windows(2)) {
        let order = (d[0] / d[1]).ln() / (w[0] / w[1]).ln();
        report.check(format!("order_{:e}_{:e}", w[0], w[1]), order, Bound::Measured);
    }
    let xs: Vec<f64> = eps_positive.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = dist.iter().map(|d| d.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    report.check("order", sxy / sxx, Bound::AtLeast(0.8));
    report.push_series("distance_to_zero", dist);
    Ok(report.timed(start))
}

/// Chain-rule discrepancies at `tau` and `tau / 2`; their mean absolute
/// values should shrink by a factor of about 4.
#[allow(clippy::too_many_arguments)]
pub fn chain_rule_trial(
    m: &EnergyModel,
    p: &Potential,
    plan: &SpectralPlan,
    u0: &State,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    exec: Exec,
) -> Result<TrialReport> {
    let start = Instant::now();
    let (a, b) =
        exec.join(|| run(m, p, plan, u0, t_final, steps, opts), || run(m, p, plan, u0, t_final, 2 * steps, opts));
    let (a, b) = (chain_rule_audit(m, &a?), chain_rule_audit(m, &b?));
    let mut report = TrialReport::new("chain_rule");
    report.check("mean_discrepancy", a.mean_abs, Bound::Finite);
    report.check("mean_discrepancy_half_tau", b.mean_abs, Bound::Finite);
    report.check("halving_ratio", a.mean_abs / b.mean_abs, Bound::Between(3.0, 5.0));
    report.push_series("discrepancy", a.discrepancies);
    Ok(report.timed(start))
}

// ---------------------------------------------------------------------------
// Suites over all model/potential combinations

pub const SUITE_MODELS: [EnergyModel; 3] =
    [EnergyModel::Caginalp, EnergyModel::Entropy { ell: 1.0 }, EnergyModel::PenroseFife];
pub const SUITE_POTENTIALS: [Potential; 3] = [Potential::DoubleWell, Potential::Logarithmic, Potential::DoubleObstacle];

/// Worst-case measurements of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunAudit {
    pub model: EnergyModel,
    pub potential: Potential,
    /// `max_n [Phi(u^n) + ||du||^2 / (2 tau) - Phi(u^{n-1})]`.
    pub descent_violation: f64,
    pub energy_increase: f64,
    /// `max_n |mean(s^n) - mean(s^0)| / (1 + max|s^n|)`.
    pub conservation: f64,
    pub min_margin: f64,
    pub chi_min: f64,
    pub chi_max: f64,
    pub max_residual_s: f64,
    pub max_residual_chi: f64,
}

pub fn audit_run(plan: &SpectralPlan, traj: &Trajectory) -> Result<RunAudit> {
    let (m, p) = (traj.model, traj.potential);
    let mean0 = traj.states[0].s().mean();
    let mut audit = RunAudit {
        model: m,
        potential: p,
        descent_violation: f64::NEG_INFINITY,
        energy_increase: f64::NEG_INFINITY,
        conservation: 0.0,
        min_margin: f64::INFINITY,
        chi_min: f64::INFINITY,
        chi_max: f64::NEG_INFINITY,
        max_residual_s: 0.0,
        max_residual_chi: 0.0,
    };
    let mut prev = total_energy_eps(&m, &p, &traj.states[0], traj.eps)?;
    for (n, u) in traj.states.iter().enumerate() {
        let phi = total_energy_eps(&m, &p, u, traj.eps)?;
        if n > 0 {
            let d = metric_distance_sq(plan, u, &traj.states[n - 1]);
            audit.descent_violation = audit.descent_violation.max(phi + d / (2.0 * traj.tau) - prev);
            audit.energy_increase = audit.energy_increase.max(phi - prev);
            let c = &traj.certificates[n - 1];
            audit.max_residual_s = audit.max_residual_s.max(c.residual_s);
            audit.max_residual_chi = audit.max_residual_chi.max(c.residual_chi);
        }
        prev = phi;
        let rel = (u.s().mean() - mean0).abs() / (1.0 + u.s().max_abs());
        audit.conservation = audit.conservation.max(rel);
        for (&s, &c) in u.s().values().iter().zip(u.chi().values()) {
            audit.min_margin = audit.min_margin.min(s - c);
            audit.chi_min = audit.chi_min.min(c);
            audit.chi_max = audit.chi_max.max(c);
        }
    }
    Ok(audit)
}

/// Runs every shipped model/potential pairing from [`reference_state`].
pub fn combination_audits(
    grid: Grid,
    t_final: f64,
    steps: usize,
    opts: &StepOptions,
    exec: Exec,
) -> Result<Vec<RunAudit>> {
    let plan = SpectralPlan::new(grid);
    let u0 = reference_state(grid);
    let pairs: Vec<(EnergyModel, Potential)> =
        SUITE_MODELS.iter().flat_map(|m| SUITE_POTENTIALS.iter().map(move |p| (*m, *p))).collect();
    exec.map(&pairs, |(m, p)| {
        let traj = run(m, p, &plan, &u0, t_final, steps, opts)?;
        audit_run(&plan, &traj)
    })
    .into_iter()
    .collect()
}

fn combo_name(a: &RunAudit) -> String {
    format!("{}/{}", a.model.name(), a.potential.name())
}

pub fn dissipation_report(audits: &[RunAudit]) -> TrialReport {
    let mut r = TrialReport::new("dissipation");
    for a in audits {
        r.check(format!("{}:descent_violation", combo_name(a)), a.descent_violation, Bound::AtMost(1e-10));
        r.check(format!("{}:energy_increase", combo_name(a)), a.energy_increase, Bound::AtMost(1e-10));
    }
    r
}

pub fn conservation_report(audits: &[RunAudit]) -> TrialReport {
    let mut r = TrialReport::new("conservation");
    for a in audits {
        r.check(format!("{}:mean_drift", combo_name(a)), a.conservation, Bound::AtMost(1e-12));
    }
    r
}

pub fn feasibility_report(audits: &[RunAudit]) -> TrialReport {
    let mut r = TrialReport::new("feasibility");
    for a in audits {
        if a.model == EnergyModel::PenroseFife {
            r.check(format!("{}:min_margin", combo_name(a)), a.min_margin, Bound::AtLeast(f64::MIN_POSITIVE));
        }
        if a.potential != Potential::DoubleWell {
            r.check(format!("{}:chi_min", combo_name(a)), a.chi_min, Bound::AtLeast(0.0));
            r.check(format!("{}:chi_max", combo_name(a)), a.chi_max, Bound::Between(0.0, 1.0));
        }
    }
    r
}

// ---------------------------------------------------------------------------
// Operator and prox self-checks

/// Compares the spectral `A` with a face-by-face dense matrix for `n <= 8`,
/// and checks `A^{-1} A = I` and summation by parts for sizes up to `max_n`.
pub fn spectral_suite(max_n: usize, exec: Exec) -> Result<TrialReport> {
    let start = Instant::now();
    let mut sizes: Vec<(usize, usize)> = Vec::new();
    for d in 1..=2 {
        let mut n = 2;
        while n <= max_n {
            sizes.push((d, n));
            n *= 2;
        }
    }
    let rows = exec.map(&sizes, |&(d, n)| -> Result<(f64, f64, f64)> {
        let grid = Grid::new(d, n)?;
        let plan = SpectralPlan::new(grid);
        let seed = (d * 1000 + n) as u64;
        let f = smooth_random_field(grid, seed, 0.3, 1.0, n).project_zero_mean();
        let g = smooth_random_field(grid, seed + 1, -0.2, 1.0, n).project_zero_mean();
        let af = plan.apply_a(&f)?;
        let ag = plan.apply_a(&g)?;
        let mut dense_err: f64 = 0.0;
        if n <= 8 {
            let lap = dense_laplacian(grid);
            let v = DVector::from_column_slice(f.values());
            let oracle = -(&lap * v);
            let om = oracle.mean();
            for (a, o) in af.values().iter().zip(oracle.iter()) {
                dense_err = dense_err.max((a - (o - om)).abs());
            }
        }
        let back = plan.apply_a_inv(&af)?;
        let round: f64 = back.values().iter().zip(f.values()).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        let sbp = (af.inner_h(&g)? - f.inner_h(&ag)?).abs();
        Ok((dense_err, round, sbp))
    });
    let mut report = TrialReport::new("spectral");
    let (mut dense, mut round, mut sbp): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for r in rows {
        let (a, b, c) = r?;
        dense = dense.max(a);
        round = round.max(b);
        sbp = sbp.max(c);
    }
    report.check("dense_oracle_error", dense, Bound::AtMost(1e-10));
    report.check("inverse_round_trip", round, Bound::AtMost(1e-10));
    report.check("summation_by_parts", sbp, Bound::AtMost(1e-10));
    Ok(report.timed(start))
}

/// Golden-section minimization of `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Prox maps against brute-force minimization on 100 random `(w, lambda)`
/// pairs per potential, and firm nonexpansiveness on 1000 random pairs.
pub fn prox_suite(seed: u64) -> Result<TrialReport> {
    let start = Instant::now();
    let mut rng = Lcg::new(seed);
    let mut report = TrialReport::new("prox");
    for p in SUITE_POTENTIALS {
        let mut err: f64 = 0.0;
        for _ in 0..100 {
            let w = rng.next_centered(0.5, 3.0);
            let lam = 0.01 + 2.0 * rng.next_f64();
            let x = p.prox_beta(w, lam)?;
            let (lo, hi) = match p {
                Potential::DoubleWell => (-4.0, 4.0),
                _ => (0.0, 1.0),
            };
            let oracle = golden_section(|z| p.beta_hat(z) + (z - w) * (z - w) / (2.0 * lam), lo, hi, 200);
            err = err.max((x - oracle).abs());
        }
        report.check(format!("{}:oracle_error", p.name()), err, Bound::AtMost(1e-6));
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..1000 {
            let lam = 0.01 + 2.0 * rng.next_f64();
            let (a, b) = (rng.next_centered(0.5, 3.0), rng.next_centered(0.5, 3.0));
            let (pa, pb) = (p.prox_beta(a, lam)?, p.prox_beta(b, lam)?);
            // (Pa - Pb)^2 <= (Pa - Pb)(a - b)
            worst = worst.max((pa - pb) * (pa - pb) - (pa - pb) * (a - b));
        }
        report.check(format!("{}:firm_nonexpansive_excess", p.name()), worst, Bound::AtMost(1e-12));
    }
    Ok(report.timed(start))
}

/// Smooth Caginalp data used by the cross-check, continuation and chain-rule
/// suites.
pub fn smooth_caginalp_data(grid: Grid, seed: u64) -> (Field, Field) {
    let theta = smooth_random_field(grid, seed, 0.1, 0.4, 4);
    let chi = smooth_random_field(grid, seed.wrapping_add(1), 0.2, 0.6, 4);
    (theta, chi)
}
