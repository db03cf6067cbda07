//! The Riesz map `A = -Delta_h` on zero-mean fields, its inverse, the dual
//! norm and the duality map of the gradient-flow metric.
//!
//! `A` is diagonalized exactly by the orthonormal DCT-II basis, which is
//! stored as a dense `n x n` matrix and applied axis by axis. Coefficient
//! arrays use the same layout as node arrays (`ky * n + kx`).

use crate::error::{Error, Result};
use crate::grid::{dot, laplace_into, Field, Grid, ZeroMeanField};
use crate::par::Exec;
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct SpectralPlan {
    grid: Grid,
    /// Orthonormal DCT-II matrix, row `k` holds basis vector `k`.
    basis: Vec<f64>,
    /// `lambda_k` per coefficient index.
    eigenvalues: Vec<f64>,
    exec: Exec,
}

/// 1D Neumann eigenvalue `(4 / h^2) sin^2(k pi / (2 n))`.
pub fn eigenvalue_1d(n: usize, k: usize) -> f64 {
    let s = (k as f64 * PI / (2.0 * n as f64)).sin();
    4.0 * (n * n) as f64 * s * s
}

impl SpectralPlan {
    pub fn new(grid: Grid) -> SpectralPlan {
        let n = grid.n();
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let c = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                basis[k * n + i] = c * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let lam1: Vec<f64> = (0..n).map(|k| eigenvalue_1d(n, k)).collect();
        let eigenvalues = (0..grid.len())
            .map(|idx| {
                let [kx, ky] = grid.multi_index(idx);
                if grid.dims() == 1 {
                    lam1[kx]
                } else {
                    lam1[kx] + lam1[ky]
                }
            })
            .collect();
        SpectralPlan { grid, basis, eigenvalues, exec: Exec::Sequential }
    }

    /// Selects how independent transform lines are scheduled in 2D.
    pub fn with_exec(mut self, exec: Exec) -> SpectralPlan {
        self.exec = exec;
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, mode: &[usize]) -> f64 {
        let n = self.grid.n();
        mode.iter().take(self.grid.dims()).map(|&k| eigenvalue_1d(n, k)).sum()
    }

    fn transform_lines(&self, data: &mut [f64], inverse: bool) {
        let n = self.grid.n();
        let basis = &self.basis;
        let line = |row: &mut [f64]| {
            let mut out = vec![0.0; n];
            if inverse {
                for (k, &c) in row.iter().enumerate() {
                    let b = &basis[k * n..(k + 1) * n];
                    out.iter_mut().zip(b).for_each(|(o, bi)| *o += c * bi);
                }
            } else {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = dot(&basis[k * n..(k + 1) * n], row);
                }
            }
            row.copy_from_slice(&out);
        };
        self.exec.for_each_chunk(data, n, line);
    }

    fn transpose(&self, data: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[i * n + j] = data[j * n + i];
            }
        }
        out
    }

    fn transform(&self, v: &[f64], inverse: bool) -> Vec<f64> {
        assert_eq!(v.len(), self.grid.len());
        let mut data = v.to_vec();
        self.transform_lines(&mut data, inverse);
        if self.grid.dims() == 2 {
            data = self.transpose(&data);
            self.transform_lines(&mut data, inverse);
            data = self.transpose(&data);
        }
        data
    }

    /// Orthonormal DCT-II coefficients of node data.
    pub fn forward(&self, v: &[f64]) -> Vec<f64> {
        self.transform(v, false)
    }

    /// Inverse of [`SpectralPlan::forward`].
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        self.transform(c, true)
    }

    /// Applies the Fourier multiplier `m(lambda_k, k)` to node data.
    pub fn apply_multiplier(&self, v: &[f64], m: impl Fn(f64, usize) -> f64) -> Vec<f64> {
        let mut c = self.forward(v);
        for (k, (ck, &lam)) in c.iter_mut().zip(&self.eigenvalues).enumerate() {
            *ck *= m(lam, k);
        }
        self.inverse(&c)
    }

    /// `A^{-1}` on raw data; the constant mode is discarded.
    pub(crate) fn inv_a_raw(&self, v: &[f64]) -> Vec<f64> {
        self.apply_multiplier(v, |lam, k| if k == 0 { 0.0 } else { 1.0 / lam })
    }

    /// Solves `(c0 I + c1 A) x = v` on the zero-mean complement and
    /// `c0 x_0 = v_0` on the constant mode (`c0 > 0`, `c1 >= 0`).
    pub(crate) fn shifted_solve_raw(&self, v: &[f64], c0: f64, c1: f64) -> Vec<f64> {
        self.apply_multiplier(v, |lam, _| 1.0 / (c0 + c1 * lam))
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `A v = -Delta_h v`.
    pub fn apply_a(&self, v: &ZeroMeanField) -> Result<ZeroMeanField> {
        self.check(v)?;
        let mut out = vec![0.0; self.grid.len()];
        laplace_into(self.grid, v.values(), &mut out);
        out.iter_mut().for_each(|x| *x = -*x);
        Ok(ZeroMeanField::from_vec_projected(self.grid, out))
    }

    /// The unique zero-mean `g` with `A g = f`.
    pub fn apply_a_inv(&self, f: &ZeroMeanField) -> Result<ZeroMeanField> {
        self.check(f)?;
        Ok(ZeroMeanField::from_vec_projected(self.grid, self.inv_a_raw(f.values())))
    }

    /// `||f||_{V0'}^2 = (f, A^{-1} f)_H`.
    pub fn norm_v0p_sq(&self, f: &ZeroMeanField) -> Result<f64> {
        self.check(f)?;
        // Parseval in the orthonormal basis.
        let c = self.forward(f.values());
        let acc: f64 = c.iter().zip(&self.eigenvalues).skip(1).map(|(ck, lam)| ck * ck / lam).sum();
        Ok(self.grid.cell_volume() * acc)
    }

    /// `N(s_dot, chi_dot) = (A^{-1} s_dot, chi_dot)`.
    pub fn duality_map(&self, s_dot: &ZeroMeanField, chi_dot: &Field) -> Result<(Field, Field)> {
        self.check(chi_dot)?;
        Ok((self.apply_a_inv(s_dot)?.into_field(), chi_dot.clone()))
    }

    /// `1/2 ||s_dot||_{V0'}^2 + 1/2 ||chi_dot||_H^2`.
    pub fn dissipation(&self, s_dot: &ZeroMeanField, chi_dot: &Field) -> Result<f64> {
        self.check(chi_dot)?;
        Ok(0.5 * self.norm_v0p_sq(s_dot)? + 0.5 * chi_dot.inner_h(chi_dot)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn wiggly(grid: Grid, seed: f64) -> ZeroMeanField {
        grid.sample(|x| {
            let y = x.get(1).copied().unwrap_or(0.3);
            (7.0 * x[0] + seed).sin() * (3.0 * y - seed).cos() + x[0] * y * seed
        })
        .unwrap()
        .project_zero_mean()
    }

    #[test]
    fn transform_round_trip() {
        for d in 1..=2 {
            for n in [2, 5, 16] {
                let g = make_grid(d, n).unwrap();
                let plan = SpectralPlan::new(g);
                let v = wiggly(g, 0.7);
                let back = plan.inverse(&plan.forward(v.values()));
                for (a, b) in back.iter().zip(v.values()) {
                    assert!((a - b).abs() < 1e-12 * (1.0 + v.max_abs()));
                }
            }
        }
    }

    #[test]
    fn eigenvalues_nonnegative_and_zero_only_for_constant() {
        let plan = SpectralPlan::new(make_grid(2, 9).unwrap());
        assert_eq!(plan.eigenvalues()[0], 0.0);
        assert!(plan.eigenvalues()[1..].iter().all(|&l| l > 0.0));
        assert!((plan.eigenvalue(&[2, 3]) - plan.eigenvalues()[3 * 9 + 2]).abs() < 1e-9);
    }

    #[test]
    fn apply_a_examples() {
        let g = make_grid(1, 8).unwrap();
        let plan = SpectralPlan::new(g);
        let z = plan.apply_a(&ZeroMeanField::zeros(g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);

        let v = wiggly(g, 0.1);
        let w = wiggly(g, 1.9);
        let combo = v.plus_scaled(-2.5, &w).unwrap().project_zero_mean();
        let lhs = plan.apply_a(&combo).unwrap();
        let rhs = plan.apply_a(&v).unwrap().plus_scaled(-2.5, &plan.apply_a(&w).unwrap()).unwrap();
        let scale = 1.0 + rhs.max_abs();
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn inverse_examples() {
        let g = make_grid(2, 6).unwrap();
        let plan = SpectralPlan::new(g);
        assert_eq!(plan.apply_a_inv(&ZeroMeanField::zeros(g)).unwrap().max_abs(), 0.0);

        let q = g.cosine_mode(&[2, 1]);
        let lam = plan.eigenvalue(&[2, 1]);
        let lq = ZeroMeanField::try_from(q.scaled(lam).unwrap()).unwrap();
        let back = plan.apply_a_inv(&lq).unwrap();
        for (a, b) in back.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_examples() {
        let g = make_grid(1, 8).unwrap();
        let plan = SpectralPlan::new(g);
        assert_eq!(plan.norm_v0p_sq(&ZeroMeanField::zeros(g)).unwrap(), 0.0);
        let f = wiggly(g, 0.4);
        let f2 = ZeroMeanField::try_from(f.scaled(2.0).unwrap()).unwrap();
        let (a, b) = (plan.norm_v0p_sq(&f).unwrap(), plan.norm_v0p_sq(&f2).unwrap());
        assert!((b - 4.0 * a).abs() < 1e-12 * b);

        // Direct route: (f, A^{-1} f)_H.
        let direct = f.inner_h(&plan.apply_a_inv(&f).unwrap()).unwrap();
        assert!((a - direct).abs() < 1e-12 * a);
    }

    #[test]
    fn single_mode_norm_and_dissipation() {
        let g = make_grid(1, 8).unwrap();
        let plan = SpectralPlan::new(g);
        let amp = 0.75;
        let q = ZeroMeanField::try_from(g.cosine_mode(&[3]).scaled(amp).unwrap()).unwrap();
        let expected = amp * amp * g.cosine_mode_norm_sq(&[3]) / plan.eigenvalue(&[3]);
        assert!((plan.norm_v0p_sq(&q).unwrap() - expected).abs() < 1e-13);
        let diss = plan.dissipation(&q, &Field::zeros(g)).unwrap();
        assert!((diss - 0.5 * expected).abs() < 1e-13);
    }

    #[test]
    fn duality_map_examples() {
        let g = make_grid(1, 8).unwrap();
        let plan = SpectralPlan::new(g);
        let (a, b) = plan.duality_map(&ZeroMeanField::zeros(g), &Field::zeros(g)).unwrap();
        assert_eq!((a.max_abs(), b.max_abs()), (0.0, 0.0));

        let q = g.cosine_mode(&[1]);
        let lq = ZeroMeanField::try_from(q.scaled(plan.eigenvalue(&[1])).unwrap()).unwrap();
        let w = g.sample(|x| x[0].exp()).unwrap();
        let (first, second) = plan.duality_map(&lq, &w).unwrap();
        assert_eq!(second, w);
        for (a, b) in first.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dissipation_homogeneity_and_zero() {
        let g = make_grid(2, 5).unwrap();
        let plan = SpectralPlan::new(g);
        assert_eq!(plan.dissipation(&ZeroMeanField::zeros(g), &Field::zeros(g)).unwrap(), 0.0);
        let s = wiggly(g, 0.3);
        let c = g.sample(|x| x[0] - x[1]).unwrap();
        let one = plan.dissipation(&s, &c).unwrap();
        let s2 = ZeroMeanField::try_from(s.scaled(2.0).unwrap()).unwrap();
        let two = plan.dissipation(&s2, &c.scaled(2.0).unwrap()).unwrap();
        assert!(one > 0.0);
        assert!((two - 4.0 * one).abs() < 1e-12 * two);
    }

    #[test]
    fn parallel_transform_is_bitwise_sequential() {
        let g = make_grid(2, 16).unwrap();
        let v = wiggly(g, 2.2);
        let seq = SpectralPlan::new(g).inv_a_raw(v.values());
        let par = SpectralPlan::new(g).with_exec(Exec::Parallel).inv_a_raw(v.values());
        assert_eq!(seq, par);
    }
}
