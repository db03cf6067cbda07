//! Preconditioned conjugate gradients on raw node data.

use crate::grid::dot;

pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub iterations: usize,
}

/// Solves `op(x) = b` for symmetric positive definite `op` with SPD
/// preconditioner `prec`, stopping when the preconditioned residual norm
/// drops below `rel_tol` times its initial value.
pub(crate) fn pcg(
    op: impl Fn(&[f64]) -> Vec<f64>,
    prec: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut z = prec(&r);
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return CgOutcome { x, iterations: 0 };
    }
    let stop = rel_tol * rel_tol * rz;
    let mut p = z.clone();
    for it in 1..=max_iter {
        let ap = op(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgOutcome { x, iterations: it - 1 };
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        z = prec(&r);
        let rz_next = dot(&r, &z);
        if !(rz_next > stop) {
            return CgOutcome { x, iterations: it };
        }
        let beta = rz_next / rz;
        rz = rz_next;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    CgOutcome { x, iterations: max_iter }
}
