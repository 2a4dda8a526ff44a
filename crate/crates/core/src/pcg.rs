//! Matrix-free preconditioned conjugate gradients.

use crate::grid::{dot, norm2};
use crate::{Error, Result};

/// Options for a PCG solve.
#[derive(Debug, Clone, Copy)]
pub struct PcgOptions {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iter: 10_000 }
    }
}

/// Outcome of a converged solve.
#[derive(Debug, Clone, Copy)]
pub struct PcgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve A x = b for SPD (possibly singular, consistent) A.
///
/// `apply` computes out = A u; `precond` is the inverse diagonal;
/// `project` removes the kernel component from a vector (pass a no-op
/// for nonsingular systems). The solution starts at zero, so for a
/// consistent singular system the iterates stay in range(A).
pub fn solve(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precond_inv_diag: &[f64],
    project: &dyn Fn(&mut [f64]),
    b: &[f64],
    x: &mut [f64],
    opts: PcgOptions,
) -> Result<PcgStats> {
    let n = b.len();
    x.fill(0.0);
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = norm2(&r);
    if bnorm == 0.0 {
        return Ok(PcgStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut z: Vec<f64> = (0..n).map(|i| r[i] * precond_inv_diag[i]).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for iter in 1..=opts.max_iter {
        apply(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SingularSystem(format!(
                "non-positive curvature p·Ap = {pap:.3e} at iteration {iter}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = norm2(&r);
        if rnorm <= opts.rtol * bnorm {
            return Ok(PcgStats { iterations: iter, relative_residual: rnorm / bnorm });
        }
        for i in 0..n {
            z[i] = r[i] * precond_inv_diag[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let mut rfin = b.to_vec();
    apply(x, &mut ap);
    for i in 0..n {
        rfin[i] -= ap[i];
    }
    project(&mut rfin);
    Err(Error::SolverDivergence {
        residual: norm2(&rfin) / bnorm,
        iterations: opts.max_iter,
    })
}
