//! Small dense-vector helpers and the matrix-free conjugate-gradient solver.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) struct CgOutcome {
    pub solution: Vec<f64>,
    /// Recurrence-based relative residual at exit.
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `A x = b` for symmetric positive-definite `A` given only the
/// matrix-vector product `apply`.
///
/// Convergence is declared when the relative residual `||b - A x|| / ||b||`
/// drops to `rel_tol`. A zero right-hand side returns the zero solution in
/// zero iterations.
pub(crate) fn cg_solve<F>(apply: F, b: &[f64], rel_tol: f64, max_iterations: usize) -> CgOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return CgOutcome {
            solution: vec![0.0; n],
            relative_residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }

    let mut x = vec![0.0; n];
    let mut residual = b.to_vec();
    let mut direction = b.to_vec();
    let mut rs = dot(&residual, &residual);

    if rs.sqrt() / b_norm <= rel_tol {
        return CgOutcome {
            solution: x,
            relative_residual: rs.sqrt() / b_norm,
            iterations: 0,
            converged: true,
        };
    }

    for iteration in 1..=max_iterations {
        let a_dir = apply(&direction);
        let denom = dot(&direction, &a_dir);
        if denom <= 0.0 || !denom.is_finite() {
            // Not positive definite along this direction; bail with the best iterate.
            return CgOutcome {
                solution: x,
                relative_residual: rs.sqrt() / b_norm,
                iterations: iteration,
                converged: false,
            };
        }
        let alpha = rs / denom;
        axpy(alpha, &direction, &mut x);
        axpy(-alpha, &a_dir, &mut residual);
        let rs_next = dot(&residual, &residual);
        if rs_next.sqrt() / b_norm <= rel_tol {
            return CgOutcome {
                solution: x,
                relative_residual: rs_next.sqrt() / b_norm,
                iterations: iteration,
                converged: true,
            };
        }
        let beta = rs_next / rs;
        for (d, r) in direction.iter_mut().zip(&residual) {
            *d = r + beta * *d;
        }
        rs = rs_next;
    }

    CgOutcome {
        solution: x,
        relative_residual: rs.sqrt() / b_norm,
        iterations: max_iterations,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply_dense(m: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
        (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
    }

    #[test]
    fn solves_small_spd_system() {
        // [[4,1],[1,3]] x = [1,2] -> x = [1/11, 7/11]
        let m = [4.0, 1.0, 1.0, 3.0];
        let b = [1.0, 2.0];
        let out = cg_solve(|v| apply_dense(&m, 2, v), &b, 1e-12, 10);
        assert!(out.converged);
        assert!((out.solution[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((out.solution[1] - 7.0 / 11.0).abs() < 1e-10);
    }

    #[test]
    fn zero_rhs_returns_zero_in_zero_iterations() {
        let m = [2.0, 0.0, 0.0, 2.0];
        let out = cg_solve(|v| apply_dense(&m, 2, v), &[0.0, 0.0], 1e-10, 10);
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn reports_failure_when_budget_exhausted() {
        let m = [1.0, 0.0, 0.0, 1e6];
        let out = cg_solve(|v| apply_dense(&m, 2, v), &[1.0, 1.0], 1e-30, 1);
        assert!(!out.converged);
        assert!(out.relative_residual > 0.0);
    }
}
