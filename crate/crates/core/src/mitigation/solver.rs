//! Dense constrained least squares on the probability simplex:
//!
//! ```text
//!     minimize    || A v - b ||^2
//!     subject to  sum_i v_i = 1,  v_i >= 0
//! ```
//!
//! solved by a primal active-set method. Zero-pinned coordinates form the
//! working set; each iteration solves the equality-constrained subproblem on
//! the free coordinates via the bordered normal equations, walks toward that
//! optimum until a bound blocks, and releases a pinned coordinate only when
//! its KKT multiplier says the objective still improves.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(v).map(|(a, x)| a * x).sum();
        }
        out
    }

    /// `A^T w`.
    pub fn tr_matvec(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * w[r];
            }
        }
        out
    }
}

/// Result of the constrained solve.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub values: Vec<f64>,
    /// `||A v - b||^2` at the solution.
    pub residual: f64,
    /// Set when the normal equations were singular and the answer fell back
    /// to the simplex projection of the input.
    pub degenerate: bool,
    pub iterations: usize,
}

const MULTIPLIER_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-12;

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (acc - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    x.iter().map(|&v| (v - tau).max(0.0)).collect()
}

fn residual_sq(a: &Matrix, b: &[f64], v: &[f64]) -> f64 {
    a.matvec(v).iter().zip(b).map(|(av, bv)| (av - bv).powi(2)).sum()
}

/// Solve the bordered normal equations on the free coordinates:
/// `[2 G  1; 1^T 0] [v; mu] = [2 A_F^T b; 1]`. Returns `None` on a singular
/// pivot.
fn solve_equality_subproblem(a: &Matrix, b: &[f64], free: &[usize]) -> Option<(Vec<f64>, f64)> {
    let k = free.len();
    let dim = k + 1;
    let mut system = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for (fi, &ci) in free.iter().enumerate() {
        for (fj, &cj) in free.iter().enumerate() {
            let mut g = 0.0;
            for r in 0..a.rows {
                g += a.get(r, ci) * a.get(r, cj);
            }
            system[fi * dim + fj] = 2.0 * g;
        }
        system[fi * dim + k] = 1.0;
        system[k * dim + fi] = 1.0;
        let mut atb = 0.0;
        for r in 0..a.rows {
            atb += a.get(r, ci) * b[r];
        }
        rhs[fi] = 2.0 * atb;
    }
    rhs[k] = 1.0;

    // Gaussian elimination with partial pivoting.
    for col in 0..dim {
        let (pivot_row, pivot_abs) = (col..dim)
            .map(|r| (r, system[r * dim + col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if pivot_abs < PIVOT_TOL {
            return None;
        }
        if pivot_row != col {
            for c in 0..dim {
                system.swap(col * dim + c, pivot_row * dim + c);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = system[col * dim + col];
        for r in col + 1..dim {
            let factor = system[r * dim + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..dim {
                system[r * dim + c] -= factor * system[col * dim + c];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut solution = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut v = rhs[r];
        for c in r + 1..dim {
            v -= system[r * dim + c] * solution[c];
        }
        solution[r] = v / system[r * dim + r];
    }
    let mu = solution[k];
    solution.truncate(k);
    Some((solution, mu))
}

/// Minimize `||A v - b||^2` over the probability simplex.
pub fn solve_simplex_least_squares(a: &Matrix, b: &[f64]) -> ConstrainedSolution {
    assert_eq!(a.rows, b.len(), "right-hand side must match the matrix rows");
    let k = a.cols;
    if k == 1 {
        return ConstrainedSolution {
            values: vec![1.0],
            residual: residual_sq(a, b, &[1.0]),
            degenerate: false,
            iterations: 0,
        };
    }

    let fallback = |iterations: usize| {
        let projected = if b.len() == k { project_to_simplex(b) } else { vec![1.0 / k as f64; k] };
        let residual = residual_sq(a, b, &projected);
        ConstrainedSolution { values: projected, residual, degenerate: true, iterations }
    };

    let mut pinned = vec![false; k];
    let mut v = vec![1.0 / k as f64; k];
    let max_iterations = 20 * k + 50;
    for iteration in 0..max_iterations {
        let free: Vec<usize> = (0..k).filter(|&i| !pinned[i]).collect();
        let Some((sub, _mu)) = solve_equality_subproblem(a, b, &free) else {
            return fallback(iteration);
        };
        let negative = sub.iter().any(|&x| x < -MULTIPLIER_TOL);
        if !negative {
            for (fi, &ci) in free.iter().enumerate() {
                v[ci] = sub[fi].max(0.0);
            }
            for (ci, val) in v.iter_mut().enumerate() {
                if pinned[ci] {
                    *val = 0.0;
                }
            }
            // KKT: release a pinned coordinate whose multiplier is negative.
            let gradient = {
                let diff: Vec<f64> =
                    a.matvec(&v).iter().zip(b).map(|(av, bv)| 2.0 * (av - bv)).collect();
                a.tr_matvec(&diff)
            };
            let mu = free.iter().map(|&i| gradient[i]).sum::<f64>() / free.len() as f64;
            let blocker = (0..k)
                .filter(|&i| pinned[i])
                .map(|i| (i, gradient[i] - mu))
                .filter(|&(_, slack)| slack < -MULTIPLIER_TOL)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            match blocker {
                Some((release, _)) => {
                    pinned[release] = false;
                    continue;
                }
                None => {
                    let residual = residual_sq(a, b, &v);
                    return ConstrainedSolution {
                        values: v,
                        residual,
                        degenerate: false,
                        iterations: iteration + 1,
                    };
                }
            }
        }

        // Exact line search toward the subproblem optimum: the objective is
        // a convex parabola minimized at alpha = 1, so step to the first
        // blocking bound.
        let mut alpha = 1.0f64;
        let mut blockers = Vec::new();
        for (fi, &ci) in free.iter().enumerate() {
            if sub[fi] < 0.0 {
                let denom = v[ci] - sub[fi];
                if denom > 0.0 {
                    let step = v[ci] / denom;
                    if step < alpha - 1e-15 {
                        alpha = step;
                        blockers.clear();
                        blockers.push(ci);
                    } else if (step - alpha).abs() <= 1e-15 {
                        blockers.push(ci);
                    }
                }
            }
        }
        for (fi, &ci) in free.iter().enumerate() {
            v[ci] += alpha * (sub[fi] - v[ci]);
        }
        if blockers.is_empty() {
            // Degenerate step: pin the most negative coordinate directly.
            let (worst, _) = free
                .iter()
                .enumerate()
                .map(|(fi, &ci)| (ci, sub[fi]))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            pinned[worst] = true;
            v[worst] = 0.0;
        } else {
            for ci in blockers {
                pinned[ci] = true;
                v[ci] = 0.0;
            }
        }
    }
    fallback(max_iterations)
}

/// KKT residual of a candidate solution: the largest violation of
/// stationarity on free coordinates and dual feasibility on pinned ones.
pub fn kkt_violation(a: &Matrix, b: &[f64], v: &[f64]) -> f64 {
    let diff: Vec<f64> = a.matvec(v).iter().zip(b).map(|(av, bv)| 2.0 * (av - bv)).collect();
    let gradient = a.tr_matvec(&diff);
    let free: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 1e-10).collect();
    if free.is_empty() {
        return f64::INFINITY;
    }
    let mu = free.iter().map(|&i| gradient[i]).sum::<f64>() / free.len() as f64;
    let mut violation: f64 = 0.0;
    for i in 0..v.len() {
        if v[i] > 1e-10 {
            violation = violation.max((gradient[i] - mu).abs());
        } else {
            violation = violation.max((mu - gradient[i]).max(0.0));
        }
    }
    violation
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity(k: usize) -> Matrix {
        let mut m = Matrix::zeros(k, k);
        for i in 0..k {
            m.set(i, i, 1.0);
        }
        m
    }

    fn random_simplex(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / total).collect()
    }

    #[test]
    fn identity_matrix_returns_input() {
        let a = identity(4);
        let b = vec![0.4, 0.3, 0.2, 0.1];
        let sol = solve_simplex_least_squares(&a, &b);
        assert!(!sol.degenerate);
        for (x, y) in sol.values.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(sol.residual < 1e-18);
    }

    #[test]
    fn interior_inversion() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 0, 0.98);
        a.set(0, 1, 0.05);
        a.set(1, 0, 0.02);
        a.set(1, 1, 0.95);
        let truth = [0.7, 0.3];
        let b = a.matvec(&truth);
        let sol = solve_simplex_least_squares(&a, &b);
        assert!((sol.values[0] - 0.7).abs() < 1e-8);
        assert!((sol.values[1] - 0.3).abs() < 1e-8);
    }

    #[test]
    fn boundary_solution_stays_feasible() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 0, 0.98);
        a.set(0, 1, 0.05);
        a.set(1, 0, 0.02);
        a.set(1, 1, 0.95);
        let b = vec![1.0, 0.0];
        let sol = solve_simplex_least_squares(&a, &b);
        assert!(sol.values.iter().all(|&x| x >= 0.0));
        assert!((sol.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((sol.values[0] - 1.0).abs() < 1e-10, "expected corner, got {:?}", sol.values);
        assert!(kkt_violation(&a, &b, &sol.values) < 1e-8);
    }

    #[test]
    fn kkt_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in 2..=8usize {
            for _ in 0..20 {
                let mut a = Matrix::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        let base = if i == j { 0.9 } else { 0.1 / (k - 1) as f64 };
                        a.set(i, j, base + 0.05 * rng.gen::<f64>());
                    }
                }
                let b: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
                let sol = solve_simplex_least_squares(&a, &b);
                assert!(!sol.degenerate);
                assert!((sol.values.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(sol.values.iter().all(|&x| x >= 0.0));
                let violation = kkt_violation(&a, &b, &sol.values);
                assert!(violation < 1e-8, "k={k}: KKT violation {violation}");
            }
        }
    }

    #[test]
    fn random_forward_maps_invert() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = 5;
            let mut a = Matrix::zeros(k, k);
            for j in 0..k {
                // Column-stochastic, diagonally dominant.
                let mut col: Vec<f64> = (0..k)
                    .map(|i| if i == j { 0.9 } else { 0.02 + 0.01 * rng.gen::<f64>() })
                    .collect();
                let s: f64 = col.iter().sum();
                for c in col.iter_mut() {
                    *c /= s;
                }
                for i in 0..k {
                    a.set(i, j, col[i]);
                }
            }
            let p = random_simplex(k, &mut rng);
            let b = a.matvec(&p);
            let sol = solve_simplex_least_squares(&a, &b);
            for (x, y) in sol.values.iter().zip(&p) {
                assert!((x - y).abs() < 1e-8, "{:?} vs {:?}", sol.values, p);
            }
        }
    }

    #[test]
    fn singular_matrix_falls_back_to_projection() {
        let mut a = Matrix::zeros(2, 2);
        // Identical columns: the difference direction is unconstrained.
        a.set(0, 0, 0.5);
        a.set(0, 1, 0.5);
        a.set(1, 0, 0.5);
        a.set(1, 1, 0.5);
        let sol = solve_simplex_least_squares(&a, &[0.9, 0.1]);
        assert!(sol.degenerate);
        assert!((sol.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let p = project_to_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_to_simplex(&[1.2, -0.2]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        let p = project_to_simplex(&[2.0, 2.0, 2.0]);
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
