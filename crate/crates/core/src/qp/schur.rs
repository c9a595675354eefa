//! Working-set method on the Schur complement `S = C P⁻¹ Cᵀ` for diagonal `P`.
//!
//! Each iteration enforces the equalities plus the working inequalities as
//! equalities, solves for the multipliers with an envelope Cholesky of `S`
//! under a reverse Cuthill–McKee ordering, then drops negative multipliers and
//! adds every violated row. Cycling or a stalled working set hands the problem
//! to the dense dual method.

use std::collections::{HashSet, VecDeque};

use log::debug;
use nalgebra::DVector;
use nalgebra_sparse::CsrMatrix;

use super::{dual, row_dot, Hessian, QpError, QpProblem, QpSolution, QpStatus, SolverOptions};

pub(super) fn solve(problem: &QpProblem, opts: &SolverOptions, hint: &[usize]) -> Result<QpSolution, QpError> {
    let d = match &problem.hessian {
        Hessian::Diagonal(d) => d,
        Hessian::Dense(_) => return dual::solve(problem, opts, hint),
    };
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(QpError::NotPositiveDefinite);
    }
    let inv_d = d.map(|v| 1.0 / v);
    let x0 = problem.linear.component_mul(&inv_d);
    let m_eq = problem.eq_rhs.len();
    let m_in = problem.ineq_rhs.len();

    let mut working: Vec<usize> = {
        let mut w: Vec<usize> = hint.iter().copied().filter(|&i| i < m_in).collect();
        w.sort_unstable();
        w.dedup();
        w
    };
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut changes = 0usize;

    loop {
        if !seen.insert(working.clone()) {
            debug!("working set cycled; switching to the dense dual method");
            return dual::solve(problem, opts, &working);
        }

        let rows: Vec<(&CsrMatrix<f64>, usize)> = (0..m_eq)
            .map(|i| (&problem.eq_matrix, i))
            .chain(working.iter().map(|&i| (&problem.ineq_matrix, i)))
            .collect();
        let rhs: Vec<f64> = (0..m_eq)
            .map(|i| problem.eq_rhs[i] - row_dot(&problem.eq_matrix, i, &x0))
            .chain(working.iter().map(|&i| problem.ineq_rhs[i] - row_dot(&problem.ineq_matrix, i, &x0)))
            .collect();

        let schur = SchurSystem::assemble(&rows, &inv_d);
        let (y, dropped) = schur.solve(&rhs, opts.pivot_tol);

        let mut q = x0.clone();
        for (&(mat, i), &yi) in rows.iter().zip(&y) {
            if yi == 0.0 {
                continue;
            }
            let row = mat.row(i);
            for (&k, &v) in row.col_indices().iter().zip(row.values()) {
                q[k] += inv_d[k] * v * yi;
            }
        }

        let mut dropped_eq = Vec::new();
        for &r in &dropped {
            let (mat, i) = rows[r];
            let rhs_i = if r < m_eq { problem.eq_rhs[i] } else { problem.ineq_rhs[i] };
            let res = (row_dot(mat, i, &q) - rhs_i).abs();
            if res > opts.tol {
                if working.is_empty() {
                    return Ok(finish(problem, q, &y, &working, QpStatus::Infeasible, changes, dropped_eq));
                }
                debug!("inconsistent working set; switching to the dense dual method");
                return dual::solve(problem, opts, &working);
            }
            if r < m_eq {
                dropped_eq.push(i);
            }
        }

        let mut next: Vec<usize> = working
            .iter()
            .zip(&y[m_eq..])
            .filter(|(_, &mu)| mu >= 0.0)
            .map(|(&i, _)| i)
            .collect();
        let mut in_working = vec![false; m_in];
        working.iter().for_each(|&i| in_working[i] = true);
        for i in 0..m_in {
            if !in_working[i] && row_dot(&problem.ineq_matrix, i, &q) - problem.ineq_rhs[i] < -opts.tol {
                next.push(i);
            }
        }
        next.sort_unstable();

        if next == working {
            return Ok(finish(problem, q, &y, &working, QpStatus::Solved, changes, dropped_eq));
        }
        changes += next.len().abs_diff(working.len()).max(1);
        if changes > opts.max_iter {
            debug!("working set did not settle; switching to the dense dual method");
            return dual::solve(problem, opts, &next);
        }
        working = next;
    }
}

fn finish(
    problem: &QpProblem,
    q: DVector<f64>,
    y: &[f64],
    working: &[usize],
    status: QpStatus,
    iterations: usize,
    dropped_equalities: Vec<usize>,
) -> QpSolution {
    let m_eq = problem.eq_rhs.len();
    let eq_multipliers = DVector::from_iterator(m_eq, y[..m_eq].iter().map(|v| -v));
    let mut ineq_multipliers = DVector::zeros(problem.ineq_rhs.len());
    for (&i, &mu) in working.iter().zip(&y[m_eq..]) {
        ineq_multipliers[i] = mu;
    }
    QpSolution {
        q,
        eq_multipliers,
        ineq_multipliers,
        status,
        active_set: working.to_vec(),
        iterations,
        dropped_equalities,
    }
}

/// Sparse symmetric `S` as adjacency lists (including the diagonal).
struct SchurSystem {
    adj: Vec<Vec<(usize, f64)>>,
}

impl SchurSystem {
    fn assemble(rows: &[(&CsrMatrix<f64>, usize)], inv_d: &DVector<f64>) -> Self {
        let m = rows.len();
        let n = inv_d.len();
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (r, &(mat, i)) in rows.iter().enumerate() {
            let row = mat.row(i);
            for (&k, &v) in row.col_indices().iter().zip(row.values()) {
                by_col[k].push((r, v));
            }
        }
        let mut adj = Vec::with_capacity(m);
        let mut acc = vec![0.0; m];
        let mut mark = vec![usize::MAX; m];
        for (a, &(mat, i)) in rows.iter().enumerate() {
            let mut touched = Vec::new();
            let row = mat.row(i);
            for (&k, &v) in row.col_indices().iter().zip(row.values()) {
                let w = v * inv_d[k];
                for &(b, vb) in &by_col[k] {
                    if mark[b] != a {
                        mark[b] = a;
                        acc[b] = 0.0;
                        touched.push(b);
                    }
                    acc[b] += w * vb;
                }
            }
            touched.sort_unstable();
            adj.push(touched.into_iter().map(|b| (b, acc[b])).collect());
        }
        Self { adj }
    }

    /// Solve `S y = b`; rows with a negligible pivot get `y = 0` and are reported.
    fn solve(&self, b: &[f64], pivot_tol: f64) -> (Vec<f64>, Vec<usize>) {
        let m = self.adj.len();
        let perm = reverse_cuthill_mckee(&self.adj);
        let mut pos = vec![0; m];
        for (p, &r) in perm.iter().enumerate() {
            pos[r] = p;
        }

        // envelope rows of L in permuted order: row p stores columns first[p]..=p
        let mut first = vec![0; m];
        let mut env: Vec<Vec<f64>> = Vec::with_capacity(m);
        for p in 0..m {
            let r = perm[p];
            let f = self.adj[r].iter().map(|&(b, _)| pos[b]).min().unwrap_or(p).min(p);
            first[p] = f;
            let mut row = vec![0.0; p - f + 1];
            for &(b, v) in &self.adj[r] {
                let c = pos[b];
                if c <= p {
                    row[c - f] = v;
                }
            }
            env.push(row);
        }

        let mut dropped_pos = vec![false; m];
        for p in 0..m {
            let fp = first[p];
            for c in fp..p {
                if dropped_pos[c] {
                    env[p][c - fp] = 0.0;
                    continue;
                }
                let fc = first[c];
                let lo = fp.max(fc);
                let (done, cur) = env.split_at_mut(p);
                let rc = &done[c];
                let rp = &mut cur[0];
                let mut s = rp[c - fp];
                for k in lo..c {
                    s -= rp[k - fp] * rc[k - fc];
                }
                rp[c - fp] = s / rc[c - fc];
            }
            let row = &mut env[p];
            let diag_orig = row[p - fp];
            let mut dd = diag_orig;
            for k in fp..p {
                dd -= row[k - fp] * row[k - fp];
            }
            if !(dd > pivot_tol * diag_orig.abs()) || diag_orig <= 0.0 {
                dropped_pos[p] = true;
                row.iter_mut().for_each(|v| *v = 0.0);
                row[p - fp] = 1.0;
            } else {
                row[p - fp] = dd.sqrt();
            }
        }

        // forward then backward substitution in permuted order
        let mut z: Vec<f64> = perm.iter().map(|&r| b[r]).collect();
        for p in 0..m {
            if dropped_pos[p] {
                z[p] = 0.0;
                continue;
            }
            let fp = first[p];
            let row = &env[p];
            let mut s = z[p];
            for k in fp..p {
                s -= row[k - fp] * z[k];
            }
            z[p] = s / row[p - fp];
        }
        for p in (0..m).rev() {
            if dropped_pos[p] {
                z[p] = 0.0;
                continue;
            }
            let fp = first[p];
            z[p] /= env[p][p - fp];
            let zp = z[p];
            for k in fp..p {
                z[k] -= env[p][k - fp] * zp;
            }
        }

        let mut y = vec![0.0; m];
        for (p, &r) in perm.iter().enumerate() {
            y[r] = z[p];
        }
        let dropped = (0..m).filter(|&r| dropped_pos[pos[r]]).collect();
        (y, dropped)
    }
}

/// Reverse Cuthill–McKee ordering of a symmetric adjacency structure.
fn reverse_cuthill_mckee(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let m = adj.len();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut by_degree: Vec<usize> = (0..m).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        let root = peripheral(adj, start);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().map(|&(b, _)| b).filter(|&b| !visited[b]).collect();
            nbrs.sort_by_key(|&b| (degree[b], b));
            for b in nbrs {
                visited[b] = true;
                queue.push_back(b);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node of the component containing `start` (a few BFS sweeps).
fn peripheral(adj: &[Vec<(usize, f64)>], start: usize) -> usize {
    let mut root = start;
    let mut depth = 0;
    for _ in 0..4 {
        let (far, d) = farthest(adj, root);
        if d <= depth {
            break;
        }
        depth = d;
        root = far;
    }
    root
}

fn farthest(adj: &[Vec<(usize, f64)>], root: usize) -> (usize, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut best = (root, 0);
    while let Some(v) = queue.pop_front() {
        let l = level[v];
        if l > best.1 || (l == best.1 && adj[v].len() < adj[best.0].len()) {
            best = (v, l);
        }
        for &(b, _) in &adj[v] {
            if level[b] == usize::MAX {
                level[b] = l + 1;
                queue.push_back(b);
            }
        }
    }
    best
}
