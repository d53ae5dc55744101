//! Small dense linear programs: two-phase tableau simplex with Bland's rule.
//!
//! Variables are free unless bounded. The problems this crate poses have at
//! most a few dozen rows and columns, so a dense tableau is adequate.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    cmp: Cmp,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    maximize: bool,
    rows: Vec<Row>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::with_sense(objective, true)
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::with_sense(objective, false)
    }

    fn with_sense(objective: Vec<f64>, maximize: bool) -> Self {
        let n = objective.len();
        Self {
            objective,
            maximize,
            rows: Vec::new(),
            lower: vec![None; n],
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars(), "constraint width");
        self.rows.push(Row { coeffs, cmp, rhs });
        self
    }

    /// Sparse helper: `(index, coefficient)` pairs.
    pub fn add_sparse(&mut self, terms: &[(usize, f64)], cmp: Cmp, rhs: f64) -> &mut Self {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, c) in terms {
            coeffs[j] += c;
        }
        self.add(coeffs, cmp, rhs)
    }

    pub fn bounds(&mut self, j: usize, lo: Option<f64>, hi: Option<f64>) -> &mut Self {
        self.lower[j] = lo;
        self.upper[j] = hi;
        self
    }

    pub fn nonnegative(&mut self, j: usize) -> &mut Self {
        self.bounds(j, Some(0.0), None)
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let n = self.num_vars();
        // Column map: original variable j = offset + Σ sign * std column.
        let mut col_terms: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut offsets = vec![0.0; n];
        let mut ncols = 0usize;
        let mut extra_rows: Vec<(usize, f64)> = Vec::new(); // std column <= bound
        for j in 0..n {
            match (self.lower[j], self.upper[j]) {
                (Some(lo), hi) => {
                    offsets[j] = lo;
                    col_terms.push(vec![(ncols, 1.0)]);
                    if let Some(hi) = hi {
                        if hi < lo {
                            return Ok(LpOutcome::Infeasible);
                        }
                        extra_rows.push((ncols, hi - lo));
                    }
                    ncols += 1;
                }
                (None, Some(hi)) => {
                    offsets[j] = hi;
                    col_terms.push(vec![(ncols, -1.0)]);
                    ncols += 1;
                }
                (None, None) => {
                    col_terms.push(vec![(ncols, 1.0), (ncols + 1, -1.0)]);
                    ncols += 2;
                }
            }
        }
        let nstruct = ncols;

        // Standard-form rows over structural columns.
        let mut std_rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::new();
        for row in &self.rows {
            let mut a = vec![0.0; nstruct];
            let mut rhs = row.rhs;
            for j in 0..n {
                let c = row.coeffs[j];
                if c == 0.0 {
                    continue;
                }
                rhs -= c * offsets[j];
                for &(k, s) in &col_terms[j] {
                    a[k] += c * s;
                }
            }
            std_rows.push((a, row.cmp, rhs));
        }
        for &(k, bound) in &extra_rows {
            let mut a = vec![0.0; nstruct];
            a[k] = 1.0;
            std_rows.push((a, Cmp::Le, bound));
        }
        // Minimization objective over structural columns.
        let sign = if self.maximize { -1.0 } else { 1.0 };
        let mut cost = vec![0.0; nstruct];
        for j in 0..n {
            let c = sign * self.objective[j];
            for &(k, s) in &col_terms[j] {
                cost[k] += c * s;
            }
        }

        let outcome = solve_standard(std_rows, &cost, nstruct)?;
        Ok(match outcome {
            StdOutcome::Infeasible => LpOutcome::Infeasible,
            StdOutcome::Unbounded => LpOutcome::Unbounded,
            StdOutcome::Optimal(y) => {
                let x: Vec<f64> = (0..n)
                    .map(|j| offsets[j] + col_terms[j].iter().map(|&(k, s)| s * y[k]).sum::<f64>())
                    .collect();
                let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                LpOutcome::Optimal(LpSolution { x, objective })
            }
        })
    }
}

enum StdOutcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `rows x (cols + 1)`; last column is the right-hand side.
    t: Vec<Vec<f64>>,
    /// Reduced-cost row, same width.
    obj: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.t[r][c];
        for k in 0..width {
            self.t[r][k] /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for k in 0..width {
                    row[k] -= f * pivot_row[k];
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for k in 0..width {
                self.obj[k] -= f * pivot_row[k];
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule minimization over columns `< allowed`.
    fn run(&mut self, allowed: usize) -> Result<bool> {
        for _ in 0..MAX_ITERATIONS {
            let entering = (0..allowed).find(|&j| self.obj[j] < -PIVOT_EPS);
            let Some(c) = entering else {
                return Ok(true);
            };
            let rhs = self.cols;
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[c] > PIVOT_EPS {
                    let ratio = row[rhs] / row[c];
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-13
                                || (ratio <= br + 1e-13 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Err(Error::Solver("simplex iteration limit reached".into()))
    }
}

fn solve_standard(rows: Vec<(Vec<f64>, Cmp, f64)>, cost: &[f64], nstruct: usize) -> Result<StdOutcome> {
    let m = rows.len();
    if m == 0 {
        // Only sign constraints: optimal at 0 unless some cost is negative.
        if cost.iter().any(|&c| c < -PIVOT_EPS) {
            return Ok(StdOutcome::Unbounded);
        }
        return Ok(StdOutcome::Optimal(vec![0.0; nstruct]));
    }
    // Normalize to nonnegative right-hand sides and count auxiliaries.
    let mut rows = rows;
    for (a, cmp, b) in rows.iter_mut() {
        if *b < 0.0 {
            a.iter_mut().for_each(|v| *v = -*v);
            *b = -*b;
            *cmp = match *cmp {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
        }
    }
    let n_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
    let cols = nstruct + n_slack + n_art;
    let art_start = nstruct + n_slack;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0usize; m];
    let mut slack = nstruct;
    let mut art = art_start;
    for (i, (a, cmp, b)) in rows.iter().enumerate() {
        t[i][..nstruct].copy_from_slice(a);
        t[i][cols] = *b;
        match cmp {
            Cmp::Le => {
                t[i][slack] = 1.0;
                basis[i] = slack;
                slack += 1;
            }
            Cmp::Ge => {
                t[i][slack] = -1.0;
                slack += 1;
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            }
            Cmp::Eq => {
                t[i][art] = 1.0;
                basis[i] = art;
                art += 1;
            }
        }
    }
    let scale = rows
        .iter()
        .map(|r| r.2.abs())
        .fold(1.0f64, f64::max);

    let mut tab = Tableau {
        t,
        obj: vec![0.0; cols + 1],
        basis,
        cols,
    };

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials.
        for i in 0..m {
            if tab.basis[i] >= art_start {
                for k in 0..=cols {
                    tab.obj[k] -= tab.t[i][k];
                }
            }
        }
        for k in art_start..cols {
            tab.obj[k] = 0.0;
        }
        tab.run(cols)?;
        let infeas = -tab.obj[cols];
        if infeas > 1e-9 * scale {
            return Ok(StdOutcome::Infeasible);
        }
        // Drive artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.t.len() {
            if tab.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tab.t[i][j].abs() > 1e-9);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        tab.t.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2.
    let mut full_cost = vec![0.0; cols + 1];
    full_cost[..nstruct].copy_from_slice(cost);
    tab.obj = full_cost;
    for i in 0..tab.t.len() {
        let cb = tab.obj[tab.basis[i]];
        if cb != 0.0 {
            let row = tab.t[i].clone();
            for k in 0..=cols {
                tab.obj[k] -= cb * row[k];
            }
        }
    }
    if !tab.run(art_start)? {
        return Ok(StdOutcome::Unbounded);
    }
    let mut y = vec![0.0; nstruct];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < nstruct {
            y[b] = tab.t[i][cols];
        }
    }
    Ok(StdOutcome::Optimal(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opt(lp: &LinearProgram) -> LpSolution {
        lp.solve().unwrap().optimal().expect("optimal")
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18, x,y >= 0 -> 36 at (2,6)
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.nonnegative(0).nonnegative(1);
        lp.add(vec![1.0, 0.0], Cmp::Le, 4.0);
        lp.add(vec![0.0, 2.0], Cmp::Le, 12.0);
        lp.add(vec![3.0, 2.0], Cmp::Le, 18.0);
        let s = opt(&lp);
        assert!((s.objective - 36.0).abs() < 1e-10);
        assert!((s.x[0] - 2.0).abs() < 1e-10 && (s.x[1] - 6.0).abs() < 1e-10);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + y s.t. x - y = -3, x >= -5, y free, y <= 10 -> x=-5, y=-2
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0]);
        lp.add(vec![1.0, -1.0], Cmp::Eq, -3.0);
        lp.bounds(0, Some(-5.0), None);
        lp.bounds(1, None, Some(10.0));
        let s = opt(&lp);
        assert!((s.x[0] + 5.0).abs() < 1e-10 && (s.x[1] + 2.0).abs() < 1e-10, "{:?}", s);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add(vec![1.0], Cmp::Ge, 2.0).add(vec![1.0], Cmp::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.add(vec![1.0, -1.0], Cmp::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        // q1 + q2 = 1 twice, q >= 0, max q1 -> 1
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.nonnegative(0).nonnegative(1);
        lp.add(vec![1.0, 1.0], Cmp::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Cmp::Eq, 2.0);
        let s = opt(&lp);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example; Bland's rule terminates. Optimum 0.05.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        for j in 0..4 {
            lp.nonnegative(j);
        }
        lp.add(vec![0.25, -60.0, -0.04, 9.0], Cmp::Le, 0.0);
        lp.add(vec![0.5, -90.0, -0.02, 3.0], Cmp::Le, 0.0);
        lp.add(vec![0.0, 0.0, 1.0, 0.0], Cmp::Le, 1.0);
        let s = opt(&lp);
        assert!((s.objective - 0.05).abs() < 1e-10);
    }
}
