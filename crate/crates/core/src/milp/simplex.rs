//! Bounded-variable primal simplex with an explicit dense basis inverse.
//!
//! Every constraint row `r` gets a logical variable `s_r` with
//! `a_r . x - s_r = 0`, so the right-hand side lives in the bounds of `s_r`
//! and the all-logical basis (`B = -I`) is always a valid start. Phase 1
//! minimises the sum of bound violations of the basic variables; phase 2
//! optimises the real objective from the feasible basis phase 1 leaves.

use super::model::{Comparator, MilpModel, Sense};
use super::MilpError;

pub(crate) const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_BEFORE_BLAND: usize = 40;

/// Column-wise standard form of a model's LP relaxation.
#[derive(Clone, Debug)]
pub(crate) struct StandardForm {
    pub n: usize,
    pub m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    /// Minimisation costs of the structural variables.
    cost: Vec<f64>,
    pub cost_sign: f64,
    pub cost_constant: f64,
    /// Bounds of structural then logical variables.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StandardForm {
    pub fn from_model(model: &MilpModel) -> Self {
        let n = model.num_vars();
        let m = model.constraints().len();
        let mut cols = vec![Vec::new(); n];
        let mut lower: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = model.vars().iter().map(|v| v.upper).collect();
        for (r, c) in model.constraints().iter().enumerate() {
            for &(v, a) in &c.terms {
                cols[v.0].push((r, a));
            }
            let (lo, up) = match c.cmp {
                Comparator::Le => (f64::NEG_INFINITY, c.rhs),
                Comparator::Ge => (c.rhs, f64::INFINITY),
                Comparator::Eq => (c.rhs, c.rhs),
            };
            lower.push(lo);
            upper.push(up);
        }
        let obj = model.objective();
        let sign = if obj.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut cost = vec![0.0; n];
        for &(v, c) in &obj.terms {
            cost[v.0] += sign * c;
        }
        StandardForm { n, m, cols, cost, cost_sign: sign, cost_constant: obj.constant, lower, upper }
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(r, a)| a * y[r]).sum()
        } else {
            -y[j - self.n]
        }
    }

    fn scatter_column(&self, j: usize, out: &mut [f64]) {
        out.fill(0.0);
        if j < self.n {
            for &(r, a) in &self.cols[j] {
                out[r] = a;
            }
        } else {
            out[j - self.n] = -1.0;
        }
    }

    fn cost_of(&self, j: usize) -> f64 {
        if j < self.n {
            self.cost[j]
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum LpOutcome {
    /// Structural values and the minimisation objective (sign-adjusted back
    /// to the model's sense by the caller).
    Optimal { x: Vec<f64>, objective: f64, basis: Basis },
    Infeasible,
    Unbounded,
}

/// Final basis of a solve, reusable as a starting point under changed bounds.
#[derive(Clone, Debug)]
pub(crate) struct Basis {
    basic: Vec<usize>,
    at_upper: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Status {
    Basic(usize),
    Lower,
    Upper,
    Free,
}

struct Simplex<'a> {
    sf: &'a StandardForm,
    lower: &'a [f64],
    upper: &'a [f64],
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    binv: Vec<f64>,
    since_refactor: usize,
    bland: bool,
    recovered: bool,
}

/// Solves the LP relaxation under the given bounds (structural then logical).
pub(crate) fn solve_lp(sf: &StandardForm, lower: &[f64], upper: &[f64]) -> Result<LpOutcome, MilpError> {
    solve_lp_from(sf, lower, upper, None)
}

/// As [`solve_lp`], starting from `start` when given (falls back to the
/// logical basis if `start` is singular).
pub(crate) fn solve_lp_from(
    sf: &StandardForm,
    lower: &[f64],
    upper: &[f64],
    start: Option<&Basis>,
) -> Result<LpOutcome, MilpError> {
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Ok(LpOutcome::Infeasible);
    }
    let mut s = Simplex::new(sf, lower, upper);
    if let Some(b) = start {
        s.warm_start(b);
    }
    s.run()
}

impl<'a> Simplex<'a> {
    fn new(sf: &'a StandardForm, lower: &'a [f64], upper: &'a [f64]) -> Self {
        let (n, m) = (sf.n, sf.m);
        let mut s = Simplex {
            sf,
            lower,
            upper,
            basis: (n..n + m).collect(),
            status: vec![Status::Lower; n + m],
            x: vec![0.0; n + m],
            binv: vec![0.0; m * m],
            since_refactor: 0,
            bland: false,
            recovered: false,
        };
        s.reset_to_logical_basis();
        s
    }

    fn reset_to_logical_basis(&mut self) {
        let (n, m) = (self.sf.n, self.sf.m);
        for j in 0..n {
            self.place_at_bound(j);
        }
        for r in 0..m {
            self.basis[r] = n + r;
            self.status[n + r] = Status::Basic(r);
        }
        self.binv.fill(0.0);
        for r in 0..m {
            self.binv[r * m + r] = -1.0;
        }
        self.recompute_basic_values();
        self.since_refactor = 0;
    }

    fn warm_start(&mut self, start: &Basis) {
        let m = self.sf.m;
        if start.basic.len() != m || start.at_upper.len() != self.status.len() {
            return;
        }
        for j in 0..self.status.len() {
            if start.at_upper[j] && self.upper[j].is_finite() {
                self.status[j] = Status::Upper;
                self.x[j] = self.upper[j];
            } else {
                self.place_at_bound(j);
            }
        }
        for (i, &j) in start.basic.iter().enumerate() {
            self.basis[i] = j;
            self.status[j] = Status::Basic(i);
        }
        if !self.refactor() {
            self.reset_to_logical_basis();
        }
    }

    fn place_at_bound(&mut self, j: usize) {
        let (lo, up) = (self.lower[j], self.upper[j]);
        if lo.is_finite() {
            self.status[j] = Status::Lower;
            self.x[j] = lo;
        } else if up.is_finite() {
            self.status[j] = Status::Upper;
            self.x[j] = up;
        } else {
            self.status[j] = Status::Free;
            self.x[j] = 0.0;
        }
    }

    /// x_B = -B^{-1} (N x_N).
    fn recompute_basic_values(&mut self) {
        let m = self.sf.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.sf.n + m {
            if matches!(self.status[j], Status::Basic(_)) || self.x[j] == 0.0 {
                continue;
            }
            if j < self.sf.n {
                for &(r, a) in &self.sf.cols[j] {
                    rhs[r] += a * self.x[j];
                }
            } else {
                rhs[j - self.sf.n] -= self.x[j];
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v: f64 = row.iter().zip(&rhs).map(|(b, r)| b * r).sum();
            self.x[self.basis[i]] = -v;
        }
    }

    /// Rebuilds B^{-1} from scratch by Gauss-Jordan elimination. Returns false
    /// when the basis is numerically singular.
    fn refactor(&mut self) -> bool {
        let m = self.sf.m;
        let mut a = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            self.sf.scatter_column(j, &mut col);
            for r in 0..m {
                a[r * m + i] = col[r];
            }
        }
        let mut inv = vec![0.0; m * m];
        for r in 0..m {
            inv[r * m + r] = 1.0;
        }
        for c in 0..m {
            let p = (c..m).max_by(|&i, &k| a[i * m + c].abs().total_cmp(&a[k * m + c].abs())).unwrap();
            if a[p * m + c].abs() < 1e-11 {
                return false;
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let piv = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = a[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[r * m + k] -= f * a[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        self.since_refactor = 0;
        self.recompute_basic_values();
        true
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] - FEAS_TOL {
            -1.0
        } else if v > self.upper[j] + FEAS_TOL {
            1.0
        } else {
            0.0
        }
    }

    fn run(&mut self) -> Result<LpOutcome, MilpError> {
        let (n, m) = (self.sf.n, self.sf.m);
        let max_iters = 100 * (n + m) + 10_000;
        let mut degenerate_run = 0usize;
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut col = vec![0.0; m];

        for _ in 0..max_iters {
            // Phase-dependent basic costs.
            let phase1 = self.basis.iter().any(|&j| self.infeasibility(j) != 0.0);
            let cb: Vec<f64> = self
                .basis
                .iter()
                .map(|&j| if phase1 { self.infeasibility(j) } else { self.sf.cost_of(j) })
                .collect();
            y.fill(0.0);
            for (i, &c) in cb.iter().enumerate() {
                if c != 0.0 {
                    let row = &self.binv[i * m..(i + 1) * m];
                    y.iter_mut().zip(row).for_each(|(yk, b)| *yk += c * b);
                }
            }

            // Pricing.
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..n + m {
                let st = self.status[j];
                if matches!(st, Status::Basic(_)) || self.lower[j] == self.upper[j] {
                    continue;
                }
                let cj = if phase1 { 0.0 } else { self.sf.cost_of(j) };
                let d = cj - self.sf.column_dot(j, &y);
                let dir = match st {
                    Status::Lower if d < -OPT_TOL => 1.0,
                    Status::Upper if d > OPT_TOL => -1.0,
                    Status::Free if d.abs() > OPT_TOL => -d.signum(),
                    _ => continue,
                };
                let better = match entering {
                    None => true,
                    Some((_, _, best)) => !self.bland && d.abs() > best,
                };
                if better {
                    entering = Some((j, dir, d.abs()));
                }
                if self.bland && entering.is_some() {
                    break;
                }
            }
            let Some((q, dir, _)) = entering else {
                // Confirm the verdict on a freshly factorised basis.
                if self.since_refactor > 0 {
                    if !self.refactor() {
                        self.recover()?;
                    }
                    continue;
                }
                if phase1 {
                    return Ok(LpOutcome::Infeasible);
                }
                return Ok(self.optimal());
            };

            // alpha = B^{-1} a_q
            self.sf.scatter_column(q, &mut col);
            let nz: Vec<(usize, f64)> = col.iter().copied().enumerate().filter(|&(_, a)| a != 0.0).collect();
            for i in 0..m {
                let row = &self.binv[i * m..(i + 1) * m];
                alpha[i] = nz.iter().map(|&(k, a)| row[k] * a).sum();
            }

            // Ratio test.
            let mut best: Option<(usize, f64, Status)> = None;
            let mut best_limit = f64::INFINITY;
            for i in 0..m {
                let rate = -alpha[i] * dir;
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let j = self.basis[i];
                let (lo, up, v) = (self.lower[j], self.upper[j], self.x[j]);
                let infeas = if phase1 { self.infeasibility(j) } else { 0.0 };
                let (limit, to) = if infeas < 0.0 {
                    if rate > 0.0 {
                        ((lo - v) / rate, Status::Lower)
                    } else {
                        continue;
                    }
                } else if infeas > 0.0 {
                    if rate < 0.0 {
                        ((v - up) / -rate, Status::Upper)
                    } else {
                        continue;
                    }
                } else if rate < 0.0 && lo.is_finite() {
                    ((v - lo).max(0.0) / -rate, Status::Lower)
                } else if rate > 0.0 && up.is_finite() {
                    ((up - v).max(0.0) / rate, Status::Upper)
                } else {
                    continue;
                };
                let replace = match best {
                    None => true,
                    Some((bi, _, _)) => {
                        if limit < best_limit - 1e-12 {
                            true
                        } else if limit <= best_limit + 1e-12 {
                            if self.bland {
                                self.basis[i] < self.basis[bi]
                            } else {
                                alpha[i].abs() > alpha[bi].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if replace {
                    best = Some((i, limit, to));
                    best_limit = best_limit.min(limit);
                }
            }
            let flip = self.upper[q] - self.lower[q];
            let theta = best.map_or(f64::INFINITY, |(_, l, _)| l);
            if flip.is_infinite() && theta.is_infinite() {
                if phase1 {
                    return Err(MilpError::Numeric("phase 1 ray without a blocking variable".into()));
                }
                return Ok(LpOutcome::Unbounded);
            }

            if flip <= theta {
                self.step(q, dir, flip, &alpha);
                self.status[q] = if dir > 0.0 { Status::Upper } else { Status::Lower };
                self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                degenerate_run = 0;
                continue;
            }

            let (p, theta, to) = best.unwrap();
            self.step(q, dir, theta, &alpha);
            let leaving = self.basis[p];
            self.status[leaving] = to;
            self.x[leaving] = if to == Status::Lower { self.lower[leaving] } else { self.upper[leaving] };
            self.basis[p] = q;
            self.status[q] = Status::Basic(p);
            self.pivot(p, &alpha);

            if theta < 1e-12 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_BEFORE_BLAND {
                    self.bland = true;
                }
            } else {
                degenerate_run = 0;
                self.bland = false;
            }

            self.since_refactor += 1;
            if self.since_refactor >= REFACTOR_EVERY && !self.refactor() {
                self.recover()?;
            }
        }
        Err(MilpError::Numeric(format!("simplex iteration limit reached ({} rows, {} columns)", m, n)))
    }

    fn step(&mut self, q: usize, dir: f64, theta: f64, alpha: &[f64]) {
        if theta == 0.0 {
            return;
        }
        self.x[q] += dir * theta;
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                self.x[self.basis[i]] -= a * dir * theta;
            }
        }
    }

    fn pivot(&mut self, p: usize, alpha: &[f64]) {
        let m = self.sf.m;
        let piv = alpha[p];
        let prow: Vec<f64> = self.binv[p * m..(p + 1) * m].iter().map(|v| v / piv).collect();
        for i in 0..m {
            if i == p {
                continue;
            }
            let a = alpha[i];
            if a != 0.0 {
                let row = &mut self.binv[i * m..(i + 1) * m];
                row.iter_mut().zip(&prow).for_each(|(r, pr)| *r -= a * pr);
            }
        }
        self.binv[p * m..(p + 1) * m].copy_from_slice(&prow);
    }

    /// Singular basis: restart from the logical basis under Bland's rule once.
    fn recover(&mut self) -> Result<(), MilpError> {
        if self.recovered {
            return Err(MilpError::Numeric("singular basis persists after Bland's-rule restart".into()));
        }
        self.recovered = true;
        self.bland = true;
        self.reset_to_logical_basis();
        Ok(())
    }

    fn optimal(&self) -> LpOutcome {
        let n = self.sf.n;
        let x: Vec<f64> = (0..n).map(|j| self.x[j].clamp(self.lower[j], self.upper[j])).collect();
        let objective = x.iter().zip(&self.sf.cost).map(|(a, c)| a * c).sum::<f64>();
        let basis = Basis {
            basic: self.basis.clone(),
            at_upper: self.status.iter().map(|s| *s == Status::Upper).collect(),
        };
        LpOutcome::Optimal { x, objective, basis }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::{LinExpr, MilpModel};

    fn solve(model: &MilpModel) -> LpOutcome {
        let sf = StandardForm::from_model(model);
        solve_lp(&sf, &sf.lower.clone(), &sf.upper.clone()).unwrap()
    }

    #[test]
    fn textbook_lp() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY);
        let y = m.add_var("y", 0.0, f64::INFINITY);
        m.add_constraint("a", &LinExpr::var(x), Comparator::Le, 4.0);
        m.add_constraint("b", &LinExpr::new().term(y, 2.0), Comparator::Le, 12.0);
        m.add_constraint("c", &LinExpr::new().term(x, 3.0).term(y, 2.0), Comparator::Le, 18.0);
        m.set_objective(Sense::Maximize, &LinExpr::new().term(x, 3.0).term(y, 5.0));
        match solve(&m) {
            LpOutcome::Optimal { x: v, objective, .. } => {
                assert!((v[0] - 2.0).abs() < 1e-9 && (v[1] - 6.0).abs() < 1e-9);
                assert!((objective + 36.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, 1.0);
        m.add_constraint("c", &LinExpr::var(x), Comparator::Ge, 2.0);
        assert!(matches!(solve(&m), LpOutcome::Infeasible));

        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, f64::INFINITY);
        let y = m.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint("c", &LinExpr::var(x).term(y, -1.0), Comparator::Le, 1.0);
        m.set_objective(Sense::Maximize, &LinExpr::var(x));
        assert!(matches!(solve(&m), LpOutcome::Unbounded));
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |y| style: y free, y = x - 3, x in [0, 10], minimise t with t >= y, t >= -y
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, 10.0);
        let y = m.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        let t = m.add_var("t", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint("e", &LinExpr::var(y).term(x, -1.0), Comparator::Eq, -3.0);
        m.add_constraint("p", &LinExpr::var(t).term(y, -1.0), Comparator::Ge, 0.0);
        m.add_constraint("n", &LinExpr::var(t).term(y, 1.0), Comparator::Ge, 0.0);
        m.add_constraint("x", &LinExpr::var(x), Comparator::Le, 2.0);
        m.set_objective(Sense::Minimize, &LinExpr::var(t));
        match solve(&m) {
            LpOutcome::Optimal { objective, .. } => assert!((objective - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_lp_terminates() {
        // Classic cycling example (Beale) in bounded form.
        let mut m = MilpModel::new();
        let v: Vec<_> = (0..4).map(|i| m.add_var(format!("x{i}"), 0.0, f64::INFINITY)).collect();
        m.add_constraint("a", &LinExpr::new().term(v[0], 0.25).term(v[1], -60.0).term(v[2], -0.04).term(v[3], 9.0), Comparator::Le, 0.0);
        m.add_constraint("b", &LinExpr::new().term(v[0], 0.5).term(v[1], -90.0).term(v[2], -0.02).term(v[3], 3.0), Comparator::Le, 0.0);
        m.add_constraint("c", &LinExpr::var(v[2]), Comparator::Le, 1.0);
        m.set_objective(Sense::Minimize, &LinExpr::new().term(v[0], -0.75).term(v[1], 150.0).term(v[2], -0.02).term(v[3], 6.0));
        match solve(&m) {
            LpOutcome::Optimal { objective, .. } => assert!((objective + 0.05).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }
}
