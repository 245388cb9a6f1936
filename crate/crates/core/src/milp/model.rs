use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MilpError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparator {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr { terms: Vec::new(), constant: c }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        self.terms.push((v, coef));
    }

    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * scale)));
        self.constant += other.constant * scale;
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>() + self.constant
    }

    /// Sorted by variable with duplicates summed and zeros dropped.
    pub fn normalized(&self) -> Vec<(VarId, f64)> {
        let mut acc: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *acc.entry(v).or_insert(0.0) += c;
        }
        acc.into_iter().filter(|&(_, c)| c != 0.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub cmp: Comparator,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violate this constraint (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let a = self.activity(values);
        match self.cmp {
            Comparator::Le => (a - self.rhs).max(0.0),
            Comparator::Ge => (self.rhs - a).max(0.0),
            Comparator::Eq => (a - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

/// A mixed-binary linear program. Variables and constraints are referenced
/// by insertion order; names must be unique and are what the LP export uses.
#[derive(Clone, Debug, PartialEq)]
pub struct MilpModel {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
}

impl Default for MilpModel {
    fn default() -> Self {
        MilpModel {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Objective { sense: Sense::Minimize, terms: Vec::new(), constant: 0.0 },
        }
    }
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.vars.push(Variable { name: name.into(), lower, upper, binary: false });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.vars.push(Variable { name: name.into(), lower: 0.0, upper: 1.0, binary: true });
        VarId(self.vars.len() - 1)
    }

    /// Adds `expr cmp rhs`; the expression's constant is moved to the right-hand side.
    pub fn add_constraint(&mut self, name: impl Into<String>, expr: &LinExpr, cmp: Comparator, rhs: f64) {
        self.constraints.push(Constraint { name: name.into(), terms: expr.normalized(), cmp, rhs: rhs - expr.constant });
    }

    pub fn set_objective(&mut self, sense: Sense, expr: &LinExpr) {
        self.objective = Objective { sense, terms: expr.normalized(), constant: expr.constant };
    }

    pub fn set_bounds(&mut self, v: VarId, lower: f64, upper: f64) {
        self.vars[v.0].lower = lower;
        self.vars[v.0].upper = upper;
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.vars.iter().enumerate().filter(|(_, v)| v.binary).map(|(i, _)| VarId(i))
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>() + self.objective.constant
    }

    /// Largest violation of any bound, constraint or integrality requirement.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let bounds = self.vars.iter().zip(values).map(|(v, &x)| {
            let mut e = (v.lower - x).max(x - v.upper).max(0.0);
            if v.binary {
                e = e.max((x - x.round()).abs());
            }
            e
        });
        let rows = self.constraints.iter().map(|c| c.violation(values));
        bounds.chain(rows).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        let mut names = HashSet::new();
        for v in &self.vars {
            if !names.insert(v.name.as_str()) {
                return Err(MilpError::Malformed(format!("duplicate variable name {}", v.name)));
            }
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(MilpError::Malformed(format!("variable {} has bounds [{}, {}]", v.name, v.lower, v.upper)));
            }
            if v.lower == f64::INFINITY || v.upper == f64::NEG_INFINITY {
                return Err(MilpError::Malformed(format!("variable {} has an empty domain", v.name)));
            }
            if v.binary && (v.lower < 0.0 || v.upper > 1.0) {
                return Err(MilpError::Malformed(format!("binary {} has bounds outside [0, 1]", v.name)));
            }
        }
        let check_terms = |what: &str, terms: &[(VarId, f64)]| -> Result<(), MilpError> {
            for &(v, c) in terms {
                if v.0 >= self.vars.len() {
                    return Err(MilpError::Malformed(format!("{what} references undeclared variable {}", v.0)));
                }
                if !c.is_finite() {
                    return Err(MilpError::Malformed(format!("{what} has a non-finite coefficient")));
                }
            }
            Ok(())
        };
        let mut cnames = HashSet::new();
        for c in &self.constraints {
            if !cnames.insert(c.name.as_str()) {
                return Err(MilpError::Malformed(format!("duplicate constraint name {}", c.name)));
            }
            check_terms(&format!("constraint {}", c.name), &c.terms)?;
            if !c.rhs.is_finite() {
                return Err(MilpError::Malformed(format!("constraint {} has a non-finite right-hand side", c.name)));
            }
        }
        check_terms("objective", &self.objective.terms)?;
        if !self.objective.constant.is_finite() {
            return Err(MilpError::Malformed("objective constant is not finite".into()));
        }
        Ok(())
    }
}
