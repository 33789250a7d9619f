//! Solver-neutral convex-program representation and a small dense barrier
//! interior-point solver.
//!
//! Programs are *maximization* problems: a separable concave objective
//! (utility minus cost terms) over box-bounded variables subject to
//! inequality rows `term(x) <= 0`. Three row families cover everything the
//! routing pipeline produces:
//!
//! * affine rows (`a.x + b <= 0`), including the per-iteration linearized
//!   square-root margins;
//! * positive sums of exponentials of affine forms plus an affine part
//!   (`sum c_k e^{a_k.x + b_k} + a0.x + b0 <= 0`);
//! * affine-minus-square-root rows (`a.x + b - w sqrt(x_s) <= 0`), the one
//!   smooth convex family that is neither of the above.
//!
//! Every row exposes value, gradient, and Hessian; the solver and
//! [`check_kkt`] consume nothing else.

mod solver;

pub use solver::{solve, KktResidual, SolveError, SolveOptions, SolveReport, SolveStatus};

use nalgebra::{DMatrix, DVector};

/// Identifies a constraint row so multipliers can be looked up after a
/// solve.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowLabel {
    /// Surrogate flow-conservation row of a node.
    Flow(usize),
    /// `sum_i t_{n->i} <= 1` for a node.
    RouteSum(usize),
    /// `mu_n + nu_n` budget row of a node.
    MacSum(usize),
    /// Linearized outgoing-margin row for link `(n, i)`.
    MarginOut(usize, usize),
    /// Exact incoming-margin row for link `(j, n)`.
    MarginIn(usize, usize),
    /// Per-node interference row at protection point `r`: `(r, n)`.
    Interference(usize, usize),
    /// Network-wide interference row at protection point `r`.
    InterferenceSum(usize),
    /// Lower/upper box rows, materialized by the solver.
    BoxLower(usize),
    BoxUpper(usize),
    Other(String),
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowLabel::Flow(n) => write!(f, "flow[{n}]"),
            RowLabel::RouteSum(n) => write!(f, "route-sum[{n}]"),
            RowLabel::MacSum(n) => write!(f, "mac-sum[{n}]"),
            RowLabel::MarginOut(n, i) => write!(f, "margin-out[{n}->{i}]"),
            RowLabel::MarginIn(j, n) => write!(f, "margin-in[{j}->{n}]"),
            RowLabel::Interference(r, n) => write!(f, "interference[pt{r},node{n}]"),
            RowLabel::InterferenceSum(r) => write!(f, "interference-sum[pt{r}]"),
            RowLabel::BoxLower(v) => write!(f, "lower-bound[var{v}]"),
            RowLabel::BoxUpper(v) => write!(f, "upper-bound[var{v}]"),
            RowLabel::Other(s) => write!(f, "{s}"),
        }
    }
}

/// One `coef * exp(lin.x + constant)` term; `coef` must be positive to keep
/// the row convex.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTerm {
    pub coef: f64,
    pub lin: Vec<(usize, f64)>,
    pub constant: f64,
}

impl ExpTerm {
    fn exponent(&self, x: &DVector<f64>) -> f64 {
        self.lin.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }
}

/// A convex constraint `term(x) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintTerm {
    Affine {
        lin: Vec<(usize, f64)>,
        constant: f64,
    },
    ExpSum {
        exps: Vec<ExpTerm>,
        lin: Vec<(usize, f64)>,
        constant: f64,
    },
    /// `lin.x + constant - sqrt_coef * sqrt(x[sqrt_var]) <= 0` with
    /// `sqrt_coef > 0`; convex on `x[sqrt_var] > 0`.
    SqrtDeficit {
        lin: Vec<(usize, f64)>,
        constant: f64,
        sqrt_var: usize,
        sqrt_coef: f64,
    },
}

impl ConstraintTerm {
    /// Add `delta` to the constant part (negative values relax the row).
    pub(crate) fn shift_constant(&mut self, delta: f64) {
        match self {
            ConstraintTerm::Affine { constant, .. }
            | ConstraintTerm::ExpSum { constant, .. }
            | ConstraintTerm::SqrtDeficit { constant, .. } => *constant += delta,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintTerm::Affine { lin, constant } => {
                lin.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + constant
            }
            ConstraintTerm::ExpSum { exps, lin, constant } => {
                let mut acc = lin.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + constant;
                for e in exps {
                    acc += e.coef * e.exponent(x).exp();
                }
                acc
            }
            ConstraintTerm::SqrtDeficit {
                lin,
                constant,
                sqrt_var,
                sqrt_coef,
            } => {
                lin.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + constant
                    - sqrt_coef * x[*sqrt_var].sqrt()
            }
        }
    }

    pub fn add_gradient(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) {
        match self {
            ConstraintTerm::Affine { lin, .. } => {
                for &(v, c) in lin {
                    grad[v] += scale * c;
                }
            }
            ConstraintTerm::ExpSum { exps, lin, .. } => {
                for &(v, c) in lin {
                    grad[v] += scale * c;
                }
                for e in exps {
                    let w = e.coef * e.exponent(x).exp();
                    for &(v, c) in &e.lin {
                        grad[v] += scale * w * c;
                    }
                }
            }
            ConstraintTerm::SqrtDeficit {
                lin,
                sqrt_var,
                sqrt_coef,
                ..
            } => {
                for &(v, c) in lin {
                    grad[v] += scale * c;
                }
                grad[*sqrt_var] += scale * (-sqrt_coef / (2.0 * x[*sqrt_var].sqrt()));
            }
        }
    }

    pub fn add_hessian(&self, x: &DVector<f64>, scale: f64, hess: &mut DMatrix<f64>) {
        match self {
            ConstraintTerm::Affine { .. } => {}
            ConstraintTerm::ExpSum { exps, .. } => {
                for e in exps {
                    let w = scale * e.coef * e.exponent(x).exp();
                    for &(va, ca) in &e.lin {
                        for &(vb, cb) in &e.lin {
                            hess[(va, vb)] += w * ca * cb;
                        }
                    }
                }
            }
            ConstraintTerm::SqrtDeficit {
                sqrt_var, sqrt_coef, ..
            } => {
                let xv = x[*sqrt_var];
                hess[(*sqrt_var, *sqrt_var)] += scale * sqrt_coef / (4.0 * xv * xv.sqrt());
            }
        }
    }
}

/// A labeled constraint row. `scale` records a positive factor the builder
/// divided the natural form by (for conditioning); multipliers reported for
/// the row are mapped back to the natural form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub label: RowLabel,
    pub term: ConstraintTerm,
    pub scale: f64,
}

/// Separable concave objective term (maximized).
#[derive(Debug, Clone, PartialEq)]
pub enum ObjTerm {
    /// `weight * x`
    Linear { var: usize, weight: f64 },
    /// `weight * ln(1 + x)`, concave for `weight >= 0`, domain `x > -1`.
    Log1p { var: usize, weight: f64 },
    /// `-(half_weight) * (x - center)^2`, concave for `half_weight >= 0`.
    NegQuad {
        var: usize,
        half_weight: f64,
        center: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// A convex (maximization) program over box-bounded variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexProgram {
    pub vars: Vec<Variable>,
    pub objective: Vec<ObjTerm>,
    pub rows: Vec<ConstraintRow>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        assert!(lower < upper, "empty box for variable");
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, label: RowLabel, term: ConstraintTerm) {
        self.rows.push(ConstraintRow {
            label,
            term,
            scale: 1.0,
        });
    }

    pub fn add_scaled_row(&mut self, label: RowLabel, term: ConstraintTerm, scale: f64) {
        assert!(scale > 0.0);
        self.rows.push(ConstraintRow { label, term, scale });
    }

    /// Objective value in the maximize sense.
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for t in &self.objective {
            acc += match *t {
                ObjTerm::Linear { var, weight } => weight * x[var],
                ObjTerm::Log1p { var, weight } => weight * (1.0 + x[var]).ln(),
                ObjTerm::NegQuad {
                    var,
                    half_weight,
                    center,
                } => -half_weight * (x[var] - center).powi(2),
            };
        }
        acc
    }

    /// Gradient of the *negated* objective (the quantity the solver
    /// minimizes).
    pub(crate) fn neg_objective_grad(&self, x: &DVector<f64>, grad: &mut DVector<f64>) {
        for t in &self.objective {
            match *t {
                ObjTerm::Linear { var, weight } => grad[var] -= weight,
                ObjTerm::Log1p { var, weight } => grad[var] -= weight / (1.0 + x[var]),
                ObjTerm::NegQuad {
                    var,
                    half_weight,
                    center,
                } => grad[var] += 2.0 * half_weight * (x[var] - center),
            }
        }
    }

    pub(crate) fn neg_objective_hess(&self, x: &DVector<f64>, hess: &mut DMatrix<f64>) {
        for t in &self.objective {
            match *t {
                ObjTerm::Linear { .. } => {}
                ObjTerm::Log1p { var, weight } => {
                    hess[(var, var)] += weight / (1.0 + x[var]).powi(2);
                }
                ObjTerm::NegQuad {
                    var, half_weight, ..
                } => hess[(var, var)] += 2.0 * half_weight,
            }
        }
    }

    /// All rows the solver actually sees: explicit rows (scaled) followed by
    /// finite box bounds.
    pub(crate) fn materialize_rows(&self) -> Vec<ConstraintRow> {
        let mut rows = Vec::with_capacity(self.rows.len() + 2 * self.vars.len());
        for r in &self.rows {
            rows.push(r.clone());
        }
        for (v, var) in self.vars.iter().enumerate() {
            if var.lower.is_finite() {
                rows.push(ConstraintRow {
                    label: RowLabel::BoxLower(v),
                    term: ConstraintTerm::Affine {
                        lin: vec![(v, -1.0)],
                        constant: var.lower,
                    },
                    scale: 1.0,
                });
            }
            if var.upper.is_finite() {
                rows.push(ConstraintRow {
                    label: RowLabel::BoxUpper(v),
                    term: ConstraintTerm::Affine {
                        lin: vec![(v, 1.0)],
                        constant: -var.upper,
                    },
                    scale: 1.0,
                });
            }
        }
        rows
    }
}

/// KKT residual report for a candidate primal/dual pair; all three entries
/// should be at tolerance for an optimal pair.
///
/// `lambda` holds natural-form multipliers aligned with the materialized
/// rows, exactly as a [`SolveReport`] stores them. Feasibility is measured
/// on the scaled rows (the conditioning the solver works in);
/// complementarity pairs natural multipliers with natural row values, so
/// the two conventions agree.
pub fn check_kkt(p: &ConvexProgram, x: &DVector<f64>, lambda: &[f64]) -> KktResidual {
    let rows = p.materialize_rows();
    assert_eq!(lambda.len(), rows.len(), "one multiplier per materialized row");
    let n = p.n_vars();
    let mut stat = DVector::zeros(n);
    p.neg_objective_grad(x, &mut stat);
    let mut feas: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (row, &lam) in rows.iter().zip(lambda) {
        let natural = row.term.value(x);
        feas = feas.max(natural / row.scale);
        comp = comp.max((lam * natural).abs());
        row.term.add_gradient(x, lam, &mut stat);
    }
    KktResidual {
        stationarity: stat.amax(),
        feasibility: feas.max(0.0),
        complementarity: comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_term(rng: &mut ChaCha8Rng, n: usize) -> ConstraintTerm {
        match rng.random_range(0..3) {
            0 => ConstraintTerm::Affine {
                lin: (0..n).map(|v| (v, rng.random_range(-2.0..2.0))).collect(),
                constant: rng.random_range(-1.0..1.0),
            },
            1 => ConstraintTerm::ExpSum {
                exps: (0..3)
                    .map(|_| ExpTerm {
                        coef: rng.random_range(0.1..2.0),
                        lin: (0..n)
                            .map(|v| (rng.random_bool(0.7), v, rng.random_range(-1.0..1.0)))
                            .filter(|&(keep, _, _)| keep)
                            .map(|(_, v, c)| (v, c))
                            .collect(),
                        constant: rng.random_range(-1.0..0.5),
                    })
                    .collect(),
                lin: vec![(0, rng.random_range(-1.0..1.0))],
                constant: -3.0,
            },
            _ => ConstraintTerm::SqrtDeficit {
                lin: (0..n).map(|v| (v, rng.random_range(-1.0..1.0))).collect(),
                constant: rng.random_range(-1.0..1.0),
                sqrt_var: rng.random_range(0..n),
                sqrt_coef: rng.random_range(0.5..3.0),
            },
        }
    }

    #[test]
    fn gradients_and_hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        for _ in 0..60 {
            let term = random_term(&mut rng, n);
            // strictly positive point keeps sqrt terms in-domain
            let x = DVector::from_fn(n, |_, _| rng.random_range(0.4..2.0));
            let h = 1e-5;
            let mut grad = DVector::zeros(n);
            term.add_gradient(&x, 1.0, &mut grad);
            let mut hess = DMatrix::zeros(n, n);
            term.add_hessian(&x, 1.0, &mut hess);
            for v in 0..n {
                let mut xp = x.clone();
                xp[v] += h;
                let mut xm = x.clone();
                xm[v] -= h;
                let fd = (term.value(&xp) - term.value(&xm)) / (2.0 * h);
                let denom = fd.abs().max(1.0);
                assert!(
                    (fd - grad[v]).abs() / denom < 1e-5,
                    "grad mismatch: {} vs {}",
                    fd,
                    grad[v]
                );
                let mut gp = DVector::zeros(n);
                term.add_gradient(&xp, 1.0, &mut gp);
                let mut gm = DVector::zeros(n);
                term.add_gradient(&xm, 1.0, &mut gm);
                for u in 0..n {
                    let fd2 = (gp[u] - gm[u]) / (2.0 * h);
                    let denom = fd2.abs().max(1.0);
                    assert!(
                        (fd2 - hess[(u, v)]).abs() / denom < 1e-4,
                        "hess mismatch at ({u},{v}): {} vs {}",
                        fd2,
                        hess[(u, v)]
                    );
                }
            }
        }
    }

    #[test]
    fn declared_curvature_holds_on_random_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4;
        for _ in 0..80 {
            let term = random_term(&mut rng, n);
            let a = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.5));
            let b = DVector::from_fn(n, |_, _| rng.random_range(0.3..2.5));
            let mid = (&a + &b) * 0.5;
            let lhs = term.value(&mid);
            let rhs = 0.5 * term.value(&a) + 0.5 * term.value(&b);
            assert!(lhs <= rhs + 1e-9, "convexity violated: {lhs} > {rhs}");
        }
    }
}
