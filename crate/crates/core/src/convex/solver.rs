//! Log-barrier interior-point solver for [`ConvexProgram`].
//!
//! Plain path-following: for an increasing barrier parameter `t` the
//! centering problem `min t*f(x) - sum ln(-f_i(x))` is solved by damped
//! Newton with a feasibility-preserving backtracking line search, dense
//! Cholesky factorizations throughout. Multipliers are recovered from the
//! barrier (`lambda_i = 1/(t * -f_i)`), which drives the complementarity
//! residual to `1/t` and the duality gap to `m/t`.
//!
//! Starts that violate a row trigger an internal phase-I (auxiliary slack
//! minimization); starts outside a variable box are clipped to its strict
//! interior.

use nalgebra::{DMatrix, DVector};

use super::{ConstraintRow, ConstraintTerm, ConvexProgram, ObjTerm, RowLabel};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("problem is infeasible; worst row {row} violates by {violation:.3e}")]
    Infeasible { row: String, violation: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Target duality gap and complementarity residual.
    pub tol: f64,
    pub t_init: f64,
    pub mu_factor: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            t_init: 1.0,
            mu_factor: 8.0,
            max_newton_per_stage: 120,
            max_stages: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Primal point, strictly feasible.
    pub x: DVector<f64>,
    /// Multipliers aligned with the materialized rows (explicit rows in
    /// their given order, then finite box bounds).
    pub lambda: Vec<f64>,
    pub labels: Vec<RowLabel>,
    /// Objective in the maximize sense.
    pub objective: f64,
    pub kkt: KktResidual,
    pub barrier_stages: usize,
    pub newton_steps: usize,
    /// Centered objective (maximize sense) after each barrier stage;
    /// nondecreasing along the central path.
    pub stage_objectives: Vec<f64>,
}

impl SolveReport {
    /// Multiplier of a labeled row in the *natural* (unscaled) form, summed
    /// over rows sharing the label.
    pub fn multiplier(&self, label: &RowLabel) -> Option<f64> {
        let mut found = false;
        let mut acc = 0.0;
        for (l, &lam) in self.labels.iter().zip(&self.lambda) {
            if l == label {
                found = true;
                acc += lam;
            }
        }
        found.then_some(acc)
    }
}

struct Materialized {
    rows: Vec<ConstraintRow>,
}

impl Materialized {
    fn value(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.rows[i].term.value(x) / self.rows[i].scale
    }

    fn all_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.rows.iter().all(|r| {
            let v = r.term.value(x) / r.scale;
            v < 0.0 // NaN and +inf both fail this test
        })
    }

    fn max_violation(&self, x: &DVector<f64>) -> (usize, f64) {
        let mut worst = (0, f64::NEG_INFINITY);
        for (i, r) in self.rows.iter().enumerate() {
            let v = r.term.value(x) / r.scale;
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if v > worst.1 {
                worst = (i, v);
            }
        }
        worst
    }
}

/// Solve a convex maximization program from `start`.
///
/// `start` must lie in the interior of the variable boxes (it is clipped
/// there if not); inequality rows may be violated, in which case a phase-I
/// slack minimization runs first.
pub fn solve(p: &ConvexProgram, start: &DVector<f64>, opts: &SolveOptions) -> Result<SolveReport, SolveError> {
    if start.len() != p.n_vars() {
        return Err(SolveError::Dimension(format!(
            "start has {} entries, program has {} variables",
            start.len(),
            p.n_vars()
        )));
    }
    let mut mat = Materialized {
        rows: p.materialize_rows(),
    };
    let mut x = clip_into_boxes(p, start);
    if !mat.all_strictly_feasible(&x) {
        let (_, worst) = mat.max_violation(&x);
        if worst <= 1e-9 {
            // micro-violations at a warm start are floating-point noise
            // (the handoff point is feasible in exact arithmetic); relax
            // the touched rows by a few ulps instead of running phase-I
            for i in 0..mat.rows.len() {
                let v = mat.rows[i].term.value(&x) / mat.rows[i].scale;
                if v > -1e-11 {
                    let delta = (v.max(0.0) + 1e-11) * mat.rows[i].scale;
                    mat.rows[i].term.shift_constant(-delta);
                }
            }
        } else {
            if std::env::var("IPM_TRACE").is_ok() {
                let (i, v) = mat.max_violation(&x);
                eprintln!("  phase-I trigger: worst {} = {:.4e}", mat.rows[i].label, v);
            }
            x = phase_one(p, &x, opts)?;
        }
    }
    barrier_loop(p, &mat, x, opts)
}

/// Clamp a start onto its boxes. No interior padding: nearby constraints
/// can be orders of magnitude thinner than any fixed pad, so boundary
/// contact is handled by the micro-relaxation in [`solve`] instead.
fn clip_into_boxes(p: &ConvexProgram, start: &DVector<f64>) -> DVector<f64> {
    let mut x = start.clone();
    for (v, var) in p.vars.iter().enumerate() {
        x[v] = x[v].clamp(var.lower, var.upper);
    }
    x
}

fn barrier_loop(
    p: &ConvexProgram,
    mat: &Materialized,
    mut x: DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport, SolveError> {
    let _ = p.n_vars();
    let m = mat.rows.len();
    let mut t = opts.t_init;
    let mut newton_total = 0usize;
    let mut stages = 0usize;
    let mut stage_objectives = Vec::new();
    // cap the barrier parameter at the point where complementarity alone
    // would be two orders below tolerance; beyond that only conditioning
    // degrades
    let t_cap = 100.0 * (m as f64).max(1.0) / opts.tol;
    let mut best: Option<(DVector<f64>, Vec<f64>, KktResidual)> = None;

    while stages < opts.max_stages {
        let steps = center(p, mat, &mut x, t, opts.max_newton_per_stage)?;
        newton_total += steps;
        stages += 1;
        stage_objectives.push(p.objective_value(&x));

        // natural-form multipliers for this stage: barrier recovery, then
        // a least-squares polish over the near-active rows (stationarity
        // is linear in the multipliers, so the recovery noise of
        // 1/(t * slack) is removable)
        let mut lambda = Vec::with_capacity(m);
        for i in 0..m {
            let fi = mat.value(i, &x);
            lambda.push(1.0 / (t * (-fi) * mat.rows[i].scale));
        }
        refine_multipliers(p, mat, &x, &mut lambda);
        let kkt = kkt_at(p, mat, &x, &lambda);
        if std::env::var("IPM_TRACE").is_ok() {
            eprintln!("  stage {stages}: t={t:.2e} steps={steps} kkt=({:.2e},{:.2e},{:.2e})", kkt.stationarity, kkt.feasibility, kkt.complementarity);
        }
        // prefer later stages when residuals are comparable: the central
        // path keeps sharpening the primal point after the multiplier
        // residuals have bottomed out
        if best.as_ref().map_or(true, |(_, _, b)| kkt.max() <= 1.05 * b.max()) {
            best = Some((x.clone(), lambda, kkt));
        }
        if kkt.max() <= opts.tol || t > t_cap {
            break;
        }
        t *= opts.mu_factor;
    }

    let (x, lambda, kkt) = best.expect("at least one stage");
    let labels = mat.rows.iter().map(|r| r.label.clone()).collect();
    Ok(SolveReport {
        status: if kkt.max() <= opts.tol { SolveStatus::Optimal } else { SolveStatus::MaxIter },
        objective: p.objective_value(&x),
        x,
        lambda,
        labels,
        kkt,
        barrier_stages: stages,
        newton_steps: newton_total,
        stage_objectives,
    })
}

/// Least-squares polish of recovered multipliers: re-fit the significant
/// multipliers to minimize the stationarity residual (keeping them
/// nonnegative), accepting the fit only when it helps.
fn refine_multipliers(p: &ConvexProgram, mat: &Materialized, x: &DVector<f64>, lambda: &mut [f64]) {
    let n = p.n_vars();
    let lam_max = lambda.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..lambda.len())
        .filter(|&i| lambda[i] > 1e-9 * lam_max.max(1e-9))
        .collect();
    if active.is_empty() || active.len() > 4 * n {
        return;
    }
    let mut g0 = DVector::zeros(n);
    p.neg_objective_grad(x, &mut g0);
    let mut gmat = DMatrix::zeros(n, active.len());
    for (col, &i) in active.iter().enumerate() {
        let mut g = DVector::zeros(n);
        mat.rows[i].term.add_gradient(x, 1.0, &mut g);
        gmat.set_column(col, &g);
    }
    let gtg = gmat.transpose() * &gmat;
    let rhs = gmat.transpose() * (-&g0);
    let mut reg = gtg.clone();
    let scale = reg.diagonal().amax().max(1e-300);
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-12 * scale;
    }
    let Some(chol) = reg.cholesky() else { return };
    let fitted = chol.solve(&rhs);
    let mut candidate: Vec<f64> = lambda.to_vec();
    for (col, &i) in active.iter().enumerate() {
        candidate[i] = fitted[col].max(0.0);
    }
    let before = kkt_at(p, mat, x, lambda);
    let after = kkt_at(p, mat, x, &candidate);
    if after.max() < before.max() {
        lambda.copy_from_slice(&candidate);
    }
}

/// KKT residuals for natural multipliers against the materialized rows.
fn kkt_at(p: &ConvexProgram, mat: &Materialized, x: &DVector<f64>, lambda: &[f64]) -> KktResidual {
    let n = p.n_vars();
    let mut stat = DVector::zeros(n);
    p.neg_objective_grad(x, &mut stat);
    let mut feas: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (i, row) in mat.rows.iter().enumerate() {
        let natural = row.term.value(x);
        feas = feas.max(natural / row.scale);
        comp = comp.max((lambda[i] * natural).abs());
        row.term.add_gradient(x, lambda[i], &mut stat);
    }
    KktResidual {
        stationarity: stat.amax(),
        feasibility: feas.max(0.0),
        complementarity: comp,
    }
}

/// Newton centering for fixed barrier parameter; returns the step count.
fn center(
    p: &ConvexProgram,
    mat: &Materialized,
    x: &mut DVector<f64>,
    t: f64,
    max_steps: usize,
) -> Result<usize, SolveError> {
    let n = p.n_vars();
    let m = mat.rows.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut row_grad = DVector::zeros(n);
    let mut support: Vec<usize> = Vec::with_capacity(n);
    let mut prev_decrement = f64::INFINITY;

    for step in 0..max_steps {
        grad.fill(0.0);
        hess.fill(0.0);
        p.neg_objective_grad(x, &mut grad);
        grad *= t;
        p.neg_objective_hess(x, &mut hess);
        hess *= t;
        for i in 0..m {
            let row = &mat.rows[i];
            let fi = mat.value(i, x);
            debug_assert!(fi < 0.0, "interior lost at row {}", row.label);
            row_grad.fill(0.0);
            row.term.add_gradient(x, 1.0 / row.scale, &mut row_grad);
            let w1 = 1.0 / (-fi);
            grad.axpy(w1, &row_grad, 1.0);
            // rank-one barrier curvature over the row's support
            let w2 = 1.0 / (fi * fi);
            support.clear();
            for v in 0..n {
                if row_grad[v] != 0.0 {
                    support.push(v);
                }
            }
            for &a in &support {
                let ga = row_grad[a];
                for &b in &support {
                    hess[(a, b)] += w2 * ga * row_grad[b];
                }
            }
            row.term.add_hessian(x, w1 / row.scale, &mut hess);
        }
        let delta = cholesky_solve(&hess, &grad)?;
        let decrement = grad.dot(&delta); // = d^T H d >= 0
        if std::env::var("IPM_TRACE2").is_ok() {
            eprintln!("    newton step {step}: t={t:.3e} decrement={decrement:.6e}");
        }
        if decrement * 0.5 <= 1e-16 {
            return Ok(step);
        }
        // the decrement bottoms out at a problem-scaled rounding floor;
        // once it stops collapsing there is nothing left to gain
        if decrement < 1e-6 && decrement > 0.25 * prev_decrement {
            return Ok(step);
        }
        prev_decrement = decrement;
        let phi0 = barrier_objective(p, mat, x, t);
        // a merit comparison is meaningless once the required decrease
        // falls near the rounding noise of phi; in that regime take the
        // classical damped Newton step 1/(1+delta), backtracking only for
        // feasibility (self-concordance guarantees descent)
        let merit_noise = 1e-11 * phi0.abs().max(1.0);
        if decrement <= 0.01 || 0.01 * decrement <= merit_noise {
            let mut s = (1.0 / (1.0 + decrement.sqrt())).min(1.0);
            let mut moved = false;
            for _ in 0..60 {
                let cand = &*x - &delta * s;
                if mat.all_strictly_feasible(&cand) {
                    *x = cand;
                    moved = true;
                    break;
                }
                s *= 0.5;
            }
            if moved {
                continue;
            }
        }
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..70 {
            let cand = &*x - &delta * s;
            if mat.all_strictly_feasible(&cand) {
                let phi = barrier_objective(p, mat, &cand, t);
                if phi <= phi0 - 0.01 * s * decrement {
                    *x = cand;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // step has collapsed: the iterate is as centered as the
            // arithmetic allows
            if std::env::var("IPM_TRACE").is_ok() {
                eprintln!("  newton step {step}: line search collapsed");
            }
            return Ok(step + 1);
        }
        if std::env::var("IPM_TRACE").is_ok() {
            eprintln!("    accepted s={s:.3e}");
        }
    }
    Ok(max_steps)
}

fn barrier_objective(p: &ConvexProgram, mat: &Materialized, x: &DVector<f64>, t: f64) -> f64 {
    let mut acc = -t * p.objective_value(x);
    for i in 0..mat.rows.len() {
        let fi = mat.value(i, x);
        acc -= (-fi).ln();
    }
    acc
}

/// Newton-system solve with symmetric Jacobi equilibration (the barrier
/// Hessian mixes scales across many orders of magnitude) and an escalating
/// ridge fallback.
fn cholesky_solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
    let n = hess.nrows();
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let h = hess[(i, i)];
        d[i] = if h > 0.0 { 1.0 / h.sqrt() } else { 1.0 };
    }
    let mut scaled = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            scaled[(a, b)] = hess[(a, b)] * d[a] * d[b];
        }
    }
    let rhs = DVector::from_fn(n, |i, _| grad[i] * d[i]);
    let mut ridge = 0.0;
    for _ in 0..16 {
        let mut h = scaled.clone();
        if ridge > 0.0 {
            for i in 0..n {
                h[(i, i)] += ridge;
            }
        }
        if let Some(chol) = h.cholesky() {
            let y = chol.solve(&rhs);
            return Ok(DVector::from_fn(n, |i, _| y[i] * d[i]));
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
    }
    Err(SolveError::Numerical("Hessian factorization failed".into()))
}

/// Selective slack minimization: rows violated at the start share one
/// slack variable `s` (minimized); rows already satisfied keep their walls
/// (micro-relaxed when the start touches them). A strictly negative
/// optimum certifies a strictly feasible point of the original program.
///
/// The selective form matters: these programs routinely have feasible
/// regions whose uniform Chebyshev depth is at rounding scale (variables
/// pinned between a box and an active row), which a whole-program slack
/// could never certify.
fn phase_one(p: &ConvexProgram, x0: &DVector<f64>, opts: &SolveOptions) -> Result<DVector<f64>, SolveError> {
    let n = p.n_vars();
    let all_rows = p.materialize_rows();
    let sqrt_vars: std::collections::BTreeSet<usize> = p
        .rows
        .iter()
        .filter_map(|r| match &r.term {
            ConstraintTerm::SqrtDeficit { sqrt_var, .. } => Some(*sqrt_var),
            _ => None,
        })
        .collect();

    let mut q = ConvexProgram::new();
    for (v, var) in p.vars.iter().enumerate() {
        // box rows come in explicitly below; loose outer walls keep the
        // subproblem bounded, square-root arguments stay positive
        let span = if var.lower.is_finite() && var.upper.is_finite() {
            var.upper - var.lower
        } else {
            1e4
        };
        let mut lo = if var.lower.is_finite() { var.lower - span } else { f64::NEG_INFINITY };
        if sqrt_vars.contains(&v) {
            lo = lo.max(1e-9);
        }
        let hi = if var.upper.is_finite() { var.upper + span } else { f64::INFINITY };
        q.add_var(var.name.clone(), lo, hi);
    }

    let mut worst = 0.0f64;
    let values: Vec<f64> = all_rows
        .iter()
        .map(|row| {
            let v = row.term.value(x0) / row.scale;
            if v.is_finite() {
                v
            } else {
                1e6
            }
        })
        .collect();
    for &v in &values {
        worst = worst.max(v);
    }
    let s0 = worst + 1.0;
    let s_var = q.add_var("phase1-slack", -1e3, s0 + 1.0);
    q.objective.push(ObjTerm::Linear {
        var: s_var,
        weight: -1.0,
    });
    for (row, &v) in all_rows.iter().zip(&values) {
        let mut term = row.term.clone();
        if v > 0.0 {
            // violated: relax with the shared slack
            match &mut term {
                ConstraintTerm::Affine { lin, .. } => lin.push((s_var, -row.scale)),
                ConstraintTerm::ExpSum { lin, .. } => lin.push((s_var, -row.scale)),
                ConstraintTerm::SqrtDeficit { lin, .. } => lin.push((s_var, -row.scale)),
            }
        } else if v > -1e-11 {
            // boundary contact at the start: a few ulps of fixed room
            term.shift_constant(-1e-11 * row.scale);
        }
        q.add_scaled_row(row.label.clone(), term, row.scale);
    }
    let mut start = DVector::zeros(n + 1);
    for v in 0..n {
        start[v] = x0[v];
    }
    start[s_var] = s0;
    let popts = SolveOptions {
        tol: (opts.tol * 1e-1).max(1e-10),
        ..opts.clone()
    };
    let report = {
        let mat = Materialized {
            rows: q.materialize_rows(),
        };
        debug_assert!(mat.all_strictly_feasible(&start), "phase-I start must be interior");
        barrier_loop(&q, &mat, start, &popts)?
    };
    if std::env::var("IPM_TRACE").is_ok() {
        let n_viol = values.iter().filter(|&&v| v > 0.0).count();
        eprintln!(
            "  phase-I: {n_viol} violated rows, worst {worst:.3e}, s* = {:.6e}, status {:?}, stages {}, newton {}",
            report.x[s_var], report.status, report.barrier_stages, report.newton_steps
        );
    }
    // any strictly negative slack certifies an interior point; regions a
    // few ulps deep are legitimate when other constraints pin a variable
    // close to its wall
    if report.x[s_var] >= 0.0 {
        let mat = Materialized {
            rows: p.materialize_rows(),
        };
        let xbest = DVector::from_fn(n, |i, _| report.x[i]);
        let (i, v) = mat.max_violation(&xbest);
        return Err(SolveError::Infeasible {
            row: mat.rows[i].label.to_string(),
            violation: v,
        });
    }
    Ok(DVector::from_fn(n, |i, _| report.x[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{check_kkt, ExpTerm};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_box_maximum_hits_upper_bounds() {
        let mut p = ConvexProgram::new();
        for k in 0..4 {
            let v = p.add_var(format!("rho{k}"), 0.0, 1.0);
            p.objective.push(ObjTerm::Linear { var: v, weight: 1.0 });
        }
        let start = DVector::from_element(4, 0.3);
        let r = solve(&p, &start, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        for k in 0..4 {
            assert!((r.x[k] - 1.0).abs() < 1e-6, "x[{k}]={}", r.x[k]);
            let lam = r.multiplier(&RowLabel::BoxUpper(k)).unwrap();
            assert!((lam - 1.0).abs() < 1e-6, "multiplier {lam}");
        }
        assert!((r.objective - 4.0).abs() < 1e-6);
        assert!(r.kkt.max() < 1e-7, "{:?}", r.kkt);
        assert!(check_kkt(&p, &r.x, &r.lambda).max() < 1e-7);
    }

    fn exp_cap_program() -> ConvexProgram {
        // minimize x^2 subject to e^x <= e
        let mut p = ConvexProgram::new();
        let v = p.add_var("x", -5.0, 5.0);
        p.objective.push(ObjTerm::NegQuad {
            var: v,
            half_weight: 1.0,
            center: 0.0,
        });
        p.add_row(
            RowLabel::Other("exp-cap".into()),
            ConstraintTerm::ExpSum {
                exps: vec![ExpTerm {
                    coef: 1.0,
                    lin: vec![(v, 1.0)],
                    constant: 0.0,
                }],
                lin: vec![],
                constant: -std::f64::consts::E,
            },
        );
        p
    }

    #[test]
    fn inactive_constraint_has_zero_multiplier() {
        let p = exp_cap_program();
        let r = solve(&p, &DVector::from_element(1, 0.5), &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.x[0].abs() < 1e-5, "x={}", r.x[0]);
        let lam = r.multiplier(&RowLabel::Other("exp-cap".into())).unwrap();
        assert!(lam < 1e-6, "multiplier {lam}");
        assert!(check_kkt(&p, &r.x, &r.lambda).max() < 1e-6);
    }

    #[test]
    fn phase_one_recovers_from_infeasible_start() {
        let p = exp_cap_program();
        // e^3 > e: start violates the row
        let r = solve(&p, &DVector::from_element(1, 3.0), &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.x[0].abs() < 1e-5);
    }

    #[test]
    fn infeasible_program_reports_worst_row() {
        let mut p = ConvexProgram::new();
        let v = p.add_var("x", 0.0, 1.0);
        p.objective.push(ObjTerm::Linear { var: v, weight: 1.0 });
        // x <= -1 clashes with the box
        p.add_row(
            RowLabel::Other("clash".into()),
            ConstraintTerm::Affine {
                lin: vec![(v, 1.0)],
                constant: 1.0,
            },
        );
        let err = solve(&p, &DVector::from_element(1, 0.5), &SolveOptions::default()).unwrap_err();
        match err {
            SolveError::Infeasible { row, violation } => {
                assert_eq!(row, "clash");
                assert!(violation > 0.9);
            }
            other => panic!("expected infeasibility, got {other}"),
        }
    }

    #[test]
    fn active_affine_row_multiplier_is_exact() {
        // minimize 1/2 ((x1-2)^2 + (x2-2)^2) s.t. x1 + x2 <= 2
        // optimum (1, 1), multiplier 1
        let mut p = ConvexProgram::new();
        let a = p.add_var("x1", -10.0, 10.0);
        let b = p.add_var("x2", -10.0, 10.0);
        for v in [a, b] {
            p.objective.push(ObjTerm::NegQuad {
                var: v,
                half_weight: 0.5,
                center: 2.0,
            });
        }
        p.add_row(
            RowLabel::Other("budget".into()),
            ConstraintTerm::Affine {
                lin: vec![(a, 1.0), (b, 1.0)],
                constant: -2.0,
            },
        );
        let r = solve(&p, &DVector::from_element(2, 0.0), &SolveOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
        let lam = r.multiplier(&RowLabel::Other("budget".into())).unwrap();
        assert!((lam - 1.0).abs() < 1e-6, "multiplier {lam}");
    }

    #[test]
    fn random_box_qps_match_projected_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let n = rng.random_range(2..6);
            let mut p = ConvexProgram::new();
            let mut weights = Vec::new();
            let mut centers = Vec::new();
            for k in 0..n {
                let v = p.add_var(format!("x{k}"), 0.0, 1.0);
                let w: f64 = rng.random_range(0.2..3.0);
                let c: f64 = rng.random_range(-1.0..2.0);
                weights.push(w);
                centers.push(c);
                p.objective.push(ObjTerm::NegQuad {
                    var: v,
                    half_weight: 0.5 * w,
                    center: c,
                });
            }
            // independent projected-gradient oracle, run to high precision
            let step = 1.0 / weights.iter().cloned().fold(0.0, f64::max);
            let mut y = vec![0.5; n];
            for _ in 0..20_000 {
                for k in 0..n {
                    y[k] = (y[k] - step * weights[k] * (y[k] - centers[k])).clamp(0.0, 1.0);
                }
            }
            let r = solve(&p, &DVector::from_element(n, 0.5), &SolveOptions::default()).unwrap();
            for k in 0..n {
                assert!(
                    (r.x[k] - y[k]).abs() < 1e-6,
                    "var {k}: ipm={} oracle={}",
                    r.x[k],
                    y[k]
                );
            }
        }
    }

    #[test]
    fn stage_objectives_monotone_and_deterministic() {
        let p = exp_cap_program();
        let start = DVector::from_element(1, 0.9);
        let r1 = solve(&p, &start, &SolveOptions::default()).unwrap();
        for w in r1.stage_objectives.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "stage objective decreased: {w:?}");
        }
        let r2 = solve(&p, &start, &SolveOptions::default()).unwrap();
        assert_eq!(r1.newton_steps, r2.newton_steps);
        assert_eq!(r1.x[0].to_bits(), r2.x[0].to_bits());
    }
}
