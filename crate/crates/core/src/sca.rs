//! Successive convex approximation: surrogate construction and the outer
//! loop that drives it to a KKT point while keeping every iterate feasible
//! for the original (non-convex) bound-model problem.
//!
//! The non-convexities are confined to two families, both replaced per
//! iteration by first-order surrogates that match value and gradient at
//! the anchor and majorize elsewhere:
//!
//! * the negated exponentials in the flow constraint (outgoing service and
//!   the incoming concave correction) get the tangent-plane bound
//!   `-e^{a.x} <= -e^{a.x0} (1 + a.(x - x0))`;
//! * the outgoing-margin constraint `sigma sqrt(y) <= margin`, whose
//!   left side is concave in `y`, is tightened to its supporting
//!   hyperplane at the anchor.
//!
//! Everything else (exponential sums, the incoming-margin rows, boxes) is
//! convex and enters the subproblem exactly.

use std::collections::BTreeMap;



use crate::channel::qbound::{ALPHA1, ALPHA2};
use crate::convex::{
    check_kkt, solve, ConstraintTerm, ConvexProgram, ExpTerm, KktResidual, ObjTerm, RowLabel, SolveError,
    SolveOptions, SolveReport,
};
use crate::model::{
    flow_value_exact, interference_row, link_exponent, max_violation, CostKind, NetworkModel, NodeVars,
    Solution, UtilityKind, VarLayout, Y_FLOOR,
};

#[derive(Debug, thiserror::Error)]
pub enum ScaError {
    #[error("no strictly feasible start: {0}")]
    NoFeasibleStart(String),
    #[error("subproblem solve failed at iteration {iter}: {source}")]
    Subproblem {
        iter: usize,
        #[source]
        source: SolveError,
    },
    #[error("iterate left the feasible region ({row}: {value:.3e}); solver tolerance too loose")]
    FeasibilityLost { row: String, value: f64 },
}

/// How PU interference enters the subproblem.
#[derive(Debug, Clone, PartialEq)]
pub enum InterferenceBudgets {
    /// Network-wide rows: one cap per protection point over its whole
    /// neighborhood (centralized form).
    Shared,
    /// Per-node budget rows `f(mu_n, P_n) <= budget[(point, node)]`
    /// (the decomposed form; budgets in watts).
    PerNode(BTreeMap<(usize, usize), f64>),
}

impl InterferenceBudgets {
    /// Equal per-node split of each cap.
    pub fn equal_split(model: &NetworkModel) -> Self {
        let mut map = BTreeMap::new();
        for (r, cap) in model.active_points() {
            let members = &model.topology.pu_neighborhoods[r];
            if members.is_empty() {
                continue;
            }
            let share = cap / members.len() as f64;
            for &n in members {
                map.insert((r, n), share);
            }
        }
        InterferenceBudgets::PerNode(map)
    }
}

/// Construct a strictly feasible point.
///
/// Routing is uniform over the sink-ward out-neighbors scaled by 0.9;
/// power sits just above each node's weakest-link margin floor;
/// squared-margin auxiliaries go to the midpoint of their feasible
/// interval; transmit probabilities start at 0.05 and are reduced (a) to
/// fit every active interference cap with 3 dB of margin and (b)
/// geometrically with hop depth until every flow constraint has strictly
/// positive slack; rates take 90% of that slack.
pub fn find_feasible_start(model: &NetworkModel) -> Result<Solution, ScaError> {
    construct_feasible(model, None, None)
}

/// Feasibility restoration for decomposed runs: like
/// [`find_feasible_start`], but margins respect the supporting-hyperplane
/// rows anchored at `tangent_anchor` (tighter than the exact square
/// roots), and transmit probabilities fit the given per-node interference
/// budgets at 90% instead of an equal half-cap split.
pub fn construct_feasible(
    model: &NetworkModel,
    tangent_anchor: Option<&Solution>,
    budget_fit: Option<&BTreeMap<(usize, usize), f64>>,
) -> Result<Solution, ScaError> {
    let t = &model.topology;
    let s = &model.scenario;
    let n = t.n_nodes;
    let eps = model.epsilon();
    let ln_floor = model.options.ln_floor;

    for node in 0..n {
        if t.out_neighbors[node].is_empty() {
            return Err(ScaError::NoFeasibleStart(format!(
                "node {} has no outgoing links",
                node + 1
            )));
        }
    }

    // hop depth toward the sink (reverse BFS)
    let mut depth = vec![usize::MAX; n + 1];
    depth[t.sink] = 0;
    let mut frontier = vec![t.sink];
    while let Some(v) = frontier.pop() {
        for from in 0..n {
            if depth[from] == usize::MAX && t.out_neighbors[from].contains(&v) {
                depth[from] = depth[v] + 1;
                frontier.push(from);
            }
        }
    }
    if let Some(node) = (0..n).find(|&v| depth[v] == usize::MAX) {
        return Err(ScaError::NoFeasibleStart(format!(
            "node {} cannot reach the sink",
            node + 1
        )));
    }

    // power: clear the weakest outgoing margin floor with a little room;
    // under an anchored surrogate the floor is the tangent's value at the
    // squared-margin floor, which majorizes the square root
    let tangent_floor = |node: usize, i: usize| -> f64 {
        match tangent_anchor {
            None => crate::scenario::MARGIN_FLOOR_SIGMAS,
            Some(anchor) => {
                let ya = anchor.nodes[node].y_out[&i];
                ((Y_FLOOR - ya) / (2.0 * ya.sqrt()) + ya.sqrt()).max(crate::scenario::MARGIN_FLOOR_SIGMAS)
            }
        }
    };
    let mut p_dbw = vec![0.0; n];
    for node in 0..n {
        let req = t.out_neighbors[node]
            .iter()
            .map(|&i| {
                let st = model.stats.link(node, i);
                st.threshold_db - st.mean_offset_db + tangent_floor(node, i) * st.std_db
            })
            .fold(f64::NEG_INFINITY, f64::max)
            + 0.5;
        let p = req.max(model.options.p_min_dbw + 1.0).min(s.p_max_dbw(node) - 0.25);
        if p + 0.25 < req {
            return Err(ScaError::NoFeasibleStart(format!(
                "node {} cannot clear its anchored margin floor within its power cap",
                node + 1
            )));
        }
        p_dbw[node] = p;
    }

    // per-node transmit-probability ceiling from the caps: fit the given
    // budgets at 90%, or split half of each cap equally (3 dB margin)
    let mut mu_cap = vec![f64::INFINITY; n];
    for (r, cap) in model.active_points() {
        let members = &t.pu_neighborhoods[r];
        if members.is_empty() {
            continue;
        }
        for &node in members {
            let share = match budget_fit {
                Some(budgets) => 0.9 * budgets.get(&(r, node)).copied().unwrap_or(cap),
                None => 0.5 * cap / members.len() as f64,
            };
            let gain = model.interference_gain(node, r) * crate::units::db_to_lin(p_dbw[node]);
            let fit = share / gain - eps;
            if fit <= ln_floor.exp() {
                return Err(ScaError::NoFeasibleStart(format!(
                    "interference cap at protection point {} cannot be met by node {} even at minimum transmit probability",
                    r + 1,
                    node + 1
                )));
            }
            mu_cap[node] = mu_cap[node].min(fit);
        }
    }

    let build = |grade: f64| -> Solution {
        let mut nodes = Vec::with_capacity(n);
        for node in 0..n {
            let outs = &t.out_neighbors[node];
            // route only downhill (toward the sink); uphill and sideways
            // links start at the floor so they feed no real traffic
            let downhill: Vec<usize> = outs.iter().copied().filter(|&i| depth[i] < depth[node]).collect();
            let t_each = 0.9 / downhill.len() as f64;
            let mu_bar = (0.05 * grade.powi(depth[node] as i32 - 1)).min(mu_cap[node]);
            let nu = (1.0 - eps - mu_bar) * 0.995;
            let mut nv = NodeVars {
                p_dbw: p_dbw[node],
                t_ln: BTreeMap::new(),
                mu_ln: mu_bar.ln(),
                nu_ln: nu.ln(),
                y_out: BTreeMap::new(),
                y_in: BTreeMap::new(),
                rho: 0.0,
            };
            for &i in outs {
                let t_val = if downhill.contains(&i) { t_each.ln() } else { ln_floor + 0.5 };
                nv.t_ln.insert(i, t_val);
                let st = model.stats.link(node, i);
                let x = (p_dbw[node] + st.mean_offset_db - st.threshold_db) / st.std_db;
                // largest y the (possibly anchored) margin row allows
                let y_cap = match tangent_anchor {
                    None => x * x,
                    Some(anchor) => {
                        let ya = anchor.nodes[node].y_out[&i];
                        ya + 2.0 * ya.sqrt() * (x - ya.sqrt())
                    }
                };
                nv.y_out.insert(i, 0.5 * (Y_FLOOR + y_cap.max(Y_FLOOR)));
            }
            for &j in &t.in_neighbors[node] {
                let st = model.stats.link(j, node);
                let x = (p_dbw[j] + st.mean_offset_db - st.threshold_db) / st.std_db;
                nv.y_in.insert(j, (x * x).max(Y_FLOOR) * 1.02 + 0.02);
            }
            nodes.push(nv);
        }
        Solution { nodes }
    };

    let mut grade = 1.0;
    let mut sol = build(grade);
    for _ in 0..40 {
        let min_slack = (0..n)
            .map(|node| -flow_value_exact(model, &sol, node))
            .fold(f64::INFINITY, f64::min);
        if min_slack > 1e-9 {
            break;
        }
        grade *= 0.7;
        sol = build(grade);
    }
    for node in 0..n {
        let slack = -flow_value_exact(model, &sol, node);
        if slack <= 1e-9 {
            return Err(ScaError::NoFeasibleStart(format!(
                "flow constraint of node {} has no slack (best {:.3e})",
                node + 1,
                slack
            )));
        }
        sol.nodes[node].rho = (0.9 * slack).min(0.999);
    }

    let (row, value) = max_violation(model, &sol);
    if value >= 0.0 {
        return Err(ScaError::NoFeasibleStart(format!(
            "constructed point violates {row} by {value:.3e}"
        )));
    }
    Ok(sol)
}

/// Build the convex subproblem anchored at `anchor`.
pub fn build_surrogate(
    model: &NetworkModel,
    layout: &VarLayout,
    anchor: &Solution,
    budgets: &InterferenceBudgets,
) -> ConvexProgram {
    let t = &model.topology;
    let s = &model.scenario;
    let n = t.n_nodes;
    let eps = model.epsilon();
    let mut p = ConvexProgram::new();

    for node in 0..n {
        let v = p.add_var(format!("P[{node}]"), model.options.p_min_dbw, s.p_max_dbw(node));
        debug_assert_eq!(v, layout.p[node]);
        let v = p.add_var(format!("mu[{node}]"), model.options.ln_floor, (1.0 - eps).ln());
        debug_assert_eq!(v, layout.mu[node]);
        let v = p.add_var(format!("nu[{node}]"), model.options.ln_floor, 0.0);
        debug_assert_eq!(v, layout.nu[node]);
        let v = p.add_var(format!("rho[{node}]"), 0.0, 1.0);
        debug_assert_eq!(v, layout.rho[node]);
        for &i in &t.out_neighbors[node] {
            let v = p.add_var(format!("t[{node}->{i}]"), model.options.ln_floor, 0.0);
            debug_assert_eq!(v, layout.t[&(node, i)]);
        }
        for &i in &t.out_neighbors[node] {
            let v = p.add_var(format!("yo[{node}->{i}]"), Y_FLOOR, model.options.y_max);
            debug_assert_eq!(v, layout.y_out[&(node, i)]);
        }
        for &j in &t.in_neighbors[node] {
            let v = p.add_var(format!("yi[{j}->{node}]"), Y_FLOOR, model.options.y_max);
            debug_assert_eq!(v, layout.y_in[&(j, node)]);
        }
    }

    for node in 0..n {
        match model.options.utility {
            UtilityKind::Linear { weight } => p.objective.push(ObjTerm::Linear {
                var: layout.rho[node],
                weight,
            }),
            UtilityKind::Log { weight } => p.objective.push(ObjTerm::Log1p {
                var: layout.rho[node],
                weight,
            }),
        }
        match model.options.cost {
            CostKind::Zero => {}
            CostKind::Quadratic { weight } => p.objective.push(ObjTerm::NegQuad {
                var: layout.p[node],
                half_weight: 0.5 * weight,
                center: model.options.p_min_dbw,
            }),
        }
    }

    for node in 0..n {
        // sum_i t_{n->i} <= 1
        p.add_row(
            RowLabel::RouteSum(node),
            ConstraintTerm::ExpSum {
                exps: t.out_neighbors[node]
                    .iter()
                    .map(|&i| ExpTerm {
                        coef: 1.0,
                        lin: vec![(layout.t[&(node, i)], 1.0)],
                        constant: 0.0,
                    })
                    .collect(),
                lin: vec![],
                constant: -1.0,
            },
        );
        // mu + nu <= 1 - eps
        p.add_row(
            RowLabel::MacSum(node),
            ConstraintTerm::ExpSum {
                exps: vec![
                    ExpTerm {
                        coef: 1.0,
                        lin: vec![(layout.mu[node], 1.0)],
                        constant: 0.0,
                    },
                    ExpTerm {
                        coef: 1.0,
                        lin: vec![(layout.nu[node], 1.0)],
                        constant: 0.0,
                    },
                ],
                lin: vec![],
                constant: -(1.0 - eps),
            },
        );
        // outgoing margins: supporting hyperplane of sigma sqrt(y) at the anchor
        for &i in &t.out_neighbors[node] {
            let st = model.stats.link(node, i);
            let ya = anchor.nodes[node].y_out[&i];
            let slope = st.std_db / (2.0 * ya.sqrt());
            p.add_row(
                RowLabel::MarginOut(node, i),
                ConstraintTerm::Affine {
                    lin: vec![(layout.y_out[&(node, i)], slope), (layout.p[node], -1.0)],
                    constant: 0.5 * st.std_db * ya.sqrt() - st.mean_offset_db + st.threshold_db,
                },
            );
        }
        // incoming margins, exact convex rows
        for &j in &t.in_neighbors[node] {
            let st = model.stats.link(j, node);
            p.add_row(
                RowLabel::MarginIn(j, node),
                ConstraintTerm::SqrtDeficit {
                    lin: vec![(layout.p[j], 1.0)],
                    constant: st.mean_offset_db - st.threshold_db,
                    sqrt_var: layout.y_in[&(j, node)],
                    sqrt_coef: st.std_db,
                },
            );
        }
        p.add_row(RowLabel::Flow(node), flow_surrogate_term(model, layout, anchor, node));
    }

    match budgets {
        InterferenceBudgets::Shared => {
            for (r, cap) in model.active_points() {
                let members = &t.pu_neighborhoods[r];
                if members.is_empty() {
                    continue;
                }
                let mut exps = Vec::new();
                for &node in members {
                    exps.extend(crate::model::interference_terms(
                        model,
                        layout.mu[node],
                        layout.p[node],
                        node,
                        r,
                    ));
                }
                p.add_scaled_row(
                    RowLabel::InterferenceSum(r),
                    ConstraintTerm::ExpSum {
                        exps,
                        lin: vec![],
                        constant: -cap,
                    },
                    cap,
                );
            }
        }
        InterferenceBudgets::PerNode(map) => {
            for (&(r, node), &budget) in map {
                let cap = s.pu_points[r].cap_w;
                p.add_scaled_row(
                    RowLabel::Interference(r, node),
                    interference_row(model, layout, node, r, budget),
                    cap,
                );
            }
        }
    }
    p
}

/// The surrogate flow row of one node: the convex exponential terms kept
/// exact, the two concave families replaced by their anchored tangents.
fn flow_surrogate_term(
    model: &NetworkModel,
    layout: &VarLayout,
    anchor: &Solution,
    node: usize,
) -> ConstraintTerm {
    let t = &model.topology;
    let mut exps = Vec::new();
    let mut lin: Vec<(usize, f64)> = vec![(layout.rho[node], 1.0)];
    let mut constant = 0.0;
    let add_lin = |lin: &mut Vec<(usize, f64)>, var: usize, coef: f64| {
        if let Some(entry) = lin.iter_mut().find(|(v, _)| *v == var) {
            entry.1 += coef;
        } else {
            lin.push((var, coef));
        }
    };

    for &i in &t.out_neighbors[node] {
        let le = link_exponent(layout, t, node, i);
        let yv = layout.y_out[&(node, i)];
        for (coef, yw) in [(1.0 / 12.0, -0.5), (0.25, -2.0 / 3.0)] {
            let mut l = le.lin.clone();
            l.push((yv, yw));
            exps.push(ExpTerm {
                coef,
                lin: l,
                constant: 0.0,
            });
        }
        // tangent of -exp(mu + t + sum nu) at the anchor
        let a = &anchor.nodes[node];
        let mut exponent = a.mu_ln + a.t_ln[&i];
        for &m in &t.interference_sets[&(node, i)] {
            exponent += anchor.nodes[m].nu_ln;
        }
        let e_a = exponent.exp();
        for &(var, coef) in &le.lin {
            add_lin(&mut lin, var, -e_a * coef);
        }
        constant += -e_a * (1.0 - exponent);
    }

    for &j in &t.in_neighbors[node] {
        let le = link_exponent(layout, t, j, node);
        exps.push(ExpTerm {
            coef: 1.0,
            lin: le.lin.clone(),
            constant: 0.0,
        });
        // tangent of -alpha1 exp(mu_j + t_{j->n} + sum nu - alpha2 y_in)
        let aj = &anchor.nodes[j];
        let mut exponent = aj.mu_ln + aj.t_ln[&node];
        for &m in &t.interference_sets[&(j, node)] {
            exponent += anchor.nodes[m].nu_ln;
        }
        let y_a = anchor.nodes[node].y_in[&j];
        let e_a = ALPHA1 * (exponent - ALPHA2 * y_a).exp();
        for &(var, coef) in &le.lin {
            add_lin(&mut lin, var, -e_a * coef);
        }
        add_lin(&mut lin, layout.y_in[&(j, node)], e_a * ALPHA2);
        constant += -e_a * (1.0 - (exponent - ALPHA2 * y_a));
    }

    ConstraintTerm::ExpSum { exps, lin, constant }
}

/// Anchor extrapolation along the last step, clamped into the variable
/// domains.
fn extrapolate_anchor(model: &NetworkModel, prev: &Solution, current: &Solution, theta: f64) -> Solution {
    let opts = &model.options;
    let mut out = current.clone();
    for (node, nv) in out.nodes.iter_mut().enumerate() {
        let p = &prev.nodes[node];
        let c = &current.nodes[node];
        let push = |cur: f64, old: f64, lo: f64, hi: f64| (cur + theta * (cur - old)).clamp(lo, hi);
        nv.p_dbw = push(c.p_dbw, p.p_dbw, opts.p_min_dbw, model.scenario.p_max_dbw(node));
        nv.mu_ln = push(c.mu_ln, p.mu_ln, opts.ln_floor, 0.0);
        nv.nu_ln = push(c.nu_ln, p.nu_ln, opts.ln_floor, 0.0);
        nv.rho = push(c.rho, p.rho, 0.0, 1.0);
        for (to, v) in nv.t_ln.iter_mut() {
            *v = push(c.t_ln[to], p.t_ln[to], opts.ln_floor, 0.0);
        }
        for (to, v) in nv.y_out.iter_mut() {
            *v = push(c.y_out[to], p.y_out[to], Y_FLOOR, opts.y_max);
        }
        for (from, v) in nv.y_in.iter_mut() {
            *v = push(c.y_in[from], p.y_in[from], Y_FLOOR, opts.y_max);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ScaIterRecord {
    pub iter: usize,
    pub objective: f64,
    /// Worst original-constraint value at the iterate (<= 0 when feasible).
    pub max_violation: f64,
    pub max_violation_row: String,
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

#[derive(Debug)]
pub struct ScaOutcome {
    pub solution: Solution,
    pub trace: Vec<ScaIterRecord>,
    pub converged: bool,
    pub final_kkt: KktResidual,
    /// Subproblem and report of the last iteration, for multiplier and
    /// certificate consumers.
    pub final_program: ConvexProgram,
    pub final_report: SolveReport,
}

/// Drive the surrogate loop from a feasible start under fixed budgets.
///
/// Stops when the objective improves by less than `model.options.sca_tol`
/// or after `sca_max_iters` subproblems. Every iterate is verified against
/// the exact constraint system; the objective never decreases.
pub fn sca_iterate(
    model: &NetworkModel,
    layout: &VarLayout,
    start: &Solution,
    budgets: &InterferenceBudgets,
) -> Result<ScaOutcome, ScaError> {
    let opts = SolveOptions {
        tol: model.options.solver_tol,
        ..SolveOptions::default()
    };
    let mut current = start.clone();
    let mut previous: Option<Solution> = None;
    let mut trace = Vec::new();
    let mut prev_obj = start.objective(model);
    let mut converged = false;
    let mut last: Option<(ConvexProgram, SolveReport)> = None;

    for iter in 1..=model.options.sca_max_iters {
        // over-relaxed anchoring with an explicit safeguard: extrapolating
        // the anchor along the last step keeps every guarantee as long as
        // the current iterate stays feasible for the extrapolated
        // surrogate (checked, with plain anchoring as fallback)
        let mut program = build_surrogate(model, layout, &current, budgets);
        if let Some(prev) = &previous {
            let candidate_anchor = extrapolate_anchor(model, prev, &current, 1.0);
            let extr = build_surrogate(model, layout, &candidate_anchor, budgets);
            let x = layout.pack(&current);
            // micro-violations at the warm point are absorbed by the
            // kernel's relaxation path; anything larger falls back to
            // plain anchoring
            if extr.rows.iter().all(|row| row.term.value(&x) / row.scale <= 1e-10) {
                program = extr;
            }
        }
        let report = solve(&program, &layout.pack(&current), &opts)
            .map_err(|source| ScaError::Subproblem { iter, source })?;
        let candidate = layout.unpack(&model.topology, &report.x);
        let (row, violation) = max_violation(model, &candidate);
        if violation > 1e-8 {
            return Err(ScaError::FeasibilityLost { row, value: violation });
        }
        let objective = candidate.objective(model);
        trace.push(ScaIterRecord {
            iter,
            objective,
            max_violation: violation,
            max_violation_row: row,
            kkt_residual: report.kkt.max(),
            newton_steps: report.newton_steps,
        });
        previous = Some(std::mem::replace(&mut current, candidate));
        let improved = objective - prev_obj;
        prev_obj = objective;
        last = Some((program, report));
        if improved.abs() < model.options.sca_tol {
            converged = true;
            break;
        }
    }

    let (final_program, final_report) = last.expect("at least one iteration");
    let final_kkt = check_kkt(&final_program, &final_report.x, &final_report.lambda);
    Ok(ScaOutcome {
        solution: current,
        trace,
        converged,
        final_kkt,
        final_program,
        final_report,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{incoming_retention, outgoing_loss, ModelOptions};
    use nalgebra::DVector;
    use crate::scenario::{Reach, Scenario};

    pub(crate) fn single_link_model() -> NetworkModel {
        let s = Scenario::from_toml_str(
            r#"
schema = 1
name = "single"

[propagation]
pathloss_exponent = 3.5
shadow_std_db = 6.0
nakagami_m = 1.0

[defaults]
noise_power_w = 1e-8
p_max_dbw = 0.0
sinr_threshold_db = -10.0

[[nodes]]
id = 1
pos = [0.0, 0.0]

[sink]
id = 2
pos = [100.0, 0.0]
"#,
        )
        .unwrap();
        NetworkModel::new(s, Reach::Auto, ModelOptions::default()).unwrap()
    }

    pub(crate) fn two_node_model() -> NetworkModel {
        let s = Scenario::from_toml_str(
            r#"
schema = 1
name = "pair"

[propagation]
pathloss_exponent = 3.5
shadow_std_db = 6.0
nakagami_m = 1.0

[defaults]
noise_power_w = 1e-8
p_max_dbw = 0.0
sinr_threshold_db = -10.0

[[nodes]]
id = 1
pos = [0.0, 60.0]

[[nodes]]
id = 2
pos = [0.0, -60.0]

[sink]
id = 3
pos = [100.0, 0.0]
"#,
        )
        .unwrap();
        NetworkModel::new(s, Reach::Auto, ModelOptions::default()).unwrap()
    }

    #[test]
    fn feasible_start_has_strict_slack() {
        for model in [single_link_model(), two_node_model()] {
            let sol = find_feasible_start(&model).unwrap();
            let (row, v) = max_violation(&model, &sol);
            assert!(v < 0.0, "{row} violated: {v}");
            for nv in &sol.nodes {
                assert!(nv.rho > 0.0);
            }
        }
    }

    #[test]
    fn surrogate_matches_exact_at_anchor() {
        let model = two_node_model();
        let layout = VarLayout::new(&model.topology);
        let anchor = find_feasible_start(&model).unwrap();
        let program = build_surrogate(&model, &layout, &anchor, &InterferenceBudgets::Shared);
        let x = layout.pack(&anchor);
        for node in 0..model.n_nodes() {
            let row = program
                .rows
                .iter()
                .find(|r| r.label == RowLabel::Flow(node))
                .unwrap();
            let surrogate = row.term.value(&x);
            let exact = flow_value_exact(&model, &anchor, node);
            assert!(
                (surrogate - exact).abs() < 1e-10,
                "node {node}: surrogate {surrogate} exact {exact}"
            );
        }
    }

    #[test]
    fn surrogate_gradient_matches_exact_at_anchor() {
        let model = two_node_model();
        let layout = VarLayout::new(&model.topology);
        let anchor = find_feasible_start(&model).unwrap();
        let program = build_surrogate(&model, &layout, &anchor, &InterferenceBudgets::Shared);
        let x = layout.pack(&anchor);
        let h = 1e-6;
        for node in 0..model.n_nodes() {
            let row = program
                .rows
                .iter()
                .find(|r| r.label == RowLabel::Flow(node))
                .unwrap();
            let mut grad = DVector::zeros(layout.n_vars);
            row.term.add_gradient(&x, 1.0, &mut grad);
            for v in 0..layout.n_vars {
                let mut xp = x.clone();
                xp[v] += h;
                let mut xm = x.clone();
                xm[v] -= h;
                let fp = flow_value_exact(&model, &layout.unpack(&model.topology, &xp), node);
                let fm = flow_value_exact(&model, &layout.unpack(&model.topology, &xm), node);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - grad[v]).abs() < 1e-5 * fd.abs().max(1.0),
                    "node {node} var {v}: fd {fd} analytic {}",
                    grad[v]
                );
            }
        }
    }

    #[test]
    fn surrogate_majorizes_exact_flow() {
        use rand::Rng;
        use rand::SeedableRng;
        let model = two_node_model();
        let layout = VarLayout::new(&model.topology);
        let anchor = find_feasible_start(&model).unwrap();
        let program = build_surrogate(&model, &layout, &anchor, &InterferenceBudgets::Shared);
        let xa = layout.pack(&anchor);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut x = xa.clone();
            for v in 0..x.len() {
                let lo = program.vars[v].lower;
                let hi = program.vars[v].upper;
                let span = (hi - lo).min(4.0);
                x[v] = (x[v] + rng.random_range(-0.5..0.5) * span).clamp(lo + 1e-6, hi - 1e-6);
            }
            let sol = layout.unpack(&model.topology, &x);
            for node in 0..model.n_nodes() {
                let row = program
                    .rows
                    .iter()
                    .find(|r| r.label == RowLabel::Flow(node))
                    .unwrap();
                let surrogate = row.term.value(&x);
                let exact = flow_value_exact(&model, &sol, node);
                assert!(
                    exact <= surrogate + 1e-9,
                    "majorization violated at node {node}: exact {exact} > surrogate {surrogate}"
                );
            }
        }
    }

    #[test]
    fn single_link_sca_matches_grid_oracle() {
        let model = single_link_model();
        let layout = VarLayout::new(&model.topology);
        let start = find_feasible_start(&model).unwrap();
        let out = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
        assert!(out.converged);
        // objective nondecreasing along the trace
        for w in out.trace.windows(2) {
            assert!(w[1].objective >= w[0].objective - 1e-9);
        }

        // independent oracle: exhaustive search over (mu, P) of the
        // bound-model rate mu * t * silence * (1 - loss(x^2)) with t = 1
        let st = model.stats.link(0, 1);
        let eps = model.epsilon();
        let mut best = 0.0f64;
        for mu_step in 1..4000 {
            let mu_bar = mu_step as f64 / 4000.0 * (1.0 - eps);
            for p_step in 0..200 {
                let p = -20.0 + p_step as f64 * 0.1;
                if p > model.scenario.p_max_dbw(0) {
                    break;
                }
                let x = (p + st.mean_offset_db - st.threshold_db) / st.std_db;
                if x * x < Y_FLOOR {
                    continue;
                }
                let rate = mu_bar * (1.0 - outgoing_loss(x * x));
                best = best.max(rate);
            }
        }
        let got = out.solution.objective(&model);
        assert!(
            (got - best).abs() < 1e-3,
            "sca {got} vs grid oracle {best}"
        );
        // the closed-form optimum: everything at its ceiling
        let nv = &out.solution.nodes[0];
        assert!((nv.t(1) - 1.0).abs() < 1e-5, "t = {}", nv.t(1));
        assert!((nv.p_dbw - 0.0).abs() < 1e-4, "P = {}", nv.p_dbw);
        assert!((nv.mu_ln.exp() - (1.0 - eps)).abs() < 1e-4);
        assert!(out.final_kkt.max() < 1e-5, "{:?}", out.final_kkt);
    }

    #[test]
    fn warm_started_sca_terminates_immediately() {
        let model = single_link_model();
        let layout = VarLayout::new(&model.topology);
        let start = find_feasible_start(&model).unwrap();
        let first = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
        let again = sca_iterate(&model, &layout, &first.solution, &InterferenceBudgets::Shared).unwrap();
        assert!(again.converged);
        assert_eq!(again.trace.len(), 1, "already-optimal start should stop at once");
        assert!((again.solution.objective(&model) - first.solution.objective(&model)).abs() < 1e-6);
    }

    #[test]
    fn conservatism_direction_holds_at_iterates() {
        let model = two_node_model();
        let layout = VarLayout::new(&model.topology);
        let start = find_feasible_start(&model).unwrap();
        let out = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
        for sol in [&start, &out.solution] {
            let rel = crate::model::link_reliabilities(&model, sol);
            for ((from, to), lr) in rel {
                assert!(
                    lr.lower_model <= lr.exact_q + 1e-12,
                    "outgoing bound not conservative on {from}->{to}"
                );
                if to != model.topology.sink {
                    assert!(
                        lr.exact_q <= lr.upper_model + 1e-12,
                        "incoming bound not conservative on {from}->{to}"
                    );
                }
            }
        }
        // with a nondecreasing utility the routing budget saturates
        for nv in &out.solution.nodes {
            let sum: f64 = nv.t_ln.values().map(|v| v.exp()).sum();
            assert!(sum > 1.0 - 1e-4, "route sum {sum} did not saturate");
        }
        let retention = incoming_retention(2.0);
        assert!(retention < 1.0);
    }

    #[test]
    fn node_relabeling_leaves_solution_equivariant() {
        // two symmetric nodes: swapping labels swaps the solution
        let model = two_node_model();
        let layout = VarLayout::new(&model.topology);
        let start = find_feasible_start(&model).unwrap();
        let out = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
        let a = &out.solution.nodes[0];
        let b = &out.solution.nodes[1];
        assert!((a.rho - b.rho).abs() < 1e-5, "{} vs {}", a.rho, b.rho);
        assert!((a.p_dbw - b.p_dbw).abs() < 1e-4);
        assert!((a.mu_ln - b.mu_ln).abs() < 1e-4);
    }
}
