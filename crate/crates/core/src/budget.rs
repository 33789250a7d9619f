//! Primal decomposition of the PU interference budgets: a per-point master
//! problem re-allocates each cap across its neighborhood using the optimal
//! multipliers of the per-node interference rows as subgradients, with a
//! Euclidean projection keeping every intermediate allocation inside the
//! cap. Wrapped around the surrogate loop this yields the full online
//! algorithm: interference stays below every cap at every step of every
//! loop, so intermediate iterates are always safe to deploy.
//!
//! Budgets are normalized by their caps inside the master update so that a
//! unit step size is meaningful across instances; multipliers are scaled
//! accordingly (`d objective / d normalized-budget = u * cap`).

use std::collections::BTreeMap;

use crate::admm::{run_admm, AdmmError, AdmmParams};
use crate::convex::{check_kkt, solve, KktResidual, RowLabel, SolveError, SolveOptions};
use crate::model::{max_violation, NetworkModel, Solution, VarLayout};
use crate::sca::{build_surrogate, find_feasible_start, InterferenceBudgets, ScaError, ScaIterRecord};

#[derive(Debug, thiserror::Error)]
pub enum BudgetError {
    #[error(transparent)]
    Sca(#[from] ScaError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error("inner solve failed at (ell={ell}, k={k}): {source}")]
    Inner {
        ell: usize,
        k: usize,
        #[source]
        source: SolveError,
    },
    #[error("negative interference multiplier {value:.3e} at point {point}, node {node}")]
    NegativeMultiplier { point: usize, node: usize, value: f64 },
    #[error("no head-node cycle: protection point {point} has an empty or disconnected neighborhood")]
    HeadNode { point: usize },
    #[error("interference safety violated at point {point}: {realized:.3e} W > {cap:.3e} W")]
    SafetyViolated { point: usize, realized: f64, cap: f64 },
}

/// Euclidean projection of `v` onto `{x >= 0, sum x <= cap}`.
///
/// Finite algorithm: clip at zero; if the clipped sum exceeds the cap,
/// project onto the simplex face by the sorted-threshold rule.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Vec<f64> {
    assert!(cap > 0.0, "cap must be positive");
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    // threshold for the active face: x_i = max(v_i - theta, 0),
    // sum_i max(v_i - theta, 0) = cap
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &vk) in sorted.iter().enumerate() {
        acc += vk;
        let candidate = (acc - cap) / (k + 1) as f64;
        if k + 1 == sorted.len() || sorted[k + 1] <= candidate {
            theta = candidate;
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Per-point budget allocation (watts) plus the head node that performs
/// each point's projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetAllocation {
    /// `(point, node) ->` allocated interference budget, watts.
    pub shares: BTreeMap<(usize, usize), f64>,
    /// `point -> head node` (lowest member id).
    pub head_nodes: BTreeMap<usize, usize>,
    /// Irreducible per-node interference: the epsilon share of the
    /// physical transmit probability at the node's margin-floor power.
    /// Shares never drop below these, else the member's row turns
    /// unsatisfiable.
    pub floors: BTreeMap<(usize, usize), f64>,
}

/// Smallest average interference node `n` can present to point `r` under
/// the surrogate anchored at `anchor`: the stability shift keeps it
/// transmitting with probability epsilon, and the anchored outgoing-margin
/// tangents keep its power above a per-anchor floor (the tangent majorizes
/// the square root, so its power floor sits above the exact one).
fn irreducible_interference(model: &NetworkModel, anchor: &Solution, r: usize, n: usize) -> f64 {
    let t = &model.topology;
    let p_req = t.out_neighbors[n]
        .iter()
        .map(|&i| {
            let st = model.stats.link(n, i);
            let ya = anchor.nodes[n].y_out[&i];
            let tangent_at_floor =
                (crate::model::Y_FLOOR - ya) / (2.0 * ya.sqrt()) + ya.sqrt();
            st.threshold_db - st.mean_offset_db + st.std_db * tangent_at_floor
        })
        .fold(model.options.p_min_dbw, f64::max)
        .min(model.scenario.p_max_dbw(n));
    let mu_min = model.options.ln_floor.exp() + model.epsilon();
    mu_min * model.stats.pu_path(n, r).mean_gain_times_power_w(p_req)
}

/// Share floors for the current anchor: above each member's irreducible
/// interference, never below a small fraction of the cap (so a starved
/// member's feasible band stays resolvable), and never below half the
/// member's anchor-realized interference — the surrogate's tangent terms
/// only tolerate moderate service drops away from their anchor, so a
/// budget far below the realized value would make the subproblem
/// infeasible rather than frugal.
fn allocation_floors(model: &NetworkModel, anchor: &Solution) -> BTreeMap<(usize, usize), f64> {
    let eps = model.epsilon();
    let mut floors = BTreeMap::new();
    for (r, cap) in model.active_points() {
        for &n in &model.topology.pu_neighborhoods[r] {
            let nv = &anchor.nodes[n];
            let realized = nv.mu_phys(eps) * model.stats.pu_path(n, r).mean_gain_times_power_w(nv.p_dbw);
            let floor = (2.0 * irreducible_interference(model, anchor, r, n))
                .max(1e-3 * cap)
                .max(0.7 * realized);
            floors.insert((r, n), floor);
        }
    }
    floors
}

impl BudgetAllocation {
    /// Start from the realized per-node interference of `sol`, scaled so
    /// each cap is exactly partitioned; every node's budget covers its
    /// current contribution whenever the point starts inside its cap.
    pub fn seeded(model: &NetworkModel, sol: &Solution) -> Result<Self, BudgetError> {
        let eps = model.epsilon();
        let mut shares = BTreeMap::new();
        let mut head_nodes = BTreeMap::new();
        for (r, cap) in model.active_points() {
            let members = &model.topology.pu_neighborhoods[r];
            if members.is_empty() {
                continue;
            }
            head_nodes.insert(r, members[0]);
            let contributions: Vec<f64> = members
                .iter()
                .map(|&n| {
                    let nv = &sol.nodes[n];
                    nv.mu_phys(eps) * model.stats.pu_path(n, r).mean_gain_times_power_w(nv.p_dbw)
                })
                .collect();
            let total: f64 = contributions.iter().sum();
            let floors = allocation_floors(model, sol);
            let floor_sum: f64 = members.iter().map(|&n| floors[&(r, n)]).sum();
            let headroom = cap - floor_sum;
            for (&n, &c) in members.iter().zip(&contributions) {
                let w = if total > 0.0 { c / total } else { 1.0 / members.len() as f64 };
                shares.insert((r, n), floors[&(r, n)] + headroom * w);
            }
        }
        Ok(BudgetAllocation {
            shares,
            head_nodes,
            floors: allocation_floors(model, sol),
        })
    }

    /// Clamp shares up to freshly-computed floors (the anchored power
    /// floors move with the surrogate) and restore the cap by shaving the
    /// above-floor headroom proportionally.
    pub fn refresh_floors(&mut self, model: &NetworkModel, anchor: &Solution) {
        self.floors = allocation_floors(model, anchor);
        for (r, cap) in model.active_points() {
            let members = &model.topology.pu_neighborhoods[r];
            if members.is_empty() {
                continue;
            }
            for &n in members {
                let fl = self.floors[&(r, n)];
                let share = self.shares.get_mut(&(r, n)).expect("member share");
                if *share < fl {
                    *share = fl;
                }
            }
            let total: f64 = members.iter().map(|&n| self.shares[&(r, n)]).sum();
            if total > cap {
                let floor_sum: f64 = members.iter().map(|&n| self.floors[&(r, n)]).sum();
                let scale = (cap - floor_sum) / (total - floor_sum);
                for &n in members {
                    let fl = self.floors[&(r, n)];
                    let share = self.shares.get_mut(&(r, n)).expect("member share");
                    *share = fl + (*share - fl) * scale;
                }
            }
        }
    }

    /// Remark-4 style fixed split: shares proportional to the mean channel
    /// gain from each member to the point (near nodes get larger slices).
    pub fn distance_proportional(model: &NetworkModel) -> Self {
        let mut shares = BTreeMap::new();
        let mut head_nodes = BTreeMap::new();
        for (r, cap) in model.active_points() {
            let members = &model.topology.pu_neighborhoods[r];
            if members.is_empty() {
                continue;
            }
            head_nodes.insert(r, members[0]);
            let weights: Vec<f64> = members.iter().map(|&n| model.interference_gain(n, r)).collect();
            let total: f64 = weights.iter().sum();
            for (&n, &w) in members.iter().zip(&weights) {
                shares.insert((r, n), cap * w / total);
            }
        }
        let mut alloc = BudgetAllocation {
            shares,
            head_nodes,
            floors: BTreeMap::new(),
        };
        // distance splits are computed before any anchor exists; floor
        // them against a uniform-margin proxy so no member starves
        alloc.floors = model
            .active_points()
            .iter()
            .flat_map(|&(r, cap)| {
                model.topology.pu_neighborhoods[r]
                    .iter()
                    .map(move |&n| ((r, n), 1e-3 * cap))
            })
            .collect();
        alloc
    }

    pub fn budgets(&self) -> InterferenceBudgets {
        InterferenceBudgets::PerNode(self.shares.clone())
    }

    /// Largest relative change against another allocation.
    pub fn max_relative_change(&self, other: &BudgetAllocation, caps: &BTreeMap<usize, f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for (key, &a) in &self.shares {
            let b = other.shares.get(key).copied().unwrap_or(0.0);
            let cap = caps[&key.0];
            worst = worst.max((a - b).abs() / cap);
        }
        worst
    }
}

/// One master update: per point, move the (cap-normalized) shares along
/// the multiplier subgradient with step `xi` and project back onto the
/// capped simplex above the per-member lower bounds.
///
/// The lower bound of a member is the larger of its irreducible floor and
/// half its current share: the surrogate a subproblem is built on is only
/// accurate near its anchor, so budgets shrink at most geometrically and
/// every intermediate program keeps a reachable interior.
///
/// `multipliers` are the natural-form row multipliers (per watt); negative
/// entries indicate a solver fault and are rejected.
pub fn subgradient_step(
    model: &NetworkModel,
    alloc: &BudgetAllocation,
    multipliers: &BTreeMap<(usize, usize), f64>,
    xi: f64,
) -> Result<BudgetAllocation, BudgetError> {
    let mut next = alloc.clone();
    for (r, cap) in model.active_points() {
        let members = &model.topology.pu_neighborhoods[r];
        if members.is_empty() {
            continue;
        }
        let mut lower_sum = 0.0;
        let mut lowers: Vec<f64> = Vec::with_capacity(members.len());
        let mut grads: Vec<f64> = Vec::with_capacity(members.len());
        for &n in members {
            let u = multipliers.get(&(r, n)).copied().unwrap_or(0.0);
            if u < -1e-9 {
                return Err(BudgetError::NegativeMultiplier {
                    point: r,
                    node: n,
                    value: u,
                });
            }
            let lo = (alloc.floors[&(r, n)].max(0.7 * alloc.shares[&(r, n)])) / cap;
            lower_sum += lo;
            lowers.push(lo);
            grads.push(u.max(0.0) * cap);
        }
        // normalize the subgradient so a unit step moves the most-starved
        // member by at most a fifth of the cap
        let gmax = grads.iter().cloned().fold(0.0, f64::max);
        let scale = if gmax > 0.0 { 0.2 / gmax } else { 0.0 };
        let mut phi: Vec<f64> = Vec::with_capacity(members.len());
        for ((&n, &g), &lo) in members.iter().zip(&grads).zip(&lowers) {
            phi.push(alloc.shares[&(r, n)] / cap + xi * scale * g - lo);
        }
        let projected = project_capped_simplex(&phi, (1.0 - lower_sum).max(0.0));
        for ((&n, &p), &lo) in members.iter().zip(&projected).zip(&lowers) {
            next.shares.insert((r, n), (p + lo) * cap);
        }
    }
    Ok(next)
}

/// Which solver handles each inner subproblem.
#[derive(Debug, Clone)]
pub enum InnerSolver {
    Centralized,
    Admm(AdmmParams),
}

#[derive(Debug, Clone)]
pub struct FullRunConfig {
    pub inner_solver: InnerSolver,
    /// Maximum primal-decomposition steps per surrogate iteration.
    pub inner_max: usize,
    /// Stop the inner loop when shares move less than this fraction of
    /// their cap.
    pub budget_tol: f64,
    /// Initial subgradient step; the schedule is `xi0 / k`.
    pub xi0: f64,
    /// Remark-4 mode: fix the allocation a priori and skip the master.
    pub fixed_budgets: bool,
}

impl Default for FullRunConfig {
    fn default() -> Self {
        FullRunConfig {
            inner_solver: InnerSolver::Centralized,
            inner_max: 12,
            budget_tol: 1e-3,
            xi0: 1.0,
            fixed_budgets: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetRecord {
    pub ell: usize,
    pub k: usize,
    pub point: usize,
    pub node: usize,
    pub budget_w: f64,
    /// Realized average interference at the point after the solve, watts.
    pub realized_point_w: f64,
    pub cap_w: f64,
}

#[derive(Debug)]
pub struct FullOutcome {
    pub solution: Solution,
    pub allocation: BudgetAllocation,
    pub sca_trace: Vec<ScaIterRecord>,
    pub budget_trace: Vec<BudgetRecord>,
    /// Objective of each inner solve, in (ell, k) order; the master value
    /// sequence.
    pub inner_objectives: Vec<(usize, usize, f64)>,
    pub converged: bool,
    /// Last surrogate iteration whose allocation moved by >= 1% of a cap;
    /// 0 when budgets never moved that much.
    pub budget_active_until: usize,
    pub final_kkt: KktResidual,
    /// ADMM rounds used per inner solve (empty in centralized mode).
    pub admm_rounds: Vec<usize>,
}

/// Full nested run: surrogate iterations outside, primal-decomposition
/// steps inside, each inner problem solved centrally or by ADMM.
///
/// Every (ell, k) iterate satisfies all original constraints, including
/// every interference cap; a violation aborts with an error.
pub fn run_full(model: &NetworkModel, config: &FullRunConfig) -> Result<FullOutcome, BudgetError> {
    let layout = VarLayout::new(&model.topology);
    let start = find_feasible_start(model)?;
    let caps: BTreeMap<usize, f64> = model.active_points().into_iter().collect();
    let mut alloc = if config.fixed_budgets {
        BudgetAllocation::distance_proportional(model)
    } else {
        BudgetAllocation::seeded(model, &start)?
    };

    let solver_opts = SolveOptions {
        tol: model.options.solver_tol,
        ..SolveOptions::default()
    };
    let mut current = start;
    let mut prev_obj = f64::NEG_INFINITY;
    let mut sca_trace = Vec::new();
    let mut budget_trace = Vec::new();
    let mut inner_objectives = Vec::new();
    let mut admm_rounds = Vec::new();
    let mut converged = false;
    let mut budget_active_until = 0usize;
    let mut k_total = 0usize;
    let mut final_kkt = KktResidual {
        stationarity: f64::INFINITY,
        feasibility: f64::INFINITY,
        complementarity: f64::INFINITY,
    };

    for ell in 1..=model.options.sca_max_iters {
        let anchor = current.clone();
        if !config.fixed_budgets {
            alloc.refresh_floors(model, &anchor);
        }
        let inner_steps = if config.fixed_budgets { 1 } else { config.inner_max };
        let mut k = 1usize;
        let mut last_report_kkt = None;
        // best-iterate tracking: subgradient steps are not monotone, so
        // the next surrogate anchors at the best allocation seen
        let mut best: Option<(f64, Solution, BudgetAllocation)> = None;
        // a too-aggressive reallocation gets retried with halved steps
        let mut backoff: Option<(BudgetAllocation, BTreeMap<(usize, usize), f64>, f64, u32)> = None;
        while k <= inner_steps {
            let budgets = alloc.budgets();
            let attempt: Result<_, SolveError> = (|| {
                let warm = repair_for_budgets(model, &layout, &anchor, &alloc, &current)?;
                solve_inner(model, &layout, &anchor, &budgets, &warm, config, &solver_opts)
            })();
            let (candidate, multipliers, kkt, rounds) = match attempt {
                Ok(v) => v,
                Err(source) => {
                    if let Some((prev_alloc, mult, xi_used, halvings)) = backoff.take() {
                        if halvings < 5 {
                            let xi_retry = xi_used * 0.5f64.powi(halvings as i32 + 1);
                            alloc = subgradient_step(model, &prev_alloc, &mult, xi_retry)?;
                            backoff = Some((prev_alloc, mult, xi_used, halvings + 1));
                            continue;
                        }
                    }
                    if best.is_some() {
                        // keep the best allocation of this surrogate
                        // iteration rather than failing the run
                        break;
                    }
                    return Err(BudgetError::Inner { ell, k, source });
                }
            };
            if let Some(r) = rounds {
                admm_rounds.push(r);
            }
            // online safety: every cap must hold at every iterate
            for (r, cap) in model.active_points() {
                let realized = candidate.realized_interference(model, r);
                if realized > cap * (1.0 + 1e-9) {
                    return Err(BudgetError::SafetyViolated {
                        point: r,
                        realized,
                        cap,
                    });
                }
                for &n in &model.topology.pu_neighborhoods[r] {
                    budget_trace.push(BudgetRecord {
                        ell,
                        k,
                        point: r,
                        node: n,
                        budget_w: alloc.shares[&(r, n)],
                        realized_point_w: realized,
                        cap_w: cap,
                    });
                }
            }
            let obj_k = candidate.objective(model);
            inner_objectives.push((ell, k, obj_k));
            if best.as_ref().map_or(true, |(b, _, _)| obj_k > *b) {
                best = Some((obj_k, candidate.clone(), alloc.clone()));
            }
            current = candidate;
            last_report_kkt = Some(kkt);

            if config.fixed_budgets || alloc.shares.is_empty() {
                break;
            }
            // diminishing schedule over the whole run, not per surrogate
            // iteration: reallocations settle as the outer loop converges
            k_total += 1;
            let xi = config.xi0 / k_total as f64;
            let next = subgradient_step(model, &alloc, &multipliers, xi)?;
            let moved = next.max_relative_change(&alloc, &caps);
            if moved >= 0.01 {
                budget_active_until = ell;
            }
            backoff = Some((alloc.clone(), multipliers.clone(), xi, 0));
            alloc = next;
            if moved < config.budget_tol {
                break;
            }
            k += 1;
        }
        if let Some((_, sol, al)) = best {
            current = sol;
            alloc = al;
        }

        let objective = current.objective(model);
        let (row, violation) = max_violation(model, &current);
        if violation > 1e-8 {
            return Err(BudgetError::Inner {
                ell,
                k,
                source: SolveError::Numerical(format!("iterate violates {row} by {violation:.3e}")),
            });
        }
        if let Some(kkt) = last_report_kkt {
            final_kkt = kkt;
        }
        sca_trace.push(ScaIterRecord {
            iter: ell,
            objective,
            max_violation: violation,
            max_violation_row: row,
            kkt_residual: final_kkt.feasibility,
            newton_steps: 0,
        });
        if (objective - prev_obj).abs() < model.options.sca_tol {
            converged = true;
            break;
        }
        prev_obj = objective;
    }

    Ok(FullOutcome {
        solution: current,
        allocation: alloc,
        sca_trace,
        budget_trace,
        inner_objectives,
        converged,
        budget_active_until,
        final_kkt,
        admm_rounds,
    })
}

/// One inner solve (centralized or distributed) from a repaired warm
/// start; returns the candidate solution, the interference-row
/// multipliers, a residual report, and the ADMM round count if any.
fn solve_inner(
    model: &NetworkModel,
    layout: &VarLayout,
    anchor: &Solution,
    budgets: &InterferenceBudgets,
    warm: &Solution,
    config: &FullRunConfig,
    solver_opts: &SolveOptions,
) -> Result<(Solution, BTreeMap<(usize, usize), f64>, KktResidual, Option<usize>), SolveError> {
    match &config.inner_solver {
        InnerSolver::Centralized => {
            let program = build_surrogate(model, layout, anchor, budgets);
            let report = solve(&program, &layout.pack(warm), solver_opts)?;
            let kkt = check_kkt(&program, &report.x, &report.lambda);
            let mut mult = BTreeMap::new();
            for (r, _) in model.active_points() {
                for &n in &model.topology.pu_neighborhoods[r] {
                    if let Some(u) = report.multiplier(&RowLabel::Interference(r, n)) {
                        mult.insert((r, n), u);
                    }
                }
            }
            Ok((layout.unpack(&model.topology, &report.x), mult, kkt, None))
        }
        InnerSolver::Admm(params) => {
            let map = match budgets {
                InterferenceBudgets::PerNode(m) => m.clone(),
                InterferenceBudgets::Shared => unreachable!("decomposed runs always partition"),
            };
            let out = run_admm(model, anchor, map, warm, params.clone())
                .map_err(|e| SolveError::Numerical(e.to_string()))?;
            let kkt = KktResidual {
                stationarity: f64::NAN,
                feasibility: max_violation(model, &out.solution).1.max(0.0),
                complementarity: f64::NAN,
            };
            let mult = out.interference_multipliers.clone();
            let rounds = out.rounds;
            Ok((out.solution, mult, kkt, Some(rounds)))
        }
    }
}

/// Pull a warm iterate back inside freshly-shrunk per-node interference
/// budgets without a phase-I solve.
///
/// Interference rows depend on one node's `(mu, P)` alone, so a violated
/// row is repaired by lowering that node's transmit probability to fit 95%
/// of its budget. That weakens only the node's own outgoing service, which
/// its surrogate flow row absorbs by shedding exogenous rate and, when the
/// rate floor is reached, by scaling back the routing of its in-neighbors.
/// Damping is bounded: the surrogate's tangents only model moderate moves
/// away from their anchor, and budget floors guarantee the required moves
/// stay inside that range.
fn repair_for_budgets(
    model: &NetworkModel,
    layout: &VarLayout,
    anchor: &Solution,
    alloc: &BudgetAllocation,
    warm: &Solution,
) -> Result<Solution, SolveError> {
    let t = &model.topology;
    let eps = model.epsilon();
    let ln_floor = model.options.ln_floor;
    let mut sol = warm.clone();

    // fit transmit probabilities to the new budgets
    for (&(r, n), &budget) in &alloc.shares {
        let nv = &mut sol.nodes[n];
        let gain = model.stats.pu_path(n, r).mean_gain_times_power_w(nv.p_dbw);
        let fit = 0.98 * budget / gain - eps;
        if fit <= ln_floor.exp() {
            return Err(SolveError::Infeasible {
                row: format!("interference[pt{r},node{n}]"),
                violation: budget,
            });
        }
        nv.mu_ln = nv.mu_ln.min(fit.ln());
    }

    // settle the surrogate flow rows by shedding rate, then incoming mass
    let program = build_surrogate(model, &layout.clone(), anchor, &alloc.budgets());
    let mut damped: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for _ in 0..24 {
        let x = layout.pack(&sol);
        let mut worst_ok = true;
        for row in &program.rows {
            let crate::convex::RowLabel::Flow(node) = row.label else {
                continue;
            };
            let v = row.term.value(&x);
            if v <= -1e-12 {
                continue;
            }
            worst_ok = false;
            let nv = &mut sol.nodes[node];
            let shed = (v + 1e-9).min(nv.rho);
            nv.rho -= shed;
            if nv.rho <= 1e-12 {
                nv.rho = 1e-12;
                // still oversubscribed: damp what the in-neighbors send
                // here, staying inside the tangents' trusted range
                for &j in &t.in_neighbors[node] {
                    let total = damped.entry((j, node)).or_insert(0.0);
                    if *total >= 0.7 {
                        continue;
                    }
                    *total += 0.175;
                    let tv = sol.nodes[j].t_ln.get_mut(&node).expect("in-link");
                    *tv = (*tv - 0.175).max(ln_floor + 1e-6);
                }
            }
        }
        if worst_ok {
            return Ok(sol);
        }
    }
    let x = layout.pack(&sol);
    let mut worst = ("".to_string(), f64::NEG_INFINITY);
    for row in &program.rows {
        let v = row.term.value(&x) / row.scale;
        if v > worst.1 {
            worst = (row.label.to_string(), v);
        }
    }
    // residual slivers are the solver's phase-I's job; anything larger
    // means the reallocation outran the surrogate's trust region
    if worst.1 > 1e-3 {
        return Err(SolveError::Infeasible {
            row: worst.0,
            violation: worst.1,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{ConstraintTerm, ConvexProgram, ObjTerm};
    use crate::model::ModelOptions;
    use crate::scenario::{Reach, Scenario};
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn projection_basics() {
        // interior point unchanged
        assert_eq!(project_capped_simplex(&[0.2, 0.3], 1.0), vec![0.2, 0.3]);
        // single coordinate clipped to the cap
        let p = project_capped_simplex(&[2.0, 0.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12, "{p:?}");
        // symmetric overflow splits evenly
        let p = project_capped_simplex(&[0.6, 0.6], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        // negative entries clip to zero
        let p = project_capped_simplex(&[-0.5, 0.4], 1.0);
        assert_eq!(p, vec![0.0, 0.4]);
    }

    #[test]
    fn projection_idempotent_and_feasible() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let dim = rng.random_range(1..12);
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..3.0)).collect();
            let cap = rng.random_range(0.1..2.0);
            let p = project_capped_simplex(&v, cap);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!(p.iter().sum::<f64>() <= cap + 1e-12);
            let pp = project_capped_simplex(&p, cap);
            for (a, b) in p.iter().zip(&pp) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Projection as a QP solved by the barrier kernel.
    fn projection_qp_oracle(v: &[f64], cap: f64) -> Vec<f64> {
        let mut p = ConvexProgram::new();
        for (k, _) in v.iter().enumerate() {
            p.add_var(format!("x{k}"), 0.0, cap + 1.0);
        }
        for (k, &vk) in v.iter().enumerate() {
            p.objective.push(ObjTerm::NegQuad {
                var: k,
                half_weight: 0.5,
                center: vk,
            });
        }
        p.add_row(
            crate::convex::RowLabel::Other("cap".into()),
            ConstraintTerm::Affine {
                lin: (0..v.len()).map(|k| (k, 1.0)).collect(),
                constant: -cap,
            },
        );
        let start = nalgebra::DVector::from_element(v.len(), cap / (2.0 * v.len() as f64));
        let opts = SolveOptions {
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let r = solve(&p, &start, &opts).unwrap();
        r.x.iter().copied().collect()
    }

    #[test]
    fn projection_matches_qp_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.5)).collect();
            let p = project_capped_simplex(&v, 1.0);
            let oracle = projection_qp_oracle(&v, 1.0);
            for (a, b) in p.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "{p:?} vs {oracle:?}");
            }
        }
    }

    fn symmetric_pu_model() -> NetworkModel {
        let s = Scenario::from_toml_str(
            r#"
schema = 1
name = "sym-pu"

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
pos = [-60.0, 0.0]

[[nodes]]
id = 2
pos = [60.0, 0.0]

[sink]
id = 3
pos = [0.0, 130.0]

[[pu_transmitters]]
pos = [0.0, -400.0]
power_dbw = 10.0
active = true
duty_cycle = 1.0

[[pu_points]]
pu = 1
pos = [0.0, -200.0]
cap_w = 8e-9
"#,
        )
        .unwrap();
        NetworkModel::new(s, Reach::Auto, ModelOptions::default()).unwrap()
    }

    #[test]
    fn subgradient_step_rules() {
        let model = symmetric_pu_model();
        let start = find_feasible_start(&model).unwrap();
        let alloc = BudgetAllocation::seeded(&model, &start).unwrap();
        let caps: BTreeMap<usize, f64> = model.active_points().into_iter().collect();
        // zero multipliers leave the allocation unchanged
        let zero: BTreeMap<(usize, usize), f64> = alloc.shares.keys().map(|&k| (k, 0.0)).collect();
        let next = subgradient_step(&model, &alloc, &zero, 1.0).unwrap();
        assert!(next.max_relative_change(&alloc, &caps) < 1e-12);
        // negative multiplier rejected
        let bad: BTreeMap<(usize, usize), f64> = alloc.shares.keys().map(|&k| (k, -1.0)).collect();
        assert!(matches!(
            subgradient_step(&model, &alloc, &bad, 1.0),
            Err(BudgetError::NegativeMultiplier { .. })
        ));
        // equal positive multipliers at a saturated cap: projection undoes
        // the uniform push, allocation is a fixed point
        let equal: BTreeMap<(usize, usize), f64> = alloc.shares.keys().map(|&k| (k, 3.0e6)).collect();
        let next = subgradient_step(&model, &alloc, &equal, 1.0).unwrap();
        assert!(
            next.max_relative_change(&alloc, &caps) < 1e-9,
            "{:?} vs {:?}",
            next.shares,
            alloc.shares
        );
    }

    #[test]
    fn symmetric_nodes_get_equal_budgets() {
        let model = symmetric_pu_model();
        let out = run_full(&model, &FullRunConfig::default()).unwrap();
        assert!(out.converged);
        let a = out.allocation.shares[&(0, 0)];
        let b = out.allocation.shares[&(0, 1)];
        let cap = model.scenario.pu_points[0].cap_w;
        assert!(
            (a - b).abs() / cap < 1e-3,
            "asymmetric converged budgets: {a:.3e} vs {b:.3e}"
        );
        // the cap binds: with more interference headroom the objective
        // would keep improving, so the shares saturate it
        assert!((a + b - cap).abs() / cap < 1e-2, "{a:.3e}+{b:.3e} vs {cap:.3e}");
        // and the iterates never violated it
        for rec in &out.budget_trace {
            assert!(rec.realized_point_w <= rec.cap_w * (1.0 + 1e-9));
        }
        // rates match by symmetry
        let r = out.solution.rates();
        assert!((r[0] - r[1]).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn master_objective_nondecreasing_over_inner_steps() {
        let model = symmetric_pu_model();
        let out = run_full(&model, &FullRunConfig::default()).unwrap();
        // within the first surrogate iteration the master value is the
        // inner objective sequence; subgradient steps with the projected
        // update must not degrade it on this instance
        let first_ell: Vec<f64> = out
            .inner_objectives
            .iter()
            .filter(|&&(ell, _, _)| ell == 1)
            .map(|&(_, _, o)| o)
            .collect();
        for w in first_ell.windows(2) {
            assert!(w[1] >= w[0] - 1e-7, "master value dropped: {w:?}");
        }
    }

    #[test]
    fn fixed_budget_mode_skips_master_and_stays_feasible() {
        let model = symmetric_pu_model();
        let config = FullRunConfig {
            fixed_budgets: true,
            ..FullRunConfig::default()
        };
        let out = run_full(&model, &config).unwrap();
        assert!(out.converged);
        // exactly one inner step per surrogate iteration
        for (ell, k, _) in &out.inner_objectives {
            assert_eq!(*k, 1, "master ran at ell={ell}");
        }
        assert_eq!(out.budget_active_until, 0);
        for rec in &out.budget_trace {
            assert!(rec.realized_point_w <= rec.cap_w * (1.0 + 1e-9));
        }
        // distance-proportional split of a symmetric pair is an even split
        let a = out.allocation.shares[&(0, 0)];
        let b = out.allocation.shares[&(0, 1)];
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn multiplier_matches_finite_difference_sensitivity() {
        // d g / d budget should equal the interference-row multiplier
        let model = symmetric_pu_model();
        let layout = VarLayout::new(&model.topology);
        let start = find_feasible_start(&model).unwrap();
        let alloc = BudgetAllocation::seeded(&model, &start).unwrap();
        let opts = SolveOptions::default();
        let solve_with = |shares: &BTreeMap<(usize, usize), f64>| -> (f64, f64) {
            let program = build_surrogate(
                &model,
                &layout,
                &start,
                &InterferenceBudgets::PerNode(shares.clone()),
            );
            let report = solve(&program, &layout.pack(&start), &opts).unwrap();
            let u = report
                .multiplier(&RowLabel::Interference(0, 0))
                .expect("interference row present");
            (report.objective, u)
        };
        let (g0, u) = solve_with(&alloc.shares);
        let h = alloc.shares[&(0, 0)] * 1e-4;
        let mut bumped = alloc.shares.clone();
        *bumped.get_mut(&(0, 0)).unwrap() += h;
        let (g1, _) = solve_with(&bumped);
        let fd = (g1 - g0) / h;
        assert!(
            (fd - u).abs() / u.abs().max(1e-12) < 0.05,
            "finite-difference {fd:.6e} vs multiplier {u:.6e}"
        );
    }
}
