//! Shared problem-instance plumbing for the optimization stack: the
//! network model (scenario + topology + statistics + knobs), the per-node
//! variable bundle, the flat variable layout used by centralized solves,
//! and exact evaluation of the bound-model constraint system that every
//! iterate must satisfy.
//!
//! Variables follow the log change of coordinates that convexifies the
//! problem: routing (`t`), transmission (`mu`), and silence (`nu`)
//! probabilities are stored as natural logs; squared normalized SINR
//! margins enter as the auxiliaries `y_out` (outgoing, kept below the true
//! squared margin) and `y_in` (incoming, kept above it), both floored at
//! `sqrt(2)/2`.
//!
//! Queue stability: the optimizer's `mu` variable is the *service* value
//! `mu_phys - epsilon`, so every constraint involving the physical
//! transmit probability (MAC budget, PU interference) carries the epsilon
//! shift explicitly, and realized queues drain strictly faster than they
//! fill.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::channel::{self, LinkStats};
use crate::convex::{ConstraintTerm, ExpTerm};
use crate::scenario::{build_topology, Reach, Scenario, Topology};
use crate::units::KAPPA;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
}

/// Concave per-node utility of the exogenous rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityKind {
    /// `weight * rho`
    Linear { weight: f64 },
    /// `weight * ln(1 + rho)`
    Log { weight: f64 },
}

/// Convex per-node cost of transmit power (dBW domain).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    Zero,
    /// `weight * (P - p_min)^2 / 2`; anchored at the power floor so the
    /// cost is nonnegative over the box.
    Quadratic { weight: f64 },
}

#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub utility: UtilityKind,
    pub cost: CostKind,
    /// Transmit-power floor, dBW.
    pub p_min_dbw: f64,
    /// Floor on the log-probability variables.
    pub ln_floor: f64,
    /// Ceiling on the squared-margin auxiliaries.
    pub y_max: f64,
    /// SCA stop tolerance on the objective.
    pub sca_tol: f64,
    pub sca_max_iters: usize,
    /// Barrier solver tolerance.
    pub solver_tol: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            utility: UtilityKind::Linear { weight: 1.0 },
            cost: CostKind::Zero,
            p_min_dbw: -60.0,
            ln_floor: -30.0,
            y_max: 1e4,
            sca_tol: 1e-6,
            sca_max_iters: 50,
            solver_tol: 1e-8,
        }
    }
}

/// Squared-margin floor for the `y` auxiliaries.
pub const Y_FLOOR: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// One network instance, ready for optimization.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub scenario: Scenario,
    pub topology: Topology,
    pub stats: LinkStats,
    pub options: ModelOptions,
}

impl NetworkModel {
    pub fn new(scenario: Scenario, reach: Reach, options: ModelOptions) -> Result<Self, ModelError> {
        let topology = build_topology(&scenario, reach);
        let stats = channel::fenton_wilkinson_link_stats(&scenario, &topology)?;
        Ok(NetworkModel {
            scenario,
            topology,
            stats,
            options,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes
    }

    pub fn epsilon(&self) -> f64 {
        self.scenario.options.epsilon_stability
    }

    /// Active protection points with their caps (watts), in index order.
    pub fn active_points(&self) -> Vec<(usize, f64)> {
        self.scenario
            .active_pu_points()
            .into_iter()
            .map(|r| (r, self.scenario.pu_points[r].cap_w))
            .collect()
    }

    /// `exp(k m + k^2 s^2 / 2)` for the node -> point channel: the factor
    /// multiplying `mu * p_lin` in the average interference.
    pub fn interference_gain(&self, node: usize, point: usize) -> f64 {
        self.stats.pu_path(node, point).mean_gain_times_power_w(0.0)
    }

    /// Shift every CR-to-CR link mean by an independent shadowing draw and
    /// prune links whose full-power margin no longer supports the
    /// squared-margin floor. Models one realized large-scale environment
    /// for repeated-experiment averaging. CR-to-protection-point statistics
    /// stay nominal so the interference-budget structure is comparable
    /// across realizations.
    pub fn apply_shadow_realization<R: rand::Rng>(&mut self, rng: &mut R) {
        use rand_distr::Distribution;
        let normal = rand_distr::Normal::new(0.0, self.scenario.propagation.shadow_std_db.max(0.0))
            .expect("valid std");
        for st in self.stats.links.values_mut() {
            st.mean_offset_db += normal.sample(rng);
        }
        let n = self.n_nodes();
        let mut out = vec![Vec::new(); n + 1];
        for (from, to) in self.topology.links() {
            let st = self.stats.link(from, to);
            let margin = self.scenario.p_max_dbw(from) + st.mean_offset_db - st.threshold_db;
            if margin >= crate::scenario::MARGIN_FLOOR_SIGMAS * st.std_db + crate::scenario::MARGIN_GUARD_DB {
                out[from].push(to);
            }
        }
        let mut in_neighbors = vec![Vec::new(); n + 1];
        for (from, outs) in out.iter().enumerate() {
            for &to in outs {
                in_neighbors[to].push(from);
            }
        }
        self.topology.interference_sets.retain(|&(f, t), _| out[f].contains(&t));
        self.topology.out_neighbors = out;
        self.topology.in_neighbors = in_neighbors;
        let mut union = vec![Vec::new(); n];
        for node in 0..n {
            let mut set = std::collections::BTreeSet::new();
            for &i in &self.topology.out_neighbors[node] {
                set.extend(self.topology.interference_sets[&(node, i)].iter().copied());
            }
            for &j in &self.topology.in_neighbors[node] {
                set.extend(self.topology.interference_sets[&(j, node)].iter().copied());
            }
            union[node] = set.into_iter().collect();
        }
        self.topology.interference_union = union;
        let links: std::collections::BTreeSet<(usize, usize)> =
            self.topology.links().into_iter().collect();
        self.stats.links.retain(|k, _| links.contains(k));
    }
}

/// Per-node optimization variables; see the module docs for conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeVars {
    pub p_dbw: f64,
    /// `ln t_{n->i}` keyed by receiver.
    pub t_ln: BTreeMap<usize, f64>,
    /// `ln(mu_phys - epsilon)`.
    pub mu_ln: f64,
    /// `ln nu` (modeled silence).
    pub nu_ln: f64,
    /// Squared-margin auxiliaries for outgoing links, keyed by receiver.
    pub y_out: BTreeMap<usize, f64>,
    /// Squared-margin auxiliaries for incoming links, keyed by sender.
    pub y_in: BTreeMap<usize, f64>,
    /// Exogenous rate, packets per slot.
    pub rho: f64,
}

impl NodeVars {
    /// Physical transmit probability `exp(mu_ln) + epsilon`.
    pub fn mu_phys(&self, epsilon: f64) -> f64 {
        self.mu_ln.exp() + epsilon
    }

    /// Routing probability toward `to` in the linear domain.
    pub fn t(&self, to: usize) -> f64 {
        self.t_ln.get(&to).map_or(0.0, |v| v.exp())
    }
}

/// A full network solution: one [`NodeVars`] per CR node.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub nodes: Vec<NodeVars>,
}

impl Solution {
    pub fn objective(&self, model: &NetworkModel) -> f64 {
        let mut acc = 0.0;
        for nv in &self.nodes {
            acc += match model.options.utility {
                UtilityKind::Linear { weight } => weight * nv.rho,
                UtilityKind::Log { weight } => weight * (1.0 + nv.rho).ln(),
            };
            acc -= match model.options.cost {
                CostKind::Zero => 0.0,
                CostKind::Quadratic { weight } => {
                    0.5 * weight * (nv.p_dbw - model.options.p_min_dbw).powi(2)
                }
            };
        }
        acc
    }

    pub fn rates(&self) -> Vec<f64> {
        self.nodes.iter().map(|nv| nv.rho).collect()
    }

    /// Silence product `exp(sum nu_ln)` over an interference set.
    pub fn silence_product(&self, set: &[usize]) -> f64 {
        set.iter().map(|&m| self.nodes[m].nu_ln).sum::<f64>().exp()
    }

    /// Realized average interference (watts) at protection point `r`,
    /// physical transmit probabilities included.
    pub fn realized_interference(&self, model: &NetworkModel, r: usize) -> f64 {
        let eps = model.epsilon();
        model.topology.pu_neighborhoods[r]
            .iter()
            .map(|&n| {
                let nv = &self.nodes[n];
                nv.mu_phys(eps) * model.stats.pu_path(n, r).mean_gain_times_power_w(nv.p_dbw)
            })
            .sum()
    }
}

/// Flat variable layout for centralized solves: node-major, per node
/// `[P, mu, nu, rho, t..., y_out..., y_in...]` with maps in key order.
#[derive(Debug, Clone)]
pub struct VarLayout {
    pub n_vars: usize,
    pub p: Vec<usize>,
    pub mu: Vec<usize>,
    pub nu: Vec<usize>,
    pub rho: Vec<usize>,
    pub t: BTreeMap<(usize, usize), usize>,
    pub y_out: BTreeMap<(usize, usize), usize>,
    pub y_in: BTreeMap<(usize, usize), usize>,
}

impl VarLayout {
    pub fn new(topology: &Topology) -> Self {
        let n = topology.n_nodes;
        let mut layout = VarLayout {
            n_vars: 0,
            p: vec![0; n],
            mu: vec![0; n],
            nu: vec![0; n],
            rho: vec![0; n],
            t: BTreeMap::new(),
            y_out: BTreeMap::new(),
            y_in: BTreeMap::new(),
        };
        let mut next = 0usize;
        let mut push = || {
            let id = next;
            next += 1;
            id
        };
        for node in 0..n {
            layout.p[node] = push();
            layout.mu[node] = push();
            layout.nu[node] = push();
            layout.rho[node] = push();
            for &i in &topology.out_neighbors[node] {
                layout.t.insert((node, i), push());
            }
            for &i in &topology.out_neighbors[node] {
                layout.y_out.insert((node, i), push());
            }
            for &j in &topology.in_neighbors[node] {
                layout.y_in.insert((j, node), push());
            }
        }
        layout.n_vars = next;
        layout
    }

    pub fn pack(&self, sol: &Solution) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_vars);
        for (node, nv) in sol.nodes.iter().enumerate() {
            x[self.p[node]] = nv.p_dbw;
            x[self.mu[node]] = nv.mu_ln;
            x[self.nu[node]] = nv.nu_ln;
            x[self.rho[node]] = nv.rho;
            for (&to, &v) in &nv.t_ln {
                x[self.t[&(node, to)]] = v;
            }
            for (&to, &v) in &nv.y_out {
                x[self.y_out[&(node, to)]] = v;
            }
            for (&from, &v) in &nv.y_in {
                x[self.y_in[&(from, node)]] = v;
            }
        }
        x
    }

    pub fn unpack(&self, topology: &Topology, x: &DVector<f64>) -> Solution {
        let n = topology.n_nodes;
        let mut nodes = Vec::with_capacity(n);
        for node in 0..n {
            let mut nv = NodeVars {
                p_dbw: x[self.p[node]],
                t_ln: BTreeMap::new(),
                mu_ln: x[self.mu[node]],
                nu_ln: x[self.nu[node]],
                y_out: BTreeMap::new(),
                y_in: BTreeMap::new(),
                rho: x[self.rho[node]],
            };
            for &i in &topology.out_neighbors[node] {
                nv.t_ln.insert(i, x[self.t[&(node, i)]]);
                nv.y_out.insert(i, x[self.y_out[&(node, i)]]);
            }
            for &j in &topology.in_neighbors[node] {
                nv.y_in.insert(j, x[self.y_in[&(j, node)]]);
            }
            nodes.push(nv);
        }
        Solution { nodes }
    }
}

/// Exponent pieces shared by program builders and exact evaluation.
pub(crate) struct LinkExponent {
    /// Variable/coefficient pairs of `mu_j + t_{j->i} + sum nu_m`.
    pub lin: Vec<(usize, f64)>,
}

pub(crate) fn link_exponent(layout: &VarLayout, topology: &Topology, from: usize, to: usize) -> LinkExponent {
    let mut lin = vec![(layout.mu[from], 1.0), (layout.t[&(from, to)], 1.0)];
    for &m in &topology.interference_sets[&(from, to)] {
        lin.push((layout.nu[m], 1.0));
    }
    LinkExponent { lin }
}

/// Outgoing-loss factor of the reliability lower bound:
/// `exp(-y/2)/12 + exp(-2y/3)/4` evaluated at the squared margin `y`.
pub fn outgoing_loss(y: f64) -> f64 {
    (-0.5 * y).exp() / 12.0 + (-2.0 * y / 3.0).exp() / 4.0
}

/// Incoming-retention factor of the reliability upper bound:
/// `1 - alpha1 exp(-alpha2 y)`.
pub fn incoming_retention(y: f64) -> f64 {
    1.0 - channel::qbound::ALPHA1 * (-channel::qbound::ALPHA2 * y).exp()
}

/// Exact value of one node's bound-model flow constraint (<= 0 when
/// satisfied): `rho + incoming upper bound - outgoing lower bound`.
pub fn flow_value_exact(model: &NetworkModel, sol: &Solution, node: usize) -> f64 {
    let t = &model.topology;
    let nv = &sol.nodes[node];
    let mut acc = nv.rho;
    for &i in &t.out_neighbors[node] {
        let base = (nv.mu_ln + nv.t_ln[&i]).exp() * sol.silence_product(&t.interference_sets[&(node, i)]);
        acc -= base * (1.0 - outgoing_loss(nv.y_out[&i]));
    }
    for &j in &t.in_neighbors[node] {
        let jv = &sol.nodes[j];
        let base = (jv.mu_ln + jv.t_ln[&node]).exp() * sol.silence_product(&t.interference_sets[&(j, node)]);
        acc += base * incoming_retention(nv.y_in[&j]);
    }
    acc
}

/// All original (pre-surrogate) constraint values at a point, each paired
/// with a label; nonpositive means satisfied. Used to machine-check that
/// SCA iterates stay feasible for the non-convex problem.
pub fn exact_constraint_values(model: &NetworkModel, sol: &Solution) -> Vec<(String, f64)> {
    let t = &model.topology;
    let s = &model.scenario;
    let eps = model.epsilon();
    let mut rows = Vec::new();
    for node in 0..t.n_nodes {
        let nv = &sol.nodes[node];
        rows.push((format!("flow[{node}]"), flow_value_exact(model, sol, node)));
        let route_sum: f64 = nv.t_ln.values().map(|v| v.exp()).sum();
        rows.push((format!("route-sum[{node}]"), route_sum - 1.0));
        rows.push((
            format!("mac-sum[{node}]"),
            nv.mu_ln.exp() + nv.nu_ln.exp() - (1.0 - eps),
        ));
        rows.push((format!("power-cap[{node}]"), nv.p_dbw - s.p_max_dbw(node)));
        for &i in &t.out_neighbors[node] {
            let st = model.stats.link(node, i);
            let margin = nv.p_dbw + st.mean_offset_db - st.threshold_db;
            rows.push((
                format!("margin-out[{node}->{i}]"),
                st.std_db * nv.y_out[&i].sqrt() - margin,
            ));
        }
        for &j in &t.in_neighbors[node] {
            let st = model.stats.link(j, node);
            let margin = sol.nodes[j].p_dbw + st.mean_offset_db - st.threshold_db;
            rows.push((
                format!("margin-in[{j}->{node}]"),
                margin - st.std_db * nv.y_in[&j].sqrt(),
            ));
        }
    }
    for (r, cap) in model.active_points() {
        rows.push((
            format!("interference[pt{r}]"),
            sol.realized_interference(model, r) - cap,
        ));
    }
    rows
}

/// Largest constraint value (positive = worst violation).
pub fn max_violation(model: &NetworkModel, sol: &Solution) -> (String, f64) {
    exact_constraint_values(model, sol)
        .into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
        .expect("at least one row")
}

/// Model-level reliabilities at a solution, for conservatism checks and
/// reporting: per link, the lower-bound model for the outgoing role, the
/// upper-bound model for the incoming role, and the exact-Q value (all
/// using the modeled silence probabilities).
#[derive(Debug, Clone, Copy)]
pub struct LinkReliability {
    pub lower_model: f64,
    pub upper_model: f64,
    pub exact_q: f64,
    /// Outage probability `Q(margin / sigma)` of the SINR alone.
    pub outage: f64,
}

pub fn link_reliabilities(model: &NetworkModel, sol: &Solution) -> BTreeMap<(usize, usize), LinkReliability> {
    let t = &model.topology;
    let mut out = BTreeMap::new();
    for (from, to) in t.links() {
        let st = model.stats.link(from, to);
        let silence = sol.silence_product(&t.interference_sets[&(from, to)]);
        let margin = sol.nodes[from].p_dbw + st.mean_offset_db - st.threshold_db;
        let x = margin / st.std_db;
        let exact_q = silence * (1.0 - channel::q_function(x));
        let lower_model = silence * (1.0 - outgoing_loss(sol.nodes[from].y_out[&to]));
        let upper_model = if to == t.sink {
            // the sink is not a flow-constrained node; incoming auxiliaries
            // exist only at CR receivers
            exact_q
        } else {
            silence * incoming_retention(sol.nodes[to].y_in[&from])
        };
        out.insert(
            (from, to),
            LinkReliability {
                lower_model,
                upper_model,
                exact_q,
                outage: channel::q_function(x),
            },
        );
    }
    out
}

/// Interference-row constant `exp(k m + k^2 s^2/2)` and the two exp terms
/// of the physical-interference constraint
/// `exp(mu + kP + c) + eps exp(kP + c) <= budget`.
pub(crate) fn interference_terms(
    model: &NetworkModel,
    layout_mu: usize,
    layout_p: usize,
    node: usize,
    point: usize,
) -> Vec<ExpTerm> {
    let c = (model.interference_gain(node, point)).ln();
    vec![
        ExpTerm {
            coef: 1.0,
            lin: vec![(layout_mu, 1.0), (layout_p, KAPPA)],
            constant: c,
        },
        ExpTerm {
            coef: model.epsilon(),
            lin: vec![(layout_p, KAPPA)],
            constant: c,
        },
    ]
}

/// Build the constraint term for one per-node interference row
/// `f(mu, P) - budget <= 0` in the global layout.
pub(crate) fn interference_row(
    model: &NetworkModel,
    layout: &VarLayout,
    node: usize,
    point: usize,
    budget_w: f64,
) -> ConstraintTerm {
    ConstraintTerm::ExpSum {
        exps: interference_terms(model, layout.mu[node], layout.p[node], node, point),
        lin: vec![],
        constant: -budget_w,
    }
}
