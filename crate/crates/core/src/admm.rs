//! Distributed solution of the per-iteration convex subproblem by the
//! alternating direction method of multipliers over simulated message
//! passing.
//!
//! Each node keeps local copies of the variables of its in-neighbors that
//! enter its flow constraint (`[t, P, mu]` per in-link) and of the silence
//! variables of every node that can collide with its traffic. Consensus
//! between owners and copies is enforced through per-pair multipliers
//! updated by dual ascent with step `beta`, while primal updates minimize
//! the locally quadratically-augmented Lagrangian over the node's own
//! constraint set (routing/MAC budgets, margins, surrogate flow row, and
//! its per-node interference budgets) via the barrier kernel.
//!
//! Rounds are synchronous; inside a round nodes update sequentially in
//! ascending id by default (Gauss-Seidel, which keeps the augmented
//! Lagrangian monotone within a sweep) with a Jacobi option. Message
//! traffic follows the fixed per-round send list, so overhead is exactly
//! accountable.

use std::collections::BTreeMap;

use crate::channel::qbound::{ALPHA1, ALPHA2};
use crate::convex::{
    solve, ConstraintTerm, ConvexProgram, ExpTerm, ObjTerm, RowLabel, SolveError, SolveOptions,
};
use crate::model::{CostKind, NetworkModel, NodeVars, Solution, UtilityKind, Y_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum AdmmError {
    #[error("connectivity precondition violated: no directed path from node {from} to coupled node {to}")]
    Disconnected { from: usize, to: usize },
    #[error("local solve failed at node {node}, round {round}: {source}")]
    LocalSolve {
        node: usize,
        round: usize,
        #[source]
        source: SolveError,
    },
}

/// Sweep order for the primal updates inside one synchronous round.
///
/// Gauss-Seidel is the analyzed variant; Jacobi is available for
/// experimentation and carries no monotonicity guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone)]
pub struct AdmmParams {
    /// Dual ascent step.
    pub beta: f64,
    /// Quadratic penalty weight.
    pub c: f64,
    pub max_rounds: usize,
    /// Termination threshold on the largest native-domain consensus gap.
    pub gap_tol: f64,
    /// Termination threshold on per-round iterate movement. The local
    /// solves resolve their argmin to roughly sqrt(solver_tol / c), so
    /// values below that floor are unobservable.
    pub drift_tol: f64,
    pub sweep: SweepOrder,
    /// Keep full message payload logs (counts are always kept).
    pub record_messages: bool,
    pub solver_tol: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            beta: 0.1,
            c: 1.0,
            max_rounds: 400,
            gap_tol: 1e-3,
            drift_tol: 1e-4,
            sweep: SweepOrder::GaussSeidel,
            record_messages: false,
            solver_tol: 1e-8,
        }
    }
}

/// Local copies a node maintains of other nodes' variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCopies {
    /// `t_{j->n,n}` keyed by in-neighbor `j`.
    pub t_ln: BTreeMap<usize, f64>,
    /// `P_{j,n}`.
    pub p_dbw: BTreeMap<usize, f64>,
    /// `mu_{j,n}`.
    pub mu_ln: BTreeMap<usize, f64>,
    /// `nu_{m,n}` keyed by interferer `m`.
    pub nu_ln: BTreeMap<usize, f64>,
}

/// Per-node consensus multipliers: one 3-vector per in-neighbor (ordered
/// `[t, P, mu]`) and one scalar per interferer copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub q: BTreeMap<usize, [f64; 3]>,
    pub v: BTreeMap<usize, f64>,
}

/// Dual ascent on one copy: `q += beta * (owner - copy)`.
pub fn dual_step3(q: &mut [f64; 3], owner: [f64; 3], copy: [f64; 3], beta: f64) {
    for k in 0..3 {
        q[k] += beta * (owner[k] - copy[k]);
    }
}

pub fn dual_step(v: &mut f64, owner: f64, copy: f64, beta: f64) {
    *v += beta * (owner - copy);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// Primal 3-vectors, both owner-to-holder and holder-to-owner.
    PrimalCopy,
    /// A holder returns its silence copy to the owner.
    SilenceCopy,
    /// An owner's true silence value relayed to dependent nodes.
    ForwardedSilence,
    MultiplierQ,
    MultiplierV,
}

/// One control-plane message of the simulated exchange. `subject` names
/// the node whose variables the payload concerns, which distinguishes the
/// owner-to-holder and holder-to-owner primal messages of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMessage {
    pub sender: usize,
    pub receiver: usize,
    pub round: usize,
    pub kind: PayloadKind,
    pub subject: usize,
    pub values: Vec<f64>,
}

/// Per-round, per-kind message counts for one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MessageCount {
    pub primal_copy: usize,
    pub silence_copy: usize,
    pub forwarded_silence: usize,
    pub multiplier_q: usize,
    pub multiplier_v: usize,
}

impl MessageCount {
    pub fn total(&self) -> usize {
        self.primal_copy + self.silence_copy + self.forwarded_silence + self.multiplier_q + self.multiplier_v
    }
}

/// The send list Algorithm-style rounds prescribe for a node, derived from
/// the topology alone.
pub fn expected_message_count(model: &NetworkModel, node: usize) -> MessageCount {
    let t = &model.topology;
    let cr_outs = t.out_neighbors[node].iter().filter(|&&i| i != t.sink).count();
    MessageCount {
        primal_copy: cr_outs + t.in_neighbors[node].len(),
        silence_copy: t.interference_union[node].len(),
        forwarded_silence: t.interference_dependents(node).len(),
        multiplier_q: t.in_neighbors[node].len(),
        multiplier_v: t.interference_union[node].len(),
    }
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Largest |owner - copy| over all consensus pairs, native domain.
    pub max_gap: f64,
    /// Largest routing-probability gap in the linear domain.
    pub max_gap_t: f64,
    pub objective: f64,
    /// Sum of squared consensus residuals.
    pub residual_sq: f64,
    /// Largest own-variable movement during the round (native domain); the
    /// dual-residual analogue that distinguishes a converged network from
    /// a consensus caravan still drifting toward the optimum.
    pub max_drift: f64,
}

/// Per-pair routing gaps of one round, for convergence traces:
/// `((owner, holder), |t_owner - t_copy|)`.
pub type PairGaps = Vec<((usize, usize), f64)>;

#[derive(Debug)]
pub struct AdmmOutcome {
    pub solution: Solution,
    pub rounds: usize,
    pub converged: bool,
    pub trace: Vec<RoundRecord>,
    pub pair_gap_trace: Vec<PairGaps>,
    pub message_counts: Vec<MessageCount>,
    pub messages: Vec<ControlMessage>,
    /// Nodes whose local solve failed at least once (they kept their
    /// previous iterate for that round).
    pub flagged_rounds: Vec<(usize, usize)>,
    /// Final multipliers of the per-node interference rows, keyed by
    /// (point, node); the subgradients the budget master consumes.
    pub interference_multipliers: BTreeMap<(usize, usize), f64>,
}

struct NodeState {
    own: NodeVars,
    copies: LocalCopies,
    multipliers: MultiplierState,
    /// Multipliers of this node's interference rows from its latest solve.
    interference_multipliers: BTreeMap<usize, f64>,
}

/// Variable indices of one node's local program.
struct LocalLayout {
    p: usize,
    mu: usize,
    nu: usize,
    rho: usize,
    t: BTreeMap<usize, usize>,
    y_out: BTreeMap<usize, usize>,
    y_in: BTreeMap<usize, usize>,
    copy_t: BTreeMap<usize, usize>,
    copy_p: BTreeMap<usize, usize>,
    copy_mu: BTreeMap<usize, usize>,
    copy_nu: BTreeMap<usize, usize>,
    n_vars: usize,
}

impl LocalLayout {
    fn new(model: &NetworkModel, node: usize) -> Self {
        let t = &model.topology;
        let mut next = 0usize;
        let mut push = || {
            let id = next;
            next += 1;
            id
        };
        let mut ll = LocalLayout {
            p: push(),
            mu: push(),
            nu: push(),
            rho: push(),
            t: BTreeMap::new(),
            y_out: BTreeMap::new(),
            y_in: BTreeMap::new(),
            copy_t: BTreeMap::new(),
            copy_p: BTreeMap::new(),
            copy_mu: BTreeMap::new(),
            copy_nu: BTreeMap::new(),
            n_vars: 0,
        };
        for &i in &t.out_neighbors[node] {
            ll.t.insert(i, push());
        }
        for &i in &t.out_neighbors[node] {
            ll.y_out.insert(i, push());
        }
        for &j in &t.in_neighbors[node] {
            ll.y_in.insert(j, push());
        }
        for &j in &t.in_neighbors[node] {
            ll.copy_t.insert(j, push());
            ll.copy_p.insert(j, push());
            ll.copy_mu.insert(j, push());
        }
        for &m in &t.interference_union[node] {
            ll.copy_nu.insert(m, push());
        }
        ll.n_vars = next;
        ll
    }
}

/// A configured ADMM run over one convex subproblem instance: fixed
/// surrogate anchor, fixed per-node interference budgets.
pub struct AdmmRun<'a> {
    model: &'a NetworkModel,
    anchor: &'a Solution,
    budgets: BTreeMap<(usize, usize), f64>,
    params: AdmmParams,
    layouts: Vec<LocalLayout>,
    state: Vec<NodeState>,
    round: usize,
    solver: SolveOptions,
}

impl<'a> AdmmRun<'a> {
    /// Set up a run; checks the multihop-connectivity precondition and
    /// initializes copies to the owners' values and multipliers to zero.
    pub fn new(
        model: &'a NetworkModel,
        anchor: &'a Solution,
        budgets: BTreeMap<(usize, usize), f64>,
        init: &Solution,
        params: AdmmParams,
    ) -> Result<Self, AdmmError> {
        check_connectivity(model)?;
        let t = &model.topology;
        let n = t.n_nodes;
        let layouts: Vec<LocalLayout> = (0..n).map(|node| LocalLayout::new(model, node)).collect();
        let mut state = Vec::with_capacity(n);
        for node in 0..n {
            let mut copies = LocalCopies {
                t_ln: BTreeMap::new(),
                p_dbw: BTreeMap::new(),
                mu_ln: BTreeMap::new(),
                nu_ln: BTreeMap::new(),
            };
            for &j in &t.in_neighbors[node] {
                copies.t_ln.insert(j, init.nodes[j].t_ln[&node]);
                copies.p_dbw.insert(j, init.nodes[j].p_dbw);
                copies.mu_ln.insert(j, init.nodes[j].mu_ln);
            }
            for &m in &t.interference_union[node] {
                copies.nu_ln.insert(m, init.nodes[m].nu_ln);
            }
            let multipliers = MultiplierState {
                q: t.in_neighbors[node].iter().map(|&j| (j, [0.0; 3])).collect(),
                v: t.interference_union[node].iter().map(|&m| (m, 0.0)).collect(),
            };
            state.push(NodeState {
                own: init.nodes[node].clone(),
                copies,
                multipliers,
                interference_multipliers: BTreeMap::new(),
            });
        }
        let solver = SolveOptions {
            tol: params.solver_tol,
            ..SolveOptions::default()
        };
        Ok(AdmmRun {
            model,
            anchor,
            budgets,
            params,
            layouts,
            state,
            round: 0,
            solver,
        })
    }

    pub fn solution(&self) -> Solution {
        Solution {
            nodes: self.state.iter().map(|s| s.own.clone()).collect(),
        }
    }

    pub fn copies(&self, node: usize) -> &LocalCopies {
        &self.state[node].copies
    }

    pub fn multipliers(&self, node: usize) -> &MultiplierState {
        &self.state[node].multipliers
    }

    /// Build and solve the local augmented-Lagrangian subproblem of one
    /// node against the given reference snapshot, returning the updated
    /// own-variables and copies.
    fn solve_local(
        &self,
        node: usize,
        reference: &dyn Fn(usize) -> (NodeVars, LocalCopies),
    ) -> Result<(NodeVars, LocalCopies, BTreeMap<usize, f64>), SolveError> {
        let t = &self.model.topology;
        let ll = &self.layouts[node];
        let st = &self.state[node];
        let c = self.params.c;
        let mut p = local_program_skeleton(self.model, node, ll, self.anchor, &self.budgets);

        // objective: utility/cost plus the consensus terms of the local
        // augmented Lagrangian (maximize form)
        match self.model.options.utility {
            UtilityKind::Linear { weight } => p.objective.push(ObjTerm::Linear { var: ll.rho, weight }),
            UtilityKind::Log { weight } => p.objective.push(ObjTerm::Log1p { var: ll.rho, weight }),
        }
        match self.model.options.cost {
            CostKind::Zero => {}
            CostKind::Quadratic { weight } => p.objective.push(ObjTerm::NegQuad {
                var: ll.p,
                half_weight: 0.5 * weight,
                center: self.model.options.p_min_dbw,
            }),
        }
        // holder-side terms: +q.copy - (c/2)(owner_ref - copy)^2
        for &j in &t.in_neighbors[node] {
            let q = st.multipliers.q[&j];
            let (owner_ref, _) = reference(j);
            let vars = [ll.copy_t[&j], ll.copy_p[&j], ll.copy_mu[&j]];
            let refs = [owner_ref.t_ln[&node], owner_ref.p_dbw, owner_ref.mu_ln];
            for k in 0..3 {
                p.objective.push(ObjTerm::Linear {
                    var: vars[k],
                    weight: q[k],
                });
                p.objective.push(ObjTerm::NegQuad {
                    var: vars[k],
                    half_weight: 0.5 * c,
                    center: refs[k],
                });
            }
        }
        // owner-side terms against each CR out-neighbor's copy:
        // -q.own - (c/2)(own - copy_ref)^2
        for &i in &t.out_neighbors[node] {
            if i == t.sink {
                continue;
            }
            let q = self.state[i].multipliers.q[&node];
            let (_, holder_copies) = reference(i);
            let vars = [ll.t[&i], ll.p, ll.mu];
            let refs = [
                holder_copies.t_ln[&node],
                holder_copies.p_dbw[&node],
                holder_copies.mu_ln[&node],
            ];
            for k in 0..3 {
                p.objective.push(ObjTerm::Linear {
                    var: vars[k],
                    weight: -q[k],
                });
                p.objective.push(ObjTerm::NegQuad {
                    var: vars[k],
                    half_weight: 0.5 * c,
                    center: refs[k],
                });
            }
        }
        // silence copies this node holds: +v.copy - (c/2)(owner_ref - copy)^2
        for &m in &t.interference_union[node] {
            let v = st.multipliers.v[&m];
            let (owner_ref, _) = reference(m);
            p.objective.push(ObjTerm::Linear {
                var: ll.copy_nu[&m],
                weight: v,
            });
            p.objective.push(ObjTerm::NegQuad {
                var: ll.copy_nu[&m],
                half_weight: 0.5 * c,
                center: owner_ref.nu_ln,
            });
        }
        // this node's silence as seen by dependents: -v.own - (c/2)(own - copy_ref)^2
        for p_dep in t.interference_dependents(node) {
            let v = self.state[p_dep].multipliers.v[&node];
            let (_, holder_copies) = reference(p_dep);
            p.objective.push(ObjTerm::Linear {
                var: ll.nu,
                weight: -v,
            });
            p.objective.push(ObjTerm::NegQuad {
                var: ll.nu,
                half_weight: 0.5 * c,
                center: holder_copies.nu_ln[&node],
            });
        }

        let start = pack_local(ll, &st.own, &st.copies);
        let report = solve(&p, &start, &self.solver)?;
        let mut interference = BTreeMap::new();
        for (&(r, n_), _) in &self.budgets {
            if n_ == node {
                if let Some(u) = report.multiplier(&RowLabel::Interference(r, node)) {
                    interference.insert(r, u);
                }
            }
        }
        let (own, copies) = unpack_local(t, node, ll, &report.x);
        Ok((own, copies, interference))
    }

    /// One synchronous round: primal sweep, dual updates, message ledger.
    /// Returns the round record.
    pub fn step(
        &mut self,
        messages: &mut Vec<ControlMessage>,
        counts: &mut Vec<MessageCount>,
        flagged: &mut Vec<(usize, usize)>,
    ) -> RoundRecord {
        let t = self.model.topology.clone();
        let n = t.n_nodes;
        let round = self.round;

        // snapshot for Jacobi mode
        let snapshot: Vec<(NodeVars, LocalCopies)> = self
            .state
            .iter()
            .map(|s| (s.own.clone(), s.copies.clone()))
            .collect();

        for node in 0..n {
            let result = match self.params.sweep {
                SweepOrder::GaussSeidel => {
                    let state_ref = &self.state;
                    let reference = move |k: usize| (state_ref[k].own.clone(), state_ref[k].copies.clone());
                    self.solve_local(node, &reference)
                }
                SweepOrder::Jacobi => {
                    let snap = &snapshot;
                    let reference = move |k: usize| snap[k].clone();
                    self.solve_local(node, &reference)
                }
            };
            match result {
                Ok((own, copies, interference)) => {
                    self.state[node].own = own;
                    self.state[node].copies = copies;
                    self.state[node].interference_multipliers = interference;
                }
                Err(_) => flagged.push((round, node)),
            }
        }

        // post-update message exchange (primal payloads)
        let mut round_counts = vec![MessageCount::default(); n];
        for node in 0..n {
            let own = &self.state[node].own;
            for &i in &t.out_neighbors[node] {
                if i == t.sink {
                    continue;
                }
                round_counts[node].primal_copy += 1;
                if self.params.record_messages {
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: i,
                        round,
                        kind: PayloadKind::PrimalCopy,
                        subject: node,
                        values: vec![own.t_ln[&i], own.p_dbw, own.mu_ln],
                    });
                }
            }
            for &j in &t.in_neighbors[node] {
                round_counts[node].primal_copy += 1;
                if self.params.record_messages {
                    let cp = &self.state[node].copies;
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: j,
                        round,
                        kind: PayloadKind::PrimalCopy,
                        subject: j,
                        values: vec![cp.t_ln[&j], cp.p_dbw[&j], cp.mu_ln[&j]],
                    });
                }
            }
            for &m in &t.interference_union[node] {
                round_counts[node].silence_copy += 1;
                if self.params.record_messages {
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: m,
                        round,
                        kind: PayloadKind::SilenceCopy,
                        subject: m,
                        values: vec![self.state[node].copies.nu_ln[&m]],
                    });
                }
            }
            for p_dep in t.interference_dependents(node) {
                round_counts[node].forwarded_silence += 1;
                if self.params.record_messages {
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: p_dep,
                        round,
                        kind: PayloadKind::ForwardedSilence,
                        subject: node,
                        values: vec![own.nu_ln],
                    });
                }
            }
        }

        // dual updates with the fresh primal values
        for node in 0..n {
            let owner_vals: Vec<(usize, [f64; 3])> = t.in_neighbors[node]
                .iter()
                .map(|&j| {
                    let ow = &self.state[j].own;
                    (j, [ow.t_ln[&node], ow.p_dbw, ow.mu_ln])
                })
                .collect();
            let st = &mut self.state[node];
            for (j, owner) in owner_vals {
                let copy = [st.copies.t_ln[&j], st.copies.p_dbw[&j], st.copies.mu_ln[&j]];
                dual_step3(st.multipliers.q.get_mut(&j).expect("pair"), owner, copy, self.params.beta);
            }
            let silence_owner: Vec<(usize, f64)> = t.interference_union[node]
                .iter()
                .map(|&m| (m, self.state[m].own.nu_ln))
                .collect();
            let st = &mut self.state[node];
            for (m, owner) in silence_owner {
                let copy = st.copies.nu_ln[&m];
                dual_step(st.multipliers.v.get_mut(&m).expect("pair"), owner, copy, self.params.beta);
            }
        }
        // multiplier messages
        for node in 0..n {
            for &j in &t.in_neighbors[node] {
                round_counts[node].multiplier_q += 1;
                if self.params.record_messages {
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: j,
                        round,
                        kind: PayloadKind::MultiplierQ,
                        subject: j,
                        values: self.state[node].multipliers.q[&j].to_vec(),
                    });
                }
            }
            for &m in &t.interference_union[node] {
                round_counts[node].multiplier_v += 1;
                if self.params.record_messages {
                    messages.push(ControlMessage {
                        sender: node,
                        receiver: m,
                        round,
                        kind: PayloadKind::MultiplierV,
                        subject: m,
                        values: vec![self.state[node].multipliers.v[&m]],
                    });
                }
            }
        }
        counts.extend(round_counts);

        let mut max_drift: f64 = 0.0;
        for node in 0..n {
            let before = &snapshot[node].0;
            let after = &self.state[node].own;
            max_drift = max_drift
                .max((after.p_dbw - before.p_dbw).abs())
                .max((after.mu_ln - before.mu_ln).abs())
                .max((after.nu_ln - before.nu_ln).abs())
                .max((after.rho - before.rho).abs());
            for (&i, &v) in &after.t_ln {
                max_drift = max_drift.max((v - before.t_ln[&i]).abs());
            }
        }

        let (max_gap, max_gap_t, residual_sq, _) = self.gaps();
        self.round += 1;
        RoundRecord {
            round,
            max_gap,
            max_gap_t,
            objective: self.solution().objective(self.model),
            residual_sq,
            max_drift,
        }
    }

    /// Current consensus gaps: (max native, max routing-linear, squared
    /// residual norm, per-pair routing gaps).
    pub fn gaps(&self) -> (f64, f64, f64, PairGaps) {
        let t = &self.model.topology;
        let mut max_gap: f64 = 0.0;
        let mut max_gap_t: f64 = 0.0;
        let mut residual_sq = 0.0;
        let mut pairs = Vec::new();
        for node in 0..t.n_nodes {
            let st = &self.state[node];
            for &j in &t.in_neighbors[node] {
                let ow = &self.state[j].own;
                let diffs = [
                    ow.t_ln[&node] - st.copies.t_ln[&j],
                    ow.p_dbw - st.copies.p_dbw[&j],
                    ow.mu_ln - st.copies.mu_ln[&j],
                ];
                for d in diffs {
                    max_gap = max_gap.max(d.abs());
                    residual_sq += d * d;
                }
                let tgap = (ow.t_ln[&node].exp() - st.copies.t_ln[&j].exp()).abs();
                max_gap_t = max_gap_t.max(tgap);
                pairs.push(((j, node), tgap));
            }
            for &m in &t.interference_union[node] {
                let d = self.state[m].own.nu_ln - st.copies.nu_ln[&m];
                max_gap = max_gap.max(d.abs());
                residual_sq += d * d;
            }
        }
        (max_gap, max_gap_t, residual_sq, pairs)
    }

    /// Global augmented Lagrangian (minimize form) at the current state;
    /// monotone within a Gauss-Seidel sweep when multipliers are frozen.
    pub fn augmented_lagrangian(&self) -> f64 {
        let t = &self.model.topology;
        let c = self.params.c;
        let mut acc = -self.solution().objective(self.model);
        for node in 0..t.n_nodes {
            let st = &self.state[node];
            for &j in &t.in_neighbors[node] {
                let ow = &self.state[j].own;
                let owner = [ow.t_ln[&node], ow.p_dbw, ow.mu_ln];
                let copy = [st.copies.t_ln[&j], st.copies.p_dbw[&j], st.copies.mu_ln[&j]];
                let q = st.multipliers.q[&j];
                for k in 0..3 {
                    let d = owner[k] - copy[k];
                    acc += q[k] * d + 0.5 * c * d * d;
                }
            }
            for &m in &t.interference_union[node] {
                let d = self.state[m].own.nu_ln - st.copies.nu_ln[&m];
                acc += st.multipliers.v[&m] * d + 0.5 * c * d * d;
            }
        }
        acc
    }
}

/// Local constraint set of one node: boxes, routing/MAC budgets, margins
/// (anchored), surrogate flow row over own variables and copies, and the
/// node's per-point interference budgets.
fn local_program_skeleton(
    model: &NetworkModel,
    node: usize,
    ll: &LocalLayout,
    anchor: &Solution,
    budgets: &BTreeMap<(usize, usize), f64>,
) -> ConvexProgram {
    let t = &model.topology;
    let s = &model.scenario;
    let eps = model.epsilon();
    let mut p = ConvexProgram::new();
    let ln_floor = model.options.ln_floor;

    let v = p.add_var("P", model.options.p_min_dbw, s.p_max_dbw(node));
    debug_assert_eq!(v, ll.p);
    p.add_var("mu", ln_floor, (1.0 - eps).ln());
    p.add_var("nu", ln_floor, 0.0);
    p.add_var("rho", 0.0, 1.0);
    for &i in &t.out_neighbors[node] {
        p.add_var(format!("t[{i}]"), ln_floor, 0.0);
    }
    for &i in &t.out_neighbors[node] {
        p.add_var(format!("yo[{i}]"), Y_FLOOR, model.options.y_max);
    }
    for &j in &t.in_neighbors[node] {
        p.add_var(format!("yi[{j}]"), Y_FLOOR, model.options.y_max);
    }
    for &j in &t.in_neighbors[node] {
        p.add_var(format!("ct[{j}]"), ln_floor, 0.0);
        p.add_var(format!("cp[{j}]"), model.options.p_min_dbw, s.p_max_dbw(j));
        p.add_var(format!("cmu[{j}]"), ln_floor, (1.0 - eps).ln());
    }
    for &m in &t.interference_union[node] {
        p.add_var(format!("cnu[{m}]"), ln_floor, 0.0);
    }
    debug_assert_eq!(p.n_vars(), ll.n_vars);

    p.add_row(
        RowLabel::RouteSum(node),
        ConstraintTerm::ExpSum {
            exps: t.out_neighbors[node]
                .iter()
                .map(|&i| ExpTerm {
                    coef: 1.0,
                    lin: vec![(ll.t[&i], 1.0)],
                    constant: 0.0,
                })
                .collect(),
            lin: vec![],
            constant: -1.0,
        },
    );
    p.add_row(
        RowLabel::MacSum(node),
        ConstraintTerm::ExpSum {
            exps: vec![
                ExpTerm {
                    coef: 1.0,
                    lin: vec![(ll.mu, 1.0)],
                    constant: 0.0,
                },
                ExpTerm {
                    coef: 1.0,
                    lin: vec![(ll.nu, 1.0)],
                    constant: 0.0,
                },
            ],
            lin: vec![],
            constant: -(1.0 - eps),
        },
    );
    for &i in &t.out_neighbors[node] {
        let st = model.stats.link(node, i);
        let ya = anchor.nodes[node].y_out[&i];
        let slope = st.std_db / (2.0 * ya.sqrt());
        p.add_row(
            RowLabel::MarginOut(node, i),
            ConstraintTerm::Affine {
                lin: vec![(ll.y_out[&i], slope), (ll.p, -1.0)],
                constant: 0.5 * st.std_db * ya.sqrt() - st.mean_offset_db + st.threshold_db,
            },
        );
    }
    for &j in &t.in_neighbors[node] {
        let st = model.stats.link(j, node);
        p.add_row(
            RowLabel::MarginIn(j, node),
            ConstraintTerm::SqrtDeficit {
                lin: vec![(ll.copy_p[&j], 1.0)],
                constant: st.mean_offset_db - st.threshold_db,
                sqrt_var: ll.y_in[&j],
                sqrt_coef: st.std_db,
            },
        );
    }
    p.add_row(RowLabel::Flow(node), local_flow_term(model, node, ll, anchor));
    for (&(r, n_), &budget) in budgets {
        if n_ != node {
            continue;
        }
        let cap = s.pu_points[r].cap_w;
        let c = model.interference_gain(node, r).ln();
        p.add_scaled_row(
            RowLabel::Interference(r, node),
            ConstraintTerm::ExpSum {
                exps: vec![
                    ExpTerm {
                        coef: 1.0,
                        lin: vec![(ll.mu, 1.0), (ll.p, crate::units::KAPPA)],
                        constant: c,
                    },
                    ExpTerm {
                        coef: eps,
                        lin: vec![(ll.p, crate::units::KAPPA)],
                        constant: c,
                    },
                ],
                lin: vec![],
                constant: -budget,
            },
            cap,
        );
    }
    p
}

/// The surrogate flow row in local coordinates: own variables for the
/// outgoing terms, copies for incoming and silence factors.
fn local_flow_term(model: &NetworkModel, node: usize, ll: &LocalLayout, anchor: &Solution) -> ConstraintTerm {
    let t = &model.topology;
    let mut exps = Vec::new();
    let mut lin: Vec<(usize, f64)> = vec![(ll.rho, 1.0)];
    let mut constant = 0.0;
    let add_lin = |lin: &mut Vec<(usize, f64)>, var: usize, coef: f64| {
        if let Some(entry) = lin.iter_mut().find(|(v, _)| *v == var) {
            entry.1 += coef;
        } else {
            lin.push((var, coef));
        }
    };

    for &i in &t.out_neighbors[node] {
        let mut le = vec![(ll.mu, 1.0), (ll.t[&i], 1.0)];
        for &m in &t.interference_sets[&(node, i)] {
            le.push((ll.copy_nu[&m], 1.0));
        }
        for (coef, yw) in [(1.0 / 12.0, -0.5), (0.25, -2.0 / 3.0)] {
            let mut l = le.clone();
            l.push((ll.y_out[&i], yw));
            exps.push(ExpTerm {
                coef,
                lin: l,
                constant: 0.0,
            });
        }
        let a = &anchor.nodes[node];
        let mut exponent = a.mu_ln + a.t_ln[&i];
        for &m in &t.interference_sets[&(node, i)] {
            exponent += anchor.nodes[m].nu_ln;
        }
        let e_a = exponent.exp();
        for &(var, coef) in &le {
            add_lin(&mut lin, var, -e_a * coef);
        }
        constant += -e_a * (1.0 - exponent);
    }

    for &j in &t.in_neighbors[node] {
        let mut le = vec![(ll.copy_mu[&j], 1.0), (ll.copy_t[&j], 1.0)];
        for &m in &t.interference_sets[&(j, node)] {
            le.push((ll.copy_nu[&m], 1.0));
        }
        exps.push(ExpTerm {
            coef: 1.0,
            lin: le.clone(),
            constant: 0.0,
        });
        let aj = &anchor.nodes[j];
        let mut exponent = aj.mu_ln + aj.t_ln[&node];
        for &m in &t.interference_sets[&(j, node)] {
            exponent += anchor.nodes[m].nu_ln;
        }
        let y_a = anchor.nodes[node].y_in[&j];
        let e_a = ALPHA1 * (exponent - ALPHA2 * y_a).exp();
        for &(var, coef) in &le {
            add_lin(&mut lin, var, -e_a * coef);
        }
        add_lin(&mut lin, ll.y_in[&j], e_a * ALPHA2);
        constant += -e_a * (1.0 - (exponent - ALPHA2 * y_a));
    }

    ConstraintTerm::ExpSum { exps, lin, constant }
}

fn pack_local(ll: &LocalLayout, own: &NodeVars, copies: &LocalCopies) -> nalgebra::DVector<f64> {
    let mut x = nalgebra::DVector::zeros(ll.n_vars);
    x[ll.p] = own.p_dbw;
    x[ll.mu] = own.mu_ln;
    x[ll.nu] = own.nu_ln;
    x[ll.rho] = own.rho;
    for (&i, &id) in &ll.t {
        x[id] = own.t_ln[&i];
    }
    for (&i, &id) in &ll.y_out {
        x[id] = own.y_out[&i];
    }
    for (&j, &id) in &ll.y_in {
        x[id] = own.y_in[&j];
    }
    for (&j, &id) in &ll.copy_t {
        x[id] = copies.t_ln[&j];
    }
    for (&j, &id) in &ll.copy_p {
        x[id] = copies.p_dbw[&j];
    }
    for (&j, &id) in &ll.copy_mu {
        x[id] = copies.mu_ln[&j];
    }
    for (&m, &id) in &ll.copy_nu {
        x[id] = copies.nu_ln[&m];
    }
    x
}

fn unpack_local(
    t: &crate::scenario::Topology,
    node: usize,
    ll: &LocalLayout,
    x: &nalgebra::DVector<f64>,
) -> (NodeVars, LocalCopies) {
    let mut own = NodeVars {
        p_dbw: x[ll.p],
        t_ln: BTreeMap::new(),
        mu_ln: x[ll.mu],
        nu_ln: x[ll.nu],
        y_out: BTreeMap::new(),
        y_in: BTreeMap::new(),
        rho: x[ll.rho],
    };
    for &i in &t.out_neighbors[node] {
        own.t_ln.insert(i, x[ll.t[&i]]);
        own.y_out.insert(i, x[ll.y_out[&i]]);
    }
    for &j in &t.in_neighbors[node] {
        own.y_in.insert(j, x[ll.y_in[&j]]);
    }
    let mut copies = LocalCopies {
        t_ln: BTreeMap::new(),
        p_dbw: BTreeMap::new(),
        mu_ln: BTreeMap::new(),
        nu_ln: BTreeMap::new(),
    };
    for &j in &t.in_neighbors[node] {
        copies.t_ln.insert(j, x[ll.copy_t[&j]]);
        copies.p_dbw.insert(j, x[ll.copy_p[&j]]);
        copies.mu_ln.insert(j, x[ll.copy_mu[&j]]);
    }
    for &m in &t.interference_union[node] {
        copies.nu_ln.insert(m, x[ll.copy_nu[&m]]);
    }
    (own, copies)
}

/// Prop-style precondition: each node must have a directed multihop path
/// to every node it is coupled with (in-, out-, and interference sets).
fn check_connectivity(model: &NetworkModel) -> Result<(), AdmmError> {
    let t = &model.topology;
    for node in 0..t.n_nodes {
        let mut targets: Vec<usize> = t.in_neighbors[node].clone();
        targets.extend(t.out_neighbors[node].iter().copied());
        targets.extend(t.interference_union[node].iter().copied());
        targets.sort_unstable();
        targets.dedup();
        // BFS over directed links, treating control exchange as possible
        // along either direction of a usable link (bidirectional control
        // channels)
        let mut seen = vec![false; t.n_nodes + 1];
        seen[node] = true;
        let mut frontier = vec![node];
        while let Some(u) = frontier.pop() {
            let mut push = |w: usize| {
                if !seen[w] {
                    seen[w] = true;
                    frontier.push(w);
                }
            };
            if u < t.n_nodes {
                for &w in &t.out_neighbors[u] {
                    push(w);
                }
            }
            for from in 0..t.n_nodes {
                if t.out_neighbors[from].contains(&u) {
                    push(from);
                }
            }
        }
        if let Some(&to) = targets.iter().find(|&&m| !seen[m]) {
            return Err(AdmmError::Disconnected { from: node, to });
        }
    }
    Ok(())
}

/// Run ADMM until the native consensus gap drops below `gap_tol` or
/// `max_rounds` elapse.
pub fn run_admm(
    model: &NetworkModel,
    anchor: &Solution,
    budgets: BTreeMap<(usize, usize), f64>,
    init: &Solution,
    params: AdmmParams,
) -> Result<AdmmOutcome, AdmmError> {
    let mut run = AdmmRun::new(model, anchor, budgets, init, params.clone())?;
    let mut messages = Vec::new();
    let mut counts = Vec::new();
    let mut flagged = Vec::new();
    let mut trace = Vec::new();
    let mut pair_gap_trace = Vec::new();
    let mut converged = false;
    // a network without consensus pairs is done after one local solve
    let coupled = {
        let t = &model.topology;
        (0..t.n_nodes).any(|n| !t.in_neighbors[n].is_empty() || !t.interference_union[n].is_empty())
    };
    for _ in 0..params.max_rounds {
        let record = run.step(&mut messages, &mut counts, &mut flagged);
        let (_, _, _, pairs) = run.gaps();
        pair_gap_trace.push(pairs);
        let done = record.max_gap < params.gap_tol && (!coupled || record.max_drift < params.drift_tol);
        trace.push(record);
        if done {
            converged = true;
            break;
        }
    }
    let mut interference_multipliers = BTreeMap::new();
    for (node, st) in run.state.iter().enumerate() {
        for (&r, &u) in &st.interference_multipliers {
            interference_multipliers.insert((r, node), u);
        }
    }
    Ok(AdmmOutcome {
        solution: run.solution(),
        rounds: trace.len(),
        converged,
        trace,
        pair_gap_trace,
        message_counts: counts,
        messages,
        flagged_rounds: flagged,
        interference_multipliers,
    })
}
