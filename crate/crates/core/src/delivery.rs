//! Packet-deliverability analysis and simulation.
//!
//! The network's one-slot behaviour for a tracked packet is a
//! column-stochastic matrix over packet locations: entry `(i, n)` is the
//! probability the packet hops from `n` to `i` (attempt probability x link
//! reliability x link availability), the diagonal keeps the residual mass,
//! and the sink is absorbing. Deliverability holds exactly when every node
//! has an availability-positive multihop path to the sink; the
//! corresponding limit distribution piles all mass on the sink.
//!
//! The Monte-Carlo engine replays the same dynamics packet by packet
//! (tagged mode) or as a full slotted queueing system with exogenous
//! arrivals (queue mode). Collisions are drawn either per link from the
//! silence product (the independence model the analysis uses) or from
//! actual simultaneous transmissions in the interference sets, with idle
//! nodes transmitting dummy packets so the collision pressure matches the
//! fully-backlogged analysis.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{NetworkModel, Solution};
use crate::scenario::{Scenario, Topology};

#[derive(Debug, thiserror::Error)]
pub enum DeliveryError {
    #[error("node {node} forwards more than unit probability mass ({mass:.6})")]
    MassExceedsOne { node: usize, mass: f64 },
    #[error("entry out of range on link {from}->{to}: {value}")]
    BadEntry { from: usize, to: usize, value: f64 },
}

/// Column-stochastic one-slot packet-location transition matrix; state
/// `n_nodes` is the absorbing sink.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryMatrix {
    pub d: DMatrix<f64>,
    pub n_nodes: usize,
}

impl DeliveryMatrix {
    pub fn sink(&self) -> usize {
        self.n_nodes
    }

    /// Largest deviation of any column sum from one.
    pub fn column_sum_error(&self) -> f64 {
        let ones = DVector::from_element(self.n_nodes + 1, 1.0);
        let sums = self.d.transpose() * ones;
        sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Build the matrix from per-link attempt probabilities (`routes`, row
/// sums at most one per node), link reliabilities, and availabilities.
///
/// For the optimizer's output the attempt probability of link `n -> i` is
/// `mu_n * t_{n->i}`; callers tracking pure routing decisions can pass the
/// routing probabilities directly.
pub fn build_delivery_matrix(
    n_nodes: usize,
    routes: &BTreeMap<(usize, usize), f64>,
    reliabilities: &BTreeMap<(usize, usize), f64>,
    availability: &BTreeMap<(usize, usize), f64>,
) -> Result<DeliveryMatrix, DeliveryError> {
    let sink = n_nodes;
    let mut d = DMatrix::zeros(n_nodes + 1, n_nodes + 1);
    for (&(from, to), &t) in routes {
        let r = reliabilities.get(&(from, to)).copied().unwrap_or(0.0);
        let chi = availability.get(&(from, to)).copied().unwrap_or(1.0);
        for (name, v) in [("route", t), ("reliability", r), ("availability", chi)] {
            if !(0.0..=1.0 + 1e-12).contains(&v) {
                let _ = name;
                return Err(DeliveryError::BadEntry { from, to, value: v });
            }
        }
        d[(to, from)] = t * r * chi;
    }
    for n in 0..n_nodes {
        let moved: f64 = (0..=n_nodes).filter(|&i| i != n).map(|i| d[(i, n)]).sum();
        if moved > 1.0 + 1e-9 {
            return Err(DeliveryError::MassExceedsOne { node: n, mass: moved });
        }
        d[(n, n)] = (1.0 - moved).max(0.0);
    }
    // the sink forwards nothing
    for i in 0..n_nodes {
        d[(i, sink)] = 0.0;
    }
    d[(sink, sink)] = 1.0;
    Ok(DeliveryMatrix { d, n_nodes })
}

/// Deliverability verdict for an availability-weighted topology.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliverabilityReport {
    pub deliverable: bool,
    /// Minimum number of slots after which the sink is reachable from
    /// every node with positive probability (when deliverable).
    pub t_star: Option<usize>,
    /// Nodes that can receive but cannot forward: incoming routing toward
    /// them should be disabled.
    pub blocked_nodes: Vec<usize>,
}

/// Check the absorbing-chain conditions on the average-connectivity graph
/// (links weighted by availability):
///
/// 1. no node with incoming links has all of them unavailable,
/// 2. some node reaches the sink with positive availability,
/// 3. every node has an availability-positive multihop path to the sink.
pub fn check_deliverability(topology: &Topology, availability: &BTreeMap<(usize, usize), f64>) -> DeliverabilityReport {
    let n = topology.n_nodes;
    let sink = topology.sink;
    let chi = |from: usize, to: usize| availability.get(&(from, to)).copied().unwrap_or(1.0);

    let mut blocked_nodes = Vec::new();
    for node in 0..n {
        let has_in = !topology.in_neighbors[node].is_empty();
        let out_alive = topology.out_neighbors[node].iter().any(|&i| chi(node, i) > 0.0);
        if has_in && !out_alive {
            blocked_nodes.push(node);
        }
    }
    let incoming_ok = (0..n).all(|node| {
        topology.in_neighbors[node].is_empty()
            || topology.in_neighbors[node].iter().any(|&j| chi(j, node) > 0.0)
    });
    let sink_fed = topology.in_neighbors[sink].iter().any(|&j| chi(j, sink) > 0.0);

    // BFS distances to the sink over availability-positive links
    let mut dist = vec![usize::MAX; n + 1];
    dist[sink] = 0;
    let mut frontier = VecDeque::from([sink]);
    while let Some(v) = frontier.pop_front() {
        for from in 0..n {
            if dist[from] == usize::MAX && topology.out_neighbors[from].contains(&v) && chi(from, v) > 0.0 {
                dist[from] = dist[v] + 1;
                frontier.push_back(from);
            }
        }
    }
    let all_reach = (0..n).all(|v| dist[v] != usize::MAX);
    let deliverable = incoming_ok && sink_fed && all_reach && blocked_nodes.is_empty();
    let t_star = deliverable.then(|| (0..n).map(|v| dist[v]).max().unwrap_or(0));
    DeliverabilityReport {
        deliverable,
        t_star,
        blocked_nodes,
    }
}

/// A (possibly time-varying) transition schedule.
pub enum DeliverySchedule {
    Constant(DeliveryMatrix),
    /// Matrices applied cyclically.
    Cycle(Vec<DeliveryMatrix>),
}

impl DeliverySchedule {
    fn at(&self, slot: usize) -> &DeliveryMatrix {
        match self {
            DeliverySchedule::Constant(d) => d,
            DeliverySchedule::Cycle(v) => &v[slot % v.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LimitReport {
    /// Location distribution at the stopping slot.
    pub theta: DVector<f64>,
    /// Sink mass after each slot.
    pub sink_mass: Vec<f64>,
    pub slots: usize,
    pub converged: bool,
}

/// Iterate the location distribution from unit mass at `origin` until all
/// but `tol` of it sits on the sink, or `t_max` slots elapse.
pub fn limit_distribution(schedule: &DeliverySchedule, origin: usize, tol: f64, t_max: usize) -> LimitReport {
    let n_states = schedule.at(0).d.nrows();
    let sink = n_states - 1;
    let mut theta = DVector::zeros(n_states);
    theta[origin] = 1.0;
    let mut sink_mass = Vec::new();
    let mut converged = false;
    let mut slots = 0;
    for slot in 0..t_max {
        theta = &schedule.at(slot).d * theta;
        sink_mass.push(theta[sink]);
        slots = slot + 1;
        if 1.0 - theta[sink] < tol {
            converged = true;
            break;
        }
    }
    LimitReport {
        theta,
        sink_mass,
        slots,
        converged,
    }
}

/// How packet losses from concurrent transmissions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionModel {
    /// Bernoulli per link with the silence product (matches the analysis).
    IndependentPerLink,
    /// Collisions from actual simultaneous transmissions in the
    /// interference sets; idle nodes send dummy packets.
    SimultaneousDraws,
}

/// Everything the simulator needs, decoupled from the optimizer types.
#[derive(Debug, Clone)]
pub struct SimulationInputs {
    pub n_nodes: usize,
    pub sink: usize,
    /// Physical transmit probability per node.
    pub mu: Vec<f64>,
    /// Routing probabilities per link (sums at most one per node).
    pub routes: BTreeMap<(usize, usize), f64>,
    /// SINR-margin success probability per link.
    pub margin_success: BTreeMap<(usize, usize), f64>,
    /// Silence product per link (independence model).
    pub silence: BTreeMap<(usize, usize), f64>,
    /// Interferer lists per link (simultaneous model).
    pub interferers: BTreeMap<(usize, usize), Vec<usize>>,
    /// Availability per link.
    pub chi: BTreeMap<(usize, usize), f64>,
}

impl SimulationInputs {
    /// Assemble simulator inputs from a solved model, with optional
    /// per-link availability overriding the scenario-derived values.
    pub fn from_solution(
        model: &NetworkModel,
        sol: &Solution,
        availability: Option<BTreeMap<(usize, usize), f64>>,
    ) -> Self {
        let t = &model.topology;
        let eps = model.epsilon();
        let chi = availability.unwrap_or_else(|| chi_from_scenario(&model.scenario, t));
        let mut routes = BTreeMap::new();
        let mut margin_success = BTreeMap::new();
        let mut silence = BTreeMap::new();
        let mut interferers = BTreeMap::new();
        for (from, to) in t.links() {
            let st = model.stats.link(from, to);
            let margin = sol.nodes[from].p_dbw + st.mean_offset_db - st.threshold_db;
            routes.insert((from, to), sol.nodes[from].t(to));
            margin_success.insert((from, to), 1.0 - crate::channel::q_function(margin / st.std_db));
            let set = &t.interference_sets[&(from, to)];
            silence.insert(
                (from, to),
                set.iter().map(|&m| 1.0 - sol.nodes[m].mu_phys(eps)).product(),
            );
            interferers.insert((from, to), set.clone());
        }
        SimulationInputs {
            n_nodes: t.n_nodes,
            sink: t.sink,
            mu: (0..t.n_nodes).map(|n| sol.nodes[n].mu_phys(eps)).collect(),
            routes,
            margin_success,
            silence,
            interferers,
            chi,
        }
    }

    /// Analytic per-link reliability under the independence model.
    pub fn reliabilities(&self) -> BTreeMap<(usize, usize), f64> {
        self.routes
            .keys()
            .map(|&k| (k, self.silence[&k] * self.margin_success[&k]))
            .collect()
    }

    /// Attempt probabilities `mu_n t_{n->i}` for the location chain.
    pub fn attempt_probabilities(&self) -> BTreeMap<(usize, usize), f64> {
        self.routes
            .iter()
            .map(|(&(from, to), &t)| ((from, to), self.mu[from] * t))
            .collect()
    }
}

/// Per-link availability from PU duty cycles: a link is blocked while any
/// active PU within the scenario's blocking radius of its transmitter is
/// on, with independent on/off states across slots.
pub fn chi_from_scenario(s: &Scenario, t: &Topology) -> BTreeMap<(usize, usize), f64> {
    let radius = s.options.link_block_radius_m;
    let mut chi = BTreeMap::new();
    for (from, to) in t.links() {
        let mut avail = 1.0;
        if radius > 0.0 {
            for &k in &s.active_pus() {
                let pu = &s.pu_transmitters[k];
                if s.distance_to_point(from, pu.pos) <= radius {
                    avail *= 1.0 - pu.duty_cycle;
                }
            }
        }
        chi.insert((from, to), avail);
    }
    chi
}

#[derive(Debug, Clone)]
pub struct TaggedStats {
    pub delivered: usize,
    pub total: usize,
    pub fraction: f64,
    /// Delivery delays in slots, one entry per delivered packet.
    pub delays: Vec<usize>,
}

impl TaggedStats {
    pub fn mean_delay(&self) -> f64 {
        if self.delays.is_empty() {
            return f64::NAN;
        }
        self.delays.iter().sum::<usize>() as f64 / self.delays.len() as f64
    }
}

/// Track `n_packets` independent packets injected at `origin` for up to
/// `t_max` slots each. Packet trajectories reproduce the location-chain
/// dynamics exactly under the independence model; under simultaneous
/// draws the other nodes contribute dummy-transmission collisions.
pub fn monte_carlo_tagged(
    inputs: &SimulationInputs,
    origin: usize,
    n_packets: usize,
    t_max: usize,
    seed: u64,
    collision: CollisionModel,
) -> TaggedStats {
    let mut delays = Vec::new();
    for packet in 0..n_packets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(packet as u64 + 1);
        let mut pos = origin;
        for slot in 0..t_max {
            if pos == inputs.sink {
                break;
            }
            if let Some(next) = step_packet(inputs, pos, &mut rng, collision) {
                pos = next;
                if pos == inputs.sink {
                    delays.push(slot + 1);
                    break;
                }
            }
        }
    }
    let delivered = delays.len();
    TaggedStats {
        delivered,
        total: n_packets,
        fraction: delivered as f64 / n_packets as f64,
        delays,
    }
}

/// One slot of a held packet at `pos`: returns the new location if the
/// packet moved.
fn step_packet<R: Rng>(
    inputs: &SimulationInputs,
    pos: usize,
    rng: &mut R,
    collision: CollisionModel,
) -> Option<usize> {
    if rng.random::<f64>() >= inputs.mu[pos] {
        return None;
    }
    // choose a next hop from the routing pmf (residual mass holds)
    let mut u: f64 = rng.random();
    let mut chosen = None;
    for (&(from, to), &t) in inputs.routes.range((pos, 0)..(pos + 1, 0)) {
        debug_assert_eq!(from, pos);
        if u < t {
            chosen = Some(to);
            break;
        }
        u -= t;
    }
    let to = chosen?;
    let link = (pos, to);
    if rng.random::<f64>() >= inputs.chi.get(&link).copied().unwrap_or(1.0) {
        return None;
    }
    if rng.random::<f64>() >= inputs.margin_success[&link] {
        return None;
    }
    let survived = match collision {
        CollisionModel::IndependentPerLink => rng.random::<f64>() < inputs.silence[&link],
        CollisionModel::SimultaneousDraws => inputs.interferers[&link]
            .iter()
            .all(|&m| rng.random::<f64>() >= inputs.mu[m]),
    };
    survived.then_some(to)
}

#[derive(Debug, Clone)]
pub struct QueueSimStats {
    pub slots: usize,
    pub arrived: usize,
    pub delivered: usize,
    /// Time-averaged queue length per node.
    pub mean_queue: Vec<f64>,
    /// Sampled total backlog: (slot, total queued packets).
    pub backlog_trace: Vec<(usize, usize)>,
    /// Least-squares slope of the total backlog in packets per slot; a
    /// stable system hovers around zero.
    pub drift_slope: f64,
    pub delays: Vec<usize>,
}

/// Slotted queueing simulation with exogenous Bernoulli arrivals at
/// `rates` and the solution's MAC/routing parameters. All nodes transmit
/// with their MAC probability every slot (dummy packets when empty), so
/// collision pressure matches the fully-backlogged analysis.
pub fn monte_carlo_queues(
    inputs: &SimulationInputs,
    rates: &[f64],
    slots: usize,
    seed: u64,
    collision: CollisionModel,
) -> QueueSimStats {
    let n = inputs.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
    let mut arrived = 0usize;
    let mut delays = Vec::new();
    let mut queue_accum = vec![0f64; n];
    let mut backlog_trace = Vec::new();
    let sample_every = (slots / 200).max(1);

    for slot in 0..slots {
        for (node, &rate) in rates.iter().enumerate() {
            if rng.random::<f64>() < rate {
                queues[node].push_back(slot);
                arrived += 1;
            }
        }
        // transmission decisions first: the dominant system transmits
        // dummies from empty queues, so every node draws
        let transmitting: Vec<bool> = (0..n).map(|node| rng.random::<f64>() < inputs.mu[node]).collect();
        let mut moves: Vec<(usize, usize)> = Vec::new();
        for node in 0..n {
            if !transmitting[node] {
                continue;
            }
            let mut u: f64 = rng.random();
            let mut chosen = None;
            for (&(from, to), &t) in inputs.routes.range((node, 0)..(node + 1, 0)) {
                debug_assert_eq!(from, node);
                if u < t {
                    chosen = Some(to);
                    break;
                }
                u -= t;
            }
            let Some(to) = chosen else { continue };
            if queues[node].is_empty() {
                continue; // dummy transmission: collides, carries nothing
            }
            let link = (node, to);
            if rng.random::<f64>() >= inputs.chi.get(&link).copied().unwrap_or(1.0) {
                continue;
            }
            if rng.random::<f64>() >= inputs.margin_success[&link] {
                continue;
            }
            let survived = match collision {
                CollisionModel::IndependentPerLink => rng.random::<f64>() < inputs.silence[&link],
                CollisionModel::SimultaneousDraws => {
                    inputs.interferers[&link].iter().all(|&m| !transmitting[m])
                }
            };
            if survived {
                moves.push((node, to));
            }
        }
        for (from, to) in moves {
            if let Some(birth) = queues[from].pop_front() {
                if to == inputs.sink {
                    delays.push(slot + 1 - birth);
                } else {
                    queues[to].push_back(birth);
                }
            }
        }
        for node in 0..n {
            queue_accum[node] += queues[node].len() as f64;
        }
        if slot % sample_every == 0 {
            backlog_trace.push((slot, queues.iter().map(|q| q.len()).sum()));
        }
    }

    // least-squares slope of the sampled backlog
    let m = backlog_trace.len() as f64;
    let mean_x = backlog_trace.iter().map(|&(s, _)| s as f64).sum::<f64>() / m;
    let mean_y = backlog_trace.iter().map(|&(_, q)| q as f64).sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(s, q) in &backlog_trace {
        num += (s as f64 - mean_x) * (q as f64 - mean_y);
        den += (s as f64 - mean_x).powi(2);
    }
    let drift_slope = if den > 0.0 { num / den } else { 0.0 };

    QueueSimStats {
        slots,
        arrived,
        delivered: delays.len(),
        mean_queue: queue_accum.iter().map(|&q| q / slots as f64).collect(),
        backlog_trace,
        drift_slope,
        delays,
    }
}
