//! Network description: node/sink geometry, primary-user transmitters and
//! protection points, propagation statistics, and the derived topology
//! (neighbor sets, interference sets, protection-point neighborhoods).
//!
//! # Scenario file
//!
//! Scenarios are TOML. Powers are dBW, distances meters, interference caps
//! watts. Example:
//!
//! ```toml
//! schema = 1
//! name = "two-hop"
//!
//! [propagation]
//! pathloss_exponent = 3.5
//! shadow_std_db = 6.0
//! nakagami_m = 1.0
//!
//! [defaults]
//! noise_power_w = 1e-8
//! p_max_dbw = 0.0
//! sinr_threshold_db = -10.0
//!
//! [options]
//! epsilon_stability = 1e-3
//! cr_only = false
//!
//! [[nodes]]
//! id = 1
//! pos = [0.0, 0.0]
//!
//! [sink]
//! id = 2
//! pos = [120.0, 0.0]
//!
//! [[pu_transmitters]]
//! pos = [60.0, -400.0]
//! power_dbw = 10.0
//! active = true
//! duty_cycle = 1.0
//!
//! [[pu_points]]
//! pu = 1
//! pos = [60.0, -230.0]
//! cap_w = 1e-8
//! ```
//!
//! Per-node `noise_power_w` / `p_max_dbw` and per-link `[[sinr_overrides]]`
//! entries override the defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::units::db_to_lin;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("scenario validation failed: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

/// A CR node record. Ids are 1-based in the file; module consumers work
/// with 0-based indices (`0..n_nodes`, sink = `n_nodes`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRec {
    pub id: u32,
    /// Position in meters.
    pub pos: [f64; 2],
    /// Receiver noise power override, watts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power_w: Option<f64>,
    /// Maximum transmit-power override, dBW.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max_dbw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkRec {
    pub id: u32,
    pub pos: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuTransmitter {
    pub pos: [f64; 2],
    pub power_dbw: f64,
    /// Inactive transmitters contribute no interference and their
    /// protection points are dormant.
    #[serde(default = "default_true")]
    pub active: bool,
    /// Fraction of time slots the transmitter is on; drives the link
    /// availability model of the delivery simulator.
    #[serde(default = "default_duty")]
    pub duty_cycle: f64,
}

fn default_true() -> bool {
    true
}
fn default_duty() -> f64 {
    1.0
}

/// Protection point: average interference from the CR network measured here
/// must stay below `cap_w` while the owning PU is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuPoint {
    /// 1-based index into `pu_transmitters`.
    pub pu: u32,
    pub pos: [f64; 2],
    pub cap_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    /// Path-loss exponent, > 2.
    pub pathloss_exponent: f64,
    pub shadow_std_db: f64,
    pub nakagami_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    pub noise_power_w: f64,
    pub p_max_dbw: f64,
    pub sinr_threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Options {
    /// Queue-stability margin: the optimizer works with service probability
    /// `mu - epsilon` so simulated queues are strictly stable.
    #[serde(default = "default_epsilon")]
    pub epsilon_stability: f64,
    /// Conventional (non-CR) mode: interference constraints disabled and
    /// SINR statistics reduce to SNR.
    #[serde(default)]
    pub cr_only: bool,
    /// A node belongs to a protection point's neighborhood when its
    /// full-power average interference exceeds this fraction of the cap.
    #[serde(default = "default_membership")]
    pub pu_membership_fraction: f64,
    /// Availability model: a link is blocked while a PU within this radius
    /// of its transmitting endpoint is on.
    #[serde(default = "default_block_radius")]
    pub link_block_radius_m: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_membership() -> f64 {
    0.05
}
fn default_block_radius() -> f64 {
    0.0
}

impl Default for Options {
    fn default() -> Self {
        Options {
            epsilon_stability: default_epsilon(),
            cr_only: false,
            pu_membership_fraction: default_membership(),
            link_block_radius_m: default_block_radius(),
        }
    }
}

/// Per-link SINR threshold override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrOverride {
    pub from: u32,
    pub to: u32,
    pub threshold_db: f64,
}

/// Immutable network description. Construct via [`load_scenario`] or
/// [`Scenario::validate`]; all invariants hold afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub propagation: Propagation,
    pub defaults: Defaults,
    #[serde(default)]
    pub options: Options,
    pub nodes: Vec<NodeRec>,
    pub sink: SinkRec,
    #[serde(default)]
    pub pu_transmitters: Vec<PuTransmitter>,
    #[serde(default)]
    pub pu_points: Vec<PuPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sinr_overrides: Vec<SinrOverride>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    /// Number of CR nodes (sink excluded).
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Internal index of the sink.
    pub fn sink_idx(&self) -> usize {
        self.nodes.len()
    }

    /// Position by internal index (`0..=n_nodes`, sink last).
    pub fn pos(&self, idx: usize) -> [f64; 2] {
        if idx == self.sink_idx() {
            self.sink.pos
        } else {
            self.nodes[idx].pos
        }
    }

    /// 1-based display id for an internal index.
    pub fn display_id(&self, idx: usize) -> u32 {
        if idx == self.sink_idx() {
            self.sink.id
        } else {
            self.nodes[idx].id
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let pa = self.pos(a);
        let pb = self.pos(b);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    pub fn distance_to_point(&self, a: usize, p: [f64; 2]) -> f64 {
        let pa = self.pos(a);
        ((pa[0] - p[0]).powi(2) + (pa[1] - p[1]).powi(2)).sqrt()
    }

    /// Receiver noise power in watts at internal index `idx`.
    pub fn noise_w(&self, idx: usize) -> f64 {
        if idx == self.sink_idx() {
            self.sink.noise_power_w.unwrap_or(self.defaults.noise_power_w)
        } else {
            self.nodes[idx].noise_power_w.unwrap_or(self.defaults.noise_power_w)
        }
    }

    /// Maximum transmit power in dBW for CR node `idx`.
    pub fn p_max_dbw(&self, idx: usize) -> f64 {
        self.nodes[idx].p_max_dbw.unwrap_or(self.defaults.p_max_dbw)
    }

    /// SINR threshold in dB for directed link `from -> to` (internal indices).
    pub fn sinr_threshold_db(&self, from: usize, to: usize) -> f64 {
        let f = self.display_id(from);
        let t = self.display_id(to);
        self.sinr_overrides
            .iter()
            .find(|o| o.from == f && o.to == t)
            .map(|o| o.threshold_db)
            .unwrap_or(self.defaults.sinr_threshold_db)
    }

    /// Indices of active PU transmitters. Empty in `cr_only` mode.
    pub fn active_pus(&self) -> Vec<usize> {
        if self.options.cr_only {
            return Vec::new();
        }
        self.pu_transmitters
            .iter()
            .enumerate()
            .filter(|(_, p)| p.active)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of protection points whose owning PU is active.
    pub fn active_pu_points(&self) -> Vec<usize> {
        if self.options.cr_only {
            return Vec::new();
        }
        self.pu_points
            .iter()
            .enumerate()
            .filter(|(_, pt)| self.pu_transmitters[(pt.pu - 1) as usize].active)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != 1 {
            return Err(invalid(format!("unsupported schema version {}", self.schema)));
        }
        let n = self.nodes.len();
        if n < 1 {
            return Err(invalid("at least one CR node is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for rec in &self.nodes {
            if !seen.insert(rec.id) {
                return Err(invalid(format!("duplicate node id {}", rec.id)));
            }
        }
        for (k, rec) in self.nodes.iter().enumerate() {
            if rec.id as usize != k + 1 {
                return Err(invalid(format!(
                    "node ids must be contiguous 1..{}; found {} at position {}",
                    n,
                    rec.id,
                    k + 1
                )));
            }
        }
        if self.sink.id as usize != n + 1 {
            return Err(invalid(format!("sink id must be {} (N+1), found {}", n + 1, self.sink.id)));
        }
        let prop = &self.propagation;
        if !(prop.pathloss_exponent > 2.0) {
            return Err(invalid("pathloss_exponent must be > 2"));
        }
        if !(prop.shadow_std_db >= 0.0) {
            return Err(invalid("shadow_std_db must be >= 0"));
        }
        if !(prop.nakagami_m >= 0.5) {
            return Err(invalid("nakagami_m must be >= 0.5"));
        }
        for idx in 0..=n {
            let noise = self.noise_w(idx);
            if !(noise > 0.0) || !noise.is_finite() {
                return Err(invalid(format!("noise power at node index {idx} must be positive and finite")));
            }
        }
        let all_finite = self
            .nodes
            .iter()
            .all(|r| r.pos.iter().all(|v| v.is_finite()) && r.p_max_dbw.map_or(true, f64::is_finite))
            && self.sink.pos.iter().all(|v| v.is_finite())
            && self.defaults.p_max_dbw.is_finite()
            && self.defaults.sinr_threshold_db.is_finite();
        if !all_finite {
            return Err(invalid("positions and powers must be finite"));
        }
        // Zero distances create a path-loss singularity.
        for a in 0..=n {
            for b in (a + 1)..=n {
                if self.distance(a, b) == 0.0 {
                    return Err(invalid(format!(
                        "nodes {} and {} share a position (zero distance)",
                        self.display_id(a),
                        self.display_id(b)
                    )));
                }
            }
        }
        let eps = self.options.epsilon_stability;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("epsilon_stability must lie in (0, 1)"));
        }
        if !(self.options.pu_membership_fraction > 0.0 && self.options.pu_membership_fraction <= 1.0) {
            return Err(invalid("pu_membership_fraction must lie in (0, 1]"));
        }
        for (k, pu) in self.pu_transmitters.iter().enumerate() {
            if !pu.power_dbw.is_finite() || pu.pos.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("PU transmitter {} has non-finite fields", k + 1)));
            }
            if !(0.0..=1.0).contains(&pu.duty_cycle) {
                return Err(invalid(format!("PU transmitter {} duty_cycle outside [0, 1]", k + 1)));
            }
        }
        for (k, pt) in self.pu_points.iter().enumerate() {
            if pt.pu == 0 || pt.pu as usize > self.pu_transmitters.len() {
                return Err(invalid(format!(
                    "protection point {} references PU {} but only {} transmitters are defined",
                    k + 1,
                    pt.pu,
                    self.pu_transmitters.len()
                )));
            }
            if !(pt.cap_w > 0.0) || !pt.cap_w.is_finite() {
                return Err(invalid(format!("protection point {} cap must be positive", k + 1)));
            }
            for idx in 0..=n {
                if self.distance_to_point(idx, pt.pos) == 0.0 {
                    return Err(invalid(format!(
                        "protection point {} coincides with node {}",
                        k + 1,
                        self.display_id(idx)
                    )));
                }
            }
        }
        for o in &self.sinr_overrides {
            let ok = o.from as usize >= 1
                && o.from as usize <= n
                && o.to as usize >= 1
                && o.to as usize <= n + 1
                && o.from != o.to
                && o.threshold_db.is_finite();
            if !ok {
                return Err(invalid(format!("bad SINR override {} -> {}", o.from, o.to)));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML serialization (hex).
    pub fn full_hash(&self) -> String {
        let text = self.to_toml_string().expect("validated scenario serializes");
        hex_digest(text.as_bytes())
    }

    /// Hash of everything except PU activity flags and duty cycles, so runs
    /// of the same geometry under different PU states remain comparable.
    pub fn structural_hash(&self) -> String {
        let mut buf = String::new();
        let w = &mut buf;
        let _ = write!(
            w,
            "prop:{:.9}:{:.9}:{:.9};def:{:.9}:{:.9}:{:.9};opt:{:.9}:{}:{:.9};",
            self.propagation.pathloss_exponent,
            self.propagation.shadow_std_db,
            self.propagation.nakagami_m,
            self.defaults.noise_power_w,
            self.defaults.p_max_dbw,
            self.defaults.sinr_threshold_db,
            self.options.epsilon_stability,
            self.options.cr_only,
            self.options.pu_membership_fraction,
        );
        for rec in &self.nodes {
            let _ = write!(
                w,
                "n{}:{:.6}:{:.6}:{:?}:{:?};",
                rec.id, rec.pos[0], rec.pos[1], rec.noise_power_w, rec.p_max_dbw
            );
        }
        let _ = write!(w, "sink{}:{:.6}:{:.6};", self.sink.id, self.sink.pos[0], self.sink.pos[1]);
        for pu in &self.pu_transmitters {
            let _ = write!(w, "pu:{:.6}:{:.6}:{:.6};", pu.pos[0], pu.pos[1], pu.power_dbw);
        }
        for pt in &self.pu_points {
            let _ = write!(w, "pt{}:{:.6}:{:.6}:{:.12e};", pt.pu, pt.pos[0], pt.pos[1], pt.cap_w);
        }
        for o in &self.sinr_overrides {
            let _ = write!(w, "ov{}-{}:{:.6};", o.from, o.to, o.threshold_db);
        }
        hex_digest(buf.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml_str(&text)
}

/// Write a scenario back out; `load_scenario(save_scenario(s))` is identity.
pub fn save_scenario(s: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    std::fs::write(path, s.to_toml_string()?)?;
    Ok(())
}

/// How far a transmission is considered decodable when building neighbor
/// sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reach {
    /// Derive reachability from mean path loss against the decodability
    /// floor (see [`build_topology`]).
    Auto,
    /// Fixed radius in meters.
    Radius(f64),
}

/// Directed-link structure derived from a [`Scenario`]: neighbor sets,
/// per-link interference sets, and protection-point neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_nodes: usize,
    pub sink: usize,
    /// `out_neighbors[n]`: receivers that decode node `n` with usable
    /// reliability (may include the sink).
    pub out_neighbors: Vec<Vec<usize>>,
    /// `in_neighbors[n]`: CR nodes routing through `n` (sink excluded; the
    /// sink's entry collects nodes that reach it).
    pub in_neighbors: Vec<Vec<usize>>,
    /// `interference_sets[(n, i)]`: CR nodes other than `n`, `i` whose
    /// transmissions reach receiver `i`.
    pub interference_sets: BTreeMap<(usize, usize), Vec<usize>>,
    /// Union of a node's outgoing and incoming interference sets.
    pub interference_union: Vec<Vec<usize>>,
    /// `pu_neighborhoods[r]`: CR nodes near enough to active protection
    /// point `r` to matter for its cap. Dormant points get empty sets.
    pub pu_neighborhoods: Vec<Vec<usize>>,
    /// Non-fatal findings (e.g. a node that cannot reach the sink).
    pub warnings: Vec<String>,
}

impl Topology {
    pub fn has_link(&self, from: usize, to: usize) -> bool {
        self.out_neighbors[from].contains(&to)
    }

    /// Directed links as `(from, to)` pairs in deterministic order.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for (n, outs) in self.out_neighbors.iter().enumerate() {
            for &i in outs {
                v.push((n, i));
            }
        }
        v
    }

    /// Nodes `p` such that `m` belongs to `interference_union[p]`.
    pub fn interference_dependents(&self, m: usize) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&p| self.interference_union[p].contains(&m))
            .collect()
    }
}

/// Margin (dB) required for a usable link: the squared-margin auxiliaries
/// live above `sqrt(2)/2`, so the normalized SINR margin must clear
/// `2^(-1/4)` standard deviations, plus a guard for strict interiors.
pub const MARGIN_FLOOR_SIGMAS: f64 = 0.8408964152537145; // (sqrt(2)/2)^(1/2)
pub const MARGIN_GUARD_DB: f64 = 1.0;

/// Coarse decodability floor: mean received SNR at full power within 10 dB
/// of the SINR threshold. Also delimits interference membership.
pub const COARSE_FLOOR_DB: f64 = -10.0;

/// Build neighbor and interference sets.
///
/// A directed link `n -> i` is admitted when
/// 1. the mean received SNR at full power is at least `threshold - 10 dB`
///    (or the pair is within the explicit radius), and
/// 2. the full-statistics SINR margin at full power supports the
///    squared-margin floor: `Pmax + m - threshold >= 0.841 * sigma + 1 dB`.
///
/// Interference sets use criterion 1 alone: a node interferes at receiver
/// `i` whenever its signal arrives near decodable strength, decodable or
/// not.
pub fn build_topology(s: &Scenario, reach: Reach) -> Topology {
    let n = s.n_nodes();
    let sink = s.sink_idx();

    // coarse[m][i]: transmissions of m land at receiver i with non-negligible strength
    let mut coarse = vec![vec![false; n + 1]; n];
    let mut admitted = vec![vec![false; n + 1]; n];
    for from in 0..n {
        for to in 0..=n {
            if to == from {
                continue;
            }
            let near = match reach {
                Reach::Auto => {
                    let snr = crate::channel::link_stat_snr_only(s, from, to);
                    s.p_max_dbw(from) + snr.mean_offset_db - s.sinr_threshold_db(from, to) >= COARSE_FLOOR_DB
                }
                Reach::Radius(r) => s.distance(from, to) <= r,
            };
            coarse[from][to] = near;
            if near {
                let st = crate::channel::link_stat_between(s, from, to);
                let margin = s.p_max_dbw(from) + st.mean_offset_db - st.threshold_db;
                admitted[from][to] = margin >= MARGIN_FLOOR_SIGMAS * st.std_db + MARGIN_GUARD_DB;
            }
        }
    }

    let mut out_neighbors = vec![Vec::new(); n + 1];
    let mut in_neighbors = vec![Vec::new(); n + 1];
    for from in 0..n {
        for to in 0..=n {
            if admitted[from][to] {
                out_neighbors[from].push(to);
                in_neighbors[to].push(from);
            }
        }
    }

    let mut interference_sets = BTreeMap::new();
    for from in 0..n {
        for &to in &out_neighbors[from] {
            let ifs: Vec<usize> = (0..n).filter(|&m| m != from && m != to && coarse[m][to]).collect();
            interference_sets.insert((from, to), ifs);
        }
    }

    let mut interference_union = vec![Vec::new(); n];
    for node in 0..n {
        let mut set = std::collections::BTreeSet::new();
        for &i in &out_neighbors[node] {
            set.extend(interference_sets[&(node, i)].iter().copied());
        }
        for &j in &in_neighbors[node] {
            set.extend(interference_sets[&(j, node)].iter().copied());
        }
        interference_union[node] = set.into_iter().collect();
    }

    let mut pu_neighborhoods = vec![Vec::new(); s.pu_points.len()];
    let active_points = s.active_pu_points();
    for &r in &active_points {
        let pt = &s.pu_points[r];
        for node in 0..n {
            let st = crate::channel::node_to_point_stat(s, node, pt.pos);
            let full_power =
                db_to_lin(s.p_max_dbw(node) + st.mean_offset_db) * (crate::units::KAPPA.powi(2) * st.std_db.powi(2) / 2.0).exp();
            if full_power >= s.options.pu_membership_fraction * pt.cap_w {
                pu_neighborhoods[r].push(node);
            }
        }
    }

    let mut warnings = Vec::new();
    let reachable = sink_reachable(&out_neighbors, n, sink);
    for (node, ok) in reachable.iter().enumerate() {
        if !ok {
            warnings.push(format!(
                "node {} has no multihop path to the sink in the derived topology",
                node + 1
            ));
        }
    }

    Topology {
        n_nodes: n,
        sink,
        out_neighbors,
        in_neighbors,
        interference_sets,
        interference_union,
        pu_neighborhoods,
        warnings,
    }
}

/// `reachable[n]` is true when a directed multihop path `n -> ... -> sink`
/// exists. Computed by reverse BFS from the sink.
fn sink_reachable(out_neighbors: &[Vec<usize>], n: usize, sink: usize) -> Vec<bool> {
    let mut reach = vec![false; n];
    let mut frontier = vec![sink];
    let mut seen = vec![false; n + 1];
    seen[sink] = true;
    while let Some(v) = frontier.pop() {
        for from in 0..n {
            if !seen[from] && out_neighbors[from].contains(&v) {
                seen[from] = true;
                reach[from] = true;
                frontier.push(from);
            }
        }
    }
    reach
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_node_toml() -> String {
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
pos = [0.0, 0.0]

[sink]
id = 2
pos = [110.0, 0.0]
"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_loads() {
        let s = Scenario::from_toml_str(&two_node_toml()).unwrap();
        assert_eq!(s.n_nodes(), 1);
        assert_eq!(s.sink_idx(), 1);
        assert_eq!(s.display_id(1), 2);
        assert!((s.distance(0, 1) - 110.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_node_id_rejected() {
        let text = two_node_toml().replace(
            "[sink]",
            "[[nodes]]\nid = 1\npos = [50.0, 0.0]\n\n[sink]",
        );
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)), "{err}");
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn zero_distance_rejected() {
        let text = two_node_toml().replace("pos = [110.0, 0.0]", "pos = [0.0, 0.0]");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("zero distance"), "{err}");
    }

    #[test]
    fn single_link_topology() {
        let s = Scenario::from_toml_str(&two_node_toml()).unwrap();
        let t = build_topology(&s, Reach::Auto);
        assert_eq!(t.out_neighbors[0], vec![1]);
        assert!(t.interference_sets[&(0, 1)].is_empty());
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn out_of_reach_pair_has_empty_interference() {
        // Two nodes far from each other, both near the sink.
        let text = r#"
schema = 1

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

[[nodes]]
id = 2
pos = [0.0, 300.0]

[sink]
id = 3
pos = [0.0, 150.0]
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        let t = build_topology(&s, Reach::Radius(200.0));
        assert!(t.has_link(0, 2));
        assert!(t.has_link(1, 2));
        assert!(!t.has_link(0, 1));
        assert!(t.interference_sets[&(0, 2)].contains(&1));
        // Shrink the radius below the node-sink gap: nothing reaches anything.
        let t2 = build_topology(&s, Reach::Radius(100.0));
        assert_eq!(t2.warnings.len(), 2);
        assert!(t2.out_neighbors[0].is_empty());
    }

    #[test]
    fn topology_deterministic() {
        let s = Scenario::from_toml_str(&two_node_toml()).unwrap();
        assert_eq!(build_topology(&s, Reach::Auto), build_topology(&s, Reach::Auto));
    }

    #[test]
    fn structural_hash_ignores_activity() {
        let text = two_node_toml()
            + r#"
[[pu_transmitters]]
pos = [0.0, -400.0]
power_dbw = 10.0
active = true

[[pu_points]]
pu = 1
pos = [0.0, -200.0]
cap_w = 1e-8
"#;
        let s1 = Scenario::from_toml_str(&text).unwrap();
        let s2 = Scenario::from_toml_str(&text.replace("active = true", "active = false")).unwrap();
        assert_eq!(s1.structural_hash(), s2.structural_hash());
        assert_ne!(s1.full_hash(), s2.full_hash());
    }

    #[test]
    fn roundtrip_identity() {
        let text = two_node_toml()
            + r#"
[[pu_transmitters]]
pos = [3.0, -400.0]
power_dbw = 10.0
active = false
duty_cycle = 0.4

[[pu_points]]
pu = 1
pos = [0.5, -200.0]
cap_w = 1e-8

[[sinr_overrides]]
from = 1
to = 2
threshold_db = -8.0
"#;
        let s = Scenario::from_toml_str(&text).unwrap();
        let back = Scenario::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        assert_eq!(s, back);
    }
}
