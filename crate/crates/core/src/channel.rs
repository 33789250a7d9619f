//! Per-link SINR statistics and reliability primitives.
//!
//! The SINR of a link is `p * g / (noise + sum of PU interference)` with a
//! composite gain `g` = path loss x log-normal shadowing x Nakagami-m
//! small-scale fading. Working in the log domain, the dB-scale SINR is
//! approximately Gaussian with a mean offset `m` (at 0 dBW transmit power)
//! and std `sigma` per link:
//!
//! * the numerator gain is matched in the log domain (shadowing is exactly
//!   Gaussian in dB; the Nakagami term contributes its exact log-moments
//!   `psi(m) - ln m` and `psi'(m)`), which keeps the ccdf of the SINR
//!   accurate near the decoding threshold;
//! * the denominator (noise plus active-PU interference powers) is matched
//!   to a single log-normal by equating first and second linear moments,
//!   the classical treatment of log-normal sums;
//! * CR-to-protection-point gains are matched on linear moments so that the
//!   average-interference expression `mu * exp(kP + km + k^2 s^2 / 2)` is
//!   exact rather than approximate.

use std::collections::BTreeMap;

use crate::scenario::{Scenario, Topology};
use crate::units::{db_to_lin, KAPPA};

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("noise power must be positive, got {0}")]
    NonPositiveNoise(f64),
}

/// Gaussian statistics of a link's dB-scale SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkStat {
    /// Mean SINR in dB at 0 dBW transmit power.
    pub mean_offset_db: f64,
    /// Std of the dB-scale SINR.
    pub std_db: f64,
    /// Decoding threshold in dB.
    pub threshold_db: f64,
}

/// Log-normal parameters of a CR-to-protection-point channel gain,
/// expressed in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuPathStat {
    pub mean_offset_db: f64,
    pub std_db: f64,
}

impl PuPathStat {
    /// Average received power in watts for transmit power `p_dbw`:
    /// `exp(k(P + m) + k^2 s^2 / 2)`.
    pub fn mean_gain_times_power_w(&self, p_dbw: f64) -> f64 {
        (KAPPA * (p_dbw + self.mean_offset_db) + 0.5 * (KAPPA * self.std_db).powi(2)).exp()
    }
}

/// Statistics for every admitted link and every (node, protection point)
/// pair of a topology.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    pub links: BTreeMap<(usize, usize), LinkStat>,
    /// Keyed by (node, protection-point index); only active points appear.
    pub pu_paths: BTreeMap<(usize, usize), PuPathStat>,
}

impl LinkStats {
    pub fn link(&self, from: usize, to: usize) -> &LinkStat {
        &self.links[&(from, to)]
    }

    pub fn pu_path(&self, node: usize, point: usize) -> &PuPathStat {
        &self.pu_paths[&(node, point)]
    }
}

/// Mean path loss in dB for the `||x||^-eta` model.
fn pathloss_db(s: &Scenario, dist_m: f64) -> f64 {
    -10.0 * s.propagation.pathloss_exponent * dist_m.log10()
}

/// Log-domain mean and variance (nats, nats^2) of the composite gain over a
/// path with the scenario's shadowing/fading, excluding path loss.
fn composite_log_moments(s: &Scenario) -> (f64, f64) {
    let m = s.propagation.nakagami_m;
    let sh = s.propagation.shadow_std_db;
    let mean = digamma(m) - m.ln();
    let var = (KAPPA * sh).powi(2) + trigamma(m);
    (mean, var)
}

/// Linear-domain first moment and variance of the composite gain at unit
/// path loss.
fn composite_linear_moments(s: &Scenario) -> (f64, f64) {
    let m = s.propagation.nakagami_m;
    let sh = s.propagation.shadow_std_db;
    let shadow2 = (KAPPA * sh).powi(2);
    let e1 = (shadow2 / 2.0).exp();
    let e2 = (2.0 * shadow2).exp() * (1.0 + 1.0 / m);
    (e1, e2 - e1 * e1)
}

/// Log-normal parameters (nats) of the receiver-side denominator
/// `noise + sum of active PU interference` at node `rx`, by two-moment
/// matching of the sum.
fn denominator_log_moments(s: &Scenario, rx: usize) -> (f64, f64) {
    let noise = s.noise_w(rx);
    let (ce1, cvar) = composite_linear_moments(s);
    let mut mean = noise;
    let mut var = 0.0;
    for pu_idx in s.active_pus() {
        let pu = &s.pu_transmitters[pu_idx];
        let d = s.distance_to_point(rx, pu.pos);
        let gain = db_to_lin(pathloss_db(s, d));
        let p = db_to_lin(pu.power_dbw);
        mean += p * gain * ce1;
        var += (p * gain).powi(2) * cvar;
    }
    if var == 0.0 {
        return (mean.ln(), 0.0);
    }
    let s2 = (1.0 + var / (mean * mean)).ln();
    (mean.ln() - s2 / 2.0, s2)
}

/// Full SINR statistics for the directed pair `from -> to`, including
/// interference from the currently active PU transmitters.
pub fn link_stat_between(s: &Scenario, from: usize, to: usize) -> LinkStat {
    let (g_mean, g_var) = composite_log_moments(s);
    let loss_db = pathloss_db(s, s.distance(from, to));
    let (d_mean, d_var) = denominator_log_moments(s, to);
    LinkStat {
        mean_offset_db: loss_db + g_mean / KAPPA - d_mean / KAPPA,
        std_db: ((g_var + d_var).sqrt()) / KAPPA,
        threshold_db: s.sinr_threshold_db(from, to),
    }
}

/// SNR-only statistics (noise in the denominator, PU interference ignored);
/// used by the coarse reachability floor and by `cr_only` mode.
pub fn link_stat_snr_only(s: &Scenario, from: usize, to: usize) -> LinkStat {
    let (g_mean, g_var) = composite_log_moments(s);
    let loss_db = pathloss_db(s, s.distance(from, to));
    let noise_ln = s.noise_w(to).ln();
    LinkStat {
        mean_offset_db: loss_db + g_mean / KAPPA - noise_ln / KAPPA,
        std_db: g_var.sqrt() / KAPPA,
        threshold_db: s.sinr_threshold_db(from, to),
    }
}

/// Gain statistics from a CR node to an arbitrary point, linear-moment
/// matched (keeps the average-interference formula exact).
pub fn node_to_point_stat(s: &Scenario, node: usize, pos: [f64; 2]) -> PuPathStat {
    let loss = db_to_lin(pathloss_db(s, s.distance_to_point(node, pos)));
    let (ce1, cvar) = composite_linear_moments(s);
    let e1 = loss * ce1;
    let var = loss * loss * cvar;
    let s2 = (1.0 + var / (e1 * e1)).ln();
    let mu = e1.ln() - s2 / 2.0;
    PuPathStat {
        mean_offset_db: mu / KAPPA,
        std_db: s2.sqrt() / KAPPA,
    }
}

/// Compute statistics for every admitted link and active (node, point)
/// pair. In `cr_only` mode the PU terms drop and link statistics reduce to
/// the SNR form.
pub fn fenton_wilkinson_link_stats(s: &Scenario, t: &Topology) -> Result<LinkStats, ChannelError> {
    for idx in 0..=s.n_nodes() {
        let noise = s.noise_w(idx);
        if !(noise > 0.0) {
            return Err(ChannelError::NonPositiveNoise(noise));
        }
    }
    let mut links = BTreeMap::new();
    for (from, to) in t.links() {
        let st = if s.options.cr_only {
            link_stat_snr_only(s, from, to)
        } else {
            link_stat_between(s, from, to)
        };
        links.insert((from, to), st);
    }
    let mut pu_paths = BTreeMap::new();
    for r in s.active_pu_points() {
        let pt = &s.pu_points[r];
        for node in 0..s.n_nodes() {
            pu_paths.insert((node, r), node_to_point_stat(s, node, pt.pos));
        }
    }
    Ok(LinkStats { links, pu_paths })
}

/// Shift every mean offset by an independent `N(0, shadow_std^2)` draw.
///
/// Models one realized large-scale environment for Table-style averaging
/// over repeated experiments; stds are left untouched.
pub fn perturb_stats<R: rand::Rng>(stats: &LinkStats, shadow_std_db: f64, rng: &mut R) -> LinkStats {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, shadow_std_db.max(0.0)).expect("valid std");
    let mut out = stats.clone();
    for st in out.links.values_mut() {
        st.mean_offset_db += normal.sample(rng);
    }
    for st in out.pu_paths.values_mut() {
        st.mean_offset_db += normal.sample(rng);
    }
    out
}

/// Standard Gaussian tail `Q(x) = P{N(0,1) > x}`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Exponential-family bounds on `Q`. `alpha1 * exp(-alpha2 x^2)` from below
/// and `exp(-x^2/2)/12 + exp(-2x^2/3)/4` from above, tight for
/// `x > sqrt(2)/2`.
pub mod qbound {
    /// Lower-bound coefficient.
    pub const ALPHA1: f64 = 0.28;
    /// Lower-bound exponent.
    pub const ALPHA2: f64 = 0.64;
    /// The bounds are advertised for arguments at or above this floor.
    pub const X_MIN: f64 = std::f64::consts::FRAC_1_SQRT_2;
}

/// A bound evaluation, flagged when the argument sits below the advertised
/// validity floor (the value is still computed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEval {
    pub value: f64,
    pub in_region: bool,
}

pub fn q_upper_bound(x: f64) -> BoundEval {
    BoundEval {
        value: (-0.5 * x * x).exp() / 12.0 + (-2.0 * x * x / 3.0).exp() / 4.0,
        in_region: x >= qbound::X_MIN,
    }
}

pub fn q_lower_bound(x: f64) -> BoundEval {
    BoundEval {
        value: qbound::ALPHA1 * (-qbound::ALPHA2 * x * x).exp(),
        in_region: x >= qbound::X_MIN,
    }
}

/// Probability that a packet on the link is decoded: the product of the
/// interferers' silence probabilities and the SINR-outage complement.
///
/// `sigma = 0` degenerates to a step function: the product times the
/// indicator of a strictly positive margin.
pub fn link_reliability(p_dbw: f64, ls: &LinkStat, silence_probs: &[f64]) -> f64 {
    let collision_free: f64 = silence_probs.iter().product();
    let margin = p_dbw + ls.mean_offset_db - ls.threshold_db;
    if ls.std_db == 0.0 {
        return collision_free * if margin > 0.0 { 1.0 } else { 0.0 };
    }
    collision_free * q_function(-margin / ls.std_db)
}

/// Average interference in watts at one protection point,
/// `sum_n mu_n exp(k P_n + k m_n + k^2 s_n^2 / 2)`.
///
/// `budget_vars` pairs `(mu_n, P_n dBW)` with the matching entry of `stats`.
pub fn pu_interference(budget_vars: &[(f64, f64)], stats: &[PuPathStat]) -> f64 {
    budget_vars
        .iter()
        .zip(stats)
        .map(|(&(mu, p_dbw), st)| mu * st.mean_gain_times_power_w(p_dbw))
        .sum()
}

/// Digamma function, valid for positive arguments.
pub fn digamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 14.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

/// Trigamma function, valid for positive arguments.
pub fn trigamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < 14.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        * (1.0
            + inv * (0.5
                + inv * (1.0 / 6.0
                    - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))))))
}
