//! Acceptance suite: every release gate runs here at its stated tolerance
//! and prints one PASS/FAIL line (visible with `--nocapture`).
//!
//! Gate summary:
//!  1. Gaussian-tail bound sandwich and tightness on a dense grid.
//!  2. Log-normal SINR model vs brute-force Monte Carlo, every link.
//!  3. Surrogate loop: feasible iterates, monotone objective, bounded
//!     iteration count on the seven-node scenario.
//!  4. KKT certificate at the final point.
//!  5. One- and two-node instances vs exhaustive grid search.
//!  6. Distributed consensus matches the centralized subproblem solve.
//!  7. Interference caps hold at every iterate of the full pipeline.
//!  8. Budget reallocation settles within the first iterations.
//!  9. Deactivating the second PU raises the southern rates and the sum
//!     rate by at least 20% over 20 averaged trials.
//! 10. Absorbing-chain delivery: analysis vs simulation, plus the negative
//!     (blocked-node) case.
//! 11. Capped-simplex projection vs an exhaustive KKT-enumeration QP
//!     oracle (and the barrier kernel at its own precision).
//! 12. Byte-identical artifacts for identical (scenario, config, seed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use statroute::admm::{run_admm, AdmmParams};
use statroute::budget::{project_capped_simplex, run_full, BudgetAllocation, FullRunConfig};
use statroute::channel::{q_function, q_lower_bound, q_upper_bound};
use statroute::convex::{solve, SolveOptions};
use statroute::delivery::{
    build_delivery_matrix, check_deliverability, limit_distribution, monte_carlo_tagged, CollisionModel,
    DeliverySchedule, SimulationInputs,
};
use statroute::model::{
    exact_constraint_values, outgoing_loss, ModelOptions, NetworkModel, Solution, VarLayout,
};
use statroute::report::{self, RunConfig, RunMode};
use statroute::sca::{build_surrogate, find_feasible_start, sca_iterate, InterferenceBudgets};
use statroute::scenario::{load_scenario, Reach, Scenario};
use statroute::units::db_to_lin;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR")))
}

fn seven_node(name: &str) -> NetworkModel {
    let s = load_scenario(&scenario_path(name)).expect("scenario loads");
    NetworkModel::new(s, Reach::Auto, ModelOptions::default()).expect("model builds")
}

fn gate(number: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "{} criterion {:02}: {} ({})",
        if pass { "PASS" } else { "FAIL" },
        number,
        name,
        detail
    );
    assert!(pass, "criterion {number} failed: {name}: {detail}");
}

#[test]
fn criterion_01_q_bound_sandwich() {
    let t0 = Instant::now();
    let mut violations = 0usize;
    let mut worst_gap = 0.0f64;
    let mut x = std::f64::consts::FRAC_1_SQRT_2;
    while x <= 6.0 + 1e-12 {
        let q = q_function(x);
        let lo = q_lower_bound(x).value;
        let hi = q_upper_bound(x).value;
        if !(lo <= q && q <= hi) {
            violations += 1;
        }
        if x >= 1.0 {
            // tightness in the quantity the bounds actually model: the
            // bracket width of the decoding probability 1 - Q(x)
            let gap = (hi - lo) / (1.0 - q);
            worst_gap = worst_gap.max(gap);
        }
        x += 0.01;
    }
    let elapsed = t0.elapsed();
    gate(
        1,
        "Q-bound sandwich",
        violations == 0 && worst_gap <= 0.20 && elapsed.as_secs_f64() < 1.0,
        &format!("violations={violations}, worst relative bracket {worst_gap:.4}, {elapsed:?}"),
    );
}

/// Brute-force ccdf of the true SINR of a link, drawing every random
/// factor of the propagation model.
fn mc_ccdf(s: &Scenario, from: usize, to: usize, draws: usize, seed: u64) -> f64 {
    use rand_distr::Distribution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = s.propagation.nakagami_m;
    let shadow = rand_distr::Normal::new(0.0, s.propagation.shadow_std_db).unwrap();
    let gamma = rand_distr::Gamma::new(m, 1.0 / m).unwrap();
    let eta = s.propagation.pathloss_exponent;
    let loss = s.distance(from, to).powf(-eta);
    let noise = s.noise_w(to);
    let thresh = db_to_lin(s.sinr_threshold_db(from, to));
    let pus: Vec<(f64, f64)> = s
        .active_pus()
        .iter()
        .map(|&k| {
            let pu = &s.pu_transmitters[k];
            (db_to_lin(pu.power_dbw), s.distance_to_point(to, pu.pos).powf(-eta))
        })
        .collect();
    let mut hits = 0usize;
    for _ in 0..draws {
        let g = loss * db_to_lin(shadow.sample(&mut rng)) * gamma.sample(&mut rng);
        let mut den = noise;
        for &(pp, pl) in &pus {
            den += pp * pl * db_to_lin(shadow.sample(&mut rng)) * gamma.sample(&mut rng);
        }
        if g / den > thresh {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

#[test]
fn criterion_02_fenton_wilkinson_fidelity() {
    let t0 = Instant::now();
    let model = seven_node("seven_node_two_pu");
    let mut worst = 0.0f64;
    let mut worst_link = (0, 0);
    for (k, (from, to)) in model.topology.links().into_iter().enumerate() {
        let st = model.stats.link(from, to);
        let analytic = q_function((st.threshold_db - st.mean_offset_db) / st.std_db);
        let mc = mc_ccdf(&model.scenario, from, to, 1_000_000, 7_000 + k as u64);
        let err = (analytic - mc).abs();
        if err > worst {
            worst = err;
            worst_link = (from + 1, to + 1);
        }
    }
    let elapsed = t0.elapsed();
    gate(
        2,
        "Fenton-Wilkinson ccdf fidelity",
        worst < 0.02 && elapsed.as_secs_f64() < 60.0,
        &format!("worst |model - mc| = {worst:.4} on link {worst_link:?}, {elapsed:?}"),
    );
}

#[test]
fn criterion_03_and_04_sca_feasible_monotone_kkt() {
    let t0 = Instant::now();
    let model = seven_node("seven_node_two_pu");
    let layout = VarLayout::new(&model.topology);
    let start = find_feasible_start(&model).expect("feasible start");
    let out = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).expect("sca run");
    let feasible = out.trace.iter().all(|r| r.max_violation <= 1e-8);
    let monotone = out.trace.windows(2).all(|w| w[1].objective >= w[0].objective - model.options.sca_tol);
    let elapsed = t0.elapsed();
    gate(
        3,
        "SCA feasibility and monotonicity",
        feasible && monotone && out.converged && out.trace.len() <= 25 && elapsed.as_secs_f64() < 300.0,
        &format!(
            "iterations={}, converged={}, worst violation {:.2e}, {elapsed:?}",
            out.trace.len(),
            out.converged,
            out.trace.iter().map(|r| r.max_violation).fold(f64::NEG_INFINITY, f64::max)
        ),
    );
    let kkt = out.final_kkt.max();
    gate(4, "KKT certificate", kkt <= 1e-5, &format!("residual {kkt:.2e}"));
}

fn tiny_scenario(two_nodes: bool) -> Scenario {
    let nodes = if two_nodes {
        r#"
[[nodes]]
id = 1
pos = [0.0, 60.0]

[[nodes]]
id = 2
pos = [0.0, -60.0]

[sink]
id = 3
pos = [100.0, 0.0]
"#
    } else {
        r#"
[[nodes]]
id = 1
pos = [0.0, 0.0]

[sink]
id = 2
pos = [100.0, 0.0]
"#
    };
    Scenario::from_toml_str(&format!(
        r#"
schema = 1
name = "tiny"

[propagation]
pathloss_exponent = 3.5
shadow_std_db = 6.0
nakagami_m = 1.0

[defaults]
noise_power_w = 1e-8
p_max_dbw = 0.0
sinr_threshold_db = -10.0
{nodes}"#
    ))
    .expect("tiny scenario")
}

#[test]
fn criterion_05_small_instance_grid_oracles() {
    // one node: exhaustive grid over (mu, P) of the bound-model rate
    let model1 = NetworkModel::new(tiny_scenario(false), Reach::Auto, ModelOptions::default()).unwrap();
    let layout1 = VarLayout::new(&model1.topology);
    let start1 = find_feasible_start(&model1).unwrap();
    let sca1 = sca_iterate(&model1, &layout1, &start1, &InterferenceBudgets::Shared).unwrap();
    let st = model1.stats.link(0, 1);
    let eps = model1.epsilon();
    let mut best1 = 0.0f64;
    for mu_step in 1..=4000 {
        let mu_bar = mu_step as f64 / 4000.0 * (1.0 - eps);
        for p_step in 0..=400 {
            let p = -20.0 + p_step as f64 * 0.05;
            if p > model1.scenario.p_max_dbw(0) {
                break;
            }
            let x = (p + st.mean_offset_db - st.threshold_db) / st.std_db;
            if x * x < statroute::model::Y_FLOOR {
                continue;
            }
            best1 = best1.max(mu_bar * (1.0 - outgoing_loss(x * x)));
        }
    }
    let got1 = sca1.solution.objective(&model1);
    let err1 = (got1 - best1).abs();

    // two symmetric nodes: grid over (mu, P, cross-routing split), the
    // symmetric reduction of the full search space
    let model2 = NetworkModel::new(tiny_scenario(true), Reach::Auto, ModelOptions::default()).unwrap();
    let layout2 = VarLayout::new(&model2.topology);
    let start2 = find_feasible_start(&model2).unwrap();
    let sca2 = sca_iterate(&model2, &layout2, &start2, &InterferenceBudgets::Shared).unwrap();
    let st_sink = model2.stats.link(0, 2);
    let st_cross = model2.stats.link(0, 1);
    let mut best2 = 0.0f64;
    for mu_step in 1..400 {
        let mu_bar = mu_step as f64 / 400.0 * (1.0 - eps);
        let nu = 1.0 - eps - mu_bar;
        for p_step in 0..=80 {
            let p = -20.0 + p_step as f64 * 0.25;
            if p > 0.0 {
                break;
            }
            let xs = (p + st_sink.mean_offset_db - st_sink.threshold_db) / st_sink.std_db;
            let xc = (p + st_cross.mean_offset_db - st_cross.threshold_db) / st_cross.std_db;
            if xs * xs < statroute::model::Y_FLOOR || xc * xc < statroute::model::Y_FLOOR {
                continue;
            }
            for t_step in 0..=50 {
                let t_cross = t_step as f64 / 50.0;
                let t_sink = 1.0 - t_cross;
                // the sink link collides with the other node; the cross
                // link has an empty interference set
                let out_lb = mu_bar
                    * (t_sink * nu * (1.0 - outgoing_loss(xs * xs))
                        + t_cross * (1.0 - outgoing_loss(xc * xc)));
                let in_ub = mu_bar
                    * t_cross
                    * (1.0 - statroute::channel::qbound::ALPHA1 * (-statroute::channel::qbound::ALPHA2 * xc * xc).exp());
                let rho = (out_lb - in_ub).max(0.0).min(1.0);
                best2 = best2.max(2.0 * rho);
            }
        }
    }
    let got2 = sca2.solution.objective(&model2);
    let err2 = (got2 - best2).abs();
    gate(
        5,
        "small-instance grid oracle",
        err1 < 1e-3 && err2 < 1e-3,
        &format!("one-node |{got1:.6} - {best1:.6}| = {err1:.2e}; two-node |{got2:.6} - {best2:.6}| = {err2:.2e}"),
    );
}

#[test]
fn criterion_06_admm_consensus() {
    let t0 = Instant::now();
    let model = seven_node("seven_node_two_pu");
    let layout = VarLayout::new(&model.topology);
    let start = find_feasible_start(&model).unwrap();
    let alloc = BudgetAllocation::distance_proportional(&model);
    let budgets = alloc.budgets();
    let program = build_surrogate(&model, &layout, &start, &budgets);
    let central = solve(&program, &layout.pack(&start), &SolveOptions::default()).unwrap();
    let map = match budgets {
        InterferenceBudgets::PerNode(m) => m,
        InterferenceBudgets::Shared => unreachable!(),
    };
    let params = AdmmParams {
        beta: 0.1,
        c: 1.0,
        max_rounds: 3000,
        gap_tol: 1e-5,
        drift_tol: 1.5e-4,
        ..AdmmParams::default()
    };
    let out = run_admm(&model, &start, map, &start, params).unwrap();
    let early_gap_ok = out.trace.iter().take(15).any(|r| r.max_gap_t < 0.01);
    let admm_obj = out.trace.last().unwrap().objective;
    let gap = (admm_obj - central.objective).abs();
    let elapsed = t0.elapsed();
    gate(
        6,
        "ADMM consensus and optimality",
        early_gap_ok && gap < 1e-3 && elapsed.as_secs_f64() < 600.0,
        &format!(
            "routing gap <1% within 15 rounds: {early_gap_ok}; |admm - central| = {gap:.2e} after {} rounds; {elapsed:?}",
            out.rounds
        ),
    );
}

#[test]
fn criterion_07_and_08_online_safety_and_budget_stabilization() {
    let t0 = Instant::now();
    let model = seven_node("seven_node_two_pu");
    let out = run_full(&model, &FullRunConfig::default()).expect("full pipeline");
    let cap_dbw = -80.0;
    let mut worst_dbw = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for rec in &out.budget_trace {
        let dbw = statroute::units::watts_to_dbw(rec.realized_point_w);
        worst_dbw = worst_dbw.max(dbw);
        if dbw > cap_dbw + 1e-9 {
            violations += 1;
        }
    }
    // the realized interference is also re-checked against the exact
    // constraint system at the final point
    let exact_ok = exact_constraint_values(&model, &out.solution)
        .into_iter()
        .all(|(_, v)| v <= 1e-8);
    gate(
        7,
        "online PU safety",
        violations == 0 && exact_ok,
        &format!(
            "{} trace records, worst realized {:.2} dBW vs cap {:.0} dBW",
            out.budget_trace.len(),
            worst_dbw,
            cap_dbw
        ),
    );
    gate(
        8,
        "budget stabilization",
        out.budget_active_until <= 8,
        &format!("allocations moved >=1% only through iteration {} ({:?})", out.budget_active_until, t0.elapsed()),
    );
}

#[test]
fn criterion_09_pu_adaptation_over_trials() {
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut summaries = Vec::new();
    for (idx, name) in ["seven_node_two_pu", "seven_node_pu2_off"].iter().enumerate() {
        let config = RunConfig {
            mode: RunMode::Full,
            scenario: scenario_path(name),
            out_dir: tmp.path().join(format!("run{idx}")),
            seed: 20_260_810,
            trials: 20,
            ..RunConfig::default()
        };
        summaries.push(report::run(&config).expect("trial run").summary);
    }
    let rates = |s: &serde_json::Value| -> Vec<f64> {
        s["mean_rates"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()
    };
    // per-trial rates for standard errors of the means
    let per_trial = |dir: &Path| -> Vec<Vec<f64>> {
        let text = std::fs::read_to_string(dir.join("rates.csv")).expect("rates.csv");
        let mut by_trial: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("trial")) {
            let p: Vec<&str> = line.split(',').collect();
            let trial: usize = p[0].parse().unwrap();
            by_trial.entry(trial).or_default().push(p[2].parse().unwrap());
        }
        by_trial.into_values().collect()
    };
    let t1_trials = per_trial(&tmp.path().join("run0"));
    let t2_trials = per_trial(&tmp.path().join("run1"));
    let sem = |trials: &[Vec<f64>], node: usize| -> f64 {
        let m = trials.len() as f64;
        let mean = trials.iter().map(|t| t[node]).sum::<f64>() / m;
        let var = trials.iter().map(|t| (t[node] - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    };
    let r1 = rates(&summaries[0]);
    let r2 = rates(&summaries[1]);
    let sum1: f64 = r1.iter().sum();
    let sum2: f64 = r2.iter().sum();
    // display ids 2, 4, 5 are indices 1, 3, 4; means compared modulo the
    // sampling noise of 20 random realizations (exact per-node values are
    // not reproducible, only directions)
    let south_ok = [1usize, 3, 4].iter().all(|&n| {
        let noise = 3.0 * (sem(&t1_trials, n).powi(2) + sem(&t2_trials, n).powi(2)).sqrt();
        r2[n] >= r1[n] - noise.max(1e-9)
    });
    let ratio = sum2 / sum1;
    let elapsed = t0.elapsed();
    gate(
        9,
        "PU adaptation direction",
        south_ok && sum2 > sum1 && ratio >= 1.2,
        &format!(
            "mean rates test1 {:?} vs test2 {:?}; sums {sum1:.4} -> {sum2:.4} (x{ratio:.2}); {elapsed:?}",
            r1.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
            r2.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_10_delivery_limit_and_negative_case() {
    let t0 = Instant::now();
    let model = seven_node("seven_node_two_pu");
    let layout = VarLayout::new(&model.topology);
    let start = find_feasible_start(&model).unwrap();
    let sca = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
    let chi: BTreeMap<(usize, usize), f64> = model.topology.links().into_iter().map(|l| (l, 1.0)).collect();
    let inputs = SimulationInputs::from_solution(&model, &sca.solution, Some(chi.clone()));
    let d = build_delivery_matrix(
        model.n_nodes(),
        &inputs.attempt_probabilities(),
        &inputs.reliabilities(),
        &inputs.chi,
    )
    .unwrap();
    // analysis: the sink eventually absorbs everything from every origin
    let mut all_converge = true;
    let mut slowest = 0usize;
    for origin in 0..model.n_nodes() {
        let rep = limit_distribution(&DeliverySchedule::Constant(d.clone()), origin, 1e-3, 300_000);
        all_converge &= rep.converged;
        slowest = slowest.max(rep.slots);
    }
    // simulation at a matched horizon from the farthest-typical origin
    let origin = 1; // display id 2, deepest node
    let analytic = limit_distribution(&DeliverySchedule::Constant(d.clone()), origin, 5e-4, 300_000);
    let t_match = analytic.slots;
    let p_analytic = *analytic.sink_mass.last().unwrap();
    let n_packets = 10_000;
    let mc = monte_carlo_tagged(&inputs, origin, n_packets, t_match, 99, CollisionModel::IndependentPerLink);
    let se = (p_analytic * (1.0 - p_analytic) / n_packets as f64).sqrt();
    let mc_ok = (mc.fraction - p_analytic).abs() <= 3.0 * se.max(1e-4);

    // negative case: a node that can receive but never forward
    let mut blocked_chi = chi;
    for &to in &model.topology.out_neighbors[3] {
        blocked_chi.insert((3, to), 0.0);
    }
    let verdict = check_deliverability(&model.topology, &blocked_chi);
    let negative_ok = !verdict.deliverable && verdict.blocked_nodes.contains(&3);
    let elapsed = t0.elapsed();
    gate(
        10,
        "delivery limit & Monte Carlo agreement",
        all_converge && mc_ok && negative_ok,
        &format!(
            "all origins reach 0.999 (slowest {slowest} slots); mc {:.4} vs analytic {p_analytic:.4} (3se {:.4}); blocked-node verdict {:?}; {elapsed:?}",
            mc.fraction,
            3.0 * se,
            verdict.blocked_nodes.iter().map(|n| n + 1).collect::<Vec<_>>()
        ),
    );
}

/// Exhaustive KKT enumeration for the projection QP
/// `min 0.5||x - v||^2 over {x >= 0, sum x <= cap}`: try every free-set
/// pattern and return the unique candidate satisfying all KKT conditions.
fn projection_by_kkt_enumeration(v: &[f64], cap: f64) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    let d = v.len();
    for mask in 1u32..(1 << d) {
        let free: Vec<usize> = (0..d).filter(|&i| mask >> i & 1 == 1).collect();
        let sum_free: f64 = free.iter().map(|&i| v[i]).sum();
        let theta = (sum_free - cap) / free.len() as f64;
        if theta < -1e-15 {
            continue;
        }
        let ok_free = free.iter().all(|&i| v[i] - theta > -1e-15);
        let ok_zero = (0..d).filter(|i| mask >> i & 1 == 0).all(|i| v[i] - theta <= 1e-15);
        if ok_free && ok_zero {
            let mut x = vec![0.0; d];
            for &i in &free {
                x[i] = (v[i] - theta).max(0.0);
            }
            return x;
        }
    }
    unreachable!("projection KKT system always has a solution")
}

#[test]
fn criterion_11_projection_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_enum = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=10);
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..2.0)).collect();
        let cap = rng.random_range(0.1..2.5);
        let fast = project_capped_simplex(&v, cap);
        let oracle = projection_by_kkt_enumeration(&v, cap);
        for (a, b) in fast.iter().zip(&oracle) {
            worst_enum = worst_enum.max((a - b).abs());
        }
    }
    // cross-check a subsample against the barrier kernel at its own
    // floating-point precision
    let mut worst_kernel = 0.0f64;
    for _ in 0..30 {
        let d = rng.random_range(2..=10);
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.5)).collect();
        let cap = rng.random_range(0.2..2.0);
        let fast = project_capped_simplex(&v, cap);
        let mut p = statroute::convex::ConvexProgram::new();
        for k in 0..d {
            p.add_var(format!("x{k}"), 0.0, cap + 1.0);
        }
        for (k, &vk) in v.iter().enumerate() {
            p.objective.push(statroute::convex::ObjTerm::NegQuad {
                var: k,
                half_weight: 0.5,
                center: vk,
            });
        }
        p.add_row(
            statroute::convex::RowLabel::Other("cap".into()),
            statroute::convex::ConstraintTerm::Affine {
                lin: (0..d).map(|k| (k, 1.0)).collect(),
                constant: -cap,
            },
        );
        let start = nalgebra::DVector::from_element(d, cap / (2.0 * d as f64));
        let r = solve(&p, &start, &SolveOptions { tol: 1e-10, ..SolveOptions::default() }).unwrap();
        for k in 0..d {
            worst_kernel = worst_kernel.max((r.x[k] - fast[k]).abs());
        }
    }
    gate(
        11,
        "projection exactness",
        worst_enum < 1e-9 && worst_kernel < 1e-6,
        &format!("worst vs KKT enumeration {worst_enum:.2e} (1000 instances); worst vs barrier kernel {worst_kernel:.2e}"),
    );
}

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("read out dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("read artifact"),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn criterion_12_determinism() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut dirs = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("det{run}"));
        let config = RunConfig {
            mode: RunMode::ScaCentral,
            scenario: scenario_path("seven_node_two_pu"),
            out_dir: out.clone(),
            seed: 77,
            trials: 3,
            ..RunConfig::default()
        };
        report::run(&config).expect("run");
        dirs.push(out);
    }
    let a = artifact_bytes(&dirs[0]);
    let b = artifact_bytes(&dirs[1]);
    let identical = a == b;
    gate(
        12,
        "byte-identical artifacts",
        identical && !a.is_empty(),
        &format!("{} files compared", a.len()),
    );
}
