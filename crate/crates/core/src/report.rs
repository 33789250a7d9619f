//! Pipeline runs and machine-readable artifacts.
//!
//! A run loads a scenario, executes one of the pipeline modes, and writes
//! CSV traces plus a JSON summary into an output directory. Every CSV
//! carries a provenance comment line (scenario hashes, build, seed) and
//! all numeric output is deterministic for a fixed (scenario, config,
//! seed) triple; trials of an averaged run execute concurrently on derived
//! seeds without affecting the aggregate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{run_admm, AdmmParams};
use crate::budget::{run_full, FullRunConfig, InnerSolver};
use crate::delivery::{
    build_delivery_matrix, check_deliverability, chi_from_scenario, limit_distribution, monte_carlo_queues,
    monte_carlo_tagged, CollisionModel, DeliverySchedule, SimulationInputs,
};
use crate::model::{link_reliabilities, ModelOptions, NetworkModel, NodeVars, Solution, VarLayout};
use crate::sca::{find_feasible_start, sca_iterate, InterferenceBudgets};
use crate::scenario::{load_scenario, Reach, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Sca(#[from] crate::sca::ScaError),
    #[error(transparent)]
    Budget(#[from] crate::budget::BudgetError),
    #[error(transparent)]
    Admm(#[from] crate::admm::AdmmError),
    #[error(transparent)]
    Delivery(#[from] crate::delivery::DeliveryError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl PipelineError {
    /// True for errors caused by bad inputs rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Scenario(_) | PipelineError::Config(_) | PipelineError::Io(_) | PipelineError::Artifact(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Centralized surrogate loop with network-wide interference rows.
    ScaCentral,
    /// Surrogate loop with fixed per-node budgets, subproblems solved by
    /// distributed ADMM.
    Admm,
    /// Full nested pipeline: surrogate loop, interference-budget master,
    /// centralized or distributed inner solves.
    Full,
    /// Deliverability analysis of a stored solution.
    Deliver,
    /// Monte-Carlo packet simulation of a stored solution.
    Mc,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunMode::ScaCentral => "sca-central",
            RunMode::Admm => "admm",
            RunMode::Full => "full",
            RunMode::Deliver => "deliver",
            RunMode::Mc => "mc",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: RunMode,
    pub scenario: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Number of shadowing realizations to average (1 = nominal statistics
    /// only).
    pub trials: usize,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    /// ADMM dual step and penalty.
    pub beta: f64,
    pub c: f64,
    /// Initial master step.
    pub xi0: f64,
    /// Remark-4 style fixed budget split (skips the master).
    pub fixed_budgets: bool,
    /// Solve inner problems distributedly in `full` mode.
    pub distributed_inner: bool,
    /// Cap on ADMM rounds per solve (online operation truncates).
    pub admm_max_rounds: usize,
    /// Results directory holding the solution for `deliver`/`mc`.
    pub solution_from: Option<PathBuf>,
    /// Override every link availability with a constant.
    pub chi: Option<f64>,
    pub mc_packets: usize,
    pub mc_slots: usize,
    /// Record the ADMM message ledger to `messages.ndjson`.
    pub dump_messages: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::ScaCentral,
            scenario: PathBuf::new(),
            out_dir: PathBuf::new(),
            seed: 1,
            trials: 1,
            max_iters: None,
            tol: None,
            beta: 0.1,
            c: 1.0,
            xi0: 1.0,
            fixed_budgets: false,
            distributed_inner: false,
            admm_max_rounds: 400,
            solution_from: None,
            chi: None,
            mc_packets: 10_000,
            mc_slots: 100_000,
            dump_messages: false,
        }
    }
}

/// Build identifier stamped into artifact headers.
fn build_id() -> String {
    option_env!("STATROUTE_BUILD")
        .map(str::to_string)
        .unwrap_or_else(|| format!("statroute-{}", env!("CARGO_PKG_VERSION")))
}

struct ArtifactWriter {
    dir: PathBuf,
    header: String,
    files: Vec<(String, String)>,
}

impl ArtifactWriter {
    fn new(dir: &Path, scenario: &Scenario, seed: u64) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            header: format!(
                "# scenario_sha256={} structural_sha256={} build={} seed={}\n",
                scenario.full_hash(),
                scenario.structural_hash(),
                build_id(),
                seed
            ),
            files: Vec::new(),
        })
    }

    fn write_csv(&mut self, name: &str, header_row: &str, rows: &[String]) -> Result<(), PipelineError> {
        let mut text = self.header.clone();
        text.push_str(header_row);
        text.push('\n');
        for row in rows {
            text.push_str(row);
            text.push('\n');
        }
        std::fs::write(self.dir.join(name), &text)?;
        self.files.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    }

    fn write_raw(&mut self, name: &str, text: &str) -> Result<(), PipelineError> {
        std::fs::write(self.dir.join(name), text)?;
        self.files.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Serializable solution snapshot (maps flattened into pair lists).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub nodes: Vec<NodeFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeFile {
    pub p_dbw: f64,
    pub mu_ln: f64,
    pub nu_ln: f64,
    pub rho: f64,
    pub t_ln: Vec<(usize, f64)>,
    pub y_out: Vec<(usize, f64)>,
    pub y_in: Vec<(usize, f64)>,
}

impl SolutionFile {
    pub fn from_solution(sol: &Solution) -> Self {
        SolutionFile {
            nodes: sol
                .nodes
                .iter()
                .map(|nv| NodeFile {
                    p_dbw: nv.p_dbw,
                    mu_ln: nv.mu_ln,
                    nu_ln: nv.nu_ln,
                    rho: nv.rho,
                    t_ln: nv.t_ln.iter().map(|(&k, &v)| (k, v)).collect(),
                    y_out: nv.y_out.iter().map(|(&k, &v)| (k, v)).collect(),
                    y_in: nv.y_in.iter().map(|(&k, &v)| (k, v)).collect(),
                })
                .collect(),
        }
    }

    pub fn into_solution(self) -> Solution {
        Solution {
            nodes: self
                .nodes
                .into_iter()
                .map(|nf| NodeVars {
                    p_dbw: nf.p_dbw,
                    mu_ln: nf.mu_ln,
                    nu_ln: nf.nu_ln,
                    rho: nf.rho,
                    t_ln: nf.t_ln.into_iter().collect(),
                    y_out: nf.y_out.into_iter().collect(),
                    y_in: nf.y_in.into_iter().collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub summary: serde_json::Value,
    pub out_dir: PathBuf,
}

/// One optimization trial: perturbed model (trial > 0 derives a fresh
/// shadowing realization) solved in the configured mode.
struct TrialResult {
    trial: usize,
    model: NetworkModel,
    solution: Solution,
    objective: f64,
    converged: bool,
    iterations: usize,
    kkt: f64,
    sca_rows: Vec<String>,
    budget_rows: Vec<String>,
    admm_rows: Vec<String>,
    pair_rows: Vec<String>,
    message_lines: Vec<String>,
    safety_ok: bool,
}

fn model_options(config: &RunConfig) -> ModelOptions {
    let mut options = ModelOptions::default();
    if let Some(m) = config.max_iters {
        options.sca_max_iters = m;
    }
    if let Some(t) = config.tol {
        options.sca_tol = t;
    }
    options
}

fn trial_model(scenario: &Scenario, config: &RunConfig, trial: usize) -> Result<NetworkModel, PipelineError> {
    let nominal = NetworkModel::new(scenario.clone(), Reach::Auto, model_options(config))?;
    if config.trials <= 1 {
        return Ok(nominal);
    }
    // a realization occasionally prunes enough marginal links to strand a
    // node; experiments are drawn over workable topologies, so resample
    // such draws on derived substreams (deterministic given the seed)
    for attempt in 0..24u64 {
        let mut model = nominal.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1_000 + trial as u64 + attempt * 100_000);
        model.apply_shadow_realization(&mut rng);
        let connected = model.topology.warnings.is_empty()
            && (0..model.n_nodes()).all(|n| !model.topology.out_neighbors[n].is_empty())
            && sinkward_ok(&model);
        if connected {
            return Ok(model);
        }
    }
    Err(PipelineError::Config(format!(
        "trial {trial}: no connected shadowing realization within the resampling budget"
    )))
}

fn sinkward_ok(model: &NetworkModel) -> bool {
    let t = &model.topology;
    let mut seen = vec![false; t.n_nodes + 1];
    seen[t.sink] = true;
    let mut frontier = vec![t.sink];
    while let Some(v) = frontier.pop() {
        for from in 0..t.n_nodes {
            if !seen[from] && t.out_neighbors[from].contains(&v) {
                seen[from] = true;
                frontier.push(from);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn run_trial(scenario: &Scenario, config: &RunConfig, trial: usize) -> Result<TrialResult, PipelineError> {
    let model = trial_model(scenario, config, trial)?;
    let layout = VarLayout::new(&model.topology);
    let mut sca_rows = Vec::new();
    let mut budget_rows = Vec::new();
    let mut admm_rows = Vec::new();
    let mut pair_rows = Vec::new();
    let mut message_lines = Vec::new();
    let mut safety_ok = true;

    let (solution, objective, converged, iterations, kkt) = match config.mode {
        RunMode::ScaCentral => {
            let start = find_feasible_start(&model)?;
            let out = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared)?;
            for rec in &out.trace {
                sca_rows.push(format!(
                    "{trial},{},{:.12e},{:.3e},{:.3e},{}",
                    rec.iter, rec.objective, rec.max_violation, rec.kkt_residual, rec.newton_steps
                ));
            }
            let obj = out.solution.objective(&model);
            (out.solution, obj, out.converged, out.trace.len(), out.final_kkt.max())
        }
        RunMode::Admm => {
            let params = AdmmParams {
                beta: config.beta,
                c: config.c,
                max_rounds: config.admm_max_rounds,
                record_messages: config.dump_messages,
                ..AdmmParams::default()
            };
            let fc = FullRunConfig {
                inner_solver: InnerSolver::Admm(params),
                fixed_budgets: true,
                xi0: config.xi0,
                ..FullRunConfig::default()
            };
            let out = run_full(&model, &fc)?;
            emit_budget_rows(&out.budget_trace, trial, &mut budget_rows);
            for rec in &out.sca_trace {
                sca_rows.push(format!(
                    "{trial},{},{:.12e},{:.3e},{:.3e},0",
                    rec.iter, rec.objective, rec.max_violation, rec.kkt_residual
                ));
            }
            let obj = out.solution.objective(&model);
            let iters = out.sca_trace.len();
            (out.solution, obj, out.converged, iters, out.final_kkt.feasibility)
        }
        RunMode::Full => {
            let inner = if config.distributed_inner {
                InnerSolver::Admm(AdmmParams {
                    beta: config.beta,
                    c: config.c,
                    max_rounds: config.admm_max_rounds,
                    record_messages: config.dump_messages,
                    ..AdmmParams::default()
                })
            } else {
                InnerSolver::Centralized
            };
            let fc = FullRunConfig {
                inner_solver: inner,
                fixed_budgets: config.fixed_budgets,
                xi0: config.xi0,
                ..FullRunConfig::default()
            };
            let out = run_full(&model, &fc)?;
            emit_budget_rows(&out.budget_trace, trial, &mut budget_rows);
            for rec in &out.sca_trace {
                sca_rows.push(format!(
                    "{trial},{},{:.12e},{:.3e},{:.3e},0",
                    rec.iter, rec.objective, rec.max_violation, rec.kkt_residual
                ));
            }
            safety_ok = out
                .budget_trace
                .iter()
                .all(|r| r.realized_point_w <= r.cap_w * (1.0 + 1e-9));
            let obj = out.solution.objective(&model);
            let iters = out.sca_trace.len();
            (out.solution, obj, out.converged, iters, out.final_kkt.max())
        }
        RunMode::Deliver | RunMode::Mc => {
            return Err(PipelineError::Config(
                "deliver/mc modes analyse stored solutions; run_trial does not apply".into(),
            ))
        }
    };

    // a single dedicated ADMM consensus trace for the first trial of admm
    // runs (Fig.-4-style data)
    if config.mode == RunMode::Admm && trial == 0 {
        let start = find_feasible_start(&model)?;
        let params = AdmmParams {
            beta: config.beta,
            c: config.c,
            max_rounds: config.admm_max_rounds,
            record_messages: config.dump_messages,
            ..AdmmParams::default()
        };
        let budgets = match crate::budget::BudgetAllocation::distance_proportional(&model).budgets() {
            InterferenceBudgets::PerNode(m) => m,
            InterferenceBudgets::Shared => BTreeMap::new(),
        };
        let out = run_admm(&model, &start, budgets, &start, params)?;
        for rec in &out.trace {
            admm_rows.push(format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                rec.round, rec.max_gap, rec.max_gap_t, rec.objective, rec.residual_sq, rec.max_drift
            ));
        }
        for (round, pairs) in out.pair_gap_trace.iter().enumerate() {
            for ((owner, holder), gap) in pairs {
                pair_rows.push(format!("{round},{},{},{:.12e}", owner + 1, holder + 1, gap));
            }
        }
        for msg in &out.messages {
            message_lines.push(
                serde_json::json!({
                    "round": msg.round,
                    "sender": msg.sender + 1,
                    "receiver": msg.receiver + 1,
                    "kind": format!("{:?}", msg.kind),
                    "subject": msg.subject + 1,
                    "values": msg.values,
                })
                .to_string(),
            );
        }
    }

    Ok(TrialResult {
        trial,
        model,
        solution,
        objective,
        converged,
        iterations,
        kkt,
        sca_rows,
        budget_rows,
        admm_rows,
        pair_rows,
        message_lines,
        safety_ok,
    })
}

fn emit_budget_rows(trace: &[crate::budget::BudgetRecord], trial: usize, rows: &mut Vec<String>) {
    for rec in trace {
        rows.push(format!(
            "{trial},{},{},{},{},{:.12e},{:.12e},{:.12e}",
            rec.ell,
            rec.k,
            rec.point + 1,
            rec.node + 1,
            rec.budget_w,
            rec.realized_point_w,
            rec.cap_w
        ));
    }
}

/// Execute a pipeline run and write its artifacts.
pub fn run(config: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    let scenario = load_scenario(&config.scenario)?;
    match config.mode {
        RunMode::ScaCentral | RunMode::Admm | RunMode::Full => run_optimization(config, scenario),
        RunMode::Deliver => run_deliver(config, scenario),
        RunMode::Mc => run_mc(config, scenario),
    }
}

fn run_optimization(config: &RunConfig, scenario: Scenario) -> Result<RunArtifacts, PipelineError> {
    if config.trials == 0 {
        return Err(PipelineError::Config("trials must be at least 1".into()));
    }
    // trials run concurrently on derived seeds; results are merged in
    // trial order so the artifacts stay deterministic
    let trials: Vec<TrialResult> = if config.trials == 1 {
        vec![run_trial(&scenario, config, 0)?]
    } else {
        let parallelism = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1).min(8);
        let results: Vec<std::sync::Mutex<Option<Result<TrialResult, PipelineError>>>> =
            (0..config.trials).map(|_| std::sync::Mutex::new(None)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..parallelism {
                scope.spawn(|| loop {
                    let t = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if t >= config.trials {
                        break;
                    }
                    let out = run_trial(&scenario, config, t);
                    *results[t].lock().expect("trial slot") = Some(out);
                });
            }
        });
        let mut collected = Vec::with_capacity(config.trials);
        for slot in results {
            collected.push(slot.into_inner().expect("trial slot").expect("every trial ran")?);
        }
        collected
    };

    let mut writer = ArtifactWriter::new(&config.out_dir, &scenario, config.seed)?;
    let nominal = &trials[0];
    let n = nominal.model.n_nodes();

    // rate table (averaged over trials)
    let mut rate_rows = Vec::new();
    let mut mean_rates = vec![0.0f64; n];
    for tr in &trials {
        for (node, r) in tr.solution.rates().iter().enumerate() {
            mean_rates[node] += r / trials.len() as f64;
            rate_rows.push(format!("{},{},{:.12e}", tr.trial, node + 1, r));
        }
    }
    writer.write_csv("rates.csv", "trial,node,rho", &rate_rows)?;
    let mut mean_rows = Vec::new();
    for (node, r) in mean_rates.iter().enumerate() {
        mean_rows.push(format!("{},{:.12e}", node + 1, r));
    }
    writer.write_csv("rates_mean.csv", "node,rho_mean", &mean_rows)?;

    // routing and outage tables from the nominal trial
    let mut routing_rows = Vec::new();
    let mut outage_rows = Vec::new();
    let rel = link_reliabilities(&nominal.model, &nominal.solution);
    let eps = nominal.model.epsilon();
    for (from, to) in nominal.model.topology.links() {
        let nv = &nominal.solution.nodes[from];
        let lr = rel[&(from, to)];
        routing_rows.push(format!(
            "{},{},{:.12e},{:.12e}",
            from + 1,
            to + 1,
            nv.t(to),
            nv.mu_phys(eps) * nv.t(to)
        ));
        outage_rows.push(format!(
            "{},{},{:.12e},{:.12e},{:.12e}",
            from + 1,
            to + 1,
            lr.outage,
            lr.exact_q,
            lr.lower_model
        ));
    }
    writer.write_csv("routing.csv", "from,to,t,attempt_prob", &routing_rows)?;
    writer.write_csv("outage.csv", "from,to,outage,reliability,reliability_lower_model", &outage_rows)?;

    // powers and MAC parameters
    let mut node_rows = Vec::new();
    for (node, nv) in nominal.solution.nodes.iter().enumerate() {
        node_rows.push(format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            node + 1,
            nv.p_dbw,
            nv.mu_phys(eps),
            nv.nu_ln.exp(),
            nv.rho
        ));
    }
    writer.write_csv("nodes.csv", "node,p_dbw,mu,nu,rho", &node_rows)?;

    let sca_rows: Vec<String> = trials.iter().flat_map(|t| t.sca_rows.clone()).collect();
    writer.write_csv(
        "sca_trace.csv",
        "trial,iter,objective,max_violation,kkt_residual,newton_steps",
        &sca_rows,
    )?;
    let budget_rows: Vec<String> = trials.iter().flat_map(|t| t.budget_rows.clone()).collect();
    if !budget_rows.is_empty() {
        writer.write_csv(
            "budget_trace.csv",
            "trial,ell,k,point,node,budget_w,realized_point_w,cap_w",
            &budget_rows,
        )?;
    }
    if !nominal.admm_rows.is_empty() {
        writer.write_csv(
            "admm_consensus.csv",
            "round,max_gap,max_gap_t,objective,residual_sq,max_drift",
            &nominal.admm_rows,
        )?;
        writer.write_csv("admm_pairs.csv", "round,owner,holder,gap_t", &nominal.pair_rows)?;
    }
    if !nominal.message_lines.is_empty() {
        writer.write_raw("messages.ndjson", &(nominal.message_lines.join("\n") + "\n"))?;
    }

    let solution_json = serde_json::to_string_pretty(&SolutionFile::from_solution(&nominal.solution))
        .map_err(|e| PipelineError::Artifact(e.to_string()))?;
    writer.write_raw("solution.json", &solution_json)?;

    // realized interference per active point (nominal trial)
    let mut interference_rows = Vec::new();
    for (r, cap) in nominal.model.active_points() {
        let realized = nominal.solution.realized_interference(&nominal.model, r);
        interference_rows.push(format!(
            "{},{:.12e},{:.12e},{:.6}",
            r + 1,
            realized,
            cap,
            crate::units::watts_to_dbw(realized)
        ));
    }
    writer.write_csv("interference.csv", "point,realized_w,cap_w,realized_dbw", &interference_rows)?;

    let summary = serde_json::json!({
        "mode": config.mode.to_string(),
        "seed": config.seed,
        "trials": config.trials,
        "scenario": config.scenario.file_name().and_then(|s| s.to_str()).unwrap_or(""),
        "scenario_sha256": scenario.full_hash(),
        "structural_sha256": scenario.structural_hash(),
        "build": build_id(),
        "converged": trials.iter().all(|t| t.converged),
        "iterations": nominal.iterations,
        "objective": nominal.objective,
        "objective_mean": trials.iter().map(|t| t.objective).sum::<f64>() / trials.len() as f64,
        "sum_rate_mean": mean_rates.iter().sum::<f64>(),
        "mean_rates": mean_rates,
        "kkt_residual": nominal.kkt,
        "safety_ok": trials.iter().all(|t| t.safety_ok),
        "powers_dbw": nominal.solution.nodes.iter().map(|nv| nv.p_dbw).collect::<Vec<_>>(),
        "mu": nominal.solution.nodes.iter().map(|nv| nv.mu_phys(eps)).collect::<Vec<_>>(),
        "files": writer.files.iter().map(|(f, h)| serde_json::json!({"name": f, "sha256": h})).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Artifact(e.to_string()))?;
    std::fs::write(config.out_dir.join("summary.json"), &text)?;
    Ok(RunArtifacts {
        summary,
        out_dir: config.out_dir.clone(),
    })
}

fn load_solution_from(dir: &Path) -> Result<Solution, PipelineError> {
    let text = std::fs::read_to_string(dir.join("solution.json"))?;
    let file: SolutionFile =
        serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("solution.json: {e}")))?;
    Ok(file.into_solution())
}

fn availability(model: &NetworkModel, config: &RunConfig) -> BTreeMap<(usize, usize), f64> {
    match config.chi {
        Some(chi) => model.topology.links().into_iter().map(|l| (l, chi)).collect(),
        None => chi_from_scenario(&model.scenario, &model.topology),
    }
}

fn run_deliver(config: &RunConfig, scenario: Scenario) -> Result<RunArtifacts, PipelineError> {
    let model = NetworkModel::new(scenario.clone(), Reach::Auto, model_options(config))?;
    let results =
        config.solution_from.clone().ok_or_else(|| PipelineError::Config("deliver needs --solution-from".into()))?;
    let solution = load_solution_from(&results)?;
    let chi = availability(&model, config);
    let inputs = SimulationInputs::from_solution(&model, &solution, Some(chi.clone()));
    let verdict = check_deliverability(&model.topology, &chi);
    let d = build_delivery_matrix(
        model.n_nodes(),
        &inputs.attempt_probabilities(),
        &inputs.reliabilities(),
        &inputs.chi,
    )?;
    let mut writer = ArtifactWriter::new(&config.out_dir, &scenario, config.seed)?;
    let mut rows = Vec::new();
    let mut per_origin = Vec::new();
    for origin in 0..model.n_nodes() {
        let report = limit_distribution(&DeliverySchedule::Constant(d.clone()), origin, 1e-3, config.mc_slots);
        for (slot, mass) in report.sink_mass.iter().enumerate().step_by(10) {
            rows.push(format!("{},{},{:.12e}", origin + 1, slot + 1, mass));
        }
        per_origin.push(serde_json::json!({
            "origin": origin + 1,
            "converged": report.converged,
            "slots": report.slots,
            "final_sink_mass": report.sink_mass.last().copied().unwrap_or(0.0),
        }));
    }
    writer.write_csv("delivery.csv", "origin,slot,sink_mass", &rows)?;
    let summary = serde_json::json!({
        "mode": "deliver",
        "seed": config.seed,
        "scenario_sha256": scenario.full_hash(),
        "structural_sha256": scenario.structural_hash(),
        "build": build_id(),
        "deliverable": verdict.deliverable,
        "t_star": verdict.t_star,
        "blocked_nodes": verdict.blocked_nodes.iter().map(|n| n + 1).collect::<Vec<_>>(),
        "column_sum_error": d.column_sum_error(),
        "per_origin": per_origin,
        "files": writer.files.iter().map(|(f, h)| serde_json::json!({"name": f, "sha256": h})).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Artifact(e.to_string()))?;
    std::fs::write(config.out_dir.join("summary.json"), &text)?;
    Ok(RunArtifacts {
        summary,
        out_dir: config.out_dir.clone(),
    })
}

fn run_mc(config: &RunConfig, scenario: Scenario) -> Result<RunArtifacts, PipelineError> {
    let model = NetworkModel::new(scenario.clone(), Reach::Auto, model_options(config))?;
    let results =
        config.solution_from.clone().ok_or_else(|| PipelineError::Config("mc needs --solution-from".into()))?;
    let solution = load_solution_from(&results)?;
    let chi = availability(&model, config);
    let inputs = SimulationInputs::from_solution(&model, &solution, Some(chi));
    let mut writer = ArtifactWriter::new(&config.out_dir, &scenario, config.seed)?;

    // tagged-packet absorption per origin, both collision models
    let mut delivery_rows = Vec::new();
    for origin in 0..model.n_nodes() {
        for (name, collision) in [
            ("independent", CollisionModel::IndependentPerLink),
            ("simultaneous", CollisionModel::SimultaneousDraws),
        ] {
            let stats = monte_carlo_tagged(
                &inputs,
                origin,
                config.mc_packets,
                config.mc_slots,
                config.seed ^ (origin as u64) << 8,
                collision,
            );
            delivery_rows.push(format!(
                "{},{},{},{},{:.12e},{:.6}",
                origin + 1,
                name,
                stats.delivered,
                stats.total,
                stats.fraction,
                stats.mean_delay()
            ));
        }
    }
    writer.write_csv(
        "mc_delivery.csv",
        "origin,collision_model,delivered,total,fraction,mean_delay",
        &delivery_rows,
    )?;

    // queueing simulation at the solution's exogenous rates
    let rates = solution.rates();
    let queue = monte_carlo_queues(&inputs, &rates, config.mc_slots, config.seed, CollisionModel::SimultaneousDraws);
    let mut queue_rows = Vec::new();
    for (slot, backlog) in &queue.backlog_trace {
        queue_rows.push(format!("{slot},{backlog}"));
    }
    writer.write_csv("mc_queues.csv", "slot,total_backlog", &queue_rows)?;
    let mut delay_rows = Vec::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &d in &queue.delays {
        *histogram.entry(d).or_insert(0) += 1;
    }
    for (delay, count) in histogram {
        delay_rows.push(format!("{delay},{count}"));
    }
    writer.write_csv("mc_delays.csv", "delay_slots,count", &delay_rows)?;

    let summary = serde_json::json!({
        "mode": "mc",
        "seed": config.seed,
        "scenario_sha256": scenario.full_hash(),
        "structural_sha256": scenario.structural_hash(),
        "build": build_id(),
        "packets": config.mc_packets,
        "slots": config.mc_slots,
        "queue_arrived": queue.arrived,
        "queue_delivered": queue.delivered,
        "queue_drift_slope": queue.drift_slope,
        "mean_queue": queue.mean_queue,
        "files": writer.files.iter().map(|(f, h)| serde_json::json!({"name": f, "sha256": h})).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Artifact(e.to_string()))?;
    std::fs::write(config.out_dir.join("summary.json"), &text)?;
    Ok(RunArtifacts {
        summary,
        out_dir: config.out_dir.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub sum_rate_a: f64,
    pub sum_rate_b: f64,
    pub rate_deltas: Vec<(usize, f64)>,
    pub power_deltas_dbw: Vec<(usize, f64)>,
    pub routing_deltas: Vec<(usize, usize, f64)>,
    pub flags: Vec<String>,
}

fn load_summary(dir: &Path) -> Result<serde_json::Value, PipelineError> {
    let text = std::fs::read_to_string(dir.join("summary.json"))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("summary.json: {e}")))
}

/// Verify recorded artifact hashes; a mismatch means the directory was
/// edited after the run.
fn verify_integrity(dir: &Path, summary: &serde_json::Value) -> Result<(), PipelineError> {
    let Some(files) = summary.get("files").and_then(|f| f.as_array()) else {
        return Ok(());
    };
    for entry in files {
        let name = entry.get("name").and_then(|v| v.as_str()).unwrap_or("");
        let recorded = entry.get("sha256").and_then(|v| v.as_str()).unwrap_or("");
        let bytes = std::fs::read(dir.join(name))
            .map_err(|e| PipelineError::Artifact(format!("integrity: cannot read {name}: {e}")))?;
        if sha256_hex(&bytes) != recorded {
            return Err(PipelineError::Artifact(format!("integrity: {name} does not match its recorded hash")));
        }
    }
    Ok(())
}

fn routing_table(dir: &Path) -> Result<BTreeMap<(usize, usize), f64>, PipelineError> {
    let text = std::fs::read_to_string(dir.join("routing.csv"))?;
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("from")) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() >= 3 {
            let from: usize = parts[0].parse().map_err(|_| PipelineError::Artifact("routing.csv".into()))?;
            let to: usize = parts[1].parse().map_err(|_| PipelineError::Artifact("routing.csv".into()))?;
            let t: f64 = parts[2].parse().map_err(|_| PipelineError::Artifact("routing.csv".into()))?;
            out.insert((from, to), t);
        }
    }
    Ok(out)
}

/// Compare two result directories of structurally identical scenarios.
pub fn compare_runs(a: &Path, b: &Path) -> Result<CompareReport, PipelineError> {
    let sa = load_summary(a)?;
    let sb = load_summary(b)?;
    verify_integrity(a, &sa)?;
    verify_integrity(b, &sb)?;
    let ha = sa.get("structural_sha256").and_then(|v| v.as_str()).unwrap_or("a");
    let hb = sb.get("structural_sha256").and_then(|v| v.as_str()).unwrap_or("b");
    if ha != hb {
        return Err(PipelineError::Artifact(
            "scenarios are structurally different; comparison is meaningless".into(),
        ));
    }

    let rates = |s: &serde_json::Value| -> Vec<f64> {
        s.get("mean_rates")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default()
    };
    let powers = |s: &serde_json::Value| -> Vec<f64> {
        s.get("powers_dbw")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default()
    };
    let ra = rates(&sa);
    let rb = rates(&sb);
    let pa = powers(&sa);
    let pb = powers(&sb);
    let sum_a: f64 = ra.iter().sum();
    let sum_b: f64 = rb.iter().sum();

    let mut rate_deltas = Vec::new();
    for (node, (x, y)) in ra.iter().zip(&rb).enumerate() {
        rate_deltas.push((node + 1, y - x));
    }
    let mut power_deltas = Vec::new();
    for (node, (x, y)) in pa.iter().zip(&pb).enumerate() {
        power_deltas.push((node + 1, y - x));
    }

    let ta = routing_table(a)?;
    let tb = routing_table(b)?;
    let mut routing_deltas = Vec::new();
    let keys: std::collections::BTreeSet<(usize, usize)> = ta.keys().chain(tb.keys()).copied().collect();
    for key in keys {
        let va = ta.get(&key).copied().unwrap_or(0.0);
        let vb = tb.get(&key).copied().unwrap_or(0.0);
        if (vb - va).abs() > 1e-9 {
            routing_deltas.push((key.0, key.1, vb - va));
        }
    }

    let mut flags = Vec::new();
    if sum_b > sum_a {
        flags.push(format!(
            "sum rate increased: {:.4} -> {:.4} ({:+.1}%)",
            sum_a,
            sum_b,
            100.0 * (sum_b - sum_a) / sum_a.max(1e-12)
        ));
    } else if sum_b < sum_a {
        flags.push(format!("sum rate decreased: {sum_a:.4} -> {sum_b:.4}"));
    }
    let mut top_routes = routing_deltas.clone();
    top_routes.sort_by(|x, y| y.2.abs().partial_cmp(&x.2.abs()).expect("finite"));
    for (from, to, d) in top_routes.iter().take(3) {
        flags.push(format!("t[{from}->{to}] {}creased by {:.3}", if *d > 0.0 { "in" } else { "de" }, d.abs()));
    }
    let mut top_powers: Vec<(usize, f64)> = power_deltas.clone();
    top_powers.sort_by(|x, y| y.1.abs().partial_cmp(&x.1.abs()).expect("finite"));
    for (node, d) in top_powers.iter().take(3) {
        if d.abs() >= 0.5 {
            flags.push(format!("P[{node}] {}creased by {:.1} dB", if *d > 0.0 { "in" } else { "de" }, d.abs()));
        }
    }

    Ok(CompareReport {
        sum_rate_a: sum_a,
        sum_rate_b: sum_b,
        rate_deltas,
        power_deltas_dbw: power_deltas,
        routing_deltas,
        flags,
    })
}
