use statroute::budget::{run_full, FullRunConfig};
use statroute::model::{ModelOptions, NetworkModel, VarLayout};
use statroute::sca::{find_feasible_start, sca_iterate, InterferenceBudgets};
use statroute::scenario::{load_scenario, Reach};

#[test]
#[ignore]
fn probe_rates() {
    for file in ["seven_node_two_pu", "seven_node_pu2_off"] {
        let path = format!("{}/../../scenarios/{file}.toml", env!("CARGO_MANIFEST_DIR"));
        let s = load_scenario(std::path::Path::new(&path)).unwrap();
        let model = NetworkModel::new(s, Reach::Auto, ModelOptions::default()).unwrap();
        let t0 = std::time::Instant::now();
        let start = find_feasible_start(&model).unwrap();
        let layout = VarLayout::new(&model.topology);
        let sca = sca_iterate(&model, &layout, &start, &InterferenceBudgets::Shared).unwrap();
        eprintln!("=== {file}: central {} iters conv={} obj {:.4} kkt {:.1e} ({:?})",
            sca.trace.len(), sca.converged, sca.solution.objective(&model), sca.final_kkt.max(), t0.elapsed());
        eprintln!("  central rates: {:?}", sca.solution.rates().iter().map(|r| (r*1e3).round()/1e3).collect::<Vec<_>>());
        let t1 = std::time::Instant::now();
        let full = run_full(&model, &FullRunConfig::default()).unwrap();
        eprintln!("  full {} ells conv={} obj {:.4} budgets-active-until {} ({:?})",
            full.sca_trace.len(), full.converged, full.solution.objective(&model), full.budget_active_until, t1.elapsed());
        eprintln!("  full rates: {:?}", full.solution.rates().iter().map(|r| (r*1e3).round()/1e3).collect::<Vec<_>>());
        eprintln!("  mu: {:?}", full.solution.nodes.iter().map(|n| ((n.mu_ln.exp()+1e-3)*1e3).round()/1e3).collect::<Vec<_>>());
        eprintln!("  P: {:?}", full.solution.nodes.iter().map(|n| (n.p_dbw*10.0).round()/10.0).collect::<Vec<_>>());
    }
}
