use lfmpc::building::{Building, OccupancyProfile};
use lfmpc::harness::experiment::closed_loop_setup;
use lfmpc::harness::ExperimentConfig;
use lfmpc::mpc::{benchmark_scenarios, run_closed_loop, solve_ocp, Band, OcpConfig, OcpProblem, Scenario, ThermalModel};
use lfmpc::rng;
use rand::Rng;

fn short_config(seed: u64) -> ExperimentConfig {
    let cfg = ExperimentConfig { seed, span_days: 2, history_weeks: 1, ..ExperimentConfig::default() };
    cfg.validate().unwrap();
    cfg
}

fn empty_building(mut cfg: ExperimentConfig) -> ExperimentConfig {
    for z in &cfg.building.zones {
        cfg.occupancy.insert(z.name.clone(), OccupancyProfile { presence: 0.0, ..OccupancyProfile::default() });
    }
    cfg
}

fn random_problem(seed: u64, cfg: &OcpConfig) -> (ThermalModel, OcpProblem) {
    let model = ThermalModel::from_building(&Building::default_three_zone());
    let n = cfg.steps();
    let mut r = rng::stream(seed, rng::UKF_TEST, 60);
    let problem = OcpProblem {
        x0: (0..9).map(|_| r.gen_range(16.0..26.0)).collect(),
        ambient: (0..n).map(|_| r.gen_range(-5.0..15.0)).collect(),
        occupancy: (0..n).map(|_| (0..3).map(|_| r.gen_range(0.0..5.0)).collect()).collect(),
        bands: vec![vec![Band { lower: 21.0, upper: 24.0 }; 3]; n],
    };
    (model, problem)
}

#[test]
fn solver_cost_never_increases() {
    let cfg = OcpConfig::default();
    for seed in 0..4 {
        let (model, problem) = random_problem(seed, &cfg);
        let sol = solve_ocp(&model, &problem, &cfg, None).unwrap();
        assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {:?}", sol.cost_history);
        assert_eq!(*sol.cost_history.last().unwrap(), sol.cost);
    }
}

#[test]
fn converged_solution_is_a_fixed_point_of_the_warm_start() {
    let cfg = OcpConfig { max_iterations: 5000, tolerance: 1e-14, ..OcpConfig::default() };
    let (model, problem) = random_problem(9, &cfg);
    let sol = solve_ocp(&model, &problem, &cfg, None).unwrap();
    let again = solve_ocp(&model, &problem, &OcpConfig { max_iterations: 1, ..cfg }, Some(&sol.flat)).unwrap();
    let change = (sol.cost - again.cost).abs() / sol.cost;
    assert!(change < 1e-8, "relative cost change {change:.2e}");
}

#[test]
fn closed_loop_is_deterministic() {
    let cfg = short_config(3);
    let setup = closed_loop_setup(&cfg, cfg.seed, None, None).unwrap();
    assert_eq!(run_closed_loop(&setup, Scenario::Lfm).unwrap(), run_closed_loop(&setup, Scenario::Lfm).unwrap());
}

#[test]
fn empty_building_makes_occupancy_knowledge_irrelevant() {
    let cfg = empty_building(short_config(4));
    let setup = closed_loop_setup(&cfg, cfg.seed, None, None).unwrap();
    assert!(setup.trace.occupancy.iter().flatten().all(|o| *o == 0.0));
    let (results, rows) = benchmark_scenarios(&setup, &[Scenario::Exact, Scenario::Lfm]).unwrap();
    let get = |s: Scenario| results.iter().find(|r| r.scenario == s).unwrap();
    let (none, exact, lfm) = (get(Scenario::None), get(Scenario::Exact), get(Scenario::Lfm));
    assert_eq!(none.controls, exact.controls);
    assert_eq!(none.energy, exact.energy);
    assert!(rows.iter().filter(|r| r.scenario == Scenario::Exact).all(|r| r.energy_reduction_pct == 0.0));
    // The observer's latent forecast is zero up to roundoff, which the
    // fixed-budget solver turns into control differences of order 1e-5.
    assert!(lfm.assumed_occupancy.iter().flatten().all(|d| *d < 1e-12));
    for (a, b) in none.energy.iter().zip(&lfm.energy) {
        assert!((a - b).abs() / a < 1e-4, "{a} vs {b}");
    }
    for (a, b) in none.discomfort.iter().zip(&lfm.discomfort) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn knowing_occupancy_never_adds_discomfort() {
    for seed in 1..=10 {
        let cfg = short_config(seed);
        let setup = closed_loop_setup(&cfg, seed, None, None).unwrap();
        let (results, _) = benchmark_scenarios(&setup, &[Scenario::Exact]).unwrap();
        let d = |s: Scenario| results.iter().find(|r| r.scenario == s).unwrap().discomfort.iter().sum::<f64>();
        assert!(d(Scenario::Exact) <= d(Scenario::None) + 1e-9, "seed {seed}: {} > {}", d(Scenario::Exact), d(Scenario::None));
    }
}
