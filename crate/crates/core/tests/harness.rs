use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use tiegrid::cascade::{run_cascade_from, AgcRule, BalancingRule, CascadeOptions, OperatingPoint, UcRule};
use tiegrid::case_io::bundled;
use tiegrid::harness::{
    aggregate, agr, dc_opf, llr, run_sweep, scale_limits, write_outputs, Controller, HarnessError, OutputMeta,
    ScenarioStatus, Strategy, Structure, SweepConfig, SCENARIO_COLUMNS,
};
use tiegrid::network::{Bus, GridCase, Line, LineId};
use tiegrid::partition::{keep_largest_flow, Partition};

fn grid(buses: Vec<Bus>, lines: Vec<Line>) -> GridCase {
    GridCase::new("t", 100.0, buses, lines).unwrap()
}

fn six_bus() -> (GridCase, Partition) {
    let g = bundled("six_bus_two_area").unwrap().grid;
    let p = Partition::from_grid(&g);
    let opf = dc_opf(&g).unwrap();
    let off = keep_largest_flow(&g.topology(), &opf.injections, &p).unwrap();
    (g, p.with_switched_off(off))
}

#[test]
fn opf_single_generator_serves_the_load() {
    let g = grid(
        vec![Bus::new(1).with_generation(0.0, 2.0), Bus::new(2).with_demand(0.7)],
        vec![Line::new(0, 1, 1.0, 5.0)],
    );
    let opf = dc_opf(&g).unwrap();
    assert_abs_diff_eq!(opf.generation[0], 0.7, epsilon = 1e-10);
    assert_abs_diff_eq!(opf.flows[0], 0.7, epsilon = 1e-10);
    assert!(opf.kkt.passes(1e-9));
}

#[test]
fn opf_symmetric_generators_split_evenly() {
    let g = grid(
        vec![
            Bus::new(1).with_generation(0.0, 2.0),
            Bus::new(2).with_demand(1.0),
            Bus::new(3).with_generation(0.0, 2.0),
        ],
        vec![Line::new(0, 1, 1.0, 5.0), Line::new(2, 1, 1.0, 5.0)],
    );
    let opf = dc_opf(&g).unwrap();
    assert_abs_diff_eq!(opf.generation[0], 0.5, epsilon = 1e-10);
    assert_abs_diff_eq!(opf.generation[2], 0.5, epsilon = 1e-10);
}

#[test]
fn opf_with_binding_line_matches_kkt_oracle() {
    // Triangle with bus 3 the load; (1,3) limited to 0.5.
    let g = grid(
        vec![
            Bus::new(1).with_generation(0.0, 2.0),
            Bus::new(2).with_generation(0.0, 2.0),
            Bus::new(3).with_demand(1.5),
        ],
        vec![Line::new(0, 1, 1.0, 2.0), Line::new(0, 2, 1.0, 0.5), Line::new(1, 2, 1.0, 2.0)],
    );
    let opf = dc_opf(&g).unwrap();

    // With bus 3 grounded, f13 = (2 g1 + g2) / 3. Active set {balance, f13 = 0.5}:
    // [2I Aᵀ; A 0] [g; z] = [0; b], so 2g + Aᵀz = 0.
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0 / 3.0, 1.0 / 3.0]);
    let b = DVector::from_row_slice(&[1.5, 0.5]);
    let mut k = DMatrix::zeros(4, 4);
    k.view_mut((0, 0), (2, 2)).copy_from(&(DMatrix::identity(2, 2) * 2.0));
    k.view_mut((0, 2), (2, 2)).copy_from(&a.transpose());
    k.view_mut((2, 0), (2, 2)).copy_from(&a);
    let mut rhs = DVector::zeros(4);
    rhs.rows_mut(2, 2).copy_from(&b);
    let z = k.lu().solve(&rhs).unwrap();
    // The line row is a binding ≤ constraint: its multiplier is nonnegative.
    assert!(z[3] >= 0.0);
    assert_abs_diff_eq!(opf.generation[0], z[0], epsilon = 1e-9);
    assert_abs_diff_eq!(opf.generation[1], z[1], epsilon = 1e-9);
    assert_abs_diff_eq!(opf.flows[1], 0.5, epsilon = 1e-9);
    assert!(opf.kkt.passes(1e-9));
}

#[test]
fn opf_reports_infeasibility() {
    let short = grid(
        vec![Bus::new(1).with_generation(0.0, 0.5), Bus::new(2).with_demand(0.7)],
        vec![Line::new(0, 1, 1.0, 5.0)],
    );
    assert!(matches!(dc_opf(&short), Err(HarnessError::OpfInfeasible(_))));
    let congested = grid(
        vec![Bus::new(1).with_generation(0.0, 2.0), Bus::new(2).with_demand(0.7)],
        vec![Line::new(0, 1, 1.0, 0.3)],
    );
    assert!(matches!(dc_opf(&congested), Err(HarnessError::OpfInfeasible(_))));
}

#[test]
fn scaling_multiplies_limits_and_capacities() {
    let g = bundled("two_bus").unwrap().grid;
    assert_eq!(scale_limits(&g, 1.0), g);
    let half = scale_limits(&g, 0.5);
    assert_eq!(half.lines[0].limit, 0.5 * g.lines[0].limit);
    let more = scale_limits(&g, 1.5);
    assert_eq!(more.buses[0].gen_max, 1.5 * g.buses[0].gen_max);
    assert_eq!(more.buses[1].demand, g.buses[1].demand);
}

#[test]
fn metric_definitions() {
    assert_abs_diff_eq!(llr(&[4.0, 6.0], &[4.0, 5.5]).unwrap(), 0.05, epsilon = 1e-15);
    assert!(matches!(llr(&[0.0], &[0.0]), Err(HarnessError::ZeroDemand)));
    assert_eq!(agr(&[0.0; 5], 1e-4), 0.0);
    let mut moved = vec![0.0; 10];
    moved[3] = 0.2;
    moved[7] = -0.01;
    assert_abs_diff_eq!(agr(&moved, 1e-4), 0.2, epsilon = 1e-15);
}

#[test]
fn strategy_labels_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        assert_eq!(s.code().parse::<Strategy>().unwrap(), s);
    }
    assert_eq!(Strategy::ALL[0], Strategy::new(Controller::Uc, Structure::Tree));
    assert!("pid-tree".parse::<Strategy>().is_err());
}

#[test]
fn sweep_matches_scenario_by_scenario_oracle() {
    let (g, p) = six_bus();
    let config = SweepConfig {
        alphas: vec![1.0],
        ..SweepConfig::default()
    };
    let sweep = run_sweep(&g, &p, &config).unwrap();
    let opf = dc_opf(&g).unwrap();
    let tree_lines = g.lines.len() - p.switched_off.len();
    assert_eq!(sweep.scenarios.len(), 2 * g.lines.len() + 2 * tree_lines);

    for s in &sweep.scenarios {
        assert_eq!(s.status, ScenarioStatus::Ok, "{s:?}");
        let topology = match s.strategy.structure {
            Structure::Mesh => g.topology(),
            Structure::Tree => g.topology().without(&p.switched_off),
        };
        let rule: Box<dyn BalancingRule> = match s.strategy.controller {
            Controller::Uc => Box::new(UcRule::default()),
            Controller::Agc => Box::new(AgcRule::default()),
        };
        let start = OperatingPoint {
            generation: opf.generation.clone(),
            demand: g.buses.iter().map(|b| b.demand).collect(),
        };
        let trace =
            run_cascade_from(&g, &topology, start, &[s.line], rule.as_ref(), &CascadeOptions::default()).unwrap();
        let expect_llr = llr(&trace.initial.demand, &trace.last().demand).unwrap();
        let change = trace.generation_change();
        let gens: Vec<f64> = (0..g.n_buses()).filter(|&j| g.buses[j].is_generator()).map(|j| change[j]).collect();
        assert_eq!(s.llr, expect_llr);
        assert_eq!(s.agr, agr(&gens, config.agr_tol));
        assert_eq!(s.stages, trace.n_stages());
    }

    let report = &sweep.report;
    for row in &report.rows {
        assert_eq!(row, &aggregate(&sweep.scenarios, row.strategy, row.alpha, config.llr_tol));
        assert!((0.0..=1.0).contains(&row.frac_nonzero_llr));
        assert!((0.0..=1.0).contains(&row.frac_nonzero_agr));
    }
}

#[test]
fn uc_scenarios_end_at_the_first_stage() {
    let (g, p) = six_bus();
    let sweep = run_sweep(&g, &p, &SweepConfig::default()).unwrap();
    for s in sweep.scenarios.iter().filter(|s| s.strategy.controller == Controller::Uc) {
        assert_eq!(s.status, ScenarioStatus::Ok);
        assert_eq!(s.stages, 1, "{s:?}");
        assert!(s.terminated);
    }
}

#[test]
fn uncongested_network_needs_no_action_under_uc() {
    let (mut g, p) = six_bus();
    for l in &mut g.lines {
        l.limit = 10.0;
    }
    let sweep = run_sweep(
        &g,
        &p,
        &SweepConfig {
            strategies: vec![Strategy::ALL[1]],
            alphas: vec![1.0],
            ..SweepConfig::default()
        },
    )
    .unwrap();
    for s in &sweep.scenarios {
        assert_eq!(s.llr, 0.0, "{s:?}");
        assert_eq!(s.agr, 0.0, "{s:?}");
    }
}

#[test]
fn islanding_a_load_bus_sheds_under_every_strategy() {
    // Bus 3 hangs off bus 2 by a single line.
    let g = grid(
        vec![
            Bus::new(1).with_generation(1.0, 2.0),
            Bus::new(2).with_demand(0.5),
            Bus::new(3).with_demand(0.5),
            Bus::new(4).with_generation(0.0, 1.0).with_area(1),
            Bus::new(5).with_area(1),
        ],
        vec![
            Line::new(0, 1, 1.0, 2.0),
            Line::new(1, 2, 1.0, 2.0),
            Line::new(0, 3, 1.0, 2.0),
            Line::new(3, 4, 1.0, 2.0),
            Line::new(1, 4, 1.0, 2.0),
        ],
    );
    let p = Partition::from_grid(&g).with_switched_off(vec![LineId(4)]);
    let sweep = run_sweep(&g, &p, &SweepConfig::default()).unwrap();
    for s in sweep.scenarios.iter().filter(|s| s.line == LineId(1)) {
        assert_eq!(s.status, ScenarioStatus::Ok);
        assert!(s.llr > 0.0, "{s:?}");
    }
}

#[test]
fn sweep_is_deterministic_across_worker_counts() {
    let (g, p) = six_bus();
    let one = run_sweep(
        &g,
        &p,
        &SweepConfig {
            workers: Some(1),
            ..SweepConfig::default()
        },
    )
    .unwrap();
    let four = run_sweep(
        &g,
        &p,
        &SweepConfig {
            workers: Some(4),
            ..SweepConfig::default()
        },
    )
    .unwrap();
    assert_eq!(one.scenarios, four.scenarios);
}

#[test]
fn tree_strategies_need_a_tree_of_areas() {
    let g = bundled("six_bus_two_area").unwrap().grid;
    let p = Partition::from_grid(&g);
    assert!(matches!(
        run_sweep(&g, &p, &SweepConfig::default()),
        Err(HarnessError::NotTreeConnected)
    ));
    let mesh_only = SweepConfig {
        strategies: vec![Strategy::ALL[1], Strategy::ALL[3]],
        ..SweepConfig::default()
    };
    assert!(run_sweep(&g, &p, &mesh_only).is_ok());
    let bad = SweepConfig {
        alphas: vec![0.0],
        ..SweepConfig::default()
    };
    assert!(matches!(run_sweep(&g, &p, &bad), Err(HarnessError::Config(_))));
}

#[test]
fn outputs_are_written_and_reparse() {
    let (g, p) = six_bus();
    let sweep = run_sweep(&g, &p, &SweepConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = OutputMeta {
        tool: "tiegrid".into(),
        version: "0.0.0".into(),
        config_hash: "abc123".into(),
    };
    write_outputs(dir.path(), &sweep, &meta).unwrap();

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], "abc123");
    assert_eq!(report["rows"].as_array().unwrap().len(), 12);

    let text = std::fs::read_to_string(dir.path().join("scenarios.csv")).unwrap();
    assert!(text.starts_with("# tiegrid 0.0.0 config abc123\n"));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), SCENARIO_COLUMNS);

    // Fractions and means recomputed from the CSV equal the report exactly.
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[5], "ok");
        groups
            .entry((rec[0].to_string(), rec[1].to_string()))
            .or_default()
            .push((rec[6].parse().unwrap(), rec[7].parse().unwrap()));
    }
    for row in &sweep.report.rows {
        let rows = &groups[&(row.alpha.to_string(), row.strategy.to_string())];
        let llr: Vec<f64> = rows.iter().map(|r| r.0).filter(|&v| v > 1e-6).collect();
        let agr: Vec<f64> = rows.iter().map(|r| r.1).filter(|&v| v > 0.0).collect();
        assert_eq!(row.frac_nonzero_llr, llr.len() as f64 / rows.len() as f64);
        assert_eq!(row.frac_nonzero_agr, agr.len() as f64 / rows.len() as f64);
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        assert_eq!(row.mean_nonzero_llr, mean(&llr));
        assert_eq!(row.mean_nonzero_agr, mean(&agr));
    }

    let md = std::fs::read_to_string(dir.path().join("tables.md")).unwrap();
    assert!(md.contains("abc123"));
    assert!(md.contains("UC + Tree α=0.5"));
}

#[test]
fn tree_sweep_skips_switched_tie_lines() {
    let (g, p) = six_bus();
    assert_eq!(p.switched_off.len(), 1);
    let sweep = run_sweep(&g, &p, &SweepConfig::default()).unwrap();
    for s in &sweep.scenarios {
        if s.strategy.structure == Structure::Tree {
            assert!(!p.switched_off.contains(&s.line));
        }
    }
    let mesh = sweep.scenarios.iter().filter(|s| s.strategy.structure == Structure::Mesh).count();
    let tree = sweep.scenarios.len() - mesh;
    assert_eq!(mesh - tree, 2 * 3);
}
