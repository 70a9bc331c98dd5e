use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use tiegrid::control::{
    mitigate_problem, phase_one, relax, solve_agc, solve_uc, ControlProblem, ControlStatus,
    RelaxationLevel, SolveOptions,
};
use tiegrid::network::{Bus, GridCase, Line, LineId};

fn grid(buses: Vec<Bus>, lines: Vec<Line>) -> GridCase {
    GridCase::new("t", 100.0, buses, lines).unwrap()
}

fn two_bus(limit: f64) -> GridCase {
    grid(
        vec![Bus::new(1).with_generation(1.0, 2.0), Bus::new(2).with_demand(1.0)],
        vec![Line::new(0, 1, 1.0, limit)],
    )
}

#[test]
fn intact_network_needs_no_action() {
    let g = grid(
        vec![
            Bus::new(1).with_generation(0.6, 1.0),
            Bus::new(2).with_generation(0.4, 1.0),
            Bus::new(3).with_demand(1.0),
        ],
        vec![Line::new(0, 1, 1.0, 2.0), Line::new(0, 2, 1.0, 2.0), Line::new(1, 2, 1.0, 2.0)],
    );
    let topo = g.topology();
    let f0 = tiegrid::network::dc_power_flow(&topo, &g.injections()).unwrap().flows;
    let sol = solve_uc(&ControlProblem::nominal(&g, topo)).unwrap();
    assert!(sol.is_optimal());
    assert!(sol.adjustment().iter().all(|d| d.abs() < 1e-12));
    for (a, b) in sol.flows.iter().zip(&f0) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
    assert!(sol.kkt.unwrap().passes(1e-9));
}

#[test]
fn overloaded_radial_line_is_infeasible_without_shedding() {
    let g = two_bus(0.5);
    let p = ControlProblem::nominal(&g, g.topology());
    let sol = solve_uc(&p).unwrap();
    assert_eq!(sol.status, ControlStatus::Infeasible);
    assert_abs_diff_eq!(sol.min_violation.unwrap(), 0.5, epsilon = 1e-9);

    let agc = solve_agc(&p).unwrap();
    assert!(agc.is_optimal());
    assert_abs_diff_eq!(agc.flows[0], 1.0, epsilon = 1e-12);
    assert!(agc.kkt.unwrap().passes(1e-9));
}

#[test]
fn shedding_rung_serves_what_the_line_can_carry() {
    // dg = ds = x with x ≥ 0.5; the cost x²/2 + x²/0.02 is increasing, so x = 0.5.
    let g = two_bus(0.5);
    let (sol, level) =
        mitigate_problem(&ControlProblem::nominal(&g, g.topology()), &SolveOptions::default()).unwrap();
    assert_eq!(level, RelaxationLevel::L1);
    assert!(sol.flows[0] <= 0.5 + 1e-9);
    assert_abs_diff_eq!(sol.shed[1], 0.5, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.gen_adjust[0], 0.5, epsilon = 1e-9);
    assert!(sol.kkt.unwrap().passes(1e-9));
}

/// Minimizes ½ xᵀ W x subject to A x = b and G x ≤ h by trying every active
/// subset of the inequalities and keeping the one that satisfies the KKT
/// conditions.
fn brute_force_qp(w: &[f64], a: &[Vec<f64>], b: &[f64], g: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    let n = w.len();
    for mask in 0u32..(1 << g.len()) {
        let active: Vec<usize> = (0..g.len()).filter(|k| mask & (1 << k) != 0).collect();
        let rows: Vec<(&Vec<f64>, f64)> = a
            .iter()
            .zip(b)
            .map(|(r, &v)| (r, v))
            .chain(active.iter().map(|&k| (&g[k], h[k])))
            .collect();
        let size = n + rows.len();
        let mut kkt = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for i in 0..n {
            kkt[(i, i)] = w[i];
        }
        for (r, (row, v)) in rows.iter().enumerate() {
            for i in 0..n {
                kkt[(i, n + r)] = row[i];
                kkt[(n + r, i)] = row[i];
            }
            rhs[n + r] = *v;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x: Vec<f64> = sol.iter().take(n).copied().collect();
        let dot = |row: &Vec<f64>| row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>();
        let primal_ok = g.iter().zip(h).all(|(row, &v)| dot(row) <= v + 1e-12);
        // W x + Aᵀλ + G_Sᵀμ = 0 needs μ ≥ 0.
        let dual_ok = (0..active.len()).all(|k| sol[n + a.len() + k] >= -1e-12);
        if primal_ok && dual_ok {
            return x;
        }
    }
    panic!("no active set satisfies the KKT conditions");
}

#[test]
fn three_bus_matches_brute_force_kkt_oracle() {
    // Triangle with line (1,3) failed; the rest is the path 1-2-3.
    let g = grid(
        vec![
            Bus::new(1).with_generation(0.6, 2.0).with_gains(1.0, 1.0),
            Bus::new(2).with_generation(0.4, 2.0).with_gains(1.0, 1.0),
            Bus::new(3).with_demand(1.0).with_gains(1.0, 1.0),
        ],
        vec![Line::new(0, 1, 1.0, 0.7), Line::new(0, 2, 1.0, 0.7), Line::new(1, 2, 1.0, 0.7)],
    );
    let topo = g.topology().without(&[LineId(1)]);
    let problem = ControlProblem::nominal(&g, topo).at_level(RelaxationLevel::L1);
    let sol = solve_uc(&problem).unwrap();

    // On the path, f12 = p1 − d1 and f23 = p1 + p2 − d1 − d2 by conservation.
    let p = [0.6, 0.4, -1.0];
    let g_rows = vec![
        vec![-1.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![-1.0, -1.0, 0.0],
        vec![1.0, 1.0, 0.0],
    ];
    let h = vec![0.7 - p[0], 0.7 + p[0], 0.7 - p[0] - p[1], 0.7 + p[0] + p[1]];
    let want = brute_force_qp(&[1.0; 3], &[vec![1.0; 3]], &[0.0], &g_rows, &h);
    assert_abs_diff_eq!(want[0], 0.15, epsilon = 1e-12);
    assert_abs_diff_eq!(want[2], -0.3, epsilon = 1e-12);

    let got = sol.adjustment();
    for j in 0..3 {
        assert_abs_diff_eq!(got[j], want[j], epsilon = 1e-8);
    }
    assert!(sol.kkt.unwrap().passes(1e-9));
}

#[test]
fn agc_splits_island_imbalance_by_gain() {
    // Island {1,2} keeps a 0.5 surplus after (2,3) fails.
    let g = grid(
        vec![
            Bus::new(1).with_generation(1.0, 2.0).with_gains(3.0, 0.03),
            Bus::new(2).with_generation(1.0, 2.0).with_demand(1.5),
            Bus::new(3).with_demand(0.5).with_area(1),
        ],
        vec![Line::new(0, 1, 1.0, 5.0), Line::new(1, 2, 1.0, 5.0)],
    );
    let topo = g.topology().without(&[LineId(1)]);
    let sol = solve_agc(&ControlProblem::nominal(&g, topo).at_level(RelaxationLevel::L1)).unwrap();
    assert!(sol.is_optimal());
    assert_abs_diff_eq!(sol.gen_adjust[0], 0.375, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.gen_adjust[1], 0.125, epsilon = 1e-9);
    assert_abs_diff_eq!(sol.shed[2], 0.5, epsilon = 1e-9);
}

#[test]
fn ladder_rungs_relax_in_order() {
    let g = grid(
        vec![
            Bus::new(1).with_generation(1.0, 2.0),
            Bus::new(2).with_demand(0.6).with_area(1),
            Bus::new(3).with_demand(0.4),
        ],
        vec![Line::new(0, 1, 1.0, 1.0), Line::new(1, 2, 1.0, 1.0), Line::new(0, 2, 1.0, 1.0)],
    );
    let l0 = ControlProblem::nominal(&g, g.topology());
    assert!((0..3).all(|j| l0.shed_cap(j) == 0.0));
    assert_eq!(l0.lifted, vec![false, false]);
    let l1 = relax(&l0);
    assert_eq!(l1.level, RelaxationLevel::L1);
    assert_eq!((0..3).map(|j| l1.shed_cap(j)).collect::<Vec<_>>(), vec![0.0, 0.6, 0.4]);
    assert_eq!(l1.lifted, vec![false, false]);
    let l2 = relax(&l1);
    assert_eq!(l2.level, RelaxationLevel::L2);
    assert_eq!(l2.lifted, vec![true, true]);
    assert_eq!(relax(&l2), l2);
}

#[test]
fn objective_does_not_increase_up_the_ladder() {
    // Area 1 (bus 2) cannot cover its own load once (1,2) is the only tie
    // left and it is limited, so generation must move across the tie.
    let g = grid(
        vec![
            Bus::new(1).with_generation(1.0, 2.0),
            Bus::new(2).with_generation(0.2, 0.4).with_demand(1.0).with_area(1),
            Bus::new(3).with_demand(0.2),
        ],
        vec![Line::new(0, 1, 1.0, 0.7), Line::new(1, 2, 1.0, 0.3), Line::new(0, 2, 1.0, 1.0)],
    );
    let topo = g.topology().without(&[LineId(1)]);
    let base = ControlProblem::nominal(&g, topo);
    let mut last = f64::INFINITY;
    for level in RelaxationLevel::ALL {
        let sol = solve_uc(&base.clone().at_level(level)).unwrap();
        if sol.is_optimal() {
            assert!(sol.objective <= last + 1e-12);
            last = sol.objective;
            assert!(sol.kkt.unwrap().passes(1e-9));
        }
    }
    assert!(last.is_finite());
}

#[test]
fn phase_one_is_zero_on_feasible_problems() {
    let g = two_bus(2.0);
    let v = phase_one(&ControlProblem::nominal(&g, g.topology())).unwrap();
    assert!(v < 1e-12);
}

#[test]
fn solution_serializes_with_duals_and_level() {
    let g = two_bus(2.0);
    let sol = solve_uc(&ControlProblem::nominal(&g, g.topology())).unwrap();
    let json = serde_json::to_value(&sol).unwrap();
    assert_eq!(json["status"], "Optimal");
    assert_eq!(json["level"], "L0");
    assert!(json["duals"]["balance"].is_array());
    assert!(json["kkt"]["stationarity"].is_number());
}
