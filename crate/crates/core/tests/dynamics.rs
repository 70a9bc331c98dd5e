use approx::assert_abs_diff_eq;
use tiegrid::control::{solve_uc, ControlProblem, RelaxationLevel};
use tiegrid::dynamics::{
    detect_severe, droop_equilibrium, Detector, droop_equilibrium_at, simulate, write_csv, Controller,
    EventKind, Scenario, SimOptions, UcDynamics,
};
use tiegrid::network::{Bus, GridCase, Line, LineId};

fn grid(buses: Vec<Bus>, lines: Vec<Line>) -> GridCase {
    GridCase::new("t", 100.0, buses, lines).unwrap()
}

fn triangle() -> GridCase {
    grid(
        vec![
            Bus::new(1).with_generation(0.6, 1.2).with_dynamics(0.2, 0.5),
            Bus::new(2).with_generation(0.4, 1.0).with_dynamics(0.2, 0.5),
            Bus::new(3).with_demand(1.0).with_dynamics(0.2, 0.5),
        ],
        vec![Line::new(0, 1, 1.0, 0.9), Line::new(0, 2, 1.0, 0.9), Line::new(1, 2, 1.0, 0.9)],
    )
}

/// Intact triangle where (1,3) binds at 0.5 and bus 2 must pick up 0.1.
fn congested_triangle() -> GridCase {
    grid(
        vec![
            Bus::new(1).with_generation(0.6, 1.2).with_dynamics(0.2, 0.5),
            Bus::new(2).with_generation(0.4, 1.0).with_dynamics(0.2, 0.5),
            Bus::new(3).with_demand(1.0).with_dynamics(0.2, 0.5),
        ],
        vec![Line::new(0, 1, 1.0, 0.9), Line::new(0, 2, 1.0, 0.5), Line::new(1, 2, 1.0, 0.9)],
    )
}

fn short(horizon: f64) -> SimOptions {
    SimOptions {
        horizon,
        ..SimOptions::default()
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let g = triangle();
    let t = g.topology();
    let sc = Scenario::step_change(&t, &g.injections(), &[0.0; 3]).unwrap();
    let traj = simulate(&g, &t, &sc, &Controller::None, &short(2.0)).unwrap();
    for s in &traj.samples {
        assert!(s.omega.iter().all(|w| w.abs() < 1e-12));
        for (a, b) in s.flows.iter().zip(&sc.flows) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn droop_closed_form_examples() {
    let two = |alpha: [f64; 2], damping: [f64; 2]| {
        grid(
            vec![
                Bus::new(1).with_generation(1.0, 2.0).with_gains(alpha[0], 0.01).with_dynamics(0.1, damping[0]),
                Bus::new(2).with_gains(alpha[1], 0.01).with_dynamics(0.1, damping[1]),
            ],
            vec![Line::new(0, 1, 1.0, 2.0)],
        )
    };
    let g = two([1.0, 1.0], [1.0, 1.0]);
    let eq = droop_equilibrium(&g, &g.topology()).unwrap();
    assert_abs_diff_eq!(eq.control[0], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(eq.control[1], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(eq.damping_response[1], 0.25, epsilon = 1e-15);

    let g = two([3.0, 1.0], [0.0, 0.0]);
    let eq = droop_equilibrium(&g, &g.topology()).unwrap();
    assert_abs_diff_eq!(eq.control[0], 0.75, epsilon = 1e-15);
    assert_abs_diff_eq!(eq.control[1], 0.25, epsilon = 1e-15);

    let g = triangle();
    let eq = droop_equilibrium(&g, &g.topology()).unwrap();
    assert!(eq.control.iter().chain(&eq.omega).all(|v| *v == 0.0));
}

#[test]
fn droop_dynamics_settle_at_closed_form() {
    let g = triangle();
    let t = g.topology();
    // Lose 0.2 pu of generation at bus 2.
    let sc = Scenario::step_change(&t, &g.injections(), &[0.0, -0.2, 0.0]).unwrap();
    let traj = simulate(&g, &t, &sc, &Controller::Droop, &short(30.0)).unwrap();
    let eq = droop_equilibrium_at(&g, &t, &sc.injections).unwrap();
    let last = traj.last();
    for j in 0..3 {
        assert_abs_diff_eq!(last.omega[j], eq.omega[j], epsilon = 1e-4);
        assert_abs_diff_eq!(last.control[j], eq.control[j], epsilon = 1e-4);
    }
    for (a, b) in last.flows.iter().zip(&eq.flows) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-4);
    }
}

#[test]
fn halving_the_step_barely_moves_the_end_state() {
    let g = triangle();
    let t = g.topology();
    let sc = Scenario::step_change(&t, &g.injections(), &[0.0, -0.2, 0.0]).unwrap();
    let run = |dt: f64| {
        let o = SimOptions {
            horizon: 1.0,
            dt,
            output_interval: 0.1,
            ..SimOptions::default()
        };
        simulate(&g, &t, &sc, &Controller::Droop, &o).unwrap().last().clone()
    };
    let (a, b) = (run(1e-2), run(5e-3));
    let gap = a
        .omega
        .iter()
        .zip(&b.omega)
        .chain(a.flows.iter().zip(&b.flows))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(gap < 1e-6, "gap {gap:e}");
}

#[test]
fn unified_controller_reaches_the_optimum() {
    let g = congested_triangle();
    let topo = g.topology();
    let problem = ControlProblem::nominal(&g, topo.clone());
    let opt = solve_uc(&problem).unwrap();
    assert!(opt.is_optimal());
    assert_abs_diff_eq!(opt.adjustment()[0], 0.1, epsilon = 1e-9);
    assert_abs_diff_eq!(opt.adjustment()[1], -0.1, epsilon = 1e-9);

    let sc = Scenario::line_failure(&g, &topo).unwrap();
    let mut uc = UcDynamics::new(problem);
    uc.detector = None;
    let traj = simulate(&g, &topo, &sc, &Controller::Unified(uc), &short(200.0)).unwrap();
    let last = traj.last();
    let want = opt.adjustment();
    for j in 0..3 {
        assert_abs_diff_eq!(last.control[j], want[j], epsilon = 1e-4);
        assert_abs_diff_eq!(last.omega[j], 0.0, epsilon = 1e-4);
    }
    for (a, b) in last.flows.iter().zip(&opt.flows) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-4);
    }
}

#[test]
fn infeasible_radial_case_raises_a_warning() {
    let g = grid(
        vec![Bus::new(1).with_generation(1.0, 2.0), Bus::new(2).with_demand(1.0)],
        vec![Line::new(0, 1, 1.0, 0.5)],
    );
    let t = g.topology();
    let problem = ControlProblem::nominal(&g, t.clone());
    let sc = Scenario::line_failure(&g, &t).unwrap();
    let det = detect_severe(&g, &t, &sc, &UcDynamics::new(problem), 0.5, 60.0).unwrap();
    assert!(det.severe);
    assert!(det.warning_time.unwrap() < 60.0);
}

#[test]
fn slack_instance_raises_no_warning() {
    // Losing (1,2) leaves 0.6 and 0.4 on lines rated 0.9.
    let g = triangle();
    let topo = g.topology().without(&[LineId(0)]);
    let problem = ControlProblem::nominal(&g, topo.clone());
    let sc = Scenario::line_failure(&g, &topo).unwrap();
    let det = detect_severe(&g, &topo, &sc, &UcDynamics::new(problem), 0.5, 60.0).unwrap();
    assert!(!det.severe, "max dual {}", det.max_dual_seen);

    // A binding line has a bounded price that can sit above the threshold.
    let g = congested_triangle();
    let topo = g.topology();
    let mut uc = UcDynamics::new(ControlProblem::nominal(&g, topo.clone()));
    let sc = Scenario::line_failure(&g, &topo).unwrap();
    assert!(detect_severe(&g, &topo, &sc, &uc, 0.5, 60.0).unwrap().severe);
    uc.detector = Some(Detector {
        line_duals: false,
        ..Detector::default()
    });
    let det = detect_severe(&g, &topo, &sc, &uc, 0.5, 200.0).unwrap();
    assert!(!det.severe, "max dual {}", det.max_dual_seen);
}

#[test]
fn escalation_moves_up_the_ladder_and_settles() {
    let g = grid(
        vec![Bus::new(1).with_generation(1.0, 2.0), Bus::new(2).with_demand(1.0)],
        vec![Line::new(0, 1, 1.0, 0.5)],
    );
    let t = g.topology();
    let sc = Scenario::line_failure(&g, &t).unwrap();
    let uc = UcDynamics::new(ControlProblem::nominal(&g, t.clone()));
    let traj = simulate(&g, &t, &sc, &Controller::Unified(uc), &short(600.0)).unwrap();
    assert!(traj
        .events
        .iter()
        .any(|e| e.kind == EventKind::Escalated { level: RelaxationLevel::L1 }));
    assert_eq!(traj.final_level, Some(RelaxationLevel::L1));
    // Shedding answers at the load gain, so the approach to the limit is slow
    // but steady once the ladder has moved.
    let tail: Vec<f64> = traj.samples.iter().filter(|s| s.t >= 60.0).map(|s| s.flows[0]).collect();
    assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert!(tail[tail.len() - 1] < 0.53);
    assert!(tail[tail.len() - 1] > 0.5);
}

#[test]
fn csv_has_one_row_per_sample() {
    let g = triangle();
    let t = g.topology();
    let sc = Scenario::step_change(&t, &g.injections(), &[0.0; 3]).unwrap();
    let traj = simulate(&g, &t, &sc, &Controller::Droop, &short(0.1)).unwrap();
    let mut buf = Vec::new();
    write_csv(&traj, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,omega_1,omega_2,omega_3,f_1_2,f_1_3,f_2_3,d_1,d_2,d_3,events");
    assert_eq!(lines.count(), traj.samples.len());
}
