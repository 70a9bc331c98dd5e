use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use tiegrid::cascade::{
    proportional_balance, run_cascade, AgcRule, CascadeError, DroopRule, ProportionalRule,
    TerminalStatus, UcRule,
};
use tiegrid::network::{dc_power_flow, Bus, GridCase, Line, LineId, Topology};

/// Ring 1-2-3-4-1 with chord (1,3); all susceptances 1.
fn ring_with_chord() -> GridCase {
    GridCase::new(
        "ring",
        100.0,
        vec![
            Bus::new(1).with_generation(2.0, 3.0),
            Bus::new(2).with_demand(0.5),
            Bus::new(3).with_demand(1.0),
            Bus::new(4).with_demand(0.5),
        ],
        vec![
            Line::new(0, 1, 1.0, 1.0),
            Line::new(1, 2, 1.0, 1.0),
            Line::new(2, 3, 1.0, 1.0),
            Line::new(3, 0, 1.0, 0.8),
            Line::new(0, 2, 1.0, 2.1),
        ],
    )
    .unwrap()
}

/// Flows from the Moore-Penrose inverse of the full Laplacian.
fn pinv_flows(n: usize, ends: &[(usize, usize)], p: &[f64]) -> Vec<f64> {
    let mut c = DMatrix::zeros(n, ends.len());
    for (e, &(i, j)) in ends.iter().enumerate() {
        c[(i, e)] = 1.0;
        c[(j, e)] = -1.0;
    }
    let l = &c * c.transpose();
    let theta = l.pseudo_inverse(1e-12).unwrap() * DVector::from_row_slice(p);
    (c.transpose() * theta).iter().copied().collect()
}

#[test]
fn two_stage_cascade_on_ring_with_chord() {
    let g = ring_with_chord();
    let trace = run_cascade(&g, &[LineId(0)], &ProportionalRule, 100).unwrap();
    assert_eq!(trace.status, TerminalStatus::Terminated);
    assert_eq!(trace.n_stages(), 2);

    // Stage 1: (1,2) is gone; (4,1) carries 5/6 > 0.8.
    let p = [2.0, -0.5, -1.0, -0.5];
    let s1 = pinv_flows(4, &[(1, 2), (2, 3), (3, 0), (0, 2)], &p);
    assert_abs_diff_eq!(s1[2], -5.0 / 6.0, epsilon = 1e-12);
    for (a, b) in trace.stages[0].flows.iter().zip(&s1) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    assert_eq!(trace.stages[0].overloaded, vec![LineId(3)]);

    // Stage 2: the remaining tree carries 2.0 on the chord, inside 2.1.
    assert_eq!(trace.stages[1].tripped, vec![LineId(3)]);
    let s2 = pinv_flows(4, &[(1, 2), (2, 3), (0, 2)], &p);
    for (a, b) in trace.stages[1].flows.iter().zip(&s2) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
    assert_abs_diff_eq!(s2[2], 2.0, epsilon = 1e-12);
    assert!(trace.last().overloaded.is_empty());
    assert_eq!(trace.total_shed(), 0.0);
}

#[test]
fn harmless_failure_gives_one_stage() {
    let g = ring_with_chord();
    let trace = run_cascade(&g, &[LineId(2)], &ProportionalRule, 100).unwrap();
    assert_eq!(trace.n_stages(), 1);
    assert_eq!(trace.status, TerminalStatus::Terminated);
}

#[test]
fn stage_budget_is_reported() {
    let g = ring_with_chord();
    let trace = run_cascade(&g, &[LineId(0)], &ProportionalRule, 1).unwrap();
    assert_eq!(trace.n_stages(), 1);
    assert_eq!(trace.status, TerminalStatus::MaxStagesExceeded);
}

#[test]
fn stored_stages_replay_exactly() {
    let g = ring_with_chord();
    let trace = run_cascade(&g, &[LineId(0)], &ProportionalRule, 100).unwrap();
    let mut seen: Vec<LineId> = g.topology().ids().to_vec();
    for stage in &trace.stages {
        assert!(stage.tripped.iter().all(|id| seen.contains(id)));
        assert!(stage.surviving.len() < seen.len());
        seen = stage.surviving.clone();
        let replay = dc_power_flow(&stage.topology(&g), &stage.injections).unwrap();
        for (a, b) in replay.flows.iter().zip(&stage.flows) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }
}

#[test]
fn proportional_balance_follows_closed_form() {
    // Buses 1-2 joined, bus 3 alone.
    let t = Topology::from_parts(3, vec![(0, 1)], vec![1.0], vec![1.0]);
    let p = [0.7, 0.3, -1.0];
    let out = proportional_balance(&p, &t, &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(out[0], 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(out[1], -0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(out[2], 0.0, epsilon = 1e-15);

    // A connected network keeps its injections.
    let t = Topology::from_parts(2, vec![(0, 1)], vec![1.0], vec![1.0]);
    assert_eq!(proportional_balance(&[0.5, -0.5], &t, &[1.0; 2], &[0.0; 2]).unwrap(), vec![0.5, -0.5]);

    // A balanced island is left alone.
    let t = Topology::from_parts(3, vec![(0, 1)], vec![1.0], vec![1.0]);
    let out = proportional_balance(&[0.5, -0.5, 0.0], &t, &[1.0; 3], &[0.0; 3]).unwrap();
    assert_eq!(out, vec![0.5, -0.5, 0.0]);

    let err = proportional_balance(&[0.5, 0.0, -0.5], &t, &[0.0; 3], &[0.0; 3]).unwrap_err();
    assert!(matches!(err, CascadeError::DegenerateIsland { .. }));
}

/// Path 1-2-3 where losing (2,3) islands bus 3.
fn islanding_path() -> GridCase {
    GridCase::new(
        "path",
        100.0,
        vec![
            Bus::new(1).with_generation(1.5, 2.0).with_gains(2.0, 0.02),
            Bus::new(2).with_demand(0.6),
            Bus::new(3).with_generation(0.2, 0.5).with_demand(1.1),
        ],
        vec![Line::new(0, 1, 1.0, 2.0), Line::new(1, 2, 1.0, 2.0)],
    )
    .unwrap()
}

#[test]
fn droop_rule_reproduces_proportional_traces() {
    for (g, fail) in [(ring_with_chord(), LineId(0)), (islanding_path(), LineId(1))] {
        let a = run_cascade(&g, &[fail], &ProportionalRule, 100).unwrap();
        let b = run_cascade(&g, &[fail], &DroopRule, 100).unwrap();
        assert_eq!(a.n_stages(), b.n_stages());
        for (x, y) in a.stages.iter().zip(&b.stages) {
            assert_eq!(x.tripped, y.tripped);
            assert_eq!(x.overloaded, y.overloaded);
            for (u, v) in x.injections.iter().zip(&y.injections) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn unified_controller_stops_at_first_stage() {
    for (g, fail) in [(ring_with_chord(), LineId(0)), (islanding_path(), LineId(1))] {
        let trace = run_cascade(&g, &[fail], &UcRule::default(), 100).unwrap();
        assert_eq!(trace.n_stages(), 1);
        assert!(trace.last().overloaded.is_empty());
        assert!(trace.last().diagnostics.is_some());
    }
}

#[test]
fn agc_can_cascade_where_uc_does_not() {
    let g = ring_with_chord();
    let agc = run_cascade(&g, &[LineId(0)], &AgcRule::default(), 100).unwrap();
    assert_eq!(agc.n_stages(), 2);
    let uc = run_cascade(&g, &[LineId(0)], &UcRule::default(), 100).unwrap();
    assert_eq!(uc.n_stages(), 1);
    let diag = uc.last().diagnostics.as_ref().unwrap();
    assert!(diag.kkt_max < 1e-6);
}

#[test]
fn rejects_bad_initial_failures() {
    let g = ring_with_chord();
    assert!(matches!(
        run_cascade(&g, &[], &ProportionalRule, 10),
        Err(CascadeError::NoInitialFailure)
    ));
    let g2 = g.with_lines_out(&[LineId(4)]);
    assert!(matches!(
        run_cascade(&g2, &[LineId(4)], &ProportionalRule, 10),
        Err(CascadeError::NotInService(LineId(4)))
    ));
}
