//! Small networks shipped with the crate.

use super::{import_matpower_str, parse_case, CaseError, LoadedCase, ParseMode};
use crate::network::GridCase;

const TWO_BUS: &str = include_str!("../../fixtures/two_bus.json");
const TRIANGLE: &str = include_str!("../../fixtures/triangle.json");
const FOUR_BUS: &str = include_str!("../../fixtures/four_bus.json");
const SIX_BUS: &str = include_str!("../../fixtures/six_bus_two_area.json");
const CASE39: &str = include_str!("../../../../data/matpower/case39.m");

/// Buses of the second control area of the 39-bus system. The three tie
/// lines are (1,2), (2,3) and (26,27).
pub const IEEE39_AREA_B: [u32; 8] = [2, 25, 26, 28, 29, 30, 37, 38];

/// Line limits changed from the MATPOWER data, in MW.
///
/// (2,3) and (2,25) are raised so the single-bridge tree carries the area
/// export. (5,8) and (8,9) are lowered so buses 7 and 8 (755.8 MW of load)
/// cannot be served without shedding once (6,7) is lost. (6,11) is raised
/// so losing (4,14) leaves a small overload that redispatch clears.
pub const IEEE39_LIMIT_CHANGES: [((u32, u32), f64); 5] =
    [((2, 3), 900.0), ((2, 25), 600.0), ((5, 8), 450.0), ((8, 9), 250.0), ((6, 11), 500.0)];

pub fn bundled_names() -> &'static [&'static str] {
    &["two_bus", "triangle", "four_bus", "six_bus_two_area", "ieee39"]
}

pub fn bundled(name: &str) -> Result<LoadedCase, CaseError> {
    let text = match name {
        "two_bus" => TWO_BUS,
        "triangle" => TRIANGLE,
        "four_bus" => FOUR_BUS,
        "six_bus_two_area" => SIX_BUS,
        "ieee39" => {
            return Ok(LoadedCase {
                grid: ieee39(),
                partition: None,
                defaulted: vec!["all buses: inertia, damping, alpha, alpha_load".into()],
                warnings: Vec::new(),
                notes: vec![
                    "MATPOWER case39 with generation scaled to demand, two areas and modified limits".into(),
                ],
            })
        }
        _ => {
            return Err(CaseError::Value {
                field: "case".into(),
                reason: format!("no bundled case named '{name}'"),
            })
        }
    };
    parse_case(text.as_bytes(), ParseMode::Strict)
}

/// The IEEE 39-bus system in two control areas.
///
/// Taken from MATPOWER `case39` with:
/// - dispatch scaled uniformly so total generation equals total demand,
/// - buses in [`IEEE39_AREA_B`] placed in area 1, the rest in area 0,
/// - the limit changes in [`IEEE39_LIMIT_CHANGES`],
/// - default inertia, damping and control gains.
pub fn ieee39() -> GridCase {
    let doc = import_matpower_str(CASE39, "ieee39").expect("bundled case39 parses");
    let mut grid = doc.to_grid().expect("bundled case39 is valid").grid;
    let demand = grid.total_demand();
    let supply: f64 = grid.buses.iter().map(|b| b.generation).sum();
    for bus in &mut grid.buses {
        bus.generation *= demand / supply;
        if IEEE39_AREA_B.contains(&bus.id) {
            bus.area = 1;
        }
    }
    for ((a, b), mw) in IEEE39_LIMIT_CHANGES {
        let id = grid.find_line(a, b).expect("modified line exists");
        grid.lines[id.0].limit = mw / grid.base_mva;
    }
    grid
}
