//! One-way import of the MATPOWER `.m` case subset.
//!
//! Consumed columns:
//! - `mpc.bus`: BUS_I, PD
//! - `mpc.gen`: GEN_BUS, PG, GEN_STATUS, PMAX, PMIN
//! - `mpc.branch`: F_BUS, T_BUS, BR_X, RATE_A, TAP, SHIFT, BR_STATUS
//!
//! Reactive data, resistances, charging and cost tables are ignored.

use std::collections::HashMap;
use std::path::Path;

use super::{BusRecord, CaseDocument, CaseError, LineRecord, Units, SCHEMA_VERSION};

/// Limit given to branches with RATE_A = 0 (unlimited), pu.
pub const UNLIMITED_RATING: f64 = 1e6;

struct Matrix {
    rows: Vec<Vec<f64>>,
    /// Source line of each row.
    lines: Vec<usize>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

fn find_scalar(text: &str, name: &str) -> Option<(usize, String)> {
    let key = format!("mpc.{name}");
    text.lines().enumerate().find_map(|(k, raw)| {
        let line = strip_comment(raw).trim();
        let rest = line.strip_prefix(&key)?.trim_start();
        let rest = rest.strip_prefix('=')?;
        Some((k + 1, rest.trim().trim_end_matches(';').trim().to_string()))
    })
}

fn find_matrix(text: &str, name: &str) -> Result<Option<Matrix>, CaseError> {
    let key = format!("mpc.{name}");
    let all: Vec<&str> = text.lines().collect();
    let Some(start) = all.iter().position(|raw| {
        let line = strip_comment(raw).trim();
        line.strip_prefix(&key)
            .map(|r| r.trim_start().starts_with('='))
            .unwrap_or(false)
    }) else {
        return Ok(None);
    };
    let first = strip_comment(all[start]);
    let open = first.find('[').ok_or_else(|| CaseError::Parse {
        line: start + 1,
        reason: format!("expected '[' after {key}"),
    })?;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut k = start;
    let mut body = first[open + 1..].to_string();
    loop {
        let (chunk, done) = match body.find(']') {
            Some(close) => (body[..close].to_string(), true),
            None => (body.clone(), false),
        };
        for (piece_no, piece) in chunk.split(';').enumerate() {
            if piece_no > 0 && !current.is_empty() {
                rows.push(std::mem::take(&mut current));
                lines.push(k + 1);
            }
            for tok in piece.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let v = parse_number(tok).ok_or_else(|| CaseError::Parse {
                    line: k + 1,
                    reason: format!("bad number '{tok}' in {key}"),
                })?;
                current.push(v);
            }
        }
        if !current.is_empty() {
            rows.push(std::mem::take(&mut current));
            lines.push(k + 1);
        }
        if done {
            break;
        }
        k += 1;
        if k >= all.len() {
            return Err(CaseError::Parse {
                line: start + 1,
                reason: format!("unterminated matrix {key}"),
            });
        }
        body = strip_comment(all[k]).to_string();
    }
    Ok(Some(Matrix { rows, lines }))
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn require<'a>(m: &'a Matrix, name: &str, cols: usize) -> Result<&'a Matrix, CaseError> {
    for (row, &line) in m.rows.iter().zip(&m.lines) {
        if row.len() < cols {
            return Err(CaseError::Parse {
                line,
                reason: format!("mpc.{name} row has {} columns, need {cols}", row.len()),
            });
        }
    }
    Ok(m)
}

pub fn import_matpower(path: &Path) -> Result<CaseDocument, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    import_matpower_str(&text, &name)
}

/// Maps a MATPOWER case to a per-unit document. Dynamics fields are left
/// empty so they take the defaults on load.
pub fn import_matpower_str(text: &str, name: &str) -> Result<CaseDocument, CaseError> {
    if find_matrix(text, "dcline")?.is_some_and(|m| !m.rows.is_empty()) {
        return Err(CaseError::Unsupported("DC lines (mpc.dcline)".into()));
    }
    let (line, base) = find_scalar(text, "baseMVA").ok_or_else(|| CaseError::Parse {
        line: 0,
        reason: "missing mpc.baseMVA".into(),
    })?;
    let base_mva: f64 = base.parse().map_err(|_| CaseError::Parse {
        line,
        reason: format!("bad baseMVA '{base}'"),
    })?;
    if !(base_mva > 0.0) {
        return Err(CaseError::Value {
            field: "baseMVA".into(),
            reason: "must be positive".into(),
        });
    }
    let missing = |what: &str| CaseError::Parse {
        line: 0,
        reason: format!("missing mpc.{what}"),
    };
    let bus_m = find_matrix(text, "bus")?.ok_or_else(|| missing("bus"))?;
    let gen_m = find_matrix(text, "gen")?.ok_or_else(|| missing("gen"))?;
    let br_m = find_matrix(text, "branch")?.ok_or_else(|| missing("branch"))?;
    require(&bus_m, "bus", 3)?;
    require(&gen_m, "gen", 10)?;
    require(&br_m, "branch", 11)?;

    let mut notes = vec![format!("imported from MATPOWER case {name}")];
    let mut buses: Vec<BusRecord> = Vec::with_capacity(bus_m.rows.len());
    let mut index: HashMap<u32, usize> = HashMap::new();
    let as_id = |v: f64, line: usize| -> Result<u32, CaseError> {
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as u32)
        } else {
            Err(CaseError::Parse {
                line,
                reason: format!("bad bus number {v}"),
            })
        }
    };
    let mut negative_load = 0;
    for (row, &line) in bus_m.rows.iter().zip(&bus_m.lines) {
        let id = as_id(row[0], line)?;
        if index.insert(id, buses.len()).is_some() {
            return Err(CaseError::Value {
                field: format!("bus {id}"),
                reason: "duplicate bus number".into(),
            });
        }
        let pd = row[2] / base_mva;
        let mut rec = BusRecord {
            id,
            demand: pd.max(0.0),
            generation: 0.0,
            gen_min: 0.0,
            gen_max: 0.0,
            damping: None,
            inertia: None,
            alpha: None,
            alpha_load: None,
            cost: None,
            area: 0,
        };
        if pd < 0.0 {
            // Negative load is a fixed injection.
            rec.generation = -pd;
            rec.gen_min = -pd;
            rec.gen_max = -pd;
            negative_load += 1;
        }
        buses.push(rec);
    }
    if negative_load > 0 {
        notes.push(format!("{negative_load} buses with negative demand imported as must-run generation"));
    }

    let mut clipped_pmin = 0;
    let mut offline = 0;
    for (row, &line) in gen_m.rows.iter().zip(&gen_m.lines) {
        let id = as_id(row[0], line)?;
        let &k = index.get(&id).ok_or_else(|| CaseError::Value {
            field: format!("gen on line {line}"),
            reason: format!("unknown bus {id}"),
        })?;
        if row[7] <= 0.0 {
            offline += 1;
            continue;
        }
        let (pg, pmax, mut pmin) = (row[1] / base_mva, row[8] / base_mva, row[9] / base_mva);
        if pmin < 0.0 {
            clipped_pmin += 1;
            pmin = 0.0;
        }
        let rec = &mut buses[k];
        rec.generation += pg.max(0.0);
        rec.gen_max += pmax.max(0.0);
        rec.gen_min += pmin.min(pmax.max(0.0));
    }
    if offline > 0 {
        notes.push(format!("{offline} out-of-service generators skipped"));
    }
    if clipped_pmin > 0 {
        notes.push(format!("{clipped_pmin} generators with negative PMIN clipped to 0"));
    }

    let mut lines = Vec::with_capacity(br_m.rows.len());
    let (mut taps, mut negative_x, mut unlimited) = (0, 0, 0);
    for (row, &line) in br_m.rows.iter().zip(&br_m.lines) {
        let from = as_id(row[0], line)?;
        let to = as_id(row[1], line)?;
        for end in [from, to] {
            if !index.contains_key(&end) {
                return Err(CaseError::Value {
                    field: format!("branch on line {line}"),
                    reason: format!("unknown bus {end}"),
                });
            }
        }
        if row[9] != 0.0 {
            return Err(CaseError::Unsupported(format!("phase shifter on line {line}")));
        }
        let mut x = row[3];
        if x == 0.0 || !x.is_finite() {
            return Err(CaseError::Value {
                field: format!("branch on line {line}"),
                reason: "reactance must be nonzero".into(),
            });
        }
        if x < 0.0 {
            negative_x += 1;
            x = -x;
        }
        let tap = if row[8] == 0.0 { 1.0 } else { row[8] };
        if tap != 1.0 {
            taps += 1;
        }
        let mut limit = row[5] / base_mva;
        if limit <= 0.0 {
            unlimited += 1;
            limit = UNLIMITED_RATING;
        }
        lines.push(LineRecord {
            from,
            to,
            susceptance: 1.0 / (x * tap),
            limit,
            in_service: row[10] > 0.0,
        });
    }
    if taps > 0 {
        let msg = format!("{taps} off-nominal tap ratios folded into susceptance as 1/(x·tap)");
        log::warn!("{msg}");
        notes.push(msg);
    }
    if negative_x > 0 {
        let msg = format!("{negative_x} branches with negative reactance imported with |x|");
        log::warn!("{msg}");
        notes.push(msg);
    }
    if unlimited > 0 {
        notes.push(format!("{unlimited} branches without RATE_A given limit {UNLIMITED_RATING} pu"));
    }
    notes.push("inertia, damping and control gains not present in MATPOWER; defaults apply".into());

    Ok(CaseDocument {
        schema: SCHEMA_VERSION,
        name: name.to_string(),
        base_mva,
        units: Units::Pu,
        buses,
        lines,
        partition: None,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_split_across_and_within_lines() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0; 2 1 50 % load\n];\n\
                    mpc.gen = [1 50 0 0 0 1 100 1 200 0];\n\
                    mpc.branch = [\n1 2 0 0.1 0 80 0 0 0 0 1;\n];\n";
        let doc = import_matpower_str(text, "t").unwrap();
        assert_eq!(doc.buses.len(), 2);
        assert_eq!(doc.buses[1].demand, 0.5);
        assert_eq!(doc.buses[0].gen_max, 2.0);
        assert_eq!(doc.lines[0].susceptance, 10.0);
        assert_eq!(doc.lines[0].limit, 0.8);
    }

    #[test]
    fn rejects_dc_lines_and_shifters() {
        let base = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0; 2 1 50];\nmpc.gen = [1 50 0 0 0 1 100 1 200 0];\n";
        let dc = format!("{base}mpc.branch = [1 2 0 0.1 0 80 0 0 0 0 1];\nmpc.dcline = [1 2 1 10 0 0 0 1 1 0 100 0 0 0 0 0 0];\n");
        assert!(matches!(import_matpower_str(&dc, "t"), Err(CaseError::Unsupported(_))));
        let ps = format!("{base}mpc.branch = [1 2 0 0.1 0 80 0 0 1 5 1];\n");
        assert!(matches!(import_matpower_str(&ps, "t"), Err(CaseError::Unsupported(_))));
    }
}
