use std::io::Write;

use super::{EventKind, Trajectory};

/// Writes one row per sample: `t`, then `omega_<bus>`, `f_<from>_<to>`,
/// `d_<bus>`, each dual, and an `events` column naming events raised since
/// the previous sample.
pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(traj.bus_ids.iter().map(|id| format!("omega_{id}")));
    header.extend(
        traj.line_labels
            .iter()
            .map(|l| format!("f_{}", l.trim_matches(|c| c == '(' || c == ')').replace(',', "_"))),
    );
    header.extend(traj.bus_ids.iter().map(|id| format!("d_{id}")));
    header.extend(traj.dual_labels.iter().map(|l| l.replace(['(', ')'], "").replace(',', "_")));
    header.push("events".into());
    w.write_record(&header)?;

    let mut prev = f64::NEG_INFINITY;
    for s in &traj.samples {
        let mut row: Vec<String> = vec![format!("{:.6}", s.t)];
        for v in s.omega.iter().chain(&s.flows).chain(&s.control).chain(&s.duals) {
            row.push(format!("{v:.9e}"));
        }
        let events: Vec<String> = traj
            .events
            .iter()
            .filter(|e| e.t > prev && e.t <= s.t)
            .map(|e| match &e.kind {
                EventKind::SevereWarning { dual, .. } => format!("warning:{dual}"),
                EventKind::Escalated { level } => format!("escalate:{level}"),
            })
            .collect();
        row.push(events.join(";"));
        w.write_record(&row)?;
        prev = s.t;
    }
    w.flush()?;
    Ok(())
}
