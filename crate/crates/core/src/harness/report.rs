use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, ScenarioResult, ScenarioStatus, Strategy, Sweep, SweepConfig};
use crate::network::GridCase;
use crate::partition::{tie_lines, Partition};

/// Header of `scenarios.csv`.
pub const SCENARIO_COLUMNS: [&str; 15] = [
    "alpha",
    "strategy",
    "line",
    "from_bus",
    "to_bus",
    "status",
    "llr",
    "agr",
    "stages",
    "level",
    "severe",
    "terminated",
    "nonlocal_adjustments",
    "ace_lifted",
    "error",
];

/// Table row for one (strategy, α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub alpha: f64,
    /// Scenarios that ran to completion.
    pub scenarios: usize,
    pub errored: usize,
    pub nonzero_llr: usize,
    pub nonzero_agr: usize,
    pub frac_nonzero_llr: f64,
    pub frac_nonzero_agr: f64,
    /// Mean over the scenarios with nonzero LLR; `None` when there are none.
    pub mean_nonzero_llr: Option<f64>,
    pub mean_nonzero_agr: Option<f64>,
    pub severe: usize,
    pub max_stages: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Folds the scenarios of one (strategy, α) in the order given.
pub fn aggregate(scenarios: &[ScenarioResult], strategy: Strategy, alpha: f64, llr_tol: f64) -> Aggregate {
    let mine: Vec<&ScenarioResult> = scenarios
        .iter()
        .filter(|s| s.strategy == strategy && s.alpha == alpha)
        .collect();
    let ok: Vec<&ScenarioResult> = mine.iter().copied().filter(|s| s.status == ScenarioStatus::Ok).collect();
    let llr: Vec<f64> = ok.iter().map(|s| s.llr).filter(|&v| v > llr_tol).collect();
    let agr: Vec<f64> = ok.iter().map(|s| s.agr).filter(|&v| v > 0.0).collect();
    Aggregate {
        strategy,
        alpha,
        scenarios: ok.len(),
        errored: mine.len() - ok.len(),
        nonzero_llr: llr.len(),
        nonzero_agr: agr.len(),
        frac_nonzero_llr: ratio(llr.len(), ok.len()),
        frac_nonzero_agr: ratio(agr.len(), ok.len()),
        mean_nonzero_llr: mean(&llr),
        mean_nonzero_agr: mean(&agr),
        severe: ok.iter().filter(|s| s.severe).count(),
        max_stages: ok.iter().map(|s| s.stages).max().unwrap_or(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub network: String,
    pub n_buses: usize,
    pub n_lines: usize,
    pub area_sizes: Vec<usize>,
    /// Tie lines by endpoint bus ids.
    pub tie_lines: Vec<(u32, u32)>,
    pub switched_off: Vec<(u32, u32)>,
    pub config: SweepConfig,
    /// One row per (α, strategy), α-major.
    pub rows: Vec<Aggregate>,
}

impl SweepReport {
    pub fn build(grid: &GridCase, partition: &Partition, config: &SweepConfig, scenarios: &[ScenarioResult]) -> Self {
        let topo = grid.topology();
        let ends = |id: &crate::network::LineId| {
            let l = &grid.lines[id.0];
            (grid.buses[l.from].id, grid.buses[l.to].id)
        };
        let mut rows = Vec::new();
        for &alpha in &config.alphas {
            for &strategy in &config.strategies {
                rows.push(aggregate(scenarios, strategy, alpha, config.llr_tol));
            }
        }
        Self {
            network: grid.name.clone(),
            n_buses: grid.n_buses(),
            n_lines: topo.n_lines(),
            area_sizes: partition.sizes(),
            tie_lines: tie_lines(&topo, partition).iter().map(ends).collect(),
            switched_off: partition.switched_off.iter().map(ends).collect(),
            config: config.clone(),
            rows,
        }
    }

    pub fn row(&self, strategy: Strategy, alpha: f64) -> Option<&Aggregate> {
        self.rows.iter().find(|r| r.strategy == strategy && r.alpha == alpha)
    }

    pub fn errored(&self) -> usize {
        self.rows.iter().map(|r| r.errored).sum()
    }

    /// Both tables in markdown, strategies as column groups.
    pub fn tables_markdown(&self) -> String {
        let pct = |v: f64| format!("{:.2}%", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or("-".to_string(), pct);
        let mut cols = Vec::new();
        for &s in &self.config.strategies {
            for &a in &self.config.alphas {
                cols.push((s, a));
            }
        }
        let header = |out: &mut String| {
            out.push_str("| Metric |");
            for (s, a) in &cols {
                let _ = write!(out, " {} α={} |", s.title(), a);
            }
            out.push('\n');
            out.push_str("|---|");
            out.push_str(&"---:|".repeat(cols.len()));
            out.push('\n');
        };
        let line = |out: &mut String, name: &str, f: &dyn Fn(&Aggregate) -> String| {
            let _ = write!(out, "| {name} |");
            for &(s, a) in &cols {
                let cell = self.row(s, a).map_or("-".to_string(), f);
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        };

        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {}: single-line contingency sweep\n\n{} buses, {} lines, areas {:?}, {} tie lines, {} switched off for tree strategies.\n",
            self.network,
            self.n_buses,
            self.n_lines,
            self.area_sizes,
            self.tie_lines.len(),
            self.switched_off.len()
        );
        out.push_str("## Fraction of failure scenarios with non-zero LLR/AGR\n\n");
        header(&mut out);
        line(&mut out, "LLR", &|r| pct(r.frac_nonzero_llr));
        line(&mut out, "AGR", &|r| pct(r.frac_nonzero_agr));
        out.push_str("\n## Average values of non-zero LLR/AGR\n\n");
        header(&mut out);
        line(&mut out, "LLR", &|r| opt(r.mean_nonzero_llr));
        line(&mut out, "AGR", &|r| opt(r.mean_nonzero_agr));
        out.push_str("\n## Scenario counts\n\n");
        header(&mut out);
        line(&mut out, "completed", &|r| r.scenarios.to_string());
        line(&mut out, "errored", &|r| r.errored.to_string());
        line(&mut out, "severe", &|r| r.severe.to_string());
        line(&mut out, "max stages", &|r| r.max_stages.to_string());
        let errored = self.errored();
        if errored > 0 {
            let _ = writeln!(out, "\n{errored} scenarios errored and are excluded from the fractions and means; see scenarios.csv.");
        }
        out
    }
}

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl OutputMeta {
    fn banner(&self) -> String {
        format!("{} {} config {}", self.tool, self.version, self.config_hash)
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    meta: &'a OutputMeta,
    nominal_objective: f64,
    #[serde(flatten)]
    report: &'a SweepReport,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `report.json`, `scenarios.csv` (after one `#` banner line) and
/// `tables.md` into `dir`.
pub fn write_outputs(dir: &Path, sweep: &Sweep, meta: &OutputMeta) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let path = dir.join("report.json");
    let file = ReportFile {
        meta,
        nominal_objective: sweep.nominal.objective,
        report: &sweep.report,
    };
    let json = serde_json::to_string_pretty(&file).expect("reports always serialize");
    std::fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let path = dir.join("scenarios.csv");
    let mut buf = format!("# {}\n", meta.banner()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(SCENARIO_COLUMNS)?;
        for s in &sweep.scenarios {
            w.write_record([
                s.alpha.to_string(),
                s.strategy.to_string(),
                s.line.0.to_string(),
                s.from_bus.to_string(),
                s.to_bus.to_string(),
                match s.status {
                    ScenarioStatus::Ok => "ok".into(),
                    ScenarioStatus::Errored => "errored".into(),
                },
                s.llr.to_string(),
                s.agr.to_string(),
                s.stages.to_string(),
                s.level.map_or(String::new(), |l| l.to_string()),
                s.severe.to_string(),
                s.terminated.to_string(),
                s.nonlocal_adjustments.to_string(),
                s.ace_lifted.to_string(),
                s.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    std::fs::write(&path, buf).map_err(io_err(&path))?;

    let path = dir.join("tables.md");
    let md = format!("<!-- {} -->\n{}", meta.banner(), sweep.report.tables_markdown());
    std::fs::write(&path, md).map_err(io_err(&path))?;
    Ok(())
}
