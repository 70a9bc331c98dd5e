use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use tiegrid::cascade::{
    run_cascade_from, AgcRule, BalancingRule, CascadeOptions, CascadeTrace, DroopRule, OperatingPoint,
    ProportionalRule, UcRule,
};
use tiegrid::case_io::{bundled, bundled_names, import_matpower, load_any, LoadedCase, ParseMode};
use tiegrid::control::{mitigate, ControlSolution, MitigationConfig, RelaxationLevel};
use tiegrid::dynamics::{write_csv, EventKind};
use tiegrid::harness::{
    dc_opf, demo_grid, run_demo_failure, run_sweep, write_outputs, DemoConfig, DemoRun, HarnessError, Strategy,
    SweepConfig, DEMO_FAILURES,
};
use tiegrid::network::{dc_power_flow, GridCase, LineId};
use tiegrid::partition::{
    congestion_level, keep_largest_flow, modularity, modularity_bisect, optimal_switching, tie_lines, Partition,
    PartitionFile, Weighting,
};

use crate::config::{banner, digest, RunConfig, Stamped};
use crate::error::CliError;
use crate::{PartitionMethod, Rule, Switching};

fn load(case: &str, strict: bool) -> Result<(LoadedCase, String), CliError> {
    let mode = if strict { ParseMode::Strict } else { ParseMode::Lenient };
    let path = Path::new(case);
    let loaded = if path.exists() {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{case}: {e}")))?;
        (load_any(path, mode)?, digest(&bytes))
    } else if bundled_names().contains(&case) {
        (bundled(case)?, digest(format!("bundled:{case}").as_bytes()))
    } else {
        return Err(CliError::Data(format!("{case}: no such file or bundled case")));
    };
    Ok(loaded)
}

fn config_for(command: &str, case: &str, digest: String, strict: bool) -> RunConfig {
    RunConfig {
        command: command.into(),
        case: case.into(),
        case_digest: digest,
        dual_threshold: 0.5,
        agr_tol: 1e-4,
        max_stages: 100,
        strict_parse: strict,
        ..RunConfig::default()
    }
}

fn find_lines(grid: &GridCase, lines: &[(u32, u32)]) -> Result<Vec<LineId>, CliError> {
    lines
        .iter()
        .map(|&(a, b)| {
            grid.find_line(a, b)
                .ok_or_else(|| CliError::Data(format!("no line ({a},{b}) in {}", grid.name)))
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_stamped<T: Serialize>(path: &Path, config: &RunConfig, body: T) -> Result<(), CliError> {
    let meta = config.meta();
    let doc = Stamped {
        meta: &meta,
        config,
        body,
    };
    let json = serde_json::to_string_pretty(&doc).expect("outputs always serialize");
    write_file(path, &(json + "\n"))
}

/// Clears values that would print as -0.000000.
fn clean(x: f64) -> f64 {
    if x.abs() < 5e-7 {
        0.0
    } else {
        x
    }
}

fn ends(grid: &GridCase, id: LineId) -> (u32, u32) {
    let l = &grid.lines[id.0];
    (grid.buses[l.from].id, grid.buses[l.to].id)
}

#[derive(Serialize)]
struct SolveBody<'a> {
    failures: &'a [(u32, u32)],
    lines: Vec<String>,
    flows: Vec<f64>,
    limits: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    control: Option<&'a ControlSolution>,
}

pub fn solve(
    case: &str,
    strict: bool,
    failures: &[(u32, u32)],
    agc: bool,
    opf: bool,
    dual_threshold: f64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    if !(dual_threshold > 0.0) {
        return Err(CliError::Usage("--dual-threshold must be positive".into()));
    }
    let (mut loaded, dig) = load(case, strict)?;
    if opf {
        let dispatch = dc_opf(&loaded.grid)?;
        for (bus, g) in loaded.grid.buses.iter_mut().zip(dispatch.generation) {
            bus.generation = g;
        }
    }
    let grid = &loaded.grid;
    let mut config = config_for("solve", case, dig, strict);
    config.dispatch = Some(if opf { "dc_opf" } else { "case" }.into());
    config.failures = failures.to_vec();
    config.dual_threshold = dual_threshold;
    config.rule = Some(if agc { "agc" } else { "uc" }.into());

    let failed = find_lines(grid, failures)?;
    let topo = grid.topology().without(&failed);
    let mut text = String::new();
    let (flows, control) = if failed.is_empty() {
        (dc_power_flow(&topo, &grid.injections())?.flows, None)
    } else {
        let mconf = MitigationConfig {
            line_limits: !agc,
            ..MitigationConfig::default()
        };
        let (sol, level) = mitigate(grid, &topo, &mconf)?;
        let max_dual = sol.duals.as_ref().map_or(0.0, |d| d.max_abs());
        let _ = writeln!(text, "level {level}");
        let _ = writeln!(text, "status {:?}", sol.status);
        let _ = writeln!(text, "objective {:.6}", sol.objective);
        let _ = writeln!(text, "shed {:.6}", sol.total_shed());
        let _ = writeln!(
            text,
            "max dual {max_dual:.6}{}",
            if max_dual >= dual_threshold { " (at or above threshold)" } else { "" }
        );
        if let Some(d) = &sol.duals {
            for (a, mu) in d.ace.iter().enumerate() {
                let _ = writeln!(text, "ace dual area {a} {:.6}", clean(*mu));
            }
            for (k, id) in topo.ids().iter().enumerate() {
                let price = d.line_upper[k] - d.line_lower[k];
                if price != 0.0 {
                    let _ = writeln!(text, "line dual {} {price:.6}", grid.line_label(*id));
                }
            }
        }
        for (j, b) in grid.buses.iter().enumerate() {
            let d = sol.adjustment()[j];
            if d.abs() > 1e-9 {
                let _ = writeln!(text, "control bus {} {d:.6}", b.id);
            }
        }
        (sol.flows.clone(), Some(sol))
    };
    let labels: Vec<String> = topo.ids().iter().map(|id| grid.line_label(*id)).collect();
    let _ = writeln!(text, "{:<14} {:>12} {:>12}", "line", "flow", "limit");
    for ((label, f), lim) in labels.iter().zip(&flows).zip(topo.limits()) {
        let _ = writeln!(text, "{label:<14} {:>12.4} {lim:>12.4}", clean(*f));
    }
    print!("{text}");

    if let Some(dir) = out {
        let body = SolveBody {
            failures,
            lines: labels,
            flows,
            limits: topo.limits().to_vec(),
            control: control.as_ref(),
        };
        write_stamped(&dir.join("solve.json"), &config, body)?;
    }
    Ok(())
}

fn rule_impl(rule: Rule) -> Box<dyn BalancingRule> {
    match rule {
        Rule::Uc => Box::new(UcRule::default()),
        Rule::Agc => Box::new(AgcRule::default()),
        Rule::Droop => Box::new(DroopRule),
        Rule::Proportional => Box::new(ProportionalRule),
    }
}

fn rule_name(rule: Rule) -> &'static str {
    match rule {
        Rule::Uc => "uc",
        Rule::Agc => "agc",
        Rule::Droop => "droop",
        Rule::Proportional => "proportional",
    }
}

#[derive(Serialize)]
struct CascadeBody<'a> {
    total_shed: f64,
    trace: &'a CascadeTrace,
}

pub fn cascade(
    case: &str,
    strict: bool,
    failures: &[(u32, u32)],
    rule: Rule,
    max_stages: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (loaded, dig) = load(case, strict)?;
    let grid = &loaded.grid;
    let mut config = config_for("cascade", case, dig, strict);
    config.failures = failures.to_vec();
    config.rule = Some(rule_name(rule).into());
    config.max_stages = max_stages;

    let failed = find_lines(grid, failures)?;
    let opts = CascadeOptions {
        max_stages,
        ..CascadeOptions::default()
    };
    let trace = run_cascade_from(
        grid,
        &grid.topology(),
        OperatingPoint::nominal(grid),
        &failed,
        rule_impl(rule).as_ref(),
        &opts,
    )?;

    let label = |ids: &[LineId]| ids.iter().map(|id| grid.line_label(*id)).collect::<Vec<_>>().join(" ");
    let initial_demand: f64 = trace.initial.demand.iter().sum();
    println!("rule {} status {:?} stages {}", trace.rule, trace.status, trace.n_stages());
    let mut rows = Vec::new();
    for s in &trace.stages {
        let demand: f64 = s.demand.iter().sum();
        let generation: f64 = s.generation.iter().sum();
        let level = s.diagnostics.as_ref().map_or(String::new(), |d| d.level.to_string());
        println!(
            "stage {} tripped [{}] overloaded [{}] shed {:.6} level {}",
            s.index,
            label(&s.tripped),
            label(&s.overloaded),
            initial_demand - demand,
            if level.is_empty() { "-" } else { &level }
        );
        rows.push([
            s.index.to_string(),
            label(&s.tripped),
            label(&s.overloaded),
            s.surviving.len().to_string(),
            generation.to_string(),
            demand.to_string(),
            (initial_demand - demand).to_string(),
            level,
        ]);
    }
    println!("total shed {:.6}", trace.total_shed());

    if let Some(dir) = out {
        write_stamped(
            &dir.join("cascade.json"),
            &config,
            CascadeBody {
                total_shed: trace.total_shed(),
                trace: &trace,
            },
        )?;
        let mut buf = format!("# {}\n", banner(&config.meta())).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record([
                "stage", "tripped", "overloaded", "surviving", "generation", "demand", "shed", "level",
            ])?;
            for r in &rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        write_file(&dir.join("stages.csv"), &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionReport {
    pub method: String,
    pub switching: String,
    /// Injections the switching was designed on: `dc_opf` or `case`.
    pub dispatch: String,
    pub area_sizes: Vec<usize>,
    pub modularity: f64,
    pub tie_lines: Vec<(u32, u32)>,
    pub switched_off: Vec<(u32, u32)>,
    /// Largest loading ratio before and after switching.
    pub gamma_mesh: f64,
    pub gamma_tree: f64,
    pub candidates: usize,
    pub exhaustive: bool,
}

/// Nominal OPF injections, or the case's own dispatch when the OPF has no
/// solution.
fn design_injections(grid: &GridCase) -> Result<(Vec<f64>, &'static str), CliError> {
    match dc_opf(grid) {
        Ok(opf) => Ok((opf.injections, "dc_opf")),
        Err(HarnessError::OpfInfeasible(why)) => {
            log::warn!("DC OPF infeasible ({why}); switching on the case dispatch");
            Ok((grid.injections(), "case"))
        }
        Err(e) => Err(e.into()),
    }
}

fn build_partition(
    loaded: &LoadedCase,
    method: PartitionMethod,
    switching: Switching,
) -> Result<(Partition, PartitionReport), CliError> {
    let grid = &loaded.grid;
    let topo = grid.topology();
    let areas = match method {
        PartitionMethod::Modularity => modularity_bisect(&topo)?,
        PartitionMethod::Given => {
            let p = match &loaded.partition {
                Some(p) => Partition::new(p.area_of.clone()),
                None => Partition::from_grid(grid),
            };
            if p.n_areas() < 2 {
                return Err(CliError::Data("the case defines a single area".into()));
            }
            p
        }
    };
    areas.validate(&topo)?;
    let (injections, dispatch) = design_injections(&areas.apply(grid))?;
    let gamma_mesh = congestion_level(&topo, &injections, &areas, &[])?;
    let (off, gamma_tree, candidates, exhaustive) = match switching {
        Switching::Optimal => {
            let s = optimal_switching(&topo, &injections, &areas)?;
            (s.switched_off, s.gamma, s.candidates, s.exhaustive)
        }
        Switching::LargestFlow => {
            let off = keep_largest_flow(&topo, &injections, &areas)?;
            let gamma = congestion_level(&topo, &injections, &areas, &off)?;
            (off, gamma, 1, false)
        }
    };
    let report = PartitionReport {
        method: match method {
            PartitionMethod::Modularity => "modularity",
            PartitionMethod::Given => "given",
        }
        .into(),
        switching: match switching {
            Switching::Optimal => "optimal",
            Switching::LargestFlow => "largest-flow",
        }
        .into(),
        dispatch: dispatch.into(),
        area_sizes: areas.sizes(),
        modularity: modularity(&topo, &areas.area_of, Weighting::Unweighted),
        tie_lines: tie_lines(&topo, &areas).iter().map(|id| ends(grid, *id)).collect(),
        switched_off: off.iter().map(|id| ends(grid, *id)).collect(),
        gamma_mesh,
        gamma_tree,
        candidates,
        exhaustive,
    };
    Ok((areas.with_switched_off(off), report))
}

#[derive(Serialize)]
struct PartitionBody<'a> {
    partition: PartitionFile,
    report: &'a PartitionReport,
}

pub fn partition(
    case: &str,
    strict: bool,
    method: PartitionMethod,
    switching: Switching,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (loaded, dig) = load(case, strict)?;
    let (p, report) = build_partition(&loaded, method, switching)?;
    let mut config = config_for("partition", case, dig, strict);
    config.method = Some(report.method.clone());
    config.switching = Some(report.switching.clone());

    let pairs = |v: &[(u32, u32)]| v.iter().map(|(a, b)| format!("({a},{b})")).collect::<Vec<_>>().join(" ");
    println!("areas {:?} modularity {:.4}", report.area_sizes, report.modularity);
    println!("tie lines {}: {}", report.tie_lines.len(), pairs(&report.tie_lines));
    println!("switched off {}: {}", report.switched_off.len(), pairs(&report.switched_off));
    println!("gamma mesh {:.4} tree {:.4} ({} dispatch)", report.gamma_mesh, report.gamma_tree, report.dispatch);
    if let Some(dir) = out {
        let body = PartitionBody {
            partition: p.to_file(&loaded.grid),
            report: &report,
        };
        write_stamped(&dir.join("partition.json"), &config, body)?;
    }
    Ok(())
}

pub struct SweepArgs {
    pub case: String,
    pub strict_parse: bool,
    pub partition: String,
    pub alphas: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub max_stages: usize,
    pub agr_tol: f64,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RunEcho {}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let (loaded, dig) = load(&args.case, args.strict_parse)?;
    let grid = &loaded.grid;
    let sweep_config = SweepConfig {
        strategies: args.strategies.clone(),
        alphas: args.alphas.clone(),
        max_stages: args.max_stages,
        agr_tol: args.agr_tol,
        workers: args.workers,
        ..SweepConfig::default()
    };
    sweep_config.validate()?;

    let (partition, partition_digest) = match args.partition.as_str() {
        "auto" => (build_partition(&loaded, PartitionMethod::Modularity, Switching::LargestFlow)?.0, None),
        "case" => {
            let p = loaded.partition.clone().unwrap_or_else(|| Partition::from_grid(grid));
            if p.n_areas() < 2 {
                return Err(CliError::Data(format!("{} defines a single area", args.case)));
            }
            (p, None)
        }
        path => {
            let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            let file: PartitionFile = match serde_json::from_slice::<serde_json::Value>(&bytes) {
                Ok(serde_json::Value::Object(mut m)) if m.contains_key("partition") => {
                    serde_json::from_value(m.remove("partition").expect("checked"))
                }
                Ok(v) => serde_json::from_value(v),
                Err(e) => Err(e),
            }
            .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
            (file.resolve(grid)?, Some(digest(&bytes)))
        }
    };

    let mut config = config_for("sweep", &args.case, dig, args.strict_parse);
    config.partition = Some(match partition_digest {
        Some(d) => format!("file:{d}"),
        None => args.partition.clone(),
    });
    config.strategies = args.strategies.iter().map(|s| s.to_string()).collect();
    config.alphas = args.alphas.clone();
    config.max_stages = args.max_stages;
    config.agr_tol = args.agr_tol;
    config.workers = args.workers;

    let result = run_sweep(grid, &partition, &sweep_config)?;
    write_outputs(&args.out, &result, &config.meta())?;
    write_stamped(&args.out.join("run.json"), &config, RunEcho {})?;
    print!("{}", result.report.tables_markdown());
    println!("\nwrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct DemoBody<'a> {
    dual_threshold: f64,
    switched_off: Vec<(u32, u32)>,
    runs: &'a [DemoRun],
}

pub fn demo39(case: &str, strict: bool, dual_threshold: f64, horizon: f64, dt: f64, out: &Path) -> Result<(), CliError> {
    if !(dual_threshold > 0.0) {
        return Err(CliError::Usage("--dual-threshold must be positive".into()));
    }
    if !(dt > 0.0 && horizon >= dt) {
        return Err(CliError::Usage("need --dt > 0 and --horizon ≥ --dt".into()));
    }
    let (loaded, dig) = load(case, strict)?;
    let mut config = config_for("demo39", case, dig, strict);
    config.failures = DEMO_FAILURES.to_vec();
    config.dual_threshold = dual_threshold;
    config.horizon = Some(horizon);
    config.dt = Some(dt);
    let meta = config.meta();

    let demo = DemoConfig {
        dual_threshold,
        horizon,
        dt,
        ..DemoConfig::default()
    };
    let (tree, partition) = demo_grid(&loaded.grid)?;
    let mut runs = Vec::new();
    for f in DEMO_FAILURES {
        let run = run_demo_failure(&tree, f, &demo)?;
        let level = |l: Option<RelaxationLevel>| l.map_or("-".to_string(), |l| l.to_string());
        println!(
            "failure ({},{}): steady level {} shed {:.4} max dual {:.4} warning {} final level {}",
            f.0,
            f.1,
            run.level,
            run.shed,
            run.max_dual,
            run.warning_time.map_or("none".to_string(), |t| format!("{t:.3} s")),
            level(run.final_level)
        );
        if let (Some(a), Some(b)) = (run.watched_before, run.watched_after) {
            println!("  flow (25,26) {a:.6} -> {b:.6}");
        }
        if let Some(traj) = &run.trajectory {
            let mut buf = format!("# {}\n", banner(&meta)).into_bytes();
            write_csv(traj, &mut buf)?;
            write_file(
                &out.join(format!("trajectory_{}_{}.csv", f.0, f.1)),
                &String::from_utf8(buf).expect("csv is utf-8"),
            )?;
        }
        runs.push(run);
    }

    let mut buf = format!("# {}\n", banner(&meta)).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["failure", "t", "event", "detail", "value"])?;
        for r in &runs {
            let failure = format!("({},{})", r.failure.0, r.failure.1);
            for e in &r.events {
                let (kind, detail, value) = match &e.kind {
                    EventKind::SevereWarning { dual, value } => ("warning", dual.clone(), format!("{value:.9e}")),
                    EventKind::Escalated { level } => ("escalate", level.to_string(), String::new()),
                };
                w.write_record([failure.clone(), format!("{:.6}", e.t), kind.into(), detail, value])?;
            }
        }
        w.flush()?;
    }
    write_file(&out.join("events.csv"), &String::from_utf8(buf).expect("csv is utf-8"))?;
    let body = DemoBody {
        dual_threshold,
        switched_off: partition.switched_off.iter().map(|id| ends(&loaded.grid, *id)).collect(),
        runs: &runs,
    };
    write_stamped(&out.join("demo39.json"), &config, body)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn import(file: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let bytes = fs::read(file).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    let mut doc = import_matpower(file)?;
    doc.to_grid()?;
    let config = RunConfig {
        command: "import".into(),
        case: file.display().to_string(),
        case_digest: digest(&bytes),
        ..RunConfig::default()
    };
    doc.notes.push(banner(&config.meta()));
    let json = doc.to_json();
    match out {
        Some(path) => {
            write_file(&path, &json)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(())
}
