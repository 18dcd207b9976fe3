use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use apq_core::simulator::priority_trace;
use apq_core::{
    cmu_order, scaled_bids, simulate, social_cost, solve_heterogeneous, sweep_equilibria,
    waiting_times, welfare_report, welfare_sweep, BidProfile, Customer, EquilibriumResult,
    MixedBidProfile, Model, SimBids, SimConfig, SolverOptions, SweepMode, WelfareReport,
};
use serde::Serialize;
use serde_json::json;

use crate::output::{emit, fmt_num, now_unix, RunManifest, Table};
use crate::{CliError, Command, Io, RhoRange, Scenario, Solver, SweepKind};

type Result<T> = std::result::Result<T, CliError>;

const SEED_VAR: &str = "APQ_SEED";

fn seed(flag: u64) -> Result<u64> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn options(s: &Solver) -> Result<SolverOptions> {
    Ok(SolverOptions {
        tol: s.tol,
        max_iter: s.max_iter,
        restarts: s.restarts,
        seed: seed(s.seed)?,
    })
}

fn load_model(config: Option<&Path>) -> Result<Model> {
    let path = config.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(Model::from_json(&text)?)
}

fn rhos(range: &RhoRange) -> Result<Vec<f64>> {
    let from = range
        .rho_from
        .ok_or_else(|| CliError::Usage("--rho-from is required".into()))?;
    let to = range.rho_to.unwrap_or(from);
    let step = range.rho_step;
    if step.is_nan() || step < 0.0 || to < from {
        return Err(CliError::Usage(
            "need rho-step >= 0 and rho-to >= rho-from".into(),
        ));
    }
    if step == 0.0 || to == from {
        return Ok(vec![from]);
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|k| ((from + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

struct Out<'a> {
    command: &'static str,
    io: &'a Io,
    seed: Option<u64>,
}

impl Out<'_> {
    fn send(&self, table: Table, json: impl Serialize) -> Result<()> {
        let body = if self.io.json {
            serde_json::to_string_pretty(&json).map_err(|e| CliError::Usage(e.to_string()))? + "\n"
        } else {
            table.render()
        };
        let command = self.command.to_string();
        let config = self.io.config.clone();
        let seed = self.seed;
        emit(&body, self.io.output.as_deref(), |output| RunManifest {
            command,
            config,
            args: std::env::args().skip(1).collect(),
            seed,
            output,
            version: env!("CARGO_PKG_VERSION"),
            timestamp: now_unix(),
        })?;
        Ok(())
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Waiting { io, bids, solver } => waiting(&io, bids, &solver),
        Command::Equilibrium { io, solver } => equilibrium(&io, &solver),
        Command::Sweep {
            io,
            range,
            mode,
            no_warm_start,
            solver,
        } => sweep(&io, &range, mode, no_warm_start, &solver),
        Command::Simulate {
            io,
            bids,
            mixture,
            customers,
            warmup,
            tagged,
            scenario,
            solver,
        } => match scenario {
            Some(s) => replay(&io, s),
            None => simulate_cmd(&io, bids, mixture, customers, warmup, tagged, &solver),
        },
        Command::Welfare {
            io,
            range,
            beta,
            n,
            no_warm_start,
            solver,
        } => welfare(&io, &range, beta, n, no_warm_start, &solver),
        Command::CheckConservation { config, input, tol } => {
            check_conservation(config.as_deref(), input.as_deref(), tol)
        }
    }
}

fn bids_or_equilibrium(
    model: &Model,
    bids: Option<Vec<f64>>,
    solver: &Solver,
) -> Result<BidProfile> {
    match bids {
        Some(b) => Ok(BidProfile::new(b)?),
        None => Ok(solve_heterogeneous(model, &options(solver)?)?.bid_profile()),
    }
}

fn waiting(io: &Io, bids: Option<Vec<f64>>, solver: &Solver) -> Result<()> {
    let model = load_model(io.config.as_deref())?;
    let seed = match bids {
        Some(_) => None,
        None => Some(seed(solver.seed)?),
    };
    let bids = bids_or_equilibrium(&model, bids, solver)?;
    let waits = waiting_times(&model, &bids)?;
    let mut t = Table::new(&["class", "bid", "rho_i", "W", "cost"]);
    let mut costs = Vec::new();
    for (i, c) in model.classes().iter().enumerate() {
        let cost = c.waiting_cost * waits[i] + bids[i];
        costs.push(cost);
        t.row(vec![
            (i + 1).to_string(),
            fmt_num(bids[i]),
            fmt_num(model.loads()[i]),
            fmt_num(waits[i]),
            fmt_num(cost),
        ]);
    }
    let json = json!({ "bids": bids, "loads": model.loads(), "waits": waits, "costs": costs });
    Out {
        command: "waiting",
        io,
        seed,
    }
    .send(t, json)
}

fn equilibrium_rows(t: &mut Table, model: &Model, r: &EquilibriumResult) {
    for (i, c) in model.classes().iter().enumerate() {
        t.row(vec![
            (i + 1).to_string(),
            fmt_num(c.waiting_cost),
            fmt_num(r.bids[i]),
            fmt_num(r.waits[i]),
            fmt_num(r.total_costs[i]),
            format!("{:.3e}", r.residual),
            r.iterations.to_string(),
            format!("{:.3e}", r.multistart_agreement),
        ]);
    }
}

const EQUILIBRIUM_HEADER: [&str; 8] = [
    "class",
    "C",
    "bid",
    "W",
    "total_cost",
    "residual",
    "iterations",
    "multistart_agreement",
];

fn equilibrium(io: &Io, solver: &Solver) -> Result<()> {
    let model = load_model(io.config.as_deref())?;
    let opts = options(solver)?;
    let r = solve_heterogeneous(&model, &opts)?;
    let mut t = Table::new(&EQUILIBRIUM_HEADER);
    equilibrium_rows(&mut t, &model, &r);
    Out {
        command: "equilibrium",
        io,
        seed: Some(opts.seed),
    }
    .send(t, &r)
}

fn mode(no_warm_start: bool) -> SweepMode {
    if no_warm_start {
        SweepMode::Parallel
    } else {
        SweepMode::WarmStart
    }
}

fn sweep(
    io: &Io,
    range: &RhoRange,
    kind: SweepKind,
    no_warm_start: bool,
    solver: &Solver,
) -> Result<()> {
    let model = load_model(io.config.as_deref())?;
    let opts = options(solver)?;
    let rhos = rhos(range)?;
    let out = Out {
        command: "sweep",
        io,
        seed: Some(opts.seed),
    };
    if kind == SweepKind::Welfare {
        let reports = welfare_sweep(&model, &rhos, &opts, mode(no_warm_start))
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut t = Table::new(&WELFARE_HEADER[..6]);
        for r in &reports {
            t.row(welfare_cells(r, None));
        }
        return out.send(t, &reports);
    }
    let results = sweep_equilibria(&model, &rhos, &opts, mode(no_warm_start))
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let header: &[&str] = match kind {
        SweepKind::Bids => &["rho", "class", "bid"],
        SweepKind::Waits => &["rho", "class", "W"],
        _ => &["rho", "class", "bid_ratio", "W_ratio"],
    };
    let mut t = Table::new(header);
    for (rho, r) in rhos.iter().zip(&results) {
        for i in 0..model.len() {
            let mut row = vec![fmt_num(*rho), (i + 1).to_string()];
            match kind {
                SweepKind::Bids => row.push(fmt_num(r.bids[i])),
                SweepKind::Waits => row.push(fmt_num(r.waits[i])),
                _ => {
                    row.push(fmt_num(r.bids[i] / r.bids[0]));
                    row.push(fmt_num(r.waits[i] / r.waits[0]));
                }
            }
            t.row(row);
        }
    }
    let json: Vec<_> = rhos
        .iter()
        .zip(&results)
        .map(|(rho, r)| json!({ "rho": rho, "result": r }))
        .collect();
    out.send(t, json)
}

fn simulate_cmd(
    io: &Io,
    bids: Option<Vec<f64>>,
    mixture: Option<PathBuf>,
    customers: u64,
    warmup: u64,
    tagged: Option<Vec<f64>>,
    solver: &Solver,
) -> Result<()> {
    let model = load_model(io.config.as_deref())?;
    let sim_bids = match mixture {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let atoms = serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))?;
            SimBids::Mixed(MixedBidProfile::new(atoms)?)
        }
        None => SimBids::Pure(bids_or_equilibrium(&model, bids, solver)?),
    };
    let seed = seed(solver.seed)?;
    let mut config = SimConfig::new(model.clone(), sim_bids.clone(), customers)
        .with_warmup(warmup)
        .with_seed(seed);
    if let Some(p) = tagged {
        if p.len() != 2 {
            return Err(CliError::Usage("--tagged takes bid,rate".into()));
        }
        config = config.with_probe(p[0], p[1]);
    }
    let stats = simulate(&config)?;
    let mut t = Table::new(&["class", "bid", "mean", "variance", "count", "half_width"]);
    for (i, c) in stats.classes.iter().enumerate() {
        let bid = match &sim_bids {
            SimBids::Pure(b) => fmt_num(b[i]),
            SimBids::Mixed(_) => "mixed".to_string(),
        };
        t.row(vec![
            (i + 1).to_string(),
            bid,
            fmt_num(c.mean),
            fmt_num(c.variance),
            c.count.to_string(),
            fmt_num(c.half_width),
        ]);
    }
    if let (Some(c), Some(p)) = (&stats.tagged, config.tagged) {
        t.row(vec![
            "tagged".to_string(),
            fmt_num(p.bid),
            fmt_num(c.mean),
            fmt_num(c.variance),
            c.count.to_string(),
            fmt_num(c.half_width),
        ]);
    }
    Out {
        command: "simulate",
        io,
        seed: Some(seed),
    }
    .send(t, &stats)
}

fn replay(io: &Io, scenario: Scenario) -> Result<()> {
    let Scenario::Overtaking = scenario;
    let customers = [Customer::new(0.0, 0.5, 0), Customer::new(1.0, 1.0, 1)];
    let times: Vec<f64> = (0..=16).map(|k| k as f64 * 0.25).collect();
    let trace = priority_trace(&customers, &times);
    let mut t = Table::new(&["t", "priority_1", "priority_2", "leader"]);
    for (time, prio, leader) in &trace {
        t.row(vec![
            fmt_num(*time),
            fmt_num(prio[0]),
            fmt_num(prio[1]),
            (leader + 1).to_string(),
        ]);
    }
    let json: Vec<_> = trace
        .iter()
        .map(|(time, prio, leader)| json!({ "t": time, "priorities": prio, "leader": leader + 1 }))
        .collect();
    Out {
        command: "simulate",
        io,
        seed: None,
    }
    .send(t, json)
}

const WELFARE_HEADER: [&str; 8] = [
    "rho",
    "equilibrium_cost",
    "priced_cost",
    "optimal_cost",
    "ratio",
    "priced_ratio",
    "scaled_cost",
    "scaled_ratio",
];

fn welfare_cells(r: &WelfareReport, scaled: Option<f64>) -> Vec<String> {
    let mut cells = vec![
        fmt_num(r.rho),
        fmt_num(r.equilibrium_cost),
        fmt_num(r.priced_cost),
        fmt_num(r.optimal_cost),
        fmt_num(r.ratio),
        fmt_num(r.priced_ratio),
    ];
    if let Some(s) = scaled {
        cells.push(fmt_num(s));
        cells.push(fmt_num(s / r.optimal_cost));
    }
    cells
}

fn welfare(
    io: &Io,
    range: &RhoRange,
    beta: f64,
    n: u32,
    no_warm_start: bool,
    solver: &Solver,
) -> Result<()> {
    let model = load_model(io.config.as_deref())?;
    let opts = options(solver)?;
    let (models, reports) = if range.rho_from.is_some() {
        let rhos = rhos(range)?;
        let models = rhos
            .iter()
            .map(|&rho| model.scaled_to_load(rho))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let reports = welfare_sweep(&model, &rhos, &opts, mode(no_warm_start))
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        (models, reports)
    } else {
        let r = welfare_report(&model, &opts)?;
        (vec![model], vec![r])
    };
    let mut t = Table::new(&WELFARE_HEADER);
    let mut json = Vec::new();
    for (m, r) in models.iter().zip(&reports) {
        let scaled = social_cost(m, &scaled_bids(&cmu_order(m), beta, n)?)?;
        t.row(welfare_cells(r, Some(scaled)));
        json.push(
            json!({ "report": r, "scaled_cost": scaled, "scaled_ratio": scaled / r.optimal_cost }),
        );
    }
    Out {
        command: "welfare",
        io,
        seed: Some(opts.seed),
    }
    .send(t, json)
}

fn check_conservation(config: Option<&Path>, input: Option<&Path>, tol: f64) -> Result<()> {
    let model = load_model(config)?;
    let text = match input {
        Some(p) => fs::read_to_string(p)?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Usage("empty input".into()))?
        .split(',')
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Usage(format!("input has no {name} column")))
    };
    let (rc, wc) = (col("rho_i")?, col("W")?);
    let mut lhs = 0.0;
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let num = |k: usize| -> Result<f64> {
            cells
                .get(k)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("bad row: {line}")))
        };
        lhs += num(rc)? * num(wc)?;
        rows += 1;
    }
    if rows != model.len() {
        return Err(CliError::Usage(format!(
            "input has {rows} rows but the model has {} classes",
            model.len()
        )));
    }
    let rhs = model.total_load() * model.fcfs_wait();
    let gap = (lhs - rhs).abs() / rhs;
    let ok = gap <= tol;
    print!(
        "{}",
        {
            let mut t = Table::new(&["lhs", "rhs", "relative_gap", "status"]);
            t.row(vec![
                fmt_num(lhs),
                fmt_num(rhs),
                format!("{gap:.3e}"),
                if ok { "pass" } else { "fail" }.to_string(),
            ]);
            t
        }
        .render()
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "relative gap {gap:.3e} exceeds {tol:.1e}"
        )))
    }
}
