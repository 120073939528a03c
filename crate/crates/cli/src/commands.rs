use std::fs;
use std::path::{Path, PathBuf};

use faustmann_core::diffusion::{AssumptionReport, DiffusionModel};
use faustmann_core::hitting::{XiEvaluator, XiSummary};
use faustmann_core::impulse::{self, ImpulseSolver, ThresholdSolution, Verification};
use faustmann_core::meanfield::{self, Comparison, EquilibriumSet, Interaction, MeanField, MfcSolution, SweepRow};
use faustmann_core::report::{Cell, Section, SolveReport};
use faustmann_core::simulation::{self, Estimate, LevelMode, SimConfig, ValueEstimate};
use faustmann_core::stationary::{self, StationaryDensity, TABLE_POINTS};
use faustmann_core::NumericsConfig;
use serde::Serialize;

use crate::scenario::Scenario;
use crate::{Common, Failure};

struct Context {
    sc: Scenario,
    label: String,
    out: PathBuf,
    cfg: NumericsConfig,
    sim: SimConfig,
}

impl Context {
    fn load(common: &Common) -> Result<Self, Failure> {
        let path = common
            .scenario
            .as_ref()
            .ok_or_else(|| Failure::parse("--scenario is required".into()))?;
        let sc = Scenario::load(path)?;
        let (cfg, sim) = overrides(common, sc.numerics.clone(), sc.simulation.clone())?;
        Ok(Self {
            label: sc.label(path),
            sc,
            out: common.out.clone(),
            cfg,
            sim,
        })
    }

    fn model(&self) -> Result<DiffusionModel, Failure> {
        let mut sc = self.sc.clone();
        sc.numerics = self.cfg.clone();
        sc.model()
    }

    fn solver(&self) -> Result<ImpulseSolver, Failure> {
        Ok(ImpulseSolver::new(XiEvaluator::new(&self.model()?)?, self.cfg.clone()))
    }

    fn mean_field(&self) -> Result<MeanField, Failure> {
        Ok(MeanField::from_solver(self.solver()?, self.sc.payoff()?.clone())?)
    }

    fn report<T>(&self, command: &str, tables: Vec<Section>, result: T) -> SolveReport<T> {
        SolveReport {
            command: command.into(),
            scenario: Some(self.label.clone()),
            tables,
            result,
        }
    }
}

fn overrides(common: &Common, mut cfg: NumericsConfig, mut sim: SimConfig) -> Result<(NumericsConfig, SimConfig), Failure> {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        sim.seed = seed;
    }
    if let Some(tol) = common.tol {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Failure::parse(format!("--tol {tol} must lie in (0, 1)")));
        }
        cfg.root_rel_tol = tol;
        cfg.fixed_point_tol = tol;
    }
    if let Some(n) = common.grid {
        if n < 3 {
            return Err(Failure::parse(format!("--grid {n} must be at least 3")));
        }
        cfg.scan_points = n;
    }
    if let Some(dt) = common.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Failure::parse(format!("--dt {dt} must be positive")));
        }
        sim.dt = dt;
    }
    Ok((cfg, sim))
}

fn ensure_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))
}

fn write_report<T: Serialize>(out: &Path, report: &SolveReport<T>) -> Result<(), Failure> {
    ensure_dir(out)?;
    let json = serde_json::to_string_pretty(report).map_err(Failure::solver)?;
    let path = out.join("report.json");
    fs::write(&path, json + "\n").map_err(|e| Failure::io(&path, e))?;
    let table = report.render();
    let path = out.join("table.txt");
    fs::write(&path, &table).map_err(|e| Failure::io(&path, e))?;
    print!("{table}");
    Ok(())
}

fn write_density(out: &Path, ev: &XiEvaluator, y: f64) -> Result<(), Failure> {
    let rows = StationaryDensity::controlled(ev, y)?.table(TABLE_POINTS)?;
    ensure_dir(out)?;
    let path = out.join("density.csv");
    let file = fs::File::create(&path).map_err(|e| Failure::io(&path, e))?;
    stationary::write_density_csv(&rows, std::io::BufWriter::new(file)).map_err(|e| Failure::io(&path, e))
}

fn solution_section(title: &str, s: &ThresholdSolution) -> Section {
    Section::key_value(title)
        .kv("threshold", s.threshold)
        .kv("value", s.value)
        .kv("residual", s.residual)
        .kv("iterations", s.iterations)
        .kv("profitable", s.profitable)
}

#[derive(Debug, Serialize)]
pub struct SingleResult {
    pub summary: XiSummary,
    pub y_hat0: ThresholdSolution,
    pub level: Option<f64>,
    pub price: f64,
    pub k_tilde: f64,
    pub solution: ThresholdSolution,
    pub stock_bounds: Option<(f64, f64)>,
}

pub fn solve_single(common: &Common, level: Option<f64>) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let solver = ctx.solver()?;
    let ev = solver.evaluator();
    let y_hat0 = solver.optimal_threshold_basic(0.0)?;
    let (price, cost) = match (level, &ctx.sc.payoff) {
        (Some(z), Some(p)) => (p.phi.eval(z), p.cost),
        (Some(_), None) => return Err(Failure::parse("--level needs a payoff section".into())),
        (None, Some(p)) => (1.0, p.cost),
        (None, None) => (1.0, 0.0),
    };
    let solution = match (level, &ctx.sc.payoff) {
        (Some(z), Some(p)) => impulse::best_response(&solver, z, p)?,
        _ => solver.optimal_threshold_basic(cost)?,
    };
    let stock_bounds = stationary::stock_bounds(ev).ok();
    let summary = ev.summary();
    let mut model = Section::key_value("model")
        .kv("y0", ev.y0())
        .kv("y1", Cell::opt(summary.y1))
        .kv("y2", Cell::opt(summary.y2))
        .kv("y_hat0", y_hat0.threshold)
        .kv("max harvest rate", y_hat0.value);
    if let Some((z1, z2)) = stock_bounds {
        model = model.kv("z1", z1).kv("z2", z2);
    }
    let inputs = Section::key_value("inputs")
        .kv("level", Cell::opt(level))
        .kv("price", price)
        .kv("K / price", cost / price);
    let tables = vec![model, inputs, solution_section("optimal threshold", &solution)];
    let result = SingleResult {
        summary,
        y_hat0,
        level,
        price,
        k_tilde: cost / price,
        solution,
        stock_bounds,
    };
    write_density(&ctx.out, ev, solution.threshold)?;
    write_report(&ctx.out, &ctx.report("solve-single", tables, result))
}

fn equilibria_section(set: &EquilibriumSet) -> Section {
    let mut t = Section::new(
        "equilibria",
        &["threshold", "value", "level", "residual", "Phi'", "stability", "marginal", "iteration check"],
    );
    for e in &set.equilibria {
        t.push(vec![
            e.threshold.into(),
            e.value.into(),
            e.level.into(),
            e.residual.into(),
            e.stability.derivative.into(),
            e.stability.label.to_string().into(),
            e.stability.marginal.into(),
            e.stability.iteration_agrees.into(),
        ]);
    }
    t
}

fn setting_section(mf: &MeanField) -> Section {
    let (lo, hi) = mf.domain();
    Section::key_value("setting")
        .kv("interaction", mf.payoff().interaction.to_string())
        .kv("phi", mf.payoff().phi.label())
        .kv("K", mf.payoff().cost)
        .kv("domain low", lo)
        .kv("domain high", hi)
        .kv("y_hat0", mf.y_hat0().threshold)
        .kv("phi decreasing", mf.phi_decreasing())
}

#[derive(Debug, Serialize)]
pub struct MfgResult {
    pub critical_bounds: (f64, f64),
    pub equilibria: EquilibriumSet,
}

pub fn solve_mfg(common: &Common) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let mf = ctx.mean_field()?;
    let bounds = mf.critical_bounds()?;
    let set = mf.mfg_equilibrium()?;
    let search = Section::key_value("search")
        .kv("critical low", bounds.0)
        .kv("critical high", bounds.1)
        .kv("scan low", set.search.0)
        .kv("scan high", set.search.1)
        .kv("clamped points", set.clamped)
        .kv("note", set.note.clone().unwrap_or_else(|| "-".into()));
    let tables = vec![setting_section(&mf), search, equilibria_section(&set)];
    let empty = set.equilibria.is_empty();
    let note = set.note.clone();
    write_report(
        &ctx.out,
        &ctx.report(
            "solve-mfg",
            tables,
            MfgResult {
                critical_bounds: bounds,
                equilibria: set,
            },
        ),
    )?;
    if empty {
        return Err(Failure::solver(format!(
            "no equilibrium found: {}",
            note.unwrap_or_default()
        )));
    }
    Ok(())
}

fn mfc_section(m: &MfcSolution) -> Section {
    Section::key_value("mean field control")
        .kv("threshold", m.threshold)
        .kv("value", m.value)
        .kv("level", m.level)
        .kv("ties", Cell::list(&m.ties))
        .kv("tie flag", m.tie_flag)
        .kv("degenerate", m.degenerate)
}

pub fn solve_mfc(common: &Common) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let mf = ctx.mean_field()?;
    let m = mf.mfc_optimum()?;
    let tables = vec![setting_section(&mf), mfc_section(&m)];
    write_report(&ctx.out, &ctx.report("solve-mfc", tables, m))
}

pub fn compare(common: &Common) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let mf = ctx.mean_field()?;
    let c: Comparison = mf.compare_unchecked()?;
    let ordering = match c.interaction {
        Interaction::HarvestRate => "y_p >= y_g",
        Interaction::ExpectedStock => "y_p <= y_g",
    };
    let verdict = Section::key_value("ordering")
        .kv("claim", ordering)
        .kv("margins", Cell::list(&c.margins))
        .kv("tolerance", c.tol)
        .kv("holds", c.holds);
    let tables = vec![setting_section(&mf), equilibria_section(&c.mfg), mfc_section(&c.mfc), verdict];
    let holds = c.holds;
    let margins = c.margins.clone();
    write_report(&ctx.out, &ctx.report("compare", tables, c))?;
    if !holds {
        return Err(Failure {
            code: Failure::ORDERING,
            message: format!("ordering {ordering} violated, margins {margins:?}"),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Checked<T> {
    pub analytic: f64,
    pub estimate: T,
    pub z_score: f64,
}

#[derive(Debug, Serialize)]
pub struct SimulateResult {
    pub threshold: f64,
    pub config: SimConfig,
    pub hitting_time: Checked<Estimate>,
    pub stationary_mean: Checked<Estimate>,
    pub value: Option<Checked<ValueEstimate>>,
}

pub fn simulate(common: &Common, threshold: Option<f64>, paths: Option<usize>, horizon: Option<f64>) -> Result<(), Failure> {
    let mut ctx = Context::load(common)?;
    if let Some(n) = paths {
        ctx.sim.paths = n;
    }
    if let Some(t) = horizon {
        ctx.sim.horizon = t;
    }
    let model = ctx.model()?;
    let ev = XiEvaluator::new(&model)?;
    let y = match threshold.or(ctx.sc.threshold) {
        Some(y) => y,
        None if ctx.sc.payoff.is_some() => {
            let set = ctx.mean_field()?.mfg_equilibrium()?;
            set.equilibria
                .first()
                .map(|e| e.threshold)
                .ok_or_else(|| Failure::solver("no equilibrium to simulate"))?
        }
        None => ImpulseSolver::new(ev.clone(), ctx.cfg.clone()).optimal_threshold_basic(0.0)?.threshold,
    };
    let sim = &ctx.sim;
    let xi = ev.xi(y)?;
    let hit = simulation::estimate_hitting_time(&model, y, sim)?;
    let stock = stationary::expected_stock(&ev, y)?;
    let stock_est = simulation::estimate_stationary_mean(&model, y, sim)?;
    let value = match &ctx.sc.payoff {
        Some(p) => {
            let level = match p.interaction {
                Interaction::HarvestRate => (y - model.y0()) / xi,
                Interaction::ExpectedStock => stock,
            };
            let analytic = (p.phi.eval(level) * (y - model.y0()) - p.cost) / xi;
            let est = simulation::estimate_value(&model, p, y, LevelMode::SelfConsistent, sim)?;
            Some(Checked {
                analytic,
                z_score: est.estimate.z_score(analytic),
                estimate: est,
            })
        }
        None => None,
    };
    let mut t = Section::new(
        "monte carlo",
        &["quantity", "analytic", "estimate", "se", "z-score", "n", "capped", "floor hits"],
    );
    let mut row = |name: &str, analytic: f64, e: &Estimate| {
        t.push(vec![
            name.into(),
            analytic.into(),
            e.mean.into(),
            e.se.into(),
            e.z_score(analytic).into(),
            e.n.into(),
            e.capped.into(),
            e.floor_hits.into(),
        ])
    };
    row("hitting time", xi, &hit);
    row("stationary mean", stock, &stock_est);
    if let Some(v) = &value {
        row("long-run value", v.analytic, &v.estimate.estimate);
    }
    let setup = Section::key_value("setup")
        .kv("threshold", y)
        .kv("dt", sim.dt)
        .kv("paths", sim.paths)
        .kv("horizon", sim.horizon)
        .kv("seed", sim.seed)
        .kv("crossing", format!("{:?}", sim.crossing).to_lowercase());
    let tables = vec![setup, t];

    let every = ((0.01 / sim.dt).round() as usize).max(1);
    let path = simulation::simulate_path(&model, y, sim, sim.horizon.min(100.0), every)?;
    ensure_dir(&ctx.out)?;
    let file_path = ctx.out.join("path.csv");
    let file = fs::File::create(&file_path).map_err(|e| Failure::io(&file_path, e))?;
    path.write_csv(std::io::BufWriter::new(file)).map_err(|e| Failure::io(&file_path, e))?;
    write_density(&ctx.out, &ev, y)?;

    let result = SimulateResult {
        threshold: y,
        config: sim.clone(),
        hitting_time: Checked {
            analytic: xi,
            z_score: hit.z_score(xi),
            estimate: hit,
        },
        stationary_mean: Checked {
            analytic: stock,
            z_score: stock_est.z_score(stock),
            estimate: stock_est,
        },
        value,
    };
    write_report(&ctx.out, &ctx.report("simulate", tables, result))
}

#[derive(Debug, Serialize)]
pub struct VerifyResult {
    pub instance: String,
    pub cost: f64,
    pub solution: ThresholdSolution,
    pub verification: Verification,
    pub perturbed: Verification,
}

pub fn verify(common: &Common) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let solver = ctx.solver()?;
    let y0 = solver.evaluator().y0();
    type Func = Box<dyn Fn(f64) -> f64>;
    let (instance, f, h, cost): (String, Func, Func, f64) = match &ctx.sc.auxiliary {
        Some(aux) => {
            let cost = match (aux.cost, &ctx.sc.payoff) {
                (Some(k), _) => k,
                (None, Some(p)) => p.cost,
                (None, None) => return Err(Failure::parse("auxiliary problem needs a cost".into())),
            };
            let fe = aux.f.clone();
            let he = aux.h.clone();
            let label = format!(
                "f(x) = {}, h(x) = {}",
                fe.source(),
                he.as_ref().map_or("0", |e| e.source())
            );
            let h: Func = match he {
                Some(e) => Box::new(move |x| e.eval(x)),
                None => Box::new(|_| 0.0),
            };
            (label, Box::new(move |x| fe.eval(x)), h, cost)
        }
        None => {
            let mf = ctx.mean_field()?;
            let set = mf.mfg_equilibrium()?;
            let yg = set
                .equilibria
                .first()
                .map(|e| e.threshold)
                .ok_or_else(|| Failure::solver("no equilibrium to build the auxiliary problem from"))?;
            let price = mf.payoff().phi.eval(mf.interaction_level(yg)?);
            (
                format!("f(x) = {price} (x - {y0}) at the equilibrium price, h = 0"),
                Box::new(move |x| price * (x - y0)),
                Box::new(|_| 0.0),
                mf.payoff().cost,
            )
        }
    };
    let solution = solver.solve_auxiliary(&f, &h, cost)?;
    let verification = solver.verify_solution(&solution, &f, &h, cost)?;
    let mut off = solution;
    off.threshold *= 1.1;
    let perturbed = solver.verify_solution(&off, &f, &h, cost)?;

    let mut checks = Section::new(
        "verification",
        &["threshold", "rho", "g(y0)", "u(y*)", "max u", "min g-(f-K)", "passed"],
    );
    for v in [&verification, &perturbed] {
        checks.push(vec![
            v.threshold.into(),
            v.rho.into(),
            v.g_at_restart.into(),
            v.u_at_threshold.into(),
            v.max_u.into(),
            v.min_excess.into(),
            v.passed.into(),
        ]);
    }
    let tables = vec![
        Section::key_value("auxiliary problem")
            .kv("instance", instance.clone())
            .kv("K", cost)
            .kv("tolerance", verification.tol),
        solution_section("auxiliary optimum", &solution),
        checks,
    ];
    let ok = verification.passed && !perturbed.passed;
    write_report(
        &ctx.out,
        &ctx.report(
            "verify",
            tables,
            VerifyResult {
                instance,
                cost,
                solution,
                verification,
                perturbed,
            },
        ),
    )?;
    if !ok {
        return Err(Failure::solver("verification failed"));
    }
    Ok(())
}

pub fn sweep(common: &Common, draws: usize, only: Option<Interaction>) -> Result<(), Failure> {
    let (label, cfg, out) = match &common.scenario {
        Some(_) => {
            let ctx = Context::load(common)?;
            (Some(ctx.label), ctx.cfg, ctx.out)
        }
        None => {
            let (cfg, _) = overrides(common, NumericsConfig::default(), SimConfig::default())?;
            (None, cfg, common.out.clone())
        }
    };
    let kinds = match only {
        Some(k) => vec![k],
        None => vec![Interaction::HarvestRate, Interaction::ExpectedStock],
    };
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut summary = Section::new(
        "sweep",
        &["interaction", "draws", "ordering holds", "errors", "min margin"],
    );
    for kind in kinds {
        let part = meanfield::sweep(kind, draws, cfg.seed, &cfg);
        let holds = part.iter().filter(|r| r.holds).count();
        let errors = part.iter().filter(|r| r.error.is_some()).count();
        let min = part.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min);
        summary.push(vec![kind.to_string().into(), draws.into(), holds.into(), errors.into(), min.into()]);
        rows.extend(part);
    }
    ensure_dir(&out)?;
    let path = out.join("sweep.csv");
    let file = fs::File::create(&path).map_err(|e| Failure::io(&path, e))?;
    meanfield::write_sweep_csv(&rows, std::io::BufWriter::new(file)).map_err(|e| Failure::io(&path, e))?;
    let params = Section::key_value("parameters")
        .kv("q", format!("({}, {})", meanfield::SWEEP_Q.0, meanfield::SWEEP_Q.1))
        .kv("b", format!("({}, {})", meanfield::SWEEP_B.0, meanfield::SWEEP_B.1))
        .kv("K", format!("({}, {})", meanfield::SWEEP_K.0, meanfield::SWEEP_K.1))
        .kv("beta", 1.0)
        .kv("y0", 1.0)
        .kv("phi", "1/(1+z)")
        .kv("seed", cfg.seed);
    let failed = rows.iter().filter(|r| !r.holds).count();
    let report = SolveReport {
        command: "sweep".into(),
        scenario: label,
        tables: vec![params, summary],
        result: rows,
    };
    write_report(&out, &report)?;
    if failed > 0 {
        return Err(Failure {
            code: Failure::ORDERING,
            message: format!("ordering failed in {failed} draws"),
        });
    }
    Ok(())
}

pub fn validate(common: &Common) -> Result<(), Failure> {
    let ctx = Context::load(common)?;
    let report: AssumptionReport = ctx.model()?.validate_assumptions();
    let mut t = Section::new("assumptions", &["probe", "passed", "value", "note"]);
    for (name, p) in report.probes() {
        t.push(vec![name.into(), p.passed.into(), Cell::opt(p.value), p.note.clone().into()]);
    }
    let all = Section::key_value("summary").kv("all passed", report.all_passed());
    write_report(&ctx.out, &ctx.report("validate", vec![t, all], report))
}

pub fn table(path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let report: SolveReport<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))?;
    print!("{}", report.render());
    Ok(())
}
