use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use ubp_core::density::load_density_model;
use ubp_core::marginal::{marginal_check_direct, marginal_set_formula, MarginalShape};
use ubp_core::model::ClaimModel;
use ubp_core::report::{emit_report, fmt_float, num, nums, table_csv, write_table, Report};
use ubp_core::sec4::reproduce_with_model;
use ubp_core::verify::{endowment_grid, verify_thm1, verify_thm2, verify_uniqueness_dichotomy, verify_usc, Thm1Plan};
use ubp_core::{load_market, DensityClaimModel, Endowment, Error, Tolerances, UtilityFn};

/// Arbitrage-free and marginal utility-based prices in one-period markets.
#[derive(Debug, Parser)]
#[command(name = "ubp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Finite market JSON file.
    #[arg(long, global = true)]
    market: Option<PathBuf>,

    /// Built-in density name (sec4, sec4-half, uniform) or a density model JSON file.
    #[arg(long, global = true)]
    density: Option<String>,

    /// Utility kind: log or power.
    #[arg(long, global = true, default_value = "log")]
    utility: String,

    /// Exponent of the power utility.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Cash endowment.
    #[arg(long, global = true, allow_negative_numbers = true)]
    x: Option<f64>,

    /// Claim quantities, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    q: Vec<f64>,

    /// Claim prices, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    price: Vec<f64>,

    /// Grid `LO:HI:N`; may be given twice for two-dimensional surfaces.
    #[arg(long, global = true, value_parser = parse_grid, allow_hyphen_values = true)]
    grid: Vec<Grid>,

    #[arg(long, global = true)]
    samples: Option<usize>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file; reports also get a CSV twin next to it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Optimality tolerance of the solvers.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Arbitrage-free price set, optionally classified on a price grid.
    Afp,
    /// Maximal expected utility at an endowment or over a grid.
    Umax,
    /// Marginal price set at an endowment.
    Marginal,
    /// Arbitrage-free prices coincide with marginal prices.
    #[command(name = "verify-thm1")]
    VerifyThm1,
    /// A boundary endowment has marginal prices reaching an arbitrage price.
    #[command(name = "verify-thm2")]
    VerifyThm2,
    /// Upper semicontinuity of the value function at an endowment.
    VerifyUsc,
    /// No boundary endowment has a unique marginal price.
    VerifyDichotomy,
    /// The density example with U = sqrt.
    #[command(name = "example-sec4")]
    ExampleSec4,
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        (0..self.n)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.n - 1) as f64)
            .collect()
    }
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(format!("expected LO:HI:N, got {s:?}"));
    };
    let lo: f64 = lo.parse().map_err(|e| format!("bad LO: {e}"))?;
    let hi: f64 = hi.parse().map_err(|e| format!("bad HI: {e}"))?;
    let n: usize = n.parse().map_err(|e| format!("bad N: {e}"))?;
    if n == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(format!("grid {s:?} is empty"));
    }
    Ok(Grid { lo, hi, n })
}

enum Outcome {
    Done,
    Checked(bool),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) | Ok(Outcome::Checked(true)) => ExitCode::SUCCESS,
        Ok(Outcome::Checked(false)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> ubp_core::Result<Outcome> {
    let mut tol = Tolerances::default();
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Validation(format!("--tol must be positive, got {t}")));
        }
        tol = tol.with_optimality(t);
    }
    match cli.command {
        Command::Afp => afp(cli, &tol),
        Command::Umax => umax(cli, &tol),
        Command::Marginal => marginal(cli, &tol),
        Command::VerifyThm1 => {
            let samples = cli.samples.unwrap_or(20);
            let report = verify_thm1(&model(cli)?, &utility(cli)?, Thm1Plan::symmetric(samples), cli.seed, &tol)?;
            finish(cli, report)
        }
        Command::VerifyThm2 => {
            let p0 = cli.price.first().copied();
            let report = verify_thm2(&model(cli)?, &utility(cli)?, &endowment(cli)?, p0, &tol)?;
            finish(cli, report)
        }
        Command::VerifyUsc => {
            let m = model(cli)?;
            let dirs = unit_directions(m.n());
            let steps: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
            let report = verify_usc(&m, &utility(cli)?, &endowment(cli)?, &dirs, &steps, &tol)?;
            finish(cli, report)
        }
        Command::VerifyDichotomy => {
            let m = model(cli)?;
            let xs = match cli.grid.first() {
                Some(g) => g.points(),
                None => vec![0.5, 1.0, 2.0],
            };
            let grid = endowment_grid(&m, &xs, cli.samples.unwrap_or(11))?;
            let report = verify_uniqueness_dichotomy(&m, &utility(cli)?, &grid, &tol)?;
            finish(cli, report)
        }
        Command::ExampleSec4 => example_sec4(cli),
    }
}

fn utility(cli: &Cli) -> ubp_core::Result<UtilityFn> {
    UtilityFn::from_spec(&cli.utility, cli.gamma)
}

fn density(name: &str) -> ubp_core::Result<DensityClaimModel> {
    if Path::new(name).is_file() {
        load_density_model(name)
    } else {
        DensityClaimModel::named(name, -1.0, 1.0, Tolerances::default().quad_nodes)
    }
}

fn model(cli: &Cli) -> ubp_core::Result<ClaimModel> {
    match (&cli.market, &cli.density) {
        (Some(path), None) => Ok(ClaimModel::Finite(load_market(path)?)),
        (None, Some(name)) => Ok(ClaimModel::Density(density(name)?)),
        (Some(_), Some(_)) => Err(Error::Validation("give either --market or --density, not both".into())),
        (None, None) => Err(Error::Validation("--market or --density is required".into())),
    }
}

fn endowment(cli: &Cli) -> ubp_core::Result<Endowment> {
    let x = cli.x.ok_or_else(|| Error::Validation("--x is required".into()))?;
    if cli.q.is_empty() {
        return Err(Error::Validation("--q is required".into()));
    }
    let e = Endowment::new(x, cli.q.clone());
    if !e.is_finite() {
        return Err(Error::Validation("endowment must be finite".into()));
    }
    Ok(e)
}

/// `±` unit vectors and the cash direction combined with each claim direction.
fn unit_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..=n {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n + 1];
            v[i] = s;
            dirs.push(v);
        }
    }
    for j in 1..=n {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n + 1];
            v[0] = 1.0;
            v[j] = s;
            dirs.push(v);
        }
    }
    dirs
}

fn write_text(cli: &Cli, text: &str) -> ubp_core::Result<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn finish(cli: &Cli, report: Report) -> ubp_core::Result<Outcome> {
    match &cli.out {
        Some(path) => {
            emit_report(&report, path, Some(&path.with_extension("csv")))?;
            println!("{}", report.summary());
        }
        None => println!("{}", report.to_json()?),
    }
    Ok(Outcome::Checked(report.all_passed()))
}

fn afp(cli: &Cli, tol: &Tolerances) -> ubp_core::Result<Outcome> {
    let m = model(cli)?;
    let set = m.afp_set(tol)?;
    println!("{set}");
    let Some(grid) = cli.grid.first() else {
        return Ok(Outcome::Done);
    };
    if m.n() != 1 {
        return Err(Error::Validation("price grids need exactly one claim".into()));
    }
    let mut w = String::from("price,is_afp,witness_min_mass,certificate_x,certificate_q\n");
    for p in grid.points() {
        let v = m.is_arbitrage_free(&[p], tol)?;
        let (cx, cq) = match v.certificate() {
            Some(z) => (z[0], z[1]),
            None => (f64::NAN, f64::NAN),
        };
        w.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_float(p),
            v.is_free(),
            fmt_float(v.min_mass()),
            fmt_float(cx),
            fmt_float(cq)
        ));
    }
    write_text(cli, &w)?;
    Ok(Outcome::Done)
}

fn umax(cli: &Cli, tol: &Tolerances) -> ubp_core::Result<Outcome> {
    let m = model(cli)?;
    let u = utility(cli)?;
    if cli.grid.is_empty() {
        let r = m.value(&u, &endowment(cli)?, tol)?;
        let text = serde_json::to_string_pretty(&json!({
            "value": num(r.value),
            "optimal_strategy": r.optimal_strategy.as_deref().map(nums),
            "optimal_wealth": r.optimal_wealth.as_deref().map(nums),
            "multiplier": r.multiplier.map(num),
            "boundary": r.boundary,
        }))?;
        write_text(cli, &format!("{text}\n"))?;
        return Ok(Outcome::Done);
    }
    if m.n() != 1 {
        return Err(Error::Validation("value surfaces need exactly one claim".into()));
    }
    let (xs, qs) = match cli.grid.as_slice() {
        [q] => (vec![cli.x.ok_or_else(|| Error::Validation("--x is required with one grid".into()))?], q.points()),
        [x, q] => (x.points(), q.points()),
        _ => return Err(Error::Validation("give one (q) or two (x, q) grids".into())),
    };
    let mut rows = Vec::new();
    for &x in &xs {
        for &q in &qs {
            let v = m.u(&u, &Endowment::scalar(x, q), tol)?;
            rows.push(vec![x, q, v, if v.is_finite() { 1.0 } else { 0.0 }]);
        }
    }
    let header = ["x", "q", "u", "finite_flag"];
    match &cli.out {
        Some(path) => write_table(path, &header, &rows)?,
        None => print!("{}", table_csv(&header, &rows)?),
    }
    Ok(Outcome::Done)
}

fn marginal(cli: &Cli, tol: &Tolerances) -> ubp_core::Result<Outcome> {
    let m = model(cli)?;
    let u = utility(cli)?;
    let e = endowment(cli)?;
    let set = marginal_set_formula(&m, &u, &e, tol)?;
    let shown = match &set.shape {
        MarginalShape::Interval(i) => i.to_string(),
        MarginalShape::Cloud { points } => format!("{} sampled prices", points.len()),
    };
    let mut report = Report::new("marginal-price-set", None, usize::from(!cli.price.is_empty()));
    report.detail("endowment", nums(&e.to_vec()));
    report.detail("marginal_set", json!(shown));
    report.detail("shape", serde_json::to_value(&set.shape)?);
    report.detail("base_prices", json!(set.base_prices.iter().map(|p| nums(p)).collect::<Vec<_>>()));
    report.detail("limit_prices", json!(set.limit_prices.iter().map(|p| nums(p)).collect::<Vec<_>>()));
    if !cli.price.is_empty() {
        let d = marginal_check_direct(&m, &u, &e, &cli.price, tol)?;
        let in_set = match &set.shape {
            MarginalShape::Interval(i) if cli.price.len() == 1 => Some(i.contains(cli.price[0])),
            _ => None,
        };
        // prices within the endpoint band count as agreeing either way
        let near_end = match &set.shape {
            MarginalShape::Interval(i) => {
                let p = cli.price[0];
                (p - i.lo).abs().min((p - i.hi).abs()) <= 1e-6 * (1.0 + p.abs())
            }
            MarginalShape::Cloud { .. } => false,
        };
        let agree = near_end || in_set.is_none_or(|s| s == d.passes);
        report.record(
            "formula_matches_direct_check",
            json!({ "p": nums(&cli.price), "endowment": nums(&e.to_vec()) }),
            format!("direct check {}", in_set.map_or("evaluated", |s| if s { "passes" } else { "fails" })),
            format!("direct check {}, gain {:.3e}", if d.passes { "passes" } else { "fails" }, d.gain),
            tol.marginal - d.gain,
            agree,
        );
    }
    println!("{shown}");
    match &cli.out {
        Some(path) => emit_report(&report, path, Some(&path.with_extension("csv")))?,
        None => println!("{}", report.to_json()?),
    }
    Ok(Outcome::Checked(report.all_passed()))
}

fn example_sec4(cli: &Cli) -> ubp_core::Result<Outcome> {
    let x = cli.x.unwrap_or(1.0);
    let d = match &cli.density {
        Some(name) => density(name)?,
        None => DensityClaimModel::sec4(),
    };
    let (report, tables) = reproduce_with_model(d, x)?;
    if let Some(path) = &cli.out {
        let stem = path.with_extension("");
        let sibling = |suffix: &str| PathBuf::from(format!("{}_{suffix}.csv", stem.display()));
        emit_report(&report, path, Some(&path.with_extension("csv")))?;
        write_table(&sibling("h"), &["q", "h", "h_prime"], &tables.h_rows)?;
        write_table(&sibling("maximizer"), &["p", "maximizer_q"], &tables.maximizer_rows)?;
        println!("{}", report.summary());
    } else {
        println!("{}", report.to_json()?);
    }
    Ok(Outcome::Checked(report.all_passed()))
}
