use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mss::attacks::{dra_analytic, dra_mss_exact, dra_mss_upper, dra_rappor_symmetric, empirical_dra};
use mss::bench::{
    draw_dataset, emit_csv, emit_svg, parse_eps_grid, run_experiment, ChartSpec, Distribution, ExperimentConfig,
    LambdaPolicy,
};
use mss::decoder::{analytic_mse, baseline_bits, comm_cost_bits, worst_case_mse_bound};
use mss::domain::{Histogram, ModuliSet};
use mss::error::{MssError, Result};
use mss::mechanisms::{Grr, MechTag, Mechanism, Mss, Oue, SubsetSelection};
use mss::moduli::{choose_moduli_cached, planning_kappa, ModuliSearchConfig};
use mss::rng::{label, stream};

#[derive(Parser)]
#[command(name = "mss", version, about = "Modular subset selection frequency oracle: search, simulate, attack")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for moduli and print them as JSON.
    Moduli {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        /// Random attempts per block count.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Run a utility sweep and write per-trial records as CSV.
    Simulate {
        /// One mechanism or a comma-separated list.
        #[arg(long, default_value = "mss")]
        mech: String,
        #[arg(long)]
        k: usize,
        /// "lo:hi:step" or a comma-separated list.
        #[arg(long, default_value = "0.5:5.0:0.5")]
        eps_grid: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// zipf:S, spike or uniform.
        #[arg(long, default_value = "zipf:3")]
        dist: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// auto (1/eps^2), 0, or a nonnegative number.
        #[arg(long, default_value = "auto")]
        lambda: String,
        /// Fixed moduli "m0,m1,..." instead of a search.
        #[arg(long)]
        moduli: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also render MSE against eps as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Attack every report and record the empirical DRA.
        #[arg(long)]
        attack: bool,
        /// Record decode wall time (output is then not reproducible).
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Empirical and analytic reconstruction-attack rates as JSON.
    Attack {
        #[arg(long)]
        mech: MechTag,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value = "uniform")]
        dist: String,
        /// Repetitions over the whole dataset.
        #[arg(long, default_value_t = 10)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        moduli: Option<String>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Closed-form MSE, DRA and communication for every mechanism.
    Analytic {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long)]
        moduli: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        search: SearchArgs,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 10.0)]
    kappa_max: f64,
    #[arg(long, default_value_t = 20)]
    ell_max: usize,
    #[arg(long, default_value_t = 20.0)]
    beta: f64,
    /// Random moduli attempts per block count.
    #[arg(long, default_value_t = 1000)]
    search_trials: usize,
    /// JSON file caching search results.
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl SearchArgs {
    fn config(&self, seed: u64) -> ModuliSearchConfig {
        ModuliSearchConfig {
            kappa_max: self.kappa_max,
            ell_max: self.ell_max,
            beta: self.beta,
            trials: self.search_trials,
            seed,
        }
    }
}

fn parse_moduli(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| MssError::invalid(format!("bad modulus '{p}'"))))
        .collect()
}

/// The moduli set and its planning κ, either given or searched.
fn resolve_moduli(
    k: usize,
    eps: f64,
    given: Option<&str>,
    search: &ModuliSearchConfig,
    cache: Option<&std::path::Path>,
) -> Result<(ModuliSet, f64)> {
    match given {
        Some(s) => {
            let set = ModuliSet::new(parse_moduli(s)?, k, eps)?;
            let kappa = planning_kappa(&set, f64::INFINITY);
            Ok((set, kappa))
        }
        None => {
            let (set, entry) = choose_moduli_cached(k, eps, search, cache)?;
            Ok((set, entry.kappa))
        }
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Moduli { k, eps, trials, seed, search } => {
            let cfg = ModuliSearchConfig { trials, ..search.config(seed) };
            let (set, entry) = choose_moduli_cached(k, eps, &cfg, search.cache.as_deref())?;
            print_json(&json!({
                "moduli": set.moduli(),
                "kappa": entry.kappa,
                "analytic_mse": entry.analytic_mse,
                "bits": comm_cost_bits(&set),
            }))
        }
        Command::Simulate { mech, k, eps_grid, n, dist, trials, seed, lambda, moduli, out, svg, attack, timings, search } => {
            let mechs = mech.split(',').map(str::parse).collect::<Result<Vec<MechTag>>>()?;
            let mut cfg = ExperimentConfig::new(mechs, k, n, parse_eps_grid(&eps_grid)?, dist.parse()?);
            cfg.trials = trials;
            cfg.seed = seed;
            cfg.lambda = lambda.parse::<LambdaPolicy>()?;
            cfg.search = search.config(seed);
            cfg.moduli_cache = search.cache.clone();
            cfg.moduli = moduli.as_deref().map(parse_moduli).transpose()?;
            cfg.attack = attack;
            cfg.timings = timings;
            let records = run_experiment(&cfg)?;
            emit_csv(&records, &out)?;
            if let Some(path) = svg {
                emit_svg(&records, &path, &ChartSpec::mse_vs_eps())?;
            }
            Ok(())
        }
        Command::Attack { mech, k, eps, n, dist, trials, seed, moduli, search } => {
            let mechanism = match mech {
                MechTag::Grr => Mechanism::Grr(Grr::new(k, eps)?),
                MechTag::Ss => Mechanism::Ss(SubsetSelection::new(k, eps)?),
                MechTag::Oue => Mechanism::Oue(Oue::new(k, eps)?),
                MechTag::Mss => {
                    let (set, _) =
                        resolve_moduli(k, eps, moduli.as_deref(), &search.config(seed), search.cache.as_deref())?;
                    Mechanism::Mss(Mss::new(set))
                }
            };
            let f = dist.parse::<Distribution>()?.histogram(k)?;
            let data = draw_dataset(&f, n, &mut stream(seed, &[label("attack-data")]))?;
            let est = empirical_dra(&mechanism, &data, trials, seed)?;
            let upper = match &mechanism {
                Mechanism::Mss(m) => Some(dra_mss_upper(&m.moduli)),
                other => dra_analytic(other),
            };
            print_json(&json!({
                "empirical": est.empirical,
                "stderr": est.stderr,
                "analytic_exact": est.analytic,
                "analytic_upper": upper,
            }))
        }
        Command::Analytic { k, eps, n, moduli, seed, json, search } => {
            let (set, kappa) = resolve_moduli(k, eps, moduli.as_deref(), &search.config(seed), search.cache.as_deref())?;
            analytic_table(&set, kappa, n, json)
        }
    }
}

fn analytic_table(set: &ModuliSet, kappa: f64, n: usize, as_json: bool) -> Result<()> {
    if n == 0 {
        return Err(MssError::invalid("n must be >= 1"));
    }
    let (k, eps) = (set.k(), set.eps());
    let nf = n as f64;
    let e = eps.exp();
    let em1 = eps.exp_m1();
    let uniform = Histogram::distribution(vec![1.0 / k as f64; k])?;
    let ss_set = ModuliSet::new(vec![k], k, eps)?;
    let rows = vec![
        ("grr", (e + k as f64 - 2.0) / (nf * em1 * em1), None, Some(dra_analytic(&Mechanism::Grr(Grr::new(k, eps)?)).unwrap()), baseline_bits(MechTag::Grr, k, eps)?),
        ("oue", worst_case_mse_bound(1.0, eps, nf), None, None, baseline_bits(MechTag::Oue, k, eps)?),
        ("rappor", worst_case_mse_bound(1.0, eps, nf), None, Some(dra_rappor_symmetric(k, eps)?), k as f64),
        ("ss", worst_case_mse_bound(1.0, eps, nf), Some(analytic_mse(&uniform, &ss_set, nf, 0.0)?), Some(dra_mss_exact(&ss_set)), baseline_bits(MechTag::Ss, k, eps)?),
        ("mss", worst_case_mse_bound(kappa, eps, nf), Some(analytic_mse(&uniform, set, nf, 0.0)?), Some(dra_mss_exact(set)), comm_cost_bits(set)),
    ];
    if as_json {
        let table: Vec<serde_json::Value> = rows
            .iter()
            .map(|(m, wc, un, dra, bits)| json!({"mech": m, "mse_worst_case": wc, "mse_uniform": un, "dra": dra, "bits": bits}))
            .collect();
        return print_json(&json!({
            "k": k, "eps": eps, "n": n,
            "moduli": set.moduli(), "kappa": kappa,
            "dra_mss_upper": dra_mss_upper(set),
            "mechanisms": table,
        }));
    }
    println!("k={k} eps={eps} n={n} moduli={:?} kappa={kappa:.4}", set.moduli());
    println!("{:<6} {:>14} {:>14} {:>12} {:>10}", "mech", "mse_worst", "mse_uniform", "dra", "bits");
    let opt = |v: Option<f64>, w: usize| v.map_or(format!("{:>w$}", "-"), |x| format!("{x:>w$.6e}"));
    for (m, wc, un, dra, bits) in rows {
        println!("{m:<6} {wc:>14.6e} {} {} {bits:>10.2}", opt(un, 14), opt(dra, 12));
    }
    Ok(())
}

fn exit_code(e: &MssError) -> u8 {
    match e {
        MssError::SearchExhausted { .. } => 2,
        MssError::Io(_) => 3,
        MssError::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 3,
        MssError::Json(j) if j.is_io() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
