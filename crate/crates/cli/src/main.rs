use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use tensorcause::bench::{self, BenchConfig, BenchScenario};
use tensorcause::causal::{fit_multiproxy, fit_multitreatment, FeatureMap, MixtureMethod, MultiProxyConfig};
use tensorcause::data::Dataset;
use tensorcause::datagen::{simulate_multiproxy, simulate_multitreatment, MultiProxyScenario, MultiTreatmentScenario};
use tensorcause::io::{self, ModelFile, Scenario, TruthFile};
use tensorcause::mixture::{scree, scree_discrete, Bandwidth, KernelFamily, KernelSpec};
use tensorcause::spectral::PowerConfig;
use tensorcause::{Error, Result};

/// Causal effects under a latent categorical confounder.
#[derive(Parser)]
#[command(name = "tensorcause", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a scenario and write it with its ground truth.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Evaluate average or conditional effects from a fitted model.
    Estimate(EstimateArgs),
    /// Singular value scree of the view-1/view-2 cross moment.
    Rank(RankArgs),
    /// Repeated simulate-and-fit sweeps against known parameters.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Multiproxy,
    Multitreatment,
}

impl ModeArg {
    fn check(self, data: &Dataset) -> Result<()> {
        let want = match self {
            ModeArg::Multiproxy => io::Mode::Multiproxy,
            ModeArg::Multitreatment => io::Mode::Multitreatment,
        };
        if data.mode() != want {
            return Err(Error::InvalidData(format!(
                "dataset columns are {:?}, not {:?}",
                data.mode(),
                want
            )));
        }
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    mode: ModeArg,
    /// Scenario JSON; defaults to the bundled design for the mode.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Multiview,
    Symmetric,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelArg,
    /// `median`, `median:<scale>` or a positive number.
    #[arg(long, default_value = "median")]
    bandwidth: String,
    /// Anchor points per view.
    #[arg(long)]
    landmarks: Option<usize>,
}

impl KernelArgs {
    fn spec(&self) -> Result<KernelSpec> {
        let KernelArg::Rbf = self.kernel;
        let b = self.bandwidth.trim();
        let bad = || Error::InvalidConfig(format!("bad bandwidth '{b}'"));
        let bandwidth = if b == "median" {
            Bandwidth::MedianHeuristic { scale: 1.0 }
        } else if let Some(scale) = b.strip_prefix("median:") {
            Bandwidth::MedianHeuristic {
                scale: scale.parse().map_err(|_| bad())?,
            }
        } else {
            Bandwidth::Fixed {
                value: b.parse().map_err(|_| bad())?,
            }
        };
        Ok(KernelSpec {
            family: KernelFamily::GaussianRbf,
            bandwidth,
            landmarks: self.landmarks,
        })
    }
}

#[derive(Args)]
struct FitArgs {
    mode: ModeArg,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, value_enum, default_value = "multiview")]
    method: MethodArg,
    /// Treatment features, e.g. `z1_0,z1_1`; defaults to all view-1 coordinates.
    #[arg(long)]
    phi: Option<FeatureMap>,
    /// Outcome features; defaults to `1,a` plus all view-1 coordinates.
    #[arg(long)]
    psi: Option<FeatureMap>,
    /// Outcome features of the multi-treatment model.
    #[arg(long, default_value = "1,a1,a2,a3")]
    xi: FeatureMap,
    /// Number of levels of each categorical treatment.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(subcommand)]
    estimand: Estimand,
}

#[derive(Subcommand)]
enum Estimand {
    /// Average effect; repeat `--a` to evaluate several treatment values.
    Ate {
        /// One value, or `a1,a2,a3` for multi-treatment models.
        #[arg(long, required = true, allow_hyphen_values = true)]
        a: Vec<String>,
    },
    /// Effect within latent component `u`.
    Cate {
        #[arg(long)]
        u: usize,
        #[arg(long, allow_hyphen_values = true)]
        a: String,
        /// Proxies of one view as `x,y,...`; repeat for views 2 and 3.
        #[arg(long, allow_hyphen_values = true)]
        z: Vec<String>,
    },
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_k: usize,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of the singular values.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    scenario: BenchScenario,
    /// Comma separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidConfig(format!("'{x}' is not a finite number")))
        })
        .collect()
}

fn write_truth(out: &Path, seed: u64, n: usize, scenario: Scenario, labels: Vec<usize>) -> Result<()> {
    let path = io::truth_path(out);
    io::save_truth(
        &path,
        &TruthFile {
            schema_version: io::SCHEMA_VERSION,
            seed,
            n,
            scenario,
            labels,
        },
    )?;
    info!("wrote {} and {}", out.display(), path.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let text = a.scenario.as_deref().map(fs::read_to_string).transpose()?;
    match a.mode {
        ModeArg::Multiproxy => {
            let s = match text {
                Some(t) => serde_json::from_str(&t).map_err(|e| Error::InvalidConfig(e.to_string()))?,
                None => MultiProxyScenario::three_component(),
            };
            let (data, labels) = simulate_multiproxy(&s, a.n, a.seed)?;
            io::save_dataset(&a.out, &Dataset::MultiProxy(data))?;
            write_truth(&a.out, a.seed, a.n, Scenario::Multiproxy(s), labels)
        }
        ModeArg::Multitreatment => {
            let s = match text {
                Some(t) => serde_json::from_str(&t).map_err(|e| Error::InvalidConfig(e.to_string()))?,
                None => MultiTreatmentScenario::two_component(),
            };
            let (data, labels) = simulate_multitreatment(&s, a.n, a.seed)?;
            io::save_dataset(&a.out, &Dataset::MultiTreatment(data))?;
            write_truth(&a.out, a.seed, a.n, Scenario::Multitreatment(s), labels)
        }
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let data = io::load_dataset(&a.input, a.levels)?;
    a.mode.check(&data)?;
    let model = match &data {
        Dataset::MultiProxy(d) => {
            let spec = a.kernel.spec()?;
            let mut cfg = MultiProxyConfig::new(a.k, d.dim());
            cfg.kernel = spec;
            cfg.method = match a.method {
                MethodArg::Multiview => MixtureMethod::Multiview,
                MethodArg::Symmetric => MixtureMethod::Symmetric,
            };
            if let Some(phi) = a.phi {
                cfg.phi = phi;
            }
            if let Some(psi) = a.psi {
                cfg.psi = psi;
            }
            cfg.ridge = a.ridge;
            cfg.seed = a.seed;
            let fit = fit_multiproxy(d, &cfg)?;
            let dg = &fit.diagnostics;
            info!(
                "mixture: priors {:?}, tensor residual {:.3e}",
                fit.mixture.priors, fit.mixture.diagnostics.tensor_residual
            );
            info!(
                "stages: treatment ridge {:e}, outcome ridge {:e}, fallback rows {}/{}, clamped variances {}",
                dg.treatment_ridge, dg.outcome_ridge, dg.proxy_fallback_rows, dg.treatment_fallback_rows, dg.clamped_variances
            );
            ModelFile::from_multiproxy(&fit, &spec, a.seed)
        }
        Dataset::MultiTreatment(d) => {
            let fit = fit_multitreatment(d, a.k, &a.xi, &PowerConfig::default(), a.seed)?;
            info!(
                "mixture: priors {:?}, tensor residual {:.3e}, outcome ridge {:e}",
                fit.model.priors, fit.mixture.diagnostics.tensor_residual, fit.model.ridge
            );
            ModelFile::from_multitreatment(&fit, a.seed)
        }
    };
    model.save(&a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match a.estimand {
        Estimand::Ate { a: points } => {
            for p in points {
                let r = model.ate(&parse_reals(&p)?)?;
                writeln!(out, "{}", serde_json::to_string(&r)?)?;
            }
        }
        Estimand::Cate { u, a: t, z } => {
            let z = z.iter().map(|s| parse_reals(s)).collect::<Result<Vec<_>>>()?;
            let r = model.cate(u, &parse_reals(&t)?, &z)?;
            writeln!(out, "{}", serde_json::to_string(&r)?)?;
        }
    }
    Ok(())
}

fn rank(a: RankArgs) -> Result<()> {
    let data = io::load_dataset(&a.input, a.levels)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyInput("dataset"));
    }
    let (cap, what) = match &data {
        Dataset::MultiProxy(_) => (n.min(a.kernel.spec()?.landmark_budget()), "kernel subsample size"),
        Dataset::MultiTreatment(d) => (d.levels, "number of levels"),
    };
    let max_k = if a.max_k > cap {
        warn!("--max-k {} exceeds the {what} {cap}; clipped", a.max_k);
        cap
    } else {
        a.max_k
    };
    if max_k < 2 {
        return Err(Error::InvalidConfig("rank selection needs --max-k >= 2".into()));
    }
    let s = match &data {
        Dataset::MultiProxy(d) => {
            let v = [&d.views[0], &d.views[1], &d.views[2]];
            scree(v, max_k, &a.kernel.spec()?, a.seed)?
        }
        Dataset::MultiTreatment(d) => {
            let t = &d.treatments;
            scree_discrete([&t[0], &t[1], &t[2]], d.levels, max_k)?
        }
    };
    let k = s.select_rank()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (j, v) in s.values.iter().enumerate() {
        writeln!(out, "s{} = {v:.6e}", j + 1)?;
    }
    writeln!(out, "noise floor = {:.6e}", s.noise_floor())?;
    writeln!(out, "selected K = {k}")?;
    if let Some(path) = a.out {
        let mut csv = String::from("index,singular_value\n");
        for (j, v) in s.values.iter().enumerate() {
            csv.push_str(&format!("{},{v:e}\n", j + 1));
        }
        fs::write(&path, csv)?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let cfg = BenchConfig::new(a.scenario, a.ns, a.trials, a.seed);
    let pool = bench::thread_pool()?;
    info!("{} trials on {} threads", cfg.ns.len() * cfg.trials, pool.current_num_threads());
    let rows = pool.install(|| bench::run_benchmark(&cfg))?;
    bench::write_report(fs::File::create(&a.out)?, &rows)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(
        out,
        "{:>6} {:>3} {:<16} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "n", "u", "parameter", "truth", "median", "err_q10", "err_med", "err_q90"
    )?;
    for s in bench::summarize(&rows) {
        writeln!(
            out,
            "{:>6} {:>3} {:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            s.n, s.component, s.parameter, s.truth, s.median_estimate, s.error_q10, s.error_median, s.error_q90
        )?;
    }
    if failed > 0 {
        warn!("{failed} trials failed; see the error column of {}", a.out.display());
    }
    info!("wrote {}", a.out.display());
    Ok(())
}

/// 0 success, 1 usage or input error, 2 numerical failure or unreadable
/// model.
fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() || matches!(e, Error::Schema(_)) {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Estimate(a) => estimate(a),
        Command::Rank(a) => rank(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
