use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saabo::acquisition::AcquisitionKind;
use saabo::bench::{
    run_closed_loop, run_convergence_study, write_convergence_csv, write_records_csv, ConvergenceConfig, RunConfig,
    TestFunction,
};
use saabo::gp::{fit_mle, read_dataset_csv, FitConfig, ModelDocument, ModelList};
use saabo::optimize::{OptimizeConfig, OptimizeMode};
use saabo::sampling::SamplerMode;
use saabo::suggest::{suggest, SuggestRequest};
use saabo::{Error, Result};

#[derive(Parser)]
#[command(name = "saabo", version, about = "Monte-Carlo Bayesian optimization with sample average approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark harness
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Fit a GP to `x1..xd,y[,noise_var]` data and write a model document
    Fit(FitArgs),
    /// Propose a batch of candidates from a model document
    Suggest(SuggestArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Closed-loop optimization of a synthetic function
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` in the config; stdout when neither is set
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SAA convergence study against analytic EI
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Search box as `lo:hi` per input, comma separated; defaults to the data range
    #[arg(long)]
    bounds: Option<String>,
}

#[derive(Args)]
struct SuggestArgs {
    #[arg(long)]
    model: PathBuf,
    /// analytic_ei, qei, qnei, qucb, okg or nipv
    #[arg(long)]
    acqf: String,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long, default_value = "rqmc")]
    sampler: String,
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long)]
    raw_samples: Option<usize>,
    #[arg(long)]
    num_restarts: Option<usize>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_to_string(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
}

fn open_output(p: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match p {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_bounds(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bound '{part}' is not lo:hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| Error::Config(format!("bad lower bound '{lo}'")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::Config(format!("bad upper bound '{hi}'")))?;
            if !(lo < hi) {
                return Err(Error::Config(format!("empty interval {lo}:{hi}")));
            }
            Ok((lo, hi))
        })
        .collect()
}

fn bench_run(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::from_json(&read_to_string(config)?)?;
    let d = TestFunction::new(cfg.function, cfg.dim, cfg.noise_sd)?.dim;
    let records = run_closed_loop(&cfg)?;
    write_records_csv(&records, d, open_output(out.or(cfg.output.as_deref()))?)
}

fn bench_convergence(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ConvergenceConfig::from_json(&read_to_string(config)?)?;
    let res = run_convergence_study(&cfg)?;
    write_convergence_csv(&res, open_output(out.or(cfg.output.as_deref()))?)
}

fn fit(args: &FitArgs) -> Result<()> {
    let file = File::open(&args.data).map_err(|e| Error::Config(format!("{}: {e}", args.data.display())))?;
    let data = read_dataset_csv(file)?;
    let bounds = match &args.bounds {
        Some(s) => parse_bounds(s)?,
        None => data
            .x()
            .column_iter()
            .map(|c| {
                let (lo, hi) = (c.min(), c.max());
                if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
            })
            .collect(),
    };
    if bounds.len() != data.d() {
        return Err(Error::Config(format!("{} bounds for {} inputs", bounds.len(), data.d())));
    }
    let cfg = FitConfig {
        num_restarts: args.restarts.max(1),
        seed: args.seed,
        input_bounds: Some(bounds.clone()),
        ..FitConfig::default()
    };
    let model = fit_mle(&data, &cfg)?;
    let doc = ModelDocument::from_model(&model, Some(bounds));
    std::fs::write(&args.out, doc.to_json()? + "\n")?;
    Ok(())
}

fn suggest_cmd(args: &SuggestArgs) -> Result<()> {
    let doc = ModelDocument::from_json(&read_to_string(&args.model)?)?;
    let model = ModelList::from(doc.to_model()?);
    let d = model.d();
    let bounds = doc.bounds.clone().unwrap_or_else(|| vec![(0.0, 1.0); d]);
    let kind = AcquisitionKind::parse(&args.acqf)?;
    let sampler: SamplerMode = serde_json::from_value(serde_json::Value::String(args.sampler.clone()))
        .map_err(|_| Error::Config(format!("unknown sampler '{}'", args.sampler)))?;
    let mut oc = OptimizeConfig::new(bounds, args.q);
    if let Some(v) = args.raw_samples {
        oc.raw_samples = v;
    }
    if let Some(v) = args.num_restarts {
        oc.num_restarts = v;
    }
    if args.sequential {
        oc.mode = OptimizeMode::SequentialGreedy;
    }
    let mut req = SuggestRequest::new(kind, oc);
    req.sampler = sampler;
    req.num_samples = args.num_samples;
    req.beta = args.beta;
    req.seed = args.seed;
    let res = suggest(&model, &req)?;
    let mut w = csv::Writer::from_writer(open_output(args.out.as_deref())?);
    let mut header = vec!["candidate".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.push("acqf_value".into());
    w.write_record(&header)?;
    for a in 0..res.x_star.nrows() {
        let mut row = vec![a.to_string()];
        row.extend(res.x_star.row(a).iter().map(|v| v.to_string()));
        row.push(res.value.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Bench { command } => match command {
            BenchCommand::Run { config, out } => bench_run(config, out.as_deref()),
            BenchCommand::Convergence { config, out } => bench_convergence(config, out.as_deref()),
        },
        Command::Fit(args) => fit(args),
        Command::Suggest(args) => suggest_cmd(args),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
