//! Command-line front end: `synth`, `train`, `sample`, `eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, default_names, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{fit, CometModel, Mode, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_CORRUPT_MODEL: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "comet", version, about = "Heavy-tailed density estimation with copula flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the 8-dimensional synthetic benchmark as CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write it with its training log.
    Train(TrainArgs),
    /// Draw samples from a saved model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on held-out data.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Tail-dependence CSV; defaults to the report path with `.tail.csv` appended.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test CSV has no header row.
        #[arg(long)]
        no_header: bool,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to the model path with `.log.csv` appended.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// File of `key=value` lines setting training defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub quantiles: Option<Vec<f64>>,
    /// `comet` or `realnvp`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input CSVs have no header row.
    #[arg(long)]
    pub no_header: bool,
}

/// Exit code for an error, classified by its innermost cause.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. } => EXIT_MISSING_INPUT,
        Error::Corrupt(_) | Error::Version { .. } => EXIT_CORRUPT_MODEL,
        Error::Shape(_) | Error::Parse { .. } => EXIT_SHAPE,
        Error::Param(_) | Error::Domain { .. } => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| usage(format!("bad hidden size {t:?}"))))
        .collect()
}

fn parse_mode(s: &str) -> Result<Mode> {
    Mode::from_name(s).ok_or_else(|| usage(format!("unknown mode {s:?} (expected comet or realnvp)")))
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("config key {key}: cannot parse {v:?}")))
}

/// Applies `key=value` lines (blank lines and `#` comments ignored).
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "quantiles" => {
                let (a, b) = v
                    .split_once(',')
                    .ok_or_else(|| usage("config key quantiles: expected a,b"))?;
                cfg.lower_q = parse_value(k, a.trim())?;
                cfg.upper_q = parse_value(k, b.trim())?;
            }
            "lower_q" => cfg.lower_q = parse_value(k, v)?,
            "upper_q" => cfg.upper_q = parse_value(k, v)?,
            "mode" => cfg.mode = parse_mode(v)?,
            "layers" => cfg.layers = parse_value(k, v)?,
            "hidden" => cfg.hidden = parse_hidden(v)?,
            "lr" => cfg.lr = parse_value(k, v)?,
            "batch_size" => cfg.batch_size = parse_value(k, v)?,
            "sigma_max" => cfg.sigma_max = parse_value(k, v)?,
            "max_epochs" => cfg.max_epochs = parse_value(k, v)?,
            "patience" => cfg.patience = parse_value(k, v)?,
            "seed" => cfg.seed = parse_value(k, v)?,
            "scale_clamp" => cfg.scale_clamp = parse_value(k, v)?,
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        apply_config_text(&mut cfg, &text)?;
    }
    if let Some(q) = &args.quantiles {
        cfg.lower_q = q[0];
        cfg.upper_q = q[1];
    }
    if let Some(m) = &args.mode {
        cfg.mode = parse_mode(m)?;
    }
    if let Some(h) = &args.hidden {
        cfg.hidden = parse_hidden(h)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(layers, lr, batch_size, sigma_max, max_epochs, patience, seed);
    cfg.validate()?;
    Ok(cfg)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn cmd_synth(n: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = data::gen_synthetic(n, seed)?;
    data::save_csv(&ds, out)?;
    println!("wrote {} rows x {} columns to {}", ds.n_rows(), ds.n_cols(), out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = train_config(args)?;
    let train = data::load_csv(&args.train, !args.no_header)?.with_split(data::Split::Train);
    let val = data::load_csv(&args.val, !args.no_header)?.with_split(data::Split::Val);
    let (model, log) = fit(&train, &val, &cfg)?;
    model.save(&args.out)?;
    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.csv"));
    write(&log_path, &log.to_text())?;
    for e in &log.epochs {
        println!(
            "epoch {:>3}  train {:>10.4}  val {:>10.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }
    let best = &log.epochs[log.best_epoch - 1];
    println!(
        "{} model: best epoch {} (val {:.4}), written to {}",
        cfg.mode.name(),
        log.best_epoch,
        best.val_loss,
        args.out.display()
    );
    Ok(())
}

fn cmd_sample(model: &Path, n: usize, seed: u64, sigma: f64, out: &Path) -> Result<()> {
    let m = CometModel::load(model)?;
    let rows = m.sample(n, sigma, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let ds = Dataset::new(rows.concat(), default_names(m.dim()), Provenance::Derived("samples".into()))?;
    data::save_csv(&ds, out)?;
    println!("wrote {} samples of dimension {} to {}", n, m.dim(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    model: &Path,
    test: &Path,
    report: &Path,
    plot: Option<&Path>,
    samples: usize,
    seed: u64,
    has_header: bool,
) -> Result<()> {
    let m = CometModel::load(model)?;
    let ds = data::load_csv(test, has_header)?.with_split(data::Split::Test);
    let r = eval::evaluate(&m, &ds, samples, seed)?;
    write(report, &r.to_text())?;
    let plot = plot.map_or_else(|| with_suffix(report, ".tail.csv"), Path::to_path_buf);
    write(&plot, &r.tail_csv())?;
    println!("avg_nll: {:.4}", r.avg_nll);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { n, seed, out } => cmd_synth(n, seed, &out),
        Command::Train(args) => cmd_train(&args),
        Command::Sample {
            model,
            n,
            seed,
            sigma,
            out,
        } => cmd_sample(&model, n, seed, sigma, &out),
        Command::Eval {
            model,
            test,
            report,
            plot,
            samples,
            seed,
            no_header,
        } => cmd_eval(&model, &test, &report, plot.as_deref(), samples, seed, !no_header),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(extra: &[&str]) -> std::result::Result<TrainArgs, clap::Error> {
        let mut argv = vec!["comet", "train", "--train", "t.csv", "--val", "v.csv", "--out", "m.txt"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv)?.command {
            Command::Train(a) => Ok(a),
            _ => unreachable!(),
        }
    }

    #[test]
    fn quantile_flags() {
        let cfg = train_config(&train_args(&["--quantiles", "0.05", "0.95"]).unwrap()).unwrap();
        assert_eq!((cfg.lower_q, cfg.upper_q), (0.05, 0.95));
        let err = train_config(&train_args(&["--quantiles", "0.9", "0.1"]).unwrap()).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert!(train_args(&["--quantiles", "0.1"]).is_err());
    }

    #[test]
    fn config_file_then_flags() {
        let mut cfg = TrainConfig::default();
        apply_config_text(&mut cfg, "# defaults\nlayers = 6\nhidden=32,32\nquantiles=0.01,0.99\nmode=realnvp\n\n")
            .unwrap();
        assert_eq!(cfg.layers, 6);
        assert_eq!(cfg.hidden, vec![32, 32]);
        assert_eq!((cfg.lower_q, cfg.upper_q), (0.01, 0.99));
        assert_eq!(cfg.mode, Mode::RealNvpBaseline);
        assert!(apply_config_text(&mut cfg, "bogus=1").is_err());
        assert!(apply_config_text(&mut cfg, "layers").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "layers=6\nseed=3\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = train_config(&train_args(&["--config", p, "--layers", "4"]).unwrap()).unwrap();
        assert_eq!((cfg.layers, cfg.seed), (4, 3));
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Corrupt("x".into())), EXIT_CORRUPT_MODEL);
        assert_eq!(exit_code(&Error::Shape("x".into())), EXIT_SHAPE);
        assert_eq!(exit_code(&Error::Numerical("x".into())), EXIT_NUMERICAL);
        let io = Error::io("missing.csv", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(exit_code(&io), EXIT_MISSING_INPUT);
        let nested = Error::Column {
            column: "x1".into(),
            source: Box::new(Error::Shape("x".into())),
        };
        assert_eq!(exit_code(&nested), EXIT_SHAPE);
        assert_eq!(run(["comet", "--help"]), EXIT_OK);
        assert_eq!(run(["comet", "frobnicate"]), EXIT_USAGE);
    }
}
