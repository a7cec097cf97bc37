use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use ulcast::checkpoint;
use ulcast::data::{parse_trace_csv, write_trace_csv, FeatureSet, Trace};
use ulcast::eval::{evaluate, predict_trace, Groups, Split};
use ulcast::models::{ArchConfig, ModelKind, ModelSpec};
use ulcast::phy::{
    arfcn_to_khz, format_mhz, max_ul_throughput_with, BandClass, Duplex, Fraction, PrbTable, UlLinkConfig,
};
use ulcast::synth::{preset, synth_trace, Scenario};
use ulcast::train::{fit, TrainConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "ulcast", version, about = "5G SA uplink throughput forecasting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic drive-test traces as CSV
    Synth(SynthArgs),
    /// Train a predictor on a directory (or list) of trace CSVs
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out traces and emit a JSON report
    Eval(EvalArgs),
    /// Stream per-second teacher-forced forecasts for one trace
    Predict(PredictArgs),
    /// Maximum uplink throughput of a carrier configuration
    Maxthpt(MaxThptArgs),
    /// Carrier frequency of an NR-ARFCN
    Arfcn(ArfcnArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario preset: train, walk, drive, tram, metro, n3_locked, n28_locked
    #[arg(long, default_value = "train")]
    preset: String,
    /// RNG seed of the first trace
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace length in seconds (preset default when omitted)
    #[arg(long)]
    duration: Option<u32>,
    /// Number of traces with consecutive seeds; more than one writes into the `--out` directory
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Output CSV file, or directory when `--count` > 1
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Trace CSV file or directory of `*.csv` files
    #[arg(long, env = "ULCAST_DATA_DIR")]
    data: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: convlstm, lstm, cnn-lstm, transformer
    #[arg(long)]
    model: ModelKind,
    /// Input feature set: android-api, full, sure
    #[arg(long, default_value = "android-api")]
    features: FeatureSet,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Parameter-initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs (architecture default when omitted)
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Seed for the validation split and per-epoch shuffling
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Share of traces held out for validation loss
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Keep the parameters of the epoch with the lowest validation loss
    #[arg(long)]
    keep_best: bool,
    /// Architecture override `key=value` (repeatable), e.g. `lstm_hidden=32`
    #[arg(long = "arch", value_name = "KEY=VALUE")]
    arch: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Report output path; stdout when omitted
    #[arg(long)]
    report: Option<PathBuf>,
    /// Whether the traces were part of training: seen or unseen
    #[arg(long, default_value = "unseen")]
    split: Split,
    /// Extra aggregate over traces whose id starts with a prefix: `NAME=PREFIX[,PREFIX...]` (repeatable)
    #[arg(long = "group", value_name = "NAME=PREFIXES")]
    groups: Vec<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    model: PathBuf,
    /// Trace CSV
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct MaxThptArgs {
    /// Band: n28, n3, n77 (sets default duplex and bandwidth)
    #[arg(long)]
    band: Option<String>,
    /// fdd or tdd
    #[arg(long)]
    duplex: Option<String>,
    /// Channel bandwidth in MHz
    #[arg(long)]
    bw: Option<u32>,
    /// Subcarrier spacing in kHz (15 for FDD, 30 for TDD by default)
    #[arg(long)]
    scs: Option<u32>,
    /// MIMO layers
    #[arg(long, default_value_t = 1)]
    layers: u32,
    /// Modulation order (8 = 256QAM)
    #[arg(long, default_value_t = 8)]
    qm: u32,
    /// Overhead fraction as a decimal, e.g. 0.08
    #[arg(long)]
    overhead: Option<String>,
    /// TOML file of extra `[[prb]]` rows (scs_khz, bandwidth_mhz, n_prb)
    #[arg(long)]
    prb_table: Option<PathBuf>,
}

#[derive(Args)]
struct ArfcnArgs {
    /// NR-ARFCN (0 to 3279165)
    arfcn: u64,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<ulcast::Error> for Failure {
    fn from(e: ulcast::Error) -> Self {
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else if matches!(e, ulcast::Error::Model(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Failure { code, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, msg: msg.into() }
}

fn data_err(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_DATA, msg: msg.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Maxthpt(a) => maxthpt(a),
        Command::Arfcn(a) => arfcn(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn echo<T: Serialize>(config: &T) {
    println!("config: {}", serde_json::to_string(config).expect("config is serializable"));
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| data_err(format!("cli: cannot write {}: {e}", path.display())))
}

fn synth(a: SynthArgs) -> Outcome {
    if a.count == 0 {
        return Err(usage("synth: --count must be at least 1"));
    }
    let mut base: Scenario = preset(&a.preset).map_err(|e| usage(format!("trace-synth: {e}")))?;
    if let Some(d) = a.duration {
        base = base.with_duration(d);
    }
    echo(&serde_json::json!({ "command": "synth", "scenario": &base.clone().with_seed(a.seed), "count": a.count }));
    if a.count > 1 {
        fs::create_dir_all(&a.out).map_err(|e| data_err(format!("cli: cannot create {}: {e}", a.out.display())))?;
    }
    for seed in a.seed..a.seed + a.count {
        let trace = synth_trace(&base.clone().with_seed(seed)).map_err(ulcast::Error::from)?;
        let path = if a.count > 1 { a.out.join(format!("{}.csv", trace.meta.id)) } else { a.out.clone() };
        write_trace_csv(&trace, &path).map_err(ulcast::Error::from)?;
        println!("wrote {} ({} s)", path.display(), trace.len());
    }
    Ok(())
}

/// Reads one CSV or every `*.csv` in a directory, in file-name order.
fn load_traces(path: &Path, schema: Option<FeatureSet>) -> Result<Vec<Trace>, Failure> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| data_err(format!("cli: cannot read {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(data_err(format!("trace-data: no .csv traces in {}", path.display())));
    }
    files
        .iter()
        .map(|f| parse_trace_csv(f, schema).map_err(|e| Failure::from(ulcast::Error::from(e))))
        .collect()
}

fn train(a: TrainArgs) -> Outcome {
    let mut arch = ArchConfig::default();
    for kv in &a.arch {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("train: --arch expects KEY=VALUE, got {kv:?}")))?;
        arch.set(k.trim(), v.trim())?;
    }
    let spec = ModelSpec::new(a.model, a.features).with_arch(arch).with_seed(a.seed);
    spec.validate()?;
    let mut cfg = TrainConfig::for_kind(a.model);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    if let Some(s) = a.shuffle_seed {
        cfg.shuffle_seed = s;
    }
    if let Some(v) = a.val_fraction {
        cfg.val_fraction = v;
    }
    cfg.keep_best = a.keep_best;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let traces = load_traces(&a.data.data, Some(a.features))?;
    let ids: Vec<&str> = traces.iter().map(|t| t.meta.id.as_str()).collect();
    echo(&serde_json::json!({ "command": "train", "spec": &spec, "train": &cfg, "traces": ids }));
    let model = fit(spec, &traces, &cfg)?;
    for h in model.history() {
        match h.val_loss {
            Some(v) => println!("epoch {:>3}  train_loss {:.6}  val_loss {v:.6}", h.epoch, h.train_loss),
            None => println!("epoch {:>3}  train_loss {:.6}", h.epoch, h.train_loss),
        }
    }
    checkpoint::save(&model, &a.out)?;
    println!("saved {} ({} parameters)", a.out.display(), model.model().parameter_count());
    Ok(())
}

fn parse_groups(specs: &[String]) -> Result<Groups, Failure> {
    let mut groups = BTreeMap::new();
    for s in specs {
        let (name, prefixes) =
            s.split_once('=').ok_or_else(|| usage(format!("eval: --group expects NAME=PREFIXES, got {s:?}")))?;
        let list: Vec<String> = prefixes.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect();
        if name.trim().is_empty() || list.is_empty() {
            return Err(usage(format!("eval: empty group name or prefix list in {s:?}")));
        }
        groups.insert(name.trim().to_string(), list);
    }
    Ok(groups)
}

fn eval(a: EvalArgs) -> Outcome {
    let groups = parse_groups(&a.groups)?;
    let model = checkpoint::load(&a.model)?;
    let traces = load_traces(&a.data.data, Some(model.spec().feature_set))?;
    let report = evaluate(&model, &traces, a.split, &groups)?;
    let json = report.to_json();
    match &a.report {
        Some(path) => {
            echo(&serde_json::json!({
                "command": "eval",
                "checkpoint": a.model.display().to_string(),
                "spec": model.spec(),
                "split": a.split,
                "groups": &groups,
            }));
            write_file(path, &json)?;
            for m in &report.aggregates {
                println!(
                    "{:<12} rmse {:.3} Mbps  cum_mape {:.2}%  accuracy {:.2}%  persistence_rmse {:.3} Mbps  n={}",
                    m.trace_id, m.rmse_mbps, m.cum_mape_pct, m.accuracy_pct, m.persistence_rmse_mbps, m.n_points
                );
            }
            println!("wrote {}", path.display());
        }
        // the report already carries the spec, split and groups
        None => print!("{json}"),
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Outcome {
    let model = checkpoint::load(&a.model)?;
    let trace = parse_trace_csv(&a.trace, Some(model.spec().feature_set)).map_err(ulcast::Error::from)?;
    let p = predict_trace(&model, &trace)?;
    let mut out = io::stdout().lock();
    let res = (|| -> io::Result<()> {
        writeln!(out, "# config: {}", serde_json::to_string(model.spec()).expect("spec is serializable"))?;
        writeln!(out, "t,pred_mbps,truth_mbps")?;
        for ((t, pred), truth) in p.times.iter().zip(&p.pred).zip(&p.truth) {
            writeln!(out, "{t},{pred:.6},{truth:.6}")?;
        }
        out.flush()
    })();
    match res {
        // a closed reader (e.g. `| head`) is not an error
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(data_err(format!("cli: cannot write output: {e}"))),
        _ => Ok(()),
    }
}

/// Exact decimal to fraction, so `0.08` is 8/100 rather than its binary neighbour.
fn parse_decimal(s: &str) -> Option<Fraction> {
    let s = s.trim();
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 18 {
        return None;
    }
    let den = 10i128.pow(frac.len() as u32);
    let num: i128 = format!("{int}{frac}").parse().ok()?;
    Some(Fraction::new(num, den))
}

fn maxthpt(a: MaxThptArgs) -> Outcome {
    let mut table = PrbTable::default();
    if let Some(p) = &a.prb_table {
        let text = fs::read_to_string(p).map_err(|e| data_err(format!("cli: cannot read {}: {e}", p.display())))?;
        table.extend_from_toml(&text).map_err(|e| usage(format!("nr-phy: {e}")))?;
    }
    let band = match a.band.as_deref() {
        None => None,
        Some(b) => Some(match b.to_ascii_lowercase().as_str() {
            // n77 has two deployed carriers; the bandwidth picks one
            "n77" => match a.bw {
                Some(40) | None => BandClass::N77_3400,
                _ => BandClass::N77_3900,
            },
            other => BandClass::parse(other).ok_or_else(|| usage(format!("maxthpt: unknown band {b:?} (n28, n3, n77)")))?,
        }),
    };
    let carrier = band.and_then(BandClass::carrier);
    let duplex = match a.duplex.as_deref().map(str::to_ascii_lowercase).as_deref() {
        Some("fdd") => Duplex::Fdd,
        Some("tdd") => Duplex::Tdd,
        Some(other) => return Err(usage(format!("maxthpt: unknown duplex {other:?} (fdd, tdd)"))),
        None => match &carrier {
            Some(c) => c.duplex,
            None => return Err(usage("maxthpt: give --duplex or --band")),
        },
    };
    let bw = match (a.bw, &carrier) {
        (Some(bw), _) => bw,
        (None, Some(c)) => c.bandwidth_mhz,
        (None, None) => return Err(usage("maxthpt: give --bw or --band")),
    };
    let mut cfg = UlLinkConfig::for_carrier(duplex, bw, a.scs, &table).map_err(|e| usage(format!("nr-phy: {e}")))?;
    cfg.layers = a.layers;
    cfg.modulation_order = a.qm;
    if let Some(o) = &a.overhead {
        cfg.overhead = parse_decimal(o).ok_or_else(|| usage(format!("maxthpt: --overhead expects a decimal, got {o:?}")))?;
    }
    let mbps = max_ul_throughput_with(&cfg, &table).map_err(|e| usage(format!("nr-phy: {e}")))?;
    println!("config: {cfg}");
    println!("{mbps:.2} Mbps");
    Ok(())
}

fn arfcn(a: ArfcnArgs) -> Outcome {
    let khz = arfcn_to_khz(a.arfcn).map_err(|e| usage(format!("nr-phy: {e}")))?;
    println!("{} MHz", format_mhz(khz));
    Ok(())
}
