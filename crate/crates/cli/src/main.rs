use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybridchain::config::{Preset, RunConfig};
use hybridchain::events::{read_events, write_events};
use hybridchain::ledger::write_records;
use hybridchain::metrics::{compute_metrics, csv_table, run_sweep, RunMetrics, SweepRow, SweepSpec};
use hybridchain::runner::{bootstrap, simulate};
use hybridchain::{Error, Result};

#[derive(Parser)]
#[command(name = "hybridchain", version, about = "Deterministic consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its event log and metrics.
    Run(Common),
    /// Run a parameter sweep and write one CSV row per point.
    Sweep(Common),
    /// Fit and score the bootstrap classifier, then export its weights.
    Train(Common),
    /// Recompute metrics from an existing event log.
    Report {
        /// Event log written by `run`.
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML overrides (for `sweep`, a sweep file).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Overrides the config seed and the environment.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let preset: Preset = self.preset.parse()?;
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path, preset)?,
            None => RunConfig::preset(preset),
        };
        let mut cfg = cfg.with_env_seed()?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&RunConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Report { events, out } => cmd_report(&events, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_metrics(dir: &Path, label: &str, value: f64, m: &RunMetrics) -> Result<()> {
    let row = SweepRow::aggregate(label, value, std::slice::from_ref(m))?;
    create(dir, "metrics.csv")?.write_all(csv_table(&[row]).as_bytes())?;
    let mut summary = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut summary, m)?;
    summary.write_all(b"\n")?;
    Ok(())
}

fn print_summary(m: &RunMetrics) {
    let q = m.latency.map(|q| format!("p50 {} ms, p90 {} ms, max {} ms", q.p50, q.p90, q.max));
    println!(
        "decided {}/{} (backlog {}), accuracy {:.4}, throughput {:.1}/min, latency {}",
        m.decided,
        m.submitted,
        m.backlog,
        m.accuracy,
        m.throughput,
        q.unwrap_or_else(|| "n/a".into())
    );
}

fn check_bound(m: &RunMetrics) -> Result<()> {
    if m.bound_violations > 0 {
        return Err(Error::invariant(format!("{} decisions exceed the latency bound", m.bound_violations)));
    }
    Ok(())
}

fn cmd_run(c: &Common) -> Result<()> {
    let cfg = c.run_config()?;
    let dir = c.out_dir(Some(&cfg));
    ensure_dir(&dir)?;
    let out = simulate(&cfg)?;
    write_events(create(&dir, "events.jsonl")?, &out.events)?;
    write_records(create(&dir, "workload.jsonl")?, &out.workload)?;
    let mut weights = create(&dir, "weights.json")?;
    serde_json::to_writer_pretty(&mut weights, &out.weights)?;
    weights.flush()?;
    write_metrics(&dir, "seed", cfg.seed as f64, &out.metrics)?;
    print_summary(&out.metrics);
    check_bound(&out.metrics)
}

fn cmd_sweep(c: &Common) -> Result<()> {
    let preset: Preset = c.preset.parse()?;
    let path = c.config.as_ref().ok_or_else(|| Error::config("sweep needs --config <sweep file>"))?;
    let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = SweepSpec::from_toml(&text, preset)?;
    spec.base = spec.base.with_env_seed()?;
    if let Some(seed) = c.seed {
        spec.base.seed = seed;
    }
    let rows = run_sweep(&spec)?;
    let table = csv_table(&rows);
    match &c.out {
        Some(dir) => {
            ensure_dir(dir)?;
            create(dir, "sweep.csv")?.write_all(table.as_bytes())?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = c.run_config()?;
    let b = bootstrap(&cfg.bootstrap, &cfg.protocol.train, cfg.seed)?;
    println!("heldout accuracy {:.4}", b.heldout_accuracy);
    let dir = c.out_dir(Some(&cfg));
    ensure_dir(&dir)?;
    let mut w = create(&dir, "weights.json")?;
    serde_json::to_writer_pretty(&mut w, &b.weights)?;
    w.flush()?;
    Ok(())
}

fn cmd_report(events: &Path, out: Option<&Path>) -> Result<()> {
    let file = File::open(events).map_err(|e| Error::config(format!("cannot read {}: {e}", events.display())))?;
    let events = read_events(BufReader::new(file))?;
    let m = compute_metrics(&events)?;
    print_summary(&m);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_metrics(dir, "report", 0.0, &m)?;
    }
    check_bound(&m)
}
