use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use onramp_core::metrics::{EpisodeSink, FailureCounts};
use onramp_core::*;
use serde::de::DeserializeOwned;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "onramp",
    version,
    about = "On-ramp merge planner: suites, single runs and batch evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a scenario suite manifest.
    Gen(GenArgs),
    /// Plan one cycle on a scenario's initial state and dump every candidate.
    Plan(PlanArgs),
    /// Run one closed-loop episode.
    Sim(SimArgs),
    /// Run a suite under one or all planner variants.
    Batch(BatchArgs),
    /// Recompute metrics from episode traces.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Planner and simulator configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Args)]
struct SuiteArgs {
    /// `headway-sweep`, `random`, or a manifest written by `gen`.
    #[arg(long)]
    suite: String,
    /// Seed for the random suite.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Generator settings for the named suite (TOML or JSON).
    #[arg(long)]
    suite_config: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// A scenario file, or a suite manifest together with --index.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the per-cycle trace (JSON lines) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the episode summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    suite: SuiteArgs,
    /// `full`, `ablation-a`, `ablation-b`, `no-obs` or `all`.
    #[arg(long, default_value = "full")]
    variant: String,
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads; 1 runs episodes sequentially on the calling thread.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for metrics.csv and metrics.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write one trace per episode under <out>/traces/<variant>/.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace files written by `sim` or `batch --traces`.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Variant name used to label the table.
    #[arg(long, default_value = "full")]
    variant: Variant,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics.csv and metrics.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    })
}

fn load_suite(a: &SuiteArgs) -> Result<Vec<Scenario>> {
    let suite = match a.suite.as_str() {
        "headway-sweep" | "headway_sweep" => {
            let cfg: HeadwaySweepConfig = a
                .suite_config
                .as_deref()
                .map(read_structured)
                .transpose()?
                .unwrap_or_default();
            generate_headway_sweep(&cfg)?
        }
        "random" => {
            let cfg: SuiteConfig = a
                .suite_config
                .as_deref()
                .map(read_structured)
                .transpose()?
                .unwrap_or_default();
            generate_random_suite(&cfg, a.seed)?
        }
        path => read_structured(Path::new(path))?,
    };
    if suite.is_empty() {
        bail!("suite {} is empty", a.suite);
    }
    Ok(suite)
}

fn load_scenario(a: &ScenarioArgs) -> Result<Scenario> {
    let value: serde_json::Value = read_structured(&a.scenario)?;
    if value.is_array() {
        let mut list: Vec<Scenario> = serde_json::from_value(value)?;
        if a.index >= list.len() {
            bail!(
                "index {} out of range for a suite of {}",
                a.index,
                list.len()
            );
        }
        Ok(list.swap_remove(a.index))
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn tables_csv(tables: &[MetricsTable]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in tables {
        w.serialize(t)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn table_json(t: &MetricsTable, episodes: &[EpisodeSummary]) -> serde_json::Value {
    let FailureCounts {
        collision,
        road_departure,
        ramp_overrun,
        timeout,
        error,
    } = t.failures.clone();
    json!({
        "table": t,
        "failures": {
            "collision": collision,
            "road_departure": road_departure,
            "ramp_overrun": ramp_overrun,
            "timeout": timeout,
            "error": error,
        },
        "episodes": episodes,
    })
}

fn write_results(dir: &Path, runs: &[(MetricsTable, Vec<EpisodeSummary>)]) -> Result<String> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tables: Vec<MetricsTable> = runs.iter().map(|(t, _)| t.clone()).collect();
    let csv = tables_csv(&tables)?;
    fs::write(dir.join("metrics.csv"), &csv)?;
    let doc = json!({
        "merge_time_clock": "episode start",
        "maxima": "suite-wide",
        "variants": runs.iter().map(|(t, e)| table_json(t, e)).collect::<Vec<_>>(),
    });
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    Ok(csv)
}

fn plan(a: &PlanArgs) -> Result<()> {
    let cfg = a.scenario.config.load()?;
    let sc = load_scenario(&a.scenario)?;
    let report = plan_snapshot(&sc, &a.scenario.variant.apply(&cfg.planner))?;
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

fn sim(a: &SimArgs) -> Result<()> {
    let cfg = a.scenario.config.load()?;
    let sc = load_scenario(&a.scenario)?;
    let r = run_episode(
        &sc,
        &a.scenario.variant.apply(&cfg.planner),
        &cfg.sim,
        a.trace.is_some(),
    )?;
    if let Some(p) = &a.trace {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = std::io::BufWriter::new(f);
        r.write_trace(&mut w)?;
        w.flush()?;
    }
    emit(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&r.summary)? + "\n"),
    )
}

fn trace_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn batch(a: &BatchArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let suite = load_suite(&a.suite)?;
    let variants: Vec<Variant> = match a.variant.as_str() {
        "all" => Variant::ALL.to_vec(),
        v => vec![v.parse().map_err(anyhow::Error::msg)?],
    };
    if a.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let mut runs = Vec::new();
    for v in variants {
        let dir = a.out.join("traces").join(v.name());
        let sink = |r: &EpisodeResult| -> onramp_core::Result<()> {
            let mut buf = Vec::new();
            r.write_trace(&mut buf)?;
            fs::write(
                dir.join(format!("{}.jsonl", trace_name(&r.summary.label))),
                buf,
            )?;
            Ok(())
        };
        if a.traces {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let res = run_batch_with(
            &suite,
            v,
            &cfg.planner,
            &cfg.sim,
            a.threads,
            a.traces.then_some(&sink as EpisodeSink),
        )?;
        runs.push((res.table, res.episodes));
    }
    let csv = write_results(&a.out, &runs)?;
    emit(None, &csv)
}

fn replay(a: &ReplayArgs) -> Result<bool> {
    let cfg = a.config.load()?;
    let mut episodes = Vec::new();
    let mut consistent = true;
    for p in &a.traces {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let (_, recorded) = read_trace(&text)?;
        let summary = replay_summary(&text, cfg.sim.plan_period)
            .with_context(|| format!("replaying {}", p.display()))?;
        if recorded
            .as_ref()
            .map(|r| r.metrics != summary.metrics)
            .unwrap_or(true)
        {
            eprintln!(
                "{}: recomputed metrics differ from the recorded summary",
                p.display()
            );
            consistent = false;
        }
        episodes.push(summary);
    }
    let table = aggregate(a.variant, &episodes);
    let runs = [(table, episodes)];
    let csv = match &a.out {
        Some(dir) => write_results(dir, &runs)?,
        None => tables_csv(&[runs[0].0.clone()])?,
    };
    emit(None, &csv)?;
    Ok(consistent)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Gen(a) => load_suite(&a.suite).and_then(|s| {
            emit(
                a.out.as_deref(),
                &(serde_json::to_string_pretty(&s)? + "\n"),
            )
        }),
        Cmd::Plan(a) => plan(a),
        Cmd::Sim(a) => sim(a),
        Cmd::Batch(a) => batch(a),
        Cmd::Replay(a) => match replay(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
