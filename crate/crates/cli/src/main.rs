//! `trpa`: classify corpora, build pairs, train on synthetic bandits and run
//! the verification suites.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{Map, Value};

use trpa_core::preference::{write_pairs_jsonl, PairRecord};
use trpa_core::rules::{classify, pairs_from_levels, PreferenceLevel, ResponseRecord, Task};
use trpa_core::trainer::{render_svg, train, write_csv, EnvSpec, SyntheticEnv, TrainConfig, TrainError};
use trpa_core::verify::{
    decomposition_report, fd_check, landscape, lemma_online_dpo_not_pba, lemma_pa_is_pba,
    target_convergence, theorem1_sweep, write_landscape_csv, ConvergenceLoss, ConvergenceOptions,
    value_identity_report, Instance, LossId, Report, SweepOptions,
};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "trpa", version, about = "Rule-based preference optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Logic,
    Math,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Logic => Task::Logic,
            TaskArg::Math => Task::Math,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Lemma1,
    Lemma2,
    Theorem1,
    Landscape,
    Fdcheck,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Assign preference levels to a JSONL corpus.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task for records that carry no "task" field.
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build winner-first preference pairs from a classified corpus.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Uniform-level prompts; defaults to `<out stem>.promptwise.jsonl`.
        #[arg(long)]
        promptwise: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a synthetic environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write curves.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Run a verification suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for JSON reports (and the landscape CSV).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials for the bound sweep; instances per loss for fdcheck.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
}

/// Failure carrying its exit status.
struct Fail(u8, String);

impl Fail {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Fail(EXIT_IO, format!("{}: {e}", path.display()))
    }

    fn usage(msg: impl Into<String>) -> Self {
        Fail(EXIT_USAGE, msg.into())
    }
}

type CmdResult = Result<(), Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify { input, out, task, seed: _ } => cmd_classify(&input, &out, task.map(Into::into)),
        Command::Pairs { input, out, promptwise, seed: _ } => cmd_pairs(&input, &out, promptwise),
        Command::Train { config, out, seed, svg } => cmd_train(&config, &out, seed, svg),
        Command::Verify { suite, seed, out, trials, grid } => cmd_verify(suite, seed, out.as_deref(), trials, grid),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, Fail> {
    let f = File::open(path).map_err(|e| Fail::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Fail::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, Fail> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Fail::io(path, e))?))
}

fn parse_object(path: &Path, lineno: usize, line: &str) -> Result<Map<String, Value>, Fail> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Fail::usage(format!("{}:{lineno}: expected a JSON object", path.display()))),
        Err(e) => Err(Fail::usage(format!("{}:{lineno}: {e}", path.display()))),
    }
}

#[derive(Deserialize)]
struct CorpusRow {
    prompt_id: String,
    text: String,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    task: Option<Task>,
}

fn cmd_classify(input: &Path, out: &Path, default_task: Option<Task>) -> CmdResult {
    let lines = read_lines(input)?;
    let mut rows = Vec::with_capacity(lines.len());
    for (lineno, line) in &lines {
        let obj = parse_object(input, *lineno, line)?;
        let row: CorpusRow = serde_json::from_value(Value::Object(obj.clone()))
            .map_err(|e| Fail::usage(format!("{}:{lineno}: {e}", input.display())))?;
        let task = row.task.or(default_task).ok_or_else(|| {
            Fail::usage(format!("{}:{lineno}: record has no task and --task was not given", input.display()))
        })?;
        let rec = ResponseRecord { prompt_id: row.prompt_id, text: row.text, gold: row.gold, task };
        rows.push((obj, classify(&rec)));
    }
    let mut w = create(out)?;
    let mut counts = [0usize; 4];
    for (mut obj, c) in rows {
        counts[usize::from(c.level.get()) - 1] += 1;
        obj.insert("level".into(), Value::from(c.level.get()));
        obj.insert("diagnostics".into(), Value::from(c.diagnostics));
        serde_json::to_writer(&mut w, &obj).map_err(|e| Fail::io(out, e))?;
        w.write_all(b"\n").map_err(|e| Fail::io(out, e))?;
    }
    w.flush().map_err(|e| Fail::io(out, e))?;
    println!("level1={} level2={} level3={} level4={}", counts[0], counts[1], counts[2], counts[3]);
    Ok(())
}

#[derive(Deserialize)]
struct ClassifiedRow {
    prompt_id: String,
    level: PreferenceLevel,
}

fn cmd_pairs(input: &Path, out: &Path, promptwise: Option<PathBuf>) -> CmdResult {
    let lines = read_lines(input)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<PreferenceLevel>> = BTreeMap::new();
    for (lineno, line) in &lines {
        let obj = parse_object(input, *lineno, line)?;
        let row: ClassifiedRow = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Fail::usage(format!("{}:{lineno}: {e}", input.display())))?;
        if !groups.contains_key(&row.prompt_id) {
            order.push(row.prompt_id.clone());
        }
        groups.entry(row.prompt_id).or_default().push(row.level);
    }

    let mut pairs = Vec::new();
    let mut uniform = Vec::new();
    for id in &order {
        let levels = &groups[id];
        let built = pairs_from_levels(0, levels);
        if built.is_empty() {
            uniform.push(serde_json::json!({
                "prompt": id,
                "level": levels[0],
                "responses": (0..levels.len()).collect::<Vec<_>>(),
            }));
        }
        pairs.extend(built.into_iter().map(|p| PairRecord {
            prompt: id.clone(),
            y1: p.y1,
            y2: p.y2,
            level1: p.level1,
            level2: p.level2,
        }));
    }

    let mut w = create(out)?;
    write_pairs_jsonl(&mut w, &pairs).map_err(|e| Fail::io(out, e))?;
    w.flush().map_err(|e| Fail::io(out, e))?;

    let side = promptwise.unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pairs");
        out.with_file_name(format!("{stem}.promptwise.jsonl"))
    });
    let mut w = create(&side)?;
    for u in &uniform {
        writeln!(w, "{u}").map_err(|e| Fail::io(&side, e))?;
    }
    w.flush().map_err(|e| Fail::io(&side, e))?;
    println!("prompts={} pairs={} promptwise={}", order.len(), pairs.len(), uniform.len());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    env: EnvSpec,
    train: TrainConfig,
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>, svg: bool) -> CmdResult {
    let text = fs::read_to_string(config).map_err(|e| Fail::io(config, e))?;
    let mut run: RunConfig =
        serde_json::from_str(&text).map_err(|e| Fail::usage(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    let env = SyntheticEnv::from_spec(&run.env).map_err(|e| Fail::usage(format!("{}: {e}", config.display())))?;
    run.train.validate().map_err(|e| Fail::usage(format!("{}: {e}", config.display())))?;
    fs::create_dir_all(out).map_err(|e| Fail::io(out, e))?;

    let write_metrics = |records: &[trpa_core::trainer::TrainRecord]| -> CmdResult {
        let path = out.join("metrics.csv");
        let mut w = create(&path)?;
        write_csv(&mut w, records).map_err(|e| Fail::io(&path, e))?;
        w.flush().map_err(|e| Fail::io(&path, e))
    };
    let outcome = match train(&env, &run.train) {
        Ok(o) => o,
        Err(TrainError::Diverged { step, records }) => {
            write_metrics(&records)?;
            return Err(Fail(EXIT_DIVERGED, format!("training diverged at step {step}")));
        }
        Err(TrainError::Invalid(e)) => return Err(Fail::usage(e.to_string())),
    };
    write_metrics(&outcome.records)?;
    let path = out.join("final_policy.json");
    let json = outcome.policy.to_json().map_err(|e| Fail::io(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| Fail::io(&path, e))?;
    if svg {
        let path = out.join("curves.svg");
        fs::write(&path, render_svg(&outcome.records)).map_err(|e| Fail::io(&path, e))?;
    }
    println!("final accuracy: {:.4}", outcome.final_accuracy);
    Ok(())
}

const RANDOM_INSTANCES: usize = 20;

fn random_instances(seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..RANDOM_INSTANCES)
        .map(|i| Instance::random(&mut rng, 3, 5, format!("random #{i} (seed {seed})")))
        .collect()
}

fn core_err(e: trpa_core::Error) -> Fail {
    Fail(EXIT_CHECK_FAILED, e.to_string())
}

fn run_suite(suite: Suite, seed: u64, trials: Option<usize>, grid: usize, out: Option<&Path>) -> Result<Vec<Report>, Fail> {
    let canonical = Instance::canonical();
    let mut reports = Vec::new();
    match suite {
        Suite::Lemma1 => {
            for inst in std::iter::once(canonical.clone()).chain(random_instances(seed)) {
                reports.push(lemma_online_dpo_not_pba(&inst).map_err(core_err)?);
                let target = trpa_core::policy::target_distribution(&inst.reference, &inst.rewards, inst.beta)
                    .map_err(core_err)?;
                reports.push(decomposition_report(&target, &inst).map_err(core_err)?);
                reports.push(value_identity_report(&inst.reference, &inst).map_err(core_err)?);
            }
            let opts = ConvergenceOptions { seed, ..Default::default() };
            reports.push(target_convergence(&canonical, ConvergenceLoss::OnlineDpo, opts).map_err(core_err)?);
        }
        Suite::Lemma2 => {
            for inst in std::iter::once(canonical.clone()).chain(random_instances(seed)) {
                reports.push(lemma_pa_is_pba(&inst).map_err(core_err)?);
            }
            let opts = ConvergenceOptions { seed, ..Default::default() };
            reports.push(target_convergence(&canonical, ConvergenceLoss::Pa, opts).map_err(core_err)?);
        }
        Suite::Theorem1 => {
            let trials = trials.unwrap_or(1000);
            reports.push(theorem1_sweep(&canonical, SweepOptions { trials, seed, logit_scale: 3.0 }).map_err(core_err)?);
            let mut stress = theorem1_sweep(&canonical, SweepOptions { trials, seed: seed ^ 0x5eed, logit_scale: 20.0 })
                .map_err(core_err)?;
            stress.instance = format!("{} (logits up to 20)", stress.instance);
            reports.push(stress);
        }
        Suite::Landscape => {
            let (points, report) = landscape(grid).map_err(|e| Fail::usage(e.to_string()))?;
            if let Some(dir) = out {
                let path = dir.join("landscape.csv");
                let mut w = create(&path)?;
                write_landscape_csv(&mut w, &points).map_err(|e| Fail::io(&path, e))?;
                w.flush().map_err(|e| Fail::io(&path, e))?;
            }
            reports.push(report);
        }
        Suite::Fdcheck => {
            let n = trials.unwrap_or(100);
            for loss in LossId::ALL {
                reports.push(fd_check(loss, n, seed).map_err(core_err)?);
            }
        }
        Suite::All => {
            for s in [Suite::Lemma1, Suite::Lemma2, Suite::Theorem1, Suite::Landscape, Suite::Fdcheck] {
                reports.extend(run_suite(s, seed, trials, grid, out)?);
            }
        }
    }
    Ok(reports)
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Lemma1 => "lemma1",
        Suite::Lemma2 => "lemma2",
        Suite::Theorem1 => "theorem1",
        Suite::Landscape => "landscape",
        Suite::Fdcheck => "fdcheck",
        Suite::All => "all",
    }
}

fn cmd_verify(suite: Suite, seed: u64, out: Option<&Path>, trials: Option<usize>, grid: usize) -> CmdResult {
    if grid < 2 {
        return Err(Fail::usage("--grid must be at least 2"));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Fail::io(dir, e))?;
    }
    let reports = run_suite(suite, seed, trials, grid, out)?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    for r in &reports {
        let _ = writeln!(lock, "{} {} [{}]", if r.pass { "PASS" } else { "FAIL" }, r.claim, r.instance);
    }
    if let Some(dir) = out {
        let path = dir.join(format!("{}.json", suite_name(suite)));
        let json = serde_json::to_string_pretty(&reports).map_err(|e| Fail::io(&path, e))?;
        fs::write(&path, json + "\n").map_err(|e| Fail::io(&path, e))?;
    }
    let failed = reports.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Fail(EXIT_CHECK_FAILED, format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(())
}
