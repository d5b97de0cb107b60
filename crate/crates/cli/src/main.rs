//! Command-line driver tying the pipeline together: synthesize subjects,
//! search and distill reduction masks, compute best-combination tables,
//! and run the training-fraction experiment sweeps.
//!
//! Progress goes to stderr; machine-readable artifacts go to files and
//! their paths to stdout. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 missing prerequisite (e.g. an uncached mask).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use psodr_core::classifiers::TrainConfig;
use psodr_core::data::{load_record, save_record, validate_record, Mask, SubjectRecord};
use psodr_core::evaluation::CvSpec;
use psodr_core::experiments::{
    compute_bsub_table, fraction_grid, run_sweep, BsubSearchConfig, Condition, ExperimentConfig,
    MaskStore,
};
use psodr_core::mask::{best_mask, collect_masks, com_mask, MaskSearchConfig, ScoredMask};
use psodr_core::preprocess::{synth_subject, SynthConfig};
use psodr_core::transfer::{build_super_subject, select_group, BsubTable, GroupMode};
use psodr_core::{mix_seed, Error as CoreError};

const CONFIG_VERSION: &str = "1";

#[derive(Parser)]
#[command(name = "psodr", version, about = "Swarm-searched dimension reduction and subject-transfer experiments for epoched multichannel recordings")]
struct Cli {
    /// Master seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for fold/fitness parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic subject records from a roster config.
    Synth(SynthArgs),
    /// Search masks over a subject or super subject and distill them.
    Masks(MasksArgs),
    /// Brute-force the best transfer combination per roster subject.
    Bsub(BsubArgs),
    /// Run experiment conditions across training fractions.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Roster config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for record manifests and payloads.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MasksArgs {
    /// Directory holding record manifests.
    #[arg(long)]
    data: PathBuf,
    /// Tool config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Explicit member subject ids (comma-separated). One id searches that
    /// subject alone; several are concatenated first.
    #[arg(long, value_delimiter = ',')]
    subjects: Vec<String>,
    /// Derive the members for this target instead of listing them.
    #[arg(long, conflicts_with = "subjects")]
    target: Option<String>,
    /// Transfer-group mode (4sub or bsub) when deriving members, or a tag
    /// for an explicit member list.
    #[arg(long = "group-mode")]
    group_mode: Option<String>,
    /// Cross-validation repetitions (overrides config).
    #[arg(long)]
    reps: Option<usize>,
    /// Cross-validation folds per repetition (overrides config).
    #[arg(long)]
    folds: Option<usize>,
    /// Output mask file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BsubArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output table file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target subject id.
    #[arg(long)]
    target: String,
    /// Condition codes (comma-separated) or "all".
    #[arg(long, default_value = "all", value_delimiter = ',')]
    conditions: Vec<String>,
    /// Training fractions (comma-separated) or "all" for the 5% grid.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    fractions: Vec<String>,
    /// Directory with cached mask files from `psodr masks`.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Cross-validation repetitions (overrides config).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Config files

fn default_config_version() -> String {
    CONFIG_VERSION.to_string()
}

#[derive(Debug, Deserialize)]
struct SynthFileConfig {
    #[serde(default = "default_config_version")]
    config_version: String,
    #[serde(default)]
    seed: Option<u64>,
    subjects: Vec<SynthConfig>,
}

fn default_reps() -> usize {
    10
}
fn default_folds() -> usize {
    20
}
fn default_bsub_cv() -> usize {
    1
}
fn default_bsub_folds() -> usize {
    5
}

/// Shared tool configuration for the masks/bsub/experiment commands.
/// Every field has a default, so `{}` is a valid config.
#[derive(Debug, Default, Deserialize)]
struct ToolConfig {
    #[serde(default = "default_config_version")]
    config_version: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_reps")]
    reps: usize,
    #[serde(default = "default_folds")]
    folds: usize,
    #[serde(default)]
    mask: MaskSearchConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    bsub_table: Option<BsubTable>,
    /// Cross-validation shape of the per-subset searches in `bsub`.
    #[serde(default = "default_bsub_cv")]
    bsub_mask_reps: usize,
    #[serde(default = "default_bsub_folds")]
    bsub_mask_folds: usize,
    #[serde(default = "default_bsub_cv")]
    bsub_eval_reps: usize,
    #[serde(default = "default_bsub_folds")]
    bsub_eval_folds: usize,
}

/// Mask artifact written by `psodr masks` and read by `psodr experiment`.
#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    format_version: String,
    /// Tag of the super-subject mode the members came from, when any.
    group_mode: Option<String>,
    target: Option<String>,
    members: Vec<String>,
    n: usize,
    k: usize,
    scored_masks: Vec<ScoredMask>,
    best_mask: Mask,
    com_mask: Mask,
}

// ---------------------------------------------------------------------------
// Failure plumbing

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }

    fn missing(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(err: CoreError) -> Self {
        let code = match &err {
            CoreError::Config(_) | CoreError::Json(_) => 2,
            CoreError::Missing(_) => 4,
            _ => 3,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    // serde_json errors carry line/column positions.
    serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
}

fn check_config_version(version: &str) -> CmdResult {
    if version != CONFIG_VERSION {
        return Err(Failure::config(format!(
            "unsupported config_version {version:?} (expected {CONFIG_VERSION:?})"
        )));
    }
    Ok(())
}

fn load_tool_config(
    path: Option<&PathBuf>,
    seed_override: Option<u64>,
) -> Result<ToolConfig, Failure> {
    let mut cfg: ToolConfig = match path {
        Some(p) => read_json_config(p)?,
        None => ToolConfig {
            config_version: CONFIG_VERSION.to_string(),
            ..ToolConfig::default()
        },
    };
    check_config_version(&cfg.config_version)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Loads every record manifest in a directory, sorted by file name.
fn load_roster(dir: &Path) -> Result<Vec<SubjectRecord>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::data(format!("cannot read data dir {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();

    let mut roster = Vec::new();
    for path in paths {
        match load_record(&path) {
            Ok(record) => {
                let violations = validate_record(&record);
                if !violations.is_empty() {
                    return Err(Failure::data(format!(
                        "record {} violates invariants: {}",
                        path.display(),
                        violations.join("; ")
                    )));
                }
                roster.push(record);
            }
            Err(CoreError::Json(e)) => {
                // Not a record manifest (could be a mask or report file).
                eprintln!("skipping {} (not a record manifest: {e})", path.display());
            }
            Err(e) => return Err(Failure::data(format!("{}: {e}", path.display()))),
        }
    }
    if roster.is_empty() {
        return Err(Failure::data(format!(
            "no record manifests found in {}",
            dir.display()
        )));
    }
    Ok(roster)
}

fn find_subject<'a>(roster: &'a [SubjectRecord], id: &str) -> Result<&'a SubjectRecord, Failure> {
    roster
        .iter()
        .find(|s| s.subject_id == id)
        .ok_or_else(|| Failure::data(format!("subject {id:?} not found in data directory")))
}

fn mask_file_name(mode: Option<&str>, target: &str) -> String {
    format!("masks_{}_{}.json", mode.unwrap_or("none"), target)
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_synth(args: &SynthArgs, seed_override: Option<u64>) -> CmdResult {
    let cfg: SynthFileConfig = read_json_config(&args.config)?;
    check_config_version(&cfg.config_version)?;
    if cfg.subjects.is_empty() {
        return Err(Failure::config("config lists no subjects"));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", args.out.display())))?;

    let base_seed = seed_override.or(cfg.seed);
    for (index, subject_cfg) in cfg.subjects.iter().enumerate() {
        let mut subject_cfg = subject_cfg.clone();
        if let Some(base) = base_seed {
            subject_cfg.seed = mix_seed(base, &[index as u64]);
        }
        let record = synth_subject(&subject_cfg)?;
        let manifest = args.out.join(format!("{}.json", record.subject_id));
        save_record(&record, &manifest)?;
        eprintln!(
            "synthesized {}: {} sub-epochs, {} channels",
            record.subject_id,
            record.trials.n_subepochs(),
            record.trials.n_channels()
        );
        println!("{}", manifest.display());
    }
    Ok(())
}

fn cmd_masks(args: &MasksArgs, seed_override: Option<u64>) -> CmdResult {
    let cfg = load_tool_config(args.config.as_ref(), seed_override)?;
    let roster = load_roster(&args.data)?;
    let roster_ids: Vec<String> = roster.iter().map(|s| s.subject_id.clone()).collect();

    let mode = match args.group_mode.as_deref() {
        Some(text) => Some(GroupMode::from_str(text).map_err(|e| Failure::config(e.to_string()))?),
        None => None,
    };

    let (members, target) = if let Some(target) = &args.target {
        find_subject(&roster, target)?;
        let mode = mode
            .ok_or_else(|| Failure::config("--target needs --group-mode to derive the members"))?;
        let members =
            select_group(target, &roster_ids, mode, cfg.bsub_table.as_ref()).map_err(|e| {
                match e {
                    // An absent table or table entry is a configuration gap.
                    CoreError::Missing(m) => Failure::config(m),
                    other => other.into(),
                }
            })?;
        (members, Some(target.clone()))
    } else if !args.subjects.is_empty() {
        for id in &args.subjects {
            find_subject(&roster, id)?;
        }
        (args.subjects.clone(), None)
    } else {
        return Err(Failure::config("give either --subjects or --target"));
    };

    let records: Vec<SubjectRecord> = members
        .iter()
        .map(|id| find_subject(&roster, id).cloned())
        .collect::<Result<_, _>>()?;
    let record = if records.len() == 1 {
        records.into_iter().next().unwrap()
    } else {
        build_super_subject(&records)?
    };
    eprintln!(
        "searching masks over {} ({} sub-epochs)",
        record.subject_id,
        record.trials.n_subepochs()
    );

    let features = psodr_core::preprocess::prepare_features(&record)?;
    let search = MaskSearchConfig {
        swarm: psodr_core::pso::SwarmConfig {
            seed: mix_seed(cfg.seed, &[psodr_core::hash_label(&record.subject_id)]),
            ..cfg.mask.swarm.clone()
        },
        ..cfg.mask.clone()
    };
    let cv = CvSpec::stage1(
        args.reps.unwrap_or(cfg.reps),
        args.folds.unwrap_or(cfg.folds),
        mix_seed(cfg.seed, &[1]),
    );

    let started = std::time::Instant::now();
    let scored = collect_masks(&features, &search, &cv)?;
    eprintln!(
        "collected {} masks in {:.1}s",
        scored.len(),
        started.elapsed().as_secs_f64()
    );

    let best = best_mask(&scored)?;
    let com = com_mask(&scored, search.swarm.n_select, search.swarm.k_select)?;
    let file = MaskFile {
        format_version: CONFIG_VERSION.to_string(),
        group_mode: mode.map(|m| m.id().to_string()),
        target,
        members,
        n: search.swarm.n_select,
        k: search.swarm.k_select,
        scored_masks: scored,
        best_mask: best,
        com_mask: com,
    };
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let json = serde_json::to_string_pretty(&file).map_err(CoreError::from)?;
    std::fs::write(&args.out, json)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", args.out.display())))?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_bsub(args: &BsubArgs, seed_override: Option<u64>) -> CmdResult {
    let cfg = load_tool_config(args.config.as_ref(), seed_override)?;
    let roster = load_roster(&args.data)?;
    let search_cfg = BsubSearchConfig {
        mask_search: cfg.mask.clone(),
        mask_reps: cfg.bsub_mask_reps,
        mask_folds: cfg.bsub_mask_folds,
        eval_reps: cfg.bsub_eval_reps,
        eval_folds: cfg.bsub_eval_folds,
        train: cfg.train.clone(),
        seed: cfg.seed,
    };
    eprintln!(
        "brute-forcing best combinations over {} subjects",
        roster.len()
    );
    let started = std::time::Instant::now();
    let table = compute_bsub_table(&roster, &search_cfg)?;
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());

    let json = serde_json::to_string_pretty(&table).map_err(CoreError::from)?;
    std::fs::write(&args.out, json)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", args.out.display())))?;
    println!("{}", args.out.display());
    Ok(())
}

fn parse_conditions(tokens: &[String]) -> Result<Vec<Condition>, Failure> {
    if tokens.len() == 1 && tokens[0].eq_ignore_ascii_case("all") {
        return Ok(Condition::ALL.to_vec());
    }
    tokens
        .iter()
        .map(|t| Condition::from_str(t).map_err(|e| Failure::config(e.to_string())))
        .collect()
}

fn parse_fractions(tokens: &[String]) -> Result<Vec<f64>, Failure> {
    if tokens.len() == 1 && tokens[0].eq_ignore_ascii_case("all") {
        return Ok(fraction_grid());
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Failure::config(format!("bad fraction {t:?}: {e}")))
        })
        .collect()
}

fn load_mask_store(
    masks_dir: Option<&PathBuf>,
    conditions: &[Condition],
    target: &str,
    data_dir: &Path,
) -> Result<MaskStore, Failure> {
    let mut store = MaskStore::new();
    let needed: std::collections::BTreeSet<GroupMode> = conditions
        .iter()
        .filter_map(|c| c.dr_mask_source())
        .collect();
    if needed.is_empty() {
        return Ok(store);
    }
    let dir = masks_dir.ok_or_else(|| {
        Failure::missing("reduction conditions need --masks pointing at cached mask files")
    })?;
    for mode in needed {
        let path = dir.join(mask_file_name(Some(mode.id()), target));
        if !path.exists() {
            return Err(Failure::missing(format!(
                "no cached mask at {}; generate it with: psodr masks --data {} --target {} --group-mode {} --out {}",
                path.display(),
                data_dir.display(),
                target,
                mode.id(),
                path.display(),
            )));
        }
        let file: MaskFile = read_json_config(&path).map_err(|f| Failure {
            code: 3,
            message: f.message,
        })?;
        store.insert(target, mode, file.com_mask);
    }
    Ok(store)
}

fn cmd_experiment(args: &ExperimentArgs, seed_override: Option<u64>) -> CmdResult {
    let cfg = load_tool_config(args.config.as_ref(), seed_override)?;
    let roster = load_roster(&args.data)?;
    let target = find_subject(&roster, &args.target)?.clone();

    let conditions = parse_conditions(&args.conditions)?;
    let fractions = parse_fractions(&args.fractions)?;

    let needs_bsub = conditions.iter().any(|c| {
        c.group_mode() == Some(GroupMode::Best) || c.dr_mask_source() == Some(GroupMode::Best)
    });
    if needs_bsub && cfg.bsub_table.is_none() {
        return Err(Failure::config(
            "conditions using the best combination need a bsub_table in the config \
             (psodr bsub can compute one)",
        ));
    }

    let store = load_mask_store(args.masks.as_ref(), &conditions, &args.target, &args.data)?;

    let experiment_cfg = ExperimentConfig {
        reps: args.reps.unwrap_or(cfg.reps),
        folds: args.folds.unwrap_or(cfg.folds),
        seed: cfg.seed,
        train: cfg.train.clone(),
    };
    eprintln!(
        "running {} conditions x {} fractions on target {} ({} reps x {} folds)",
        conditions.len(),
        fractions.len(),
        target.subject_id,
        experiment_cfg.reps,
        experiment_cfg.folds,
    );

    let started = std::time::Instant::now();
    let report = run_sweep(
        &target,
        &roster,
        &conditions,
        &fractions,
        &experiment_cfg,
        &store,
        cfg.bsub_table.as_ref(),
    )?;
    eprintln!(
        "swept {} cells in {:.1}s",
        report.rows.len(),
        started.elapsed().as_secs_f64()
    );

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", args.out.display())))?;
    let mut outputs: BTreeMap<String, String> = BTreeMap::new();
    outputs.insert("report.csv".into(), report.rows_csv());
    outputs.insert("runstats.csv".into(), report.stats_csv());
    outputs.insert(
        "report.json".into(),
        serde_json::to_string_pretty(&report).map_err(CoreError::from)?,
    );
    for condition in &conditions {
        outputs.insert(
            format!("plot_{}.csv", condition.code()),
            report.plot_csv(condition.code()),
        );
    }
    for (name, contents) in outputs {
        let path = args.out.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("warning: could not set --jobs: {e}");
        }
    }

    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args, cli.seed),
        Command::Masks(args) => cmd_masks(args, cli.seed),
        Command::Bsub(args) => cmd_bsub(args, cli.seed),
        Command::Experiment(args) => cmd_experiment(args, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
