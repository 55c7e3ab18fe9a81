use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regada::config::{apply_override, merge, DataPaths, TrainConfig};
use regada::diagnostics::{gradcheck_suite, TOLERANCE};
use regada::eval::{evaluate, priors_baseline};
use regada::io::{parse_manifest_records, resolve_samples, SplitFile, Vocabulary};
use regada::split::{generate_split, validate_split};
use regada::synth::{SynthConfig, Synthetic};
use regada::train::{run_ablation, save_metrics, AblationAxis, Checkpoint, Trainer};
use regada::{Error, Result};
use serde_json::Value;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (config schema v1, tensor format RGDF v1, checkpoint format RGDC v1, f64 compute)"
);

/// Adverb retrieval with residually gated compositions.
#[derive(Parser, Debug)]
#[command(name = "regada", version = VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model (or an ablation grid) and write checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test side of a split.
    Eval(EvalArgs),
    /// Generate or validate an unseen-composition split.
    Splitgen(SplitgenArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Finite-difference gradient checks of every op and the full loss.
    Gradcheck(GradcheckArgs),
    /// Score the test side with the training-free priors baseline.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Named preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// JSON file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set loss.margin=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::resolve(
            self.preset.as_deref().unwrap_or("default"),
            self.config.as_deref(),
            &self.overrides,
        )
    }
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Directory holding manifest.jsonl, vocab.json, embeddings.rgdf and
    /// split.json.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, paths: &mut DataPaths) {
        if let Some(d) = &self.data_dir {
            paths.manifest = Some(d.join("manifest.jsonl"));
            paths.vocab = Some(d.join("vocab.json"));
            paths.embeddings = Some(d.join("embeddings.rgdf"));
            paths.split = Some(d.join("split.json"));
        }
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut paths.manifest, &self.manifest);
        set(&mut paths.vocab, &self.vocab);
        set(&mut paths.embeddings, &self.embeddings);
        set(&mut paths.split, &self.split);
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for config.json, checkpoint.rgdc and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this epoch; the checkpoint then holds the state needed by
    /// `--resume`.
    #[arg(long)]
    until: Option<usize>,
    /// Run an ablation grid instead: text-input, losses or gate-components.
    #[arg(long, conflicts_with = "resume")]
    ablation: Option<AblationAxis>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the metric report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitgenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Seed of the assignment; defaults to the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the generated split.
    #[arg(long, required_unless_present = "validate")]
    out: Option<PathBuf>,
    /// Validate this split file instead of generating one.
    #[arg(long, conflicts_with = "out")]
    validate: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// `reference` or `tiny`.
    #[arg(long, default_value = "reference")]
    preset: String,
    /// JSON file merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Random points per check.
    #[arg(long, default_value_t = 20)]
    points: u64,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Splitgen(a) => splitgen(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Baseline(a) => baseline(a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = a.config.train_config()?;
    a.data.apply(&mut cfg.data);
    let (data, train_idx, test_idx) = regada::train::load_training_data(&cfg.data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    write_text(&a.out.join("config.json"), &cfg.to_json_pretty())?;

    if let Some(axis) = a.ablation {
        let table = run_ablation(&cfg, axis, &data, &train_idx, &test_idx)?;
        for row in &table.rows {
            println!(
                "{:<40} mAP_W {:.4}  mAP_M {:.4}  Acc_A {}",
                row.label,
                row.best.map_w.value,
                row.best.map_m.value,
                row.best.acc_a.map_or("n/a".into(), |b| format!("{:.4}", b.value))
            );
        }
        write_text(&a.out.join("ablation.json"), &to_json(&table))?;
        return Ok(ExitCode::SUCCESS);
    }

    let ckpt_path = a.out.join("checkpoint.rgdc");
    let trainer = if a.resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        Trainer::resume(&cfg, ckpt, &data, &train_idx, &test_idx)?
    } else {
        Trainer::new(&cfg, &data, &train_idx, &test_idx)?
    };
    eprintln!(
        "training {} samples, evaluating on {}, from epoch {} to {}",
        train_idx.len(),
        test_idx.len(),
        trainer.epoch(),
        cfg.epochs
    );
    let mut trainer = trainer;
    trainer.run_until(a.until.unwrap_or(cfg.epochs), Some(&ckpt_path))?;
    let ckpt = trainer.checkpoint();
    ckpt.save(&ckpt_path)?;
    let report = ckpt.meta.report.clone();
    if trainer.epoch() < cfg.epochs {
        eprintln!("stopped at epoch {}; continue with --resume", trainer.epoch());
        return Ok(ExitCode::SUCCESS);
    }
    save_metrics(&report, &a.out.join("report.json"))?;
    if let Some(b) = report.best {
        println!(
            "best mAP_W {:.4} (epoch {})  mAP_M {:.4} (epoch {})  Acc_A {}",
            b.map_w.value,
            b.map_w.epoch,
            b.map_m.value,
            b.map_m.epoch,
            b.acc_a
                .map_or("n/a".into(), |x| format!("{:.4} (epoch {})", x.value, x.epoch))
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn overlay(base: &mut DataPaths, over: &DataPaths) {
    for (slot, v) in [
        (&mut base.manifest, &over.manifest),
        (&mut base.vocab, &over.vocab),
        (&mut base.embeddings, &over.embeddings),
        (&mut base.split, &over.split),
    ] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut paths = ckpt.meta.config.data.clone();
    overlay(&mut paths, &a.config.train_config()?.data);
    a.data.apply(&mut paths);
    let (data, _, test_idx) = regada::train::load_training_data(&paths)?;
    regada::train::check_compatible(&ckpt.meta.config, &data)?;
    let report = evaluate(&ckpt.model, &data, &test_idx)?;
    let text = to_json(&report);
    print!("{text}");
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn splitgen(a: SplitgenArgs) -> Result<ExitCode> {
    let cfg = a.config.train_config()?;
    let mut paths = cfg.data.clone();
    a.data.apply(&mut paths);
    let need =
        |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| Error::Config(format!("--{what} is required")));
    let manifest = need(&paths.manifest, "manifest")?;
    let vocab = Vocabulary::read(&need(&paths.vocab, "vocab")?)?;
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::Io {
        path: manifest.clone(),
        source: e,
    })?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let samples = resolve_samples(&parse_manifest_records(&text)?, &vocab, root)?;

    if let Some(p) = &a.validate {
        let split = SplitFile::read(p)?;
        let report = validate_split(&split, &samples, &vocab)?;
        print!("{}", to_json(&report));
        return Ok(if report.passed() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        });
    }
    let (split, stats) = generate_split(&samples, &vocab, a.seed.unwrap_or(cfg.seed))?;
    split.write(a.out.as_deref().expect("clap enforces --out"))?;
    print!("{}", to_json(&stats));
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let base = match a.preset.as_str() {
        "reference" => SynthConfig::reference(),
        "tiny" => SynthConfig::tiny(),
        other => {
            return Err(Error::Config(format!(
                "unknown synthetic preset {other:?} (reference, tiny)"
            )));
        }
    };
    let mut v = serde_json::to_value(base).expect("serialisable");
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge(&mut v, &patch);
    }
    for o in &a.overrides {
        apply_override(&mut v, o)?;
    }
    let cfg: SynthConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    let syn = Synthetic::generate(&cfg)?;
    syn.write_to(&a.out)?;
    println!(
        "wrote {} train and {} test samples to {}",
        syn.train.len(),
        syn.test.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let cfg = a.config.train_config()?;
    if a.points == 0 {
        return Err(Error::Config("--points must be positive".into()));
    }
    let mut ok = true;
    for r in gradcheck_suite(a.points, cfg.seed)? {
        let pass = r.max_rel_error <= TOLERANCE;
        ok &= pass;
        println!(
            "{} {:<40} points {:>3}  max rel error {:.2e}",
            if pass { "PASS" } else { "FAIL" },
            r.name,
            r.points,
            r.max_rel_error
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn baseline(a: BaselineArgs) -> Result<ExitCode> {
    let mut cfg = a.config.train_config()?;
    a.data.apply(&mut cfg.data);
    let (data, train_idx, test_idx) = regada::train::load_training_data(&cfg.data)?;
    let report = priors_baseline(&data, &train_idx, &test_idx)?;
    let text = to_json(&report);
    print!("{text}");
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}
