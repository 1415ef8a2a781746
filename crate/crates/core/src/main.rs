use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use citl::dfc::{build_dfc_set, load_cohort, write_cohort, write_series, SubjectTimeSeries};
use citl::erg::conversion_engine;
use citl::nn::Rng;
use citl::pipeline::{
    load_report, run_citl, save_report, synth_cohorts, train_source_model, AblationMode, RunConfig, SyntheticCohortSpec,
};
use citl::transfer::{generate_pseudo_labels, load_checkpoint, save_checkpoint};
use citl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "citl",
    version,
    about = "Transfer learning on dynamic functional connectivity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted source and target cohort under `<out>/source` and `<out>/target`.
    Synth {
        /// JSON synthetic cohort spec; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subject window counts and zero-variance warnings as CSV.
    Dfc {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and freeze the source classifier.
    TrainTransfer {
        #[arg(long)]
        source: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subject pseudo-label set sizes as CSV.
    PseudoLabel {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline with cross-validation on the target cohort.
    Run {
        #[arg(long)]
        cohort_a: PathBuf,
        #[arg(long)]
        cohort_b: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::A2b)]
        direction: Direction,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AblationMode>,
        /// Output directory; receives `report.json`.
        #[arg(long)]
        out: PathBuf,
        /// Also write each subject's optimisation matrix to `<out>/optimization/`.
        #[arg(long)]
        dump_optimization: bool,
    },
    /// Print a saved report.
    Report { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    /// Cohort A is the source, cohort B the target.
    A2b,
    /// Cohort B is the source, cohort A the target.
    B2a,
}

fn parse_mode(s: &str) -> std::result::Result<AblationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, seed, out } => {
            let spec = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => SyntheticCohortSpec::default(),
            };
            let cohorts = synth_cohorts(&spec, &mut Rng::new(seed))?;
            let a = write_cohort(&out.join("source"), &cohorts.source)?;
            let b = write_cohort(&out.join("target"), &cohorts.target)?;
            println!("{}\n{}", a.display(), b.display());
        }
        Command::Dfc { manifest, common, out } => {
            let cfg = common.load()?;
            let mut csv = String::from("subject_id,label,time_points,windows,zero_variance_windows\n");
            for s in load_cohort(&manifest)? {
                let set = build_dfc_set(&s, &cfg.window)?;
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.subject_id,
                    s.label.index(),
                    s.time_points(),
                    set.matrices.len(),
                    set.warnings.len()
                ));
            }
            output(out.as_deref(), &csv)?;
        }
        Command::TrainTransfer { source, common, out } => {
            let cfg = common.load()?;
            let cohort = load_cohort(&source)?;
            let (model, warnings) = train_source_model(&cfg, &cohort, &source.display().to_string())?;
            warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            save_checkpoint(&model, &out)?;
            println!("validation accuracy {:.4}", model.best_val_acc());
        }
        Command::PseudoLabel {
            checkpoint,
            target,
            common,
            out,
        } => {
            let cfg = common.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let mut csv = String::from("subject_id,label,normal,disease,chosen\n");
            for s in load_cohort(&target)? {
                let pl = generate_pseudo_labels(&model, &build_dfc_set(&s, &cfg.window)?)?;
                let recon = conversion_engine(&pl)?;
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.subject_id,
                    s.label.index(),
                    pl.normal_set.len(),
                    pl.disease_set.len(),
                    recon.chosen_set.as_str()
                ));
            }
            output(out.as_deref(), &csv)?;
        }
        Command::Run {
            cohort_a,
            cohort_b,
            direction,
            common,
            mode,
            out,
            dump_optimization,
        } => {
            let mut cfg = common.load()?;
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            let a = load_cohort(&cohort_a)?;
            let b = load_cohort(&cohort_b)?;
            let (source, target): (&[SubjectTimeSeries], &[SubjectTimeSeries]) = match direction {
                Direction::A2b => (&a, &b),
                Direction::B2a => (&b, &a),
            };
            let result = run_citl(&cfg, source, target)?;
            fs::create_dir_all(&out)?;
            save_report(&result.report, &out.join("report.json"))?;
            if dump_optimization {
                let dir = out.join("optimization");
                fs::create_dir_all(&dir)?;
                for fc in &result.optimization_fcs {
                    write_series(&dir.join(format!("{}.csv", fc.subject_id)), &fc.matrix)?;
                }
            }
            print!("{}", result.report.summary());
        }
        Command::Report { path } => {
            print!("{}", load_report(&path)?.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
