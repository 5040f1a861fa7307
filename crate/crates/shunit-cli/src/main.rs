//! `shunit` command line: train, translate, eval-cfid, gen-synthetic,
//! inspect.
//!
//! Exit codes: 0 success, 2 input/config error, 3 numerical abort,
//! 4 metric undefined.

use clap::{Parser, Subcommand};
use shunit::config::{PerceptualChoice, RunConfig};
use shunit::data::{generate_synthetic, load_pairs, save_image, save_sample, Domain};
use shunit::error::Error;
use shunit::metrics::cfid;
use shunit::networks::PerceptualExtractor;
use shunit::trainer::{load_checkpoint, run_training, Direction, TrainState};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shunit", version, about = "Style-harmonizing unpaired image translation")]
struct Cli {
    /// Directory all relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config; writes loss CSV, previews and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint (its embedded config wins).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Progress line every N iterations (0 = quiet).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Translate every (image, label) pair in a directory.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding images/ and labels/.
        #[arg(long)]
        input: PathBuf,
        /// x2y or y2x.
        #[arg(long)]
        direction: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Class-wise FID between two directories of (image, label) pairs.
    EvalCfid {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Run config supplying num_classes, extractor and thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file (one `class,distance` line per class plus `mean,..`).
        #[arg(long, default_value = "cfid_report.csv")]
        report: PathBuf,
    },
    /// Write the synthetic two-domain dataset described by the config.
    GenSynthetic {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print per-layer, per-class alphas and memory norms of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite { .. } => 3,
        Error::MetricUndefined(_) => 4,
        _ => 2,
    }
}

fn resolve(workdir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        workdir.join(path)
    }
}

fn dispatch(cli: Cli) -> shunit::Result<()> {
    let wd = cli.workdir;
    match cli.command {
        Command::Train {
            config,
            resume,
            log_every,
        } => cmd_train(&wd, &config, resume.as_deref(), log_every),
        Command::Translate {
            checkpoint,
            input,
            direction,
            output,
        } => cmd_translate(&wd, &checkpoint, &input, &direction, &output),
        Command::EvalCfid {
            generated,
            reference,
            config,
            report,
        } => cmd_eval_cfid(&wd, &generated, &reference, config.as_deref(), &report),
        Command::GenSynthetic { config } => cmd_gen_synthetic(&wd, &config),
        Command::Inspect { checkpoint } => cmd_inspect(&wd, &checkpoint),
    }
}

/// Rebase the config's own paths onto the workdir.
fn load_config(workdir: &Path, path: &Path) -> shunit::Result<RunConfig> {
    let mut run = RunConfig::from_file(&resolve(workdir, path))?;
    run.data_root = resolve(workdir, &run.data_root);
    run.out_dir = resolve(workdir, &run.out_dir);
    if let PerceptualChoice::File(p) = &run.perceptual {
        run.perceptual = PerceptualChoice::File(resolve(workdir, p));
    }
    Ok(run)
}

fn cmd_train(
    workdir: &Path,
    config: &Path,
    resume: Option<&Path>,
    log_every: u64,
) -> shunit::Result<()> {
    let mut state = match resume {
        Some(ckpt) => {
            let mut st = load_checkpoint(&resolve(workdir, ckpt))?;
            st.run.data_root = resolve(workdir, &st.run.data_root);
            st.run.out_dir = resolve(workdir, &st.run.out_dir);
            println!("resumed at iteration {}", st.iteration);
            st
        }
        None => TrainState::init(&load_config(workdir, config)?)?,
    };
    let data_x = load_pairs(&state.run.data_root.join("x"), Domain::X, state.run.num_classes)?;
    let data_y = load_pairs(&state.run.data_root.join("y"), Domain::Y, state.run.num_classes)?;
    println!(
        "training on {} x-samples / {} y-samples for {} iterations",
        data_x.len(),
        data_y.len(),
        state.run.iterations
    );
    let mut log = |iter: u64, report: &shunit::losses::LossReport| {
        if log_every > 0 && iter % log_every == 0 {
            println!(
                "iter {iter}: gen {:.4} (self {:.4} cycle {:.4} adv {:.4} content {:.4} style {:.4}) disc {:.4}",
                report.gen_total,
                report.self_recon,
                report.cycle,
                report.adversarial,
                report.content,
                report.style,
                report.disc
            );
        }
    };
    run_training(&mut state, &data_x, &data_y, Some(&mut log))?;
    println!(
        "done; checkpoint at {}",
        state.run.out_dir.join("checkpoint.bin").display()
    );
    Ok(())
}

fn cmd_translate(
    workdir: &Path,
    checkpoint: &Path,
    input: &Path,
    direction: &str,
    output: &Path,
) -> shunit::Result<()> {
    let direction = Direction::parse(direction)?;
    let state = load_checkpoint(&resolve(workdir, checkpoint))?;
    let samples = load_pairs(
        &resolve(workdir, input),
        direction.source(),
        state.run.num_classes,
    )?;
    let out_dir = resolve(workdir, output);
    std::fs::create_dir_all(&out_dir)?;
    for sample in &samples {
        let translated = state.translate(sample, direction)?;
        save_image(&translated, &out_dir.join(format!("{}.png", sample.name)))?;
    }
    println!("translated {} images into {}", samples.len(), out_dir.display());
    Ok(())
}

fn cmd_eval_cfid(
    workdir: &Path,
    generated: &Path,
    reference: &Path,
    config: Option<&Path>,
    report_path: &Path,
) -> shunit::Result<()> {
    let run = match config {
        Some(path) => load_config(workdir, path)?,
        None => RunConfig::default(),
    };
    let extractor = match &run.perceptual {
        PerceptualChoice::FrozenRandom => PerceptualExtractor::frozen_random(run.perc_seed),
        PerceptualChoice::File(p) => PerceptualExtractor::from_file(p)?,
    };
    let load_set = |dir: &Path| -> shunit::Result<Vec<_>> {
        let samples = load_pairs(&resolve(workdir, dir), Domain::X, run.num_classes)?;
        if samples.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no samples under {}",
                dir.display()
            )));
        }
        Ok(samples.into_iter().map(|s| (s.image, s.mask)).collect())
    };
    let gen_set = load_set(generated)?;
    let ref_set = load_set(reference)?;
    let report = cfid(&gen_set, &ref_set, &extractor, run.cfid_eps, run.cfid_min_pixels)?;
    for (class, reason) in &report.skipped {
        println!("skipped class {class}: {reason}");
    }
    let out = resolve(workdir, report_path);
    std::fs::write(&out, report.to_report_lines())?;
    println!("cfid mean: {}", report.mean);
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_gen_synthetic(workdir: &Path, config: &Path) -> shunit::Result<()> {
    let run = load_config(workdir, config)?;
    let spec = run.synthetic_spec()?;
    for domain in [Domain::X, Domain::Y] {
        let samples = generate_synthetic(&spec, domain, run.synth_count)?;
        for sample in &samples {
            save_sample(&run.data_root, domain.as_str(), sample)?;
        }
        println!(
            "wrote {} samples to {}",
            samples.len(),
            run.data_root.join(domain.as_str()).display()
        );
    }
    Ok(())
}

fn cmd_inspect(workdir: &Path, checkpoint: &Path) -> shunit::Result<()> {
    let state = load_checkpoint(&resolve(workdir, checkpoint))?;
    println!("iteration: {}", state.iteration);
    println!("domain layer class alpha");
    for (domain, layer, alphas) in state.alpha_table()? {
        for (class, alpha) in alphas.iter().enumerate() {
            println!("{} shl{layer} {class} {alpha:.6}", domain.as_str());
        }
    }
    println!("bank keys_norm values_norm");
    for (domain, kn, vn) in state.memory_norms()? {
        println!("{} {kn:.6} {vn:.6}", domain.as_str());
    }
    Ok(())
}
