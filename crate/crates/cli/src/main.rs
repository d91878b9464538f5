use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use vnet_core::checks::{self, CheckGroup};
use vnet_core::config::{Precision, TrainConfig};
use vnet_core::dsp::melfile::decode_mel;
use vnet_core::dsp::pgm::render_log_spectrogram;
use vnet_core::dsp::wav::{load_wav, write_wav};
use vnet_core::dsp::{log_mel, MelFilterbank, Spectrogram, StftParams};
use vnet_core::generator::Generator;
use vnet_core::losses::LossReport;
use vnet_core::metrics::corpus_eval;
use vnet_core::trainer::{Checkpoint, Dataset, Trainer};
use vnet_core::{Result, VnetError};
use vnet_tensor::Element;

/// File the training loss log is written to, inside `train.out_dir`.
const LOG_FILE: &str = "train.tsv";

#[derive(Parser)]
#[command(name = "vnet", version, about = "Mel-spectrogram GAN vocoder: train, synthesize, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key = value config file
    Train {
        /// Config file of `key = value` lines
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory to continue from
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override a config key (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Generate a waveform from a WAV file or a VMEL mel file
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare generated audio against references, file by file
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// Report path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks in 64-bit mode
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ModuleArg::All)]
        module: ModuleArg,
        /// Adds a check of an op with a wrong backward rule
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Render the log-mel spectrogram of a WAV file as a PGM image
    SpecDump {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModuleArg {
    All,
    Ops,
    Generator,
    Mtd,
    Mpd,
    Losses,
}

impl ModuleArg {
    fn groups(self) -> Vec<CheckGroup> {
        match self {
            ModuleArg::All => CheckGroup::ALL.to_vec(),
            ModuleArg::Ops => vec![CheckGroup::Ops],
            ModuleArg::Generator => vec![CheckGroup::Generator],
            ModuleArg::Mtd => vec![CheckGroup::Mtd],
            ModuleArg::Mpd => vec![CheckGroup::Mpd],
            ModuleArg::Losses => vec![CheckGroup::Losses],
        }
    }
}

/// 2 for anything the caller can fix in their inputs, 1 for runtime faults.
fn exit_code(e: &VnetError) -> u8 {
    match e {
        VnetError::Config { .. }
        | VnetError::Input(_)
        | VnetError::Format { .. }
        | VnetError::Integrity(_)
        | VnetError::ShapeDiff(_) => 2,
        VnetError::Io { .. } | VnetError::NonFinite(_) | VnetError::Tensor(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            resume,
            overrides,
        } => train_command(&config, resume.as_deref(), &overrides).map(|()| ExitCode::SUCCESS),
        Command::Synth { ckpt, input, out } => synth(&ckpt, &input, &out).map(|()| ExitCode::SUCCESS),
        Command::Eval { real, gen, out } => eval(&real, &gen, out.as_deref()).map(|()| ExitCode::SUCCESS),
        Command::Gradcheck { module, inject_fault } => gradcheck(module, inject_fault),
        Command::SpecDump { input, out } => spec_dump(&input, &out).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(exit_code(&e))
    })
}

fn train_command(config: &Path, resume: Option<&Path>, overrides: &[String]) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| VnetError::Input(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train::<f32>(cfg, resume),
        Precision::F64 => train::<f64>(cfg, resume),
    }
}

fn log_row(step: u64, r: &LossReport) -> String {
    let mut row = step.to_string();
    for v in r.values() {
        row.push('\t');
        row.push_str(&v.to_string());
    }
    row
}

fn checkpoint_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("ckpt-{step:07}"))
}

fn train<F: Element>(cfg: TrainConfig, resume: Option<&Path>) -> Result<()> {
    let data = Dataset::scan(&cfg.data_root)?;
    let mut trainer = Trainer::<F>::new(cfg.clone())?;
    if let Some(dir) = resume {
        let ck = Checkpoint::load(dir)?;
        if ck.dtype != F::DTYPE {
            return Err(VnetError::Input(format!(
                "checkpoint {} holds {:?} values but train.precision selects {:?}",
                dir.display(),
                ck.dtype,
                F::DTYPE
            )));
        }
        trainer.restore(&ck)?;
    }
    let out_dir = &cfg.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| VnetError::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| VnetError::io(&log_path, e))?;
    let fresh = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut log = BufWriter::new(file);
    let io = |e| VnetError::io(&log_path, e);
    if fresh {
        writeln!(log, "step\t{}", LossReport::FIELDS.join("\t")).map_err(io)?;
    }

    let start_step = trainer.step;
    let started = Instant::now();
    let mut saved_at = None;
    trainer.run(&data, cfg.steps, |t, report| {
        if t.step % cfg.log_interval == 0 {
            writeln!(log, "{}", log_row(t.step, report)).map_err(io)?;
            log.flush().map_err(io)?;
        }
        if cfg.checkpoint_interval > 0 && t.step % cfg.checkpoint_interval == 0 {
            t.checkpoint().save(&checkpoint_dir(out_dir, t.step))?;
            saved_at = Some(t.step);
        }
        Ok(())
    })?;
    log.flush().map_err(io)?;
    if saved_at != Some(trainer.step) {
        trainer.checkpoint().save(&checkpoint_dir(out_dir, trainer.step))?;
    }
    let steps = trainer.step - start_step;
    let secs = started.elapsed().as_secs_f64();
    let samples = steps as f64 * (cfg.batch_size * cfg.segment_length) as f64;
    eprintln!(
        "trained {steps} steps in {secs:.1} s ({:.0} samples/s); checkpoint {}",
        samples / secs.max(1e-9),
        checkpoint_dir(out_dir, trainer.step).display()
    );
    Ok(())
}

/// Log-mel of a WAV file, or the contents of a VMEL file.
fn read_mel(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path).map_err(|e| VnetError::io(path, e))?;
    if bytes.starts_with(b"RIFF") {
        let clip = load_wav(path)?;
        log_mel(&clip.samples, StftParams::MEL, &MelFilterbank::standard())
    } else if bytes.starts_with(b"VMEL") {
        decode_mel(&bytes)
    } else {
        Err(VnetError::Input(format!(
            "{}: not a RIFF/WAVE or VMEL file",
            path.display()
        )))
    }
}

fn synth(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let generator = Generator::<f64>::from_checkpoint(&ck)?;
    let mel = read_mel(input)?;
    let started = Instant::now();
    let audio = generator.generate(&mel)?;
    let secs = started.elapsed().as_secs_f64();
    write_wav(out, &audio)?;
    eprintln!(
        "{} frames -> {} samples ({:.3} s of audio, {:.0} samples/s)",
        mel.frames,
        audio.len(),
        audio.duration_secs(),
        audio.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn eval(real: &Path, gen: &Path, out: Option<&Path>) -> Result<()> {
    let report = corpus_eval(real, gen)?;
    let text = report.to_tsv();
    match out {
        Some(p) => fs::write(p, text).map_err(|e| VnetError::io(p, e))?,
        None => print!("{text}"),
    }
    if !report.unpaired.is_empty() {
        eprintln!("{} unpaired file(s) skipped", report.unpaired.len());
    }
    Ok(())
}

fn gradcheck(module: ModuleArg, inject_fault: bool) -> Result<ExitCode> {
    let started = Instant::now();
    let mut results = checks::run(&module.groups())?;
    if inject_fault {
        results.push(checks::corrupted_check()?);
    }
    println!("group\tcheck\tmax_rel_error\tcoords\tstatus");
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    eprintln!(
        "{} checks, {failed} above {:e}, {:.1} s",
        results.len(),
        checks::TOLERANCE,
        started.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn spec_dump(input: &Path, out: &Path) -> Result<()> {
    let clip = load_wav(input)?;
    let mel = log_mel(&clip.samples, StftParams::MEL, &MelFilterbank::standard())?;
    fs::write(out, render_log_spectrogram(&mel)).map_err(|e| VnetError::io(out, e))
}
