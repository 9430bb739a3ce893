//! Command-line front end: one binary, one subcommand per workflow.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. Every error is a
//! single `error[<kind>]: <reason>` line on standard error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::load_config;
use crate::datagen::{generate_dataset, ClassLabel, Dataset, DatasetOptions, DEFAULT_ARTICULATION};
use crate::error::{Error, IoContext, Result};
use crate::evaluation::{self, EvalOptions};
use crate::exec::Strategy;
use crate::imaging::{contact_sheet, ImageTensor};
use crate::inference::{infer_instance, infer_sample, load_model, StyleSource, Translator};
use crate::trainer;

pub const CONTACT_SHEET: &str = "contact_sheet.png";
const SHEET_COLUMNS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "upgan",
    version,
    about = "Unpaired pose-guided image translation"
)]
pub struct Cli {
    /// Log progress to standard error.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// Seed for data generation, training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural two-domain dataset.
    Datagen(DatagenArgs),
    /// Train all five networks.
    Train(TrainArgs),
    /// Generate images from a checkpoint.
    #[command(subcommand)]
    Infer(InferCommand),
    /// Compute every metric on a held-out procedural dataset.
    Eval(EvalArgs),
    /// SSIM nearest-neighbour audit of generated images against training images.
    NnAnalysis(NnArgs),
    /// Write a 2-D projection of the latent codes of the Y images.
    ProjectLatents(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_x: usize,
    #[arg(long)]
    pub n_y: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one config key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Drop the latent-consistency loss.
    #[arg(long)]
    pub no_lc: bool,
    /// Drop the supervised class loss.
    #[arg(long)]
    pub no_ls: bool,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// `--ref` and `--class` are accepted by both modes so that mixing them is
/// reported as a conflict rather than an unknown flag.
#[derive(Debug, Args)]
pub struct StyleArgs {
    /// Reference image whose style is copied.
    #[arg(long = "ref", conflicts_with = "class")]
    pub reference: Option<PathBuf>,
    /// Class label for conditional sampling.
    #[arg(long)]
    pub class: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum InferCommand {
    /// Copy the style of `--ref` onto `--pose`; writes one PNG.
    Instance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw `--n` samples of `--class` on `--pose`; writes numbered PNGs and a contact sheet.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid",
        Error::Usage(_) => "usage",
        Error::Io { .. } => "io",
        Error::Numeric(_) => "numeric",
        Error::Divergence { .. } => "divergence",
        Error::UnsupportedMetric(_) => "unsupported",
        Error::Image(_) => "image",
        Error::Tensor(_) => "tensor",
        Error::Format(_) => "format",
    }
}

fn one_line(s: &str) -> String {
    s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Run with the process's standard streams. `argv` excludes the program name.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    dispatch_to(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = std::iter::once(OsString::from("upgan")).chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{}", e.render());
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => {
                    let msg = e.render().to_string();
                    let first = msg
                        .lines()
                        .next()
                        .unwrap_or("")
                        .trim_start_matches("error: ");
                    let _ = writeln!(err, "error[usage]: {}", one_line(first));
                    2
                }
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(
                err,
                "error[{}]: {}",
                error_kind(&e),
                one_line(&e.to_string())
            );
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    // A second call in the same process (tests) keeps the first logger.
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Datagen(a) => {
            let opts = DatasetOptions {
                n_x: a.n_x,
                n_y: a.n_y,
                n_classes: a.classes,
                size: a.size,
                seed: seed.unwrap_or(0),
                articulation: DEFAULT_ARTICULATION,
            };
            let m = generate_dataset(&opts, &a.out, Strategy::default())?;
            let _ = writeln!(
                out,
                "wrote {} images to {}",
                m.entries.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::Train(a) => train(a, seed, out),
        Command::Infer(cmd) => infer(cmd, seed.unwrap_or(0)),
        Command::Eval(a) => {
            let model = load_model(&a.ckpt)?;
            let data = Dataset::load(&a.data, Strategy::default())?;
            let opts = EvalOptions {
                seed: seed.unwrap_or(0),
                ..EvalOptions::default()
            };
            let report = evaluation::evaluate(&model, &data, &opts)?;
            report.write(&a.report)?;
            let _ = write!(out, "{}", report.to_tsv());
            Ok(())
        }
        Command::NnAnalysis(a) => {
            let report = evaluation::nearest_neighbor_audit(
                &a.generated,
                &a.train,
                a.k,
                Strategy::default(),
            )?;
            fs::write(&a.out, report.to_tsv()).with_path(&a.out)?;
            let _ = writeln!(out, "max_ssim\t{:.6}", report.max_ssim);
            Ok(())
        }
        Command::ProjectLatents(a) => {
            let model = load_model(&a.ckpt)?;
            let data = Dataset::load(&a.data, Strategy::default())?;
            let points = evaluation::project_latents(&model, &data)?;
            evaluation::write_projection(&a.out, &points)
        }
    }
}

fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::Usage(format!("--set expects KEY=VALUE, got `{s}`"))),
    }
}

fn train(a: TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut overrides = a
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if a.no_lc {
        overrides.push(("ablate_lc".into(), "true".into()));
    }
    if a.no_ls {
        overrides.push(("ablate_ls".into(), "true".into()));
    }
    if let Some(s) = seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    let cfg = load_config(a.config.as_deref(), &overrides)?;
    let data = a
        .data
        .ok_or_else(|| Error::Usage("train requires --data".into()))?;
    let out_dir = a
        .out
        .ok_or_else(|| Error::Usage("train requires --out".into()))?;
    let outcome = trainer::train(&cfg, &data, &out_dir, a.resume.as_deref())?;
    if let Some(last) = outcome.reports.last() {
        let _ = writeln!(
            out,
            "final checkpoint {} (rec {:.4}, gan_g {:.4})",
            outcome.final_checkpoint.display(),
            last.parts.rec,
            last.parts.gan_g
        );
    }
    Ok(())
}

fn read_style(style: StyleArgs, n_classes: usize) -> Result<StyleSource> {
    let reference = style
        .reference
        .as_deref()
        .map(ImageTensor::load_png)
        .transpose()?;
    let label = style
        .class
        .map(|k| ClassLabel::new(k, n_classes))
        .transpose()?;
    StyleSource::from_parts(reference, label)
}

fn infer(cmd: InferCommand, seed: u64) -> Result<()> {
    match cmd {
        InferCommand::Instance {
            ckpt,
            pose,
            style,
            out,
        } => {
            if style.class.is_some() {
                return Err(Error::Usage(
                    "`infer instance` takes --ref; use `infer sample` for --class".into(),
                ));
            }
            let model = load_model(&ckpt)?;
            let pose = ImageTensor::load_png(&pose)?;
            let StyleSource::Reference(reference) = read_style(style, model.n_classes())? else {
                unreachable!("class was rejected above");
            };
            infer_instance(&model, &pose, &reference)?.save_png(&out)
        }
        InferCommand::Sample {
            ckpt,
            pose,
            style,
            n,
            out,
        } => {
            if style.reference.is_some() {
                return Err(Error::Usage(
                    "`infer sample` takes --class; use `infer instance` for --ref".into(),
                ));
            }
            let model = load_model(&ckpt)?;
            let pose = ImageTensor::load_png(&pose)?;
            let StyleSource::Label(label) = read_style(style, model.n_classes())? else {
                unreachable!("reference was rejected above");
            };
            let images = infer_sample(&model, &pose, &label, n, seed)?;
            write_samples(&out, &images)
        }
    }
}

fn write_samples(dir: &Path, images: &[ImageTensor]) -> Result<()> {
    fs::create_dir_all(dir).with_path(dir)?;
    for (i, im) in images.iter().enumerate() {
        im.save_png(&dir.join(format!("sample_{i:03}.png")))?;
    }
    contact_sheet(images, SHEET_COLUMNS)?.save_png(&dir.join(CONTACT_SHEET))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_captured(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = dispatch_to(args.iter().copied(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn help_exits_zero_on_stdout() {
        let (code, out, err) = run_captured(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("datagen") && out.contains("nn-analysis"));
        assert!(err.is_empty());
        for sub in ["datagen", "train", "eval", "nn-analysis", "project-latents"] {
            assert_eq!(run_captured(&[sub, "--help"]).0, 0, "{sub}");
        }
        assert_eq!(run_captured(&["infer", "sample", "--help"]).0, 0);
    }

    #[test]
    fn ref_and_class_conflict() {
        let (code, _, err) = run_captured(&[
            "infer", "instance", "--ckpt", "c", "--pose", "p.png", "--ref", "a.png", "--class",
            "1", "--out", "o.png",
        ]);
        assert_eq!(code, 2);
        assert_eq!(err.lines().count(), 1);
        assert!(
            err.starts_with("error[usage]:") && err.contains("--ref") && err.contains("--class"),
            "{err}"
        );
    }

    #[test]
    fn missing_config_is_an_io_error() {
        let (code, _, err) = run_captured(&["train", "--config", "/nonexistent/missing.cfg"]);
        assert_eq!(code, 1);
        assert_eq!(err.lines().count(), 1);
        assert!(
            err.starts_with("error[io]:") && err.contains("missing.cfg"),
            "{err}"
        );
    }

    #[test]
    fn unknown_flags_and_bad_overrides_are_usage_errors() {
        assert_eq!(run_captured(&["datagen", "--bogus"]).0, 2);
        assert_eq!(run_captured(&["train", "--set", "novalue"]).0, 2);
        let (code, _, err) = run_captured(&["train", "--set", "w_kl=-1"]);
        assert_eq!(code, 2);
        assert!(err.contains("w_kl"), "{err}");
        let (code, _, err) = run_captured(&["train"]);
        assert_eq!(code, 2);
        assert!(err.contains("--data"), "{err}");
    }

    #[test]
    fn wrong_mode_flag_is_a_usage_error() {
        let (code, _, err) = run_captured(&[
            "infer", "sample", "--ckpt", "c", "--pose", "p.png", "--ref", "a.png", "--out", "d",
        ]);
        assert_eq!(code, 2);
        assert!(err.contains("infer instance"), "{err}");
    }
}
