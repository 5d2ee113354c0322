use clap::{Args, Parser, Subcommand};
use floodseg_cli::commands;
use floodseg_cli::runspec::RunSpec;
use floodseg_core::CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Flood segmentation pipeline: synthetic corpora, weak labels, two-stage
/// distillation training and evaluation.
#[derive(Parser)]
#[command(name = "floodseg", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// key=value config file; relative paths in it resolve against its parent
    /// directory.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override or add a single key, e.g. --set seed=7. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker-thread cap; the pipeline currently runs single-threaded.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

macro_rules! subcommands {
    ($(($variant:ident, $keys:path, $run:path, $about:literal)),+ $(,)?) => {
        #[derive(Subcommand)]
        enum Cmd {
            $(
                #[command(
                    about = $about,
                    after_help = format!("Accepted config keys:\n  {}", $keys().join(", "))
                )]
                $variant(Common),
            )+
        }

        impl Cmd {
            fn run(&self) -> anyhow::Result<()> {
                match self {
                    $(
                        Cmd::$variant(common) => {
                            let spec = RunSpec::load(common.config.as_deref(), &common.set)?;
                            $run(&spec)
                        }
                    )+
                }
            }
        }
    };
}

subcommands!(
    (Synth, commands::synth_keys, commands::cmd_synth,
        "Generate a synthetic scene corpus with a manifest"),
    (Weaklabel, commands::weaklabel_keys, commands::cmd_weaklabel,
        "Derive (optionally corrupted/improved) NDWI weak labels"),
    (Otsu, commands::otsu_keys, commands::cmd_otsu,
        "Otsu-threshold SAR baseline segmentation and report"),
    (Train, commands::train_keys, commands::cmd_train,
        "Supervised training on a labeled manifest"),
    (Teacher, commands::teacher_keys, commands::cmd_teacher,
        "Stage 1: train the stacked S1+S2 teacher"),
    (Distill, commands::distill_keys, commands::cmd_distill,
        "Stage 2: distill a SAR-only student from a frozen teacher"),
    (Eval, commands::eval_keys, commands::cmd_eval,
        "Evaluate a checkpoint: pooled IoU, ECE, report.csv"),
    (Render, commands::render_keys, commands::cmd_render,
        "Render a mask or probability raster to PNG"),
    (Gradcheck, commands::gradcheck_keys, commands::cmd_gradcheck,
        "Finite-difference verification of all gradients"),
);

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_) => 2,
                CoreError::Divergence { .. } => 4,
                CoreError::Contract(_) => 1,
                _ => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
