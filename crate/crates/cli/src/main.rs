use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use depsentry::config::{Config, Overrides, VcsMode};
use depsentry::detect::Format;
use depsentry::pipeline::{cmd_check, cmd_init, cmd_report, cmd_verify, CheckOptions, InitOptions, PipelineError};

/// Finds missing and redundant dependencies in GNU Make builds.
#[derive(Debug, Parser)]
#[command(name = "depsentry", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Human,
    Machine,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Human => Format::Human,
            FormatArg::Machine => Format::Machine,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Project root (directory holding the top-level makefile).
    #[arg(long, default_value = ".")]
    project: PathBuf,
    /// State directory; defaults to $DEPSENTRY_STORE, then <project>/.depsentry.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Extra argument for every make invocation. Repeatable.
    #[arg(long = "make-arg", allow_hyphen_values = true)]
    make_args: Vec<String>,
    /// Read recorded traces from this directory instead of tracing make.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Trace a clean build and record the starting state.
    Init {
        #[command(flatten)]
        common: Common,
        /// Label for the current tree (defaults to git HEAD).
        #[arg(long)]
        commit: Option<String>,
        /// Replace an existing store.
        #[arg(long)]
        force: bool,
        #[arg(long, value_enum, default_value = "human")]
        format: FormatArg,
    },
    /// Analyze one commit on top of the stored state.
    Check {
        #[command(flatten)]
        common: Common,
        /// Commit to check out and analyze, or the label for --diff / stdin.
        #[arg(long)]
        commit: Option<String>,
        /// Diff to apply (skipped if already applied). Without --commit or
        /// --diff the diff is read from stdin and the tree is taken as is.
        #[arg(long)]
        diff: Option<PathBuf>,
        /// Do not build when the commit touches no source, header or makefile.
        #[arg(long)]
        skip_irrelevant: bool,
        #[arg(long, value_enum, default_value = "human")]
        format: FormatArg,
    },
    /// Print the last report again.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "human")]
        format: FormatArg,
    },
    /// Confirm or reject the findings of a machine report by experiment.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Machine report to verify; defaults to the last stored report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn config(common: &Common, vcs_mode: Option<VcsMode>) -> Result<Config, PipelineError> {
    let overrides = Overrides {
        make_args: (!common.make_args.is_empty()).then(|| common.make_args.clone()),
        store: common.store.clone(),
        replay: common.replay.clone(),
        vcs_mode,
    };
    Ok(Config::load(&common.project, overrides)?)
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let code = match cli.command {
        Cmd::Init { common, commit, force, format } => {
            let c = config(&common, None)?;
            cmd_init(&c, &InitOptions { commit, force }, format.into(), &mut out)?
        }
        Cmd::Check { common, commit, diff, skip_irrelevant, format } => {
            let mode = match (&commit, diff) {
                (_, Some(d)) => VcsMode::DiffFile(d),
                (Some(c), None) => VcsMode::GitCommit(c.clone()),
                (None, None) => VcsMode::PreApplied,
            };
            let c = config(&common, Some(mode))?;
            let opts = CheckOptions { commit, skip_irrelevant };
            cmd_check(&c, &opts, format.into(), &mut io::stdin().lock(), &mut out)?
        }
        Cmd::Report { common, format } => cmd_report(&config(&common, None)?, format.into(), &mut out)?,
        Cmd::Verify { common, report } => cmd_verify(&config(&common, None)?, report.as_deref(), &mut out)?,
    };
    let _ = out.flush();
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("depsentry: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
