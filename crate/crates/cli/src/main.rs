use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;

#[derive(Parser)]
#[command(name = "polarhmm", version, about = "Polar compression and channel coding for hidden Markov sources")]
struct Cli {
    /// Worker threads for trials and columns; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write or inspect a model file.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Draw an m x m block from a model, row-major.
    Sample(SampleArgs),
    /// Estimate conditional entropies and write selection sets.
    Preprocess(PreprocessArgs),
    /// Compress a block with given selection sets.
    Compress(CompressArgs),
    /// Decompress a payload.
    Decompress(DecompressArgs),
    /// Linear channel code built from the selection sets.
    #[command(subcommand)]
    Channel(ChannelCommand),
    /// Sweep t and epsilon and write a CSV of rates and failures.
    Experiment(ExperimentArgs),
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Memoryless source.
    Iid {
        #[arg(long, default_value_t = 2)]
        q: u32,
        /// P(1) for a binary source.
        #[arg(long, conflicts_with = "probs")]
        p1: Option<f64>,
        /// Comma-separated symbol probabilities.
        #[arg(long, value_delimiter = ',')]
        probs: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-state burst-noise source.
    GilbertElliott {
        #[arg(long)]
        delta: f64,
        /// Noisy -> Nice switching probability.
        #[arg(long)]
        p: f64,
        /// Nice -> Noisy switching probability.
        #[arg(long = "q-switch")]
        q_switch: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learning-parity-with-noise source for secret `a`.
    Lpn {
        /// Secret as a bit string, e.g. 101.
        #[arg(long)]
        a: String,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary of a model file.
    Info {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args, Clone)]
struct KernelArgs {
    /// Kernel size; the default kernel is the all-ones upper-triangular matrix.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Explicit kernel, rows separated by ';', entries by ',' (e.g. "1,1;0,1").
    #[arg(long)]
    kernel: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: u32,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: u32,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_SAMPLES)]
    samples: usize,
    /// Defaults to max(1/n^3, 4 gamma).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_SUPPORT_CAP)]
    support_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Select every coordinate instead of estimating entropies.
    #[arg(long)]
    full: bool,
    /// Also write per-coordinate entropy estimates as CSV.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    sets: PathBuf,
    /// Optional model file; its hash must match the sets.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    input: PathBuf,
    /// Append a CRC-32 of the block so decompression can verify itself.
    #[arg(long)]
    crc: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sets: PathBuf,
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ChannelCommand {
    /// Encode a message file (or a random message) into a codeword block.
    Encode {
        #[arg(long)]
        sets: PathBuf,
        #[arg(long)]
        kernel: Option<String>,
        /// Message symbols; when absent a uniform message is drawn with --seed.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the drawn message.
        #[arg(long)]
        message_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add source noise to a codeword block.
    Transmit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the message from a received block.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sets: PathBuf,
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long)]
        input: PathBuf,
        /// Also write the noise estimate.
        #[arg(long)]
        noise_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated tensor powers.
    #[arg(long, value_delimiter = ',', required = true)]
    t: Vec<u32>,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Comma-separated epsilons.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    eps: Vec<f64>,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_SAMPLES)]
    samples: usize,
    /// Defaults to max(1/n^3, 4 gamma) for each n.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = polarhmm::preprocess::DEFAULT_SUPPORT_CAP)]
    support_cap: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Blocks used for the entropy-rate estimate.
    #[arg(long, default_value_t = 20)]
    entropy_trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write each row's selection sets here.
    #[arg(long)]
    sets_dir: Option<PathBuf>,
    /// Write 0 for wall_time_ms so the CSV is reproducible byte for byte.
    #[arg(long)]
    omit_timing: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // exit code 2 is reserved for decode failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
