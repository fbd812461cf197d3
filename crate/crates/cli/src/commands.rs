use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use polarhmm::channel::{self, ChannelCode, ChannelError};
use polarhmm::codec::{self, BlockSampling, CodecError, SelectionSets};
use polarhmm::hmm::{self, HiddenMarkovSource};
use polarhmm::preprocess::{self, default_threshold, PreprocessParams, SetsFile};
use polarhmm::util::derive_seed;
use polarhmm::{FieldModulus, FieldVector, Symbol, TensorTransform};

use crate::files::{self, check_model, load_model, load_payload, load_sets, parse_kernel, transform_for};
use crate::{display, ChannelCommand, Command, CompressArgs, DecompressArgs, ExperimentArgs, ModelCommand, PreprocessArgs, SampleArgs};

#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Io(String),
    #[error("decode failure: {0}")]
    DecodeFailure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::DecodeFailure(_) => 2,
            _ => 1,
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Inference { .. } | CodecError::CrcMismatch => CliError::DecodeFailure(e.to_string()),
            CodecError::ModelMismatch { .. } => CliError::Model(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::DecodeFailure(inner) => CliError::DecodeFailure(inner.to_string()),
            ChannelError::Codec(inner) => inner.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<preprocess::PreprocessError> for CliError {
    fn from(e: preprocess::PreprocessError) -> Self {
        match e {
            preprocess::PreprocessError::Hmm(inner) => CliError::Model(inner.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<hmm::HmmError> for CliError {
    fn from(e: hmm::HmmError) -> Self {
        CliError::Model(e.to_string())
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Model(cmd) => model(cmd),
        Command::Sample(args) => sample(args),
        Command::Preprocess(args) => preprocess_cmd(args),
        Command::Compress(args) => compress(args),
        Command::Decompress(args) => decompress(args),
        Command::Channel(cmd) => channel_cmd(cmd),
        Command::Experiment(args) => experiment(args),
    }
}

fn emit_model(src: &HiddenMarkovSource, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = src.to_json_pretty();
    text.push('\n');
    match out {
        Some(p) => files::write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn model(cmd: ModelCommand) -> Result<(), CliError> {
    match cmd {
        ModelCommand::Iid { q, p1, probs, out } => {
            let src = match (p1, probs) {
                (Some(p), None) if q == 2 => hmm::build_bernoulli(p)?,
                (Some(_), None) => return Err(CliError::Usage("--p1 needs --q 2".into())),
                (None, Some(probs)) => hmm::build_iid(q, probs)?,
                (None, None) => hmm::build_uniform(q)?,
                (Some(_), Some(_)) => unreachable!("clap rejects --p1 with --probs"),
            };
            emit_model(&src, out.as_deref())
        }
        ModelCommand::GilbertElliott { delta, p, q_switch, out } => {
            emit_model(&hmm::build_gilbert_elliott(delta, p, q_switch)?, out.as_deref())
        }
        ModelCommand::Lpn { a, eta, out } => {
            let bits = a
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    _ => Err(CliError::Usage(format!("--a must be a bit string, got {a:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            emit_model(&hmm::build_lpn_source(&bits, eta)?, out.as_deref())
        }
        ModelCommand::Info { model } => {
            let src = load_model(&model)?;
            println!("name: {}", src.name());
            println!("q: {}", src.modulus().q());
            println!("states: {}", src.states());
            println!("stationary: {}", src.is_stationary());
            println!("hash: {:#018x}", src.model_hash());
            Ok(())
        }
    }
}

fn block_size(k: usize, t: u32) -> Result<usize, CliError> {
    k.checked_pow(t)
        .filter(|&m| m <= 1 << 12)
        .ok_or_else(|| CliError::Usage(format!("k^t too large (k = {k}, t = {t})")))
}

fn sample(args: SampleArgs) -> Result<(), CliError> {
    let src = load_model(&args.model)?;
    let m = block_size(args.k, args.t)?;
    files::write_block(&args.out, &src.sample_matrix(m, args.seed))
}

fn preprocess_cmd(args: PreprocessArgs) -> Result<(), CliError> {
    let src = load_model(&args.model)?;
    let kernel = parse_kernel(args.kernel.kernel.as_deref(), src.modulus(), args.kernel.k)?;
    let m = block_size(kernel.k(), args.t)?;
    let params = PreprocessParams {
        epsilon: args.eps,
        samples: args.samples,
        gamma: args.gamma,
        threshold: args.threshold.unwrap_or_else(|| default_threshold(m * m, args.gamma)),
        seed: args.seed,
        support_cap: args.support_cap,
    };
    let sets = if args.full {
        SelectionSets::full(m, args.eps, src.model_hash())?
    } else {
        let report = preprocess::polar_preprocess(&src, &kernel, args.t, &params)?;
        if let Some(path) = &args.estimates {
            let mut out = String::from("column,index,estimate\n");
            for (j, est) in report.estimates.iter().enumerate() {
                for (i, h) in est.as_slice().iter().enumerate() {
                    out.push_str(&format!("{j},{i},{h}\n"));
                }
            }
            files::write(path, out.as_bytes())?;
        }
        report.sets
    };
    let file = SetsFile::new(&src, &kernel, args.t, &params, sets)?;
    files::write(&args.out, &file.to_bytes())
}

fn compress(args: CompressArgs) -> Result<(), CliError> {
    let sets = load_sets(&args.sets)?;
    if let Some(model) = &args.model {
        check_model(&load_model(model)?, &sets.sets)?;
    }
    let tt = transform_for(&sets, args.kernel.as_deref())?;
    let z = files::read_block(&args.input, tt.modulus(), tt.m())?;
    let payload = if args.crc {
        codec::compress_with_crc(&z, &sets.sets, &tt)?
    } else {
        codec::compress(&z, &sets.sets, &tt)?
    };
    files::write(&args.out, &payload.to_bytes(&sets.sets)?)
}

fn decompress(args: DecompressArgs) -> Result<(), CliError> {
    let src = load_model(&args.model)?;
    let sets = load_sets(&args.sets)?;
    let payload = load_payload(&args.input)?;
    if payload.header.model_hash != src.model_hash() {
        return Err(CliError::Model(format!(
            "model hash mismatch: payload was compressed for {:#018x}, {} hashes to {:#018x}",
            payload.header.model_hash,
            display(&args.model),
            src.model_hash()
        )));
    }
    check_model(&src, &sets.sets)?;
    let tt = transform_for(&sets, args.kernel.as_deref())?;
    let z = codec::decompress(&src, &payload, &sets.sets, &tt)?;
    files::write_block(&args.out, &z)
}

fn channel_code(sets: &SetsFile, kernel: Option<&str>) -> Result<ChannelCode, CliError> {
    let tt = transform_for(sets, kernel)?;
    Ok(ChannelCode::new(sets.sets.clone(), tt)?)
}

fn channel_cmd(cmd: ChannelCommand) -> Result<(), CliError> {
    match cmd {
        ChannelCommand::Encode { sets, kernel, input, seed, message_out, out } => {
            let sets = load_sets(&sets)?;
            let code = channel_code(&sets, kernel.as_deref())?;
            let f = code.modulus();
            let x = match input {
                Some(path) => files::read_symbols(&path, f, code.message_length())?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..code.message_length()).map(|_| rng.gen_range(0..f.q()) as Symbol).collect()
                }
            };
            if let Some(path) = message_out {
                files::write(&path, &files::encode_symbols(f.q(), &x))?;
            }
            let x = FieldVector::from_symbols(f, x).map_err(|e| CliError::Usage(e.to_string()))?;
            files::write_block(&out, &code.encode(&x)?)
        }
        ChannelCommand::Transmit { model, input, seed, out } => {
            let src = load_model(&model)?;
            let f = src.modulus();
            let len = files::read(&input)?.len() / if f.q() <= 256 { 1 } else { 2 };
            let m = (len as f64).sqrt().round() as usize;
            let c = files::read_block(&input, f, m)?;
            files::write_block(&out, &channel::transmit(&src, &c, seed)?)
        }
        ChannelCommand::Decode { model, sets, kernel, input, noise_out, out } => {
            let src = load_model(&model)?;
            let sets = load_sets(&sets)?;
            check_model(&src, &sets.sets)?;
            let code = channel_code(&sets, kernel.as_deref())?;
            let z = files::read_block(&input, code.modulus(), code.m())?;
            let decoded = code.decode(&src, &z)?;
            if let Some(path) = noise_out {
                files::write_block(&path, &decoded.noise)?;
            }
            files::write(&out, &files::encode_symbols(code.modulus().q(), decoded.message.as_slice()))
        }
    }
}

pub const EXPERIMENT_COLUMNS: [&str; 16] = [
    "model",
    "q",
    "k",
    "t",
    "n",
    "epsilon",
    "gamma",
    "R",
    "threshold",
    "achieved_rate",
    "entropy_estimate",
    "entropy_stderr",
    "trials",
    "failures",
    "wall_time_ms",
    "seed",
];

fn experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let src = load_model(&args.model)?;
    let f: FieldModulus = src.modulus();
    let kernel = parse_kernel(args.kernel.kernel.as_deref(), f, args.kernel.k)?;
    if args.t.iter().any(|&t| t == 0) {
        return Err(CliError::Usage("t must be at least 1".into()));
    }
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    writer.write_record(EXPERIMENT_COLUMNS).map_err(csv_err)?;
    if let Some(dir) = &args.sets_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", display(dir))))?;
    }
    for &t in &args.t {
        let m = block_size(kernel.k(), t)?;
        let n = m * m;
        let tt = TensorTransform::new(kernel.clone(), t).map_err(|e| CliError::Usage(e.to_string()))?;
        let entropy = src.estimate_entropy_rate(n, args.entropy_trials, derive_seed(args.seed, 2))?;
        for &eps in &args.eps {
            let started = Instant::now();
            let params = PreprocessParams {
                epsilon: eps,
                samples: args.samples,
                gamma: args.gamma,
                threshold: args.threshold.unwrap_or_else(|| default_threshold(n, args.gamma)),
                seed: args.seed,
                support_cap: args.support_cap,
            };
            let report = preprocess::polar_preprocess(&src, &kernel, t, &params)?;
            let probe = codec::decompress_success_probe(
                &src,
                &report.sets,
                &tt,
                args.trials,
                derive_seed(args.seed, 1),
                BlockSampling::Stream,
            )?;
            let elapsed = if args.omit_timing { 0 } else { started.elapsed().as_millis() };
            if let Some(dir) = &args.sets_dir {
                let file = SetsFile::new(&src, &kernel, t, &params, report.sets.clone())?;
                files::write(&dir.join(format!("sets_t{t}_eps{eps}.bin")), &file.to_bytes())?;
            }
            writer
                .write_record([
                    src.name().to_string(),
                    f.q().to_string(),
                    kernel.k().to_string(),
                    t.to_string(),
                    n.to_string(),
                    eps.to_string(),
                    args.gamma.to_string(),
                    args.samples.to_string(),
                    params.threshold.to_string(),
                    probe.rate.to_string(),
                    entropy.mean.to_string(),
                    entropy.stderr.to_string(),
                    probe.trials.to_string(),
                    probe.failures.to_string(),
                    elapsed.to_string(),
                    args.seed.to_string(),
                ])
                .map_err(csv_err)?;
        }
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    match &args.out {
        Some(p) => files::write(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

