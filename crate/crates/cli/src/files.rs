//! File helpers. Symbol files hold one byte per symbol when `q <= 256`,
//! otherwise a little-endian u16 per symbol.

use std::fs;
use std::path::Path;

use polarhmm::codec::{CompressedPayload, SelectionSets};
use polarhmm::preprocess::SetsFile;
use polarhmm::{FieldMatrix, FieldModulus, HiddenMarkovSource, MixingKernel, Symbol, TensorTransform};

use crate::commands::CliError;
use crate::display;

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", display(path))))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", display(path))))
}

pub fn load_model(path: &Path) -> Result<HiddenMarkovSource, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|_| CliError::Model(format!("{}: not UTF-8", display(path))))?;
    HiddenMarkovSource::from_json(&text).map_err(|e| CliError::Model(format!("{}: {e}", display(path))))
}

pub fn load_sets(path: &Path) -> Result<SetsFile, CliError> {
    SetsFile::from_bytes(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", display(path))))
}

pub fn load_payload(path: &Path) -> Result<CompressedPayload, CliError> {
    CompressedPayload::from_bytes(&read(path)?)
        .map(|(p, _)| p)
        .map_err(|e| CliError::Usage(format!("{}: {e}", display(path))))
}

pub fn encode_symbols(q: u32, symbols: &[Symbol]) -> Vec<u8> {
    if q <= 256 {
        symbols.iter().map(|&s| s as u8).collect()
    } else {
        symbols.iter().flat_map(|s| s.to_le_bytes()).collect()
    }
}

pub fn read_symbols(path: &Path, f: FieldModulus, len: usize) -> Result<Vec<Symbol>, CliError> {
    let bytes = read(path)?;
    let symbols: Vec<Symbol> = if f.q() <= 256 {
        bytes.iter().map(|&b| b as Symbol).collect()
    } else {
        if bytes.len() % 2 != 0 {
            return Err(CliError::Usage(format!("{}: odd byte count for u16 symbols", display(path))));
        }
        bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    };
    if symbols.len() != len {
        return Err(CliError::Usage(format!("{}: expected {len} symbols, found {}", display(path), symbols.len())));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s as u32 >= f.q()) {
        return Err(CliError::Usage(format!("{}: symbol {bad} outside F_{}", display(path), f.q())));
    }
    Ok(symbols)
}

pub fn read_block(path: &Path, f: FieldModulus, m: usize) -> Result<FieldMatrix, CliError> {
    let symbols = read_symbols(path, f, m * m)?;
    FieldMatrix::from_row_major(f, m, m, symbols).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn write_block(path: &Path, z: &FieldMatrix) -> Result<(), CliError> {
    write(path, &encode_symbols(z.modulus().q(), z.as_slice()))
}

/// `"1,1;0,1"` -> kernel over `f`; without one, the standard `k x k` kernel.
pub fn parse_kernel(text: Option<&str>, f: FieldModulus, k: usize) -> Result<MixingKernel, CliError> {
    let Some(text) = text else {
        return MixingKernel::standard(f, k).map_err(|e| CliError::Usage(format!("kernel: {e}")));
    };
    let rows = text
        .split(';')
        .map(|r| r.split(',').map(|x| x.trim().parse::<u32>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("kernel {text:?}: {e}")))?;
    let m = FieldMatrix::from_rows(f, &rows).map_err(|e| CliError::Usage(format!("kernel {text:?}: {e}")))?;
    MixingKernel::validate(m).map_err(|e| CliError::Usage(format!("kernel {text:?}: {e}")))
}

/// Transform matching a sets file; a custom kernel must have the recorded size.
pub fn transform_for(sets: &SetsFile, kernel: Option<&str>) -> Result<TensorTransform, CliError> {
    let f = FieldModulus::new(sets.q).map_err(|e| CliError::Usage(e.to_string()))?;
    let kernel = parse_kernel(kernel, f, sets.k as usize)?;
    if kernel.k() != sets.k as usize {
        return Err(CliError::Usage(format!("kernel is {0}x{0} but the sets were built for k = {1}", kernel.k(), sets.k)));
    }
    TensorTransform::new(kernel, sets.t as u32).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn check_model(src: &HiddenMarkovSource, sets: &SelectionSets) -> Result<(), CliError> {
    if src.model_hash() != sets.model_hash() {
        return Err(CliError::Model(format!(
            "model hash mismatch: sets were built for {:#018x}, model file hashes to {:#018x}",
            sets.model_hash(),
            src.model_hash()
        )));
    }
    Ok(())
}
