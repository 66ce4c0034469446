//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result, Signal};

const PCM_SCALE: f64 = 32767.0;

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::WavFormat { offset: offset as u64, message: message.into() }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2).map(|s| u16::from_le_bytes([s[0], s[1]])).ok_or_else(|| fmt_err(at, "unexpected end of file"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| fmt_err(at, "unexpected end of file"))
}

/// Decodes a WAV byte buffer. Samples are scaled by `1/32767` and clamped into `[-1, 1]`.
pub fn decode_wav(bytes: &[u8]) -> Result<Signal> {
    if bytes.is_empty() {
        return Err(fmt_err(0, "empty file"));
    }
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(fmt_err(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(fmt_err(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fmt_err(pos + 4, format!("fmt chunk too short ({size} bytes)")));
                }
                let format = u16_at(bytes, body)?;
                if format != 1 {
                    return Err(fmt_err(body, format!("unsupported format tag {format}, expected PCM (1)")));
                }
                let channels = u16_at(bytes, body + 2)?;
                if channels != 1 {
                    return Err(fmt_err(body + 2, format!("unsupported channel count {channels}, expected mono")));
                }
                let bits = u16_at(bytes, body + 14)?;
                if bits != 16 {
                    return Err(fmt_err(body + 14, format!("unsupported bit depth {bits}, expected 16")));
                }
                rate = Some(u32_at(bytes, body + 4)?);
            }
            b"data" => {
                let rate = rate.ok_or_else(|| fmt_err(pos, "data chunk before fmt chunk"))?;
                let end = body
                    .checked_add(size)
                    .filter(|e| *e <= bytes.len())
                    .ok_or_else(|| fmt_err(pos + 4, format!("data chunk of {size} bytes overruns the file")))?;
                if size == 0 {
                    return Err(fmt_err(pos + 4, "data chunk has no samples"));
                }
                if !size.is_multiple_of(2) {
                    return Err(fmt_err(pos + 4, "data chunk size is not a whole number of samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| (i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE).max(-1.0))
                    .collect();
                return Signal::new(samples, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(fmt_err(bytes.len(), "no data chunk"))
}

/// Encodes `signal` as 16-bit PCM. Returns the bytes and the number of clamped samples.
pub fn encode_wav(signal: &Signal) -> Result<(Vec<u8>, usize)> {
    let rate = signal.sample_rate();
    if rate == 0 {
        return Err(Error::invalid("cannot write a WAV file without a sample rate"));
    }
    let data_len = signal.len() * 2;
    let riff_len = u32::try_from(36 + data_len).map_err(|_| Error::invalid("signal too long for a WAV file"))?;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let mut clamped = 0;
    for &v in signal.samples() {
        if !(-1.0..=1.0).contains(&v) {
            clamped += 1;
        }
        let q = (v.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok((out, clamped))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    decode_wav(&fs::read(path)?)
}

/// Writes to a sibling temporary file and renames it into place, so failures leave no partial file.
/// Returns the number of samples clamped into `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, clamped) = encode_wav(signal)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} sample(s) into [-1, 1]", path.display());
    }
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(clamped)
}
