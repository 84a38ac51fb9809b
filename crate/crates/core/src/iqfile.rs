//! VDMIQ1 capture files.
//!
//! Layout: the 7-byte magic `VDMIQ1\n`, a little-endian `u32` byte count,
//! that many bytes of UTF-8 `key=value` lines (at least `sample_rate`,
//! `band_low`, `band_high`), then interleaved little-endian `f32` I/Q pairs.
//! The writer also stores `num_samples`; when present the reader checks the
//! payload against it, which catches truncation on a pair boundary.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::signal::IqCapture;

pub const MAGIC: &[u8; 7] = b"VDMIQ1\n";
const RESERVED: [&str; 4] = ["sample_rate", "band_low", "band_high", "num_samples"];

pub fn write_iq<W: Write>(cap: &IqCapture, mut w: W) -> Result<()> {
    let mut header = String::new();
    header.push_str(&format!("sample_rate={}\n", cap.sample_rate));
    header.push_str(&format!("band_low={}\n", cap.band_low));
    header.push_str(&format!("band_high={}\n", cap.band_high));
    header.push_str(&format!("num_samples={}\n", cap.samples.len()));
    for (k, v) in &cap.meta {
        if RESERVED.contains(&k.as_str()) || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!("metadata key `{k}` cannot be stored")));
        }
        header.push_str(&format!("{k}={v}\n"));
    }
    let len = u32::try_from(header.len())
        .map_err(|_| Error::Config("metadata block too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(cap.samples.len() * 8);
    for s in &cap.samples {
        buf.extend_from_slice(&s.re.to_le_bytes());
        buf.extend_from_slice(&s.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<IqCapture> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_iq(&bytes)
}

pub fn parse_iq(bytes: &[u8]) -> Result<IqCapture> {
    let fmt = |offset: usize, msg: &str| Error::Format {
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fmt(0, "missing VDMIQ1 magic"));
    }
    let mut pos = MAGIC.len();
    if bytes.len() < pos + 4 {
        return Err(fmt(pos, "truncated metadata length"));
    }
    let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if bytes.len() < pos + len {
        return Err(fmt(bytes.len(), "truncated metadata block"));
    }
    let text = std::str::from_utf8(&bytes[pos..pos + len])
        .map_err(|e| fmt(pos + e.valid_up_to(), "metadata is not UTF-8"))?;
    let mut meta = BTreeMap::new();
    let mut line_start = pos;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches('\n');
        if !body.is_empty() {
            let Some((k, v)) = body.split_once('=') else {
                return Err(fmt(line_start, "metadata line without `=`"));
            };
            meta.insert(k.to_string(), v.to_string());
        }
        line_start += line.len();
    }
    let mut take = |key: &str| -> Result<f64> {
        let v = meta
            .remove(key)
            .ok_or_else(|| fmt(pos, &format!("metadata lacks `{key}`")))?;
        v.parse::<f64>()
            .map_err(|_| fmt(pos, &format!("metadata `{key}` is not a number")))
    };
    let sample_rate = take("sample_rate")?;
    let band_low = take("band_low")?;
    let band_high = take("band_high")?;
    let expected = match meta.remove("num_samples") {
        Some(v) => Some(
            v.parse::<usize>()
                .map_err(|_| fmt(pos, "metadata `num_samples` is not a count"))?,
        ),
        None => None,
    };
    pos += len;
    let payload = &bytes[pos..];
    if payload.len() % 8 != 0 {
        return Err(fmt(pos + payload.len() / 8 * 8, "truncated I/Q pair"));
    }
    if let Some(n) = expected {
        if payload.len() / 8 != n {
            return Err(fmt(
                pos + payload.len().min(n * 8),
                &format!("payload holds {} samples, header says {n}", payload.len() / 8),
            ));
        }
    }
    let samples = payload
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();
    let cap = IqCapture {
        samples,
        sample_rate,
        band_low,
        band_high,
        meta,
    };
    cap.validate().map_err(|e| fmt(MAGIC.len() + 4, &e.to_string()))?;
    Ok(cap)
}

pub fn save_iq(cap: &IqCapture, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_iq(cap, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_iq(path: &Path) -> Result<IqCapture> {
    parse_iq(&std::fs::read(path)?)
}
