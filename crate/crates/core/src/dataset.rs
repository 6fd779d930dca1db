//! Dataset files: JSON lines (one instance per line) and a little-endian
//! binary mirror.
//!
//! Text record fields: `n`, `gamma_db` (per group), `noise_dbm`, and
//! `groups`, a list over groups of lists over users of per-antenna
//! `[re, im]` pairs. The text form carries a single noise level, so every
//! user of a written instance must share it.
//!
//! Binary record: `u32` N, `u32` M, `u32` K₁..K_M, then for each user its N
//! `(re, im)` `f64` pairs, then K per-user σ² (watts), then M linear γ.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::cplx::CMatrix;
use crate::error::{Error, Result};
use crate::scenario::{db_to_lin, dbm_to_watt, lin_to_db, watt_to_dbm, ChannelInstance};

#[derive(Serialize, Deserialize)]
struct Record {
    n: usize,
    gamma_db: Vec<f64>,
    noise_dbm: f64,
    groups: Vec<Vec<Vec<[f64; 2]>>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Dataset(msg.into())
}

/// Serialize one instance as a single JSON line (without the newline).
pub fn to_json_line(inst: &ChannelInstance) -> Result<String> {
    let s0 = inst.sigma2()[0];
    if inst.sigma2().iter().any(|&s| s != s0) {
        return Err(bad("text format requires a common noise power"));
    }
    let groups = (0..inst.groups())
        .map(|m| {
            inst.group_range(m)
                .map(|k| (0..inst.antennas()).map(|r| {
                    let (a, b) = inst.h().get(r, k);
                    [a, b]
                }).collect())
                .collect()
        })
        .collect();
    let rec = Record {
        n: inst.antennas(),
        gamma_db: inst.gamma().iter().map(|&g| lin_to_db(g)).collect(),
        noise_dbm: watt_to_dbm(s0),
        groups,
    };
    serde_json::to_string(&rec).map_err(|e| bad(e.to_string()))
}

pub fn from_json_line(line: &str) -> Result<ChannelInstance> {
    let rec: Record = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    if rec.groups.len() != rec.gamma_db.len() {
        return Err(bad(format!(
            "{} groups but {} targets",
            rec.groups.len(),
            rec.gamma_db.len()
        )));
    }
    let sizes: Vec<usize> = rec.groups.iter().map(Vec::len).collect();
    let k: usize = sizes.iter().sum();
    let mut h = CMatrix::zeros(rec.n, k);
    for (c, user) in rec.groups.iter().flatten().enumerate() {
        if user.len() != rec.n {
            return Err(bad(format!("user {c} has {} antennas, expected {}", user.len(), rec.n)));
        }
        for (r, &[a, b]) in user.iter().enumerate() {
            h.set(r, c, (a, b));
        }
    }
    ChannelInstance::new(
        h,
        sizes,
        vec![dbm_to_watt(rec.noise_dbm); k],
        rec.gamma_db.iter().map(|&g| db_to_lin(g)).collect(),
    )
}

pub fn write_text<W: Write>(mut w: W, instances: &[ChannelInstance]) -> Result<()> {
    for inst in instances {
        writeln!(w, "{}", to_json_line(inst)?)?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<Vec<ChannelInstance>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_json_line(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_binary<W: Write>(mut w: W, instances: &[ChannelInstance]) -> Result<()> {
    for inst in instances {
        let u32_of = |x: usize| u32::try_from(x).map_err(|_| bad("dimension exceeds u32"));
        w.write_all(&u32_of(inst.antennas())?.to_le_bytes())?;
        w.write_all(&u32_of(inst.groups())?.to_le_bytes())?;
        for &s in inst.group_sizes() {
            w.write_all(&u32_of(s)?.to_le_bytes())?;
        }
        for k in 0..inst.users() {
            for r in 0..inst.antennas() {
                let (a, b) = inst.h().get(r, k);
                w.write_all(&a.to_le_bytes())?;
                w.write_all(&b.to_le_bytes())?;
            }
        }
        for &s in inst.sigma2() {
            w.write_all(&s.to_le_bytes())?;
        }
        for &g in inst.gamma() {
            w.write_all(&g.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<ChannelInstance>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf
            .get(pos..pos + n)
            .ok_or_else(|| bad(format!("truncated record at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    let mut out = Vec::new();
    let total = buf.len();
    let mut consumed = 0;
    while consumed < total {
        let mut u32_at = || -> Result<usize> { Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize) };
        let n = u32_at()?;
        let m = u32_at()?;
        if n == 0 || m == 0 || m > 1 << 20 {
            return Err(bad(format!("bad header N={n} M={m}")));
        }
        let sizes = (0..m).map(|_| u32_at()).collect::<Result<Vec<_>>>()?;
        let k: usize = sizes.iter().sum();
        let mut f64_at = || -> Result<f64> { Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())) };
        let mut h = CMatrix::zeros(n, k);
        for c in 0..k {
            for row in 0..n {
                let a = f64_at()?;
                let b = f64_at()?;
                h.set(row, c, (a, b));
            }
        }
        let sigma2 = (0..k).map(|_| f64_at()).collect::<Result<Vec<_>>>()?;
        let gamma = (0..m).map(|_| f64_at()).collect::<Result<Vec<_>>>()?;
        out.push(ChannelInstance::new(h, sizes, sigma2, gamma)?);
        consumed = 4 * (2 + m) + 8 * (2 * n * k + k + m) + consumed;
    }
    Ok(out)
}
