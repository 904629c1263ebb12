//! Binary checkpoint files.
//!
//! Layout (little-endian): magic `BHGAN`, format version byte, `u32` length
//! and JSON text of the run configuration, the parameter table, the
//! optimizer state table, then the `u64` iteration counter. A table is a
//! `u32` entry count followed by entries of `u32` name length, name bytes,
//! `u32` rank, `u32` extents and `f32` values.

use std::fs;
use std::path::Path;

use bhgan_core::net::{init_params, NetParams};
use bhgan_core::optim::{OptimizerState, ParamTable};
use bhgan_core::train::{ModelParams, FORMAT_VERSION};
use bhgan_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image_io::write_atomic;

pub const MAGIC: &[u8; 5] = b"BHGAN";

const GROUPS: [&str; 3] = ["generator", "global_critic", "local_critic"];

fn tables(nets: &NetParams<f32>) -> [&ParamTable<f32>; 3] {
    [&nets.generator, &nets.global_critic, &nets.local_critic]
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_table(out: &mut Vec<u8>, groups: [&ParamTable<f32>; 3]) {
    put_u32(out, groups.iter().map(|t| t.len()).sum());
    for (group, table) in GROUPS.iter().zip(groups) {
        for (name, t) in table.iter() {
            let full = format!("{group}/{name}");
            put_u32(out, full.len());
            out.extend_from_slice(full.as_bytes());
            put_u32(out, t.rank());
            for &d in t.shape() {
                put_u32(out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

/// Serialize `state`; `run` supplies the non-model part of the config echo.
pub fn encode(state: &ModelParams, run: &RunConfig) -> Vec<u8> {
    let echo = RunConfig { train: state.train, net: state.net, ..run.clone() };
    let json = serde_json::to_vec(&echo).expect("config serializes");
    let mut out = Vec::with_capacity(64 + json.len() + 8 * state.nets.generator.num_elements());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_table(&mut out, tables(&state.nets));
    put_table(&mut out, [&state.generator_opt.mean_sq, &state.global_opt.mean_sq, &state.local_opt.mean_sq]);
    out.extend_from_slice(&state.iteration.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (needed {n} more)", self.pos))?;
        let s: &'a [u8] = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table(&mut self, skeleton: &NetParams<f32>) -> std::result::Result<[ParamTable<f32>; 3], String> {
        let mut out: [ParamTable<f32>; 3] = Default::default();
        let count = self.u32()?;
        for _ in 0..count {
            let len = self.u32()?;
            let name = std::str::from_utf8(self.take(len)?).map_err(|_| "parameter name is not UTF-8".to_string())?;
            let (group, key) = name.split_once('/').ok_or_else(|| format!("malformed parameter name {name:?}"))?;
            let g = GROUPS.iter().position(|&x| x == group).ok_or_else(|| format!("unknown network {group:?}"))?;
            let expected = tables(skeleton)[g].get(key).ok_or_else(|| format!("unexpected parameter {name}"))?;
            let rank = self.u32()?;
            let shape = (0..rank).map(|_| self.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
            if shape != expected.shape() {
                return Err(format!("{name}: stored shape {shape:?}, configuration implies {:?}", expected.shape()));
            }
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(4).ok_or("parameter too large")?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            out[g].insert(key, Tensor::new(&shape, data).map_err(|e| e.to_string())?);
        }
        for (g, table) in out.iter().enumerate() {
            table.same_keys(tables(skeleton)[g]).map_err(|e| format!("{}: {e}", GROUPS[g]))?;
        }
        Ok(out)
    }
}

/// Parse a checkpoint; returns the model state and the stored config echo.
pub fn decode(bytes: &[u8]) -> std::result::Result<(ModelParams, RunConfig), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let version = r.take(1)?[0];
    if version != FORMAT_VERSION {
        return Err(format!(
            "checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        ));
    }
    let len = r.u32()?;
    let run: RunConfig = serde_json::from_slice(r.take(len)?).map_err(|e| format!("unreadable config echo: {e}"))?;
    run.validate().map_err(|e| format!("stored config is invalid: {e}"))?;
    let skeleton = init_params::<f32>(0, &run.net).map_err(|e| e.to_string())?;
    let [generator, global_critic, local_critic] = r.table(&skeleton)?;
    let [g_sq, gc_sq, lc_sq] = r.table(&skeleton)?;
    let iteration = r.u64()?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut state = ModelParams::from_nets(run.net, run.train, NetParams { generator, global_critic, local_critic });
    let restore = |opt: &mut OptimizerState<f32>, sq| opt.mean_sq = sq;
    restore(&mut state.generator_opt, g_sq);
    restore(&mut state.global_opt, gc_sq);
    restore(&mut state.local_opt, lc_sq);
    state.iteration = iteration;
    Ok((state, run))
}

/// Write atomically: a crash never leaves a partial checkpoint at `path`.
pub fn save_checkpoint(state: &ModelParams, run: &RunConfig, path: &Path) -> Result<()> {
    write_atomic(path, &encode(state, run))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, RunConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}
