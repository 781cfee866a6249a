//! Plain-text parameter checkpoints.
//!
//! ```text
//! updrs-checkpoint 1
//! config {"input_dim":1,"units":100,...}
//! block lstm_fwd.W_f 100 101
//! <row-major values separated by spaces>
//! ...
//! end
//! ```
//!
//! Blocks appear in the order of [`ParamBlocks::blocks`], followed by the
//! batch-norm running statistics (`bn{l}.running_mean`, `bn{l}.running_var`).
//! Vectors have shape `len 1`. Values use the shortest representation that
//! round-trips exactly.

use std::fmt::Write as _;

use super::params::{ModelParams, NetConfig, ParamBlocks};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "updrs-checkpoint";

fn shapes(p: &ModelParams) -> Vec<(usize, usize)> {
    let c = &p.config;
    let mut out = Vec::new();
    for _ in 0..2 {
        out.extend([(c.units, c.units + c.input_dim); 4]);
        out.extend([(c.units, 1); 4]);
    }
    out.push(p.attention.w_a.shape());
    out.push((p.attention.v_a.len(), 1));
    for d in &p.dense {
        let w = d.w.rows();
        out.extend([d.w.shape(), (w, 1), (w, 1), (w, 1)]);
    }
    out.push(p.output.w.shape());
    out.push((1, 1));
    out
}

fn write_block(out: &mut String, name: &str, shape: (usize, usize), values: &[f64]) {
    let _ = writeln!(out, "block {name} {} {}", shape.0, shape.1);
    let line: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

pub fn to_checkpoint(p: &ModelParams) -> String {
    let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
    let _ = writeln!(out, "config {}", serde_json::to_string(&p.config).expect("config serializes"));
    for ((name, values), shape) in p.blocks().into_iter().zip(shapes(p)) {
        write_block(&mut out, &name, shape, values);
    }
    for (l, n) in p.norm.iter().enumerate() {
        write_block(&mut out, &format!("bn{l}.running_mean"), (n.running_mean.len(), 1), &n.running_mean);
        write_block(&mut out, &format!("bn{l}.running_var"), (n.running_var.len(), 1), &n.running_var);
    }
    out.push_str("end\n");
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Serialize(format!("checkpoint: {}", msg.into()))
}

pub fn from_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == CHECKPOINT_VERSION.to_string() => {}
        _ => return Err(bad(format!("unsupported header {header:?}"))),
    }
    let cfg_line = lines.next().ok_or_else(|| bad("missing config"))?;
    let cfg_json = cfg_line.strip_prefix("config ").ok_or_else(|| bad("missing config"))?;
    let config: NetConfig = serde_json::from_str(cfg_json).map_err(|e| bad(e.to_string()))?;
    let mut p = ModelParams::zeros(&config)?;
    let expected_shapes = shapes(&p);
    let n_blocks = expected_shapes.len();
    let mut filled = 0;
    loop {
        let line = lines.next().ok_or_else(|| bad("missing end marker"))?;
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("block") {
            return Err(bad(format!("expected block line, got {line:?}")));
        }
        let name = parts.next().ok_or_else(|| bad("block without name"))?.to_string();
        let dims: Vec<usize> = parts
            .map(|s| s.parse().map_err(|_| bad(format!("bad shape in {line:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(bad(format!("bad shape in {line:?}")));
        }
        let values: Vec<f64> = lines
            .next()
            .ok_or_else(|| bad(format!("no values for {name}")))?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("bad value {s:?} in {name}"))))
            .collect::<Result<_>>()?;
        if values.len() != dims[0] * dims[1] {
            return Err(bad(format!("{name}: {} values for shape {dims:?}", values.len())));
        }
        if let Some(rest) = name.strip_prefix("bn") {
            if let Some((l, field)) = rest.split_once(".running_") {
                let l: usize = l.parse().map_err(|_| bad(format!("bad layer in {name}")))?;
                let norm = p.norm.get_mut(l).ok_or_else(|| bad(format!("no layer for {name}")))?;
                let dst = if field == "mean" { &mut norm.running_mean } else { &mut norm.running_var };
                if dst.len() != values.len() {
                    return Err(bad(format!("{name} has wrong length")));
                }
                dst.copy_from_slice(&values);
                continue;
            }
        }
        let pos = p
            .blocks()
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| bad(format!("unknown block {name}")))?;
        if expected_shapes[pos] != (dims[0], dims[1]) {
            return Err(bad(format!("{name}: shape {dims:?}, expected {:?}", expected_shapes[pos])));
        }
        p.blocks_mut()[pos].1.copy_from_slice(&values);
        filled += 1;
    }
    if filled != n_blocks {
        return Err(bad(format!("{filled} of {n_blocks} parameter blocks present")));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RandomSource;
    use crate::nn::gradcheck::tiny_config;

    #[test]
    fn roundtrip_is_exact() {
        let mut p = ModelParams::init(&tiny_config(), &mut RandomSource::new(12)).unwrap();
        p.norm[1].running_mean[2] = 0.123456789;
        let text = to_checkpoint(&p);
        assert!(text.starts_with("updrs-checkpoint 1\n"));
        assert!(text.contains("block lstm_fwd.W_f 4 5\n"));
        assert_eq!(from_checkpoint(&text).unwrap(), p);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let p = ModelParams::init(&tiny_config(), &mut RandomSource::new(1)).unwrap();
        let text = to_checkpoint(&p);
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(from_checkpoint(&cut).is_err());
        assert!(from_checkpoint("hello 1\n").is_err());
        assert!(from_checkpoint(&text.replace("block output.b 1 1", "block output.b 2 1")).is_err());
    }
}
