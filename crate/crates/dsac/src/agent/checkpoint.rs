//! Exact-precision checkpoints.
//!
//! A checkpoint is a plain-text file holding every network tensor with each
//! value written as the hexadecimal form of its IEEE-754 bits, so a
//! save/load round trip reproduces the weights bit for bit. The file also
//! records the configuration hash of the run that produced it; loading into
//! a differently-configured agent is refused.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuro::Tensor;

use super::update::DsacAgent;

const MAGIC: &str = "dsac-checkpoint v1";

/// A parsed checkpoint: named tensors plus run identity.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

/// Write tensors to `path` in the exact-bits text format.
pub fn save_checkpoint(
    path: &Path,
    config_hash: &str,
    step: u64,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    if config_hash.is_empty() || config_hash.contains(char::is_whitespace) {
        return Err(Error::Config(format!(
            "checkpoint hash must be a single non-empty token, got {config_hash:?}"
        )));
    }
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    writeln!(out, "hash {config_hash}").expect("string writes cannot fail");
    writeln!(out, "step {step}").expect("string writes cannot fail");
    for (name, t) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Config(format!(
                "tensor name must be a single non-empty token, got {name:?}"
            )));
        }
        writeln!(out, "tensor {name} {} {}", t.rows(), t.cols())
            .expect("string writes cannot fail");
        for i in 0..t.rows() {
            let row: Vec<String> =
                t.row_slice(i).iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a checkpoint file written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |what: &str| Error::State(format!("malformed checkpoint {}: {what}", path.display()));
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing or unsupported header line"));
    }
    let hash_line = lines.next().ok_or_else(|| bad("missing hash line"))?;
    let config_hash = hash_line
        .strip_prefix("hash ")
        .ok_or_else(|| bad("second line must be `hash <token>`"))?
        .to_string();
    let step_line = lines.next().ok_or_else(|| bad("missing step line"))?;
    let step: u64 = step_line
        .strip_prefix("step ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("third line must be `step <count>`"))?;
    let mut tensors = Vec::new();
    while let Some(line) = lines.next() {
        let mut parts = line.split(' ');
        if parts.next() != Some("tensor") {
            return Err(bad("expected a `tensor <name> <rows> <cols>` line"));
        }
        let name = parts.next().ok_or_else(|| bad("tensor line missing a name"))?.to_string();
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("tensor line missing a row count"))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("tensor line missing a column count"))?;
        if rows == 0 || cols == 0 {
            return Err(bad("tensor dimensions must be positive"));
        }
        let mut t = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let row = lines.next().ok_or_else(|| bad("file ends inside a tensor block"))?;
            let words: Vec<&str> = row.split(' ').collect();
            if words.len() != cols {
                return Err(bad("tensor row has the wrong number of values"));
            }
            for (j, w) in words.iter().enumerate() {
                let bits = u64::from_str_radix(w, 16)
                    .map_err(|_| bad("tensor value is not a 64-bit hex word"))?;
                t.set(i, j, f64::from_bits(bits));
            }
        }
        tensors.push((name, t));
    }
    Ok(Checkpoint { config_hash, step, tensors })
}

fn push_group<'a>(
    out: &mut Vec<(String, &'a Tensor)>,
    section: &str,
    params: &'a crate::neuro::ParamVec,
) {
    for p in params.iter() {
        out.push((format!("{section}/{}", p.name), &p.value));
    }
}

impl DsacAgent {
    /// Every network tensor under a stable `section/param` name.
    pub fn checkpoint_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_group(&mut out, "critic_online_1", &self.critics.online[0].params);
        push_group(&mut out, "critic_online_2", &self.critics.online[1].params);
        push_group(&mut out, "critic_target_1", &self.critics.target[0].params);
        push_group(&mut out, "critic_target_2", &self.critics.target[1].params);
        push_group(&mut out, "policy_online", &self.policy.online.params);
        push_group(&mut out, "policy_target", &self.policy.target.params);
        if let Some(net) = &self.proposal {
            push_group(&mut out, "proposal", &net.params);
        }
        out
    }

    /// Overwrite this agent's weights from a checkpoint. Every tensor must
    /// match an existing parameter in name and shape, and vice versa.
    pub fn restore_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let expected: Vec<(String, (usize, usize))> = self
            .checkpoint_tensors()
            .into_iter()
            .map(|(name, t)| (name, (t.rows(), t.cols())))
            .collect();
        if expected.len() != ck.tensors.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors but this agent has {}",
                ck.tensors.len(),
                expected.len()
            )));
        }
        for ((want_name, want_shape), (got_name, got)) in expected.iter().zip(&ck.tensors) {
            if want_name != got_name || *want_shape != got.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {got_name} {:?} does not match \
                     the agent's {want_name} {want_shape:?}",
                    got.shape()
                )));
            }
        }
        let mut idx = 0;
        let mut restore_group = |params: &mut crate::neuro::ParamVec| {
            for id in 0..params.len() {
                let src = &ck.tensors[idx].1;
                params.get_mut(id).value.data_mut().copy_from_slice(src.data());
                idx += 1;
            }
        };
        restore_group(&mut self.critics.online[0].params);
        restore_group(&mut self.critics.online[1].params);
        restore_group(&mut self.critics.target[0].params);
        restore_group(&mut self.critics.target[1].params);
        restore_group(&mut self.policy.online.params);
        restore_group(&mut self.policy.target.params);
        if let Some(net) = &mut self.proposal {
            restore_group(&mut net.params);
        }
        Ok(())
    }
}
