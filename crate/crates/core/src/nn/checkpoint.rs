//! Parameter checkpoints: a text header followed by the raw parameters.
//!
//! ```text
//! turbest-checkpoint 1
//! seed <u64>
//! step <u64>
//! config <key> <value>        (any number of lines)
//! param <name> <len>          (declaration order)
//! end
//! <little-endian f64 values of every param, concatenated>
//! ```

use std::path::Path;

use super::Param;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "turbest-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    /// Architecture description, as ordered key/value pairs.
    pub config: Vec<(String, String)>,
    pub params: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_params<'a>(
        seed: u64,
        step: u64,
        config: Vec<(String, String)>,
        params: impl IntoIterator<Item = &'a Param>,
    ) -> Self {
        Self {
            seed,
            step,
            config,
            params: params.into_iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Copies values into `params`, which must match names and lengths in order.
    pub fn load_into(&self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("expected {} parameters, found {}", params.len(), self.params.len()),
            ));
        }
        for (p, (name, values)) in params.iter_mut().zip(&self.params) {
            if &p.name != name || p.value.len() != values.len() {
                return Err(Error::format(
                    "checkpoint",
                    format!("parameter {} ({}) does not match {name} ({})", p.name, p.value.len(), values.len()),
                ));
            }
            p.value.copy_from_slice(values);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nseed {}\nstep {}\n", self.seed, self.step);
        for (k, v) in &self.config {
            header.push_str(&format!("config {k} {v}\n"));
        }
        for (name, values) in &self.params {
            header.push_str(&format!("param {name} {}\n", values.len()));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for (_, values) in &self.params {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::format("checkpoint", m);
        let marker = b"\nend\n";
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| err("missing header terminator".into()))?
            + marker.len();
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| err("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        let first = lines.next().unwrap_or_default();
        let version = first
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|r| r.trim().parse::<u32>().ok())
            .ok_or_else(|| err(format!("bad magic line {first:?}")))?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let mut ckpt = Checkpoint {
            seed: 0,
            step: 0,
            config: Vec::new(),
            params: Vec::new(),
        };
        let mut lens = Vec::new();
        for line in lines {
            let mut parts = line.splitn(2, ' ');
            let (key, rest) = (parts.next().unwrap_or_default(), parts.next().unwrap_or_default());
            match key {
                "seed" => ckpt.seed = rest.parse().map_err(|_| err(format!("bad seed {rest:?}")))?,
                "step" => ckpt.step = rest.parse().map_err(|_| err(format!("bad step {rest:?}")))?,
                "config" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.config.push((k.to_string(), v.to_string()));
                }
                "param" => {
                    let (name, len) = rest.rsplit_once(' ').ok_or_else(|| err(format!("bad param line {line:?}")))?;
                    let len: usize = len.parse().map_err(|_| err(format!("bad param length in {line:?}")))?;
                    ckpt.params.push((name.to_string(), Vec::with_capacity(len)));
                    lens.push(len);
                }
                "end" => break,
                _ => return Err(err(format!("unknown header line {line:?}"))),
            }
        }
        let body = &bytes[split..];
        let total: usize = lens.iter().sum();
        if body.len() != total * 8 {
            return Err(err(format!("expected {} payload bytes, found {}", total * 8, body.len())));
        }
        let mut chunks = body.chunks_exact(8);
        for ((_, values), len) in ckpt.params.iter_mut().zip(lens) {
            for c in chunks.by_ref().take(len) {
                values.push(f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
            }
        }
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            seed: 42,
            step: 1234,
            config: vec![("resolution".into(), "32".into()), ("channels".into(), "16 32 4".into())],
            params: vec![
                ("a.weight".into(), vec![0.1, -2.5e-300, f64::MIN_POSITIVE, 1.0 / 3.0]),
                ("a.bias".into(), vec![]),
                ("b".into(), vec![f64::MAX, -0.0]),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        write_checkpoint(&path, &c).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        for ((_, a), (_, b)) in back.params.iter().zip(&c.params) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.config_value("channels"), Some("16 32 4"));
    }

    #[test]
    fn truncation_and_bad_magic_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn load_checks_names() {
        let c = sample();
        let mut p = Param::new("a.weight", vec![0.0; 4]);
        assert!(c.load_into(&mut [&mut p]).is_err());
    }
}
