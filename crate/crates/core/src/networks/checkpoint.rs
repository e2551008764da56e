//! Text checkpoint format:
//!
//! ```text
//! PCASEG-CKPT-1
//! iteration: <n>
//! network: segmenter|discriminator
//! spec: <one-line JSON>
//! params: <count>
//! <count tensors in the numcore dump format>
//! ...repeated per network...
//! ```
//!
//! Values use shortest round-trip decimal, so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use super::{NetworkSpec, NetworkState};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &str = "PCASEG-CKPT-1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub segmenter: NetworkState,
    pub discriminator: Option<NetworkState>,
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{CHECKPOINT_MAGIC}\niteration: {}\n", self.iteration);
        let nets = std::iter::once(("segmenter", &self.segmenter))
            .chain(self.discriminator.as_ref().map(|d| ("discriminator", d)));
        for (name, net) in nets {
            out.push_str(&format!("network: {name}\n"));
            out.push_str(&format!("spec: {}\n", serde_json::to_string(net.spec())?));
            out.push_str(&format!("params: {}\n", net.params().len()));
            for p in net.params() {
                out.push_str(&p.dump());
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::Parse("not a checkpoint (bad magic)".into()));
        }
        let iteration = field(lines.next(), "iteration")?
            .parse()
            .map_err(|e| Error::Parse(format!("bad iteration: {e}")))?;
        let mut segmenter = None;
        let mut discriminator = None;
        while let Some(line) = lines.next() {
            let name = field(Some(line), "network")?.to_string();
            let spec: NetworkSpec = serde_json::from_str(field(lines.next(), "spec")?)?;
            let count: usize = field(lines.next(), "params")?
                .parse()
                .map_err(|e| Error::Parse(format!("bad param count: {e}")))?;
            let params = (0..count)
                .map(|_| Tensor::parse_dump(&mut lines))
                .collect::<Result<Vec<_>>>()?;
            let state = NetworkState::from_parts(spec, params)
                .map_err(|e| Error::Parse(e.to_string()))?;
            match name.as_str() {
                "segmenter" => segmenter = Some(state),
                "discriminator" => discriminator = Some(state),
                other => return Err(Error::Parse(format!("unknown network {other:?}"))),
            }
        }
        Ok(Self {
            iteration,
            segmenter: segmenter.ok_or_else(|| Error::Parse("checkpoint has no segmenter".into()))?,
            discriminator,
        })
    }
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(": "))
        .ok_or_else(|| Error::Parse(format!("expected `{key}: ...` line")))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_text()?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&fs::read_to_string(path)?)
}
