//! Binary checkpoint format.
//!
//! ```text
//! magic "FANONCKP" | u32 version | u64 header length | JSON header
//! u32 section count | sections...
//! section: u32 name length | name | u32 rank | u64 dims... | f32 data
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{Progress, Schedule};
use super::trainer::Trainer;
use super::TrainConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, GrowthState};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FANONCKP";

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    growth_state: GrowthState,
    progress: Progress,
    resolution: usize,
    rng: RngState,
    adam_steps: BTreeMap<String, u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return Err(Error::Checkpoint("bad RNG seed".into()));
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| Error::Checkpoint("bad RNG seed".into()))?;
    }
    Ok(out)
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) {
    buf.extend((name.len() as u32).to_le_bytes());
    buf.extend(name.as_bytes());
    buf.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u64).to_le_bytes());
    }
    for v in t.data() {
        buf.extend(v.to_le_bytes());
    }
}

fn sections(trainer: &Trainer) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    let live = trainer.generator.parameters().into_iter().chain(trainer.discriminator.parameters());
    for p in live {
        let (m, v) = p.moments();
        out.push((p.name().to_string(), p.value()));
        out.push((format!("adam.m/{}", p.name()), m));
        out.push((format!("adam.v/{}", p.name()), v));
    }
    for p in trainer.ema.parameters() {
        out.push((format!("ema/{}", p.name()), p.value()));
    }
    out
}

/// Serialize the complete training state.
pub fn checkpoint_bytes(trainer: &Trainer) -> Result<Vec<u8>> {
    let adam_steps = trainer
        .generator
        .parameters()
        .into_iter()
        .chain(trainer.discriminator.parameters())
        .map(|p| (p.name().to_string(), p.step()))
        .collect();
    let header = Header {
        config: trainer.cfg.clone(),
        growth_state: trainer.growth_state(),
        progress: trainer.progress,
        resolution: trainer.generator.resolution(),
        rng: RngState {
            seed: hex(&trainer.rng.get_seed()),
            stream: trainer.rng.get_stream(),
            word_pos: trainer.rng.get_word_pos().to_string(),
        },
        adam_steps,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    buf.extend((json.len() as u64).to_le_bytes());
    buf.extend(&json);
    let secs = sections(trainer);
    buf.extend((secs.len() as u32).to_le_bytes());
    for (name, t) in secs {
        put_tensor(&mut buf, &name, t);
    }
    Ok(buf)
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(trainer)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("bad shape".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

fn fill<M: Module>(module: &mut M, prefix: &str, tensors: &mut BTreeMap<String, Tensor>, adam: Option<&BTreeMap<String, u64>>) -> Result<()> {
    for p in module.parameters_mut() {
        let name = p.name().to_string();
        let mut take = |key: String| {
            tensors
                .remove(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing section {key}")))
        };
        let value = take(format!("{prefix}{name}"))?;
        p.set_value(value)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if let Some(steps) = adam {
            let m = take(format!("adam.m/{name}"))?;
            let v = take(format!("adam.v/{name}"))?;
            let step = *steps
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer step for {name}")))?;
            p.set_optimizer_state(m, v, step)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        }
    }
    Ok(())
}

/// Parse a checkpoint produced by [`checkpoint_bytes`].
pub fn trainer_from_bytes(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;
    let count = r.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        tensors.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last section".into()));
    }

    let cfg = header.config;
    cfg.validate()?;
    let schedule = Schedule::new(&cfg.schedule, cfg.generator.base_resolution, cfg.generator.max_resolution)?;
    // Structure only; every value is overwritten below.
    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut generator = Generator::new(cfg.generator.clone(), &mut scratch)?;
    let mut discriminator = Discriminator::new(cfg.discriminator.clone(), &mut scratch)?;
    if header.resolution > cfg.generator.max_resolution {
        return Err(Error::Checkpoint(format!("resolution {} beyond the config", header.resolution)));
    }
    while generator.resolution() < header.resolution {
        generator.grow(&mut scratch)?;
        discriminator.grow(&mut scratch)?;
    }
    let mut ema = generator.clone();
    fill(&mut generator, "", &mut tensors, Some(&header.adam_steps))?;
    fill(&mut discriminator, "", &mut tensors, Some(&header.adam_steps))?;
    fill(&mut ema, "ema/", &mut tensors, None)?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected section {extra}")));
    }

    let mut rng = ChaCha8Rng::from_seed(unhex(&header.rng.seed)?);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(
        header
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad RNG position".into()))?,
    );
    let trainer = Trainer {
        cfg,
        schedule,
        generator,
        discriminator,
        ema,
        progress: header.progress,
        rng,
    };
    if trainer.growth_state() != header.growth_state {
        return Err(Error::Checkpoint("growth state disagrees with the schedule position".into()));
    }
    Ok(trainer)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    trainer_from_bytes(&bytes)
}

impl Trainer {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path)
    }
}
