//! Binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "IFLWCKP1"
//! manifest     u64 length, then UTF-8 `key = value` lines
//! count        u32
//! per tensor   u32 name length, name, u32 rank, rank × u64 dims, f64 values
//! ```
//!
//! The manifest describes the method row, backbone, partition and attention
//! setup; the tensors hold every parameter plus the BN running statistics.
//! Values are stored as raw bits, so a round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interflow::attention::AttentionMode;
use crate::interflow::backbone::BackboneSpec;
use crate::interflow::method::MethodConfig;
use crate::interflow::model::{AttentionInit, AttentionSpec, InterflowModel, ModelSpec, NoiseSource};
use crate::interflow::partition::StagePartition;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IFLWCKP1";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn manifest(model: &InterflowModel, method: Option<&MethodConfig>) -> String {
    let spec = model.spec();
    let mut lines = Vec::new();
    if let Some(m) = method {
        lines.push(format!("method = {}", m.name));
        lines.push(format!("interflow = {}", m.interflow));
        lines.push(format!("branches = {}", m.branches));
        lines.push(format!("shared_per_class = {}", m.shared_per_class));
        lines.push(format!("initialization = {}", m.initialization));
        lines.push(format!("learned = {}", m.learned));
    }
    lines.push(format!("input_channels = {}", spec.backbone.input_channels));
    lines.push(format!("channels = {}", join(&spec.backbone.channels)));
    lines.push(format!("strides = {}", join(&spec.backbone.strides)));
    lines.push(format!("boundaries = {}", join(spec.partition.boundaries())));
    lines.push(format!("num_classes = {}", spec.num_classes));
    lines.push(format!("share_heads = {}", spec.share_heads));
    match &spec.attention {
        None => lines.push("attention = none".into()),
        Some(a) => {
            lines.push(format!("attention = {}", a.mode));
            match &a.init {
                AttentionInit::Random => lines.push("attention_init = random".into()),
                AttentionInit::Fixed(w) => lines.push(format!("attention_init = fixed:{}", join(w))),
            }
        }
    }
    let frozen: Vec<&str> = model
        .params
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.name.as_str())
        .collect();
    lines.push(format!("frozen = {}", frozen.join(",")));
    let noise: Vec<String> = model
        .blocks
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.noise.as_ref().map(|n| format!("{}:{}:{}", i + 1, n.seed, n.draws)))
        .collect();
    lines.push(format!("noise = {}", noise.join(",")));
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

/// Encodes `model` into checkpoint bytes.
pub fn checkpoint_bytes(model: &InterflowModel, method: Option<&MethodConfig>) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = model.params.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    let mut stats = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        let c = b.bn.channels();
        stats.push((format!("bn{}.running_mean", i + 1), Tensor::new(vec![c], b.bn.running_mean.clone()).expect("c >= 1")));
        stats.push((format!("bn{}.running_var", i + 1), Tensor::new(vec![c], b.bn.running_var.clone()).expect("c >= 1")));
    }
    tensors.extend(stats.iter().map(|(n, t)| (n.clone(), t)));

    let text = manifest(model, method);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &InterflowModel, method: Option<&MethodConfig>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, method)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(InterflowModel, Option<MethodConfig>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    from_checkpoint_bytes(&bytes).map_err(|e| match e {
        Error::Format { offset, message, .. } => Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        },
        other => other,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("<checkpoint>", self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::format("<checkpoint>", MAGIC.len() + 8, msg)
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| manifest_err(format!("bad {key} entry {s:?}"))))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    v.parse().map_err(|_| manifest_err(format!("bad {key} value {v:?}")))
}

/// Decodes bytes produced by [`checkpoint_bytes`].
pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(InterflowModel, Option<MethodConfig>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("<checkpoint>", 0, "bad magic"));
    }
    let len = r.u64("manifest length")? as usize;
    let text = std::str::from_utf8(r.take(len, "manifest")?).map_err(|_| manifest_err("manifest is not UTF-8"))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| manifest_err(format!("bad manifest line {line:?}")))?;
        kv.insert(k.trim(), v.trim());
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| manifest_err(format!("manifest lacks {k}")));

    let method = match kv.get("method") {
        None => None,
        Some(name) => Some(MethodConfig {
            name: name.to_string(),
            interflow: parse_bool("interflow", get("interflow")?)?,
            branches: get("branches")?.parse().map_err(|_| manifest_err("bad branches"))?,
            shared_per_class: parse_bool("shared_per_class", get("shared_per_class")?)?,
            initialization: parse_bool("initialization", get("initialization")?)?,
            learned: parse_bool("learned", get("learned")?)?,
        }),
    };

    let backbone = BackboneSpec {
        input_channels: get("input_channels")?.parse().map_err(|_| manifest_err("bad input_channels"))?,
        channels: parse_list("channels", get("channels")?)?,
        strides: parse_list("strides", get("strides")?)?,
    };
    let partition = StagePartition::new(parse_list("boundaries", get("boundaries")?)?, backbone.depth())?;
    let attention = match get("attention")? {
        "none" => None,
        mode => {
            let mode: AttentionMode = mode.parse()?;
            let init = match get("attention_init")? {
                "random" => AttentionInit::Random,
                s => match s.strip_prefix("fixed:") {
                    Some(list) => AttentionInit::Fixed(parse_list("attention_init", list)?),
                    None => return Err(manifest_err(format!("bad attention_init {s:?}"))),
                },
            };
            Some(AttentionSpec { mode, init })
        }
    };
    let spec = ModelSpec {
        backbone,
        partition,
        attention,
        num_classes: get("num_classes")?.parse().map_err(|_| manifest_err("bad num_classes"))?,
        share_heads: parse_bool("share_heads", get("share_heads")?)?,
    };
    let mut model = InterflowModel::new(spec, 0)?;

    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let start = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format("<checkpoint>", start, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format("<checkpoint>", start, "tensor too large"))?, "values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format("<checkpoint>", start, e.to_string()))?;
        tensors.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("<checkpoint>", r.pos, "trailing bytes"));
    }

    let mut take = |name: &str| tensors.remove(name).ok_or_else(|| manifest_err(format!("checkpoint lacks tensor {name}")));
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.get(id).name.clone();
        model.params.set_value(id, take(&name)?)?;
    }
    for (i, block) in model.blocks.iter_mut().enumerate() {
        let mean = take(&format!("bn{}.running_mean", i + 1))?;
        let var = take(&format!("bn{}.running_var", i + 1))?;
        if mean.len() != block.bn.channels() || var.len() != block.bn.channels() {
            return Err(manifest_err(format!("running statistics of bn{} have the wrong size", i + 1)));
        }
        block.bn.running_mean = mean.into_data();
        block.bn.running_var = var.into_data();
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(manifest_err(format!("unexpected tensor {extra}")));
    }

    for name in parse_list::<String>("frozen", get("frozen")?)? {
        let id = model.params.find(&name).ok_or_else(|| manifest_err(format!("unknown frozen parameter {name}")))?;
        model.params.get_mut(id).trainable = false;
    }
    for entry in parse_list::<String>("noise", get("noise")?)? {
        let parts: Vec<u64> = entry
            .split(':')
            .map(|s| s.parse().map_err(|_| manifest_err(format!("bad noise entry {entry:?}"))))
            .collect::<Result<_>>()?;
        let [layer, seed, draws] = parts[..] else {
            return Err(manifest_err(format!("bad noise entry {entry:?}")));
        };
        let block = model
            .blocks
            .get_mut((layer as usize).wrapping_sub(1))
            .ok_or_else(|| manifest_err(format!("noise layer {layer} out of range")))?;
        block.noise = Some(NoiseSource { seed, draws });
    }
    Ok((model, method))
}
