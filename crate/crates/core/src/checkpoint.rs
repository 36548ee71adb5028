//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "TFGW"  u32 version  u32 block_count
//! block*: u32 name_len  name (UTF-8)  u32 ndim  u64 dims[ndim]  f64 data[prod(dims)]
//! ```
//!
//! Blocks appear in this order: `meta`, `gin.{l}.*`, `template.{k}.*`,
//! `alpha`, `head.{i}.*`. Floats are stored bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::fgw::CgOptions;
use crate::graph::StructureKind;
use crate::layer::Template;
use crate::nn::{BatchNorm, Gin, GinLayer, Linear, Mlp};
use crate::trainer::TfgwModel;

pub const MAGIC: &[u8; 4] = b"TFGW";
pub const VERSION: u32 = 1;

struct Block {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn block1(name: String, a: &Array1<f64>) -> Block {
    Block {
        name,
        dims: vec![a.len()],
        data: a.to_vec(),
    }
}

fn block2(name: String, a: &Array2<f64>) -> Block {
    Block {
        name,
        dims: vec![a.nrows(), a.ncols()],
        data: a.iter().copied().collect(),
    }
}

fn scalars(name: &str, v: &[f64]) -> Block {
    Block {
        name: name.into(),
        dims: vec![v.len()],
        data: v.to_vec(),
    }
}

fn linear_blocks(prefix: &str, l: &Linear, out: &mut Vec<Block>) {
    out.push(block2(format!("{prefix}.weight"), &l.weight));
    out.push(block1(format!("{prefix}.bias"), &l.bias));
}

fn model_blocks(model: &TfgwModel) -> Vec<Block> {
    let kind = match model.structure_kind {
        StructureKind::Adjacency => 0.0,
        StructureKind::ShortestPath => 1.0,
    };
    let gin_layers = model.gin.as_ref().map_or(0, |g| g.layers.len());
    let mut out = vec![scalars(
        "meta",
        &[
            kind,
            gin_layers as f64,
            model.templates.len() as f64,
            model.head.dropout,
            model.cg.max_iterations as f64,
            model.cg.relative_tolerance,
            model.cg.starts as f64,
        ],
    )];
    if let Some(gin) = &model.gin {
        for (l, layer) in gin.layers.iter().enumerate() {
            linear_blocks(&format!("gin.{l}.lin1"), &layer.lin1, &mut out);
            out.push(block1(format!("gin.{l}.bn.gamma"), &layer.bn.gamma));
            out.push(block1(format!("gin.{l}.bn.beta"), &layer.bn.beta));
            out.push(block1(format!("gin.{l}.bn.running_mean"), &layer.bn.running_mean));
            out.push(block1(format!("gin.{l}.bn.running_var"), &layer.bn.running_var));
            out.push(scalars(
                &format!("gin.{l}.scalars"),
                &[layer.bn.momentum, layer.bn.eps, layer.eps],
            ));
            linear_blocks(&format!("gin.{l}.lin2"), &layer.lin2, &mut out);
        }
    }
    for (k, t) in model.templates.iter().enumerate() {
        out.push(block2(format!("template.{k}.structure"), &t.structure));
        out.push(block2(format!("template.{k}.features"), &t.features));
        out.push(block1(format!("template.{k}.weights"), &t.weights));
    }
    out.push(Block {
        name: "alpha".into(),
        dims: Vec::new(),
        data: vec![model.alpha],
    });
    for (i, l) in model.head.layers.iter().enumerate() {
        linear_blocks(&format!("head.{i}"), l, &mut out);
    }
    out
}

/// Serializes `model` into the checkpoint byte format.
pub fn to_bytes(model: &TfgwModel) -> Vec<u8> {
    let blocks = model_blocks(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in &blocks {
        buf.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(b.name.as_bytes());
        buf.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
        for &d in &b.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &b.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("file is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_blocks(bytes: &[u8]) -> Result<Vec<Block>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("not a TFGW checkpoint (bad magic bytes)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let count = c.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| bad("block name is not UTF-8"))?
            .to_string();
        let ndim = c.u32()? as usize;
        if ndim > 2 {
            return Err(bad(format!("block {name} has {ndim} dimensions")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(usize::try_from(c.u64()?).map_err(|_| bad("dimension overflows"))?);
        }
        let size = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|s| s.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| bad(format!("block {name} is larger than the file")))?;
        let raw = c.take(size * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Block { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after the last block"));
    }
    Ok(blocks)
}

struct Blocks(HashMap<String, Block>);

impl Blocks {
    fn get(&mut self, name: &str, ndim: usize) -> Result<Block> {
        let b = self.0.remove(name).ok_or_else(|| bad(format!("missing block {name}")))?;
        if b.dims.len() != ndim {
            return Err(bad(format!("block {name} has {} dimensions, expected {ndim}", b.dims.len())));
        }
        Ok(b)
    }

    fn vec(&mut self, name: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.get(name, 1)?.data))
    }

    fn mat(&mut self, name: &str) -> Result<Array2<f64>> {
        let b = self.get(name, 2)?;
        Array2::from_shape_vec((b.dims[0], b.dims[1]), b.data).map_err(|e| bad(e.to_string()))
    }

    fn linear(&mut self, prefix: &str) -> Result<Linear> {
        let weight = self.mat(&format!("{prefix}.weight"))?;
        let bias = self.vec(&format!("{prefix}.bias"))?;
        if bias.len() != weight.ncols() {
            return Err(bad(format!("{prefix} bias does not match its weight")));
        }
        Ok(Linear { weight, bias })
    }
}

fn count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e9 {
        Ok(x as usize)
    } else {
        Err(bad(format!("invalid {what} {x}")))
    }
}

/// Parses a checkpoint produced by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<TfgwModel> {
    let list = parse_blocks(bytes)?;
    let n = list.len();
    let mut blocks = Blocks(list.into_iter().map(|b| (b.name.clone(), b)).collect());
    if blocks.0.len() != n {
        return Err(bad("duplicate block names"));
    }
    let meta = blocks.get("meta", 1)?.data;
    if meta.len() != 7 {
        return Err(bad("meta block has the wrong length"));
    }
    let structure_kind = match meta[0] {
        k if k == 0.0 => StructureKind::Adjacency,
        k if k == 1.0 => StructureKind::ShortestPath,
        k => return Err(bad(format!("unknown structure kind {k}"))),
    };
    let gin_layers = count(meta[1], "layer count")?;
    let k = count(meta[2], "template count")?;
    let gin = if gin_layers == 0 {
        None
    } else {
        let mut layers = Vec::with_capacity(gin_layers);
        for l in 0..gin_layers {
            let lin1 = blocks.linear(&format!("gin.{l}.lin1"))?;
            let gamma = blocks.vec(&format!("gin.{l}.bn.gamma"))?;
            let beta = blocks.vec(&format!("gin.{l}.bn.beta"))?;
            let running_mean = blocks.vec(&format!("gin.{l}.bn.running_mean"))?;
            let running_var = blocks.vec(&format!("gin.{l}.bn.running_var"))?;
            let s = blocks.vec(&format!("gin.{l}.scalars"))?;
            if s.len() != 3 {
                return Err(bad(format!("gin.{l}.scalars has the wrong length")));
            }
            let lin2 = blocks.linear(&format!("gin.{l}.lin2"))?;
            layers.push(GinLayer {
                lin1,
                bn: BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    momentum: s[0],
                    eps: s[1],
                },
                lin2,
                eps: s[2],
            });
        }
        Some(Gin { layers })
    };
    let mut templates = Vec::with_capacity(k);
    for i in 0..k {
        templates.push(Template {
            structure: blocks.mat(&format!("template.{i}.structure"))?,
            features: blocks.mat(&format!("template.{i}.features"))?,
            weights: blocks.vec(&format!("template.{i}.weights"))?,
        });
    }
    let alpha = blocks.get("alpha", 0)?.data[0];
    let head = Mlp {
        layers: [blocks.linear("head.0")?, blocks.linear("head.1")?, blocks.linear("head.2")?],
        dropout: meta[3],
    };
    if let Some(name) = blocks.0.keys().min() {
        return Err(bad(format!("unexpected block {name}")));
    }
    let model = TfgwModel {
        gin,
        templates,
        alpha,
        head,
        structure_kind,
        cg: CgOptions {
            max_iterations: count(meta[4], "iteration cap")?,
            relative_tolerance: meta[5],
            starts: count(meta[6], "start count")?,
            ..CgOptions::default()
        },
    };
    model.validate().map_err(|e| bad(format!("inconsistent model: {e}")))?;
    Ok(model)
}

pub fn save_checkpoint(model: &TfgwModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TfgwModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
