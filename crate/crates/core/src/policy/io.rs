//! On-disk policy container.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes  "DRPOLICY"
//! version   u32      currently 1
//! scalar    u8 len + ascii name ("f32" / "f64"), informational
//! obs_dim   u32
//! act_dim   u32
//! n_hidden  u32, then n_hidden x u32 hidden sizes
//! n_arrays  u32
//! per array:
//!   name    u16 len + utf-8
//!   ndim    u8, then ndim x u32 dims
//!   values  product(dims) x f64
//! ```
//!
//! Values are always stored as `f64`, so `f32` policies round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{init_policy, Mlp, PolicyParams, PolicySpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"DRPOLICY";
const VERSION: u32 = 1;

fn net_arrays<'a, T: Real>(prefix: &str, net: &'a Mlp<T>, out: &mut Vec<(String, Vec<usize>, &'a [T])>) {
    for (i, layer) in net.layers.iter().enumerate() {
        out.push((
            format!("{prefix}.{i}.weight"),
            layer.weight.shape().to_vec(),
            layer.weight.as_slice().expect("standard layout"),
        ));
        out.push((
            format!("{prefix}.{i}.bias"),
            layer.bias.shape().to_vec(),
            layer.bias.as_slice().expect("standard layout"),
        ));
    }
}

fn named_arrays<T: Real>(params: &PolicyParams<T>) -> Vec<(String, Vec<usize>, &[T])> {
    let mut out = Vec::new();
    net_arrays("mean", &params.mean_net, &mut out);
    out.push((
        "log_std".to_string(),
        params.log_std.shape().to_vec(),
        params.log_std.as_slice().expect("standard layout"),
    ));
    net_arrays("value", &params.value_net, &mut out);
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::PolicyFormat(msg.into())
}

pub fn write_policy<T: Real, W: Write>(params: &PolicyParams<T>, mut w: W) -> Result<()> {
    let spec = &params.spec;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(T::NAME.len() as u8)?;
    w.write_all(T::NAME.as_bytes())?;
    w.write_u32::<LittleEndian>(spec.obs_dim as u32)?;
    w.write_u32::<LittleEndian>(spec.act_dim as u32)?;
    w.write_u32::<LittleEndian>(spec.hidden_sizes.len() as u32)?;
    for &h in &spec.hidden_sizes {
        w.write_u32::<LittleEndian>(h as u32)?;
    }
    let arrays = named_arrays(params);
    w.write_u32::<LittleEndian>(arrays.len() as u32)?;
    for (name, dims, values) in arrays {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(dims.len() as u8)?;
        for d in dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in values {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
    }
    Ok(())
}

pub fn read_policy<T: Real, R: Read>(mut r: R) -> Result<PolicyParams<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a policy file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let name_len = r.read_u8()? as usize;
    let mut scalar = vec![0u8; name_len];
    r.read_exact(&mut scalar)?;
    let obs_dim = r.read_u32::<LittleEndian>()? as usize;
    let act_dim = r.read_u32::<LittleEndian>()? as usize;
    let n_hidden = r.read_u32::<LittleEndian>()? as usize;
    if n_hidden > 64 {
        return Err(bad(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.read_u32::<LittleEndian>().map(|h| h as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let spec = PolicySpec::with_hidden(obs_dim, act_dim, hidden);
    spec.validate().map_err(|e| bad(e.to_string()))?;

    // Build a template with the right shapes, then fill it.
    let mut params: PolicyParams<T> = init_policy(&spec, 0)?;
    let expected: Vec<(String, Vec<usize>)> = named_arrays(&params).into_iter().map(|(n, d, _)| (n, d)).collect();
    let n_arrays = r.read_u32::<LittleEndian>()? as usize;
    if n_arrays != expected.len() {
        return Err(bad(format!("expected {} arrays, found {n_arrays}", expected.len())));
    }
    let mut slots = params.tensors_mut();
    for ((exp_name, exp_dims), slot) in expected.iter().zip(slots.iter_mut()) {
        let len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("array name is not utf-8"))?;
        if &name != exp_name {
            return Err(bad(format!("expected array {exp_name}, found {name}")));
        }
        let ndim = r.read_u8()? as usize;
        let dims = (0..ndim)
            .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        if &dims != exp_dims {
            return Err(bad(format!("array {name}: dims {dims:?}, expected {exp_dims:?}")));
        }
        for v in slot.iter_mut() {
            *v = T::lit(r.read_f64::<LittleEndian>()?);
        }
    }
    drop(slots);
    if !params.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(params)
}

pub fn save_policy<T: Real>(params: &PolicyParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_policy(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_policy<T: Real>(path: impl AsRef<Path>) -> Result<PolicyParams<T>> {
    read_policy(BufReader::new(File::open(path)?))
}
