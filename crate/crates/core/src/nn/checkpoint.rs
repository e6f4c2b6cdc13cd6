//! Network checkpoint format.
//!
//! A checkpoint is a text header followed by a raw little-endian `f32`
//! parameter blob in canonical order (per layer: weights row-major, then
//! bias):
//!
//! ```text
//! densenet v1
//! seed: 7
//! layers: 2
//! layer: 1024 128 tanh
//! layer: 128 32 identity
//! params: 135328
//! data:
//! <raw LE f32 blob>
//! ```
//!
//! Loading validates dimension chaining and the exact blob length.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Activation, DenseNet};

const MAGIC: &str = "densenet v1";

pub fn save_net<T: Scalar>(net: &DenseNet<T>, path: &Path) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("seed: {}\n", net.seed()));
    header.push_str(&format!("layers: {}\n", net.layers().len()));
    for l in net.layers() {
        header.push_str(&format!(
            "layer: {} {} {}\n",
            l.in_dim(),
            l.out_dim(),
            l.activation().name()
        ));
    }
    header.push_str(&format!("params: {}\n", net.param_count()));
    header.push_str("data:\n");

    let mut blob = Vec::with_capacity(net.param_count() * 4);
    net.for_each_param(|v| blob.extend_from_slice(&(v as f32).to_le_bytes()));

    let mut file = fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&blob)?;
    Ok(())
}

pub fn load_net<T: Scalar>(path: &Path) -> Result<DenseNet<T>> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;

    let marker = b"data:\n";
    let data_at = find(&raw, marker)
        .ok_or_else(|| Error::Load(format!("{}: missing data marker", path.display())))?;
    let header = std::str::from_utf8(&raw[..data_at])
        .map_err(|_| Error::Load(format!("{}: header is not utf-8", path.display())))?;
    let blob = &raw[data_at + marker.len()..];

    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(Error::Load(format!(
            "unsupported checkpoint format {magic:?} (expected {MAGIC:?})"
        )));
    }

    let mut seed = 0u64;
    let mut n_layers = 0usize;
    let mut spec: Vec<(usize, usize, Activation)> = Vec::new();
    let mut params = 0usize;
    for line in lines {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Load(format!("malformed header line {line:?}")))?;
        let value = value.trim();
        match key {
            "seed" => seed = parse(value, "seed")?,
            "layers" => n_layers = parse(value, "layers")?,
            "params" => params = parse(value, "params")?,
            "layer" => {
                let mut it = value.split_whitespace();
                let in_dim = parse(it.next().unwrap_or_default(), "layer in dim")?;
                let out_dim = parse(it.next().unwrap_or_default(), "layer out dim")?;
                let act = Activation::parse(it.next().unwrap_or_default())?;
                spec.push((in_dim, out_dim, act));
            }
            other => return Err(Error::Load(format!("unknown header key {other:?}"))),
        }
    }

    if spec.len() != n_layers {
        return Err(Error::Load(format!(
            "header claims {n_layers} layers but lists {}",
            spec.len()
        )));
    }
    if spec.is_empty() {
        return Err(Error::Load("checkpoint has no layers".into()));
    }
    for w in spec.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(Error::Load(format!(
                "layer dims do not chain: {} -> {}",
                w[0].1, w[1].0
            )));
        }
    }
    let expected: usize = spec.iter().map(|&(i, o, _)| i * o + o).sum();
    if expected != params {
        return Err(Error::Load(format!(
            "header claims {params} params but dims imply {expected}"
        )));
    }
    if blob.len() != params * 4 {
        return Err(Error::Load(format!(
            "parameter blob is {} bytes, expected {}",
            blob.len(),
            params * 4
        )));
    }

    let mut dims: Vec<usize> = vec![spec[0].0];
    dims.extend(spec.iter().map(|&(_, o, _)| o));
    let acts: Vec<Activation> = spec.iter().map(|&(_, _, a)| a).collect();
    let mut net = DenseNet::<T>::new(&dims, &acts, seed)?;

    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for l in 0..net.layers().len() {
        let (weights, bias) = net.layer_params_mut(l);
        for slot in weights.iter_mut().chain(bias.iter_mut()) {
            *slot = T::of(values.next().expect("length validated") as f64);
        }
    }
    Ok(net)
}

fn parse<V: std::str::FromStr>(s: &str, what: &str) -> Result<V> {
    s.parse()
        .map_err(|_| Error::Load(format!("cannot parse {what} from {s:?}")))
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}
