//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, u32 format version, u32-length-prefixed UTF-8
//! architecture descriptor, u64 value count, little-endian f64 values, and a
//! trailing SHA-256 of everything before it. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use vaelens::linalg::DenseMatrix;
use vaelens::nn::{Layer, Mlp};
use vaelens::vae::{Likelihood, VaeModel};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"VAELENS\x01";
pub const FORMAT_VERSION: u32 = 1;

const NET_NAMES: [&str; 5] = ["trunk", "mu", "logsigma", "decoder", "decoder-logsigma"];

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

fn describe_net(name: &str, net: &Mlp) -> String {
    let mut s = format!("net {name} {}", net.input_dim());
    for layer in net.layers() {
        match layer {
            Layer::Affine { weight, .. } => s += &format!(" affine:{}>{}", weight.cols(), weight.rows()),
            Layer::Tanh => s += " tanh",
            Layer::Sigmoid => s += " sigmoid",
            Layer::FrozenNorm { scale, .. } => s += &format!(" frozen-norm:{}", scale.len()),
        }
    }
    s
}

/// Layer kinds and dimensions of every network, one line per network.
pub fn architecture_descriptor(model: &VaeModel) -> String {
    model
        .networks()
        .iter()
        .zip(NET_NAMES)
        .map(|(net, name)| describe_net(name, net))
        .collect::<Vec<_>>()
        .join("\n")
}

fn descriptor(model: &VaeModel) -> String {
    format!(
        "likelihood {}\nbeta {}\n{}",
        model.likelihood().name(),
        model.beta(),
        architecture_descriptor(model)
    )
}

fn values(model: &VaeModel) -> Vec<f64> {
    let mut out = Vec::new();
    for net in model.networks() {
        for layer in net.layers() {
            match layer {
                Layer::Affine { weight, bias } => {
                    out.extend_from_slice(weight.as_slice());
                    out.extend_from_slice(bias);
                }
                Layer::FrozenNorm { scale, shift } => {
                    out.extend_from_slice(scale);
                    out.extend_from_slice(shift);
                }
                Layer::Tanh | Layer::Sigmoid => {}
            }
        }
    }
    out
}

pub fn encode(model: &VaeModel) -> Vec<u8> {
    let desc = descriptor(model);
    let vals = values(model);
    let mut buf = Vec::with_capacity(64 + desc.len() + 8 * vals.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    buf.extend_from_slice(desc.as_bytes());
    buf.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    for v in &vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| bad(format!("truncated while reading {what}")))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_net(line: &str, vals: &mut impl Iterator<Item = f64>) -> Result<(String, Mlp)> {
    let mut tok = line.split_whitespace();
    if tok.next() != Some("net") {
        return Err(bad(format!("expected a network line, got '{line}'")));
    }
    let name = tok.next().ok_or_else(|| bad("network line without a name"))?.to_string();
    let input_dim: usize = tok
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad(format!("network {name} has no input dimension")))?;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = vals.take(n).collect();
        if v.len() != n {
            return Err(bad("parameter blob shorter than the descriptor requires"));
        }
        Ok(v)
    };
    let mut layers = Vec::new();
    for t in tok {
        let layer = match t.split_once(':') {
            None if t == "tanh" => Layer::Tanh,
            None if t == "sigmoid" => Layer::Sigmoid,
            Some(("affine", dims)) => {
                let (i, o) = dims
                    .split_once('>')
                    .and_then(|(i, o)| Some((i.parse::<usize>().ok()?, o.parse::<usize>().ok()?)))
                    .ok_or_else(|| bad(format!("bad affine layer '{t}'")))?;
                let w = DenseMatrix::from_row_major(o, i, take(o * i)?)?;
                Layer::affine(w, take(o)?)?
            }
            Some(("frozen-norm", n)) => {
                let n: usize = n.parse().map_err(|_| bad(format!("bad norm layer '{t}'")))?;
                Layer::FrozenNorm { scale: take(n)?, shift: take(n)? }
            }
            _ => return Err(bad(format!("unknown layer '{t}'"))),
        };
        layers.push(layer);
    }
    Ok((name, Mlp::new(input_dim, layers)?))
}

pub fn decode(bytes: &[u8]) -> Result<VaeModel> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, at: MAGIC.len() };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let dlen = r.u32("descriptor length")? as usize;
    let desc = std::str::from_utf8(r.take(dlen, "descriptor")?).map_err(|_| bad("descriptor is not UTF-8"))?;
    let count = r.u64("value count")? as usize;
    let blob = r.take(count.checked_mul(8).ok_or_else(|| bad("value count overflows"))?, "parameters")?;
    if r.at != body.len() {
        return Err(bad("trailing bytes after parameters"));
    }
    let mut vals = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));

    let mut lines = desc.lines();
    let likelihood = lines
        .next()
        .and_then(|l| l.strip_prefix("likelihood "))
        .ok_or_else(|| bad("missing likelihood"))
        .and_then(|s| Likelihood::parse(s).map_err(|e| bad(e.to_string())))?;
    let beta: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("beta "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("missing beta"))?;
    let mut nets = Vec::new();
    for (line, expect) in lines.zip(NET_NAMES) {
        let (name, net) = parse_net(line, &mut vals)?;
        if name != expect {
            return Err(bad(format!("expected network '{expect}', found '{name}'")));
        }
        nets.push(net);
    }
    if vals.next().is_some() {
        return Err(bad("parameter blob longer than the descriptor requires"));
    }
    if nets.len() < 4 {
        return Err(bad(format!("descriptor lists {} networks, need at least 4", nets.len())));
    }
    let dec_ls = if nets.len() == 5 { nets.pop() } else { None };
    let mut it = nets.into_iter();
    let (trunk, mu, ls, dec) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(VaeModel::from_parts(trunk, mu, ls, dec, dec_ls, beta, likelihood)?)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling file, syncs it, and renames it over
/// `path`. On failure the temporary file is removed and `path` is untouched.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(HarnessError::io(path, e));
    }
    Ok(())
}

pub fn save(model: &VaeModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path) -> Result<VaeModel> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        HarnessError::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Fails unless `model` has the same layer structure as `expected`.
pub fn check_architecture(model: &VaeModel, expected: &VaeModel) -> Result<()> {
    let (got, want) = (architecture_descriptor(model), architecture_descriptor(expected));
    if got != want {
        return Err(bad(format!(
            "architecture mismatch (format version {FORMAT_VERSION}): checkpoint has\n{got}\nbut the configuration expects\n{want}"
        )));
    }
    Ok(())
}
