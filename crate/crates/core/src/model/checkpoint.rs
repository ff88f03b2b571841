//! Named-tensor checkpoint files.
//!
//! A checkpoint is a text manifest plus a flat binary blob of little-endian
//! `f32` values. The manifest layout is
//!
//! ```text
//! vdp-checkpoint v1
//! data <blob file name, relative to the manifest>
//! meta <key> <value…>          (zero or more)
//! tensor <name> <d0,d1,…> <byte offset>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffcore::Tensor;
use crate::error::{Result, VdpError};

pub const MAGIC: &str = "vdp-checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn write_tensor_file(manifest: &Path, file: &TensorFile) -> Result<()> {
    let blob = blob_path(manifest);
    let blob_name = blob
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| VdpError::format(manifest, "manifest path has no file name"))?
        .to_string();
    let mut text = format!("{MAGIC}\ndata {blob_name}\n");
    for (k, v) in &file.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(VdpError::format(manifest, format!("meta entry `{k}` is not representable")));
        }
        text.push_str(&format!("meta {k} {v}\n"));
    }
    let mut bytes = Vec::new();
    for (name, t) in &file.tensors {
        if name.contains(char::is_whitespace) {
            return Err(VdpError::format(manifest, format!("tensor name `{name}` contains whitespace")));
        }
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        text.push_str(&format!("tensor {name} {} {}\n", dims.join(","), bytes.len()));
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(manifest, text).map_err(|e| VdpError::io(manifest, e))?;
    fs::write(&blob, bytes).map_err(|e| VdpError::io(&blob, e))?;
    Ok(())
}

pub fn read_tensor_file(manifest: &Path) -> Result<TensorFile> {
    let text = fs::read_to_string(manifest).map_err(|e| VdpError::io(manifest, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(VdpError::format(manifest, format!("missing `{MAGIC}` header")));
    }
    let data_line = lines
        .next()
        .and_then(|l| l.strip_prefix("data "))
        .ok_or_else(|| VdpError::format(manifest, "missing `data` line"))?;
    let blob = manifest.with_file_name(data_line.trim());
    let bytes = fs::read(&blob).map_err(|e| VdpError::io(&blob, e))?;
    let mut out = TensorFile::default();
    for (lineno, line) in lines.enumerate() {
        let bad = |m: &str| VdpError::format(manifest, format!("line {}: {m}", lineno + 3));
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            out.meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            let [name, dims, offset] = parts[..] else {
                return Err(bad("expected `tensor <name> <dims> <offset>`"));
            };
            let shape = dims
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad dims"))?;
            let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
            let n: usize = shape.iter().product();
            let end = offset + 4 * n;
            if end > bytes.len() {
                return Err(bad("tensor extends past end of data"));
            }
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            out.tensors.push((name.to_string(), Tensor::new(&shape, data)?));
        } else if !line.trim().is_empty() {
            return Err(bad("unrecognized entry"));
        }
    }
    Ok(out)
}
