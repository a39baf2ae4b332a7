//! Portable binary tensor dumps and offline analysis of externally
//! produced query/key/hidden-state tensors.
//!
//! The SDHA container is deliberately trivial to parse from any
//! language: little-endian throughout, magic `SDHA`, `u32` version,
//! `u32` tensor count, then per tensor a length-prefixed UTF-8 name, a
//! dtype byte (0 = f32, 1 = f64), a rank byte, `u64` dims, and the
//! row-major payload, closed by a CRC32 of everything after the magic.
//! A JSON sidecar (`<path>.json`) carries the provenance manifest; its
//! `rope_applied` flag decides whether analysis rotates the tensors or
//! treats them as already rotated.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::{aligned_report_rows, spectral_report, AlignmentReport, SpectralReport};
use crate::rope::classic_frequencies;
use crate::slash::{attention_from_qk, detect_sdh, SlashConfig, SlashReport};

const MAGIC: &[u8; 4] = b"SDHA";
const VERSION: u32 = 1;

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn from_code(code: u8, offset: u64) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format {
                offset,
                message: format!("unknown dtype code {other}"),
            }),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Stored element data, kept at its original precision so round trips
/// are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(name: impl Into<String>, shape: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        let t = Tensor { name: name.into(), shape, data: TensorData::F64(values) };
        t.validate()?;
        Ok(t)
    }

    pub fn f32(name: impl Into<String>, shape: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        let t = Tensor { name: name.into(), shape, data: TensorData::F32(values) };
        t.validate()?;
        Ok(t)
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("tensor name must be nonempty"));
        }
        if self.name.contains('/') || self.name.contains('\\') {
            return Err(Error::invalid(format!(
                "tensor name '{}' must not contain path separators",
                self.name
            )));
        }
        let numel: u64 = self.shape.iter().product();
        if numel as usize != self.len() {
            return Err(Error::Corrupt {
                tensor: self.name.clone(),
                message: format!(
                    "shape {:?} implies {numel} elements, payload has {}",
                    self.shape,
                    self.len()
                ),
            });
        }
        Ok(())
    }

    /// Values widened to f64; exact for both stored precisions.
    pub fn values_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Interpret as a 2-d row-major matrix.
    pub fn matrix(&self) -> Result<Array2<f64>> {
        if self.shape.len() != 2 {
            return Err(Error::Corrupt {
                tensor: self.name.clone(),
                message: format!("expected rank 2, found shape {:?}", self.shape),
            });
        }
        let (n, m) = (self.shape[0] as usize, self.shape[1] as usize);
        Array2::from_shape_vec((n, m), self.values_f64()).map_err(|e| Error::Corrupt {
            tensor: self.name.clone(),
            message: e.to_string(),
        })
    }

    /// Interpret as a 1-d vector.
    pub fn vector(&self) -> Result<Array1<f64>> {
        if self.shape.len() != 1 {
            return Err(Error::Corrupt {
                tensor: self.name.clone(),
                message: format!("expected rank 1, found shape {:?}", self.shape),
            });
        }
        Ok(Array1::from(self.values_f64()))
    }
}

/// Provenance sidecar with a fixed key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: String,
    pub layer: u64,
    pub head: u64,
    pub context_len: u64,
    /// Whether RoPE was already applied to the stored Q/K. Analysis
    /// must rotate exactly once.
    pub rope_applied: bool,
    pub logit_scale_hint: f64,
    pub freq_base: f64,
}

/// A parsed dump: named tensors plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub tensors: Vec<Tensor>,
    pub manifest: Manifest,
}

impl TensorDump {
    pub fn new(tensors: Vec<Tensor>, manifest: Manifest) -> Result<Self> {
        for t in &tensors {
            t.validate()?;
        }
        for (i, a) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::invalid(format!("duplicate tensor name '{}'", a.name)));
            }
        }
        Ok(Self { tensors, manifest })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn required(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))
    }
}

/// Sidecar path: the dump path with `.json` appended.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Serialize a dump (and its manifest sidecar) to disk. Byte output is a
/// pure function of the content.
pub fn write_dump(dump: &TensorDump, path: &Path) -> Result<()> {
    for t in &dump.tensors {
        t.validate()?;
    }
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(&VERSION.to_le_bytes());
    body.extend_from_slice(&(dump.tensors.len() as u32).to_le_bytes());
    for t in &dump.tensors {
        let name = t.name.as_bytes();
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name);
        body.push(t.dtype().code());
        body.push(t.shape.len() as u8);
        for &d in &t.shape {
            body.extend_from_slice(&d.to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => {
                for x in v {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&body);

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&body)?;
    file.write_all(&crc.to_le_bytes())?;
    file.flush()?;

    let manifest_json = serde_json::to_string_pretty(&dump.manifest)?;
    std::fs::write(manifest_path(path), manifest_json)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Read and fully validate a dump written by [`write_dump`].
pub fn read_dump(path: &Path) -> Result<TensorDump> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected SDHA".into() });
    }
    if bytes.len() < 8 {
        return Err(Error::Format { offset: 4, message: "truncated before checksum".into() });
    }
    let body = &bytes[4..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored_crc != computed {
        return Err(Error::Format {
            offset: (bytes.len() - 4) as u64,
            message: format!("checksum mismatch: stored {stored_crc:#010x}, computed {computed:#010x}"),
        });
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name_bytes = cur.take(name_len, "tensor name")?;
        let name = String::from_utf8(name_bytes.to_vec()).map_err(|_| Error::Format {
            offset: cur.pos as u64,
            message: "tensor name is not valid UTF-8".into(),
        })?;
        let dtype = DType::from_code(cur.u8("dtype")?, cur.pos as u64)?;
        let ndim = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64("dimension")?);
        }
        let numel: u64 = shape.iter().product();
        let payload_bytes = numel as usize * dtype.size();
        let payload = cur.take(payload_bytes, &format!("payload of '{name}'"))?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let tensor = Tensor { name, shape, data };
        tensor.validate()?;
        tensors.push(tensor);
    }
    if cur.pos != body.len() {
        return Err(Error::Format {
            offset: (4 + cur.pos) as u64,
            message: format!("{} trailing bytes after the last tensor", body.len() - cur.pos),
        });
    }

    let mpath = manifest_path(path);
    let manifest_raw = std::fs::read_to_string(&mpath).map_err(|e| Error::Format {
        offset: 0,
        message: format!("manifest sidecar {} unreadable: {e}", mpath.display()),
    })?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)?;
    TensorDump::new(tensors, manifest)
}

/// Report bundle produced by [`analyze_dump`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DumpAnalysis {
    pub slash: Option<SlashReport>,
    /// Spectral report per analyzed tensor name.
    pub spectral: Vec<(String, SpectralReport)>,
    /// Alignment of hidden-state rows against each weight matrix.
    pub alignment: Vec<(String, AlignmentReport)>,
}

/// Analyze a dump: slash scores from `Q`/`K`, spectral reports for every
/// recognized tensor, and hidden-state alignment against `W_Q`/`W_K`
/// (with the `b_Q`/`b_K` bias vectors when present).
///
/// RoPE is applied exactly once: tensors dumped pre-rotation are rotated
/// with the classic frequencies derived from the manifest's `freq_base`;
/// tensors dumped post-rotation are scored as-is. Results do not depend
/// on the order of tensors in the file.
pub fn analyze_dump(
    dump: &TensorDump,
    slash_config: &SlashConfig,
    tau: f64,
) -> Result<DumpAnalysis> {
    let has_qk = dump.get("Q").is_some() && dump.get("K").is_some();
    let has_wh = dump.get("H").is_some()
        && (dump.get("W_Q").is_some() || dump.get("W_K").is_some());
    if !has_qk && !has_wh {
        return Err(Error::MissingTensor(
            "need tensors Q and K, or H with W_Q or W_K".into(),
        ));
    }

    let mut slash = None;
    if has_qk {
        let q = dump.required("Q")?.matrix()?;
        let k = dump.required("K")?.matrix()?;
        let freqs = if dump.manifest.rope_applied {
            None
        } else {
            Some(classic_frequencies(q.ncols(), dump.manifest.freq_base)?)
        };
        let s = attention_from_qk(q.view(), k.view(), freqs.as_ref(), slash_config)?;
        slash = Some(detect_sdh(std::slice::from_ref(&s), slash_config)?);
    }

    let mut spectral = Vec::new();
    for name in ["Q", "K", "H", "W_Q", "W_K"] {
        if let Some(t) = dump.get(name) {
            spectral.push((name.to_string(), spectral_report(t.matrix()?.view(), tau)?));
        }
    }

    let mut alignment = Vec::new();
    if let Some(h) = dump.get("H") {
        let h = h.matrix()?;
        for (w_name, b_name) in [("W_Q", "b_Q"), ("W_K", "b_K")] {
            if let Some(w) = dump.get(w_name) {
                let w = w.matrix()?;
                let bias = match dump.get(b_name) {
                    Some(b) => Some(b.vector()?),
                    None => None,
                };
                let report =
                    aligned_report_rows(h.view(), w.view(), bias.as_ref().map(|b| b.view()), tau)?;
                alignment.push((w_name.to_string(), report));
            }
        }
    }

    Ok(DumpAnalysis { slash, spectral, alignment })
}
