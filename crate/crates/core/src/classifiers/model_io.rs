//! Binary model files.
//!
//! Layout (little-endian): `"SPCM"`, version `u16`, kind `u8`, feature
//! config hash `u64`, payload, then a CRC32 of every preceding byte.

use std::path::Path;

use super::gbdt::{GbdtModel, GrowPreset, Node, Tree};
use super::gmm::{GmmModel, GmmPairCm};
use super::ClassifierError;

pub const MODEL_MAGIC: &[u8; 4] = b"SPCM";
pub const MODEL_VERSION: u16 = 1;
const KIND_GMM: u8 = 1;
const KIND_GBDT: u8 = 2;
const HEADER_LEN: usize = 4 + 2 + 1 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum CmModel {
    Gmm(GmmPairCm),
    Gbdt(GbdtModel),
}

impl CmModel {
    pub fn feature_config_hash(&self) -> u64 {
        match self {
            CmModel::Gmm(m) => m.feature_config_hash,
            CmModel::Gbdt(m) => m.feature_config_hash,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CmModel::Gmm(_) => "gmm",
            CmModel::Gbdt(m) => match m.preset {
                GrowPreset::Depthwise => "gbdt-depthwise",
                GrowPreset::Symmetric => "gbdt-symmetric",
            },
        }
    }
}

fn put_gmm(out: &mut Vec<u8>, m: &GmmModel) {
    out.extend_from_slice(&(m.num_components() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for v in m.weights.iter().chain(&m.means).chain(&m.covariances) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_gbdt(out: &mut Vec<u8>, m: &GbdtModel) {
    out.extend_from_slice(&m.learning_rate.to_le_bytes());
    out.extend_from_slice(&m.base_score.to_le_bytes());
    out.push(match m.preset {
        GrowPreset::Depthwise => 0,
        GrowPreset::Symmetric => 1,
    });
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    out.extend_from_slice(&(m.trees.len() as u32).to_le_bytes());
    for t in &m.trees {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for n in &t.nodes {
            match *n {
                Node::Leaf(v) => {
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(1);
                    out.extend_from_slice(&(feature as u32).to_le_bytes());
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&(left as u32).to_le_bytes());
                    out.extend_from_slice(&(right as u32).to_le_bytes());
                }
            }
        }
    }
}

pub fn encode_model(model: &CmModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    match model {
        CmModel::Gmm(m) => {
            out.push(KIND_GMM);
            out.extend_from_slice(&m.feature_config_hash.to_le_bytes());
            put_gmm(&mut out, &m.bonafide);
            put_gmm(&mut out, &m.spoof);
        }
        CmModel::Gbdt(m) => {
            out.push(KIND_GBDT);
            out.extend_from_slice(&m.feature_config_hash.to_le_bytes());
            put_gbdt(&mut out, m);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn corrupt(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::CorruptModel(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        if self.buf.len() < n {
            return Err(corrupt("unexpected end of payload"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifierError> {
        let bytes = n
            .checked_mul(8)
            .filter(|&b| b <= self.buf.len())
            .ok_or_else(|| corrupt("array length exceeds payload"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn get_gmm(r: &mut Reader) -> Result<GmmModel, ClassifierError> {
    let k = r.u32()?;
    let d = r.u32()?;
    let weights = r.f64s(k)?;
    let means = r.f64s(k.saturating_mul(d))?;
    let covs = r.f64s(k.saturating_mul(d).saturating_mul(d))?;
    GmmModel::new(weights, means, covs, d)
}

fn get_gbdt(r: &mut Reader, hash: u64) -> Result<GbdtModel, ClassifierError> {
    let learning_rate = r.f64()?;
    let base_score = r.f64()?;
    let preset = match r.u8()? {
        0 => GrowPreset::Depthwise,
        1 => GrowPreset::Symmetric,
        p => return Err(corrupt(format!("unknown preset {p}"))),
    };
    let dim = r.u32()?;
    let num_trees = r.u32()?;
    if !learning_rate.is_finite() || !base_score.is_finite() {
        return Err(corrupt("non-finite booster constants"));
    }
    let mut trees = Vec::new();
    for _ in 0..num_trees {
        let n = r.u32()?;
        if n == 0 || n > r.buf.len() {
            return Err(corrupt("bad node count"));
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let node = match r.u8()? {
                0 => Node::Leaf(r.f64()?),
                1 => {
                    let feature = r.u32()?;
                    let threshold = r.f64()?;
                    let left = r.u32()?;
                    let right = r.u32()?;
                    // children strictly after the parent rules out cycles
                    if feature >= dim || left <= i || right <= i || left >= n || right >= n {
                        return Err(corrupt("split node out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                t => return Err(corrupt(format!("unknown node tag {t}"))),
            };
            let ok = match node {
                Node::Leaf(v) => v.is_finite(),
                Node::Split { threshold, .. } => !threshold.is_nan(),
            };
            if !ok {
                return Err(corrupt("non-finite node value"));
            }
            nodes.push(node);
        }
        trees.push(Tree { nodes });
    }
    Ok(GbdtModel {
        trees,
        learning_rate,
        base_score,
        preset,
        dim,
        feature_config_hash: hash,
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<CmModel, ClassifierError> {
    if bytes.len() < 6 || &bytes[..4] != MODEL_MAGIC {
        return Err(corrupt("missing SPCM header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(ClassifierError::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(corrupt("file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let kind = body[6];
    let hash = u64::from_le_bytes(body[7..15].try_into().unwrap());
    let mut r = Reader {
        buf: &body[HEADER_LEN..],
    };
    let model = match kind {
        KIND_GMM => {
            let bonafide = get_gmm(&mut r)?;
            let spoof = get_gmm(&mut r)?;
            CmModel::Gmm(GmmPairCm::new(bonafide, spoof, hash)?)
        }
        KIND_GBDT => CmModel::Gbdt(get_gbdt(&mut r, hash)?),
        k => return Err(corrupt(format!("unknown model kind {k}"))),
    };
    if !r.buf.is_empty() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(model)
}

pub fn save_model(model: &CmModel, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CmModel, ClassifierError> {
    decode_model(&std::fs::read(path)?)
}
