//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "PCTLCKPT"
//! format version   u32
//! d                u64      embedding dimension
//! d_inst, d_vis    u64, u64
//! heads            u64
//! encoder sizes    u32 count, then u64 each   [input, hidden.., d]
//! classifier sizes u32 count, then u64 each   [d, hidden, 2]
//! gamma            f64
//! 1/tau            f64
//! encoder          f64 blocks, weight then bias per layer
//! momentum encoder f64 blocks, same order
//! classifier       f64 blocks, same order
//! ```

use std::path::Path;

use super::model::{ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAGIC: &[u8; 8] = b"PCTLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let cfg = state.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.embed_dim, cfg.d_inst, cfg.d_vis, cfg.heads] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for sizes in [cfg.encoder_layer_sizes(), cfg.classifier_layer_sizes()] {
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
    }
    out.extend_from_slice(&state.gamma().to_le_bytes());
    out.extend_from_slice(&state.inv_temperature().to_le_bytes());
    let blocks = state
        .encoder_params()
        .iter()
        .chain(state.momentum_params())
        .chain(state.classifier_params());
    for t in blocks {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("size {v} overflows")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn sizes(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.u64()).collect()
    }

    fn tensors(&mut self, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for w in sizes.windows(2) {
            for shape in [vec![w[0], w[1]], vec![w[1]]] {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
                out.push(Tensor::new(shape, data)?);
            }
        }
        Ok(out)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let embed_dim = r.u64()?;
    let d_inst = r.u64()?;
    let d_vis = r.u64()?;
    let heads = r.u64()?;
    let enc_sizes = r.sizes()?;
    let cls_sizes = r.sizes()?;
    if enc_sizes.len() < 3 || cls_sizes.len() != 3 {
        return Err(Error::Checkpoint("malformed layer size lists".into()));
    }
    let gamma = r.f64()?;
    let inv_temperature = r.f64()?;
    let config = ModelConfig {
        d_inst,
        d_vis,
        hidden: enc_sizes[1],
        layers: enc_sizes.len() - 3,
        heads,
        embed_dim,
        classifier_hidden: cls_sizes[1],
        gamma,
    };
    if config.encoder_layer_sizes() != enc_sizes || config.classifier_layer_sizes() != cls_sizes {
        return Err(Error::Checkpoint(
            "layer sizes disagree with the header dimensions".into(),
        ));
    }
    let encoder = r.tensors(&enc_sizes)?;
    let momentum = r.tensors(&enc_sizes)?;
    let classifier = r.tensors(&cls_sizes)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    ModelState::from_parts(config, encoder, momentum, classifier, inv_temperature, gamma)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = ModelConfig {
            layers: 2,
            ..ModelConfig::default()
        };
        let mut m = ModelState::new(&cfg, 11).unwrap();
        m.set_inv_temperature(3.25);
        m.momentum_params_mut()[0].data_mut()[0] = -0.123456789;
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = ModelState::new(&ModelConfig::default(), 1).unwrap();
        let bytes = to_bytes(&m);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut ver = bytes;
        ver[8] = 9;
        assert!(matches!(from_bytes(&ver), Err(Error::Checkpoint(m)) if m.contains("version")));
    }
}
