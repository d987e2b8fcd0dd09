//! Binary model file.
//!
//! Little-endian layout: magic `TXWK`, format version (u32), encoder kind tag
//! (u8), d (u32), row count (u32), `rows` length-prefixed UTF-8 entries (u32
//! byte length + bytes), then the focus side and the context side. Each side
//! is its table (rows×d f64, row-major) followed by the forward and backward
//! cells when present, each cell as W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoders::{EncoderKind, EncoderModel, GruCell, SideParams};
use crate::error::{Error, Result};
use crate::graph::Vocabulary;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"TXWK";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &EncoderModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[model.kind.tag()])?;
    w.write_all(&(model.dim as u32).to_le_bytes())?;
    w.write_all(&(model.vocab.len() as u32).to_le_bytes())?;
    for word in model.vocab.words() {
        w.write_all(&(word.len() as u32).to_le_bytes())?;
        w.write_all(word.as_bytes())?;
    }
    for side in [&model.focus, &model.context] {
        for tensor in side.tensors() {
            for x in tensor {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::ModelFormat(format!("truncated file ({e})")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.f64s(rows * cols)?))
    }

    fn cell(&mut self, d: usize) -> Result<GruCell> {
        Ok(GruCell {
            w_z: self.matrix(d, d)?,
            w_r: self.matrix(d, d)?,
            w_h: self.matrix(d, d)?,
            u_z: self.matrix(d, d)?,
            u_r: self.matrix(d, d)?,
            u_h: self.matrix(d, d)?,
            b_z: self.f64s(d)?,
            b_r: self.f64s(d)?,
            b_h: self.f64s(d)?,
        })
    }

    fn side(&mut self, kind: EncoderKind, rows: usize, d: usize) -> Result<SideParams> {
        let table = self.matrix(rows, d)?;
        let fwd = match kind {
            EncoderKind::Gru | EncoderKind::BiGruMaxRes => Some(self.cell(d)?),
            _ => None,
        };
        let bwd = match kind {
            EncoderKind::BiGruMaxRes => Some(self.cell(d)?),
            _ => None,
        };
        Ok(SideParams { table, fwd, bwd })
    }
}

pub fn read_model<R: Read>(r: R) -> Result<EncoderModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported format version {version}")));
    }
    let [tag] = r.bytes::<1>()?;
    let kind = EncoderKind::from_tag(tag).ok_or_else(|| Error::ModelFormat(format!("unknown encoder tag {tag}")))?;
    let dim = r.u32()? as usize;
    let rows = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::ModelFormat("zero dimension".into()));
    }
    let mut words = Vec::with_capacity(rows);
    for _ in 0..rows {
        let len = r.u32()? as usize;
        let mut buf = vec![0u8; len];
        r.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::ModelFormat(format!("truncated vocabulary ({e})")))?;
        words.push(String::from_utf8(buf).map_err(|_| Error::ModelFormat("vocabulary entry is not UTF-8".into()))?);
    }
    let vocab = Vocabulary::from_words(words)?;
    let focus = r.side(kind, rows, dim)?;
    let context = r.side(kind, rows, dim)?;
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::ModelFormat("trailing bytes".into()));
    }
    Ok(EncoderModel { kind, dim, vocab, focus, context })
}

pub fn save_model(model: &EncoderModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EncoderModel> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_every_kind() {
        let vocab = Vocabulary::from_words(vec!["acute".into(), "leukemia".into(), "é".into()]).unwrap();
        for kind in EncoderKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let model = EncoderModel::new(kind, 3, vocab.clone(), &mut rng);
            let mut buf = Vec::new();
            write_model(&model, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"TXWK");
            assert_eq!(buf[8], kind.tag());
            assert_eq!(read_model(buf.as_slice()).unwrap(), model);
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vocab = Vocabulary::from_words(vec!["a".into()]).unwrap();
        let model = EncoderModel::new(EncoderKind::Gru, 2, vocab, &mut rng);
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert!(read_model(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model(extra.as_slice()).is_err());
        let mut bad = buf;
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::ModelFormat(_))));
    }
}
