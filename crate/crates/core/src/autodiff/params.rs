use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.entries.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Overwrites values from `other`; names and shapes must match exactly.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &other.entries {
            let slot = self
                .entries
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if slot.1.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    lhs: slot.1.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            slot.1 = t.clone();
        }
        if let Some((name, _)) = self.entries.iter().find(|(n, _)| other.get(n).is_none()) {
            return Err(Error::UnknownParameter(format!("{name} (absent from checkpoint)")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            out.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingCheckpoint(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "CKPT",
        });
    }
    let mut r = Reader {
        bytes: &bytes,
        pos: 4,
        path,
    };
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.malformed("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| r.malformed("tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.malformed(&format!("{name}: {e}")))?;
        store.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(r.malformed("trailing bytes"));
    }
    Ok(store)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: &str) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| self.malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("enc.0.w", Tensor::matrix(2, 3, vec![0.5, -1.25, 3.0, 0.0, 1e-3, 7.0]).unwrap());
        p.insert("enc.0.b", Tensor::new(vec![3], vec![0.25, 0.5, -0.75]).unwrap());
        p
    }

    #[test]
    fn checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = sample();
        save_checkpoint(&path, &p).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let names: Vec<_> = back.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["enc.0.w", "enc.0.b"]);
        for ((_, a), (_, b)) in p.iter().zip(back.iter()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn missing_and_corrupt_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.ckpt");
        assert!(matches!(load_checkpoint(&path), Err(Error::MissingCheckpoint(_))));
        fs::write(&path, b"XXXX\0\0\0\0").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::BadMagic { .. })));
        save_checkpoint(&path, &sample()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn assign_checks_names_and_shapes() {
        let mut p = sample();
        let mut other = sample();
        other.insert("extra", Tensor::scalar(1.0).unwrap());
        assert!(matches!(p.assign_from(&other), Err(Error::UnknownParameter(_))));
        let mut wrong = ParamStore::new();
        wrong.insert("enc.0.w", Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        assert!(matches!(p.assign_from(&wrong), Err(Error::ShapeMismatch { .. })));
    }
}
