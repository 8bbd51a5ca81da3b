//! Model container.
//!
//! ```text
//! "CBRA" | u32 version | [u64 len | hyperparams] [u64 len | vocab]
//!        | [u64 len | disease matrix] [u64 len | drug matrix] | u32 crc32
//! ```
//!
//! All integers and floats are little-endian; the checksum covers every byte
//! before it. Floats are stored as raw bit patterns, so a round trip is exact.

use std::fs;
use std::path::Path;

use super::{Hyperparams, InitMode, Matrix, ModelParams};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CBRA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, body: Writer) {
        self.u64(body.buf.len() as u64);
        self.buf.extend_from_slice(&body.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::ModelFormat("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::ModelFormat("name is not valid UTF-8".into()))
    }
    fn section(&mut self) -> Result<Reader<'a>> {
        let n = self.usize()?;
        Ok(Reader::new(self.take(n)?))
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::ModelFormat(format!("trailing bytes in {what} section")));
        }
        Ok(())
    }
}

fn write_matrix(m: &Matrix) -> Writer {
    let mut w = Writer::default();
    w.u64(m.rows() as u64);
    w.u64(m.cols() as u64);
    for &x in m.as_slice() {
        w.f64(x);
    }
    w
}

fn read_matrix(mut r: Reader<'_>, what: &str) -> Result<Matrix> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::ModelFormat(format!("{what} shape overflows")))?;
    if r.buf.len() - r.pos != n * 8 {
        return Err(Error::ModelFormat(format!("{what} payload does not match {rows}x{cols}")));
    }
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish(what)?;
    Matrix::from_vec(rows, cols, data)
}

pub fn encode(params: &ModelParams, vocab: &Vocabulary, hp: &Hyperparams) -> Vec<u8> {
    let mut out = Writer::default();
    out.buf.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);

    let mut h = Writer::default();
    h.u64(hp.embedding_dim as u64);
    h.f64(hp.learning_rate);
    h.f64(hp.min_learning_rate);
    h.u64(hp.epochs as u64);
    h.u8(match hp.init_mode {
        InitMode::Random => 0,
        InitMode::Cooccurrence => 1,
    });
    h.u64(hp.rng_seed);
    h.u8(hp.freeze_drug_vectors as u8);
    out.section(h);

    let mut v = Writer::default();
    v.u64(vocab.num_diseases() as u64);
    for (name, &c) in vocab.disease_names().iter().zip(vocab.disease_patient_counts()) {
        v.str(name);
        v.u32(c);
    }
    v.u64(vocab.num_drugs() as u64);
    for (name, &c) in vocab.drug_names().iter().zip(vocab.drug_patient_counts()) {
        v.str(name);
        v.u32(c);
    }
    out.section(v);

    out.section(write_matrix(&params.disease_embeddings));
    out.section(write_matrix(&params.drug_embeddings));

    let crc = crc32fast::hash(&out.buf);
    out.u32(crc);
    out.buf
}

pub fn decode(bytes: &[u8]) -> Result<(ModelParams, Vocabulary, Hyperparams)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::ModelFormat("missing CBRA magic bytes".into()));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::ChecksumMismatch { stored: 0, computed: crc32fast::hash(bytes) });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader::new(&body[MAGIC.len()..]);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let mut h = r.section()?;
    let hp = Hyperparams {
        embedding_dim: h.usize()?,
        learning_rate: h.f64()?,
        min_learning_rate: h.f64()?,
        epochs: h.usize()?,
        init_mode: match h.u8()? {
            0 => InitMode::Random,
            1 => InitMode::Cooccurrence,
            other => return Err(Error::ModelFormat(format!("unknown init mode {other}"))),
        },
        rng_seed: h.u64()?,
        freeze_drug_vectors: h.u8()? != 0,
    };
    h.finish("hyperparameter")?;

    let mut v = r.section()?;
    let read_names = |v: &mut Reader<'_>| -> Result<(Vec<String>, Vec<u32>)> {
        let n = v.usize()?;
        let mut names = Vec::new();
        let mut counts = Vec::new();
        for _ in 0..n {
            names.push(v.str()?);
            counts.push(v.u32()?);
        }
        Ok((names, counts))
    };
    let (dn, dc) = read_names(&mut v)?;
    let (mn, mc) = read_names(&mut v)?;
    v.finish("vocabulary")?;
    let vocab = Vocabulary::from_parts(dn, dc, mn, mc)?;

    let disease_embeddings = read_matrix(r.section()?, "disease matrix")?;
    let drug_embeddings = read_matrix(r.section()?, "drug matrix")?;
    r.finish("container")?;

    let d = hp.embedding_dim;
    if disease_embeddings.rows() != vocab.num_diseases() || disease_embeddings.cols() != d {
        return Err(Error::ModelFormat("disease matrix shape disagrees with vocabulary".into()));
    }
    if drug_embeddings.rows() != vocab.num_drugs() || drug_embeddings.cols() != d {
        return Err(Error::ModelFormat("drug matrix shape disagrees with vocabulary".into()));
    }
    Ok((
        ModelParams {
            disease_embeddings,
            drug_embeddings,
        },
        vocab,
        hp,
    ))
}

pub fn save(path: &Path, params: &ModelParams, vocab: &Vocabulary, hp: &Hyperparams) -> Result<()> {
    fs::write(path, encode(params, vocab, hp))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, Vocabulary, Hyperparams)> {
    decode(&fs::read(path)?)
}
