//! Binary tensor cache.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      4  b"BWT1"
//! version    u32
//! level      u32
//! delta      f64
//! gamma      f64
//! theta_b    f64
//! b0         f64
//! has_lambda u8, lambda f64 (0 when absent)
//! flags      u32   bit 0: unweighted, bit 1: normalised b0, bit 2: no Jacobian weight
//! seed       u64
//! samples    u64   per cell pair
//! dropped    f64   dropped gain fraction
//! n_loss     u64
//! n_gain     u64
//! checksum   u64   FNV-1a of the payload bytes
//! payload    n_loss x (k u32, l u32, w f64), then n_gain x (k u32, l u32, l' u32, w f64)
//! ```
//!
//! Entries are index-sorted, so identical tensors give identical files.

use std::fs::File;
use std::hash::Hasher;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use thiserror::Error;

use super::{Ansatz, CollisionTensor, GainTensor, LossTensor, TensorMeta};
use crate::haar_basis::FilteredBasis;
use crate::kernel::KernelSpec;

pub const MAGIC: &[u8; 4] = b"BWT1";
pub const VERSION: u32 = 1;

const FLAG_UNWEIGHTED: u32 = 1;
const FLAG_NORMALIZED: u32 = 2;
const FLAG_NO_JACOBIAN: u32 = 4;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt tensor cache: {0}")]
    Corrupt(String),
    #[error("tensor cache format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("tensor cache parameters differ from the request: {0}")]
    Mismatch(String),
}

fn corrupt(msg: impl Into<String>) -> CacheError {
    CacheError::Corrupt(msg.into())
}

/// Calls `f` on every payload record's bytes, in file order.
fn for_each_record(t: &CollisionTensor, mut f: impl FnMut(&[u8]) -> io::Result<()>) -> io::Result<()> {
    let mut buf = [0u8; 20];
    for (k, l, w) in t.loss.iter_nonzero() {
        buf[0..4].copy_from_slice(&(k as u32).to_le_bytes());
        buf[4..8].copy_from_slice(&(l as u32).to_le_bytes());
        buf[8..16].copy_from_slice(&w.to_le_bytes());
        f(&buf[..16])?;
    }
    for (k, l, lp, w) in t.gain.iter() {
        buf[0..4].copy_from_slice(&(k as u32).to_le_bytes());
        buf[4..8].copy_from_slice(&(l as u32).to_le_bytes());
        buf[8..12].copy_from_slice(&(lp as u32).to_le_bytes());
        buf[12..20].copy_from_slice(&w.to_le_bytes());
        f(&buf)?;
    }
    Ok(())
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save(t: &CollisionTensor, path: &Path) -> Result<(), CacheError> {
    let mut h = FnvHasher::default();
    for_each_record(t, |b| {
        h.write(b);
        Ok(())
    })?;
    let checksum = h.finish();

    let m = &t.meta;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&m.level.to_le_bytes())?;
        for x in [m.delta, m.kernel.gamma(), m.kernel.theta_b(), m.kernel.b0()] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&[m.kernel.lambda().is_some() as u8])?;
        w.write_all(&m.kernel.lambda().unwrap_or(0.0).to_le_bytes())?;
        let mut flags = 0;
        if !m.ansatz.weighted {
            flags |= FLAG_UNWEIGHTED;
        }
        if !m.ansatz.jacobian {
            flags |= FLAG_NO_JACOBIAN;
        }
        if m.kernel.is_normalized() {
            flags |= FLAG_NORMALIZED;
        }
        w.write_all(&flags.to_le_bytes())?;
        w.write_all(&m.seed.to_le_bytes())?;
        w.write_all(&m.samples_per_pair.to_le_bytes())?;
        w.write_all(&m.dropped_mass.to_le_bytes())?;
        w.write_all(&(t.loss.nonzero_count() as u64).to_le_bytes())?;
        w.write_all(&(t.gain.len() as u64).to_le_bytes())?;
        w.write_all(&checksum.to_le_bytes())?;
        for_each_record(t, |b| w.write_all(b))?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Src<R: Read> {
    r: R,
    hash: Option<FnvHasher>,
}

impl<R: Read> Src<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CacheError> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => corrupt("file is truncated"),
            _ => CacheError::Io(e),
        })?;
        if let Some(h) = self.hash.as_mut() {
            h.write(&b);
        }
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, CacheError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, CacheError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

/// Reads a cache file, checking its structure and checksum.
pub fn load(path: &Path) -> Result<CollisionTensor, CacheError> {
    let mut s = Src {
        r: BufReader::new(File::open(path)?),
        hash: None,
    };
    if &s.bytes::<4>()? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = s.u32()?;
    if version != VERSION {
        return Err(CacheError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let level = s.u32()?;
    let (delta, gamma, theta_b, b0) = (s.f64()?, s.f64()?, s.f64()?, s.f64()?);
    let has_lambda = s.u8()?;
    let lambda_v = s.f64()?;
    let flags = s.u32()?;
    let seed = s.u64()?;
    let samples_per_pair = s.u64()?;
    let dropped_mass = s.f64()?;
    let n_loss = s.u64()?;
    let n_gain = s.u64()?;
    let checksum = s.u64()?;

    let lambda = match has_lambda {
        0 => None,
        1 => Some(lambda_v),
        _ => return Err(corrupt("bad lambda flag")),
    };
    let kernel = if flags & FLAG_NORMALIZED != 0 {
        KernelSpec::normalized(gamma, theta_b, lambda)
    } else {
        KernelSpec::with_b0(gamma, theta_b, b0, lambda)
    }
    .map_err(|e| corrupt(format!("kernel header: {e}")))?;
    if kernel.b0().to_bits() != b0.to_bits() {
        return Err(corrupt("normalised b0 does not match theta_b"));
    }
    let basis = FilteredBasis::new(level, delta).map_err(|e| corrupt(format!("basis header: {e}")))?;
    let n = basis.len();
    if n_loss > (n * n) as u64 {
        return Err(corrupt("loss entry count exceeds n^2"));
    }
    let meta = TensorMeta {
        level,
        delta,
        kernel,
        seed,
        samples_per_pair,
        ansatz: Ansatz {
            weighted: flags & FLAG_UNWEIGHTED == 0,
            jacobian: flags & FLAG_NO_JACOBIAN == 0,
        },
        dropped_mass,
    };

    s.hash = Some(FnvHasher::default());
    let mut loss = vec![0f64; n * n];
    let mut prev: Option<(u32, u32)> = None;
    for _ in 0..n_loss {
        let (k, l, w) = (s.u32()?, s.u32()?, s.f64()?);
        if k as usize >= n || l as usize >= n || !(w.is_finite() && w > 0.0) || prev.is_some_and(|p| p >= (k, l)) {
            return Err(corrupt("bad loss entry"));
        }
        prev = Some((k, l));
        loss[k as usize * n + l as usize] = w;
    }
    let cap = usize::try_from(n_gain).map_err(|_| corrupt("gain count overflows"))?;
    let mut ks = Vec::with_capacity(cap.min(1 << 24));
    let mut ls = Vec::with_capacity(cap.min(1 << 24));
    let mut lps = Vec::with_capacity(cap.min(1 << 24));
    let mut ws = Vec::with_capacity(cap.min(1 << 24));
    let mut prev: Option<(u32, u32, u32)> = None;
    for _ in 0..n_gain {
        let (k, l, lp, w) = (s.u32()?, s.u32()?, s.u32()?, s.f64()?);
        if k as usize >= n
            || lp as usize >= n
            || l > lp
            || !(w.is_finite() && w > 0.0)
            || prev.is_some_and(|p| p >= (k, l, lp))
        {
            return Err(corrupt("bad gain entry"));
        }
        prev = Some((k, l, lp));
        ks.push(k);
        ls.push(l);
        lps.push(lp);
        ws.push(w);
    }
    let got = s.hash.take().map(|h| h.finish()).unwrap_or_default();
    if got != checksum {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut extra = [0u8; 1];
    if s.r.read(&mut extra)? != 0 {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(CollisionTensor {
        meta,
        gain: GainTensor::from_sorted(n, &ks, ls, lps, ws),
        loss: LossTensor::from_dense(n, loss),
        variance: None,
    })
}

/// [`load`], then refuses a file whose build request differs from `expect`.
pub fn load_matching(path: &Path, expect: &TensorMeta) -> Result<CollisionTensor, CacheError> {
    let t = load(path)?;
    if !t.meta.same_request(expect) {
        let m = &t.meta;
        return Err(CacheError::Mismatch(format!(
            "cached N={} delta={} gamma={} theta_b={} b0={} lambda={:?} seed={} samples={} ansatz={:?}, \
             requested N={} delta={} gamma={} theta_b={} b0={} lambda={:?} seed={} samples={} ansatz={:?}",
            m.level,
            m.delta,
            m.kernel.gamma(),
            m.kernel.theta_b(),
            m.kernel.b0(),
            m.kernel.lambda(),
            m.seed,
            m.samples_per_pair,
            m.ansatz,
            expect.level,
            expect.delta,
            expect.kernel.gamma(),
            expect.kernel.theta_b(),
            expect.kernel.b0(),
            expect.kernel.lambda(),
            expect.seed,
            expect.samples_per_pair,
            expect.ansatz,
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision_tensor::{build, BuildOptions};

    fn tensor(seed: u64) -> CollisionTensor {
        let b = FilteredBasis::new(2, 0.75).unwrap();
        let k = KernelSpec::normalized(0.5, 0.5, Some(7.0)).unwrap();
        build(
            &b,
            &k,
            &BuildOptions {
                samples_per_pair: 60,
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_and_byte_identity() {
        let dir = tempfile::tempdir().unwrap();
        let t = tensor(3);
        let p = dir.path().join("a.bwt");
        save(&t, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, t);
        let q = dir.path().join("b.bwt");
        save(&tensor(3), &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        assert!(load_matching(&p, &t.meta).is_ok());
    }

    #[test]
    fn rejects_damage_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let t = tensor(1);
        let p = dir.path().join("t.bwt");
        save(&t, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load(&p), Err(CacheError::Corrupt(_))));

        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x40;
        std::fs::write(&p, &flipped).unwrap();
        assert!(matches!(load(&p), Err(CacheError::Corrupt(_))));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        std::fs::write(&p, &v2).unwrap();
        assert!(matches!(load(&p), Err(CacheError::Version { found: 2, expected: 1 })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        std::fs::write(&p, &magic).unwrap();
        assert!(matches!(load(&p), Err(CacheError::Corrupt(_))));

        std::fs::write(&p, &bytes).unwrap();
        let mut want = t.meta;
        want.level = 3;
        assert!(matches!(load_matching(&p, &want), Err(CacheError::Mismatch(_))));
        let mut want = t.meta;
        want.seed = 2;
        assert!(matches!(load_matching(&p, &want), Err(CacheError::Mismatch(_))));
    }
}
