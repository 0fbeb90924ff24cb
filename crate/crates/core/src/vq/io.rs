//! Little-endian codebook container.
//!
//! ```text
//! magic[4] | stage_count u32 | dim u32 | entries u32 | f32 rows, stage-major
//! ```
//!
//! `LVQ1` holds a residual quantizer, `LVQD` a distilled codebook (one stage).

use std::io::{Read, Write};

use super::{Codebook, DistilledCodebook, ResidualVq, Result, VqError, CODEBOOK_SIZE, MAX_STAGES};

pub const RVQ_MAGIC: &[u8; 4] = b"LVQ1";
pub const DISTILLED_MAGIC: &[u8; 4] = b"LVQD";

fn write_container<W: Write>(w: &mut W, magic: &[u8; 4], stages: &[Codebook]) -> Result<()> {
    let dim = stages[0].dim();
    w.write_all(magic)?;
    w.write_all(&(stages.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(CODEBOOK_SIZE as u32).to_le_bytes())?;
    for s in stages {
        for &v in s.as_slice() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_container<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Vec<Codebook>> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(VqError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let stages = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let entries = read_u32(r)? as usize;
    if entries != CODEBOOK_SIZE {
        return Err(VqError::Format(format!("expected {CODEBOOK_SIZE} entries per stage, found {entries}")));
    }
    if stages == 0 || stages > MAX_STAGES || dim == 0 || dim > 4096 {
        return Err(VqError::Format(format!("implausible header: {stages} stages of dimension {dim}")));
    }
    let mut out = Vec::with_capacity(stages);
    let mut buf = vec![0u8; 4 * dim * CODEBOOK_SIZE];
    for _ in 0..stages {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => VqError::Format("truncated codebook data".into()),
            _ => VqError::Io(e),
        })?;
        let rows = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(Codebook::from_rows(dim, rows)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(VqError::Format("trailing bytes after codebook data".into()));
    }
    Ok(out)
}

pub fn write_rvq<W: Write>(w: &mut W, rvq: &ResidualVq) -> Result<()> {
    write_container(w, RVQ_MAGIC, rvq.stages())
}

pub fn read_rvq<R: Read>(r: &mut R) -> Result<ResidualVq> {
    ResidualVq::new(read_container(r, RVQ_MAGIC)?)
}

pub fn write_distilled<W: Write>(w: &mut W, d: &DistilledCodebook) -> Result<()> {
    write_container(w, DISTILLED_MAGIC, std::slice::from_ref(d.codebook()))
}

pub fn read_distilled<R: Read>(r: &mut R) -> Result<DistilledCodebook> {
    let mut stages = read_container(r, DISTILLED_MAGIC)?;
    if stages.len() != 1 {
        return Err(VqError::Format(format!("distilled codebook must have 1 stage, found {}", stages.len())));
    }
    Ok(DistilledCodebook::new(stages.remove(0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dim: usize, offset: f64) -> Codebook {
        Codebook::from_rows(dim, (0..dim * CODEBOOK_SIZE).map(|i| i as f64 * 0.25 + offset).collect()).unwrap()
    }

    #[test]
    fn header_layout() {
        let rvq = ResidualVq::new(vec![ramp(2, 0.0), ramp(2, 1.0)]).unwrap();
        let mut bytes = Vec::new();
        write_rvq(&mut bytes, &rvq).unwrap();
        assert_eq!(&bytes[..4], b"LVQ1");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 2, 0, 0, 0, 0, 1, 0, 0]);
        assert_eq!(bytes.len(), 16 + 2 * 2 * 256 * 4);
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0.25f32.to_le_bytes());
        // Values are exactly representable, so the round trip is lossless.
        assert_eq!(read_rvq(&mut bytes.as_slice()).unwrap(), rvq);
    }

    #[test]
    fn distilled_round_trip_and_magic_check() {
        let d = DistilledCodebook::new(ramp(3, -2.0));
        let mut bytes = Vec::new();
        write_distilled(&mut bytes, &d).unwrap();
        assert_eq!(&bytes[..4], b"LVQD");
        assert_eq!(read_distilled(&mut bytes.as_slice()).unwrap(), d);
        assert!(matches!(read_rvq(&mut bytes.as_slice()), Err(VqError::Format(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let rvq = ResidualVq::new(vec![ramp(2, 0.0)]).unwrap();
        let mut bytes = Vec::new();
        write_rvq(&mut bytes, &rvq).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_rvq(&mut bytes.as_slice()), Err(VqError::Format(_))));
    }
}
