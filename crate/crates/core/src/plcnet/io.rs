//! `PLCN` model files: magic, u32 D, u32 H, then each parameter block as
//! little-endian f32 in [`PlcModel::params`] order.

use std::io::{Read, Write};

use super::{PlcError, PlcModel, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PLCN";

pub fn write_model<W: Write>(w: &mut W, model: &PlcModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(model.dim() as u32).to_le_bytes())?;
    w.write_all(&(model.hidden() as u32).to_le_bytes())?;
    for block in model.params() {
        for &v in block {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<PlcModel> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| PlcError::Format("truncated header".into()))?;
    if &head[..4] != MODEL_MAGIC {
        return Err(PlcError::Format(format!("bad magic {:?}", String::from_utf8_lossy(&head[..4]))));
    }
    let dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    if dim > 4096 || hidden > 65_536 {
        return Err(PlcError::Format(format!("implausible shape D={dim} H={hidden}")));
    }
    let mut model = PlcModel::zeros(dim, hidden)?;
    let mut buf = [0u8; 4];
    for block in model.params_mut() {
        for v in block.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| PlcError::Format("truncated parameters".into()))?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(PlcError::Format("trailing bytes after parameters".into()));
    }
    Ok(model)
}

/// CSV with header `iteration,mean_nll`.
pub fn write_loss_curve<W: Write>(w: &mut W, curve: &[f64]) -> std::io::Result<()> {
    writeln!(w, "iteration,mean_nll")?;
    for (i, l) in curve.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let m = PlcModel::new(3, 5, 1).unwrap();
        let mut bytes = Vec::new();
        write_model(&mut bytes, &m).unwrap();
        assert_eq!(&bytes[..4], b"PLCN");
        assert_eq!(bytes.len(), 12 + 4 * m.param_count());
        let back = read_model(&mut bytes.as_slice()).unwrap();
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // A second write of the loaded model is byte-identical.
        let mut again = Vec::new();
        write_model(&mut again, &back).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let m = PlcModel::new(2, 2, 1).unwrap();
        let mut bytes = Vec::new();
        write_model(&mut bytes, &m).unwrap();
        assert!(read_model(&mut &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read_model(&mut bytes.as_slice()), Err(PlcError::Format(_))));
    }
}
