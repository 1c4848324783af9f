//! Binary tensor container: the magic `MSPR1`, then one record per tensor:
//! `u32 name_len`, name bytes (UTF-8), `u32 rank`, `rank x u32` dims and the
//! row-major payload as `f64`. All integers and floats are little-endian.

use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MSPR1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    let s = buf
        .get(*pos..end)
        .ok_or_else(|| Error::format(0, format!("truncated container at byte {}", *pos)))?;
    *pos = end;
    Ok(u32::from_le_bytes(s.try_into().expect("4 bytes")))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "missing MSPR1 header"));
    }
    let mut pos = MAGIC.len();
    let mut out = Vec::new();
    while pos < buf.len() {
        let n = read_u32(&buf, &mut pos)? as usize;
        let name = buf
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(0, "truncated tensor name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| Error::format(0, "tensor name is not UTF-8"))?;
        pos += n;
        let rank = read_u32(&buf, &mut pos)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&buf, &mut pos)? as usize);
        }
        let count: usize = shape.iter().product();
        let bytes = buf
            .get(pos..pos + 8 * count)
            .ok_or_else(|| Error::format(0, format!("truncated payload for `{name}`")))?;
        pos += 8 * count;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("ab".into(), t.clone())]).unwrap();
        let mut want = b"MSPR1".to_vec();
        want.extend(2u32.to_le_bytes());
        want.extend(b"ab");
        want.extend(2u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.0f64.to_le_bytes());
        want.extend((-0.5f64).to_le_bytes());
        assert_eq!(buf, want);
        let back = read_tensors(&buf[..]).unwrap();
        assert_eq!(back, vec![("ab".to_string(), t)]);
    }

    #[test]
    fn truncated_and_bad_magic_fail() {
        let t = Tensor::zeros(&[3]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".into(), t)]).unwrap();
        assert!(read_tensors(&buf[..buf.len() - 1]).is_err());
        assert!(read_tensors(&b"MSPR2"[..]).is_err());
    }
}
