//! `SMM1` binary matrix encoding.
//!
//! Layout: the magic `b"SMM1"`, `rows` and `cols` as little-endian `u32`,
//! then `rows * cols` little-endian IEEE-754 `f32` values in row-major order.
//! Values are narrowed to `f32` on encode, so a decode/encode cycle is
//! lossless only at single precision.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"SMM1";
const HEADER_LEN: usize = 12;

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    let (m, used) = decode_prefix(bytes)?;
    if bytes.len() > used {
        return Err(Error::TrailingBytes {
            extra: bytes.len() - used,
        });
    }
    Ok(m)
}

/// Decodes one matrix from the front of `bytes` and returns it with the
/// number of bytes it occupied.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Matrix, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let rows = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let cols = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or(Error::Truncated {
            expected: usize::MAX,
            got: bytes.len(),
        })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((Matrix::new(rows, cols, data)?, expected))
}

/// Rounds every entry to `f32` precision, i.e. the values a decode of
/// [`encode`] would produce.
pub fn round_to_storage(m: &Matrix) -> Matrix {
    let data = m.as_slice().iter().map(|&v| v as f32 as f64).collect();
    Matrix::new(m.rows(), m.cols(), data).expect("rounding preserves shape and finiteness")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5, 0.125]]).unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], &[0x53, 0x4D, 0x4D, 0x31]);
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 12 + 12);
    }

    #[test]
    fn wrong_magic() {
        let mut b = encode(&Matrix::zeros(2, 2));
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncation_detected() {
        let b = encode(&Matrix::zeros(3, 3));
        for cut in [2, 8, b.len() - 1] {
            assert!(matches!(decode(&b[..cut]), Err(Error::Truncated { .. })));
        }
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::TrailingBytes { extra: 1 })));
    }

    #[test]
    fn empty_matrix() {
        let m = Matrix::new(0, 5, vec![]).unwrap();
        assert_eq!(decode(&encode(&m)).unwrap().shape(), (0, 5));
    }

    proptest! {
        #[test]
        fn round_trip_at_f32(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let data: Vec<f64> = (0..rows * cols).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e3
            }).collect();
            let m = Matrix::new(rows, cols, data).unwrap();
            let back = decode(&encode(&m)).unwrap();
            prop_assert_eq!(&back, &round_to_storage(&m));
            prop_assert_eq!(encode(&back), encode(&m));
        }
    }
}
