//! Field container (binary) and CSV export.
//!
//! Container layout, little-endian:
//!
//! | bytes        | content                                        |
//! |--------------|------------------------------------------------|
//! | 4            | magic `RMFG`                                   |
//! | 2            | format version (`1`)                           |
//! | 1            | kind: 0 spatial, 1 spacetime                   |
//! | 1            | reserved, 0                                    |
//! | 4            | dim `n`                                        |
//! | 4·n          | nodes per axis                                 |
//! | 4            | time steps                                     |
//! | 8·n          | half-widths `A_i`                              |
//! | 8            | time horizon `T`                               |
//! | 8·count      | values, row-major: time level, then `x1 … xn`  |

use std::io::Write;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{build_grid, FieldKind, PrismDomain, ScalarField};

pub const MAGIC: &[u8; 4] = b"RMFG";
pub const FORMAT_VERSION: u16 = 1;
const MAX_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("truncated container: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("container carries {extra} trailing bytes")]
    Trailing { extra: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_field(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let dim = grid.dim();
    let mut out = Vec::with_capacity(32 + 12 * dim + 8 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match field.kind() {
        FieldKind::Spatial => 0,
        FieldKind::SpaceTime => 1,
    });
    out.push(0);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for &n in grid.nodes_per_axis() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.time_steps() as u32).to_le_bytes());
    for &a in grid.domain().half_widths() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&grid.horizon().to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a container, rebuilding its grid. Never allocates more than the
/// input length implies.
pub fn decode_field(bytes: &[u8]) -> Result<ScalarField, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let kind = match r.u8()? {
        0 => FieldKind::Spatial,
        1 => FieldKind::SpaceTime,
        other => return Err(FormatError::Header(format!("unknown field kind {other}"))),
    };
    if r.u8()? != 0 {
        return Err(FormatError::Header("reserved byte must be zero".into()));
    }
    let dim = r.u32()? as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(FormatError::Header(format!("dimension {dim} outside 1..={MAX_DIM}")));
    }
    let nodes = (0..dim)
        .map(|_| r.u32().map(|n| n as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let time_steps = r.u32()? as usize;
    let half_widths = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let horizon = r.f64()?;

    let spatial = nodes
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| FormatError::Header("node count overflows".into()))?;
    let count = match kind {
        FieldKind::Spatial => Some(spatial),
        FieldKind::SpaceTime => time_steps.checked_add(1).and_then(|l| l.checked_mul(spatial)),
    }
    .ok_or_else(|| FormatError::Header("node count overflows".into()))?;
    let remaining = bytes.len() - r.pos;
    let needed = count
        .checked_mul(8)
        .ok_or_else(|| FormatError::Header("node count overflows".into()))?;
    if remaining < needed {
        return Err(FormatError::Truncated {
            offset: r.pos,
            needed: needed - remaining,
        });
    }
    if remaining > needed {
        return Err(FormatError::Trailing {
            extra: remaining - needed,
        });
    }

    let domain = PrismDomain::new(half_widths).map_err(|e| FormatError::Header(e.to_string()))?;
    let grid = build_grid(domain, horizon, nodes, time_steps).map_err(|e| FormatError::Header(e.to_string()))?;
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(FormatError::NonFinite(i));
        }
        values.push(v);
    }
    ScalarField::new(Arc::clone(&grid), kind, values).map_err(|e| FormatError::Header(e.to_string()))
}

/// One row per node: `[t,] x1, …, xn, value`.
pub fn write_field_csv(field: &ScalarField, mut out: impl Write) -> Result<(), FormatError> {
    let grid = field.grid();
    let dim = grid.dim();
    let mut header: Vec<String> = Vec::new();
    if field.kind() == FieldKind::SpaceTime {
        header.push("t".into());
    }
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("value".into());
    writeln!(out, "{}", header.join(","))?;
    let n = grid.spatial_len();
    let points: Vec<Vec<f64>> = (0..n).map(|i| grid.point(i)).collect();
    for (idx, v) in field.values().iter().enumerate() {
        let (k, s) = (idx / n, idx % n);
        if field.kind() == FieldKind::SpaceTime {
            write!(out, "{},", grid.time(k))?;
        }
        for x in &points[s] {
            write!(out, "{x},")?;
        }
        writeln!(out, "{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn sample() -> ScalarField {
        let g = build_grid(PrismDomain::new(vec![1.0, 0.5]).unwrap(), 0.75, vec![3, 4], 2).unwrap();
        ScalarField::from_fn_spacetime(&g, |x, t| x[0] - 2.0 * x[1] + t).unwrap()
    }

    #[test]
    fn decode_rejects_damage() {
        let bytes = encode_field(&sample());
        assert!(matches!(
            decode_field(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_field(&extra), Err(FormatError::Trailing { extra: 1 })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_field(&magic), Err(FormatError::BadMagic)));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_field(&version), Err(FormatError::Version(9))));
        let mut nan = bytes.clone();
        let last = nan.len() - 8;
        nan[last..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_field(&nan), Err(FormatError::NonFinite(_))));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        for _ in 0..4 {
            bytes.extend_from_slice(&1.0f64.to_le_bytes());
        }
        assert!(decode_field(&bytes).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_field_csv(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,value"));
        assert_eq!(lines.next(), Some("0,-1,-0.5,0"));
        assert_eq!(text.lines().count(), 1 + 3 * 12);
    }

    proptest! {
        #[test]
        fn container_round_trip(
            dims in proptest::collection::vec(0.1f64..5.0, 1..3),
            steps in 2usize..4,
            horizon in 0.1f64..3.0,
            spacetime in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let nodes: Vec<usize> = dims.iter().enumerate().map(|(i, _)| 3 + (seed as usize >> (4 * i)) % 3).collect();
            let g = build_grid(PrismDomain::new(dims).unwrap(), horizon, nodes, steps).unwrap();
            let kind = if spacetime { FieldKind::SpaceTime } else { FieldKind::Spatial };
            let len = if spacetime { g.spacetime_len() } else { g.spatial_len() };
            let values: Vec<f64> = (0..len).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 7.0 - 50.0).collect();
            let f = ScalarField::new(g, kind, values).unwrap();
            let back = decode_field(&encode_field(&f)).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
