//! Reading and writing grids in the numpy npy format (version 1.0).
//!
//! Writes are always little-endian C-order: `<f8` for real grids and `<i8` for
//! label maps. Reads accept `<f8`, `<f4`, `<i8`, `<i4`, `|u1` and `|b1`
//! payloads of rank 2 or 3, promoting everything to `f64`.
//!
//! Headers are padded with spaces so that the payload starts on a 64-byte
//! boundary, byte-for-byte like `numpy.save`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::maps::LabelMap;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F8,
    F4,
    I8,
    I4,
    U1,
    B1,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        Ok(match descr {
            "<f8" => Dtype::F8,
            "<f4" => Dtype::F4,
            "<i8" => Dtype::I8,
            "<i4" => Dtype::I4,
            "|u1" | "<u1" => Dtype::U1,
            "|b1" => Dtype::B1,
            other => {
                return Err(Error::Format(format!("unsupported dtype descriptor '{other}'")))
            }
        })
    }

    fn size(self) -> usize {
        match self {
            Dtype::F8 | Dtype::I8 => 8,
            Dtype::F4 | Dtype::I4 => 4,
            Dtype::U1 | Dtype::B1 => 1,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Dtype::F8 => f64::from_le_bytes(b.try_into().unwrap()),
            Dtype::F4 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::I8 => i64::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::I4 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::U1 | Dtype::B1 => b[0] as f64,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic(6) + version(2) + length(2) + dict + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing npy magic".into()));
    }
    let (len, start) = match (bytes[6], bytes[7]) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2, 0) | (3, 0) => {
            if bytes.len() < 12 {
                return Err(Error::Format("truncated npy header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        (major, minor) => {
            return Err(Error::Format(format!(
                "unsupported npy version {major}.{minor}"
            )))
        }
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::Format("truncated npy header".into()));
    }
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::Format("header is not valid text".into()))?;
    Ok((parse_dict(text)?, end))
}

/// Parses the python dict literal `{'descr': .., 'fortran_order': .., 'shape': (..), }`.
fn parse_dict(text: &str) -> Result<Header> {
    let t = text.trim();
    let inner = t
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header is not a dict: {t}")))?;

    let field = |key: &str| -> Result<&str> {
        let pat = format!("'{key}':");
        let at = inner
            .find(&pat)
            .ok_or_else(|| Error::Format(format!("header lacks '{key}'")))?;
        Ok(inner[at + pat.len()..].trim_start())
    };

    let descr_rest = field("descr")?;
    let descr = descr_rest
        .strip_prefix('\'')
        .and_then(|s| s.split_once('\''))
        .map(|(d, _)| d)
        .ok_or_else(|| Error::Format("malformed 'descr'".into()))?;
    let dtype = Dtype::parse(descr)?;

    let fo = field("fortran_order")?;
    let fortran_order = if fo.starts_with("True") {
        true
    } else if fo.starts_with("False") {
        false
    } else {
        return Err(Error::Format("malformed 'fortran_order'".into()));
    };

    let shape_rest = field("shape")?;
    let shape_body = shape_rest
        .strip_prefix('(')
        .and_then(|s| s.split_once(')'))
        .map(|(b, _)| b)
        .ok_or_else(|| Error::Format("malformed 'shape'".into()))?;
    let shape = shape_body
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

/// Decodes an in-memory npy file into a grid of `f64`.
pub fn decode_tensor(bytes: &[u8]) -> Result<Grid2D<f64>> {
    let (header, offset) = parse_header(bytes)?;
    if header.fortran_order {
        return Err(Error::Format("fortran-order arrays are not supported".into()));
    }
    let (h, w, c) = match header.shape[..] {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::Shape(format!(
                "expected rank 2 or 3, got shape {:?}",
                header.shape
            )))
        }
    };
    let n = h * w * c;
    let size = header.dtype.size();
    let payload = &bytes[offset..];
    if payload.len() != n * size {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            n * size
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(size)
        .map(|b| header.dtype.decode(b))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite value at flat index {i}")));
    }
    Grid2D::new(h, w, c, data)
}

/// Encodes a grid as npy bytes. Single-channel grids are written as `H × W`.
pub fn encode_tensor(grid: &Grid2D<f64>) -> Result<Vec<u8>> {
    if let Some(i) = grid.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "refusing to write non-finite value at flat index {i}"
        )));
    }
    let (h, w, c) = grid.shape();
    let shape: Vec<usize> = if c == 1 { vec![h, w] } else { vec![h, w, c] };
    let mut out = header_bytes("<f8", &shape);
    out.reserve(grid.data().len() * 8);
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reads an npy file as a `(H, W, C)` grid; rank-2 arrays get `C = 1`.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Grid2D<f64>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Writes a grid as `<f8` C-order npy.
pub fn write_tensor(grid: &Grid2D<f64>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_tensor(grid)?;
    write_bytes(path.as_ref(), &bytes)
}

/// Writes a label map as an `H × W` `<i8` array.
pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = header_bytes("<i8", &[labels.height(), labels.width()]);
    for &l in labels.labels() {
        out.extend_from_slice(&(l as i64).to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

/// Reads an integer label map. Float payloads are accepted when integral.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let grid = read_tensor(path)?;
    if grid.channels() != 1 {
        return Err(Error::Shape(format!(
            "label map must be H x W, got {:?}",
            grid.shape()
        )));
    }
    let mut data = Vec::with_capacity(grid.pixels());
    for &v in grid.data() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Data(format!("label value {v} is not a label index")));
        }
        data.push(v as usize);
    }
    LabelMap::from_grid(Grid2D::new(grid.height(), grid.width(), 1, data)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Header emitted by numpy 2.2 for `np.save(f, np.zeros((1, 1, 1)))`.
    const NUMPY_HEADER_111: &str = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }                                                       \n";
    const NUMPY_HEADER_345: &str = "{'descr': '<f8', 'fortran_order': False, 'shape': (3, 4, 5), }                                                       \n";

    fn numpy_file(header: &str, payload: &[f64]) -> Vec<u8> {
        let mut b = b"\x93NUMPY\x01\x00".to_vec();
        b.extend_from_slice(&(header.len() as u16).to_le_bytes());
        b.extend_from_slice(header.as_bytes());
        for v in payload {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn header_matches_numpy_layout() {
        let h = header_bytes("<f8", &[1, 1, 1]);
        assert_eq!(h.len(), 128);
        assert_eq!(h, numpy_file(NUMPY_HEADER_111, &[]));
    }

    #[test]
    fn single_channel_is_rank_two() {
        let g = Grid2D::new(1, 1, 1, vec![0.0]).unwrap();
        let bytes = encode_tensor(&g).unwrap();
        assert_eq!(bytes.len(), 128 + 8);
        assert!(std::str::from_utf8(&bytes[10..128]).unwrap().contains("'shape': (1, 1)"));
    }

    #[test]
    fn reads_numpy_written_rank3() {
        let payload: Vec<f64> = (0..60).map(|v| v as f64).collect();
        let g = decode_tensor(&numpy_file(NUMPY_HEADER_345, &payload)).unwrap();
        assert_eq!(g.shape(), (3, 4, 5));
        assert_eq!(g.get(1, 2, 3), 33.0);
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(matches!(decode_tensor(b"not an npy"), Err(Error::Format(_))));

        let rank4 = "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1, 1), }\n";
        assert!(matches!(
            decode_tensor(&numpy_file(rank4, &[0.0])),
            Err(Error::Shape(_))
        ));

        let nan = numpy_file(NUMPY_HEADER_111, &[f64::NAN]);
        assert!(matches!(decode_tensor(&nan), Err(Error::Data(_))));

        let short = numpy_file(NUMPY_HEADER_345, &[0.0; 10]);
        assert!(matches!(decode_tensor(&short), Err(Error::Format(_))));

        let fortran = "{'descr': '<f8', 'fortran_order': True, 'shape': (1, 1), }\n";
        assert!(decode_tensor(&numpy_file(fortran, &[0.0])).is_err());
    }

    #[test]
    fn refuses_to_write_nan() {
        let g = Grid2D::new(1, 2, 1, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(encode_tensor(&g), Err(Error::Data(_))));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.npy");
        let lm = LabelMap::new(Grid2D::new(2, 2, 1, vec![0, 1, 2, 1]).unwrap(), 3).unwrap();
        write_labels(&lm, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(std::str::from_utf8(&bytes[10..128]).unwrap().contains("'<i8'"));
        assert_eq!(read_labels(&path).unwrap(), lm);
    }
}
