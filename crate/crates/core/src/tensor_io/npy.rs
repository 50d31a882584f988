//! Reader and writer for the NPY v1.0 array format.
//!
//! Only two-dimensional (or one-dimensional, read as a column) little-endian
//! `f8`/`f4` arrays are supported. Version 2.0 headers are accepted on read;
//! writes always produce version 1.0 with the header padded to a multiple of
//! 64 bytes.

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::UnsupportedFormat("missing NPY magic string".into()));
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::ShapeMismatch("truncated NPY header".into()));
            }
            let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
            (len as usize, 12)
        }
        v => {
            return Err(Error::UnsupportedFormat(format!(
                "NPY version {v}.{}",
                bytes[7]
            )))
        }
    };
    let end = offset + header_len;
    if bytes.len() < end {
        return Err(Error::ShapeMismatch("truncated NPY header".into()));
    }
    let text = std::str::from_utf8(&bytes[offset..end])
        .map_err(|_| Error::UnsupportedFormat("NPY header is not valid text".into()))?;
    let header = parse_header(text)?;

    let (rows, cols) = match header.shape.as_slice() {
        [n] => (*n, 1),
        [n, p] => (*n, *p),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "NPY arrays of rank {} are not supported",
                other.len()
            )))
        }
    };
    let payload = &bytes[end..];
    let expected = rows * cols * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "NPY header declares {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }

    let values: Vec<f64> = match header.dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };

    let array = if header.fortran_order {
        Array2::from_shape_vec((cols, rows), values)
            .map(|a| a.reversed_axes().as_standard_layout().into_owned())
    } else {
        Array2::from_shape_vec((rows, cols), values)
    };
    array.map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn encode(data: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = data.dim();
    let mut dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}"
    );
    // magic(6) + version(2) + length(2) + dict + padding + '\n'
    let unpadded = 10 + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len() + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_header(text: &str) -> Result<Header> {
    let descr = dict_value(text, "descr")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f8" => Dtype::F64,
        "<f4" => Dtype::F32,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "NPY dtype {other:?} (expected '<f8' or '<f4')"
            )))
        }
    };

    let fortran_order = match dict_value(text, "fortran_order")?.trim() {
        "True" => true,
        "False" => false,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "invalid fortran_order {other:?}"
            )))
        }
    };

    let shape_text = dict_value(text, "shape")?;
    let inner = shape_text
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::UnsupportedFormat(format!("invalid shape {shape_text:?}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::UnsupportedFormat(format!("invalid shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

/// Extracts the raw text of a value from the Python dict literal in the header.
fn dict_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let start = quoted
        .iter()
        .find_map(|k| text.find(k.as_str()).map(|i| i + k.len()))
        .ok_or_else(|| Error::UnsupportedFormat(format!("NPY header lacks key {key:?}")))?;
    let rest = text[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::UnsupportedFormat(format!("malformed NPY header near {key:?}")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| Error::UnsupportedFormat(format!("malformed NPY header near {key:?}")))?;
    Ok(&rest[..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn header_bytes(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = dict.to_string();
        while (10 + header.len() + 1) % 16 != 0 {
            header.push(' ');
        }
        header.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn encoded_header_is_aligned() {
        let bytes = encode(&array![[1.0, 2.0, 3.0]]);
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
        assert_eq!(bytes.len(), 10 + header_len + 24);
    }

    #[test]
    fn zeros_3x4() {
        let bytes = header_bytes(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (3, 4), }",
            &[0u8; 96],
        );
        let a = decode(&bytes).unwrap();
        assert_eq!(a.dim(), (3, 4));
        assert!(a.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f32_is_widened() {
        let payload: Vec<u8> = [1.5f32, -2.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = header_bytes(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }",
            &payload,
        );
        assert_eq!(decode(&bytes).unwrap(), array![[1.5], [-2.25]]);
    }

    #[test]
    fn fortran_order_is_transposed() {
        // column-major storage of [[1, 2], [3, 4]]
        let payload: Vec<u8> = [1.0f64, 3.0, 2.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bytes = header_bytes(
            "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 2), }",
            &payload,
        );
        assert_eq!(decode(&bytes).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn payload_size_checked() {
        let bytes = header_bytes(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }",
            &[0u8; 24],
        );
        assert!(matches!(decode(&bytes), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn big_endian_rejected() {
        let bytes = header_bytes(
            "{'descr': '>f8', 'fortran_order': False, 'shape': (1, 1), }",
            &[0u8; 8],
        );
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(matches!(
            decode(b"NOTNUMPY0000"),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
