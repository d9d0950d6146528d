//! NPY v1.0 reading and writing (little-endian, C order).

use std::path::Path;

use crate::{util, Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

fn shape_repr(shape: &[usize]) -> String {
    match shape {
        [] => "()".into(),
        [n] => format!("({n},)"),
        _ => format!("({})", shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ")),
    }
}

pub fn encode(descr: &str, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {}, }}", shape_repr(shape));
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn to_bytes_f32(shape: &[usize], values: &[f32]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    encode("<f4", shape, &payload)
}

pub fn to_bytes_f64(shape: &[usize], values: &[f64]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    encode("<f8", shape, &payload)
}

pub fn to_bytes_bool(shape: &[usize], values: &[bool]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
    let payload: Vec<u8> = values.iter().map(|&b| b as u8).collect();
    encode("|b1", shape, &payload)
}

pub fn write_f32(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    util::write_atomic(path, &to_bytes_f32(shape, values))
}

/// Total header size including magic, version and length fields.
pub fn header_len(bytes: &[u8]) -> std::result::Result<usize, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("missing NPY magic".into());
    }
    match bytes[6] {
        1 => Ok(10 + u16::from_le_bytes([bytes[8], bytes[9]]) as usize),
        2 | 3 if bytes.len() >= 12 => Ok(12 + u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize),
        v => Err(format!("unsupported NPY version {v}")),
    }
}

fn dict_value<'a>(header: &'a str, key: &str) -> std::result::Result<&'a str, String> {
    let pat = format!("'{key}':");
    let at = header.find(&pat).ok_or_else(|| format!("header lacks '{key}'"))?;
    Ok(header[at + pat.len()..].trim_start())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<NpyArray, String> {
    let total = header_len(bytes)?;
    if bytes.len() < total {
        return Err("truncated NPY header".into());
    }
    let start = if bytes[6] == 1 { 10 } else { 12 };
    let header = std::str::from_utf8(&bytes[start..total]).map_err(|_| "header is not text")?;
    let d = dict_value(header, "descr")?;
    let descr = d.strip_prefix('\'').and_then(|r| r.split('\'').next()).ok_or("malformed descr")?.to_string();
    let f = dict_value(header, "fortran_order")?;
    let fortran_order = if f.starts_with("True") {
        true
    } else if f.starts_with("False") {
        false
    } else {
        return Err("malformed fortran_order".into());
    };
    let s = dict_value(header, "shape")?;
    let inner = s.strip_prefix('(').and_then(|r| r.split(')').next()).ok_or("malformed shape")?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad shape entry '{t}'")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let item = item_size(&descr)?;
    let expect = shape.iter().product::<usize>() * item;
    let data = bytes[total..].to_vec();
    if data.len() != expect {
        return Err(format!("payload {} bytes, expected {expect}", data.len()));
    }
    Ok(NpyArray { descr, fortran_order, shape, data })
}

fn item_size(descr: &str) -> std::result::Result<usize, String> {
    match descr {
        "<f4" | "<i4" | "<u4" => Ok(4),
        "<f8" | "<i8" | "<u8" => Ok(8),
        "|b1" | "|u1" | "|i1" => Ok(1),
        d => Err(format!("unsupported dtype {d}")),
    }
}

pub fn read(path: &Path) -> Result<NpyArray> {
    let bytes = util::read(path)?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ensure_c_order(&self) -> std::result::Result<(), String> {
        if self.fortran_order {
            Err("fortran-ordered arrays are not supported".into())
        } else {
            Ok(())
        }
    }

    pub fn to_f32(&self) -> std::result::Result<Vec<f32>, String> {
        self.ensure_c_order()?;
        match self.descr.as_str() {
            "<f4" => Ok(self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            "<f8" => Ok(self.to_f64()?.into_iter().map(|v| v as f32).collect()),
            d => Err(format!("cannot read {d} as float")),
        }
    }

    pub fn to_f64(&self) -> std::result::Result<Vec<f64>, String> {
        self.ensure_c_order()?;
        match self.descr.as_str() {
            "<f8" => Ok(self.data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            "<f4" => Ok(self.to_f32()?.into_iter().map(f64::from).collect()),
            d => Err(format!("cannot read {d} as float")),
        }
    }

    pub fn to_bool(&self) -> std::result::Result<Vec<bool>, String> {
        self.ensure_c_order()?;
        match self.descr.as_str() {
            "|b1" | "|u1" => Ok(self.data.iter().map(|b| *b != 0).collect()),
            d => Err(format!("cannot read {d} as bool")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_header() {
        for shape in [vec![], vec![5], vec![128, 32, 32], vec![3, 256, 64, 64]] {
            let n = shape.iter().product::<usize>();
            let bytes = to_bytes_f32(&shape, &vec![1.5; n]);
            let h = header_len(&bytes).unwrap();
            assert_eq!(h % 64, 0);
            assert_eq!(bytes[h - 1], b'\n');
            assert_eq!(bytes.len() - h, 4 * n);
        }
    }

    #[test]
    fn exact_header_text() {
        let bytes = to_bytes_f32(&[2, 3], &[0.0; 6]);
        let h = header_len(&bytes).unwrap();
        let text = std::str::from_utf8(&bytes[10..h]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }"));
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
    }

    #[test]
    fn round_trip_bitwise() {
        let vals: Vec<f32> = (0..60).map(|i| (i as f32 * 0.37).sin() * 1e3).chain([f32::NAN, -0.0]).collect();
        let arr = decode(&to_bytes_f32(&[62], &vals)).unwrap();
        let back = arr.to_f32().unwrap();
        assert!(vals.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        let d = decode(&to_bytes_f64(&[2, 1], &[1.0, 2.0])).unwrap();
        assert_eq!(d.to_f64().unwrap(), vec![1.0, 2.0]);
        let m = decode(&to_bytes_bool(&[3], &[true, false, true])).unwrap();
        assert_eq!(m.to_bool().unwrap(), vec![true, false, true]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut bytes = to_bytes_f32(&[4], &[0.0; 4]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = 0;
        assert!(decode(&bytes).is_err());
    }
}
