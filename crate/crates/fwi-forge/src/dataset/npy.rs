//! Minimal NPY v1.0 reader/writer for little-endian 32-bit float, C-order
//! arrays of 2 to 4 dimensions.
//!
//! The writer reproduces the reference implementation's header layout byte
//! for byte: a python dict literal padded with spaces so that the magic,
//! version, length field, and header together occupy a multiple of 64
//! bytes, terminated by a newline. Arrays are held as `f64` in memory and
//! quantized to `f32` on write.

use std::fs;
use std::path::Path;

use ndarray::{ArrayBase, ArrayD, ArrayViewD, Data, Dimension, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

fn shape_literal(shape: &[usize]) -> String {
    let inner: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("({})", inner.join(", "))
}

/// Serializes `view` to NPY v1.0 bytes, quantizing values to `f32`.
pub fn to_npy_bytes(view: ArrayViewD<'_, f64>) -> Result<Vec<u8>> {
    let ndim = view.ndim();
    if !(2..=4).contains(&ndim) {
        return Err(Error::config(format!(
            "NPY writer handles 2 to 4 dimensions, got {ndim}"
        )));
    }
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': {}, }}",
        shape_literal(view.shape())
    );
    // Magic(6) + version(2) + length field(2) + dict + padding + '\n',
    // padded to a multiple of 64 bytes.
    let unpadded = 10 + dict.len() + 1;
    let total = unpadded.div_ceil(HEADER_ALIGN) * HEADER_ALIGN;
    let header_len = total - 10;
    if header_len > u16::MAX as usize {
        return Err(Error::config("NPY header too long for version 1.0"));
    }

    let mut out = Vec::with_capacity(total + view.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    for &v in view.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Writes `array` to `path` in NPY v1.0 format.
pub fn write_npy<S, D>(path: &Path, array: &ArrayBase<S, D>) -> Result<()>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let bytes = to_npy_bytes(array.view().into_dyn())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_err(origin: &Path, reason: impl Into<String>) -> Error {
    Error::NpyFormat {
        path: origin.to_path_buf(),
        reason: reason.into(),
    }
}

fn unsupported(origin: &Path, reason: impl Into<String>) -> Error {
    Error::NpyUnsupported {
        path: origin.to_path_buf(),
        reason: reason.into(),
    }
}

fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let at = header.find(&pat)?;
    Some(header[at + pat.len()..].trim_start())
}

/// Parses NPY bytes; `origin` names the source in errors.
pub fn from_npy_bytes(bytes: &[u8], origin: &Path) -> Result<ArrayD<f64>> {
    if bytes.len() < 10 {
        return Err(format_err(origin, "file shorter than the NPY preamble"));
    }
    if &bytes[..6] != MAGIC {
        return Err(format_err(origin, "bad magic bytes"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(unsupported(
            origin,
            format!("NPY version {major}.{minor}, only 1.0 is handled"),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(format_err(origin, "header truncated"));
    }
    let header = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| format_err(origin, "header is not valid UTF-8"))?;

    let descr = header_value(header, "descr")
        .and_then(|rest| {
            let rest = rest.strip_prefix('\'')?;
            let end = rest.find('\'')?;
            Some(&rest[..end])
        })
        .ok_or_else(|| format_err(origin, "missing 'descr' in header"))?;
    if descr != "<f4" {
        return Err(unsupported(
            origin,
            format!("dtype '{descr}', only '<f4' is handled"),
        ));
    }

    let fortran = header_value(header, "fortran_order")
        .ok_or_else(|| format_err(origin, "missing 'fortran_order' in header"))?;
    if fortran.starts_with("True") {
        return Err(unsupported(origin, "Fortran-order arrays are not handled"));
    }
    if !fortran.starts_with("False") {
        return Err(format_err(origin, "unparseable 'fortran_order' value"));
    }

    let shape_str = header_value(header, "shape")
        .and_then(|rest| {
            let rest = rest.strip_prefix('(')?;
            let end = rest.find(')')?;
            Some(&rest[..end])
        })
        .ok_or_else(|| format_err(origin, "missing 'shape' tuple in header"))?;
    let mut shape = Vec::new();
    for part in shape_str.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let dim: usize = part
            .parse()
            .map_err(|_| format_err(origin, format!("bad shape element '{part}'")))?;
        shape.push(dim);
    }
    if !(2..=4).contains(&shape.len()) {
        return Err(unsupported(
            origin,
            format!("{}-dimensional array, only 2 to 4 are handled", shape.len()),
        ));
    }

    let count: usize = shape.iter().product();
    let data = &bytes[data_start..];
    if data.len() != count * 4 {
        return Err(format_err(
            origin,
            format!(
                "expected {} data bytes for shape {:?}, found {}",
                count * 4,
                shape,
                data.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for chunk in data.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    ArrayD::from_shape_vec(IxDyn(&shape), values)
        .map_err(|e| format_err(origin, format!("shape/data mismatch: {e}")))
}

/// Reads an NPY v1.0 file of little-endian `f32` values into an `f64` array.
pub fn read_npy(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_npy_bytes(&bytes, path)
}
