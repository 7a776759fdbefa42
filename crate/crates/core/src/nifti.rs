//! NIfTI-1 reading and writing for 3D single-frame volumes.
//!
//! Only the NIfTI-1 layout (348-byte header, magic `n+1\0` or `ni1\0`) is
//! supported, optionally gzip-compressed. NIfTI-2 and 4D time series are
//! rejected with a clear error. Both little- and big-endian headers are
//! accepted on read (detected through `sizeof_hdr`); files are always
//! written little-endian.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::Volume3D;

const HEADER_SIZE: usize = 348;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// On-disk sample type for writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            8 => Ok(Datatype::Int32),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Int32 | Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }

    fn bitpix(self) -> i16 {
        (self.bytes() * 8) as i16
    }
}

/// Byte order of the source header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn i16(self, b: &[u8]) -> i16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => i16::from_le_bytes(a),
            Endian::Big => i16::from_be_bytes(a),
        }
    }
    fn i32(self, b: &[u8]) -> i32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => i32::from_le_bytes(a),
            Endian::Big => i32::from_be_bytes(a),
        }
    }
    fn f32(self, b: &[u8]) -> f32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => f32::from_le_bytes(a),
            Endian::Big => f32::from_be_bytes(a),
        }
    }
    fn f64(self, b: &[u8]) -> f64 {
        let a = [b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]];
        match self {
            Endian::Little => f64::from_le_bytes(a),
            Endian::Big => f64::from_be_bytes(a),
        }
    }
}

/// What happened during a load: substitutions and source format details.
#[derive(Debug, Clone)]
pub struct LoadReport {
    /// Count of non-finite source samples replaced by 0.
    pub nan_replaced: usize,
    pub datatype: i16,
    pub big_endian: bool,
    pub gzipped: bool,
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn read_file_maybe_gz(path: &Path) -> Result<(Vec<u8>, bool)> {
    let raw = std::fs::read(path)?;
    if is_gzip(&raw) {
        let mut decoder = MultiGzDecoder::new(&raw[..]);
        let mut out = Vec::new();
        decoder
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedHeader(format!("gzip decode failed: {e}")))?;
        Ok((out, true))
    } else {
        Ok((raw, false))
    }
}

/// Load a 3D NIfTI-1 volume (`.nii` or `.nii.gz`).
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume3D> {
    load_nifti_with_report(path).map(|(v, _)| v)
}

/// Load a volume together with its [`LoadReport`].
pub fn load_nifti_with_report(path: impl AsRef<Path>) -> Result<(Volume3D, LoadReport)> {
    let path = path.as_ref();
    let (bytes, gzipped) = read_file_maybe_gz(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file holds {} bytes; a NIfTI-1 header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }

    let endian = match i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) {
        348 => Endian::Little,
        _ => match i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) {
            348 => Endian::Big,
            other => {
                return Err(Error::MalformedHeader(format!(
                    "sizeof_hdr is {other} in both byte orders; expected 348 (NIfTI-2 is not supported)"
                )))
            }
        },
    };

    let magic = &bytes[344..348];
    let paired = if magic == MAGIC_SINGLE {
        false
    } else if magic == MAGIC_PAIR {
        true
    } else {
        return Err(Error::MalformedHeader(format!(
            "magic bytes {magic:?} are neither 'n+1\\0' nor 'ni1\\0'"
        )));
    };

    let ndim = endian.i16(&bytes[40..42]);
    if ndim != 3 {
        return Err(Error::Dimensionality(ndim));
    }
    let nx = endian.i16(&bytes[42..44]);
    let ny = endian.i16(&bytes[44..46]);
    let nz = endian.i16(&bytes[46..48]);
    if nx <= 0 || ny <= 0 || nz <= 0 {
        return Err(Error::MalformedHeader(format!("non-positive dims ({nx}, {ny}, {nz})")));
    }
    let dims = (nx as usize, ny as usize, nz as usize);

    let datatype_code = endian.i16(&bytes[70..72]);
    let datatype = Datatype::from_code(datatype_code)?;

    let mut spacing = [0.0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let off = 76 + 4 * (i + 1);
        let p = endian.f32(&bytes[off..off + 4]) as f64;
        if !p.is_finite() || p == 0.0 {
            return Err(Error::MalformedHeader(format!("pixdim[{}] = {p} is not usable", i + 1)));
        }
        *s = p.abs();
    }

    let scl_slope = endian.f32(&bytes[112..116]) as f64;
    let scl_inter = endian.f32(&bytes[116..120]) as f64;

    let sform_code = endian.i16(&bytes[254..256]);
    let affine = if sform_code > 0 {
        let mut m = [[0.0f64; 4]; 4];
        for (row, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
            for col in 0..4 {
                let off = base + 4 * col;
                m[row][col] = endian.f32(&bytes[off..off + 4]) as f64;
            }
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        Some(m)
    } else {
        None
    };

    let n_voxels = dims.0 * dims.1 * dims.2;
    let payload: Vec<u8> = if paired {
        let img_path = sibling_img_path(path)?;
        let (img_bytes, _) = read_file_maybe_gz(&img_path)?;
        img_bytes
    } else {
        let vox_offset = endian.f32(&bytes[108..112]) as usize;
        let offset = vox_offset.max(HEADER_SIZE);
        if bytes.len() < offset {
            return Err(Error::MalformedHeader(format!(
                "vox_offset {offset} lies beyond the file ({} bytes)",
                bytes.len()
            )));
        }
        bytes[offset..].to_vec()
    };

    let needed = n_voxels * datatype.bytes();
    if payload.len() < needed {
        return Err(Error::MalformedHeader(format!(
            "data section holds {} bytes; {dims:?} {datatype:?} needs {needed}",
            payload.len()
        )));
    }

    let apply_scaling = scl_slope != 0.0 && scl_slope.is_finite() && scl_inter.is_finite();
    let mut nan_replaced = 0usize;
    let mut data = Vec::with_capacity(n_voxels);
    for i in 0..n_voxels {
        let off = i * datatype.bytes();
        let raw = match datatype {
            Datatype::Uint8 => payload[off] as f64,
            Datatype::Int16 => endian.i16(&payload[off..off + 2]) as f64,
            Datatype::Int32 => endian.i32(&payload[off..off + 4]) as f64,
            Datatype::Float32 => endian.f32(&payload[off..off + 4]) as f64,
            Datatype::Float64 => endian.f64(&payload[off..off + 8]),
        };
        let scaled = if apply_scaling { raw * scl_slope + scl_inter } else { raw };
        if scaled.is_finite() {
            data.push(scaled);
        } else {
            nan_replaced += 1;
            data.push(0.0);
        }
    }

    let mut volume = Volume3D::new(dims, (spacing[0], spacing[1], spacing[2]), data)?;
    volume.affine = affine;
    let report = LoadReport {
        nan_replaced,
        datatype: datatype_code,
        big_endian: endian == Endian::Big,
        gzipped,
    };
    Ok((volume, report))
}

fn sibling_img_path(hdr_path: &Path) -> Result<std::path::PathBuf> {
    let s = hdr_path.to_string_lossy();
    let img = if let Some(stem) = s.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = s.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        return Err(Error::MalformedHeader(
            "magic 'ni1\\0' requires a .hdr/.img pair; cannot derive the .img path".into(),
        ));
    };
    Ok(std::path::PathBuf::from(img))
}

/// Save a volume as single-file NIfTI-1 float32; gzip when the path ends in `.gz`.
pub fn save_nifti(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    save_nifti_as(v, path, Datatype::Float32)
}

/// Save a volume with an explicit on-disk datatype.
///
/// Integer datatypes round to nearest and saturate at the type bounds, which
/// keeps label volumes exact.
pub fn save_nifti_as(v: &Volume3D, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let (nx, ny, nz) = v.dims;
    if nx > i16::MAX as usize || ny > i16::MAX as usize || nz > i16::MAX as usize {
        return Err(Error::ShapeMismatch(format!("dims {:?} exceed the NIfTI-1 i16 range", v.dims)));
    }

    let mut header = [0u8; HEADER_SIZE];
    header[0..4].copy_from_slice(&348i32.to_le_bytes());
    let dim: [i16; 8] = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        header[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    header[70..72].copy_from_slice(&datatype.code().to_le_bytes());
    header[72..74].copy_from_slice(&datatype.bitpix().to_le_bytes());
    let pixdim: [f32; 8] = [
        1.0,
        v.spacing.0 as f32,
        v.spacing.1 as f32,
        v.spacing.2 as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        header[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    header[108..112].copy_from_slice(&352.0f32.to_le_bytes()); // vox_offset
    header[112..116].copy_from_slice(&1.0f32.to_le_bytes()); // scl_slope
    header[116..120].copy_from_slice(&0.0f32.to_le_bytes()); // scl_inter

    let affine = v.affine.unwrap_or([
        [v.spacing.0, 0.0, 0.0, 0.0],
        [0.0, v.spacing.1, 0.0, 0.0],
        [0.0, 0.0, v.spacing.2, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);
    header[254..256].copy_from_slice(&1i16.to_le_bytes()); // sform_code
    for (row, base) in [(0usize, 280usize), (1, 296), (2, 312)] {
        for col in 0..4 {
            let off = base + 4 * col;
            header[off..off + 4].copy_from_slice(&(affine[row][col] as f32).to_le_bytes());
        }
    }
    header[344..348].copy_from_slice(MAGIC_SINGLE);

    let mut buffer = Vec::with_capacity(352 + v.data.len() * datatype.bytes());
    buffer.extend_from_slice(&header);
    buffer.extend_from_slice(&[0u8; 4]); // no extensions
    for &val in &v.data {
        match datatype {
            Datatype::Uint8 => buffer.push(val.round().clamp(0.0, u8::MAX as f64) as u8),
            Datatype::Int16 => buffer.extend_from_slice(
                &(val.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes(),
            ),
            Datatype::Int32 => buffer.extend_from_slice(
                &(val.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32).to_le_bytes(),
            ),
            Datatype::Float32 => buffer.extend_from_slice(&(val as f32).to_le_bytes()),
            Datatype::Float64 => buffer.extend_from_slice(&val.to_le_bytes()),
        }
    }

    let file = File::create(path)?;
    if path.to_string_lossy().ends_with(".gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&buffer)?;
        enc.finish()?;
    } else {
        let mut f = file;
        f.write_all(&buffer)?;
    }
    Ok(())
}
