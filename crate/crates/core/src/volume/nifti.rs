//! Minimal NIfTI-1 single-file (`n+1`) reader and writer.
//!
//! Reads any byte order and the common scalar datatypes; writes
//! little-endian with `sform_code = 1`. Files starting with the gzip magic
//! are decompressed transparently; paths ending in `.gz` are written
//! compressed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Affine, VolumeGeometry};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;
const DT_INT64: i16 = 1024;
const DT_UINT64: i16 = 1280;

pub(super) struct RawVolume {
    pub geometry: VolumeGeometry,
    pub data: Vec<f64>,
}

struct Fields<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().expect("slice length");
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.arr(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.arr(at))
    }

    fn f32(&self, at: usize) -> f64 {
        f64::from(f32::from_le_bytes(self.arr(at)))
    }
}

fn open_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub(super) fn read(path: &Path) -> Result<RawVolume> {
    let bytes = open_bytes(path)?;
    parse(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse(bytes: &[u8]) -> Result<RawVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!("{} bytes is shorter than a header", bytes.len())));
    }
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let big_endian = match sizeof_hdr {
        348 => false,
        x if x.swap_bytes() == 348 => true,
        x => return Err(Error::Format(format!("sizeof_hdr is {x}, not 348"))),
    };
    let h = Fields { bytes, big_endian };
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format("missing single-file magic `n+1`".into()));
    }

    let ndim = h.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for k in 0..ndim as usize {
        let d = h.i16(42 + 2 * k);
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d}", k + 1)));
        }
        if k < 3 {
            dims[k] = d as usize;
        } else if d != 1 {
            return Err(Error::Format("only single 3D volumes are supported".into()));
        }
    }

    let datatype = h.i16(70);
    let pixdim: [f64; 8] = std::array::from_fn(|k| h.f32(76 + 4 * k));
    let vox_offset = h.f32(108);
    let slope = h.f32(112);
    let inter = h.f32(116);
    let qform_code = h.i16(252);
    let sform_code = h.i16(254);

    let spacing: [f64; 3] = std::array::from_fn(|k| {
        let s = pixdim[k + 1].abs();
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    });

    let affine: Affine = if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for row in 0..3 {
            for col in 0..4 {
                a[row][col] = h.f32(280 + 16 * row + 4 * col);
            }
        }
        a[3][3] = 1.0;
        a
    } else if qform_code > 0 {
        let quat = [h.f32(256), h.f32(260), h.f32(264)];
        let offset = [h.f32(268), h.f32(272), h.f32(276)];
        quaternion_affine(quat, offset, spacing, pixdim[0])
    } else {
        super::diagonal_affine(spacing)
    };
    let geometry = VolumeGeometry::new(dims, spacing, affine)?;

    let n = geometry.voxel_count();
    let (width, decode): (usize, fn(&Fields, usize) -> f64) = match datatype {
        DT_UINT8 => (1, |h, at| f64::from(h.bytes[at])),
        DT_INT8 => (1, |h, at| f64::from(h.bytes[at] as i8)),
        DT_INT16 => (2, |h, at| f64::from(h.i16(at))),
        DT_UINT16 => (2, |h, at| f64::from(u16::from_le_bytes(h.arr(at)))),
        DT_INT32 => (4, |h, at| f64::from(h.i32(at))),
        DT_UINT32 => (4, |h, at| f64::from(u32::from_le_bytes(h.arr(at)))),
        DT_INT64 => (8, |h, at| i64::from_le_bytes(h.arr(at)) as f64),
        DT_UINT64 => (8, |h, at| u64::from_le_bytes(h.arr(at)) as f64),
        DT_FLOAT32 => (4, |h, at| h.f32(at)),
        DT_FLOAT64 => (8, |h, at| f64::from_le_bytes(h.arr(at))),
        other => return Err(Error::Format(format!("unsupported datatype {other}"))),
    };
    let start = if vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f64 {
        vox_offset as usize
    } else {
        VOX_OFFSET
    };
    let end = start + n * width;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "expected {} data bytes after offset {start}, found {}",
            n * width,
            bytes.len().saturating_sub(start)
        )));
    }
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let data = (0..n)
        .map(|i| {
            let v = decode(&h, start + i * width);
            if scaled {
                v * slope + inter
            } else {
                v
            }
        })
        .collect();
    Ok(RawVolume { geometry, data })
}

fn quaternion_affine(quat: [f64; 3], offset: [f64; 3], spacing: [f64; 3], qfac: f64) -> Affine {
    let [b, c, d] = quat;
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let qfac = if qfac < 0.0 { -1.0 } else { 1.0 };
    let scale = [spacing[0], spacing[1], spacing[2] * qfac];
    let mut out = [[0.0; 4]; 4];
    for row in 0..3 {
        for col in 0..3 {
            out[row][col] = r[row][col] * scale[col];
        }
        out[row][3] = offset[row];
    }
    out[3][3] = 1.0;
    out
}

fn header(geometry: &VolumeGeometry, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let mut put = |at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(0, &(HEADER_SIZE as i32).to_le_bytes());
    put(38, b"r");
    let dims = geometry.dims();
    put(40, &3i16.to_le_bytes());
    for k in 0..7 {
        let d = if k < 3 { dims[k] as i16 } else { 1 };
        put(42 + 2 * k, &d.to_le_bytes());
    }
    put(70, &datatype.to_le_bytes());
    put(72, &bitpix.to_le_bytes());
    let spacing = geometry.spacing();
    put(76, &1f32.to_le_bytes());
    for k in 0..3 {
        put(80 + 4 * k, &(spacing[k] as f32).to_le_bytes());
    }
    for k in 3..7 {
        put(80 + 4 * k, &1f32.to_le_bytes());
    }
    put(108, &(VOX_OFFSET as f32).to_le_bytes());
    put(112, &1f32.to_le_bytes());
    // xyzt_units: millimetres
    put(123, &[2u8]);
    put(148, b"pathosynth");
    put(254, &1i16.to_le_bytes());
    let a = geometry.affine();
    for row in 0..3 {
        for col in 0..4 {
            put(280 + 16 * row + 4 * col, &(a[row][col] as f32).to_le_bytes());
        }
    }
    put(344, b"n+1\0");
    h
}

fn write_bytes(path: &Path, header: Vec<u8>, payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let result = if gz {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(&header)
            .and_then(|_| enc.write_all(payload))
            .and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&header).and_then(|_| w.write_all(payload)).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

pub(super) fn write_labels(path: &Path, geometry: &VolumeGeometry, voxels: &[u16]) -> Result<()> {
    let max = voxels.iter().copied().max().unwrap_or(0);
    if max <= u16::from(u8::MAX) {
        let payload: Vec<u8> = voxels.iter().map(|&v| v as u8).collect();
        write_bytes(path, header(geometry, DT_UINT8, 8), &payload)
    } else {
        let payload: Vec<u8> = voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_bytes(path, header(geometry, DT_UINT16, 16), &payload)
    }
}

pub(super) fn write_intensity(path: &Path, geometry: &VolumeGeometry, voxels: &[f64]) -> Result<()> {
    let payload: Vec<u8> = voxels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, header(geometry, DT_FLOAT64, 64), &payload)
}
