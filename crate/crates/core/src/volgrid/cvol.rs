//! CVL1: little-endian volume container.
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..4   | magic `CVL1`                            |
//! | 4..16  | `u32` dims `nx, ny, nz`                 |
//! | 16..28 | `f32` spacing in mm                     |
//! | 28     | dtype: 0 = `f32` intensity, 1 = `u8` label |
//! | 29..33 | `u32` payload byte length               |
//! | 33..   | payload, x-fastest                      |

use std::fs;
use std::path::Path;

use super::volume::{LabelVolume, Volume, Volume3D, Voxel};
use crate::error::{Error, Result};

pub const CVOL_MAGIC: &[u8; 4] = b"CVL1";
const HEADER_LEN: usize = 33;

#[derive(Clone, Debug, PartialEq)]
pub enum CvolVolume {
    Intensity(Volume3D),
    Label(LabelVolume),
}

impl CvolVolume {
    pub fn into_intensity(self) -> Result<Volume3D> {
        match self {
            CvolVolume::Intensity(v) => Ok(v),
            CvolVolume::Label(_) => Err(Error::Format("expected an f32 intensity volume, found labels".into())),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            CvolVolume::Label(v) => Ok(v),
            CvolVolume::Intensity(_) => Err(Error::Format("expected a u8 label volume, found intensities".into())),
        }
    }
}

pub fn encode_cvol<V: Voxel>(volume: &Volume<V>) -> Vec<u8> {
    let payload_len = volume.len() * V::BYTES;
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len);
    out.extend_from_slice(CVOL_MAGIC);
    for d in volume.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in volume.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(V::DTYPE);
    out.extend_from_slice(&(payload_len as u32).to_le_bytes());
    for &v in volume.voxels() {
        v.write_le(&mut out);
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn decode_payload<V: Voxel>(dims: [usize; 3], spacing: [f32; 3], payload: &[u8]) -> Result<Volume<V>> {
    let voxels = payload.chunks_exact(V::BYTES).map(V::read_le).collect();
    Volume::new(dims, spacing, voxels)
}

pub fn decode_cvol(bytes: &[u8]) -> Result<CvolVolume> {
    if bytes.len() < 4 || &bytes[..4] != CVOL_MAGIC {
        return Err(Error::Format("missing CVL1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length { expected: HEADER_LEN, found: bytes.len() });
    }
    let dims = [u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize];
    let spacing = [f32_at(bytes, 16), f32_at(bytes, 20), f32_at(bytes, 24)];
    let dtype = bytes[28];
    let payload_len = u32_at(bytes, 29) as usize;
    let elem = match dtype {
        0 => f32::BYTES,
        1 => u8::BYTES,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if count.and_then(|c| c.checked_mul(elem)) != Some(payload_len) {
        return Err(Error::Format(format!(
            "payload length {payload_len} inconsistent with dims {dims:?} and dtype {dtype}"
        )));
    }
    let expected = HEADER_LEN + payload_len;
    if bytes.len() != expected {
        return Err(Error::Length { expected, found: bytes.len() });
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        0 => CvolVolume::Intensity(decode_payload(dims, spacing, payload)?),
        _ => CvolVolume::Label(decode_payload(dims, spacing, payload)?),
    })
}

pub fn read_cvol(path: impl AsRef<Path>) -> Result<CvolVolume> {
    decode_cvol(&fs::read(path)?)
}

pub fn write_cvol<V: Voxel>(volume: &Volume<V>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cvol(volume))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [u32; 3], spacing: [f32; 3], dtype: u8, payload_len: u32) -> Vec<u8> {
        let mut b = b"CVL1".to_vec();
        dims.iter().for_each(|d| b.extend_from_slice(&d.to_le_bytes()));
        spacing.iter().for_each(|s| b.extend_from_slice(&s.to_le_bytes()));
        b.push(dtype);
        b.extend_from_slice(&payload_len.to_le_bytes());
        b
    }

    #[test]
    fn zero_volume_reads_back() {
        let mut bytes = header([2, 2, 2], [1.0; 3], 0, 32);
        bytes.extend_from_slice(&[0u8; 32]);
        let v = decode_cvol(&bytes).unwrap().into_intensity().unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert!(v.voxels().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hand_built_file_places_voxels_x_fastest() {
        // 43 56 4C 31 | 03 00 00 00 01 00 00 00 01 00 00 00 | spacing | 00 | 0C 00 00 00 | 1.0 2.0 3.0
        let mut bytes = vec![0x43, 0x56, 0x4C, 0x31, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0];
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F].repeat(3));
        bytes.push(0);
        bytes.extend_from_slice(&[12, 0, 0, 0]);
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]);
        bytes.extend_from_slice(&[0x00, 0x00, 0x00, 0x40]);
        bytes.extend_from_slice(&[0x00, 0x00, 0x40, 0x40]);
        let v = decode_cvol(&bytes).unwrap().into_intensity().unwrap();
        assert_eq!(v.get(2, 0, 0), 3.0);
        assert_eq!(v.get(0, 0, 0), 1.0);
    }

    #[test]
    fn single_voxel_file_is_37_bytes() {
        let v = Volume3D::new([1, 1, 1], [1.25, 1.25, 2.7], vec![7.5]).unwrap();
        let bytes = encode_cvol(&v);
        assert_eq!(bytes.len(), 37);
        assert_eq!(&bytes[33..37], &7.5f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2.7f32.to_le_bytes());
    }

    #[test]
    fn error_paths() {
        assert!(matches!(decode_cvol(b"NOPE"), Err(Error::Format(_))));
        assert!(matches!(decode_cvol(b"CVL1\x01"), Err(Error::Length { .. })));

        let mut truncated = header([2, 1, 1], [1.0; 3], 0, 8);
        truncated.extend_from_slice(&[0u8; 5]);
        assert!(matches!(decode_cvol(&truncated), Err(Error::Length { expected: 41, found: 38 })));

        let mut bad_label = header([2, 1, 1], [1.0; 3], 1, 2);
        bad_label.extend_from_slice(&[1, 2]);
        assert!(matches!(decode_cvol(&bad_label), Err(Error::Validation(_))));

        let mut bad_dtype = header([1, 1, 1], [1.0; 3], 9, 1);
        bad_dtype.push(0);
        assert!(matches!(decode_cvol(&bad_dtype), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let v = LabelVolume::new([3, 2, 1], [0.5, 0.75, 3.0], vec![0, 1, 1, 0, 1, 0]).unwrap();
        let a = dir.path().join("a.cvl");
        let b = dir.path().join("b.cvl");
        write_cvol(&v, &a).unwrap();
        write_cvol(&v, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_cvol(&a).unwrap(), CvolVolume::Label(v));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let v = Volume3D::new([1, 1, 1], [1.0; 3], vec![0.0]).unwrap();
        let err = write_cvol(&v, "/nonexistent-dir/x/y.cvl").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
