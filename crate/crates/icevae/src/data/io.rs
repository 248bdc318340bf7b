//! The "icecube v1" cube file format.
//!
//! Layout: 8-byte magic `ICECUBE1`, a little-endian u32 header length, a
//! UTF-8 JSON header (dimensions, grid descriptor, kind, provenance), then
//! the row-major little-endian f32 payload. Land cells carry NaN.

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array5};
use serde::{Deserialize, Serialize};

use crate::data::{HindcastCube, ObsCube};
use crate::error::{IceError, Result};
use crate::grid::{GridDescriptor, PolarGrid};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICECUBE1";

/// Seed and config hash of the run that produced an artifact file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub enum Cube {
    Hindcast(HindcastCube),
    Obs(ObsCube),
}

impl Cube {
    pub fn grid(&self) -> &PolarGrid {
        match self {
            Cube::Hindcast(c) => &c.grid,
            Cube::Obs(c) => &c.grid,
        }
    }

    pub fn into_hindcast(self) -> Result<HindcastCube> {
        match self {
            Cube::Hindcast(c) => Ok(c),
            Cube::Obs(_) => Err(IceError::MalformedHeader(
                "expected a hindcast cube, found an obs cube".into(),
            )),
        }
    }

    pub fn into_obs(self) -> Result<ObsCube> {
        match self {
            Cube::Obs(c) => Ok(c),
            Cube::Hindcast(_) => Err(IceError::MalformedHeader(
                "expected an obs cube, found a hindcast cube".into(),
            )),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    dims: Vec<usize>,
    first_month: i32,
    #[serde(default)]
    inits: Vec<i32>,
    n_lead: usize,
    n_member: usize,
    grid: GridDescriptor,
    dtype: String,
    #[serde(default)]
    provenance: Option<Provenance>,
}

pub fn write_cube(cube: &Cube, path: &Path, provenance: Option<Provenance>) -> Result<()> {
    let (header, data): (Header, &[f32]) = match cube {
        Cube::Hindcast(c) => {
            let dims = c.values.shape().to_vec();
            (
                Header {
                    version: FORMAT_VERSION,
                    kind: "hindcast".into(),
                    dims,
                    first_month: *c.inits.first().unwrap_or(&0),
                    inits: c.inits.clone(),
                    n_lead: c.n_lead,
                    n_member: c.n_member,
                    grid: c.grid.descriptor(),
                    dtype: "f32le".into(),
                    provenance,
                },
                c.values.as_slice().ok_or_else(|| {
                    IceError::Numerical("hindcast values not contiguous".into())
                })?,
            )
        }
        Cube::Obs(c) => {
            let dims = c.values.shape().to_vec();
            (
                Header {
                    version: FORMAT_VERSION,
                    kind: "obs".into(),
                    dims,
                    first_month: c.first_month,
                    inits: Vec::new(),
                    n_lead: c.n_lead,
                    n_member: 0,
                    grid: c.grid.descriptor(),
                    dtype: "f32le".into(),
                    provenance,
                },
                c.values
                    .as_slice()
                    .ok_or_else(|| IceError::Numerical("obs values not contiguous".into()))?,
            )
        }
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header_bytes.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_cube(path: &Path) -> Result<(Cube, Option<Provenance>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..8] != MAGIC {
        return Err(IceError::MalformedHeader("bad magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(IceError::MalformedHeader(format!(
            "header length {header_len} exceeds file size"
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(IceError::VersionMismatch {
            got: header.version,
            supported: FORMAT_VERSION,
        });
    }
    if header.dtype != "f32le" {
        return Err(IceError::MalformedHeader(format!(
            "unsupported dtype {}",
            header.dtype
        )));
    }
    let n_values: usize = header.dims.iter().product();
    let payload = &bytes[12 + header_len..];
    if payload.len() < 4 * n_values {
        return Err(IceError::TruncatedPayload {
            expected: 4 * n_values,
            got: payload.len(),
        });
    }
    let values: Vec<f32> = payload[..4 * n_values]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let grid = PolarGrid::from_descriptor(&header.grid)?;
    let cube = match header.kind.as_str() {
        "hindcast" => {
            if header.dims.len() != 5 {
                return Err(IceError::MalformedHeader(format!(
                    "hindcast cube requires 5 dims, got {:?}",
                    header.dims
                )));
            }
            let shape = (
                header.dims[0],
                header.dims[1],
                header.dims[2],
                header.dims[3],
                header.dims[4],
            );
            let values = Array5::from_shape_vec(shape, values)
                .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
            Cube::Hindcast(HindcastCube {
                inits: header.inits,
                n_lead: header.n_lead,
                n_member: header.n_member,
                values,
                grid,
            })
        }
        "obs" => {
            if header.dims.len() != 3 {
                return Err(IceError::MalformedHeader(format!(
                    "obs cube requires 3 dims, got {:?}",
                    header.dims
                )));
            }
            let shape = (header.dims[0], header.dims[1], header.dims[2]);
            let values = Array3::from_shape_vec(shape, values)
                .map_err(|e| IceError::MalformedHeader(e.to_string()))?;
            Cube::Obs(ObsCube {
                first_month: header.first_month,
                values,
                n_lead: header.n_lead,
                grid,
            })
        }
        other => {
            return Err(IceError::MalformedHeader(format!(
                "unknown cube kind {other:?}"
            )))
        }
    };
    Ok((cube, header.provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_generate, SyntheticConfig};
    use crate::grid::PolarGrid;

    fn sample() -> (HindcastCube, ObsCube) {
        let grid = PolarGrid::synthetic(6, 12, 0.1, false, 4).unwrap();
        let out = synthetic_generate(&SyntheticConfig::default(), &grid, 0, 3).unwrap();
        (out.hindcast, out.obs)
    }

    fn bits(v: &[f32]) -> Vec<u32> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (hindcast, obs) = sample();
        let dir = tempfile::tempdir().unwrap();
        let hp = dir.path().join("h.icecube");
        let op = dir.path().join("o.icecube");
        let prov = Provenance {
            seed: 7,
            config_hash: "abc".into(),
        };
        write_cube(&Cube::Hindcast(hindcast.clone()), &hp, Some(prov.clone())).unwrap();
        write_cube(&Cube::Obs(obs.clone()), &op, None).unwrap();

        let (h2, p2) = read_cube(&hp).unwrap();
        let h2 = h2.into_hindcast().unwrap();
        assert_eq!(p2, Some(prov));
        assert_eq!(h2.inits, hindcast.inits);
        assert_eq!(h2.grid, hindcast.grid);
        assert_eq!(
            bits(h2.values.as_slice().unwrap()),
            bits(hindcast.values.as_slice().unwrap())
        );

        let (o2, _) = read_cube(&op).unwrap();
        let o2 = o2.into_obs().unwrap();
        assert_eq!(o2.first_month, obs.first_month);
        assert_eq!(
            bits(o2.values.as_slice().unwrap()),
            bits(obs.values.as_slice().unwrap())
        );
    }

    #[test]
    fn header_only_file_is_truncated() {
        let (hindcast, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.icecube");
        write_cube(&Cube::Hindcast(hindcast), &p, None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        std::fs::write(&p, &bytes[..12 + header_len]).unwrap();
        assert!(matches!(
            read_cube(&p),
            Err(IceError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let (_, obs) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.icecube");
        write_cube(&Cube::Obs(obs), &p, None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        header["version"] = serde_json::json!(999);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(&bytes[0..8]);
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[12 + header_len..]);
        std::fs::write(&p, out).unwrap();
        assert!(matches!(
            read_cube(&p),
            Err(IceError::VersionMismatch { got: 999, .. })
        ));
    }

    #[test]
    fn bad_magic_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.icecube");
        std::fs::write(&p, b"NOTACUBE____").unwrap();
        assert!(matches!(read_cube(&p), Err(IceError::MalformedHeader(_))));
    }
}
