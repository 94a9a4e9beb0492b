//! The DVF1 raw volume format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..4    magic "DVF1"
//! bytes 4..8    N1 (u32)
//! bytes 8..12   N2 (u32)
//! bytes 12..16  N3 (u32)
//! bytes 16..20  component count (u32, 1 or 3)
//! bytes 20..24  payload width flag (u32, must be 64: IEEE f64 values)
//! bytes 24..    payload: N1*N2*N3*components f64 values, x-fastest,
//!               component index slowest (whole scalar volumes concatenated)
//! ```
//!
//! Reads and writes are bit-exact round trips.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use diffreg_core::{Grid, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"DVF1";
pub const PAYLOAD_BITS: u32 = 64;

#[derive(Debug)]
pub enum VolumeError {
    Io(io::Error),
    Malformed(String),
}

impl std::fmt::Display for VolumeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VolumeError::Io(e) => write!(f, "i/o error: {e}"),
            VolumeError::Malformed(m) => write!(f, "malformed volume: {m}"),
        }
    }
}

impl std::error::Error for VolumeError {}

impl From<io::Error> for VolumeError {
    fn from(e: io::Error) -> Self {
        VolumeError::Io(e)
    }
}

/// A loaded volume: one or three scalar components.
#[derive(Debug, Clone)]
pub enum Volume {
    Scalar(ScalarField),
    Vector(VectorField),
}

impl Volume {
    pub fn grid(&self) -> Grid {
        match self {
            Volume::Scalar(f) => f.grid(),
            Volume::Vector(v) => v.grid(),
        }
    }
}

fn write_header<W: Write>(w: &mut W, dims: [usize; 3], components: u32) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&components.to_le_bytes())?;
    w.write_all(&PAYLOAD_BITS.to_le_bytes())?;
    Ok(())
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_scalar(path: &Path, field: &ScalarField) -> Result<(), VolumeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, field.grid().dims(), 1)?;
    write_values(&mut w, field.values())?;
    w.flush()?;
    Ok(())
}

pub fn write_vector(path: &Path, field: &VectorField) -> Result<(), VolumeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, field.grid().dims(), 3)?;
    for j in 0..3 {
        write_values(&mut w, field.component(j).values())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume, VolumeError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(VolumeError::Malformed(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32, VolumeError> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let n1 = read_u32(&mut r)? as usize;
    let n2 = read_u32(&mut r)? as usize;
    let n3 = read_u32(&mut r)? as usize;
    let components = read_u32(&mut r)?;
    let bits = read_u32(&mut r)?;
    if bits != PAYLOAD_BITS {
        return Err(VolumeError::Malformed(format!("payload width {bits}, expected 64")));
    }
    if components != 1 && components != 3 {
        return Err(VolumeError::Malformed(format!("component count {components}")));
    }
    let grid = Grid::new(n1, n2, n3)
        .map_err(|e| VolumeError::Malformed(format!("grid dims: {e}")))?;

    let read_component = |r: &mut BufReader<File>| -> Result<ScalarField, VolumeError> {
        let mut bytes = vec![0u8; grid.len() * 8];
        r.read_exact(&mut bytes).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                VolumeError::Malformed("payload shorter than header promises".into())
            } else {
                VolumeError::Io(e)
            }
        })?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        ScalarField::from_values(grid, values)
            .map_err(|e| VolumeError::Malformed(e.to_string()))
    };

    if components == 1 {
        let f = read_component(&mut r)?;
        ensure_consumed(&mut r)?;
        Ok(Volume::Scalar(f))
    } else {
        let c1 = read_component(&mut r)?;
        let c2 = read_component(&mut r)?;
        let c3 = read_component(&mut r)?;
        ensure_consumed(&mut r)?;
        let v = VectorField::from_components(c1, c2, c3)
            .map_err(|e| VolumeError::Malformed(e.to_string()))?;
        Ok(Volume::Vector(v))
    }
}

fn ensure_consumed(r: &mut BufReader<File>) -> Result<(), VolumeError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(VolumeError::Malformed("trailing bytes after payload".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffreg_core::bandlimited::random_band_limited_scalar;
    use diffreg_core::rng::SplitMix64;

    #[test]
    fn scalar_round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join("dvf_test_scalar");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.dvf");
        let grid = Grid::new(8, 6, 4).unwrap();
        let mut rng = SplitMix64::new(3);
        let f = random_band_limited_scalar(grid, 2, 1.0, &mut rng);
        write_scalar(&path, &f).unwrap();
        match read_volume(&path).unwrap() {
            Volume::Scalar(g) => {
                assert_eq!(g.grid(), grid);
                for (a, b) in f.values().iter().zip(g.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("expected scalar"),
        }
    }

    #[test]
    fn vector_round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join("dvf_test_vector");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.dvf");
        let grid = Grid::new(6, 8, 4).unwrap();
        let mut rng = SplitMix64::new(5);
        let v = diffreg_core::bandlimited::random_band_limited_vector(grid, 2, 1.0, &mut rng);
        write_vector(&path, &v).unwrap();
        match read_volume(&path).unwrap() {
            Volume::Vector(w) => {
                for j in 0..3 {
                    for (a, b) in v.component(j).values().iter().zip(w.component(j).values()) {
                        assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
            }
            _ => panic!("expected vector"),
        }
    }

    #[test]
    fn malformed_volumes_are_rejected() {
        let dir = std::env::temp_dir().join("dvf_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let bad_magic = dir.join("bad_magic.dvf");
        std::fs::write(&bad_magic, b"NOPE0000000000000000000000").unwrap();
        assert!(matches!(read_volume(&bad_magic), Err(VolumeError::Malformed(_))));

        // header promises more payload than present
        let truncated = dir.join("truncated.dvf");
        let grid = Grid::new(4, 4, 4).unwrap();
        let f = ScalarField::constant(grid, 1.0);
        write_scalar(&truncated, &f).unwrap();
        let full = std::fs::read(&truncated).unwrap();
        std::fs::write(&truncated, &full[..full.len() - 8]).unwrap();
        assert!(matches!(read_volume(&truncated), Err(VolumeError::Malformed(_))));
    }
}
