//! The `MELS` / `MASK` grid container.
//!
//! Layout (little endian): 4 magic bytes, `u32` {version = 1, n_frames,
//! n_mels, sample_rate, frame_hop}, then `n_frames * n_mels` `f32` values,
//! frame-major.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MELS_MAGIC: [u8; 4] = *b"MELS";
pub const MASK_MAGIC: [u8; 4] = *b"MASK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GridContainer {
    pub magic: [u8; 4],
    pub grid: Grid,
    pub sample_rate: u32,
    pub frame_hop: u32,
}

pub fn encode_grid_container(c: &GridContainer) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * c.grid.data().len());
    out.extend_from_slice(&c.magic);
    for v in [
        VERSION,
        c.grid.rows() as u32,
        c.grid.cols() as u32,
        c.sample_rate,
        c.frame_hop,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in c.grid.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid_container(bytes: &[u8]) -> Result<GridContainer> {
    if bytes.len() < 24 {
        return Err(Error::Format("container header truncated".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MELS_MAGIC && magic != MASK_MAGIC {
        return Err(Error::Format(format!("unknown magic {magic:?}")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(Error::Format(format!("unsupported version {}", word(0))));
    }
    let (frames, mels) = (word(1) as usize, word(2) as usize);
    let body = &bytes[24..];
    if body.len() != frames * mels * 4 {
        return Err(Error::Format(format!(
            "expected {} data bytes for {frames}x{mels}, found {}",
            frames * mels * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(GridContainer {
        magic,
        grid: Grid::new(frames, mels, data)?,
        sample_rate: word(3),
        frame_hop: word(4),
    })
}

pub fn write_grid_container(path: impl AsRef<Path>, c: &GridContainer) -> Result<()> {
    std::fs::write(path, encode_grid_container(c))?;
    Ok(())
}

pub fn read_grid_container(path: impl AsRef<Path>) -> Result<GridContainer> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_grid_container(&bytes)
}
