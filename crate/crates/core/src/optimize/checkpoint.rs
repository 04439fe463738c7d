//! Binary checkpoints of a [`TrainState`].
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        8 bytes  "S4DCKPT\0"
//! version      u32      = 1
//! iteration    u64
//! adam_step    u64
//! lr_scale     f64
//! recoveries   u32
//! count        u64      number of primitives
//! sh_degree    u32
//! fourier      u32
//! background   3 × f64
//! t_period     f64
//! bbox_min     3 × f64
//! bbox_max     3 × f64
//! extent       f64
//! then per primitive, P = 17 + 3·(sh+1)²·(2·fourier+1):
//!   params     P × f64  (mean, log_scale, rot_left, rot_right, opacity_logit, color)
//!   adam_m     P × f64
//!   adam_v     P × f64
//! ```
//!
//! Loss history and the camera access log are not stored.

use std::io::{Read, Write};

use nalgebra::{Vector3, Vector4};
use thiserror::Error;

use super::{Aabb, AdamState, TrainState};
use crate::geometry::{ColorCoeffs, Gaussian4D};
use crate::raster::RenderSettings;

pub const MAGIC: &[u8; 8] = b"S4DCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_checkpoint<W: Write>(state: &TrainState, mut w: W) -> Result<(), CheckpointError> {
    let (sh, fo) = state
        .gaussians
        .first()
        .map(|g| (g.color.sh_degree(), g.color.fourier_order()))
        .unwrap_or((0, 0));
    if state
        .gaussians
        .iter()
        .any(|g| g.color.sh_degree() != sh || g.color.fourier_order() != fo)
    {
        return Err(CheckpointError::Corrupt("mixed color layouts".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&state.iteration.to_le_bytes())?;
    w.write_all(&state.adam.step.to_le_bytes())?;
    w.write_all(&state.lr_scale.to_le_bytes())?;
    w.write_all(&state.recoveries.to_le_bytes())?;
    w.write_all(&(state.gaussians.len() as u64).to_le_bytes())?;
    w.write_all(&(sh as u32).to_le_bytes())?;
    w.write_all(&(fo as u32).to_le_bytes())?;
    let mut header = Vec::new();
    header.extend_from_slice(&state.settings.background);
    header.push(state.settings.t_period);
    header.extend_from_slice(state.bbox.min.as_slice());
    header.extend_from_slice(state.bbox.max.as_slice());
    header.push(state.extent);
    write_f64s(&mut w, &header)?;
    let mut params = Vec::new();
    for (i, g) in state.gaussians.iter().enumerate() {
        params.clear();
        g.write_params(&mut params);
        write_f64s(&mut w, &params)?;
        write_f64s(&mut w, &state.adam.m[i])?;
        write_f64s(&mut w, &state.adam.v[i])?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<TrainState, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let iteration = read_u64(&mut r)?;
    let step = read_u64(&mut r)?;
    let lr_scale = read_f64s(&mut r, 1)?[0];
    let recoveries = read_u32(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let sh = read_u32(&mut r)? as usize;
    let fo = read_u32(&mut r)? as usize;
    let header = read_f64s(&mut r, 11)?;
    let color = ColorCoeffs::zeros(sh, fo).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let template = Gaussian4D::axis_aligned(Vector4::zeros(), Vector4::repeat(1.0), 0.5, color);
    let p = template.param_count();
    let mut gaussians = Vec::with_capacity(count.min(1 << 20));
    let mut adam = AdamState {
        step,
        m: Vec::new(),
        v: Vec::new(),
    };
    for _ in 0..count {
        let mut g = template.clone();
        g.read_params(&read_f64s(&mut r, p)?);
        gaussians.push(g);
        adam.m.push(read_f64s(&mut r, p)?);
        adam.v.push(read_f64s(&mut r, p)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let bbox = Aabb {
        min: Vector3::new(header[4], header[5], header[6]),
        max: Vector3::new(header[7], header[8], header[9]),
    };
    Ok(TrainState {
        gaussians,
        iteration,
        adam,
        lr_scale,
        recoveries,
        losses: Vec::new(),
        accessed_cameras: Default::default(),
        extent: header[10],
        bbox,
        settings: RenderSettings {
            background: [header[0], header[1], header[2]],
            t_period: header[3],
        },
    })
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
