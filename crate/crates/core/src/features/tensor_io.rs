//! Binary layer-stack files: the on-disk format shared by the feature cache
//! and external embedding adapters.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::LayerStack;

const MAGIC: &[u8; 8] = b"HASASTK1";

/// Write a stack as little-endian f64 matrices with a shape header.
pub fn write_stack(path: &Path, stack: &LayerStack) -> Result<()> {
    stack.validate()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(stack.n_layers() as u32).to_le_bytes())?;
    out.write_all(&(stack.n_frames() as u32).to_le_bytes())?;
    out.write_all(&(stack.dim() as u32).to_le_bytes())?;
    out.write_all(&stack.frame_hop_seconds.to_le_bytes())?;
    let id = stack.provider_id.as_bytes();
    out.write_all(&(id.len() as u32).to_le_bytes())?;
    out.write_all(id)?;
    for layer in &stack.layers {
        for v in layer.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a stack written by [`write_stack`].
pub fn read_stack(path: &Path) -> Result<LayerStack> {
    let mut input = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!(
            "{} is not a layer-stack file",
            path.display()
        )));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |input: &mut BufReader<fs::File>| -> Result<u32> {
        input.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let l = read_u32(&mut input)? as usize;
    let t = read_u32(&mut input)? as usize;
    let d = read_u32(&mut input)? as usize;
    let mut f64_buf = [0u8; 8];
    input.read_exact(&mut f64_buf)?;
    let frame_hop_seconds = f64::from_le_bytes(f64_buf);
    let id_len = {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        u32::from_le_bytes(b) as usize
    };
    let mut id_bytes = vec![0u8; id_len];
    input.read_exact(&mut id_bytes)?;
    let provider_id = String::from_utf8(id_bytes)
        .map_err(|_| Error::InvalidInput("stack provider id is not utf-8".into()))?;

    let mut layers = Vec::with_capacity(l);
    for _ in 0..l {
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t * d {
            input.read_exact(&mut f64_buf)?;
            data.push(f64::from_le_bytes(f64_buf));
        }
        layers.push(
            Array2::from_shape_vec((t, d), data)
                .map_err(|e| Error::InvalidInput(format!("stack shape: {e}")))?,
        );
    }
    let stack = LayerStack {
        layers,
        frame_hop_seconds,
        provider_id,
    };
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn stack_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/u.stack");
        let mut rng = rng_from_seed(5);
        let stack = LayerStack {
            layers: (0..3)
                .map(|_| Array2::from_shape_fn((7, 4), |_| rng.random_range(-2.0..2.0)))
                .collect(),
            frame_hop_seconds: 0.02,
            provider_id: "mock-ssl".into(),
        };
        write_stack(&path, &stack).unwrap();
        let back = read_stack(&path).unwrap();
        assert_eq!(back, stack);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.stack");
        fs::write(&path, b"not a stack at all").unwrap();
        assert!(read_stack(&path).is_err());
    }
}
