//! Binary state checkpoints: `N: u64, d: u64, time: f64`, then the `N x d`
//! positions row-major, all little-endian.

use std::io::{Read, Write};

use super::ParticleState;
use crate::error::{Error, Result};

impl ParticleState {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        for v in self.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint. The step index is not stored and comes back as 0.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let time = f64::from_le_bytes(next(&mut r)?);
        let len = n.checked_mul(d).ok_or_else(|| Error::InvalidArgument("checkpoint header overflows".into()))?;
        let mut data = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            data.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self::new(n, d, data)?.at(time, 0))
    }
}
