//! Binary model container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "DLADMMCK"
//! version    u32      1
//! layers     u32      L
//! activation u32      0 = relu, 1 = leaky relu
//! slope      f64      leaky slope (0 for relu)
//! per layer l = 1..L:
//!     rows   u32
//!     cols   u32
//!     W_l    rows*cols f64, row-major
//!     b_l    rows f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use dladmm::{Activation, Network64};

use crate::CliError;

pub const MAGIC: &[u8; 8] = b"DLADMMCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(mut out: impl Write, net: &Network64) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.weights.len() as u32).to_le_bytes())?;
    let (tag, slope) = match net.activation {
        Activation::Relu => (0u32, 0.0f64),
        Activation::LeakyRelu(s) => (1, s),
    };
    out.write_all(&tag.to_le_bytes())?;
    out.write_all(&slope.to_le_bytes())?;
    for (w, b) in net.weights.iter().zip(&net.biases) {
        out.write_all(&(w.nrows() as u32).to_le_bytes())?;
        out.write_all(&(w.ncols() as u32).to_le_bytes())?;
        for v in w.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in b.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(path: &Path, net: &Network64) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CliError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Network64, CliError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(CliError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let layers = c.u32()? as usize;
    let activation = match (c.u32()?, c.f64()?) {
        (0, _) => Activation::Relu,
        (1, s) => Activation::LeakyRelu(s),
        (t, _) => return Err(CliError::Checkpoint(format!("unknown activation tag {t}"))),
    };
    activation.validate().map_err(|e| CliError::Checkpoint(e.to_string()))?;
    let mut weights = Vec::with_capacity(layers.min(64));
    let mut biases = Vec::with_capacity(layers.min(64));
    for l in 0..layers {
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| CliError::Checkpoint(format!("layer {} size overflows", l + 1)))?;
        if count.saturating_mul(8) > bytes.len() {
            return Err(CliError::Checkpoint(format!("layer {} larger than file", l + 1)));
        }
        let data = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        let b = (0..rows).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        if let Some(prev) = weights.last().map(|w: &Array2<f64>| w.nrows()) {
            if prev != cols {
                return Err(CliError::Checkpoint(format!(
                    "layer {} expects {cols} inputs but layer {l} has {prev} outputs",
                    l + 1
                )));
            }
        }
        weights.push(Array2::from_shape_vec((rows, cols), data).expect("length checked"));
        biases.push(Array1::from(b));
    }
    if c.pos != bytes.len() {
        return Err(CliError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if weights.is_empty() {
        return Err(CliError::Checkpoint("no layers".into()));
    }
    Ok(Network64 {
        activation,
        weights,
        biases,
    })
}

pub fn load(path: &Path) -> Result<Network64, CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}
