//! Debug dump of a cache. Layout, all little-endian:
//!
//! ```text
//! u64 entry_count | u8 order (0 pixel, 1 gaussian)
//! per entry: u32 pixel, u32 gaussian, f64 T, f64×3 dc_dalpha, f64 dc_dcs, f64 alpha, u8 clamped
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{CacheEntry, CacheOrder, GradientCache};

impl GradientCache {
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        w.write_u8(match self.order {
            CacheOrder::PixelSorted => 0,
            CacheOrder::GaussianSorted => 1,
        })?;
        for e in &self.entries {
            w.write_u32::<LittleEndian>(e.pixel)?;
            w.write_u32::<LittleEndian>(e.gaussian)?;
            w.write_f64::<LittleEndian>(e.transmittance)?;
            for v in e.dc_dalpha {
                w.write_f64::<LittleEndian>(v)?;
            }
            w.write_f64::<LittleEndian>(e.dc_dcs)?;
            w.write_f64::<LittleEndian>(e.alpha)?;
            w.write_u8(e.clamped as u8)?;
        }
        Ok(())
    }
}

/// Reads back the entries written by [`GradientCache::write_dump`].
pub fn read_dump(mut r: impl Read) -> std::io::Result<(CacheOrder, Vec<CacheEntry>)> {
    let count = r.read_u64::<LittleEndian>()? as usize;
    let order = match r.read_u8()? {
        0 => CacheOrder::PixelSorted,
        1 => CacheOrder::GaussianSorted,
        other => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unknown cache order tag {other}"),
            ))
        }
    };
    let mut entries = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let pixel = r.read_u32::<LittleEndian>()?;
        let gaussian = r.read_u32::<LittleEndian>()?;
        let transmittance = r.read_f64::<LittleEndian>()?;
        let mut dc_dalpha = [0.0; 3];
        for v in &mut dc_dalpha {
            *v = r.read_f64::<LittleEndian>()?;
        }
        entries.push(CacheEntry {
            pixel,
            gaussian,
            transmittance,
            dc_dalpha,
            dc_dcs: r.read_f64::<LittleEndian>()?,
            alpha: r.read_f64::<LittleEndian>()?,
            clamped: r.read_u8()? != 0,
        });
    }
    Ok((order, entries))
}
