use std::path::Path;

use super::WaveletDecomposition;
use crate::data::image_io::save_gray_min_max;
use crate::error::Result;

/// Writes the first channel of each subband as `<stem>.{a1,hl,lh,hh}.png`,
/// min-max normalized to 8 bits.
pub fn export_subbands(decomp: &WaveletDecomposition, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (tag, band) in ["a1", "hl", "lh", "hh"].iter().zip(decomp.subbands()) {
        let (_, h, w) = band.chw()?;
        save_gray_min_max(&dir.join(format!("{stem}.{tag}.png")), band.plane(0), h, w)?;
    }
    Ok(())
}
