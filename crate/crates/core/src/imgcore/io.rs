//! PNG read/write for [`Image`]. PNG is lossless, so save/load round trips
//! are bit-exact.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::Image;
use crate::error::{CoreError, Result};

impl Image {
    /// Load an 8-bit RGB PNG. Other colour types are converted to RGB8.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let dynimg = image::open(path.as_ref())?;
        let rgb = dynimg.to_rgb8();
        Image::from_raw(rgb.width(), rgb.height(), rgb.into_raw())
    }

    /// Write as 8-bit RGB PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let rgb = RgbImage::from_raw(self.width(), self.height(), self.data().to_vec())
            .ok_or_else(|| CoreError::Geometry("image buffer size mismatch".into()))?;
        rgb.save_with_format(path.as_ref(), ImageFormat::Png)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn png_round_trip_is_bit_exact() {
        let mut rng = crate::rng::seeded_rng(11);
        let data: Vec<u8> = (0..48 * 32 * 3).map(|_| rng.gen()).collect();
        let img = Image::from_raw(48, 32, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }
}
