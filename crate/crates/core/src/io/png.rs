//! 8-bit PNG load/save for RGB rasters in [0, 1].

use std::path::Path;

use super::IoError;
use crate::raster::Raster;

pub fn save_png(path: &Path, raster: &Raster) -> Result<(), IoError> {
    assert_eq!(raster.channels, 3, "save_png expects an RGB raster");
    let mut img = image::RgbImage::new(raster.width as u32, raster.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let src = raster.pixel(x as usize, y as usize);
        for c in 0..3 {
            px.0[c] = (src[c].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(|e| IoError::Image {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_png(path: &Path) -> Result<Raster, IoError> {
    let img = image::open(path)
        .map_err(|e| IoError::Image {
            path: path.display().to_string(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut raster = Raster::zeros(w, h, 3);
    for (x, y, px) in img.enumerate_pixels() {
        let dst = raster.pixel_mut(x as usize, y as usize);
        for c in 0..3 {
            dst[c] = px.0[c] as f64 / 255.0;
        }
    }
    if let Some(stem) = path.file_stem() {
        raster.source_id = Some(stem.to_string_lossy().into_owned());
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut r = Raster::zeros(4, 2, 3);
        for (i, x) in r.data.iter_mut().enumerate() {
            *x = ((i * 11) % 256) as f64 / 255.0;
        }
        save_png(&path, &r).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.data, r.data);
        assert_eq!(back.source_id.as_deref(), Some("img"));
    }
}
