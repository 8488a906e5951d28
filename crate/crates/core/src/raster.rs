//! Dense float rasters: RGB images, feature maps and depth maps share this
//! storage (row-major, channel-interleaved f64).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("raster shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("data length {len} does not match {width}x{height}x{channels}")]
    BadDataLength {
        len: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Identifier of the file or view this raster came from, when known.
    pub source_id: Option<String>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            source_id: None,
        }
    }

    pub fn from_data(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if data.len() != width * height * channels {
            return Err(RasterError::BadDataLength {
                len: data.len(),
                width,
                height,
                channels,
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
            source_id: None,
        })
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub fn ensure_same_shape(&self, other: &Raster) -> Result<(), RasterError> {
        if !self.same_shape(other) {
            return Err(RasterError::ShapeMismatch {
                expected: self.shape_str(),
                got: other.shape_str(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_indexing_is_row_major_interleaved() {
        let mut r = Raster::zeros(3, 2, 2);
        r.pixel_mut(2, 1)[1] = 7.0;
        assert_eq!(r.data[(1 * 3 + 2) * 2 + 1], 7.0);
        assert_eq!(r.get(2, 1, 1), 7.0);
    }

    #[test]
    fn from_data_rejects_bad_length() {
        assert!(matches!(
            Raster::from_data(2, 2, 3, vec![0.0; 5]),
            Err(RasterError::BadDataLength { .. })
        ));
    }
}
