//! In-memory RGB and depth images. Pixel data is stored as `f32` so that the
//! on-disk float formats round-trip without loss; depth uses `+inf` as the
//! no-surface sentinel.

/// RGB image with channel values in [0, 1], row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        self.data[y * self.width + x] = rgb;
    }
}

/// Depth image in meters, row-major from the top-left. Pixels with no surface
/// hit hold `f32::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![f32::INFINITY; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f32) {
        self.data[y * self.width + x] = d;
    }

    /// True where a surface was hit.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|d| d.is_finite()).collect()
    }
}
