use crate::error::{Error, Result};

/// 8-bit RGB raster, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Binary raster with values 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Image {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean color of the outermost ring of pixels.
    pub fn border_mean(&self) -> [u8; 3] {
        let (w, h) = (self.width, self.height);
        let mut sum = [0u64; 3];
        let mut n = 0u64;
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    let p = self.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                    n += 1;
                }
            }
        }
        sum.map(|s| ((s as f64 / n as f64).round()) as u8)
    }

    pub fn hflip(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: permute(&self.data, self.width, self.height, 3, Turn::Flip).2,
        }
    }

    /// Quarter turn counter-clockwise; width and height swap.
    pub fn rot90(&self) -> Image {
        let (width, height, data) = permute(&self.data, self.width, self.height, 3, Turn::Quarter);
        Image { width, height, data }
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Data(format!(
                "{width}x{height} mask needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Data("mask values must be 0 or 1".into()));
        }
        Ok(Mask { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn hflip(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: permute(&self.data, self.width, self.height, 1, Turn::Flip).2,
        }
    }

    pub fn rot90(&self) -> Mask {
        let (width, height, data) = permute(&self.data, self.width, self.height, 1, Turn::Quarter);
        Mask { width, height, data }
    }
}

#[derive(Clone, Copy)]
enum Turn {
    Flip,
    Quarter,
}

fn permute(src: &[u8], w: usize, h: usize, ch: usize, turn: Turn) -> (usize, usize, Vec<u8>) {
    let mut out = vec![0u8; src.len()];
    let (ow, oh) = match turn {
        Turn::Flip => (w, h),
        Turn::Quarter => (h, w),
    };
    for y in 0..h {
        for x in 0..w {
            let (ox, oy) = match turn {
                Turn::Flip => (w - 1 - x, y),
                // Counter-clockwise: the right column becomes the top row.
                Turn::Quarter => (y, w - 1 - x),
            };
            let s = (y * w + x) * ch;
            let d = (oy * ow + ox) * ch;
            out[d..d + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    (ow, oh, out)
}
