//! Image ingestion and visual tokenization.
//!
//! Images come from binary PGM/PPM files. [`patchify`] cuts an `H×W` image
//! into `HW/P²` non-overlapping `P×P` patches in row-major lattice order;
//! [`stub_encode`] maps patches to features with a seeded random affine map
//! and `tanh`; [`fuse_encoders`] concatenates two encoders' features per token.

use std::io::Read;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Upper bound on `width · height · channels` accepted from a file.
pub const MAX_PIXELS: usize = 1 << 28;

/// Pixels in `[0, 1]`, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::domain(format!(
                "image must be non-empty with 1 or 3 channels, got {height}x{width}x{channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::ElementCount {
                op: "Image::new",
                shape: vec![height, width, channels],
                len: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("pixel values must lie in [0, 1]"));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Grayscale is promoted by replicating the single channel.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            pixels: self.pixels.iter().flat_map(|&p| [p, p, p]).collect(),
        }
    }

    /// Binary PGM/PPM encoding with maxval 255. Values are rounded to the nearest level.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&p| (p * 255.0).round() as u8));
        out
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                Error::Truncated {
                    what: "PNM header",
                    expected: self.pos + 1,
                    got: self.bytes.len(),
                }
            } else {
                Error::PnmHeader(format!("expected {field}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::PnmHeader(format!("{field} out of range")))
    }
}

/// Reads a binary PGM (P5) or PPM (P6) image with maxval 255.
pub fn load_pnm<R: Read>(mut source: R) -> Result<Image> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < 2 {
        return Err(Error::Truncated {
            what: "PNM magic",
            expected: 2,
            got: bytes.len(),
        });
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(Error::BadPnmMagic([other[0], other[1]])),
    };
    let mut hdr = HeaderReader { bytes: &bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(Error::PnmHeader(format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::PnmHeader(format!("empty image {width}x{height}")));
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or(Error::DimensionOverflow {
            width,
            height,
            channels,
        })?;
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        Some(_) => return Err(Error::PnmHeader("missing whitespace after maxval".into())),
        None => {
            return Err(Error::Truncated {
                what: "PNM payload",
                expected: count,
                got: 0,
            })
        }
    }
    let payload = &bytes[hdr.pos..];
    if payload.len() < count {
        return Err(Error::Truncated {
            what: "PNM payload",
            expected: count,
            got: payload.len(),
        });
    }
    let pixels = payload[..count].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, channels, pixels)
}

/// Tokens on a `rows × cols` lattice, one row of `tokens` per lattice cell
/// in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub tokens: Tensor<f64>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, patch_size: usize, tokens: Tensor<f64>) -> Result<Self> {
        let (n, _) = tokens.dims2()?;
        if n != rows * cols {
            return Err(Error::shape("PatchGrid::new", &[rows, cols], tokens.shape()));
        }
        Ok(PatchGrid {
            rows,
            cols,
            patch_size,
            tokens,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    /// `(rows, cols, dim)` view for dumping to a tensor file.
    pub fn to_tensor3(&self) -> Tensor<f64> {
        self.tokens
            .clone()
            .reshape([self.rows, self.cols, self.dim()])
            .expect("grid size matches token count")
    }
}

/// Splits `img` into `P×P` patches. Patch `(r, c)` flattens pixel rows
/// `rP..(r+1)P` and columns `cP..(c+1)P` row-major with channels innermost.
pub fn patchify(img: &Image, patch: usize) -> Result<PatchGrid> {
    let (h, w, ch) = (img.height, img.width, img.channels);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::domain(format!(
            "patch size {patch} must divide image height {h} and width {w}"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let dim = patch * patch * ch;
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for py in 0..patch {
                let start = ((r * patch + py) * w + c * patch) * ch;
                data.extend_from_slice(&img.pixels[start..start + patch * ch]);
            }
        }
    }
    PatchGrid::new(rows, cols, patch, Tensor::new([rows * cols, dim], data)?)
}

/// Inverse of [`patchify`] for raw pixel grids.
pub fn unpatchify(grid: &PatchGrid, channels: usize) -> Result<Image> {
    let p = grid.patch_size;
    if grid.dim() != p * p * channels {
        return Err(Error::shape("unpatchify", &[grid.dim()], &[p * p * channels]));
    }
    let (h, w) = (grid.rows * p, grid.cols * p);
    let mut pixels = vec![0.0; h * w * channels];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let tok = grid.tokens.row(r * grid.cols + c);
            for py in 0..p {
                let dst = ((r * p + py) * w + c * p) * channels;
                pixels[dst..dst + p * channels].copy_from_slice(&tok[py * p * channels..(py + 1) * p * channels]);
            }
        }
    }
    Image::new(h, w, channels, pixels)
}

/// Deterministic stand-in for a pretrained vision encoder:
/// `tokens' = tanh(tokens · M + b)`.
///
/// `M` (`D_in × D_out`) and then `b` (`D_out`) are drawn in row-major order
/// from [`SplitMix64`] seeded with `seed`: `M_ij = (2u − 1)/√D_in` and
/// `b_j = 0.1 · (2u − 1)`, with `u` uniform in `[0, 1)`.
pub fn stub_encode(grid: &PatchGrid, seed: u64, d_out: usize) -> Result<PatchGrid> {
    if d_out == 0 {
        return Err(Error::domain("encoder output width must be at least 1"));
    }
    let d_in = grid.dim();
    let mut rng = SplitMix64::new(seed);
    let bound = 1.0 / (d_in.max(1) as f64).sqrt();
    let m = Tensor::from_fn(d_in, d_out, |_, _| bound * rng.next_signed())?;
    let b: Vec<f64> = (0..d_out).map(|_| 0.1 * rng.next_signed()).collect();
    let tokens = grid.tokens.matmul(&m)?.add_row(&b)?.map(f64::tanh)?;
    PatchGrid::new(grid.rows, grid.cols, grid.patch_size, tokens)
}

/// Per-token feature concatenation `[f_a; f_b]`.
pub fn fuse_encoders(a: &PatchGrid, b: &PatchGrid) -> Result<PatchGrid> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Fusion {
            left: (a.rows, a.cols),
            right: (b.rows, b.cols),
        });
    }
    PatchGrid::new(a.rows, a.cols, a.patch_size, a.tokens.concat_cols(&b.tokens)?)
}
