//! Binary Netpbm (P5 grayscale, P6 RGB) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureVolume, Shape3};

/// Decoded Netpbm raster. Samples are interleaved as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 (P5) or 3 (P6).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl PnmImage {
    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::with_channels(width, height, 1, pixels)
    }

    pub fn rgb(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::with_channels(width, height, 3, pixels)
    }

    fn with_channels(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("zero-sized image".into()));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Image(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Image(format!("missing {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image(format!("{what} out of range at byte {start}")))
    }
}

/// Parses a P5 or P6 file. Samples with maxval below 255 are kept as stored.
pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let (image, _) = parse_with_maxval(bytes)?;
    Ok(image)
}

fn parse_with_maxval(bytes: &[u8]) -> Result<(PnmImage, usize)> {
    let magic = bytes
        .get(..2)
        .ok_or_else(|| Error::Image("file too short".into()))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        b"P1" | b"P2" | b"P3" | b"P4" | b"P7" => {
            return Err(Error::UnsupportedVariant(format!(
                "{} (only binary P5/P6 are read)",
                String::from_utf8_lossy(magic)
            )))
        }
        _ => return Err(Error::Image("not a Netpbm file".into())),
    };
    let mut header = Header { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Image("zero-sized image".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedVariant(format!("maxval {maxval}")));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => {
            return Err(Error::Image(format!(
                "expected whitespace after maxval at byte {}",
                header.pos
            )))
        }
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Image("image dimensions overflow".into()))?;
    let data = &bytes[header.pos..];
    if data.len() < len {
        return Err(Error::Image(format!(
            "raster truncated: need {len} bytes after header, have {}",
            data.len()
        )));
    }
    let image = PnmImage::with_channels(width, height, channels, data[..len].to_vec())?;
    Ok((image, maxval))
}

/// Canonical encoding: `P5|P6\n<w> <h>\n255\n` followed by the raster.
pub fn encode_pnm(image: &PnmImage) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    parse_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(path: &Path, image: &PnmImage) -> Result<()> {
    std::fs::write(path, encode_pnm(image))?;
    Ok(())
}

/// Decodes into a channel-outermost volume with samples scaled to `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<FeatureVolume> {
    let (img, maxval) = parse_with_maxval(bytes)?;
    let shape = Shape3::new(img.channels, img.height, img.width);
    let scale = maxval as f32;
    Ok(FeatureVolume::from_fn(shape, |c, h, w| {
        img.pixels[(h * img.width + w) * img.channels + c] as f32 / scale
    }))
}

/// Quantises a 1- or 3-channel volume (values clamped to `[0, 1]`) to 8 bits.
pub fn volume_to_pnm(volume: &FeatureVolume) -> Result<PnmImage> {
    let s = volume.shape();
    if s.channels != 1 && s.channels != 3 {
        return Err(Error::Image(format!(
            "cannot encode {} channels",
            s.channels
        )));
    }
    let mut pixels = Vec::with_capacity(s.len());
    for h in 0..s.height {
        for w in 0..s.width {
            for c in 0..s.channels {
                pixels.push((volume.get(c, h, w).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    PnmImage::with_channels(s.width, s.height, s.channels, pixels)
}

pub fn read_image(path: &Path) -> Result<FeatureVolume> {
    decode_image(&std::fs::read(path)?)
}

pub fn write_image(volume: &FeatureVolume, path: &Path) -> Result<()> {
    write_pnm(path, &volume_to_pnm(volume)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_pixel() {
        let v = decode_image(b"P5\n1 1\n255\n\xff").unwrap();
        assert_eq!(v.shape(), Shape3::new(1, 1, 1));
        assert_eq!(v.data(), &[1.0]);
    }

    #[test]
    fn ppm_round_trip_is_byte_identical() {
        let bytes = b"P6\n2 1\n255\n\x01\x02\x03\xfa\xfb\xfc".to_vec();
        let v = decode_image(&bytes).unwrap();
        assert_eq!(v.get(2, 0, 1), 252.0 / 255.0);
        assert_eq!(encode_pnm(&volume_to_pnm(&v).unwrap()), bytes);
    }

    #[test]
    fn ascii_variants_are_unsupported() {
        for magic in ["P2", "P3", "P1"] {
            let data = format!("{magic}\n1 1\n255\n0\n");
            assert!(matches!(
                decode_image(data.as_bytes()),
                Err(Error::UnsupportedVariant(_))
            ));
        }
    }

    #[test]
    fn header_comments_and_low_maxval() {
        let v = decode_image(b"P5 # comment\n2 # w\n1\n15\n\x0f\x05").unwrap();
        assert_eq!(v.data(), &[1.0, 5.0 / 15.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_image(b"P5\n2\n").is_err());
        assert!(decode_image(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_image(b"P5\n0 2\n255\n").is_err());
        assert!(decode_image(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode_image(b"P5\n1 1\n255").is_err());
        assert!(decode_image(b"JPEG").is_err());
        assert!(decode_image(b"P5\n99999999999999999999999 1\n255\n").is_err());
    }

    #[test]
    fn rejects_unencodable_channel_counts() {
        assert!(volume_to_pnm(&FeatureVolume::zeros(Shape3::new(2, 1, 1))).is_err());
    }
}
