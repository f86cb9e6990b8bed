//! Minimal PGM (portable graymap) codec: binary `P5` and plain `P2`, 8- or
//! 16-bit samples.

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Decode(format!("PGM header: bad {what}")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Graymap, DataError> {
    let plain = match bytes.get(..2) {
        Some(b"P5") => false,
        Some(b"P2") => true,
        _ => return Err(DataError::Decode("not a P2/P5 graymap".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > u16::MAX as usize {
        return Err(DataError::Decode(format!(
            "PGM header: {width}x{height} maxval {maxval} out of range"
        )));
    }
    let count = width * height;
    let mut pixels = Vec::with_capacity(count);
    if plain {
        for _ in 0..count {
            pixels.push(h.number("sample")? as u16);
        }
    } else {
        // exactly one whitespace byte separates the header from the raster
        let body = bytes.get(h.pos + 1..).unwrap_or_default();
        let wide = maxval > 255;
        let needed = count * if wide { 2 } else { 1 };
        if body.len() < needed {
            return Err(DataError::Decode(format!(
                "PGM raster truncated: {} of {needed} bytes",
                body.len()
            )));
        }
        if wide {
            pixels.extend(
                body[..needed]
                    .chunks(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]])),
            );
        } else {
            pixels.extend(body[..needed].iter().map(|&b| b as u16));
        }
    }
    if let Some(&p) = pixels.iter().find(|&&p| p as usize > maxval) {
        return Err(DataError::Decode(format!(
            "PGM sample {p} exceeds maxval {maxval}"
        )));
    }
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

/// Binary `P5` with 8-bit samples.
pub fn encode_u8(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let px = [0u8, 10, 128, 255, 7, 9];
        let g = decode(&encode_u8(3, 2, &px)).unwrap();
        assert_eq!((g.width, g.height, g.maxval), (3, 2, 255));
        assert_eq!(g.pixels, px.iter().map(|&p| p as u16).collect::<Vec<_>>());
    }

    #[test]
    fn plain_with_comments() {
        let text = b"P2\n# a comment\n2 2\n# another\n15\n0 5\n10 15\n";
        let g = decode(text).unwrap();
        assert_eq!(g.pixels, vec![0, 5, 10, 15]);
        assert_eq!(g.maxval, 15);
    }

    #[test]
    fn sixteen_bit() {
        let mut bytes = b"P5 1 2 65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x01, 0x00]);
        let g = decode(&bytes).unwrap();
        assert_eq!(g.pixels, vec![65535, 256]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode(b"P2\n1 1\n3\n9\n").is_err());
        assert!(decode(b"P5\n0 2\n255\n").is_err());
    }
}
