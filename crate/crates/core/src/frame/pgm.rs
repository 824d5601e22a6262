//! Binary PGM (P5) with maxval 255.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Frame, FrameError};

pub fn save_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<(), FrameError> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_pgm(frame, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_pgm<W: Write>(frame: &Frame, out: &mut W) -> Result<(), FrameError> {
    write!(out, "P5\n{} {}\n255\n", frame.width(), frame.height())?;
    out.write_all(&frame.to_u8())?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Frame, FrameError> {
    let bytes = fs::read(path)?;
    read_pgm(&mut bytes.as_slice())
}

pub fn read_pgm<R: Read>(input: &mut R) -> Result<Frame, FrameError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = Header { bytes: &bytes, pos: 0 };

    if cursor.token()? != b"P5" {
        return Err(FrameError::MalformedPgm("magic is not P5".into()));
    }
    let width = cursor.number()? as usize;
    let height = cursor.number()? as usize;
    let maxval = cursor.number()?;
    if width == 0 || height == 0 {
        return Err(FrameError::ZeroDims(width, height));
    }
    if maxval != 255 {
        return Err(FrameError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(FrameError::MalformedPgm("missing raster separator".into())),
    }
    let expected = width * height;
    let payload = &bytes[cursor.pos..];
    if payload.len() < expected {
        return Err(FrameError::TruncatedPgm {
            expected,
            got: payload.len(),
        });
    }
    Frame::from_u8(width, height, &payload[..expected])
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_blank(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
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

    fn token(&mut self) -> Result<&'a [u8], FrameError> {
        self.skip_blank();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FrameError::MalformedPgm("header ended early".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<u32, FrameError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                FrameError::MalformedPgm(format!("expected integer, found {:?}", String::from_utf8_lossy(tok)))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(frame: &Frame) -> Vec<u8> {
        let mut v = Vec::new();
        write_pgm(frame, &mut v).unwrap();
        v
    }

    #[test]
    fn single_white_pixel() {
        let f = read_pgm(&mut &b"P5\n1 1\n255\n\xff"[..]).unwrap();
        assert_eq!(f.pixels(), &[1.0]);
        let f = read_pgm(&mut &b"P5 1 1 255 \x00"[..]).unwrap();
        assert_eq!(f.pixels(), &[0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let f = read_pgm(&mut &b"P5\n# made by hand\n2 1\n255\n\x00\xff"[..]).unwrap();
        assert_eq!(f.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            read_pgm(&mut &b"P2\n1 1\n255\n\x00"[..]),
            Err(FrameError::MalformedPgm(_))
        ));
        assert!(matches!(
            read_pgm(&mut &b"P5\n1 x\n255\n\x00"[..]),
            Err(FrameError::MalformedPgm(_))
        ));
        assert!(matches!(
            read_pgm(&mut &b"P5\n2 2\n255\n\x00\x01"[..]),
            Err(FrameError::TruncatedPgm { expected: 4, got: 2 })
        ));
        assert!(matches!(
            read_pgm(&mut &b"P5\n1 1\n65535\n\x00\x00"[..]),
            Err(FrameError::UnsupportedMaxval(65535))
        ));
        assert!(read_pgm(&mut &b"P5\n1 1\n"[..]).is_err());
    }

    #[test]
    fn round_trip_quantizes_once() {
        let pixels: Vec<f64> = (0..60).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let f = Frame::new(10, 6, pixels).unwrap();
        let once = encode(&f);
        let loaded = read_pgm(&mut once.as_slice()).unwrap();
        for (a, b) in f.pixels().iter().zip(loaded.pixels()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
        }
        assert_eq!(encode(&loaded), once);
    }
}
