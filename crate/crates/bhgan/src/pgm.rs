//! Binary PGM (P5) with 8-bit samples.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PgmError {
    BadMagic,
    BadHeader(&'static str),
    Depth(u32),
    Truncated { expected: usize, found: usize },
}

impl fmt::Display for PgmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PgmError::BadMagic => write!(f, "not a binary PGM (P5) file"),
            PgmError::BadHeader(what) => write!(f, "malformed PGM header: {what}"),
            PgmError::Depth(maxval) => write!(f, "unsupported PGM maxval {maxval}, expected 8-bit (255)"),
            PgmError::Truncated { expected, found } => {
                write!(f, "PGM pixel data truncated: expected {expected} bytes, found {found}")
            }
        }
    }
}

impl std::error::Error for PgmError {}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.rest.first() {
                Some(c) if c.is_ascii_whitespace() => self.rest = &self.rest[1..],
                Some(b'#') => {
                    let end = self.rest.iter().position(|&c| c == b'\n').unwrap_or(self.rest.len());
                    self.rest = &self.rest[end..];
                }
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<u32, PgmError> {
        self.skip_space();
        let len = self.rest.iter().take_while(|c| c.is_ascii_digit()).count();
        if len == 0 {
            return Err(PgmError::BadHeader(what));
        }
        let text = std::str::from_utf8(&self.rest[..len]).expect("ascii digits");
        self.rest = &self.rest[len..];
        text.parse().map_err(|_| PgmError::BadHeader(what))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Gray8, PgmError> {
    if !bytes.starts_with(b"P5") {
        return Err(PgmError::BadMagic);
    }
    let mut h = Header { rest: &bytes[2..] };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(PgmError::Depth(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    match h.rest.split_first() {
        Some((c, raster)) if c.is_ascii_whitespace() => {
            let expected = width * height;
            if raster.len() < expected {
                return Err(PgmError::Truncated { expected, found: raster.len() });
            }
            Ok(Gray8 { width, height, data: raster[..expected].to_vec() })
        }
        _ => Err(PgmError::BadHeader("missing separator after maxval")),
    }
}

pub fn encode(img: &Gray8) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height, "raster size");
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = Gray8 { width: 3, height: 2, data: vec![0, 1, 2, 253, 254, 255] };
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5 # made by hand\n2 # w\n1\n255\n\x07\x08";
        let img = decode(bytes).unwrap();
        assert_eq!((img.width, img.height, img.data), (2, 1, vec![7, 8]));
    }

    #[test]
    fn rejects() {
        assert_eq!(decode(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic));
        assert_eq!(decode(b"P5\n1 1\n65535\n\0\0"), Err(PgmError::Depth(65535)));
        assert_eq!(decode(b"P5\n2 2\n255\n\0"), Err(PgmError::Truncated { expected: 4, found: 1 }));
        assert!(matches!(decode(b"P5\nx 2\n255\n"), Err(PgmError::BadHeader("width"))));
    }
}
