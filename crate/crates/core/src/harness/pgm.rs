//! Plain and binary PGM (P2/P5) with an 8-bit range.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    /// ASCII `P2`.
    Plain,
    /// Binary `P5`.
    Raw,
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel image (`1 x 1 x H x W`), mapping `[0, 1]` to
/// `0..=255`. Values outside the range are clamped.
pub fn write_pgm<W: Write>(mut out: W, img: &Tensor, format: PgmFormat) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::invalid("write_pgm", format!("expected a 1x1xHxW image, got {s}")));
    }
    let magic = match format {
        PgmFormat::Plain => "P2",
        PgmFormat::Raw => "P5",
    };
    write!(out, "{magic}\n{} {}\n255\n", s.w, s.h)?;
    match format {
        PgmFormat::Raw => out.write_all(&img.data().iter().map(|&v| to_byte(v)).collect::<Vec<_>>())?,
        PgmFormat::Plain => {
            for row in img.data().chunks(s.w) {
                let line: Vec<String> = row.iter().map(|&v| to_byte(v).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::invalid("read_pgm", msg)
}

/// Reads a P2 or P5 image into `[0, 1]`.
pub fn read_pgm<R: Read>(mut input: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header field `{s}`")));
    let (w, h, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    let scale = maxval as f64;
    let data: Vec<f64> = match header[0].as_str() {
        "P5" => {
            let body = bytes.get(pos + 1..pos + 1 + w * h).ok_or_else(|| bad("truncated pixel data"))?;
            body.iter().map(|&b| b as f64 / scale).collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals = text
                .split_ascii_whitespace()
                .take(w * h)
                .map(|t| num(t).map(|v| v as f64 / scale))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != w * h {
                return Err(bad("truncated pixel data"));
            }
            vals
        }
        m => return Err(bad(format!("unsupported magic `{m}`"))),
    };
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_both_formats() {
        let img = Tensor::from_fn(Shape::new(1, 1, 3, 4), |_, _, y, x| (y * 4 + x) as f64 * 17.0 / 255.0);
        for f in [PgmFormat::Plain, PgmFormat::Raw] {
            let mut buf = Vec::new();
            write_pgm(&mut buf, &img, f).unwrap();
            let back = read_pgm(&buf[..]).unwrap();
            assert!(back.max_abs_diff(&img).unwrap() < 1e-12);
        }
    }

    #[test]
    fn plain_header_and_comments() {
        let text = b"P2\n# made by hand\n2 1\n10\n0 10\n";
        let img = read_pgm(&text[..]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_multichannel_and_garbage() {
        assert!(write_pgm(Vec::new(), &Tensor::zeros(Shape::new(1, 2, 2, 2)), PgmFormat::Raw).is_err());
        assert!(read_pgm(&b"P6\n1 1\n255\n\0\0\0"[..]).is_err());
        assert!(read_pgm(&b"P5\n4 4\n255\n\0"[..]).is_err());
    }
}
