//! Sample output rendering: PGM image grids and numeric tables.

use crate::error::{Result, SmmError};
use crate::tensor::Tensor;

/// Map a value in (-1, 1) to an 8-bit gray level.
fn to_gray(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Tile `[N, 1, H, W]` samples into one binary PGM (P5) image, row-major,
/// `ceil(sqrt(N))` tiles per row, one-pixel separators.
pub fn pgm_grid(samples: &Tensor) -> Result<Vec<u8>> {
    if samples.shape.len() != 4 || samples.shape[1] != 1 {
        return Err(SmmError::InvalidArgument(format!(
            "image grid needs [N, 1, H, W] samples, got {:?}",
            samples.shape
        )));
    }
    let (n, h, w) = (samples.shape[0], samples.shape[2], samples.shape[3]);
    let cols = (n as f64).sqrt().ceil() as usize;
    let grid_rows = n.div_ceil(cols);
    let out_w = cols * w + cols - 1;
    let out_h = grid_rows * h + grid_rows - 1;
    let mut pixels = vec![0u8; out_w * out_h];
    for i in 0..n {
        let (gr, gc) = (i / cols, i % cols);
        let (y0, x0) = (gr * (h + 1), gc * (w + 1));
        for r in 0..h {
            for c in 0..w {
                pixels[(y0 + r) * out_w + x0 + c] = to_gray(samples.data[(i * h + r) * w + c]);
            }
        }
    }
    let mut out = format!("P5\n{out_w} {out_h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

/// Parse a binary PGM back into (width, height, pixels); the inverse of
/// `pgm_grid`'s container, used by tests and sanity checks.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header_err = |m: &str| SmmError::InvalidArgument(format!("bad PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header_err("truncated header"));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(header_err("not binary grayscale (P5)"));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| header_err("non-numeric header field"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(header_err("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let expected = w.checked_mul(h).ok_or_else(|| header_err("size overflow"))?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != expected {
        return Err(header_err(&format!(
            "payload is {} bytes, expected {expected}",
            body.len()
        )));
    }
    Ok((w, h, body.to_vec()))
}

/// Render `[N, d]` samples as a plain text table, one sample per line.
pub fn numeric_table(samples: &Tensor) -> Result<String> {
    if samples.shape.len() != 2 {
        return Err(SmmError::InvalidArgument(format!(
            "numeric table needs [N, d] samples, got {:?}",
            samples.shape
        )));
    }
    let (n, d) = (samples.shape[0], samples.shape[1]);
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..d)
            .map(|j| format!("{:.17e}", samples.data[i * d + j]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrips_through_parser() {
        // four 2x3 tiles -> 2x2 grid with separators: 7x5 output
        let samples = Tensor::new(vec![4, 1, 2, 3], vec![0.0; 24]).unwrap();
        let pgm = pgm_grid(&samples).unwrap();
        let (w, h, pixels) = parse_pgm(&pgm).unwrap();
        assert_eq!((w, h), (7, 5));
        assert_eq!(pixels.len(), 35);
        // tile pixels are mid-gray, separators black
        assert_eq!(pixels[0], 128);
        assert_eq!(pixels[3], 0);
    }

    #[test]
    fn gray_mapping_endpoints() {
        let samples = Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let pgm = pgm_grid(&samples).unwrap();
        let (_, _, pixels) = parse_pgm(&pgm).unwrap();
        assert_eq!(pixels, vec![0, 255]);
    }

    #[test]
    fn numeric_table_reads_back() {
        let samples = Tensor::new(vec![2, 2], vec![0.5, -0.25, 1.0, 2.0]).unwrap();
        let table = numeric_table(&samples).unwrap();
        let parsed: Vec<f64> = table
            .split_whitespace()
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(parsed, vec![0.5, -0.25, 1.0, 2.0]);
    }

    #[test]
    fn malformed_pgm_rejected() {
        assert!(parse_pgm(b"P6\n1 1\n255\nx").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\nxy").is_err()); // short payload
        assert!(parse_pgm(b"P5\n").is_err());
    }
}
