//! Minimal 8-bit grayscale BMP reader/writer for the dataset's mosaic
//! bitmaps. Uncompressed BI_RGB only; palette images are mapped through
//! their palette, bottom-up and top-down row orders both handled.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn u16le(b: &[u8], off: usize) -> u32 {
    u16::from_le_bytes([b[off], b[off + 1]]) as u32
}

fn u32le(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn i32le(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Reads a BMP as 8-bit grayscale, top-left origin, row-major.
pub fn read_gray_bmp(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let name = path.display();
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{name}: {e}")))?;
    let fail = |msg: &str| Error::Data(format!("{name}: {msg}"));
    if bytes.len() < 54 || &bytes[0..2] != b"BM" {
        return Err(fail("not a BMP file"));
    }
    let data_offset = u32le(&bytes, 10) as usize;
    let header_size = u32le(&bytes, 14) as usize;
    if header_size < 40 {
        return Err(fail("unsupported BMP header"));
    }
    let width = i32le(&bytes, 18);
    let height_raw = i32le(&bytes, 22);
    let bpp = u16le(&bytes, 28);
    let compression = u32le(&bytes, 30);
    if compression != 0 {
        return Err(fail("compressed BMP not supported"));
    }
    if width <= 0 || height_raw == 0 {
        return Err(fail("degenerate BMP dimensions"));
    }
    let w = width as usize;
    let top_down = height_raw < 0;
    let h = height_raw.unsigned_abs() as usize;

    let palette = if bpp == 8 {
        let colors = match u32le(&bytes, 46) {
            0 => 256,
            n => n as usize,
        };
        let pal_off = 14 + header_size;
        if bytes.len() < pal_off + colors * 4 {
            return Err(fail("truncated BMP palette"));
        }
        let mut pal = vec![0u8; 256];
        for (i, p) in pal.iter_mut().take(colors).enumerate() {
            let off = pal_off + i * 4;
            // Gray value from the palette entry (b, g, r, _).
            let (b, g, r) = (bytes[off] as u32, bytes[off + 1] as u32, bytes[off + 2] as u32);
            *p = ((r * 299 + g * 587 + b * 114) / 1000) as u8;
        }
        Some(pal)
    } else if bpp == 24 {
        None
    } else {
        return Err(fail(&format!("unsupported bit depth {bpp}")));
    };

    let bytes_per_px = if bpp == 8 { 1 } else { 3 };
    let stride = (w * bytes_per_px + 3) / 4 * 4;
    if bytes.len() < data_offset + stride * h {
        return Err(fail("truncated BMP pixel data"));
    }
    let mut out = vec![0u8; w * h];
    for row in 0..h {
        let src_row = if top_down { row } else { h - 1 - row };
        let src = &bytes[data_offset + src_row * stride..];
        let dst = &mut out[row * w..(row + 1) * w];
        match &palette {
            Some(pal) => {
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = pal[src[x] as usize];
                }
            }
            None => {
                for (x, d) in dst.iter_mut().enumerate() {
                    let (b, g, r) = (
                        src[x * 3] as u32,
                        src[x * 3 + 1] as u32,
                        src[x * 3 + 2] as u32,
                    );
                    *d = ((r * 299 + g * 587 + b * 114) / 1000) as u8;
                }
            }
        }
    }
    Ok((w, h, out))
}

/// Writes 8-bit grayscale pixels (top-left origin) as a palette BMP.
pub fn write_gray_bmp(path: &Path, w: usize, h: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), w * h);
    let stride = (w + 3) / 4 * 4;
    let data_offset = 14 + 40 + 256 * 4;
    let file_size = data_offset + stride * h;
    let mut out = Vec::with_capacity(file_size);
    // File header.
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_size as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data_offset as u32).to_le_bytes());
    // Info header.
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&8u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // BI_RGB
    out.extend_from_slice(&((stride * h) as u32).to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&2835u32.to_le_bytes());
    out.extend_from_slice(&256u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    // Grayscale palette.
    for v in 0..=255u8 {
        out.extend_from_slice(&[v, v, v, 0]);
    }
    // Bottom-up rows, padded to 4 bytes.
    let pad = [0u8; 3];
    for row in (0..h).rev() {
        out.extend_from_slice(&pixels[row * w..(row + 1) * w]);
        out.extend_from_slice(&pad[..stride - w]);
    }
    fs::write(path, &out)?;
    Ok(())
}
