//! MNIST IDX reader (big-endian headers, unsigned byte payloads).

use std::fs;
use std::path::Path;

use super::{Sample, TypeTag, PIXELS};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: "file truncated inside header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            msg: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("expected {need} pixel bytes after the header, found {}", body.len()),
        });
    }
    Ok((count, rows, cols, &body[..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("expected {count} label bytes after the header, found {}", body.len()),
        });
    }
    Ok(&body[..count])
}

/// Loads paired IDX image and label files as digit samples.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&image_bytes)?;
    if rows * cols != PIXELS {
        return Err(Error::Format {
            offset: 8,
            msg: format!("images are {rows}x{cols}, expected 28x28"),
        });
    }
    let labels = parse_idx_labels(&label_bytes)?;
    if labels.len() != count {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{count} images but {} labels", labels.len()),
        });
    }
    pixels
        .chunks_exact(PIXELS)
        .zip(labels)
        .enumerate()
        .map(|(i, (px, &label))| {
            if label > 9 {
                return Err(Error::Format {
                    offset: 8 + i as u64,
                    msg: format!("label {label} outside 0..=9"),
                });
            }
            let px: Box<[u8; PIXELS]> = px.to_vec().into_boxed_slice().try_into().expect("chunk is one image");
            Sample::new(px, label, TypeTag::Digit)
        })
        .collect()
}
