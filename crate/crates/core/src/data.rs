//! Dataset ingestion: IDX (MNIST-family) and CIFAR-10 binary batches, plus
//! resizing, grayscale conversion and class filtering.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "QDIFF_DATA_DIR";

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Resolves `name` against `$QDIFF_DATA_DIR` (or `./data`).
pub fn data_path(name: impl AsRef<Path>) -> PathBuf {
    let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    root.join(name)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Parse { offset, reason: "truncated header".into() })
}

/// Parses an IDX image file (unsigned bytes, `n × rows × cols`) into [0,1] images.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<ImageTensor>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let px = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * px {
        return Err(Error::Parse {
            offset: bytes.len(),
            reason: format!("truncated: {n} images of {rows}×{cols} need {} bytes of pixels", n * px),
        });
    }
    body.chunks_exact(px.max(1))
        .take(n)
        .map(|chunk| ImageTensor::gray(rows, cols, chunk.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Parse { offset: bytes.len(), reason: format!("truncated: {n} labels expected") });
    }
    Ok(body[..n].iter().map(|&b| usize::from(b)).collect())
}

/// Loads a paired IDX image/label file set.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    let imgs = parse_idx_images(&std::fs::read(images)?)?;
    let lbls = parse_idx_labels(&std::fs::read(labels)?)?;
    if imgs.len() != lbls.len() {
        return Err(Error::Shape(format!("{} images but {} labels", imgs.len(), lbls.len())));
    }
    Ok((imgs, lbls))
}

/// Serializes images (values clamped to [0,1], rounded to bytes) as IDX.
pub fn encode_idx_images(images: &[ImageTensor]) -> Result<Vec<u8>> {
    let (rows, cols) = images.first().map(|i| (i.height(), i.width())).unwrap_or((0, 0));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        if im.shape() != (1, rows, cols) {
            return Err(Error::Shape("IDX images must share one grayscale shape".into()));
        }
        out.extend(im.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

/// Parses a CIFAR-10 binary batch (label byte + R, G, B planes of 32×32).
///
/// With `grayscale`, channels are averaged at load time.
pub fn parse_cifar_batch(bytes: &[u8], grayscale: bool) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Parse {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            reason: format!("trailing partial record; records are {CIFAR_RECORD} bytes"),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(usize::from(rec[0]));
        let values: Vec<f64> = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
        let rgb = ImageTensor::new(3, CIFAR_SIDE, CIFAR_SIDE, values)?;
        images.push(if grayscale { to_grayscale(&rgb) } else { rgb });
    }
    Ok((images, labels))
}

/// Channel mean.
pub fn to_grayscale(image: &ImageTensor) -> ImageTensor {
    let (c, h, w) = image.shape();
    if c == 1 {
        return image.clone();
    }
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(image.channel(ch)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= c as f64;
    }
    ImageTensor::gray(h, w, out).expect("shape preserved").with_range(image.value_range.0, image.value_range.1)
}

/// Area-overlap weights: row `i` averages source cells `[i·s, (i+1)·s)`, `s = src/dst`.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut row = Vec::new();
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            for s in first..last {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    row.push((s, overlap / scale));
                }
            }
            row
        })
        .collect()
}

/// Box-filter area averaging from `h × w` down to `size × size`.
fn box_downscale(plane: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let wy = box_weights(h, size);
    let wx = box_weights(w, size);
    let mut out = vec![0.0; size * size];
    for (i, ry) in wy.iter().enumerate() {
        for (j, rx) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, ay) in ry {
                for &(sx, ax) in rx {
                    acc += ay * ax * plane[sy * w + sx];
                }
            }
            out[i * size + j] = acc;
        }
    }
    out
}

/// Centres the plane in `size × size`, replicating edge pixels into the border.
fn replicate_pad(plane: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let (py, px) = ((size - h) / 2, (size - w) / 2);
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        let sy = y.saturating_sub(py).min(h - 1);
        for x in 0..size {
            let sx = x.saturating_sub(px).min(w - 1);
            out[y * size + x] = plane[sy * w + sx];
        }
    }
    out
}

/// Resizes each channel to `size × size`: box averaging to shrink,
/// replicate padding to grow.
pub fn resize(image: &ImageTensor, size: usize) -> Result<ImageTensor> {
    let (c, h, w) = image.shape();
    if h == size && w == size {
        return Ok(image.clone());
    }
    let mut values = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = image.channel(ch);
        let resized = match (h >= size, w >= size) {
            (true, true) => box_downscale(plane, h, w, size),
            (false, false) => replicate_pad(plane, h, w, size),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "cannot resize {h}×{w} to {size}×{size}: mixed shrink and grow"
                )))
            }
        };
        values.extend(resized);
    }
    let mut out = ImageTensor::new(c, size, size, values)?;
    out.value_range = image.value_range;
    Ok(out)
}

pub const TARGET_SIZES: [usize; 3] = [8, 28, 32];

/// Class filter, grayscale conversion, and resize, in that order.
pub fn preprocess(
    images: &[ImageTensor],
    labels: &[usize],
    target_size: usize,
    classes: Option<&[usize]>,
    grayscale_average: bool,
) -> Result<(Vec<ImageTensor>, Vec<usize>)> {
    if !TARGET_SIZES.contains(&target_size) {
        return Err(Error::InvalidArgument(format!(
            "target size {target_size} not one of {TARGET_SIZES:?}"
        )));
    }
    if images.len() != labels.len() {
        return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
    }
    let mut out_images = Vec::new();
    let mut out_labels = Vec::new();
    for (im, &l) in images.iter().zip(labels) {
        if classes.is_some_and(|cs| !cs.contains(&l)) {
            continue;
        }
        let im = if grayscale_average { to_grayscale(im) } else { im.clone() };
        out_images.push(resize(&im, target_size)?);
        out_labels.push(l);
    }
    if out_images.is_empty() {
        return Err(Error::InvalidArgument("no images left after class filtering".into()));
    }
    Ok((out_images, out_labels))
}
