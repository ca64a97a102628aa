//! Files a run emits: PNG grids, metric CSVs, checkpoints and manifests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{config_err, Config};
use crate::error::{Error, Result};
use crate::grad::{ParamStore, Wrap};
use crate::image::ImageTensor;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a parameter vector: SHA-256 over `"params <n>\0"` and
/// the little-endian values.
pub fn params_hash(values: &[f64]) -> String {
    let mut bytes = format!("params {}\0", values.len()).into_bytes();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

const GAP: usize = 1;
const GAP_VALUE: u8 = 128;

/// Single-channel images laid out row by row; every row must have the same
/// number of equally sized tiles. Values are clamped to `[0, 1]`.
pub fn write_grid_png(path: &Path, rows: &[Vec<ImageTensor>]) -> Result<()> {
    let first = rows.first().and_then(|r| r.first()).ok_or_else(|| Error::InvalidArgument("empty image grid".into()))?;
    let (th, tw) = (first.height(), first.width());
    let n_cols = rows[0].len();
    if rows.iter().any(|r| r.len() != n_cols || r.iter().any(|t| t.shape() != (1, th, tw))) {
        return Err(Error::Shape("grid tiles must be single-channel and equally sized".into()));
    }
    let width = n_cols * (tw + GAP) - GAP;
    let height = rows.len() * (th + GAP) - GAP;
    let mut pixels = vec![GAP_VALUE; width * height];
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            for y in 0..th {
                for x in 0..tw {
                    let v = (tile.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                    pixels[(r * (th + GAP) + y) * width + c * (tw + GAP) + x] = v;
                }
            }
        }
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writer.write_image_data(&pixels).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writer.finish().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

/// One metric value; the CSV columns are `run_id,tau,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub tau: usize,
    pub metric: String,
    pub value: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QDIFFCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters with optimizer and rng state, and the config
/// (including the schedule) they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub store: ParamStore,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn new(config: Config, store: ParamStore, rng: &ChaCha8Rng) -> Self {
        Self { config, store, rng_seed: rng.get_seed(), rng_stream: rng.get_stream(), rng_word_pos: rng.get_word_pos() }
    }

    /// The training rng exactly where it stopped.
    pub fn rng(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_toml();
        b.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        let s = &self.store;
        b.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in s.values.iter().chain(&s.adam_m).chain(&s.adam_v) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&s.step_count.to_le_bytes());
        b.push(match s.wrap {
            Wrap::Pi => 0,
            Wrap::TwoPi => 1,
        });
        b.extend_from_slice(&self.rng_seed);
        b.extend_from_slice(&self.rng_stream.to_le_bytes());
        b.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse { offset: 0, reason: "not a checkpoint (bad magic)".into() });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse { offset: 8, reason: format!("unsupported checkpoint version {version}") });
        }
        if bytes.len() < 32 + r.pos {
            return Err(r.err("truncated"));
        }
        let body = bytes.len() - 32;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(Error::Parse { offset: body, reason: "checksum mismatch".into() });
        }
        let cfg_len = r.u64()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| r.err("config is not UTF-8"))?;
        let config = Config::parse(cfg_text)?;
        let n = r.u64()? as usize;
        let mut vecs = Vec::with_capacity(3);
        for _ in 0..3 {
            vecs.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let step_count = r.u64()?;
        let wrap = match r.take(1)?[0] {
            0 => Wrap::Pi,
            1 => Wrap::TwoPi,
            w => return Err(r.err(&format!("unknown wrap tag {w}"))),
        };
        let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let rng_stream = r.u64()?;
        let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        if r.pos != body {
            return Err(r.err("trailing bytes before checksum"));
        }
        let adam_v = vecs.pop().unwrap();
        let adam_m = vecs.pop().unwrap();
        let values = vecs.pop().unwrap();
        let store = ParamStore { values, adam_m, adam_v, step_count, wrap };
        Ok(Self { config, store, rng_seed, rng_stream, rng_word_pos })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                config_err("checkpoint", format!("no checkpoint at {}", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: &str) -> Error {
        Error::Parse { offset: self.pos, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.err("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    /// Relative to the run's output directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub command: String,
    pub run_id: String,
    pub seed: u64,
    /// Hash of the parameters the command produced (`train`) or used.
    pub params_hash: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_sha256: Option<String>,
    pub config: Config,
    pub outputs: Vec<OutputRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_FORMAT: u32 = 1;

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut f = File::create(&path)?;
        f.write_all(text.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| config_err("manifest", e.message()))?;
        m.config.validate()?;
        Ok(m)
    }
}

pub fn record(dir: &Path, name: &str) -> Result<OutputRecord> {
    let bytes = std::fs::read(dir.join(name))?;
    Ok(OutputRecord { path: PathBuf::from(name), sha256: sha256_hex(&bytes) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::preset;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new(vec![0.5, -1.25, 3.0]).with_wrap(Wrap::TwoPi);
        store.adam_step_mut(&[0.1, 0.2, -0.3], 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.next_u64();
        let ck = Checkpoint::new(preset("uss-55").unwrap(), store, &rng);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.rng().next_u64(), rng.clone().next_u64());
        let mut bad = bytes.clone();
        bad[20] ^= 0xff;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Parse { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn params_hash_is_content_based() {
        assert_eq!(params_hash(&[1.0, 2.0]), params_hash(&[1.0, 2.0]));
        assert_ne!(params_hash(&[1.0, 2.0]), params_hash(&[2.0, 1.0]));
        assert_ne!(params_hash(&[]), params_hash(&[0.0]));
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn grid_png_layout() {
        let dir = tempfile::tempdir().unwrap();
        let a = ImageTensor::gray(2, 3, vec![0.0, 0.5, 1.0, 2.0, -1.0, 0.25]).unwrap();
        let path = dir.path().join("g.png");
        write_grid_png(&path, &[vec![a.clone(), a.clone()], vec![a.clone(), a]]).unwrap();
        let decoder = png::Decoder::new(File::open(&path).unwrap());
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (7, 5));
        assert_eq!(&buf[..7], &[0, 128, 255, 128, 0, 128, 255]);
        assert_eq!(buf[7 * 2], GAP_VALUE);
        assert_eq!(buf[7 * 4 + 6], 64);
        assert!(write_grid_png(&path, &[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![MetricRow { run_id: "r".into(), tau: 3, metric: "ssim".into(), value: 0.5 }];
        let p = dir.path().join("m.csv");
        write_csv(&p, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "run_id,tau,metric,value\nr,3,ssim,0.5\n");
        assert_eq!(read_csv::<MetricRow>(&p).unwrap(), rows);
    }
}
