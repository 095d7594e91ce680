//! `IQDS` dataset container and its `manifest.json` sidecar.
//!
//! ```text
//! magic  "IQDS"
//! u32    format version
//! u64    frame count
//! u32    class count, then per class: u32 byte length + UTF-8 name
//! u32    SNR grid length, then i32 dB values
//! u32    byte length of the generation config JSON, then the JSON text
//! frames: 128 f32 I values then 128 f32 Q values each
//! u32    class label per frame
//! i32    SNR label per frame
//! ```
//! All integers and floats are little endian.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetBundle, DatasetConfig};
use super::frame::{IQFrame, FRAME_LEN};
use super::SynthError;

pub const MAGIC: &[u8; 4] = b"IQDS";
pub const VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
/// Refuse headers claiming absurd sizes before allocating.
const MAX_TABLE_BYTES: u32 = 1 << 24;

/// Header metadata duplicated for tooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub data_file: String,
    pub frame_count: u64,
    pub class_names: Vec<String>,
    pub snr_grid: Vec<i32>,
    pub frames_per_cell: usize,
    pub config: DatasetConfig,
}

pub fn write_bundle<W: Write>(mut w: W, bundle: &DatasetBundle) -> Result<(), SynthError> {
    bundle.validate()?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(bundle.len() as u64).to_le_bytes())?;
    w.write_all(&(bundle.class_names.len() as u32).to_le_bytes())?;
    for name in &bundle.class_names {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
    }
    let grid = &bundle.config.snr_grid;
    w.write_all(&(grid.len() as u32).to_le_bytes())?;
    for s in grid {
        w.write_all(&s.to_le_bytes())?;
    }
    let json = serde_json::to_string(&bundle.config).map_err(|e| SynthError::Format(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(json.as_bytes())?;
    let mut buf = Vec::with_capacity(2 * FRAME_LEN * 4);
    for f in &bundle.frames {
        buf.clear();
        for v in f.i().iter().chain(f.q()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    for &c in &bundle.mod_labels {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    for &s in &bundle.snr_labels {
        w.write_all(&s.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    read_array::<4, _>(r).map(u32::from_le_bytes)
}

fn read_i32<R: Read>(r: &mut R) -> io::Result<i32> {
    read_array::<4, _>(r).map(i32::from_le_bytes)
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize, SynthError> {
    let n = read_u32(r)?;
    if n > MAX_TABLE_BYTES {
        return Err(SynthError::Format(format!("{what} length {n} is implausible")));
    }
    Ok(n as usize)
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String, SynthError> {
    let n = read_len(r, what)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| SynthError::Format(format!("{what} is not UTF-8")))
}

pub fn read_bundle<R: Read>(mut r: R) -> Result<DatasetBundle, SynthError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(SynthError::Format("bad magic, not an IQDS file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(SynthError::Format(format!("unsupported IQDS version {version}")));
    }
    let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let n_classes = read_len(&mut r, "class table")?;
    let class_names = (0..n_classes)
        .map(|_| read_string(&mut r, "class name"))
        .collect::<Result<Vec<_>, _>>()?;
    let n_snr = read_len(&mut r, "SNR grid")?;
    let grid = (0..n_snr).map(|_| read_i32(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let json = read_string(&mut r, "config")?;
    let config: DatasetConfig =
        serde_json::from_str(&json).map_err(|e| SynthError::Format(format!("config: {e}")))?;
    if config.snr_grid != grid {
        return Err(SynthError::Format("SNR grid disagrees with config".into()));
    }
    if config.total_frames() != count {
        return Err(SynthError::Format(format!(
            "frame count {count} disagrees with config ({})",
            config.total_frames()
        )));
    }
    let mut frames = Vec::with_capacity(count);
    let mut buf = vec![0u8; 2 * FRAME_LEN * 4];
    for k in 0..count {
        r.read_exact(&mut buf)?;
        let vals: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let (i, q) = vals.split_at(FRAME_LEN);
        let frame = IQFrame::new(i.to_vec(), q.to_vec())
            .ok_or_else(|| SynthError::Format(format!("frame {k} is not finite")))?;
        frames.push(frame);
    }
    let mod_labels = (0..count)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<io::Result<Vec<_>>>()?;
    let snr_labels = (0..count).map(|_| read_i32(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SynthError::Format("trailing bytes after labels".into()));
    }
    let bundle = DatasetBundle {
        frames,
        mod_labels,
        snr_labels,
        class_names,
        config,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    data_path.with_file_name(MANIFEST_NAME)
}

/// Writes the container at `path` and `manifest.json` beside it.
pub fn write_dataset(path: &Path, bundle: &DatasetBundle) -> Result<(), SynthError> {
    write_bundle(BufWriter::new(File::create(path)?), bundle)?;
    let manifest = Manifest {
        format: "IQDS".into(),
        version: VERSION,
        data_file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        frame_count: bundle.len() as u64,
        class_names: bundle.class_names.clone(),
        snr_grid: bundle.config.snr_grid.clone(),
        frames_per_cell: bundle.config.frames_per_cell,
        config: bundle.config.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| SynthError::Format(e.to_string()))?;
    fs::write(manifest_path(path), text + "\n")?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DatasetBundle, SynthError> {
    read_bundle(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, Modulation};

    fn bundle() -> DatasetBundle {
        let mut c = DatasetConfig::desk(11);
        c.classes = vec![Modulation::Qpsk, Modulation::AmSsb];
        c.snr_grid = vec![0, 6];
        c.frames_per_cell = 3;
        synth_dataset(&c).unwrap()
    }

    #[test]
    fn round_trip_in_memory() {
        let b = bundle();
        let mut bytes = Vec::new();
        write_bundle(&mut bytes, &b).unwrap();
        let expected = 4 + 4 + 8 + 4 + (4 + 4) + (4 + 6) + 4 + 8;
        assert!(bytes.len() > expected + 12 * 1024);
        assert_eq!(read_bundle(&bytes[..]).unwrap(), b);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let b = bundle();
        let mut bytes = Vec::new();
        write_bundle(&mut bytes, &b).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_bundle(&bad[..]), Err(SynthError::Format(_))));
        assert!(read_bundle(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(read_bundle(&long[..]).is_err());
        // class label past the table
        let n = bytes.len();
        let lab = n - 12 * 4 - 12 * 4;
        let mut oob = bytes;
        oob[lab..lab + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(read_bundle(&oob[..]).is_err());
    }

    #[test]
    fn files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.iqds");
        let b = bundle();
        write_dataset(&path, &b).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), b);
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(m.frame_count, 12);
        assert_eq!(m.class_names, vec!["QPSK", "AM-SSB"]);
        assert_eq!(m.data_file, "data.iqds");
    }
}
