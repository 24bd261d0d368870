//! IDX (MNIST container) parsing: big-endian dims, magic 2051 for
//! images and 2049 for labels, pixel bytes scaled to [0, 1].

use super::{LabeledImageSet, Perturbation, Variant};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::Read;
use std::path::Path;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::data(format!("truncated IDX file while reading {what}: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let mut img_file = File::open(images_path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", images_path.display())))?;
    let magic = read_u32_be(&mut img_file, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::data(format!(
            "bad image magic {magic} in {} (want {IMAGES_MAGIC})",
            images_path.display()
        )));
    }
    let n = read_u32_be(&mut img_file, "image count")? as usize;
    let h = read_u32_be(&mut img_file, "image rows")? as usize;
    let w = read_u32_be(&mut img_file, "image cols")? as usize;
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::data(format!("degenerate IDX dims {n}x{h}x{w}")));
    }
    let mut pixels = vec![0u8; n * h * w];
    img_file
        .read_exact(&mut pixels)
        .map_err(|e| Error::data(format!("truncated image data in {}: {e}", images_path.display())))?;

    let mut lbl_file = File::open(labels_path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", labels_path.display())))?;
    let magic = read_u32_be(&mut lbl_file, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::data(format!(
            "bad label magic {magic} in {} (want {LABELS_MAGIC})",
            labels_path.display()
        )));
    }
    let n_labels = read_u32_be(&mut lbl_file, "label count")? as usize;
    if n_labels != n {
        return Err(Error::data(format!(
            "count mismatch: {n} images but {n_labels} labels"
        )));
    }
    let mut labels = vec![0u8; n];
    lbl_file
        .read_exact(&mut labels)
        .map_err(|e| Error::data(format!("truncated label data in {}: {e}", labels_path.display())))?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::data(format!("label {bad} outside [0, 9]")));
    }

    let values: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], values)?;
    LabeledImageSet::new(images, labels, vec![Perturbation::None; n], Variant::Plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_pair(dir: &Path, n: u32, h: u32, w: u32, labels: &[u8], truncate_pixels: bool) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img.idx3-ubyte");
        let lbl = dir.join("lbl.idx1-ubyte");
        let mut f = File::create(&img).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&h.to_be_bytes()).unwrap();
        f.write_all(&w.to_be_bytes()).unwrap();
        let count = (n * h * w) as usize;
        let pixels: Vec<u8> = (0..if truncate_pixels { count / 2 } else { count })
            .map(|i| (i % 251) as u8)
            .collect();
        f.write_all(&pixels).unwrap();
        let mut f = File::create(&lbl).unwrap();
        f.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (img, lbl)
    }

    #[test]
    fn loads_well_formed_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(dir.path(), 3, 4, 5, &[0, 7, 9], false);
        let set = load_idx(&img, &lbl).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.dims(), (4, 5));
        assert_eq!(set.labels, vec![0, 7, 9]);
        assert!((set.images.values()[1] - 1.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(dir.path(), 2, 3, 3, &[1, 2], false);
        // corrupt the image magic
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0xFF;
        std::fs::write(&img, &bytes).unwrap();
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("bad image magic"));
    }

    #[test]
    fn rejects_truncation_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(dir.path(), 2, 3, 3, &[1, 2], true);
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("truncated"));

        let empty = dir.path().join("empty");
        std::fs::write(&empty, []).unwrap();
        let err = load_idx(&empty, &lbl).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn rejects_label_out_of_range_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = write_idx_pair(dir.path(), 2, 3, 3, &[1, 12], false);
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("outside [0, 9]"));

        let (img, lbl) = write_idx_pair(dir.path(), 2, 3, 3, &[1], false);
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("count mismatch"));
    }
}
