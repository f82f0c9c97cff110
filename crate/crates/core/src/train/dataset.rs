use super::task::{ClassifyTask, Dataset};
use crate::error::{PtcError, Result};
use crate::linalg::RMat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::{Path, PathBuf};

/// On-disk layout of a classification dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    /// Header `f0,..,fn,label`, one sample per row.
    Csv(PathBuf),
    /// Big-endian IDX image and label files.
    Idx { images: PathBuf, labels: PathBuf },
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> PtcError {
    PtcError::Parse { location: format!("{}:{location}", path.display()), message: message.into() }
}

/// Reads a CSV dataset without scaling.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, "1".into(), e.to_string()))?;
    let header = rdr.headers().map_err(|e| parse_err(path, "1".into(), e.to_string()))?.clone();
    let n_feat = header.len().saturating_sub(1);
    if n_feat == 0 || &header[n_feat] != "label" {
        return Err(parse_err(path, "1".into(), "header must end with a `label` column"));
    }
    for (i, name) in header.iter().take(n_feat).enumerate() {
        if name != format!("f{i}") {
            return Err(parse_err(path, "1".into(), format!("expected column f{i}, found `{name}`")));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(path, format!("row {line}"), e.to_string()))?;
        if rec.len() != n_feat + 1 {
            return Err(parse_err(
                path,
                format!("row {line}"),
                format!("expected {} fields, found {}", n_feat + 1, rec.len()),
            ));
        }
        for (j, field) in rec.iter().take(n_feat).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, format!("row {line}"), format!("f{j} = `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("row {line}"), format!("f{j} is not finite")));
            }
            values.push(v);
        }
        let l = &rec[n_feat];
        labels.push(l.parse::<usize>().map_err(|_| {
            parse_err(path, format!("row {line}"), format!("label `{l}` is not a nonnegative integer"))
        })?);
    }
    if labels.is_empty() {
        return Err(parse_err(path, "2".into(), "no samples"));
    }
    Ok(Dataset { features: RMat::from_column_slice(n_feat, labels.len(), &values), labels })
}

fn read_idx_file(path: &Path, expected_dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(path, "offset 0".into(), "bad IDX magic number"));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(path, "offset 2".into(), format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim != expected_dims {
        return Err(parse_err(path, "offset 3".into(), format!("expected {expected_dims} dimensions, found {ndim}")));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(path, format!("offset {}", bytes.len()), "truncated header"));
    }
    let dims: Vec<usize> =
        (0..ndim).map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize).collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(parse_err(
            path,
            format!("offset {}", bytes.len()),
            format!("expected {} data bytes, found {}", total, bytes.len() - header),
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Reads an IDX image/label pair; pixels are scaled by `1/255`.
pub fn read_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (idims, pixels) = read_idx_file(images, 3)?;
    let (ldims, lbytes) = read_idx_file(labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(parse_err(labels, "offset 4".into(), format!("{} labels for {} images", ldims[0], idims[0])));
    }
    let n_feat = idims[1] * idims[2];
    let features = RMat::from_iterator(n_feat, idims[0], pixels.iter().map(|&p| p as f64 / 255.0));
    Ok(Dataset { features, labels: lbytes.iter().map(|&l| l as usize).collect() })
}

/// Rescales every feature row to `[0, 1]`; constant features become 0.
pub fn min_max_scale(features: &mut RMat) {
    for mut row in features.row_iter_mut() {
        let (lo, hi) = (row.min(), row.max());
        let span = hi - lo;
        row.apply(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
    }
}

/// Seeded split: `round(train_fraction * n)` samples go to training.
pub fn split_dataset(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(PtcError::Domain(format!("split fraction {train_fraction} outside [0, 1]")));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n as f64).round() as usize;
    let (mut tr, mut va) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    tr.sort_unstable();
    va.sort_unstable();
    Ok((data.subset(&tr), data.subset(&va)))
}

/// Loads, scales and splits a dataset. `num_classes` defaults to one more
/// than the largest label; labels at or above it are rejected.
pub fn load_dataset(
    source: &DatasetSource,
    train_fraction: f64,
    seed: u64,
    num_classes: Option<usize>,
) -> Result<ClassifyTask> {
    let mut data = match source {
        DatasetSource::Csv(p) => {
            let mut d = read_csv(p)?;
            min_max_scale(&mut d.features);
            d
        }
        DatasetSource::Idx { images, labels } => read_idx(images, labels)?,
    };
    let max_label = data.labels.iter().copied().max().unwrap_or(0);
    let classes = num_classes.unwrap_or(max_label + 1);
    if let Some(row) = data.labels.iter().position(|&l| l >= classes) {
        return Err(PtcError::Domain(format!(
            "sample {row}: label {} out of range for {classes} classes",
            data.labels[row]
        )));
    }
    data.features.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let (train, val) = split_dataset(&data, train_fraction, seed)?;
    ClassifyTask::new(classes, train, val)
}

/// Isotropic Gaussian clusters around random centers in `[0, 1]^features`,
/// clipped to the unit cube.
pub fn gaussian_blobs<R: Rng + ?Sized>(
    features: usize,
    classes: usize,
    samples: usize,
    spread: f64,
    rng: &mut R,
) -> Dataset {
    let centers = RMat::from_fn(features, classes, |_, _| rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let features = RMat::from_fn(features, samples, |f, s| {
        let z: f64 = rng.sample(StandardNormal);
        (centers[(f, labels[s])] + spread * z).clamp(0.0, 1.0)
    });
    Dataset { features, labels }
}

/// Writes a dataset in the CSV layout accepted by [`read_csv`].
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PtcError::Io(e.into()))?;
    let mut header: Vec<String> = (0..data.num_features()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| PtcError::Io(e.into()))?;
    for (s, col) in data.features.column_iter().enumerate() {
        let mut rec: Vec<String> = col.iter().map(|v| v.to_string()).collect();
        rec.push(data.labels[s].to_string());
        w.write_record(&rec).map_err(|e| PtcError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_fixture(dir: &Path, rows: usize) -> PathBuf {
        let path = dir.join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{},label", (0..8).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",")).unwrap();
        for r in 0..rows {
            let vals: Vec<String> = (0..8).map(|j| ((r * 7 + j * 3) % 11).to_string()).collect();
            writeln!(f, "{},{}", vals.join(","), r % 3).unwrap();
        }
        path
    }

    #[test]
    fn csv_split_sizes_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let src = DatasetSource::Csv(csv_fixture(dir.path(), 30));
        let t = load_dataset(&src, 0.8, 5, None).unwrap();
        assert_eq!((t.train.len(), t.val.len(), t.num_classes), (24, 6, 3));
        assert!(t.train.features.iter().all(|v| (0.0..=1.0).contains(v)));
        let again = load_dataset(&src, 0.8, 5, None).unwrap();
        assert_eq!(t.train, again.train);
        assert_eq!(t.val, again.val);
        assert!(load_dataset(&src, 0.8, 5, Some(2)).is_err());
    }

    #[test]
    fn malformed_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1,label\n0.1,0.2,0\n0.3,oops,1\n").unwrap();
        let err = read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        std::fs::write(&path, "f0,f1,label\n0.1,0.2,-1\n").unwrap();
        assert!(read_csv(&path).is_err());
    }

    #[test]
    fn idx_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        let mut bytes = vec![0, 0, 8, 3];
        for d in [2u32, 2, 2] {
            bytes.extend(d.to_be_bytes());
        }
        bytes.extend([0, 255, 51, 102, 255, 0, 0, 0]);
        std::fs::write(&img, &bytes).unwrap();
        let mut lb = vec![0, 0, 8, 1];
        lb.extend(2u32.to_be_bytes());
        lb.extend([1, 0]);
        std::fs::write(&lab, &lb).unwrap();
        let d = read_idx(&img, &lab).unwrap();
        assert_eq!(d.features.shape(), (4, 2));
        assert_eq!(d.features[(1, 0)], 1.0);
        assert_eq!(d.labels, vec![1, 0]);
        std::fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_idx(&img, &lab).is_err());
    }

    #[test]
    fn blobs_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let d = gaussian_blobs(4, 3, 9, 0.1, &mut ChaCha8Rng::seed_from_u64(1));
        let p = dir.path().join("b.csv");
        write_csv(&p, &d).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back, d);
    }
}
