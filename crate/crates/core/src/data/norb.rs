//! Reader and writer for the small-NORB binary matrix files.
//!
//! Each file is a little-endian header followed by a row-major payload:
//!
//! | field      | bytes | notes                                          |
//! |------------|-------|------------------------------------------------|
//! | magic      | 4     | `0x1E3D4C55` uint8 matrix, `0x1E3D4C54` int32  |
//! | ndim       | 4     | number of meaningful dimensions                |
//! | dims       | 4 × max(3, ndim) | unused trailing dims are written as 1 |
//!
//! The training/test archives consist of an image file (N×2×96×96 bytes),
//! a category file (N int32, classes 0..5) and an info file (N×4 int32:
//! instance 0..10, elevation index 0..9 for 30°..70° in 5° steps, azimuth
//! 0,2,..,34 in units of 10°, lighting 0..6).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{Dataset, LabelSet, Split};
use crate::error::{NpgaError, Result};

pub const MAGIC_U8: u32 = 0x1E3D_4C55;
pub const MAGIC_I32: u32 = 0x1E3D_4C54;

pub const NUM_CLASSES: usize = 5;
pub const NUM_INSTANCES: usize = 10;
pub const NUM_LIGHTINGS: usize = 6;
pub const AZIMUTH_PERIOD: f64 = 360.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NorbMatrix<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NorbMatrix<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NpgaError::Format(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(NorbMatrix { dims, data })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| NpgaError::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R, expected_magic: u32) -> Result<Vec<usize>> {
    let magic = read_u32(r)?;
    if magic != expected_magic {
        return Err(NpgaError::Format(format!(
            "bad magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndim = read_u32(r)? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(NpgaError::Format(format!("implausible dimension count {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim.max(3));
    for _ in 0..ndim.max(3) {
        dims.push(read_u32(r)? as usize);
    }
    dims.truncate(ndim);
    Ok(dims)
}

fn write_header<W: Write>(w: &mut W, magic: u32, dims: &[usize]) -> Result<()> {
    w.write_all(&magic.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for _ in dims.len()..3 {
        w.write_all(&1u32.to_le_bytes())?;
    }
    Ok(())
}

fn read_payload<R: Read>(r: &mut R, bytes: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; bytes];
    r.read_exact(&mut buf)
        .map_err(|_| NpgaError::Format(format!("truncated payload: expected {bytes} bytes")))?;
    Ok(buf)
}

pub fn read_u8_matrix<R: Read>(r: &mut R) -> Result<NorbMatrix<u8>> {
    let dims = read_header(r, MAGIC_U8)?;
    let n: usize = dims.iter().product();
    let data = read_payload(r, n)?;
    NorbMatrix::new(dims, data)
}

pub fn read_i32_matrix<R: Read>(r: &mut R) -> Result<NorbMatrix<i32>> {
    let dims = read_header(r, MAGIC_I32)?;
    let n: usize = dims.iter().product();
    let raw = read_payload(r, n * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    NorbMatrix::new(dims, data)
}

pub fn write_u8_matrix<W: Write>(w: &mut W, m: &NorbMatrix<u8>) -> Result<()> {
    write_header(w, MAGIC_U8, &m.dims)?;
    w.write_all(&m.data)?;
    Ok(())
}

pub fn write_i32_matrix<W: Write>(w: &mut W, m: &NorbMatrix<i32>) -> Result<()> {
    write_header(w, MAGIC_I32, &m.dims)?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Converts raw NORB matrices into a dataset with label sets `class`,
/// `elevation` (degrees), `azimuth` (degrees, periodic), `lighting` and
/// `instance`. Pixels are scaled to [0, 1].
pub fn to_dataset(
    images: &NorbMatrix<u8>,
    categories: &NorbMatrix<i32>,
    info: &NorbMatrix<i32>,
    split: Split,
) -> Result<Dataset> {
    let n = *images
        .dims
        .first()
        .ok_or_else(|| NpgaError::Format("image file has no dimensions".into()))?;
    let k: usize = images.dims[1..].iter().product();
    if categories.data.len() != n {
        return Err(NpgaError::Format(format!(
            "{} categories for {n} images",
            categories.data.len()
        )));
    }
    if info.dims.len() != 2 || info.dims[0] != n || info.dims[1] < 4 {
        return Err(NpgaError::Format(format!(
            "info dims {:?} do not match {n} images",
            info.dims
        )));
    }
    let features = DMatrix::from_fn(n, k, |i, j| images.data[i * k + j] as f64 / 255.0);
    let cols = info.dims[1];
    let field = |i: usize, f: usize| info.data[i * cols + f];
    let to_index = |v: i32, max: usize, what: &str| -> Result<usize> {
        if v < 0 || v as usize >= max {
            Err(NpgaError::Format(format!("{what} value {v} out of range 0..{max}")))
        } else {
            Ok(v as usize)
        }
    };
    let classes = categories
        .data
        .iter()
        .map(|c| to_index(*c, NUM_CLASSES, "category"))
        .collect::<Result<Vec<_>>>()?;
    let instances = (0..n)
        .map(|i| to_index(field(i, 0), NUM_INSTANCES, "instance"))
        .collect::<Result<Vec<_>>>()?;
    let lighting = (0..n)
        .map(|i| to_index(field(i, 3), NUM_LIGHTINGS, "lighting"))
        .collect::<Result<Vec<_>>>()?;
    let elevation = DMatrix::from_fn(n, 1, |i, _| 30.0 + 5.0 * field(i, 1) as f64);
    let azimuth = DMatrix::from_fn(n, 1, |i, _| 10.0 * field(i, 2) as f64);
    Dataset::new(
        features,
        vec![
            LabelSet::discrete("class", &classes, NUM_CLASSES)?,
            LabelSet::continuous("elevation", elevation),
            LabelSet::periodic("azimuth", azimuth, AZIMUTH_PERIOD),
            LabelSet::discrete("lighting", &lighting, NUM_LIGHTINGS)?,
            LabelSet::discrete("instance", &instances, NUM_INSTANCES)?,
        ],
        split,
    )
}

/// Inverse of [`to_dataset`]. `image_dims` is the per-example shape, e.g. `[2, 96, 96]`.
pub fn from_dataset(
    dataset: &Dataset,
    image_dims: &[usize],
) -> Result<(NorbMatrix<u8>, NorbMatrix<i32>, NorbMatrix<i32>)> {
    let n = dataset.len();
    let k: usize = image_dims.iter().product();
    if k != dataset.input_dim() {
        return Err(NpgaError::shape("NORB image size", k, dataset.input_dim()));
    }
    let mut pixels = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in 0..k {
            let v = (dataset.features[(i, j)] * 255.0).round();
            if !(0.0..=255.0).contains(&v) {
                return Err(NpgaError::Format(format!(
                    "pixel value {} outside [0, 1]",
                    dataset.features[(i, j)]
                )));
            }
            pixels.push(v as u8);
        }
    }
    let mut dims = vec![n];
    dims.extend_from_slice(image_dims);
    let images = NorbMatrix::new(dims, pixels)?;
    let classes = dataset.class_indices("class")?;
    let categories = NorbMatrix::new(vec![n], classes.iter().map(|c| *c as i32).collect())?;
    let inst = dataset.class_indices("instance")?;
    let light = dataset.class_indices("lighting")?;
    let elev = &dataset.label_set("elevation")?.values;
    let azim = &dataset.label_set("azimuth")?.values;
    let mut info = Vec::with_capacity(n * 4);
    for i in 0..n {
        info.push(inst[i] as i32);
        info.push(((elev[(i, 0)] - 30.0) / 5.0).round() as i32);
        info.push((azim[(i, 0)] / 10.0).round() as i32);
        info.push(light[i] as i32);
    }
    Ok((images, categories, NorbMatrix::new(vec![n, 4], info)?))
}

/// Loads the three files of one small-NORB split.
pub fn load_norb(image_file: &Path, category_file: &Path, info_file: &Path) -> Result<Dataset> {
    let images = read_u8_matrix(&mut BufReader::new(File::open(image_file)?))?;
    let categories = read_i32_matrix(&mut BufReader::new(File::open(category_file)?))?;
    let info = read_i32_matrix(&mut BufReader::new(File::open(info_file)?))?;
    to_dataset(&images, &categories, &info, Split::Train)
}

pub fn write_norb(
    dataset: &Dataset,
    image_dims: &[usize],
    image_file: &Path,
    category_file: &Path,
    info_file: &Path,
) -> Result<()> {
    let (images, categories, info) = from_dataset(dataset, image_dims)?;
    let mut w = BufWriter::new(File::create(image_file)?);
    write_u8_matrix(&mut w, &images)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(category_file)?);
    write_i32_matrix(&mut w, &categories)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(info_file)?);
    write_i32_matrix(&mut w, &info)?;
    w.flush()?;
    Ok(())
}

/// Per-image lighting and contrast normalisation: subtract the image mean
/// and divide by its standard deviation (flat images map to zero).
pub fn contrast_normalize(features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = features.clone();
    let k = features.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / k;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
        row.apply(|v| *v = if std > 0.0 { (*v - mean) / std } else { 0.0 });
    }
    out
}

/// Average-pools every `channels × side × side` image by `factor` in both
/// spatial dimensions.
pub fn downsample(features: &DMatrix<f64>, channels: usize, side: usize, factor: usize) -> Result<DMatrix<f64>> {
    if factor == 0 || side % factor != 0 || features.ncols() != channels * side * side {
        return Err(NpgaError::InvalidInput(format!(
            "cannot pool {} values as {channels}×{side}×{side} by {factor}",
            features.ncols()
        )));
    }
    let small = side / factor;
    let area = (factor * factor) as f64;
    Ok(DMatrix::from_fn(features.nrows(), channels * small * small, |i, j| {
        let c = j / (small * small);
        let r = (j / small) % small;
        let col = j % small;
        let mut s = 0.0;
        for dr in 0..factor {
            for dc in 0..factor {
                s += features[(i, c * side * side + (r * factor + dr) * side + col * factor + dc)];
            }
        }
        s / area
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;

    fn tiny() -> (NorbMatrix<u8>, NorbMatrix<i32>, NorbMatrix<i32>) {
        let images = NorbMatrix::new(vec![2, 2, 2, 2], (0..16).map(|v| (v * 17) as u8).collect()).unwrap();
        let cats = NorbMatrix::new(vec![2], vec![4, 1]).unwrap();
        let info = NorbMatrix::new(vec![2, 4], vec![9, 8, 34, 5, 0, 0, 0, 0]).unwrap();
        (images, cats, info)
    }

    #[test]
    fn byte_level_round_trip() {
        let (images, cats, info) = tiny();
        let mut buf = Vec::new();
        write_u8_matrix(&mut buf, &images).unwrap();
        assert_eq!(read_u8_matrix(&mut buf.as_slice()).unwrap(), images);
        let mut buf = Vec::new();
        write_i32_matrix(&mut buf, &cats).unwrap();
        // 1-D file still carries three dimension slots
        assert_eq!(buf.len(), 4 + 4 + 12 + 8);
        assert_eq!(read_i32_matrix(&mut buf.as_slice()).unwrap(), cats);
        let mut buf = Vec::new();
        write_i32_matrix(&mut buf, &info).unwrap();
        assert_eq!(read_i32_matrix(&mut buf.as_slice()).unwrap(), info);
    }

    #[test]
    fn dataset_round_trip_through_files() {
        let (images, cats, info) = tiny();
        let ds = to_dataset(&images, &cats, &info, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b, c) = (dir.path().join("dat"), dir.path().join("cat"), dir.path().join("info"));
        write_norb(&ds, &[2, 2, 2], &a, &b, &c).unwrap();
        let back = load_norb(&a, &b, &c).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.features, ds.features);
    }

    #[test]
    fn azimuth_in_degrees_range() {
        let (images, cats, info) = tiny();
        let ds = to_dataset(&images, &cats, &info, Split::Train).unwrap();
        let az = &ds.label_set("azimuth").unwrap().values;
        assert_eq!(az[(0, 0)], 340.0);
        assert!(az.iter().all(|v| (0.0..360.0).contains(v)));
        assert!(matches!(ds.label_set("azimuth").unwrap().kind, LabelKind::Periodic { period } if period == 360.0));
        assert_eq!(ds.label_set("elevation").unwrap().values[(0, 0)], 70.0);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (images, ..) = tiny();
        let mut buf = Vec::new();
        write_u8_matrix(&mut buf, &images).unwrap();
        assert!(matches!(
            read_i32_matrix(&mut buf.as_slice()),
            Err(NpgaError::Format(_))
        ));
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_u8_matrix(&mut buf.as_slice()), Err(NpgaError::Format(_))));
    }

    #[test]
    fn pooling_and_normalisation() {
        let f = DMatrix::from_row_slice(1, 8, &[1.0, 3.0, 5.0, 7.0, 0.0, 0.0, 0.0, 4.0]);
        let p = downsample(&f, 2, 2, 2).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(1, 2, &[4.0, 1.0]));
        let n = contrast_normalize(&f);
        assert!(n.row(0).sum().abs() < 1e-12);
        assert_eq!(
            contrast_normalize(&DMatrix::from_element(1, 3, 2.0)),
            DMatrix::zeros(1, 3)
        );
    }
}
