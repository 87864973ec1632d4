//! Datasets: IDX and GFD1 loaders, batching, and synthetic sources.

mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{numel, Tensor};

pub use synth::{render_digit, synth_digits, synth_gaussian};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const GFD1_MAGIC: &[u8; 4] = b"GFD1";

/// Samples with values in `[-1, 1]`, stored as `[N, ..data_shape]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub source: PathBuf,
}

/// One minibatch; `indices` are positions in the source dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
    pub indices: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Option<Vec<usize>>, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        if images.rank() < 2 {
            return Err(Error::Shape(format!("dataset needs [N, ..sample] images, got {:?}", images.shape())));
        }
        if let Some(l) = &labels {
            if l.len() != images.shape()[0] {
                return Err(format_err(&source, format!("{} labels for {} images", l.len(), images.shape()[0])));
            }
        }
        if let Some(bad) = images.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(format_err(&source, format!("sample value {bad} outside [-1, 1]")));
        }
        Ok(Self { images, labels, source })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample extents.
    pub fn data_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// One more than the largest label, if labelled.
    pub fn label_count(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        let per = numel(self.data_shape());
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Dataset {
            images: Tensor::new(&shape, data).expect("selection keeps the sample shape"),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            source: self.source.clone(),
        }
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| format_err(path, format!("cannot read: {e}")))
}

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| format_err(path, format!("truncated header: {} bytes", bytes.len())))
}

fn idx_body<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32_be(bytes, 0, path)?;
    if found != magic {
        return Err(format_err(path, format!("expected IDX magic 0x{magic:08x}, found 0x{found:08x}")));
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim).map(|i| read_u32_be(bytes, 4 + 4 * i, path).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let want: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < want {
        return Err(format_err(path, format!("truncated payload: header declares {want} bytes, found {}", body.len())));
    }
    Ok((dims, &body[..want]))
}

/// Maps a pixel byte to `2 * b / 255 - 1`.
pub fn scale_byte(b: u8) -> f64 {
    2.0 * (b as f64 / 255.0) - 1.0
}

/// Reads big-endian IDX images (`[N, 1, rows, cols]`) and optional labels.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = read_file(images_path)?;
    let (dims, body) = idx_body(&bytes, images_path, IDX_IMAGES_MAGIC)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(format_err(images_path, format!("empty image set {n}x{rows}x{cols}")));
    }
    let images = Tensor::new(&[n, 1, rows, cols], body.iter().map(|&b| scale_byte(b)).collect())?;
    let labels = labels_path.map(|p| load_idx_labels(p)).transpose()?;
    Dataset::new(images, labels, images_path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let (_, body) = idx_body(&bytes, path, IDX_LABELS_MAGIC)?;
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `n` row-major `rows x cols` byte images as an IDX image file.
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Shape(format!("{} pixels for {n} images of {rows}x{cols}", pixels.len())));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_atomic(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_atomic(path, &out)
}

/// Reads a GFD1 file: `"GFD1"`, then `N, C, H, W` as little-endian u32, then
/// `N*C*H*W` little-endian f32 values in `[-1, 1]`.
pub fn load_gfd1(path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = read_file(path)?;
    if bytes.len() < 20 || &bytes[..4] != GFD1_MAGIC {
        let head: Vec<String> = bytes.iter().take(4).map(|b| format!("{b:02x}")).collect();
        return Err(format_err(path, format!("expected GFD1 magic, found bytes [{}]", head.join(" "))));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("four bytes")) as usize;
    let shape = [dim(0), dim(1), dim(2), dim(3)];
    let count = numel(&shape);
    if count == 0 {
        return Err(format_err(path, format!("empty dataset {shape:?}")));
    }
    let body = &bytes[20..];
    if body.len() < 4 * count {
        return Err(format_err(path, format!("truncated payload: need {} bytes, found {}", 4 * count, body.len())));
    }
    let data = body[..4 * count]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    let labels = labels_path.map(|p| load_idx_labels(p)).transpose()?;
    Dataset::new(Tensor::new(&shape, data)?, labels, path)
}

/// Writes image samples `[N, C, H, W]` as GFD1 (values rounded to f32).
pub fn write_gfd1(path: &Path, images: &Tensor) -> Result<()> {
    let [n, c, h, w] = images.shape() else {
        return Err(Error::Shape(format!("GFD1 stores [N, C, H, W], got {:?}", images.shape())));
    };
    let mut out = Vec::with_capacity(20 + 4 * images.len());
    out.extend_from_slice(GFD1_MAGIC);
    for d in [n, c, h, w] {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in images.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

fn lower_name(path: &Path) -> String {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

/// Label files looked for next to an image file: the MNIST naming
/// (`*-images-idx3-ubyte` → `*-labels-idx1-ubyte`) and `<stem>.labels.idx`.
pub fn label_candidates(images: &Path) -> Vec<PathBuf> {
    let name = images.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let mut out = Vec::new();
    if name.contains("images-idx3") {
        out.push(images.with_file_name(name.replace("images-idx3", "labels-idx1")));
    }
    if let Some(stem) = images.file_stem().and_then(|s| s.to_str()) {
        out.push(images.with_file_name(format!("{stem}.labels.idx")));
    }
    out
}

/// Concrete file behind a data path. A `.pkl` name maps to a converted
/// sibling with the same stem (`.gfd`, `.gfd1` or `.idx`).
pub fn resolve_data_file(path: &Path) -> Result<PathBuf> {
    if extension(path) != "pkl" {
        return Ok(path.to_path_buf());
    }
    for ext in ["gfd", "gfd1", "idx"] {
        let candidate = path.with_extension(ext);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(format_err(
        path,
        format!(
            "pickled data is not read directly; convert it with `python tools/pkl_to_gfd1.py {} {}`",
            path.display(),
            path.with_extension("gfd").display()
        ),
    ))
}

/// Loads a dataset by extension (`.idx`/`*-ubyte` → IDX, `.gfd`/`.gfd1` →
/// GFD1, `.pkl` → converted sibling), falling back to sniffing the magic.
/// Without an explicit labels file, a sibling from [`label_candidates`] is
/// used when present.
pub fn load_dataset(path: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let file = resolve_data_file(path)?;
    let found_labels = labels.map(Path::to_path_buf).or_else(|| label_candidates(&file).into_iter().find(|p| p.is_file()));
    let labels = found_labels.as_deref();
    let ext = extension(&file);
    if ext == "gfd" || ext == "gfd1" {
        return load_gfd1(&file, labels);
    }
    if ext == "idx" || lower_name(&file).ends_with("-ubyte") {
        return load_idx(&file, labels);
    }
    let mut head = [0u8; 4];
    {
        use std::io::Read;
        fs::File::open(&file).map_err(|e| format_err(&file, format!("cannot read: {e}")))?.read_exact(&mut head).map_err(|_| format_err(&file, "file too short to identify"))?;
    }
    if &head == GFD1_MAGIC {
        load_gfd1(&file, labels)
    } else if u32::from_be_bytes(head) == IDX_IMAGES_MAGIC {
        load_idx(&file, labels)
    } else {
        Err(format_err(&file, "unrecognized data format (expected IDX or GFD1)"))
    }
}

/// Splits a dataset into batches covering every sample once; the last batch
/// may be short. With `shuffle`, the order is a permutation drawn from `rng`.
pub fn make_batches(ds: &Dataset, batch_size: usize, rng: &mut RngStream, shuffle: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Param { key: "batch_size".into(), message: "batch_size must be ≥ 1".into() });
    }
    let order = if shuffle { rng.permutation(ds.len()) } else { (0..ds.len()).collect() };
    Ok(order
        .chunks(batch_size)
        .map(|idx| {
            let part = ds.select(idx);
            Batch { images: part.images, labels: part.labels, indices: idx.to_vec() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_hand_built_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.idx");
        write_idx_images(&p, 1, 2, 2, &[0, 255, 128, 64]).unwrap();
        let ds = load_idx(&p, None).unwrap();
        assert_eq!(ds.images.shape(), &[1, 1, 2, 2]);
        let d = ds.images.data();
        assert_eq!(d[0], -1.0);
        assert_eq!(d[1], 1.0);
        assert!((d[2] - 0.00392).abs() < 1e-5);
        assert!((d[3] + 0.498).abs() < 1e-3);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.idx");
        fs::write(&p, [0u8; 32]).unwrap();
        let err = load_idx(&p, None).unwrap_err().to_string();
        assert!(err.contains("0x00000000"), "{err}");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([1, 2, 3]);
        fs::write(&p, &bytes).unwrap();
        let err = load_idx(&p, None).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn gfd1_round_trip_and_dispatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.gfd");
        let t = Tensor::new(&[2, 1, 1, 2], vec![-1.0, 0.5, 0.25, 1.0]).unwrap();
        write_gfd1(&p, &t).unwrap();
        let ds = load_dataset(&dir.path().join("data.pkl"), None).unwrap();
        assert_eq!(ds.images, t);
        assert!(load_dataset(&dir.path().join("other.pkl"), None).unwrap_err().to_string().contains("pkl_to_gfd1"));
    }

    #[test]
    fn labels_are_discovered() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train-images-idx3-ubyte");
        write_idx_images(&p, 2, 1, 1, &[0, 255]).unwrap();
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &[3, 7]).unwrap();
        let ds = load_dataset(&p, None).unwrap();
        assert_eq!(ds.labels, Some(vec![3, 7]));
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &[3]).unwrap();
        assert!(load_dataset(&p, None).is_err());
    }

    #[test]
    fn batches_cover_everything() {
        let ds = Dataset::new(Tensor::new(&[10, 1], (0..10).map(|i| i as f64 / 10.0).collect()).unwrap(), None, "mem").unwrap();
        let mut rng = RngStream::new(1);
        let b = make_batches(&ds, 4, &mut rng, false).unwrap();
        assert_eq!(b.iter().map(|b| b.indices.len()).collect::<Vec<_>>(), [4, 4, 2]);
        assert_eq!(b[0].indices, [0, 1, 2, 3]);
        let s1 = make_batches(&ds, 4, &mut RngStream::new(5), true).unwrap();
        let s2 = make_batches(&ds, 4, &mut RngStream::new(5), true).unwrap();
        assert_eq!(s1, s2);
        let mut all: Vec<usize> = s1.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for batch in &s1 {
            for (row, &i) in batch.indices.iter().enumerate() {
                assert_eq!(batch.images.data()[row], i as f64 / 10.0);
            }
        }
    }
}
