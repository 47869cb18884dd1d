//! Scalar volumes on disk.
//!
//! The canonical dataset is a pair of files: `NAME.raw` holding voxels in
//! little-endian x-fastest order and a `NAME.meta` text sidecar. A directory
//! of 2D slice images (PNG/TIFF, 8 or 16 bit grayscale) is accepted as a
//! read-only input as well.
//!
//! Region reads may extend past the volume; those voxels are filled with the
//! nearest in-bounds voxel (edge replication). Everything comes back as
//! `f32` without intensity rescaling.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8,
    U16,
    F32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::U8 => "uint8",
            DType::U16 => "uint16",
            DType::F32 => "float32",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "uint8" => Some(DType::U8),
            "uint16" => Some(DType::U16),
            "float32" => Some(DType::F32),
            _ => None,
        }
    }
}

/// Voxel grid geometry. Layout is always x-fastest, little-endian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeMeta {
    pub dims: [usize; 3],
    pub dtype: DType,
    pub spacing: [f64; 3],
}

impl VolumeMeta {
    pub fn new(dims: [usize; 3], dtype: DType, spacing: [f64; 3]) -> Result<Self> {
        let meta = VolumeMeta {
            dims,
            dtype,
            spacing,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, name) in ["nx", "ny", "nz"].iter().enumerate() {
            if self.dims[k] < 1 {
                return Err(Error::invalid(format!("{name} must be ≥ 1")));
            }
        }
        for (k, name) in ["sx", "sy", "sz"].iter().enumerate() {
            let s = self.spacing[k];
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn byte_len(&self) -> u64 {
        self.voxel_count() as u64 * self.dtype.size() as u64
    }

    pub fn whole_box(&self) -> VoxelBox {
        VoxelBox::whole(self.dims)
    }

    /// Byte offset of voxel (x, y, z) in the raw file.
    pub fn byte_offset(&self, x: usize, y: usize, z: usize) -> u64 {
        let [nx, ny, _] = self.dims;
        (x as u64 + nx as u64 * (y as u64 + ny as u64 * z as u64)) * self.dtype.size() as u64
    }

    pub fn to_sidecar(&self) -> String {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing;
        format!(
            "dims = {nx},{ny},{nz}\ndtype = {}\nspacing = {sx},{sy},{sz}\n",
            self.dtype.name()
        )
    }

    pub fn from_sidecar(text: &str, path: &Path) -> Result<Self> {
        let err = |message: String| Error::Metadata {
            path: path.to_path_buf(),
            message,
        };
        let mut dims = None;
        let mut dtype = None;
        let mut spacing = [1.0; 3];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dims" => {
                    let v: Vec<usize> = parse_list(value)
                        .ok_or_else(|| err(format!("line {}: malformed dims", n + 1)))?;
                    if v.len() != 3 {
                        return Err(err(format!("line {}: dims needs 3 values", n + 1)));
                    }
                    dims = Some([v[0], v[1], v[2]]);
                }
                "dtype" => {
                    dtype = Some(
                        DType::parse(value)
                            .ok_or_else(|| err(format!("unsupported dtype `{value}`")))?,
                    );
                }
                "spacing" => {
                    let v: Vec<f64> = parse_list(value)
                        .ok_or_else(|| err(format!("line {}: malformed spacing", n + 1)))?;
                    if v.len() != 3 {
                        return Err(err(format!("line {}: spacing needs 3 values", n + 1)));
                    }
                    spacing = [v[0], v[1], v[2]];
                }
                other => return Err(err(format!("line {}: malformed key `{other}`", n + 1))),
            }
        }
        let dims = dims.ok_or_else(|| err("missing key `dims`".into()))?;
        let dtype = dtype.ok_or_else(|| err("missing key `dtype`".into()))?;
        let meta = VolumeMeta {
            dims,
            dtype,
            spacing,
        };
        meta.validate().map_err(|e| err(e.to_string()))?;
        Ok(meta)
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

/// Half-open voxel box `[lo, hi)`. `lo` may be negative for padded reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl VoxelBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Result<Self> {
        if (0..3).any(|k| hi[k] <= lo[k]) {
            return Err(Error::invalid(format!(
                "empty box {:?}..{:?}: hi must exceed lo on every axis",
                lo, hi
            )));
        }
        Ok(VoxelBox { lo, hi })
    }

    pub fn whole(dims: [usize; 3]) -> Self {
        VoxelBox {
            lo: [0; 3],
            hi: [dims[0] as i64, dims[1] as i64, dims[2] as i64],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [
            (self.hi[0] - self.lo[0]) as usize,
            (self.hi[1] - self.lo[1]) as usize,
            (self.hi[2] - self.lo[2]) as usize,
        ]
    }

    /// Voxel count, or an error if it does not fit the index type.
    pub fn volume(&self) -> Result<usize> {
        let [a, b, c] = self.shape();
        a.checked_mul(b)
            .and_then(|ab| ab.checked_mul(c))
            .ok_or_else(|| Error::invalid(format!("box {self} volume overflows")))
    }

    pub fn len(&self) -> usize {
        let [a, b, c] = self.shape();
        a * b * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] < self.hi[k])
    }

    pub fn contains_box(&self, other: &VoxelBox) -> bool {
        (0..3).all(|k| other.lo[k] >= self.lo[k] && other.hi[k] <= self.hi[k])
    }

    pub fn intersect(&self, other: &VoxelBox) -> Option<VoxelBox> {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for k in 0..3 {
            lo[k] = self.lo[k].max(other.lo[k]);
            hi[k] = self.hi[k].min(other.hi[k]);
            if hi[k] <= lo[k] {
                return None;
            }
        }
        Some(VoxelBox { lo, hi })
    }

    /// Grow (or shrink, for negative margins) each face by `margin[k]`.
    pub fn expand(&self, margin: [i64; 3]) -> VoxelBox {
        VoxelBox {
            lo: [
                self.lo[0] - margin[0],
                self.lo[1] - margin[1],
                self.lo[2] - margin[2],
            ],
            hi: [
                self.hi[0] + margin[0],
                self.hi[1] + margin[1],
                self.hi[2] + margin[2],
            ],
        }
    }

    pub fn expand_uniform(&self, margin: i64) -> VoxelBox {
        self.expand([margin; 3])
    }

    /// Linear x-fastest index of a global voxel coordinate inside this box.
    #[inline]
    pub fn index(&self, p: [i64; 3]) -> usize {
        let [sx, sy, _] = self.shape();
        let x = (p[0] - self.lo[0]) as usize;
        let y = (p[1] - self.lo[1]) as usize;
        let z = (p[2] - self.lo[2]) as usize;
        x + sx * (y + sy * z)
    }

    /// Voxels in z-major (x fastest) order.
    pub fn iter(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        let b = *self;
        (b.lo[2]..b.hi[2]).flat_map(move |z| {
            (b.lo[1]..b.hi[1]).flat_map(move |y| (b.lo[0]..b.hi[0]).map(move |x| [x, y, z]))
        })
    }
}

impl fmt::Display for VoxelBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{})x[{},{})x[{},{})",
            self.lo[0], self.hi[0], self.lo[1], self.hi[1], self.lo[2], self.hi[2]
        )
    }
}

/// Dense values over a box, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub bbox: VoxelBox,
    pub values: Vec<T>,
}

/// Intensities, always `f32` after ingestion.
pub type ScalarBlock = Block<f32>;

/// Tissue occupancy: 0 = background, 1 = tissue.
pub type MaskBlock = Block<u8>;

impl<T: Copy + Default> Block<T> {
    pub fn new(bbox: VoxelBox, values: Vec<T>) -> Result<Self> {
        let n = bbox.volume()?;
        if values.len() != n {
            return Err(Error::invalid(format!(
                "block {} expects {} values, got {}",
                bbox,
                n,
                values.len()
            )));
        }
        Ok(Block { bbox, values })
    }

    pub fn filled(bbox: VoxelBox, value: T) -> Self {
        Block {
            bbox,
            values: vec![value; bbox.len()],
        }
    }

    pub fn from_fn(bbox: VoxelBox, mut f: impl FnMut([i64; 3]) -> T) -> Self {
        let values = bbox.iter().map(&mut f).collect();
        Block { bbox, values }
    }

    #[inline]
    pub fn get(&self, p: [i64; 3]) -> T {
        self.values[self.bbox.index(p)]
    }

    #[inline]
    pub fn set(&mut self, p: [i64; 3], v: T) {
        let i = self.bbox.index(p);
        self.values[i] = v;
    }

    /// Copy of the sub-box `region`, which must lie inside this block.
    pub fn crop(&self, region: &VoxelBox) -> Result<Self> {
        if !self.bbox.contains_box(region) {
            return Err(Error::BoxMismatch(format!(
                "{} is not inside {}",
                region, self.bbox
            )));
        }
        let [sx, _, _] = region.shape();
        let mut values = Vec::with_capacity(region.len());
        for z in region.lo[2]..region.hi[2] {
            for y in region.lo[1]..region.hi[1] {
                let start = self.bbox.index([region.lo[0], y, z]);
                values.extend_from_slice(&self.values[start..start + sx]);
            }
        }
        Ok(Block {
            bbox: *region,
            values,
        })
    }
}

impl MaskBlock {
    pub fn full(bbox: VoxelBox) -> Self {
        Block::filled(bbox, 1)
    }
}

fn raw_path(path: &Path) -> PathBuf {
    path.with_extension("raw")
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

const STACK_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];

fn stack_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if ext.is_some_and(|e| STACK_EXTENSIONS.contains(&e.as_str())) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Metadata {
            path: dir.to_path_buf(),
            message: "no slice images found".into(),
        });
    }
    Ok(files)
}

/// Parse dataset geometry. `path` is either a sidecar (`NAME.meta`, or `NAME`
/// with the extension implied) or a directory of slice images.
pub fn read_metadata(path: &Path) -> Result<VolumeMeta> {
    if path.is_dir() {
        return read_stack_metadata(path);
    }
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    VolumeMeta::from_sidecar(&text, &mp)
}

fn read_stack_metadata(dir: &Path) -> Result<VolumeMeta> {
    let files = stack_files(dir)?;
    let first = open_slice(&files[0])?;
    let (nx, ny) = (first.width() as usize, first.height() as usize);
    let dtype = slice_dtype(&first, &files[0])?;
    for f in &files[1..] {
        let (w, h) = image::image_dimensions(f).map_err(|e| Error::Image {
            path: f.clone(),
            message: e.to_string(),
        })?;
        if (w as usize, h as usize) != (nx, ny) {
            return Err(Error::Metadata {
                path: f.clone(),
                message: format!("slice is {w}x{h}, expected {nx}x{ny}"),
            });
        }
    }
    VolumeMeta::new([nx, ny, files.len()], dtype, [1.0; 3])
}

fn open_slice(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn slice_dtype(img: &image::DynamicImage, path: &Path) -> Result<DType> {
    match img {
        image::DynamicImage::ImageLuma8(_) => Ok(DType::U8),
        image::DynamicImage::ImageLuma16(_) => Ok(DType::U16),
        other => Err(Error::Metadata {
            path: path.to_path_buf(),
            message: format!("unsupported dtype: pixel format {:?}", other.color()),
        }),
    }
}

/// Per-axis in-bounds source range `[lo, hi)` covering the clamped box.
fn clamped_range(lo: i64, hi: i64, n: usize) -> (usize, usize) {
    let last = n as i64 - 1;
    let a = lo.clamp(0, last) as usize;
    let b = (hi - 1).clamp(0, last) as usize + 1;
    (a, b)
}

/// Read a region as `f32`, replicating edge voxels for out-of-bounds parts.
pub fn read_region(meta: &VolumeMeta, path: &Path, bbox: &VoxelBox) -> Result<ScalarBlock> {
    bbox.volume()?;
    let src = clamped_box(meta, bbox);
    let data = if path.is_dir() {
        read_stack_box(meta, path, &src)?
    } else {
        read_raw_box(meta, path, &src)?
    };
    Ok(replicate(meta, bbox, &src, &data))
}

/// Read a mask region; any nonzero voxel counts as tissue.
pub fn read_mask_region(meta: &VolumeMeta, path: &Path, bbox: &VoxelBox) -> Result<MaskBlock> {
    let block = read_region(meta, path, bbox)?;
    Ok(Block {
        bbox: block.bbox,
        values: block.values.iter().map(|&v| u8::from(v != 0.0)).collect(),
    })
}

fn clamped_box(meta: &VolumeMeta, bbox: &VoxelBox) -> VoxelBox {
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for k in 0..3 {
        let (a, b) = clamped_range(bbox.lo[k], bbox.hi[k], meta.dims[k]);
        lo[k] = a as i64;
        hi[k] = b as i64;
    }
    VoxelBox { lo, hi }
}

fn replicate(meta: &VolumeMeta, bbox: &VoxelBox, src: &VoxelBox, data: &[f32]) -> ScalarBlock {
    if bbox == src {
        return Block {
            bbox: *bbox,
            values: data.to_vec(),
        };
    }
    let axis_map = |k: usize| -> Vec<usize> {
        let last = meta.dims[k] as i64 - 1;
        (bbox.lo[k]..bbox.hi[k])
            .map(|c| (c.clamp(0, last) - src.lo[k]) as usize)
            .collect()
    };
    let (mx, my, mz) = (axis_map(0), axis_map(1), axis_map(2));
    let [sx, sy, _] = src.shape();
    let mut values = Vec::with_capacity(bbox.len());
    for &z in &mz {
        for &y in &my {
            let row = sx * (y + sy * z);
            values.extend(mx.iter().map(|&x| data[row + x]));
        }
    }
    Block {
        bbox: *bbox,
        values,
    }
}

fn decode(dtype: DType, bytes: &[u8], out: &mut Vec<f32>) {
    match dtype {
        DType::U8 => out.extend(bytes.iter().map(|&b| b as f32)),
        DType::U16 => out.extend(
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32),
        ),
        DType::F32 => out.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        ),
    }
}

fn encode(dtype: DType, values: &[f32], out: &mut Vec<u8>) {
    match dtype {
        DType::U8 => out.extend(values.iter().map(|&v| v.round() as u8)),
        DType::U16 => out.extend(
            values
                .iter()
                .flat_map(|&v| (v.round() as u16).to_le_bytes()),
        ),
        DType::F32 => out.extend(values.iter().flat_map(|v| v.to_le_bytes())),
    }
}

fn read_raw_box(meta: &VolumeMeta, path: &Path, src: &VoxelBox) -> Result<Vec<f32>> {
    let rp = raw_path(path);
    let file = File::open(&rp).map_err(|e| Error::io(&rp, e))?;
    let [sx, _, _] = src.shape();
    let row_bytes = sx * meta.dtype.size();
    let mut buf = vec![0u8; row_bytes];
    let mut out = Vec::with_capacity(src.len());
    for z in src.lo[2]..src.hi[2] {
        for y in src.lo[1]..src.hi[1] {
            let off = meta.byte_offset(src.lo[0] as usize, y as usize, z as usize);
            file.read_exact_at(&mut buf, off)
                .map_err(|e| Error::io(&rp, e))?;
            decode(meta.dtype, &buf, &mut out);
        }
    }
    Ok(out)
}

fn read_stack_box(meta: &VolumeMeta, dir: &Path, src: &VoxelBox) -> Result<Vec<f32>> {
    let files = stack_files(dir)?;
    if files.len() != meta.dims[2] {
        return Err(Error::Metadata {
            path: dir.to_path_buf(),
            message: format!(
                "stack has {} slices, expected {}",
                files.len(),
                meta.dims[2]
            ),
        });
    }
    let mut out = Vec::with_capacity(src.len());
    for z in src.lo[2]..src.hi[2] {
        let f = &files[z as usize];
        let img = open_slice(f)?;
        let plane: Vec<f32> = match &img {
            image::DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f32).collect(),
            image::DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f32).collect(),
            _ => {
                slice_dtype(&img, f)?;
                unreachable!()
            }
        };
        let w = img.width() as usize;
        if w != meta.dims[0] || img.height() as usize != meta.dims[1] {
            return Err(Error::Metadata {
                path: f.clone(),
                message: "inconsistent slice dimensions".into(),
            });
        }
        for y in src.lo[1]..src.hi[1] {
            let row = y as usize * w;
            out.extend_from_slice(&plane[row + src.lo[0] as usize..row + src.hi[0] as usize]);
        }
    }
    Ok(out)
}

/// Overwrite exactly the voxels of `bbox` in a pre-created raw dataset.
pub fn write_region(
    meta: &VolumeMeta,
    path: &Path,
    bbox: &VoxelBox,
    block: &ScalarBlock,
) -> Result<()> {
    if block.bbox != *bbox {
        return Err(Error::BoxMismatch(format!(
            "block covers {}, write targets {}",
            block.bbox, bbox
        )));
    }
    if !meta.whole_box().contains_box(bbox) {
        return Err(Error::invalid(format!(
            "write box {} outside volume {}",
            bbox,
            meta.whole_box()
        )));
    }
    if block.values.len() != bbox.volume()? {
        return Err(Error::invalid("block size does not match its box"));
    }
    let rp = raw_path(path);
    let file = OpenOptions::new()
        .write(true)
        .open(&rp)
        .map_err(|e| Error::io(&rp, e))?;
    let len = file.metadata().map_err(|e| Error::io(&rp, e))?.len();
    if len != meta.byte_len() {
        return Err(Error::invalid(format!(
            "{} is {} bytes, expected {}",
            rp.display(),
            len,
            meta.byte_len()
        )));
    }
    let [sx, _, _] = bbox.shape();
    let mut buf = Vec::with_capacity(sx * meta.dtype.size());
    for (r, z_y) in (bbox.lo[2]..bbox.hi[2])
        .flat_map(|z| (bbox.lo[1]..bbox.hi[1]).map(move |y| (z, y)))
        .enumerate()
    {
        let (z, y) = z_y;
        buf.clear();
        encode(meta.dtype, &block.values[r * sx..(r + 1) * sx], &mut buf);
        let off = meta.byte_offset(bbox.lo[0] as usize, y as usize, z as usize);
        file.write_all_at(&buf, off)
            .map_err(|e| Error::io(&rp, e))?;
    }
    Ok(())
}

/// Write a zero-filled raw file of the full size plus its sidecar.
pub fn create_dataset(meta: &VolumeMeta, path: &Path, overwrite: bool) -> Result<()> {
    meta.validate()?;
    let rp = raw_path(path);
    let mp = meta_path(path);
    if !overwrite && (rp.exists() || mp.exists()) {
        return Err(Error::Exists(rp));
    }
    let file = File::create(&rp).map_err(|e| Error::io(&rp, e))?;
    file.set_len(meta.byte_len())
        .map_err(|e| Error::io(&rp, e))?;
    let mut side = File::create(&mp).map_err(|e| Error::io(&mp, e))?;
    side.write_all(meta.to_sidecar().as_bytes())
        .map_err(|e| Error::io(&mp, e))?;
    Ok(())
}

/// Whole-volume convenience read.
pub fn read_volume(path: &Path) -> Result<(VolumeMeta, ScalarBlock)> {
    let meta = read_metadata(path)?;
    let block = read_region(&meta, path, &meta.whole_box())?;
    Ok((meta, block))
}

/// Create a dataset sized for `block` and write it in one go.
pub fn write_volume(
    path: &Path,
    block: &ScalarBlock,
    dtype: DType,
    spacing: [f64; 3],
    overwrite: bool,
) -> Result<VolumeMeta> {
    if block.bbox.lo != [0; 3] {
        return Err(Error::invalid(
            "whole-volume write needs a box starting at 0",
        ));
    }
    let meta = VolumeMeta::new(block.bbox.shape(), dtype, spacing)?;
    create_dataset(&meta, path, overwrite)?;
    write_region(&meta, path, &block.bbox, block)?;
    Ok(meta)
}
