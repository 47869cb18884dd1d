//! Result persistence: raw angle/vector datasets, 8-bit preview slices and
//! legacy ASCII VTK polydata for streamlines.
//!
//! All text output uses fixed 6-decimal formatting so identical inputs give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cardiac_frame::{AngleMaps, SENTINEL};
use crate::error::{Error, Result};
use crate::structure_tensor::OrientationField;
use crate::tractography::Streamline;
use crate::volume_io::{write_volume, Block, DType, ScalarBlock, VoxelBox};

/// Dataset names used inside an output directory.
pub mod names {
    pub const HA: &str = "ha";
    pub const IA: &str = "ia";
    pub const FA: &str = "fa";
    pub const VALID: &str = "valid";
    pub const VECTORS_DIR: &str = "vectors";
    pub const FX: &str = "fx";
    pub const FY: &str = "fy";
    pub const FZ: &str = "fz";
    pub const FIELD_FA: &str = "fa";
    pub const EIGEN_DIR: &str = "eigenvalues";
    pub const LAMBDA: [&str; 3] = ["lambda1", "lambda2", "lambda3"];
}

/// Linear remap of an angle in [-90, 90] to a byte, rounding half away from
/// zero. Invalid voxels map to 0.
pub fn preview_byte(angle: f32, valid: bool) -> u8 {
    if !valid {
        return 0;
    }
    let t = ((angle as f64 + 90.0) / 180.0 * 255.0).round();
    t.clamp(0.0, 255.0) as u8
}

/// Binary PGM (P5) of an 8-bit grayscale image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Write an angle map as a float32 dataset at `path` (sidecar + raw), with
/// [`SENTINEL`] at invalid voxels. With `preview_dir`, also one PGM per
/// z-slice named `slice_NNNN.pgm`.
pub fn write_angle_map(
    map: &ScalarBlock,
    valid: &[u8],
    path: &Path,
    spacing: [f64; 3],
    preview_dir: Option<&Path>,
) -> Result<()> {
    if valid.len() != map.values.len() {
        return Err(Error::BoxMismatch(format!(
            "map has {} voxels, validity has {}",
            map.values.len(),
            valid.len()
        )));
    }
    let out = Block {
        bbox: map.bbox,
        values: map
            .values
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| if ok != 0 { v } else { SENTINEL })
            .collect(),
    };
    write_volume(path, &out, DType::F32, spacing, true)?;
    if let Some(dir) = preview_dir {
        write_previews(&out, valid, dir)?;
    }
    Ok(())
}

fn write_previews(map: &ScalarBlock, valid: &[u8], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [nx, ny, nz] = map.bbox.shape();
    let plane = nx * ny;
    for z in 0..nz {
        let px: Vec<u8> = (0..plane)
            .map(|i| {
                let j = z * plane + i;
                preview_byte(map.values[j], valid[j] != 0)
            })
            .collect();
        let p = dir.join(format!("slice_{z:04}.pgm"));
        fs::write(&p, encode_pgm(nx, ny, &px)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Write `fx`, `fy`, `fz` and `fa` float32 datasets into `dir`. Vectors are
/// already sign-normalized in an [`OrientationField`]; degenerate voxels
/// stay `(0, 0, 0)`.
pub fn write_vector_field(field: &OrientationField, dir: &Path, spacing: [f64; 3]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bbox = field.bbox;
    for (k, name) in [names::FX, names::FY, names::FZ].iter().enumerate() {
        let block = Block {
            bbox,
            values: field.fiber.iter().map(|f| f[k]).collect(),
        };
        write_volume(&dir.join(name), &block, DType::F32, spacing, true)?;
    }
    let fa = Block {
        bbox,
        values: field.fa.clone(),
    };
    write_volume(&dir.join(names::FIELD_FA), &fa, DType::F32, spacing, true)?;
    Ok(())
}

/// Read back a vector field written by [`write_vector_field`] (or by the
/// chunked pipeline).
pub fn read_vector_field(dir: &Path) -> Result<(crate::volume_io::VolumeMeta, OrientationField)> {
    use crate::volume_io::read_volume;
    let (meta, fx) = read_volume(&dir.join(names::FX))?;
    let (_, fy) = read_volume(&dir.join(names::FY))?;
    let (_, fz) = read_volume(&dir.join(names::FZ))?;
    let (_, fa) = read_volume(&dir.join(names::FIELD_FA))?;
    if fy.bbox != fx.bbox || fz.bbox != fx.bbox || fa.bbox != fx.bbox {
        return Err(Error::BoxMismatch(
            "vector components differ in size".into(),
        ));
    }
    let fiber = (0..fx.values.len())
        .map(|i| [fx.values[i], fy.values[i], fz.values[i]])
        .collect();
    let n = fx.values.len();
    Ok((
        meta,
        OrientationField {
            bbox: fx.bbox,
            fiber,
            lambda: vec![[0.0; 3]; n],
            fa: fa.values,
        },
    ))
}

/// Read the `ha`, `ia`, `fa` and `valid` datasets of an output directory.
pub fn read_angle_maps(dir: &Path) -> Result<(crate::volume_io::VolumeMeta, AngleMaps)> {
    use crate::volume_io::read_volume;
    let (meta, ha) = read_volume(&dir.join(names::HA))?;
    let (_, ia) = read_volume(&dir.join(names::IA))?;
    let (_, fa) = read_volume(&dir.join(names::FA))?;
    let (_, valid) = read_volume(&dir.join(names::VALID))?;
    if [&ia, &fa, &valid].iter().any(|b| b.bbox != ha.bbox) {
        return Err(Error::BoxMismatch("angle maps differ in size".into()));
    }
    Ok((
        meta,
        AngleMaps {
            bbox: ha.bbox,
            ha: ha.values,
            ia: ia.values,
            fa: fa.values,
            valid: valid.values.iter().map(|&v| u8::from(v != 0.0)).collect(),
        },
    ))
}

/// Legacy ASCII VTK polydata: one polyline per streamline with per-point
/// helical angle. Coordinates are voxel positions scaled by `spacing`.
pub fn vtk_polylines(lines: &[Streamline], spacing: [f64; 3]) -> Result<String> {
    if lines.is_empty() {
        return Err(Error::invalid("no streamlines to export"));
    }
    if let Some(l) = lines.iter().find(|l| l.points.len() < 2) {
        return Err(Error::invalid(format!(
            "streamline from seed {} has fewer than 2 points",
            l.seed_index
        )));
    }
    let n: usize = lines.iter().map(|l| l.points.len()).sum();
    let mut s = String::with_capacity(n * 40);
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("streamlines\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET POLYDATA\n");
    let _ = writeln!(s, "POINTS {n} float");
    for l in lines {
        for p in &l.points {
            let _ = writeln!(
                s,
                "{:.6} {:.6} {:.6}",
                p[0] * spacing[0],
                p[1] * spacing[1],
                p[2] * spacing[2]
            );
        }
    }
    let _ = writeln!(s, "LINES {} {}", lines.len(), lines.len() + n);
    let mut next = 0usize;
    for l in lines {
        s.push_str(&l.points.len().to_string());
        for _ in 0..l.points.len() {
            let _ = write!(s, " {next}");
            next += 1;
        }
        s.push('\n');
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    s.push_str("SCALARS helix_angle float 1\n");
    s.push_str("LOOKUP_TABLE default\n");
    for l in lines {
        for h in &l.ha {
            let _ = writeln!(s, "{h:.6}");
        }
    }
    Ok(s)
}

pub fn write_vtk_polylines(lines: &[Streamline], path: &Path, spacing: [f64; 3]) -> Result<()> {
    let text = vtk_polylines(lines, spacing)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Paths of every dataset the orientation pipeline can produce, relative to
/// an output directory.
pub fn dataset_path(dir: &Path, group: Option<&str>, name: &str) -> PathBuf {
    match group {
        Some(g) => dir.join(g).join(name),
        None => dir.join(name),
    }
}

/// Box-restricted block helper for region writes.
pub(crate) fn plane(bbox: VoxelBox, values: Vec<f32>) -> ScalarBlock {
    Block { bbox, values }
}
