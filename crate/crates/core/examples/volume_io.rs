//! Raw volume with a sidecar: write, read back a sub-region, patch a region
//! in place, and export an angle map with PGM slice previews.

use myofiber::export::{preview_byte, write_angle_map};
use myofiber::volume_io::{
    read_metadata, read_region, read_volume, write_region, write_volume, Block, DType, VoxelBox,
};

fn main() -> myofiber::Result<()> {
    let dir = std::env::temp_dir().join(format!("myofiber-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| myofiber::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let dims = [40, 30, 20];
    let ramp = Block::from_fn(VoxelBox::whole(dims), |[x, y, z]| {
        (x + 100 * y + 10_000 * z) as f32
    });
    let path = dir.join("ramp");
    write_volume(&path, &ramp, DType::F32, [0.5, 0.5, 1.0], true)?;

    let meta = read_metadata(&path)?;
    print!("{}", meta.to_sidecar());

    let sub = VoxelBox::new([10, 5, 3], [14, 8, 5])?;
    let block = read_region(&meta, &path, &sub)?;
    println!(
        "region {sub}: first {}, last {}",
        block.values[0],
        block.values[block.values.len() - 1]
    );

    let patch = Block::filled(sub, -1.0f32);
    write_region(&meta, &path, &sub, &patch)?;
    let (_, all) = read_volume(&path)?;
    let patched = all.values.iter().filter(|&&v| v == -1.0).count();
    println!("patched {patched} voxels ({} expected)", sub.len());

    println!(
        "preview bytes: -90° → {}, 0° → {}, +90° → {}, invalid → {}",
        preview_byte(-90.0, true),
        preview_byte(0.0, true),
        preview_byte(90.0, true),
        preview_byte(0.0, false)
    );

    // an angle map sweeping -90..90 along x, invalid in the first column
    let angles = Block::from_fn(VoxelBox::whole([64, 16, 2]), |[x, _, _]| {
        x as f32 * 180.0 / 63.0 - 90.0
    });
    let valid: Vec<u8> = VoxelBox::whole([64, 16, 2])
        .iter()
        .map(|[x, _, _]| u8::from(x > 0))
        .collect();
    let previews = dir.join("previews");
    write_angle_map(&angles, &valid, &dir.join("ha"), [1.0; 3], Some(&previews))?;
    let n = std::fs::read_dir(&previews).map(|d| d.count()).unwrap_or(0);
    println!("wrote ha dataset and {n} preview slices");
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
