//! CLI-only file formats: magnitude dumps and pose files with diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use ringfit::image::GrayImage;
use ringfit::kv::KvFile;
use ringfit::model::{BoardPose, POSE_KEYS};
use ringfit::{Error, Result};

/// Keys a pose file may carry besides the pose itself.
pub const POSE_DIAGNOSTIC_KEYS: [&str; 4] = ["center_outside", "center_side", "locate_loss", "final_rmse"];

/// Float text grid: a `width height` line, then one line of
/// space-separated values per image row.
pub fn grid_to_text(img: &GrayImage) -> String {
    let mut s = format!("{} {}\n", img.width, img.height);
    for row in img.data.chunks(img.width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Pose keys followed by diagnostics.
pub fn write_pose(path: &Path, pose: &BoardPose, diagnostics: &[(&str, String)]) -> Result<()> {
    let mut kv = pose.to_kv();
    for (k, v) in diagnostics {
        debug_assert!(POSE_DIAGNOSTIC_KEYS.contains(k));
        kv.set(k, v);
    }
    kv.write(path)
}

/// Reads a pose file; diagnostics are accepted and ignored.
pub fn read_pose(path: &Path) -> Result<BoardPose> {
    let kv = KvFile::read(path)?;
    let allowed: Vec<&str> = POSE_KEYS.iter().chain(&POSE_DIAGNOSTIC_KEYS).copied().collect();
    kv.check_keys(&allowed)?;
    let mut pose_only = KvFile::new();
    for (k, v) in kv.entries() {
        if POSE_KEYS.contains(&k) {
            pose_only.set(k, v);
        }
    }
    BoardPose::from_kv(&pose_only)
}
