use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Frame paths relative to the manifest's directory.
    pub frames: Vec<String>,
    pub times: Vec<f64>,
}

pub fn load_series(manifest_path: &Path) -> Result<TimeSeries> {
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: manifest_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if manifest.frames.len() != manifest.times.len() {
        return Err(Error::Malformed {
            path: manifest_path.to_path_buf(),
            reason: format!(
                "{} frames but {} times",
                manifest.frames.len(),
                manifest.times.len()
            ),
        });
    }
    for i in 1..manifest.times.len() {
        if !(manifest.times[i] > manifest.times[i - 1]) {
            return Err(Error::NonIncreasingTimes(i));
        }
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let frames = manifest
        .frames
        .iter()
        .map(|f| ImageGrid::read_f32grid(base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(frames, manifest.times)
}

/// Writes `frame_XXX.f32grid` files plus `manifest.json` into `dir`.
pub fn write_series(dir: &Path, series: &TimeSeries) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(series.len());
    for (j, frame) in series.frames().iter().enumerate() {
        let name = format!("frame_{j:03}.f32grid");
        frame.write_f32grid(dir.join(&name))?;
        names.push(name);
    }
    let manifest = Manifest {
        frames: names,
        times: series.times().to_vec(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

/// Lays out `series_<k>/manifest.json` for every series.
pub fn write_dataset(dir: &Path, series: &[TimeSeries]) -> Result<()> {
    for (k, s) in series.iter().enumerate() {
        write_series(&dir.join(format!("series_{k}")), s)?;
    }
    Ok(())
}

/// Reads `series_0`, `series_1`, ... until the first missing index.
pub fn load_dataset(dir: &Path) -> Result<Vec<TimeSeries>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    loop {
        let sub = dir.join(format!("series_{}", out.len()));
        if !sub.is_dir() {
            break;
        }
        out.push(load_series(&sub.join("manifest.json"))?);
    }
    if out.is_empty() {
        return Err(Error::MissingFile(dir.join("series_0/manifest.json")));
    }
    let dims = out[0].dims();
    for s in &out {
        if s.dims() != dims {
            return Err(Error::DimsMismatch {
                expected: dims.unwrap_or((0, 0)),
                found: s.dims().unwrap_or((0, 0)),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, v: f64) -> ImageGrid {
        ImageGrid::filled(h, w, v).unwrap()
    }

    fn write_manifest(dir: &Path, frames: &[&str], times: &[f64]) -> PathBuf {
        let m = Manifest {
            frames: frames.iter().map(|s| s.to_string()).collect(),
            times: times.to_vec(),
        };
        let p = dir.join("manifest.json");
        fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
        p
    }

    #[test]
    fn loads_three_frames() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["a.f32grid", "b.f32grid", "c.f32grid"].iter().enumerate() {
            frame(4, 4, i as f64).write_f32grid(dir.path().join(name)).unwrap();
        }
        let p = write_manifest(dir.path(), &["a.f32grid", "b.f32grid", "c.f32grid"], &[0.0, 1.0, 2.0]);
        let s = load_series(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.frames()[2].get(0, 0), 2.0);
    }

    #[test]
    fn rejects_repeated_times_and_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        frame(32, 32, 1.0).write_f32grid(dir.path().join("a.f32grid")).unwrap();
        frame(16, 16, 1.0).write_f32grid(dir.path().join("b.f32grid")).unwrap();
        let p = write_manifest(dir.path(), &["a.f32grid", "a.f32grid", "a.f32grid"], &[0.0, 1.0, 1.0]);
        assert!(matches!(load_series(&p), Err(Error::NonIncreasingTimes(2))));
        let p = write_manifest(dir.path(), &["a.f32grid", "b.f32grid"], &[0.0, 1.0]);
        assert!(matches!(load_series(&p), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn reports_missing_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_series(&dir.path().join("manifest.json")),
            Err(Error::MissingFile(_))
        ));
        let p = write_manifest(dir.path(), &["gone.f32grid"], &[0.0]);
        assert!(matches!(load_series(&p), Err(Error::MissingFile(_))));
        fs::write(dir.path().join("x.f32grid"), b"PNG\0\0\0\0\0\0\0\0\0").unwrap();
        let p = write_manifest(dir.path(), &["x.f32grid"], &[0.0]);
        assert!(matches!(load_series(&p), Err(Error::BadMagic { .. })));
    }
}
