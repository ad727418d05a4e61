//! Scene manifests, point CSV files, parameter checkpoints and field export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, RestGeometry, Trajectory, TrajectoryDataset};
use crate::ad::Tensor;

fn io_err(path: &Path, source: std::io::Error) -> GeometryError {
    GeometryError::Io { path: path.display().to_string(), source }
}

pub fn read_points_csv(path: &Path) -> Result<Vec<Point>, GeometryError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file = path.display().to_string();
    let mut pts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| GeometryError::Parse { file: file.clone(), line: ln + 1, msg };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!("expected 3 columns, found {}", cols.len())));
        }
        let mut p = [0.0; 3];
        for (k, c) in cols.iter().enumerate() {
            p[k] = c.trim().parse::<f64>().map_err(|e| parse_err(format!("column {}: {e}", k + 1)))?;
            if !p[k].is_finite() {
                return Err(parse_err(format!("column {}: non-finite value", k + 1)));
            }
        }
        pts.push(p);
    }
    Ok(pts)
}

/// Shortest round-trip decimal formatting, so reloads are bit-exact.
pub fn write_points_csv(path: &Path, points: &[Point]) -> Result<(), GeometryError> {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        s.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

/// A flat list of frame files for one trajectory, or one list per
/// trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameFiles {
    Single(Vec<String>),
    Multi(Vec<Vec<String>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackedFlag {
    All(bool),
    Each(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub name: String,
    pub num_points: usize,
    pub num_frames: usize,
    pub dt: f64,
    pub tracked: TrackedFlag,
    pub total_volume: f64,
    pub density: f64,
    pub frame_files: FrameFiles,
    pub rest_file: String,
}

impl SceneManifest {
    fn trajectories(&self) -> Vec<Vec<String>> {
        match &self.frame_files {
            FrameFiles::Single(v) if v.is_empty() => Vec::new(),
            FrameFiles::Single(v) => vec![v.clone()],
            FrameFiles::Multi(v) => v.clone(),
        }
    }

    fn tracked(&self, o: usize) -> bool {
        match &self.tracked {
            TrackedFlag::All(b) => *b,
            TrackedFlag::Each(v) => v.get(o).copied().unwrap_or(true),
        }
    }
}

/// Writes `scene.json`, `rest.csv` and per-frame CSVs into `dir`; returns the
/// manifest path.
pub fn save_scene(dir: &Path, name: &str, geom: &RestGeometry, data: &TrajectoryDataset) -> Result<PathBuf, GeometryError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_points_csv(&dir.join("rest.csv"), geom.points())?;
    let multi = data.num_trajectories() > 1;
    let mut files = Vec::new();
    for (o, tr) in data.trajectories.iter().enumerate() {
        let mut names = Vec::new();
        for (t, f) in tr.frames.iter().enumerate() {
            let fname = if multi { format!("traj_{o:02}_frame_{t:04}.csv") } else { format!("frame_{t:04}.csv") };
            write_points_csv(&dir.join(&fname), f)?;
            names.push(fname);
        }
        files.push(names);
    }
    let tracked_all: Vec<bool> = data.trajectories.iter().map(|t| t.tracked).collect();
    let manifest = SceneManifest {
        name: name.to_string(),
        num_points: geom.len(),
        num_frames: data.num_frames(),
        dt: data.dt,
        tracked: if tracked_all.iter().all(|&t| t == tracked_all.first().copied().unwrap_or(true)) {
            TrackedFlag::All(tracked_all.first().copied().unwrap_or(true))
        } else {
            TrackedFlag::Each(tracked_all)
        },
        total_volume: geom.total_volume(),
        density: geom.masses()[0] / geom.volumes()[0],
        frame_files: if multi { FrameFiles::Multi(files) } else { FrameFiles::Single(files.pop().unwrap_or_default()) },
        rest_file: "rest.csv".into(),
    };
    let path = dir.join("scene.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Loads a manifest (or a directory containing `scene.json`).
pub fn load_scene(path: &Path) -> Result<(RestGeometry, TrajectoryDataset, SceneManifest), GeometryError> {
    let manifest_path = if path.is_dir() { path.join("scene.json") } else { path.to_path_buf() };
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| GeometryError::Parse {
        file: manifest_path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if !(manifest.dt > 0.0) || !manifest.dt.is_finite() {
        return Err(GeometryError::Invalid(format!("{}: dt must be positive, got {}", manifest_path.display(), manifest.dt)));
    }
    let rest_path = base.join(&manifest.rest_file);
    let rest = read_points_csv(&rest_path)?;
    if rest.len() != manifest.num_points {
        return Err(GeometryError::Parse {
            file: rest_path.display().to_string(),
            line: rest.len().min(manifest.num_points) + 1,
            msg: format!("manifest says {} points, file has {}", manifest.num_points, rest.len()),
        });
    }
    let geom = RestGeometry::new(rest, manifest.total_volume, manifest.density)?;
    let mut trajs = Vec::new();
    for (o, files) in manifest.trajectories().into_iter().enumerate() {
        let tracked = manifest.tracked(o);
        if manifest.num_frames != 0 && files.len() != manifest.num_frames {
            return Err(GeometryError::Invalid(format!(
                "trajectory {o} lists {} frame files, manifest says {} frames",
                files.len(),
                manifest.num_frames
            )));
        }
        let mut frames = Vec::with_capacity(files.len());
        for f in files {
            let fp = base.join(&f);
            let pts = read_points_csv(&fp)?;
            if tracked && pts.len() != geom.len() {
                return Err(GeometryError::Parse {
                    file: fp.display().to_string(),
                    line: pts.len().min(geom.len()) + 1,
                    msg: format!("tracked frame has {} points, rest has {}", pts.len(), geom.len()),
                });
            }
            frames.push(pts);
        }
        trajs.push(Trajectory { frames, tracked });
    }
    let data = TrajectoryDataset::new(trajs, manifest.dt, geom.len())?;
    Ok((geom, data, manifest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EncodedTensor {
    shape: Vec<usize>,
    data: String,
}

fn encode(t: &Tensor) -> EncodedTensor {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    EncodedTensor { shape: t.shape().to_vec(), data: B64.encode(bytes) }
}

fn decode(name: &str, e: &EncodedTensor) -> Result<Tensor, GeometryError> {
    let bytes = B64
        .decode(&e.data)
        .map_err(|err| GeometryError::Invalid(format!("checkpoint tensor {name}: {err}")))?;
    if bytes.len() % 8 != 0 {
        return Err(GeometryError::Invalid(format!("checkpoint tensor {name}: payload not a multiple of 8 bytes")));
    }
    let data: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(e.shape.clone(), data).map_err(|err| GeometryError::Invalid(format!("checkpoint tensor {name}: {err}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(rename = "J")]
    pub num_handles: usize,
    #[serde(rename = "K")]
    pub knn: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub stage: u32,
    /// Free-form settings needed to rebuild the model (network shapes,
    /// material constants and the like).
    #[serde(default, flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Named tensors plus model metadata, stored as one JSON document with
/// base64 little-endian `f64` payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    metadata: CheckpointMeta,
    params: BTreeMap<String, EncodedTensor>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            metadata: self.meta.clone(),
            params: self.tensors.iter().map(|(k, t)| (k.clone(), encode(t))).collect(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| GeometryError::Parse { file: "checkpoint".into(), line: e.line(), msg: e.to_string() })?;
        let mut tensors = BTreeMap::new();
        for (k, e) in &file.params {
            tensors.insert(k.clone(), decode(k, e)?);
        }
        Ok(Checkpoint { meta: file.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        fs::write(path, self.to_json() + "\n").map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            GeometryError::Parse { line, msg, .. } => GeometryError::Parse { file: path.display().to_string(), line, msg },
            other => other,
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, GeometryError> {
        self.tensors.get(name).ok_or_else(|| GeometryError::Invalid(format!("checkpoint is missing '{name}'")))
    }
}

/// Writes an `[N, 4]` stiffness field as `E_iso,E_x,E_y,E_z` rows.
pub fn write_stiffness_csv(path: &Path, e: &Tensor) -> Result<(), GeometryError> {
    if e.rank() != 2 || e.shape()[1] != 4 {
        return Err(GeometryError::Contract(format!("stiffness field must be [N, 4], got {:?}", e.shape())));
    }
    let mut s = String::from("E_iso,E_x,E_y,E_z\n");
    for r in e.data().chunks(4) {
        s.push_str(&format!("{},{},{},{}\n", r[0], r[1], r[2], r[3]));
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_scene, SceneKind, SceneParams};

    #[test]
    fn scene_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = SceneParams { num_points: 64, num_frames: 3, ..SceneParams::default() };
        let (g, d) = gen_scene(SceneKind::TwoCubeHinge, &p).unwrap();
        let path = save_scene(dir.path(), "hinge", &g, &d).unwrap();
        let (g2, d2, m) = load_scene(&path).unwrap();
        assert_eq!(g.points(), g2.points());
        assert_eq!(d, d2);
        assert_eq!(m.num_frames, 3);
    }

    #[test]
    fn small_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let pts: Vec<Point> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64]).collect();
        let g = RestGeometry::new(pts.clone(), 1.0, 1.0).unwrap();
        let d = TrajectoryDataset::new(vec![Trajectory { frames: vec![pts.clone(), pts], tracked: true }], 0.1, 8).unwrap();
        let path = save_scene(dir.path(), "box", &g, &d).unwrap();
        let (_, d2, _) = load_scene(&path).unwrap();
        assert_eq!(d2.num_frames(), 2);
        assert_eq!(d2.trajectories[0].frames[0].len(), 8);
    }

    fn edit_manifest(dir: &Path, f: impl Fn(&mut serde_json::Value)) {
        let path = dir.join("scene.json");
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        f(&mut v);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    }

    #[test]
    fn bad_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = SceneParams { num_points: 16, num_frames: 2, ..SceneParams::default() };
        let (g, d) = gen_scene(SceneKind::TwoCubeSplit, &p).unwrap();
        save_scene(dir.path(), "s", &g, &d).unwrap();
        edit_manifest(dir.path(), |v| v["dt"] = 0.0.into());
        assert!(matches!(load_scene(dir.path()), Err(GeometryError::Invalid(_))));

        save_scene(dir.path(), "s", &g, &d).unwrap();
        fs::write(dir.path().join("frame_0001.csv"), "0,0,0\n1,2\n").unwrap();
        match load_scene(dir.path()) {
            Err(GeometryError::Parse { file, line, .. }) => {
                assert!(file.ends_with("frame_0001.csv"));
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }

        fs::write(dir.path().join("frame_0001.csv"), "0,0,0\n").unwrap();
        assert!(matches!(load_scene(dir.path()), Err(GeometryError::Parse { .. })));

        fs::remove_file(dir.path().join("frame_0001.csv")).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(GeometryError::Io { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut tensors = BTreeMap::new();
        tensors.insert("a".to_string(), Tensor::new(vec![2, 2], vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300]).unwrap());
        tensors.insert("b".to_string(), Tensor::scalar(3.0));
        let meta = CheckpointMeta {
            num_handles: 4,
            knn: 20,
            hidden_width: 64,
            seed: 7,
            stage: 2,
            extra: BTreeMap::from([("nu".to_string(), serde_json::json!(0.45))]),
        };
        let ck = Checkpoint { meta, tensors };
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(ck, back);
        assert!(Checkpoint::from_json("{").is_err());
        assert!(back.tensor("missing").is_err());
    }
}
