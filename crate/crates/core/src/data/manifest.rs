use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sequence::{load_sequence, LabeledSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub score: f64,
}

/// Index of a labeled dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub score_range: [f64; 2],
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let [lo, hi] = m.score_range;
        if !(lo <= hi) {
            return Err(Error::Format(format!(
                "{}: empty score range [{lo}, {hi}]",
                path.display()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve(base: &Path, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Loads every listed sequence, using the manifest ids and scores.
    pub fn load_samples(&self, manifest_path: impl AsRef<Path>, n_joints: usize) -> Result<Vec<LabeledSample>> {
        let base = manifest_path.as_ref().parent().unwrap_or(Path::new("."));
        let range = (self.score_range[0], self.score_range[1]);
        self.samples
            .iter()
            .map(|e| {
                let mut seq = load_sequence(Self::resolve(base, e), n_joints)?;
                seq.id = e.id.clone();
                LabeledSample::new(seq, e.score, range)
            })
            .collect()
    }
}

/// Loads a manifest and all its samples.
pub fn load_dataset(manifest_path: impl AsRef<Path>, n_joints: usize) -> Result<(Manifest, Vec<LabeledSample>)> {
    let m = Manifest::load(&manifest_path)?;
    let samples = m.load_samples(&manifest_path, n_joints)?;
    Ok((m, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sequence::write_sequence;
    use crate::data::synth::{synthesize_exercise, ExerciseKind};

    #[test]
    fn manifest_round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let s = synthesize_exercise(ExerciseKind::Squat, 0.5, 10, 1, (0.0, 1.0)).unwrap();
        write_sequence(dir.path().join("a.csv"), &s.sequence).unwrap();
        let m = Manifest {
            dataset: "toy".into(),
            score_range: [0.0, 1.0],
            samples: vec![ManifestEntry {
                id: "first".into(),
                path: "a.csv".into(),
                score: s.score,
            }],
        };
        let mp = dir.path().join("manifest.json");
        m.save(&mp).unwrap();
        let (back, samples) = load_dataset(&mp, 25).unwrap();
        assert_eq!(back, m);
        assert_eq!(samples[0].id(), "first");
        assert_eq!(samples[0].sequence.frames(), s.sequence.frames());
    }
}
