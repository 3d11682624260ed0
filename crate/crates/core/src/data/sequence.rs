use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::kimore;
use crate::tensor::Tensor;

/// Coordinates per joint.
pub const COORDS: usize = 3;

/// One exercise performance: `T x N x 3` joint coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    frames: Tensor<f64>,
}

impl SkeletonSequence {
    pub fn new(id: impl Into<String>, frames: Tensor<f64>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 3 || s[0] == 0 || s[2] != COORDS {
            return Err(Error::InvalidShape(format!(
                "sequence frames must be T x N x {COORDS} with T >= 1, got {s:?}"
            )));
        }
        if let Some(pos) = frames.data().iter().position(|v| !v.is_finite()) {
            let row = pos / (s[1] * COORDS);
            return Err(Error::Data(format!("non-finite coordinate in frame {row}")));
        }
        Ok(SkeletonSequence { id: id.into(), frames })
    }

    pub fn frames(&self) -> &Tensor<f64> {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn point(&self, t: usize, joint: usize) -> [f64; 3] {
        let n = self.num_joints();
        let base = (t * n + joint) * COORDS;
        let d = self.frames.data();
        [d[base], d[base + 1], d[base + 2]]
    }

    /// Keeps joints in the order given by `perm`: new joint `perm[i]` takes
    /// old joint `i`.
    pub fn permute_joints(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_joints();
        crate::graph::check_permutation(perm, n)?;
        let t = self.frame_count();
        let src = self.frames.data();
        let mut out = vec![0.0; src.len()];
        for f in 0..t {
            for (i, &p) in perm.iter().enumerate() {
                let a = (f * n + i) * COORDS;
                let b = (f * n + p) * COORDS;
                out[b..b + COORDS].copy_from_slice(&src[a..a + COORDS]);
            }
        }
        Self::new(self.id.clone(), Tensor::new(self.frames.shape().to_vec(), out)?)
    }
}

/// Column header `j0_x,j0_y,j0_z,...`.
pub fn csv_header(n_joints: usize) -> Vec<String> {
    (0..n_joints)
        .flat_map(|j| ["x", "y", "z"].map(|c| format!("j{j}_{c}")))
        .collect()
}

/// Reads one frame per CSV row. A header row is detected and skipped.
pub fn load_sequence(path: impl AsRef<Path>, n_joints: usize) -> Result<SkeletonSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let width = n_joints * COORDS;
    let mut data = Vec::new();
    let mut frames = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if row == 0 && record.get(0).is_some_and(|c| c.starts_with('j')) {
            continue;
        }
        if record.len() != width {
            return Err(Error::Format(format!(
                "{}: row {} has {} columns, expected {width} ({n_joints} joints x {COORDS})",
                path.display(),
                row + 1,
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!(
                    "{}: row {} column {} is not a number: {field:?}",
                    path.display(),
                    row + 1,
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: row {} column {} holds {v}",
                    path.display(),
                    row + 1,
                    col + 1
                )));
            }
            data.push(v);
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Format(format!("{}: no frames", path.display())));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SkeletonSequence::new(id, Tensor::new([frames, n_joints, COORDS], data)?)
}

/// Number of joints implied by the column count of a sequence file.
pub fn csv_joint_count(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let record = reader
        .records()
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    if record.len() % COORDS != 0 {
        return Err(Error::Format(format!(
            "{}: {} columns is not a multiple of {COORDS}",
            path.display(),
            record.len()
        )));
    }
    Ok(record.len() / COORDS)
}

/// Writes with a header row. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn write_sequence(path: impl AsRef<Path>, seq: &SkeletonSequence) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(csv_header(seq.num_joints()))?;
    let width = seq.num_joints() * COORDS;
    for row in seq.frames.data().chunks(width) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Joints used to center and scale a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormalizeSpec {
    pub root: usize,
    /// The torso runs from `root` to this joint.
    pub torso_top: usize,
}

impl Default for NormalizeSpec {
    fn default() -> Self {
        NormalizeSpec {
            root: kimore::SPINE_BASE,
            torso_top: kimore::SPINE_SHOULDER,
        }
    }
}

/// Moves the root joint to the origin in every frame and divides by the
/// mean torso length of the sequence.
pub fn normalize_sequence(seq: &SkeletonSequence, spec: NormalizeSpec) -> Result<SkeletonSequence> {
    let n = seq.num_joints();
    if spec.root >= n || spec.torso_top >= n {
        return Err(Error::Config(format!(
            "normalization joints ({}, {}) out of range for {n} joints",
            spec.root, spec.torso_top
        )));
    }
    let t = seq.frame_count();
    let mut data = seq.frames.data().to_vec();
    let mut torso = 0.0;
    for f in 0..t {
        let frame = &mut data[f * n * COORDS..(f + 1) * n * COORDS];
        let root: [f64; 3] = frame[spec.root * COORDS..spec.root * COORDS + COORDS]
            .try_into()
            .expect("three coordinates");
        for p in frame.chunks_mut(COORDS) {
            for (c, r) in p.iter_mut().zip(root) {
                *c -= r;
            }
        }
        let top = &frame[spec.torso_top * COORDS..spec.torso_top * COORDS + COORDS];
        torso += top.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let torso = torso / t as f64;
    if !(torso > 0.0) || !torso.is_finite() {
        return Err(Error::Scale(format!("sequence {:?} has zero torso length", seq.id)));
    }
    for v in &mut data {
        *v /= torso;
    }
    SkeletonSequence::new(seq.id.clone(), Tensor::new(seq.frames.shape().to_vec(), data)?)
}

/// A sequence with its quality score.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub sequence: SkeletonSequence,
    pub score: f64,
    pub score_range: (f64, f64),
}

impl LabeledSample {
    pub fn new(sequence: SkeletonSequence, score: f64, score_range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = score_range;
        if !(lo <= hi) {
            return Err(Error::Config(format!("score range [{lo}, {hi}] is empty")));
        }
        if !(lo <= score && score <= hi) {
            return Err(Error::Data(format!(
                "score {score} of {:?} outside [{lo}, {hi}]",
                sequence.id
            )));
        }
        Ok(LabeledSample {
            sequence,
            score,
            score_range,
        })
    }

    pub fn id(&self) -> &str {
        &self.sequence.id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize) -> SkeletonSequence {
        let frames = Tensor::from_fn([t, 25, 3], |i| ((i * 7919) % 1000) as f64 / 997.0 - 0.3);
        SkeletonSequence::new("s", frames).unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let mut s = seq(5);
        s.frames.data_mut()[3] = 0.1 + 0.2;
        s.frames.data_mut()[4] = -1e-300;
        write_sequence(&p, &s).unwrap();
        let back = load_sequence(&p, 25).unwrap();
        assert_eq!(back.frames(), s.frames());
        assert_eq!(back.id, "a");
    }

    #[test]
    fn load_shapes_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        std::fs::write(&p, vec!["0.5"; 75].join(",") + "\n").unwrap();
        assert_eq!(load_sequence(&p, 25).unwrap().frame_count(), 1);

        std::fs::write(&p, vec!["0.5"; 74].join(",") + "\n").unwrap();
        let err = load_sequence(&p, 25).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("row 1")), "{err}");

        let mut cells = vec!["0.5"; 75];
        cells[10] = "NaN";
        std::fs::write(&p, cells.join(",") + "\n").unwrap();
        assert!(matches!(load_sequence(&p, 25), Err(Error::Data(_))));
    }

    #[test]
    fn normalization_invariances() {
        let s = seq(6);
        let base = normalize_sequence(&s, NormalizeSpec::default()).unwrap();
        for f in 0..6 {
            assert_eq!(base.point(f, 0), [0.0; 3]);
        }
        let again = normalize_sequence(&base, NormalizeSpec::default()).unwrap();
        assert!(again.frames().max_abs_diff(base.frames()) < 1e-12);

        let shifted = SkeletonSequence::new("s", s.frames().map(|v| v + 5.0)).unwrap();
        let a = normalize_sequence(&shifted, NormalizeSpec::default()).unwrap();
        assert!(a.frames().max_abs_diff(base.frames()) < 1e-12);

        let scaled = SkeletonSequence::new("s", s.frames().map(|v| v * 2.0)).unwrap();
        let b = normalize_sequence(&scaled, NormalizeSpec::default()).unwrap();
        assert!(b.frames().max_abs_diff(base.frames()) < 1e-12);

        let flat = SkeletonSequence::new("z", Tensor::zeros([2, 25, 3])).unwrap();
        assert!(matches!(
            normalize_sequence(&flat, NormalizeSpec::default()),
            Err(Error::Scale(_))
        ));
    }

    #[test]
    fn score_must_lie_in_range() {
        assert!(LabeledSample::new(seq(1), 51.0, (0.0, 50.0)).is_err());
        assert!(LabeledSample::new(seq(1), 50.0, (0.0, 50.0)).is_ok());
    }
}
