//! Synthetic frame-selection tasks and JSONL manifest ingestion.
//!
//! A synthetic video is a `T × P² × D` grid of isotropic Gaussian tokens.
//! Evidence frames add a class signature to every patch, distractor frames
//! add a decoy signature. The attached [`OracleSpec`] records which frames
//! are which, so selection quality is directly observable.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::answerer::OracleSpec;
use crate::encoder::{TokenGrid, VideoTensor};
use crate::rng::{stream, STREAM_DATA};

const STREAM_SIGNATURES: &str = "signatures";
const STREAM_DATA_OOD: &str = "data-ood";

pub const ANSWER_BANK: [&str; 8] = [
    "a dog chases a red ball across the yard",
    "a woman slices bread in the kitchen",
    "two cars race along a wet track",
    "a child plays a song on the piano",
    "a man repairs a flat bicycle tire",
    "birds fly low over a calm lake",
    "a chef pours sauce over fresh pasta",
    "people dance at an outdoor wedding",
];

pub const QUESTION_BANK: [&str; 4] = [
    "what happens at the marked moment?",
    "what is shown when the key event occurs?",
    "describe the important event in this clip.",
    "what activity takes place in the video?",
];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic task config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("missing file {0}")]
    Missing(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            SynthError::Missing(path.to_path_buf())
        } else {
            SynthError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthTaskConfig {
    pub frames: usize,
    pub evidence: usize,
    pub distractors: usize,
    pub feature_dim: usize,
    pub patches: usize,
    /// Length of the signature added to evidence and distractor tokens.
    pub strength: f64,
    /// Rotation of every signature toward its companion direction, degrees.
    pub rotation_deg: f64,
    pub classes: usize,
    pub noise_std: f64,
    pub tau_e: f64,
    pub tau_d: f64,
    /// Attach the class answer bank as options.
    pub multiple_choice: bool,
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            evidence: 2,
            distractors: 4,
            feature_dim: 32,
            patches: 4,
            strength: 4.0,
            rotation_deg: 0.0,
            classes: 4,
            noise_std: 1.0,
            tau_e: 1.0,
            tau_d: 0.1,
            multiple_choice: false,
            seed: 0,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Config(m));
        if self.frames == 0 || self.patches == 0 || self.feature_dim == 0 {
            return fail("frames, patches and feature_dim must be positive".into());
        }
        if self.evidence + self.distractors > self.frames {
            return fail(format!(
                "evidence ({}) + distractors ({}) exceed {} frames",
                self.evidence, self.distractors, self.frames
            ));
        }
        if !(self.strength > 0.0) {
            return fail(format!("strength must be positive, got {}", self.strength));
        }
        if self.noise_std < 0.0 {
            return fail("noise_std must be non-negative".into());
        }
        if self.classes < 2 || self.classes > ANSWER_BANK.len() {
            return fail(format!("classes must lie in 2..={}", ANSWER_BANK.len()));
        }
        if 2 * (self.classes + 1) > self.feature_dim {
            return fail(format!(
                "feature_dim {} too small for {} orthogonal signatures",
                self.feature_dim,
                2 * (self.classes + 1)
            ));
        }
        if !(self.tau_e > 0.0 && self.tau_e <= 1.0) || !(0.0..=1.0).contains(&self.tau_d) {
            return fail("tau_e must lie in (0, 1] and tau_d in [0, 1]".into());
        }
        Ok(())
    }
}

/// Change applied to a task config to build a shifted evaluation split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodShift {
    /// Added to the config's signature rotation.
    pub rotation_deg: f64,
    /// Replacement frame count.
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAInstance {
    pub id: String,
    pub video: VideoTensor,
    pub question: String,
    pub answer: String,
    pub options: Option<Vec<String>>,
    pub oracle: Option<OracleSpec>,
}

impl QAInstance {
    pub fn frames(&self) -> usize {
        self.video.frames()
    }
}

/// Unit signature directions. `class[c]` and `decoy` are the ID directions;
/// `companion[j]` is orthogonal to all of them and defines the rotation
/// plane of signature `j` (classes first, decoy last).
#[derive(Clone, Debug, PartialEq)]
pub struct Signatures {
    pub class: Vec<Vec<f64>>,
    pub decoy: Vec<f64>,
    pub companion: Vec<Vec<f64>>,
}

impl Signatures {
    pub fn new(config: &SynthTaskConfig) -> Self {
        let mut rng = stream(config.seed, STREAM_SIGNATURES, 0);
        let n = config.classes + 1;
        let basis = orthonormal(&mut rng, 2 * n, config.feature_dim);
        let (base, companion) = basis.split_at(n);
        Self {
            class: base[..config.classes].to_vec(),
            decoy: base[config.classes].clone(),
            companion: companion.to_vec(),
        }
    }

    /// Signatures rotated by `deg` within their planes.
    pub fn rotated(&self, deg: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (s, c) = deg.to_radians().sin_cos();
        let turn = |v: &[f64], u: &[f64]| {
            v.iter()
                .zip(u)
                .map(|(a, b)| c * a + s * b)
                .collect::<Vec<_>>()
        };
        let class = self
            .class
            .iter()
            .zip(&self.companion)
            .map(|(v, u)| turn(v, u))
            .collect();
        let decoy = turn(&self.decoy, &self.companion[self.class.len()]);
        (class, decoy)
    }
}

/// Gram–Schmidt on Gaussian draws.
fn orthonormal(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &out {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

/// A seeded synthetic task: fixed signatures plus an instance generator.
#[derive(Clone, Debug)]
pub struct SynthTask {
    pub config: SynthTaskConfig,
    pub signatures: Signatures,
}

impl SynthTask {
    pub fn new(config: SynthTaskConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let signatures = Signatures::new(&config);
        Ok(Self { config, signatures })
    }

    pub fn generate(&self, n: usize) -> Vec<QAInstance> {
        self.generate_from(STREAM_DATA, "synth", n)
    }

    fn generate_from(&self, stream_name: &str, prefix: &str, n: usize) -> Vec<QAInstance> {
        let (class_sig, decoy_sig) = self.signatures.rotated(self.config.rotation_deg);
        (0..n)
            .map(|i| {
                let mut rng = stream(self.config.seed, stream_name, i as u64);
                let id = format!("{prefix}-{}-{i:05}", self.config.seed);
                self.instance(&mut rng, id, &class_sig, &decoy_sig)
            })
            .collect()
    }

    fn instance(
        &self,
        rng: &mut impl Rng,
        id: String,
        class_sig: &[Vec<f64>],
        decoy_sig: &[f64],
    ) -> QAInstance {
        let c = &self.config;
        let class = rng.random_range(0..c.classes);
        let wrong = {
            let k = rng.random_range(0..c.classes - 1);
            if k >= class {
                k + 1
            } else {
                k
            }
        };
        let question = QUESTION_BANK[rng.random_range(0..QUESTION_BANK.len())].to_string();
        let marked = sample(rng, c.frames, c.evidence + c.distractors).into_vec();
        let evidence: BTreeSet<usize> = marked[..c.evidence].iter().copied().collect();
        let distractor: BTreeSet<usize> = marked[c.evidence..].iter().copied().collect();

        let (p, d) = (c.patches, c.feature_dim);
        let mut data = Vec::with_capacity(c.frames * p * d);
        for t in 0..c.frames {
            let sig = if evidence.contains(&t) {
                Some(&class_sig[class][..])
            } else if distractor.contains(&t) {
                Some(decoy_sig)
            } else {
                None
            };
            for _ in 0..p {
                for j in 0..d {
                    let noise: f64 = StandardNormal.sample(rng);
                    let s = sig.map_or(0.0, |s| c.strength * s[j]);
                    data.push((c.noise_std * noise + s) as f32);
                }
            }
        }
        let grid = TokenGrid::new(c.frames, p, d, data).expect("sized by construction");
        let answer = ANSWER_BANK[class].to_string();
        let oracle = OracleSpec {
            evidence,
            distractor,
            correct_answer: answer.clone(),
            wrong_answer: ANSWER_BANK[wrong].to_string(),
            tau_e: c.tau_e,
            tau_d: c.tau_d,
        };
        QAInstance {
            id,
            video: VideoTensor::Tokens(grid),
            question,
            answer,
            options: c.multiple_choice.then(|| {
                ANSWER_BANK[..c.classes]
                    .iter()
                    .map(|s| s.to_string())
                    .collect()
            }),
            oracle: Some(oracle),
        }
    }
}

/// `n` instances of the task described by `config`.
pub fn generate_synth(config: &SynthTaskConfig, n: usize) -> Result<Vec<QAInstance>, SynthError> {
    Ok(SynthTask::new(config.clone())?.generate(n))
}

/// An in-distribution split and a held-out split under `shift`. Signatures
/// are shared; the shifted split rotates them and may change `T`. The two
/// splits draw from disjoint random streams.
pub fn split_ood(
    config: &SynthTaskConfig,
    shift: &OodShift,
    n_id: usize,
    n_ood: usize,
) -> Result<(Vec<QAInstance>, Vec<QAInstance>), SynthError> {
    let id_task = SynthTask::new(config.clone())?;
    let mut shifted = config.clone();
    shifted.rotation_deg += shift.rotation_deg;
    if let Some(t) = shift.frames {
        shifted.frames = t;
    }
    shifted.validate()?;
    let ood_task = SynthTask {
        config: shifted,
        signatures: id_task.signatures.clone(),
    };
    Ok((
        id_task.generate(n_id),
        ood_task.generate_from(STREAM_DATA_OOD, "ood", n_ood),
    ))
}

/// Mean token of frame `t`.
pub fn frame_mean(grid: &TokenGrid, t: usize) -> Vec<f64> {
    let mut acc = vec![0.0; grid.dim];
    for patch in grid.frame(t).chunks(grid.dim) {
        acc.iter_mut()
            .zip(patch)
            .for_each(|(a, &v)| *a += f64::from(v));
    }
    acc.iter_mut().for_each(|a| *a /= grid.patches as f64);
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestOracle {
    pub evidence: Vec<usize>,
    pub distractor: Vec<usize>,
    pub wrong_answer: String,
    pub tau_e: f64,
    pub tau_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub features: Option<String>,
    pub video: Option<String>,
    #[serde(rename = "T")]
    pub frames: usize,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<ManifestOracle>,
}

pub fn shape_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".shape");
    PathBuf::from(s)
}

fn read_shape(path: &Path) -> Result<Vec<usize>, SynthError> {
    let sidecar = shape_path(path);
    let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
    text.split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SynthError::Io {
            path: sidecar.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })
}

fn invalid(line: usize, message: impl Into<String>) -> SynthError {
    SynthError::Invalid {
        line,
        message: message.into(),
    }
}

fn load_video(base: &Path, entry: &ManifestEntry, line: usize) -> Result<VideoTensor, SynthError> {
    match (&entry.features, &entry.video) {
        (Some(rel), None) => {
            let path = base.join(rel);
            let shape = read_shape(&path)?;
            let [t, p, d] = shape[..] else {
                return Err(invalid(
                    line,
                    format!("{rel}: shape sidecar must hold T P2 D"),
                ));
            };
            if t != entry.frames {
                return Err(invalid(
                    line,
                    format!("manifest T={} but {rel} holds {t} frames", entry.frames),
                ));
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if bytes.len() != t * p * d * 4 {
                return Err(invalid(
                    line,
                    format!("{rel}: {} bytes for shape {t}x{p}x{d}", bytes.len()),
                ));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let grid = TokenGrid::new(t, p, d, data).map_err(|e| invalid(line, e.to_string()))?;
            Ok(VideoTensor::Tokens(grid))
        }
        (None, Some(rel)) => {
            let path = base.join(rel);
            let shape = read_shape(&path)?;
            let [t, h, w, c] = shape[..] else {
                return Err(invalid(
                    line,
                    format!("{rel}: shape sidecar must hold T H W C"),
                ));
            };
            if t != entry.frames {
                return Err(invalid(
                    line,
                    format!("manifest T={} but {rel} holds {t} frames", entry.frames),
                ));
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let data = bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
            VideoTensor::pixels(t, h, w, c, data).map_err(|e| invalid(line, format!("{rel}: {e}")))
        }
        _ => Err(invalid(
            line,
            "exactly one of `features` and `video` must be set",
        )),
    }
}

/// Reads a JSONL manifest; relative media paths resolve against the
/// manifest's directory. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<QAInstance>, SynthError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            line: n,
            message: e.to_string(),
        })?;
        if entry.answer.is_empty() {
            return Err(invalid(n, "answer must be non-empty"));
        }
        let video = load_video(base, &entry, n)?;
        let oracle = entry
            .oracle
            .map(|o| {
                let spec = OracleSpec {
                    evidence: o.evidence.into_iter().collect(),
                    distractor: o.distractor.into_iter().collect(),
                    correct_answer: entry.answer.clone(),
                    wrong_answer: o.wrong_answer,
                    tau_e: o.tau_e,
                    tau_d: o.tau_d,
                };
                spec.validate().map_err(|m| invalid(n, m))?;
                if let Some(&bad) = spec
                    .evidence
                    .iter()
                    .chain(&spec.distractor)
                    .find(|&&i| i >= entry.frames)
                {
                    return Err(invalid(
                        n,
                        format!("oracle frame {bad} outside T={}", entry.frames),
                    ));
                }
                Ok(spec)
            })
            .transpose()?;
        out.push(QAInstance {
            id: entry.id,
            video,
            question: entry.question,
            answer: entry.answer,
            options: entry.options,
            oracle,
        });
    }
    Ok(out)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Writes `manifest.jsonl` plus one media file (and `.shape` sidecar) per
/// instance under `dir`. Token grids go to `features/<id>.f32`; pixel videos
/// are quantized to bytes in `video/<id>.rgb`. Returns the manifest path.
pub fn write_manifest(dir: &Path, instances: &[QAInstance]) -> Result<PathBuf, SynthError> {
    for sub in ["features", "video"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let manifest = dir.join("manifest.jsonl");
    let mut lines = Vec::new();
    for inst in instances {
        let stem = file_stem(&inst.id);
        let (features, video) = match &inst.video {
            VideoTensor::Tokens(g) => {
                let rel = format!("features/{stem}.f32");
                let bytes: Vec<u8> = g.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                write_file(&dir.join(&rel), &bytes)?;
                let shape = format!("{} {} {}\n", g.frames, g.patches, g.dim);
                write_file(&shape_path(&dir.join(&rel)), shape.as_bytes())?;
                (Some(rel), None)
            }
            VideoTensor::Pixels {
                frames,
                height,
                width,
                channels,
                data,
            } => {
                let rel = format!("video/{stem}.rgb");
                let bytes: Vec<u8> = data
                    .iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                write_file(&dir.join(&rel), &bytes)?;
                let shape = format!("{frames} {height} {width} {channels}\n");
                write_file(&shape_path(&dir.join(&rel)), shape.as_bytes())?;
                (None, Some(rel))
            }
        };
        let entry = ManifestEntry {
            id: inst.id.clone(),
            features,
            video,
            frames: inst.frames(),
            question: inst.question.clone(),
            answer: inst.answer.clone(),
            options: inst.options.clone(),
            oracle: inst.oracle.as_ref().map(|o| ManifestOracle {
                evidence: o.evidence.iter().copied().collect(),
                distractor: o.distractor.iter().copied().collect(),
                wrong_answer: o.wrong_answer.clone(),
                tau_e: o.tau_e,
                tau_d: o.tau_d,
            }),
        };
        lines.push(serde_json::to_string(&entry).expect("manifest entries serialize"));
    }
    let mut f = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    for l in lines {
        writeln!(f, "{l}").map_err(io_err(&manifest))?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn grid(inst: &QAInstance) -> &TokenGrid {
        match &inst.video {
            VideoTensor::Tokens(g) => g,
            VideoTensor::Pixels { .. } => panic!("synthetic videos are token grids"),
        }
    }

    fn class_of(inst: &QAInstance) -> usize {
        ANSWER_BANK.iter().position(|a| *a == inst.answer).unwrap()
    }

    #[test]
    fn empty_and_deterministic() {
        let cfg = SynthTaskConfig::default();
        assert!(generate_synth(&cfg, 0).unwrap().is_empty());
        let a = generate_synth(&cfg, 5).unwrap();
        let b = generate_synth(&cfg, 5).unwrap();
        assert_eq!(a, b);
        let bits = |v: &[QAInstance]| -> Vec<u32> {
            v.iter()
                .flat_map(|i| grid(i).data.iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let other = generate_synth(&SynthTaskConfig { seed: 1, ..cfg }, 5).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn oracle_indices_in_range_and_disjoint() {
        let cfg = SynthTaskConfig::default();
        for inst in generate_synth(&cfg, 50).unwrap() {
            let o = inst.oracle.as_ref().unwrap();
            assert_eq!(o.evidence.len(), 2);
            assert_eq!(o.distractor.len(), 4);
            assert!(o.evidence.iter().chain(&o.distractor).all(|&i| i < 32));
            assert!(o.validate().is_ok());
            assert_ne!(o.correct_answer, o.wrong_answer);
            assert!(!inst.answer.is_empty());
        }
    }

    #[test]
    fn signatures_are_orthonormal() {
        let s = Signatures::new(&SynthTaskConfig::default());
        let all: Vec<&Vec<f64>> = s
            .class
            .iter()
            .chain([&s.decoy])
            .chain(&s.companion)
            .collect();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evidence_frames_carry_the_class_signature() {
        let cfg = SynthTaskConfig::default();
        let task = SynthTask::new(cfg.clone()).unwrap();
        let instances = task.generate(400);
        let (mut ev, mut bg) = (Vec::new(), Vec::new());
        for inst in &instances {
            let g = grid(inst);
            let sig = &task.signatures.class[class_of(inst)];
            let o = inst.oracle.as_ref().unwrap();
            for t in 0..g.frames {
                let v = dot(&frame_mean(g, t), sig);
                if o.evidence.contains(&t) {
                    ev.push(v);
                } else if !o.distractor.contains(&t) {
                    bg.push(v);
                }
            }
        }
        assert!(ev.len() + bg.len() >= 10_000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // per-frame projection noise: σ / √P
        let sigma = cfg.noise_std / (cfg.patches as f64).sqrt();
        let margin = mean(&ev) - mean(&bg);
        assert!(margin >= cfg.strength - 3.0 * sigma, "{margin}");
        assert!((margin - cfg.strength).abs() < 0.1, "{margin}");
    }

    #[test]
    fn zero_shift_matches_id_statistics() {
        let cfg = SynthTaskConfig::default();
        let (id, ood) = split_ood(&cfg, &OodShift::default(), 200, 200).unwrap();
        assert_eq!((id.len(), ood.len()), (200, 200));
        let task = SynthTask::new(cfg.clone()).unwrap();
        let proj = |v: &[QAInstance]| -> Vec<f64> {
            v.iter()
                .flat_map(|inst| {
                    let sig = task.signatures.class[class_of(inst)].clone();
                    let g = grid(inst).clone();
                    inst.oracle
                        .as_ref()
                        .unwrap()
                        .evidence
                        .iter()
                        .map(move |&t| dot(&frame_mean(&g, t), &sig))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let (a, b) = (proj(&id), proj(&ood));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let z =
            (mean(&a) - mean(&b)) / (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn right_angle_rotation_hides_evidence_from_id_signature() {
        let cfg = SynthTaskConfig::default();
        let shift = OodShift {
            rotation_deg: 90.0,
            frames: None,
        };
        let task = SynthTask::new(cfg.clone()).unwrap();
        let (_, ood) = split_ood(&cfg, &shift, 0, 300).unwrap();
        let (mut ev, mut bg) = (Vec::new(), Vec::new());
        for inst in &ood {
            let g = grid(inst);
            let sig = &task.signatures.class[class_of(inst)];
            let o = inst.oracle.as_ref().unwrap();
            for t in 0..g.frames {
                let v = dot(&frame_mean(g, t), sig);
                if o.evidence.contains(&t) {
                    ev.push(v);
                } else if !o.distractor.contains(&t) {
                    bg.push(v);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = 0.5 * (1.0 / ev.len() as f64 + 1.0 / bg.len() as f64).sqrt();
        assert!((mean(&ev) - mean(&bg)).abs() < 4.0 * se);
    }

    #[test]
    fn shift_can_change_frame_count() {
        let cfg = SynthTaskConfig::default();
        let shift = OodShift {
            rotation_deg: 0.0,
            frames: Some(48),
        };
        let (id, ood) = split_ood(&cfg, &shift, 3, 4).unwrap();
        assert!(id.iter().all(|i| i.frames() == 32));
        assert!(ood.iter().all(|i| i.frames() == 48));
        assert_eq!(ood.len(), 4);
    }

    #[test]
    fn config_validation() {
        let ok = SynthTaskConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SynthTaskConfig {
                evidence: 30,
                ..ok.clone()
            },
            SynthTaskConfig {
                strength: 0.0,
                ..ok.clone()
            },
            SynthTaskConfig {
                classes: 1,
                ..ok.clone()
            },
            SynthTaskConfig {
                feature_dim: 8,
                ..ok.clone()
            },
            SynthTaskConfig {
                tau_d: 1.5,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn multiple_choice_attaches_options() {
        let cfg = SynthTaskConfig {
            multiple_choice: true,
            ..SynthTaskConfig::default()
        };
        let inst = &generate_synth(&cfg, 1).unwrap()[0];
        let opts = inst.options.as_ref().unwrap();
        assert_eq!(opts.len(), 4);
        assert!(opts.contains(&inst.answer));
    }
}
