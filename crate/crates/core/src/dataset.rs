//! Desk-scale dataset synthesis: speaker-disjoint splits of simulated
//! two-speaker reverberant mixtures with phoneme transcripts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::MultiChannelWave;
use crate::error::{Error, Result};
use crate::room::{sample_scene, synthesize_scene, SceneSpec};
use crate::speech::{generate_utterance, speaker_pool, Speaker, SpeechConfig};
use crate::wav::{read_wav, write_mono, write_wav, WavEncoding};

/// Reference-channel RMS of every stored mixture.
pub const MIXTURE_RMS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn index(&self) -> u64 {
        *self as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Speakers per split (train, valid, test).
    pub speakers: (usize, usize, usize),
    pub sample_rate: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_train: 200, n_valid: 20, n_test: 20, duration_s: 2.0, seed: 0, speakers: (34, 4, 2), sample_rate: 16_000 }
    }
}

impl DatasetConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Valid => self.n_valid,
            Split::Test => self.n_test,
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub mixture_wav: String,
    pub reverb_target_wav: String,
    pub clean_wav: String,
    pub scene: SceneSpec,
    pub target_speaker: String,
    pub interferer_speaker: String,
    pub transcript_labels: Vec<usize>,
    pub num_samples: usize,
}

/// A record with its audio in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: SceneRecord,
    pub mixture: MultiChannelWave,
    /// Reference-channel reverberant target (the enhancement label).
    pub reverb_target: Vec<f64>,
    /// Dry target source at the level used for mixing.
    pub clean: Vec<f64>,
}

impl Sample {
    pub fn reference_mixture(&self) -> Vec<f64> {
        self.mixture.channel_vec(0)
    }
}

/// Where source utterances come from.
pub enum SourceMaterial {
    Synthetic(Vec<Speaker>),
    Corpus(SourceCorpus),
}

/// A directory of mono 16 kHz WAVs, one sub-directory per speaker. A
/// `<stem>.lab` file next to a WAV may hold whitespace-separated label ids.
#[derive(Debug, Clone)]
pub struct SourceCorpus {
    pub speakers: Vec<(String, Vec<PathBuf>)>,
}

impl SourceCorpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut speakers = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            if !files.is_empty() {
                let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
                speakers.insert(name, files);
            }
        }
        Ok(SourceCorpus { speakers: speakers.into_iter().collect() })
    }

    fn utterance(&self, speaker: usize, pick: usize, num_samples: usize, sample_rate: u32) -> Result<(Vec<f64>, Vec<usize>)> {
        let files = &self.speakers[speaker].1;
        let path = &files[pick % files.len()];
        let wave = read_wav(path)?;
        if wave.sample_rate != sample_rate {
            return Err(Error::Data(format!("{} is not {sample_rate} Hz", path.display())));
        }
        let mut x = wave.channel_vec(0);
        x.resize(num_samples, 0.0);
        let lab = path.with_extension("lab");
        let labels = if lab.exists() {
            std::fs::read_to_string(&lab)?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Data(format!("bad label {t} in {}", lab.display()))))
                .collect::<Result<Vec<usize>>>()?
        } else {
            Vec::new()
        };
        Ok((x, labels))
    }
}

fn mix_seed(seed: u64, split: Split, index: usize, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(split.index() << 40 | index as u64);
    rng.gen()
}

/// Speaker index ranges per split for a pool of `total` speakers.
fn split_ranges(config: &DatasetConfig, total: usize) -> Result<[std::ops::Range<usize>; 3]> {
    let (a, b, c) = config.speakers;
    if a < 2 || b < 2 || c < 2 || a + b + c > total {
        return Err(Error::Data(format!(
            "corpus too small for disjoint splits: {total} speakers, need {a}+{b}+{c} with at least 2 each"
        )));
    }
    Ok([0..a, a..a + b, a + b..a + b + c])
}

impl SourceMaterial {
    pub fn synthetic(config: &DatasetConfig) -> Self {
        let (a, b, c) = config.speakers;
        SourceMaterial::Synthetic(speaker_pool(0, a + b + c, config.seed ^ 0x5b5b))
    }

    fn num_speakers(&self) -> usize {
        match self {
            SourceMaterial::Synthetic(s) => s.len(),
            SourceMaterial::Corpus(c) => c.speakers.len(),
        }
    }

    fn speaker_name(&self, i: usize) -> String {
        match self {
            SourceMaterial::Synthetic(s) => format!("spk{:03}", s[i].id),
            SourceMaterial::Corpus(c) => c.speakers[i].0.clone(),
        }
    }

    fn utterance(&self, speaker: usize, num_samples: usize, config: &DatasetConfig, seed: u64) -> Result<(Vec<f64>, Vec<usize>)> {
        match self {
            SourceMaterial::Synthetic(s) => {
                let cfg = SpeechConfig { sample_rate: config.sample_rate, ..SpeechConfig::default() };
                let u = generate_utterance(&s[speaker], config.duration_s, &cfg, seed)?;
                let mut x = u.samples;
                x.resize(num_samples, 0.0);
                Ok((x, u.labels))
            }
            SourceMaterial::Corpus(c) => c.utterance(speaker, seed as usize, num_samples, config.sample_rate),
        }
    }
}

/// Synthesizes one scene of `split`; deterministic in (config.seed, split, index).
pub fn synthesize_sample(config: &DatasetConfig, material: &SourceMaterial, split: Split, index: usize) -> Result<Sample> {
    let ranges = split_ranges(config, material.num_speakers())?;
    let range = ranges[split.index() as usize].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, split, index, 1));
    let t = rng.gen_range(range.clone());
    let mut i = rng.gen_range(range.start..range.end - 1);
    if i >= t {
        i += 1;
    }
    let scene = sample_scene(mix_seed(config.seed, split, index, 2));
    let n = (config.duration_s * config.sample_rate as f64).round() as usize;
    let (target, labels) = material.utterance(t, n, config, rng.gen())?;
    let (interf, _) = material.utterance(i, n, config, rng.gen())?;
    let audio = synthesize_scene(&scene, &target, &interf, config.sample_rate)?;
    let ref_rms = (audio.mixture.channel(0).iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if !(ref_rms > 0.0) {
        return Err(Error::Data("silent mixture".into()));
    }
    let g = MIXTURE_RMS / ref_rms;
    let mixture = MultiChannelWave::new(audio.mixture.samples.mapv(|v| v * g), config.sample_rate)?;
    let reverb_target: Vec<f64> = audio.reverb_target.channel(0).iter().map(|v| v * g).collect();
    let clean: Vec<f64> = target.iter().map(|v| v * g).collect();
    let id = format!("{}-{:05}", split.name(), index);
    let record = SceneRecord {
        mixture_wav: format!("{}/{id}_mix.wav", split.name()),
        reverb_target_wav: format!("{}/{id}_rev.wav", split.name()),
        clean_wav: format!("{}/{id}_cln.wav", split.name()),
        id,
        split,
        scene,
        target_speaker: material.speaker_name(t),
        interferer_speaker: material.speaker_name(i),
        transcript_labels: labels,
        num_samples: n,
    };
    Ok(Sample { record, mixture, reverb_target, clean })
}

/// All scenes of one split, synthesized in parallel; the result does not
/// depend on the number of threads.
pub fn synthesize_split(config: &DatasetConfig, material: &SourceMaterial, split: Split) -> Result<Vec<Sample>> {
    (0..config.count(split))
        .into_par_iter()
        .map(|i| synthesize_sample(config, material, split, i))
        .collect()
}

pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join(format!("{}.jsonl", split.name()))
}

pub fn write_manifest(path: &Path, records: &[SceneRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneRecord>> {
    let f = File::open(path).map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes WAVs and one manifest per split under `root`.
pub fn write_dataset(root: &Path, config: &DatasetConfig, material: &SourceMaterial) -> Result<BTreeMap<Split, Vec<SceneRecord>>> {
    let mut out = BTreeMap::new();
    for split in Split::ALL {
        std::fs::create_dir_all(root.join(split.name()))?;
        let samples = synthesize_split(config, material, split)?;
        for s in &samples {
            write_wav(&root.join(&s.record.mixture_wav), &s.mixture, WavEncoding::Float32)?;
            write_mono(&root.join(&s.record.reverb_target_wav), &s.reverb_target, config.sample_rate)?;
            write_mono(&root.join(&s.record.clean_wav), &s.clean, config.sample_rate)?;
        }
        let records: Vec<SceneRecord> = samples.into_iter().map(|s| s.record).collect();
        write_manifest(&manifest_path(root, split), &records)?;
        out.insert(split, records);
    }
    Ok(out)
}

/// Loads the audio of a manifest record stored under `root`.
pub fn load_sample(root: &Path, record: &SceneRecord) -> Result<Sample> {
    let mixture = read_wav(&root.join(&record.mixture_wav))?;
    if mixture.channels() != record.scene.array.num_mics {
        return Err(Error::Data(format!(
            "{}: {} channels, scene has {} microphones",
            record.id,
            mixture.channels(),
            record.scene.array.num_mics
        )));
    }
    let reverb_target = read_wav(&root.join(&record.reverb_target_wav))?.channel_vec(0);
    let clean = read_wav(&root.join(&record.clean_wav))?.channel_vec(0);
    Ok(Sample { record: record.clone(), mixture, reverb_target, clean })
}

pub fn load_split(root: &Path, split: Split) -> Result<Vec<Sample>> {
    let records = read_manifest(&manifest_path(root, split))?;
    records.par_iter().map(|r| load_sample(root, r)).collect()
}
