//! Corpus directories: `manifest.json` plus `samples/<id>.{motion,audio,json}`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cogesture::corpus::{Corpus, CorpusConfig, CorpusSample, SampleMeta};
use cogesture::motion::{load_audio, load_motion, save_audio, save_motion};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "cogesture-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: CorpusConfig,
    pub splits: Splits,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> cogesture::Error + '_ {
    move |e| cogesture::Error::io(path, e)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))?;
    Ok(())
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(io_err(path))?)
}

fn sample_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join("samples").join(format!("{id}.{ext}"))
}

fn ids(samples: &[CorpusSample]) -> Vec<String> {
    samples.iter().map(|s| s.id.clone()).collect()
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Manifest> {
    create_dir(&dir.join("samples"))?;
    for s in corpus.all() {
        save_motion(&s.motion, &sample_path(dir, &s.id, "motion"))?;
        save_audio(&s.audio, &sample_path(dir, &s.id, "audio"))?;
        let meta = serde_json::to_string_pretty(&s.meta())?;
        write(&sample_path(dir, &s.id, "json"), meta + "\n")?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        config: corpus.config.clone(),
        splits: Splits {
            train: ids(&corpus.train),
            validation: ids(&corpus.validation),
            test: ids(&corpus.test),
        },
    };
    write(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn read_sample(dir: &Path, id: &str) -> Result<CorpusSample> {
    let meta_path = sample_path(dir, id, "json");
    let meta: SampleMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| cogesture::Error::Config(format!("{}: {e}", meta_path.display())))?;
    if meta.id != id {
        bail!(cogesture::Error::Config(format!("{} describes sample {}", meta_path.display(), meta.id)));
    }
    Ok(CorpusSample {
        id: meta.id,
        audio: load_audio(&sample_path(dir, id, "audio"))?,
        motion: load_motion(&sample_path(dir, id, "motion"))?,
        emotion: meta.emotion,
        speaker: meta.speaker,
        beat_frames: meta.beat_frames,
        seed: meta.seed,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let m: Manifest = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| cogesture::Error::Config(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT || m.version != 1 {
        bail!(cogesture::Error::Config(format!("{} is not a version 1 corpus manifest", path.display())));
    }
    Ok(m)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let m = read_manifest(dir)?;
    let load = |ids: &[String]| -> Result<Vec<CorpusSample>> {
        ids.iter()
            .map(|id| read_sample(dir, id).with_context(|| format!("reading sample {id}")))
            .collect()
    };
    let corpus = Corpus {
        train: load(&m.splits.train)?,
        validation: load(&m.splits.validation)?,
        test: load(&m.splits.test)?,
        config: m.config,
    };
    for s in corpus.all() {
        if s.emotion >= corpus.config.emotion_count || s.speaker >= corpus.config.speaker_count {
            bail!(cogesture::Error::Config(format!("sample {} has labels outside the corpus configuration", s.id)));
        }
    }
    Ok(corpus)
}
