//! Run directories: staged writes, manifests read back from disk, and
//! spectrogram images.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use morphtraj::eval::parallel_map;
use morphtraj::features::export::GrayImage;
use morphtraj::{load_wav, log_mel, AudioClip, LengthPolicy, PreparedPair, StftConfig, TrajectoryManifest};
use tempfile::TempDir;

pub const STRIP_SEPARATOR_PX: usize = 2;

/// Output directory built beside its destination and moved into place only
/// on [`Staging::commit`]. Dropping it uncommitted deletes everything.
#[derive(Debug)]
pub struct Staging {
    dir: TempDir,
    dest: PathBuf,
}

impl Staging {
    /// Refuses to replace an existing directory unless it is empty or holds a
    /// previous run (has `run.json`).
    pub fn new(dest: &Path) -> Result<Self> {
        if dest.exists() {
            if !dest.is_dir() {
                bail!("output path {} exists and is not a directory", dest.display());
            }
            let empty = std::fs::read_dir(dest)?.next().is_none();
            if !empty && !dest.join("run.json").is_file() {
                bail!("output directory {} is not empty and holds no previous run", dest.display());
            }
        }
        let parent = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".morphtraj-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn commit(self) -> Result<()> {
        if self.dest.exists() {
            std::fs::remove_dir_all(&self.dest).with_context(|| format!("replacing {}", self.dest.display()))?;
        }
        let staged = self.dir.keep();
        if let Err(e) = std::fs::rename(&staged, &self.dest) {
            let _ = std::fs::remove_dir_all(&staged);
            return Err(e).with_context(|| format!("moving outputs to {}", self.dest.display()));
        }
        Ok(())
    }
}

/// Replaces `path` in one step so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// A trajectory read back from its manifest.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: TrajectoryManifest,
    pub clips: Vec<AudioClip>,
    pub originals: PreparedPair,
    /// Feature settings from a sibling `run.json`, when there is one.
    pub stft: Option<StftConfig>,
}

impl LoadedRun {
    /// Accepts a manifest file or the directory holding `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let dir = file.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let text = std::fs::read_to_string(&file).with_context(|| format!("reading manifest {}", file.display()))?;
        let manifest: TrajectoryManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", file.display()))?;
        let wav = |rel: &String| load_wav(dir.join(rel)).with_context(|| format!("loading {}", dir.join(rel).display()));
        let clips = manifest.clip_files.iter().map(wav).collect::<Result<Vec<_>>>()?;
        let [src, tgt] = manifest.original_files.as_slice() else {
            bail!("manifest {} lists {} originals, expected 2", file.display(), manifest.original_files.len());
        };
        let originals = PreparedPair::new(&wav(src)?, &wav(tgt)?, LengthPolicy::PadShorter)?;
        let stft = match std::fs::read_to_string(dir.join("run.json")) {
            Ok(run) => {
                let v: serde_json::Value = serde_json::from_str(&run).context("parsing run.json")?;
                Some(serde_json::from_value(v["stft"].clone()).context("reading stft settings from run.json")?)
            }
            Err(_) => None,
        };
        Ok(Self {
            dir,
            manifest,
            clips,
            originals,
            stft,
        })
    }

    /// Directory name, used as the row label in reports.
    pub fn label(&self) -> String {
        std::fs::canonicalize(&self.dir)
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "trajectory".into())
    }
}

/// Every WAV directly inside `dir`, in file-name order.
pub fn load_clip_dir(dir: &Path) -> Result<Vec<AudioClip>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .wav files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let clip = load_wav(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(morphtraj::resample(&clip, morphtraj::CANONICAL_RATE)?)
        })
        .collect()
}

/// One log-mel image per clip.
pub fn spectrogram_tiles(clips: &[AudioClip], cfg: &StftConfig) -> Result<Vec<GrayImage>> {
    Ok(parallel_map(clips, |c| Ok(GrayImage::from_spectrogram(log_mel(c, cfg)?.values())))?)
}

/// Writes `plots/NN.pgm` per tile and `plots/strip.pgm` under `dir`.
pub fn write_plots(tiles: &[GrayImage], dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = dir.join("plots");
    let width = tiles.len().saturating_sub(1).to_string().len().max(2);
    let mut written = Vec::with_capacity(tiles.len() + 1);
    for (i, tile) in tiles.iter().enumerate() {
        let path = plots.join(format!("{i:0width$}.pgm"));
        write_atomic(&path, &tile.to_pgm())?;
        written.push(path);
    }
    let strip = plots.join("strip.pgm");
    write_atomic(&strip, &GrayImage::hstack(tiles, STRIP_SEPARATOR_PX).to_pgm())?;
    written.push(strip);
    Ok(written)
}
