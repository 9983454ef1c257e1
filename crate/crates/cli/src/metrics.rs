//! Distances and embedding extractors named by setting strings.
//!
//! Built-ins are `lmd`, `mel-mean` and `mel-mean-std`. Anything else must be
//! `cmd:<program> <args>` with `{a}` (and for distances `{b}`) standing for
//! the WAV paths handed to the program.

use anyhow::{bail, Result};
use morphtraj::eval::{ExternalCommandDistance, ExternalCommandExtractor};
use morphtraj::{EmbeddingExtractor, Lmd, MelStats, PerceptualDistance, Pooling, StftConfig};

pub const DEFAULT_DISTANCE: &str = "lmd";
pub const DEFAULT_FAD_EXTRACTOR: &str = "mel-mean-std";
pub const DEFAULT_FID_EXTRACTOR: &str = "mel-mean";

pub fn distance(setting: &str, cfg: StftConfig) -> Result<Box<dyn PerceptualDistance>> {
    let setting = setting.trim();
    if let Some(line) = setting.strip_prefix("cmd:") {
        return Ok(Box::new(ExternalCommandDistance::from_command_line(line)?));
    }
    match setting {
        "lmd" => Ok(Box::new(Lmd::new(cfg))),
        other => bail!("unknown distance {other:?} (expected lmd or cmd:<command>)"),
    }
}

pub fn extractor(setting: &str, cfg: StftConfig) -> Result<Box<dyn EmbeddingExtractor>> {
    let setting = setting.trim();
    if let Some(line) = setting.strip_prefix("cmd:") {
        return Ok(Box::new(ExternalCommandExtractor::from_command_line(line)?));
    }
    match setting {
        "mel-mean" => Ok(Box::new(MelStats::new(cfg, Pooling::Mean))),
        "mel-mean-std" => Ok(Box::new(MelStats::new(cfg, Pooling::MeanStd))),
        other => bail!("unknown extractor {other:?} (expected mel-mean, mel-mean-std or cmd:<command>)"),
    }
}
