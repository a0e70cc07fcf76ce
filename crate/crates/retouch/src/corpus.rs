//! On-disk corpora: a manifest of JSON lines next to an image folder.
//!
//! Two layouts share the scheme. A task corpus stores one image per
//! record; a pair corpus stores three (source, strong render, weak
//! render) plus their tone distances for auditing. Programs are stored
//! as canonical edit text and goals as inline JSON, so both reload
//! exactly. Images go through 8-bit PPM, which quantizes pixel data to
//! file space; margins like the pair threshold are enforced when pairs
//! are built, not re-checked on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchSplit, BenchTask};
use crate::dsl::{parse_program, serialize_program, ParseError};
use crate::goal::GoalDescriptor;
use crate::metrics::oracle_distance;
use crate::perturb::{PairSample, Provenance};
use crate::raster::{load_image, save_image, ImageFormat, RasterError};

pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const IMAGE_DIR_NAME: &str = "images";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("manifest line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest line {line}: bad program: {source}")]
    Program { line: usize, source: ParseError },
    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    id: String,
    image: String,
    program: String,
    goal: GoalDescriptor,
    split: BenchSplit,
}

/// Tone-scale L1 distances recorded when the pair was written, for
/// auditing a corpus without re-rendering it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub weak_strong: f64,
    pub weak_before: f64,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    id: String,
    before: String,
    strong_image: String,
    weak_image: String,
    strong_program: String,
    weak_program: String,
    goal: GoalDescriptor,
    provenance: Provenance,
    distances: PairDistances,
}

fn image_dir(dir: &Path) -> PathBuf {
    dir.join(IMAGE_DIR_NAME)
}

fn read_manifest(dir: &Path) -> Result<String, CorpusError> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(CorpusError::MissingManifest(path));
    }
    Ok(fs::read_to_string(path)?)
}

/// Writes a task corpus: `manifest.jsonl` plus one PPM per task.
pub fn save_tasks(dir: &Path, tasks: &[BenchTask]) -> Result<(), CorpusError> {
    fs::create_dir_all(image_dir(dir))?;
    let mut manifest = String::new();
    for task in tasks {
        let image_rel = format!("{IMAGE_DIR_NAME}/{}.ppm", task.id);
        save_image(&task.before, &dir.join(&image_rel), ImageFormat::Ppm)?;
        let record = TaskRecord {
            id: task.id.clone(),
            image: image_rel,
            program: serialize_program(&task.gt_program),
            goal: task.goal.clone(),
            split: task.split,
        };
        manifest.push_str(&serde_json::to_string(&record).expect("task records serialize"));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

pub fn load_tasks(dir: &Path) -> Result<Vec<BenchTask>, CorpusError> {
    let manifest = read_manifest(dir)?;
    let mut tasks = Vec::new();
    for (idx, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: TaskRecord = serde_json::from_str(line)
            .map_err(|source| CorpusError::Json { line: line_no, source })?;
        let gt_program = parse_program(&record.program)
            .map_err(|source| CorpusError::Program { line: line_no, source })?;
        tasks.push(BenchTask {
            before: load_image(&dir.join(&record.image))?,
            id: record.id,
            gt_program,
            goal: record.goal,
            split: record.split,
        });
    }
    Ok(tasks)
}

/// Writes a pair corpus. Ids are positional (`pair-0000`, ...); each
/// pair stores its source and both renders.
pub fn save_pairs(dir: &Path, pairs: &[PairSample]) -> Result<(), CorpusError> {
    fs::create_dir_all(image_dir(dir))?;
    let mut manifest = String::new();
    for (i, pair) in pairs.iter().enumerate() {
        let id = format!("pair-{i:04}");
        let before_rel = format!("{IMAGE_DIR_NAME}/{id}.before.ppm");
        let strong_rel = format!("{IMAGE_DIR_NAME}/{id}.strong.ppm");
        let weak_rel = format!("{IMAGE_DIR_NAME}/{id}.weak.ppm");
        save_image(&pair.before, &dir.join(&before_rel), ImageFormat::Ppm)?;
        save_image(&pair.strong_img, &dir.join(&strong_rel), ImageFormat::Ppm)?;
        save_image(&pair.weak_img, &dir.join(&weak_rel), ImageFormat::Ppm)?;
        let record = PairRecord {
            id,
            before: before_rel,
            strong_image: strong_rel,
            weak_image: weak_rel,
            strong_program: serialize_program(&pair.strong_program),
            weak_program: serialize_program(&pair.weak_program),
            goal: pair.goal.clone(),
            provenance: pair.provenance,
            distances: PairDistances {
                weak_strong: oracle_distance(&pair.weak_img, &pair.strong_img),
                weak_before: oracle_distance(&pair.weak_img, &pair.before),
            },
        };
        manifest.push_str(&serde_json::to_string(&record).expect("pair records serialize"));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

pub fn load_pairs(dir: &Path) -> Result<Vec<PairSample>, CorpusError> {
    let manifest = read_manifest(dir)?;
    let mut pairs = Vec::new();
    for (idx, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: PairRecord = serde_json::from_str(line)
            .map_err(|source| CorpusError::Json { line: line_no, source })?;
        let parse = |text: &str| {
            parse_program(text).map_err(|source| CorpusError::Program { line: line_no, source })
        };
        pairs.push(PairSample {
            before: load_image(&dir.join(&record.before))?,
            strong_img: load_image(&dir.join(&record.strong_image))?,
            weak_img: load_image(&dir.join(&record.weak_image))?,
            strong_program: parse(&record.strong_program)?,
            weak_program: parse(&record.weak_program)?,
            goal: record.goal,
            provenance: record.provenance,
        });
    }
    Ok(pairs)
}
