use std::fs::File;
use std::io::{Read, Seek, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::plan::{generate_sweep, SweepPlan};
use crate::channel::Position;

pub const RECORDING_SCHEMA: u32 = 1;
pub const RECORDING_MEMBER: &str = "recording.json";
pub const LOG_MEMBER: &str = "log.txt";

#[derive(Debug, thiserror::Error)]
pub enum RecordingError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt archive: {0}")]
    Archive(String),
    #[error("{0} absent")]
    MissingMember(&'static str),
    #[error("malformed {RECORDING_MEMBER} at {pointer}: {message}")]
    Json { pointer: String, message: String },
    #[error("inconsistent recording: {0}")]
    Invalid(String),
}

impl From<zip::result::ZipError> for RecordingError {
    fn from(e: zip::result::ZipError) -> Self {
        match e {
            zip::result::ZipError::Io(io) => RecordingError::Io(io),
            other => RecordingError::Archive(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub d_m: f64,
    /// Seconds since collection at this position started.
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub plan: SweepPlan,
    /// Device under test, mounted on the positioner.
    pub device: String,
    #[serde(default)]
    pub remote_device: Option<String>,
    pub environment: String,
    pub true_distance_m: f64,
    pub source: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// False while a campaign is still running or was aborted.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    #[serde(flatten)]
    pub position: Position,
    pub samples: Vec<Sample>,
}

/// Campaign output: settings plus the samples of every position, in sweep
/// order. An incomplete recording holds a prefix of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recording {
    pub schema: u32,
    pub settings: Settings,
    pub data: Vec<PositionRecord>,
    /// Free-form log stored as a separate archive member.
    #[serde(skip)]
    pub extras: Option<String>,
}

impl Recording {
    pub fn new(settings: Settings) -> Self {
        Self {
            schema: RECORDING_SCHEMA,
            settings,
            data: Vec::new(),
            extras: None,
        }
    }

    pub fn plan(&self) -> &SweepPlan {
        &self.settings.plan
    }

    pub fn is_complete(&self) -> bool {
        self.settings.complete
    }

    pub fn sample_count(&self) -> usize {
        self.data.iter().map(|p| p.samples.len()).sum()
    }

    pub fn samples_at(&self, pos: Position) -> Option<&[Sample]> {
        self.data.iter().find(|r| r.position == pos).map(|r| r.samples.as_slice())
    }

    /// Data positions follow the sweep; complete recordings cover all of it.
    pub fn validate(&self) -> Result<(), RecordingError> {
        if self.schema != RECORDING_SCHEMA {
            return Err(RecordingError::Invalid(format!("unsupported schema {}", self.schema)));
        }
        let sweep = generate_sweep(&self.settings.plan).map_err(|e| RecordingError::Invalid(e.to_string()))?;
        if self.data.len() > sweep.len() {
            return Err(RecordingError::Invalid(format!(
                "{} positions recorded, plan has {}",
                self.data.len(),
                sweep.len()
            )));
        }
        if self.settings.complete && self.data.len() != sweep.len() {
            return Err(RecordingError::Invalid(format!(
                "marked complete with {} of {} positions",
                self.data.len(),
                sweep.len()
            )));
        }
        for (i, (rec, expected)) in self.data.iter().zip(&sweep).enumerate() {
            if rec.position != *expected {
                return Err(RecordingError::Invalid(format!(
                    "position {i} is {} but the sweep expects {expected}",
                    rec.position
                )));
            }
            if rec.samples.len() > self.settings.plan.samples_per_position as usize {
                return Err(RecordingError::Invalid(format!("position {i} holds more samples than planned")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("recording serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RecordingError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let rec: Recording = serde_path_to_error::deserialize(de).map_err(|e| RecordingError::Json {
            pointer: crate::json_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        rec.validate()?;
        Ok(rec)
    }

    /// Write the archive. Member timestamps are fixed so that equal
    /// recordings produce equal bytes.
    pub fn write_zip<W: Write + Seek>(&self, w: W) -> Result<W, RecordingError> {
        let mut zip = ZipWriter::new(w);
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .last_modified_time(DateTime::default());
        zip.start_file(RECORDING_MEMBER, opts)?;
        zip.write_all(self.to_json().as_bytes())?;
        if let Some(log) = &self.extras {
            zip.start_file(LOG_MEMBER, opts)?;
            zip.write_all(log.as_bytes())?;
        }
        Ok(zip.finish()?)
    }

    pub fn read_zip<R: Read + Seek>(r: R) -> Result<Self, RecordingError> {
        let mut zip = ZipArchive::new(r)?;
        let mut text = String::new();
        match zip.by_name(RECORDING_MEMBER) {
            Ok(mut f) => {
                f.read_to_string(&mut text)?;
            }
            Err(zip::result::ZipError::FileNotFound) => return Err(RecordingError::MissingMember(RECORDING_MEMBER)),
            Err(e) => return Err(e.into()),
        }
        let mut rec = Recording::from_json(&text)?;
        rec.extras = match zip.by_name(LOG_MEMBER) {
            Ok(mut f) => {
                let mut log = String::new();
                f.read_to_string(&mut log)?;
                Some(log)
            }
            Err(zip::result::ZipError::FileNotFound) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(rec)
    }
}

/// Save atomically: write a sibling temp file, then rename over `path`.
pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<(), RecordingError> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let file = File::create(&tmp)?;
    let file = rec.write_zip(file)?;
    file.sync_all()?;
    drop(file);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording, RecordingError> {
    Recording::read_zip(File::open(path)?)
}
