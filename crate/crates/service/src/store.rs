//! Append-only flat-file store.
//!
//! Layout under the root directory:
//!
//! ```text
//! manifest.json          sealed segments with record counts and sha256
//! messages/000001.jsonl  message batches, rolled over by size
//! labels.jsonl           label tasks, judgments and imported labels
//! models.jsonl           model publications
//! models/<version>.json  model artifacts
//! contexts.jsonl         saved user contexts
//! alerts.jsonl           alert batches
//! drift.jsonl            drift audit log
//! ```
//!
//! Every journal line is one self-contained transaction. A line without its
//! trailing newline is a torn write and is cut off when the store opens, so
//! a crash between appends leaves each journal at a clean prefix.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use epiwatch_core::classifier::Classifier;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::events::{AlertEvent, ContextEvent, LabelEvent, MessageBatch, ModelEvent};
use crate::state::State;
use epiwatch_core::drift::DriftReport;

pub const STORE_FORMAT: &str = "epiwatch-store";
pub const STORE_VERSION: u32 = 1;
/// Default size at which the current message segment is sealed.
pub const DEFAULT_SEGMENT_BYTES: u64 = 8 << 20;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads complete lines of `path`. Returns the parsed records and the byte
/// length of the clean prefix; a torn tail is not included.
fn read_records<E: DeserializeOwned>(path: &Path) -> Result<(Vec<E>, u64)> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    }
    let clean = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let mut out = Vec::new();
    for (i, line) in bytes[..clean].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_slice(line).map_err(|e| ServiceError::Corrupt {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok((out, clean as u64))
}

/// Test hook: the append after the countdown reaches zero writes half its
/// bytes and fails, as a crash mid-write would.
#[derive(Debug, Clone, Default)]
pub struct FaultInjector(Arc<AtomicI64>);

impl FaultInjector {
    pub fn disarmed() -> Self {
        Self(Arc::new(AtomicI64::new(-1)))
    }

    /// Fails the `n`-th append from now (0 = the next one).
    pub fn fail_after(&self, n: u32) {
        self.0.store(i64::from(n), Ordering::SeqCst);
    }

    fn should_fail(&self) -> bool {
        let prev = self.0.load(Ordering::SeqCst);
        if prev < 0 {
            return false;
        }
        self.0.store(prev - 1, Ordering::SeqCst);
        prev == 0
    }
}

/// One append-only JSON-lines file.
#[derive(Debug)]
pub struct Journal<E> {
    path: PathBuf,
    file: File,
    records: u64,
    bytes: u64,
    fault: FaultInjector,
    /// Set after a failed append may have left partial bytes behind.
    torn: bool,
    _event: PhantomData<E>,
}

impl<E: Serialize + DeserializeOwned> Journal<E> {
    /// Opens for appending, cutting off a torn tail. Returns the records
    /// already present.
    pub fn open(path: impl Into<PathBuf>, fault: FaultInjector) -> Result<(Self, Vec<E>)> {
        let path = path.into();
        let (records, clean) = read_records::<E>(&path)?;
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        if file.metadata()?.len() != clean {
            tracing::warn!(path = %path.display(), "truncating torn journal tail");
            file.set_len(clean)?;
            file.sync_all()?;
        }
        Ok((
            Self {
                path,
                file,
                records: records.len() as u64,
                bytes: clean,
                fault,
                torn: false,
                _event: PhantomData,
            },
            records,
        ))
    }

    /// Writes one record and syncs it to disk before returning.
    pub fn append(&mut self, e: &E) -> Result<()> {
        let mut line = serde_json::to_vec(e)?;
        line.push(b'\n');
        if self.torn {
            self.file.set_len(self.bytes)?;
            self.torn = false;
        }
        if self.fault.should_fail() {
            self.torn = true;
            self.file.write_all(&line[..line.len() / 2])?;
            self.file.sync_data()?;
            return Err(ServiceError::Io(std::io::Error::other("injected write failure")));
        }
        if let Err(err) = self.file.write_all(&line).and_then(|_| self.file.sync_data()) {
            // drop whatever part of the line reached the file
            self.torn = self.file.set_len(self.bytes).is_err();
            return Err(err.into());
        }
        self.records += 1;
        self.bytes += line.len() as u64;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub name: String,
    pub records: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub sealed_segments: Vec<SegmentInfo>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            sealed_segments: Vec::new(),
        }
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // make the rename itself durable
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn read_manifest(root: &Path) -> Result<Option<Manifest>> {
    let path = root.join("manifest.json");
    match fs::read(&path) {
        Ok(b) => {
            let m: Manifest = serde_json::from_slice(&b).map_err(|e| ServiceError::Corrupt {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            if m.format != STORE_FORMAT || m.version != STORE_VERSION {
                return Err(ServiceError::Corrupt {
                    path: path.display().to_string(),
                    detail: format!("unsupported store {} v{}", m.format, m.version),
                });
            }
            Ok(Some(m))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn segment_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".jsonl") && n[..n.len() - 6].chars().all(|c| c.is_ascii_digit()))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    names.sort();
    Ok(names)
}

fn segment_name(n: usize) -> String {
    format!("{n:06}.jsonl")
}

/// Reads sealed segments (verifying them against the manifest) and the
/// records of the open segment.
fn read_segments(root: &Path, manifest: &Manifest) -> Result<(Vec<MessageBatch>, Vec<SegmentInfo>)> {
    let dir = root.join("messages");
    let names = segment_names(&dir)?;
    let mut batches = Vec::new();
    let mut sealed = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let path = dir.join(name);
        let is_last = i + 1 == names.len();
        if let Some(info) = manifest.sealed_segments.iter().find(|s| &s.name == name) {
            let bytes = fs::read(&path)?;
            if sha256_hex(&bytes) != info.sha256 {
                return Err(ServiceError::Corrupt {
                    path: path.display().to_string(),
                    detail: "sealed segment does not match the manifest".into(),
                });
            }
            sealed.push(info.clone());
        } else if !is_last {
            // sealed but the manifest update was lost; reseal on open
            let bytes = fs::read(&path)?;
            let (recs, _) = read_records::<MessageBatch>(&path)?;
            sealed.push(SegmentInfo {
                name: name.clone(),
                records: recs.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let (recs, _) = read_records::<MessageBatch>(&path)?;
        batches.extend(recs);
    }
    if let Some(missing) = manifest.sealed_segments.iter().find(|s| !names.contains(&s.name)) {
        return Err(ServiceError::Corrupt {
            path: dir.join(&missing.name).display().to_string(),
            detail: "segment listed in the manifest is missing".into(),
        });
    }
    Ok((batches, sealed))
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub segment_bytes: u64,
    pub fault: FaultInjector,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            fault: FaultInjector::disarmed(),
        }
    }
}

/// Writer side of the store. One instance per directory.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    // held for the lifetime of the writer; the OS drops it if the process dies
    _lock: File,
    opts: StoreOptions,
    manifest: Manifest,
    segment: Journal<MessageBatch>,
    segment_index: usize,
    labels: Journal<LabelEvent>,
    models: Journal<ModelEvent>,
    contexts: Journal<ContextEvent>,
    alerts: Journal<AlertEvent>,
    drift: Journal<DriftReport>,
}

/// Rebuilds state from the journals without modifying anything on disk.
pub fn replay(root: &Path) -> Result<State> {
    let manifest = read_manifest(root)?.unwrap_or_default();
    let (batches, _) = read_segments(root, &manifest)?;
    let mut st = State::default();
    for b in batches {
        st.apply_messages(b);
    }
    for e in read_records::<LabelEvent>(&root.join("labels.jsonl"))?.0 {
        st.apply_label(e)?;
    }
    for e in read_records::<ModelEvent>(&root.join("models.jsonl"))?.0 {
        st.apply_model(e);
    }
    for e in read_records::<ContextEvent>(&root.join("contexts.jsonl"))?.0 {
        st.apply_context(e);
    }
    for e in read_records::<AlertEvent>(&root.join("alerts.jsonl"))?.0 {
        st.apply_alerts(e);
    }
    for r in read_records::<DriftReport>(&root.join("drift.jsonl"))?.0 {
        st.apply_drift(r);
    }
    Ok(st)
}

impl Store {
    /// Opens or creates the store, repairing torn tails, and returns the
    /// replayed state.
    pub fn open(root: impl Into<PathBuf>, opts: StoreOptions) -> Result<(Self, State)> {
        let root = root.into();
        fs::create_dir_all(root.join("messages"))?;
        fs::create_dir_all(root.join("models"))?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(root.join("LOCK"))?;
        if lock.try_lock().is_err() {
            return Err(ServiceError::Locked(root.display().to_string()));
        }
        let mut manifest = read_manifest(&root)?.unwrap_or_default();
        let (_, sealed) = read_segments(&root, &manifest)?;
        manifest.sealed_segments = sealed;
        let names = segment_names(&root.join("messages"))?;
        let open_name = match names.last() {
            Some(n) if !manifest.sealed_segments.iter().any(|s| &s.name == n) => n.clone(),
            _ => segment_name(names.len() + 1),
        };
        let segment_index = names.iter().position(|n| n == &open_name).map_or(names.len() + 1, |p| p + 1);
        let (segment, _) = Journal::open(root.join("messages").join(&open_name), opts.fault.clone())?;
        let (labels, _) = Journal::open(root.join("labels.jsonl"), opts.fault.clone())?;
        let (models, _) = Journal::open(root.join("models.jsonl"), opts.fault.clone())?;
        let (contexts, _) = Journal::open(root.join("contexts.jsonl"), opts.fault.clone())?;
        let (alerts, _) = Journal::open(root.join("alerts.jsonl"), opts.fault.clone())?;
        let (drift, _) = Journal::open(root.join("drift.jsonl"), opts.fault.clone())?;
        write_atomically(&root.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        let state = replay(&root)?;
        Ok((
            Self {
                root,
                _lock: lock,
                opts,
                manifest,
                segment,
                segment_index,
                labels,
                models,
                contexts,
                alerts,
                drift,
            },
            state,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn append_messages(&mut self, b: &MessageBatch) -> Result<()> {
        self.segment.append(b)?;
        if self.segment.bytes() >= self.opts.segment_bytes {
            self.seal_segment()?;
        }
        Ok(())
    }

    fn seal_segment(&mut self) -> Result<()> {
        let bytes = fs::read(self.segment.path())?;
        let name = segment_name(self.segment_index);
        self.manifest.sealed_segments.push(SegmentInfo {
            name,
            records: self.segment.records(),
            sha256: sha256_hex(&bytes),
        });
        write_atomically(&self.root.join("manifest.json"), &serde_json::to_vec_pretty(&self.manifest)?)?;
        self.segment_index += 1;
        let path = self.root.join("messages").join(segment_name(self.segment_index));
        self.segment = Journal::open(path, self.opts.fault.clone())?.0;
        Ok(())
    }

    pub fn append_label(&mut self, e: &LabelEvent) -> Result<()> {
        self.labels.append(e)
    }

    pub fn append_context(&mut self, e: &ContextEvent) -> Result<()> {
        self.contexts.append(e)
    }

    pub fn append_alerts(&mut self, e: &AlertEvent) -> Result<()> {
        self.alerts.append(e)
    }

    pub fn append_drift(&mut self, r: &DriftReport) -> Result<()> {
        self.drift.append(r)
    }

    /// Writes the artifact file, then journals the publication. Returns the
    /// event to apply.
    pub fn publish_model(&mut self, c: &Classifier<f64>, labels_generation: u64) -> Result<ModelEvent> {
        let mut buf = Vec::new();
        c.write_artifact(&mut buf)?;
        let file = format!("models/{}.json", c.version);
        write_atomically(&self.root.join(&file), &buf)?;
        let e = ModelEvent::Published {
            version: c.version.clone(),
            file,
            sha256: sha256_hex(&buf),
            labels_generation,
        };
        self.models.append(&e)?;
        Ok(e)
    }

    /// Loads and verifies a published artifact.
    pub fn load_model(root: &Path, e: &ModelEvent) -> Result<Classifier<f64>> {
        let ModelEvent::Published { file, sha256, version, .. } = e;
        let bytes = fs::read(root.join(file))?;
        if &sha256_hex(&bytes) != sha256 {
            return Err(ServiceError::Corrupt {
                path: file.clone(),
                detail: format!("artifact for {version} does not match its digest"),
            });
        }
        Ok(Classifier::read_artifact(bytes.as_slice())?)
    }

    pub fn journal_records(&self) -> JournalCounts {
        JournalCounts {
            message_batches: self.manifest.sealed_segments.iter().map(|s| s.records).sum::<u64>() + self.segment.records(),
            labels: self.labels.records(),
            models: self.models.records(),
            contexts: self.contexts.records(),
            alerts: self.alerts.records(),
            drift: self.drift.records(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalCounts {
    pub message_batches: u64,
    pub labels: u64,
    pub models: u64,
    pub contexts: u64,
    pub alerts: u64,
    pub drift: u64,
}

/// Lines of a JSON-lines reader, for callers importing files.
pub fn read_lines(r: impl BufRead) -> std::io::Result<Vec<String>> {
    r.lines().collect()
}

pub fn open_reader(path: &Path) -> std::io::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}
