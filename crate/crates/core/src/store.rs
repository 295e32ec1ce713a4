//! Single-file embedded store.
//!
//! Every write is one line of canonical JSON appended to a journal file and
//! synced before the call returns. Opening the store replays the journal into
//! in-memory tables. Media lives next to the journal as content-addressed
//! files named by their sha-256.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{Read as _, Seek, SeekFrom, Write as _};
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::*;
use crate::pipeline::{GenerationJob, MediaBlob};
use crate::session::{InteractionEvent, LoopError, SessionEvent, TfoSession, TransitionRecord};

pub const ARCHIVE_FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("referential violation: {0}")]
    Referential(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("child {0} not found")]
    ChildNotFound(ChildId),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("journal line {line} is corrupt: {detail}")]
    Corrupt { line: usize, detail: String },
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Referential(_) => "ReferentialViolation",
            StoreError::Conflict(_) => "Conflict",
            StoreError::ChildNotFound(_) => "ChildNotFound",
            StoreError::NotFound { .. } => "NotFound",
            StoreError::Storage(_) | StoreError::Corrupt { .. } => "StorageError",
            StoreError::Loop(e) => e.code(),
            StoreError::Domain(e) => e.code(),
        }
    }

    fn not_found(kind: &'static str, id: impl ToString) -> Self {
        StoreError::NotFound { kind, id: id.to_string() }
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredFramework {
    pub child_id: ChildId,
    pub framework: StoryFramework,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredEpisode {
    pub child_id: ChildId,
    pub session_id: Option<SessionId>,
    pub episode: Episode,
    pub page_images: BTreeMap<PageId, AssetId>,
    pub approved: bool,
    /// Journal position of the approval, used to order history.
    pub approved_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredRecord {
    pub session_id: SessionId,
    pub record: PostMealRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredFeedback {
    pub child_id: ChildId,
    pub session_id: SessionId,
    pub message: FeedbackMessage,
    pub delivered_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetMeta {
    pub media_type: String,
    pub size: u64,
}

/// A response remembered for a client-supplied idempotency key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdempotentResponse {
    pub status: u16,
    pub body: String,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Entry {
    PutAvatar { avatar: ChildAvatar, family: Option<String> },
    PutFramework { stored: StoredFramework },
    PutEpisode { stored: StoredEpisode },
    ApproveEpisode { episode_id: EpisodeId },
    CreateSession { session: TfoSession },
    Transition { record: TransitionRecord },
    CloseSession { session_id: SessionId, at: Timestamp },
    SetTaskDone { session_id: SessionId, done: bool, at: Timestamp },
    PutRecord { stored: StoredRecord },
    Interaction { event: InteractionEvent },
    Feedback { stored: StoredFeedback },
    PutJob { job: GenerationJob },
    PutAsset { asset_id: AssetId, meta: AssetMeta },
    DeleteAsset { asset_id: AssetId },
    PutToken { token_sha256: String, family: String },
    PutIdempotency { key: String, response: IdempotentResponse },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JournalLine {
    seq: u64,
    entry: Entry,
}

/// In-memory tables rebuilt from the journal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Tables {
    pub avatars: BTreeMap<AvatarId, ChildAvatar>,
    pub families: BTreeMap<AvatarId, String>,
    pub frameworks: BTreeMap<FrameworkId, StoredFramework>,
    pub episodes: BTreeMap<EpisodeId, StoredEpisode>,
    pub sessions: BTreeMap<SessionId, TfoSession>,
    /// Creation snapshots, the starting point for log replay.
    pub session_origins: BTreeMap<SessionId, TfoSession>,
    pub transitions: Vec<TransitionRecord>,
    pub records: BTreeMap<RecordId, StoredRecord>,
    pub interactions: Vec<InteractionEvent>,
    pub feedback: Vec<StoredFeedback>,
    pub jobs: BTreeMap<JobId, GenerationJob>,
    pub assets: BTreeMap<AssetId, AssetMeta>,
    pub deleted_assets: BTreeSet<AssetId>,
    pub tokens: BTreeMap<String, String>,
    pub idempotency: BTreeMap<String, IdempotentResponse>,
}

const TIME_KEYS: [&str; 5] = ["created_at", "updated_at", "timestamp", "delivered_at", "at"];

impl Tables {
    /// The tables as JSON with every timestamp zeroed and access bookkeeping
    /// (tokens, families, idempotency keys) left out. Two stores that went
    /// through the same operations compare equal in this form.
    pub fn comparable(&self) -> serde_json::Value {
        fn zero(v: &mut serde_json::Value) {
            match v {
                serde_json::Value::Object(map) => {
                    for (k, child) in map.iter_mut() {
                        if TIME_KEYS.contains(&k.as_str()) && child.is_u64() {
                            *child = serde_json::Value::from(0u64);
                        } else {
                            zero(child);
                        }
                    }
                }
                serde_json::Value::Array(items) => items.iter_mut().for_each(zero),
                _ => {}
            }
        }
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(map) = v.as_object_mut() {
            for k in ["tokens", "families", "idempotency"] {
                map.remove(k);
            }
        }
        zero(&mut v);
        // Journal positions are replaced by their rank.
        let mut seqs: Vec<u64> = self.episodes.values().filter_map(|e| e.approved_seq).collect();
        seqs.sort_unstable();
        if let Some(eps) = v.get_mut("episodes").and_then(|e| e.as_object_mut()) {
            for ep in eps.values_mut() {
                if let Some(seq) = ep.get("approved_seq").and_then(|s| s.as_u64()) {
                    let rank = seqs.binary_search(&seq).unwrap_or_default();
                    ep["approved_seq"] = serde_json::Value::from(rank as u64);
                }
            }
        }
        v
    }
}

/// Everything the store knows about one child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyArchive {
    pub format: u32,
    pub avatar: ChildAvatar,
    pub frameworks: Vec<StoredFramework>,
    pub sessions: Vec<TfoSession>,
    pub transitions: Vec<TransitionRecord>,
    pub records: Vec<StoredRecord>,
    pub interactions: Vec<InteractionEvent>,
    pub episodes: Vec<StoredEpisode>,
    pub feedback: Vec<StoredFeedback>,
    pub jobs: Vec<GenerationJob>,
    pub assets: Vec<ArchivedAsset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchivedAsset {
    pub asset_id: AssetId,
    pub media_type: String,
    pub data_base64: String,
}

pub struct Store {
    path: PathBuf,
    asset_dir: PathBuf,
    file: File,
    next_seq: u64,
    tables: Tables,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).field("next_seq", &self.next_seq).finish()
    }
}

/// Asset directory used when none is configured: `<journal>.assets`.
pub fn default_asset_dir(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".assets");
    path.with_file_name(name)
}

pub fn asset_id_for(bytes: &[u8]) -> AssetId {
    AssetId::new(hex::encode(Sha256::digest(bytes)))
}

/// Reads the complete lines of a journal without applying them. A trailing
/// partial line is ignored.
pub fn read_journal(path: &Path) -> StoreResult<Vec<Entry>> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<JournalLine>(l)
                .map(|j| j.entry)
                .map_err(|e| StoreError::Corrupt { line: i + 1, detail: e.to_string() })
        })
        .collect()
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> StoreResult<Self> {
        let path = path.as_ref().to_path_buf();
        let asset_dir = default_asset_dir(&path);
        Self::open_with_assets(path, asset_dir)
    }

    pub fn open_with_assets(path: impl AsRef<Path>, asset_dir: impl AsRef<Path>) -> StoreResult<Self> {
        let path = path.as_ref().to_path_buf();
        let asset_dir = asset_dir.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::create_dir_all(&asset_dir)?;
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        // A write interrupted mid-line leaves a tail without a newline; it
        // was never acknowledged, so it is dropped.
        let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        if keep < bytes.len() {
            tracing::warn!(dropped = bytes.len() - keep, "discarding a partial journal line");
            file.set_len(keep as u64)?;
            file.seek(SeekFrom::End(0))?;
            file.sync_data()?;
        }

        let mut store = Store { path, asset_dir, file, next_seq: 0, tables: Tables::default() };
        let text = std::str::from_utf8(&bytes[..keep])
            .map_err(|e| StoreError::Corrupt { line: 0, detail: e.to_string() })?;
        for (i, line) in text.lines().enumerate() {
            let parsed: JournalLine = serde_json::from_str(line)
                .map_err(|e| StoreError::Corrupt { line: i + 1, detail: e.to_string() })?;
            store
                .apply(parsed.entry, parsed.seq)
                .map_err(|e| StoreError::Corrupt { line: i + 1, detail: e.to_string() })?;
            store.next_seq = parsed.seq + 1;
        }
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn asset_dir(&self) -> &Path {
        &self.asset_dir
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    /// Number of journal lines written so far.
    pub fn journal_len(&self) -> u64 {
        self.next_seq
    }

    // ---- commit path ----------------------------------------------------

    fn commit(&mut self, entry: Entry) -> StoreResult<u64> {
        let seq = self.next_seq;
        let line = JournalLine { seq, entry };
        let mut bytes = canonical_serialize_unchecked(&line)?;
        bytes.push(b'\n');
        // Every `apply` arm checks before it mutates, so a rejected entry
        // leaves the tables untouched.
        self.apply(line.entry, seq)?;
        if let Err(e) = self.file.write_all(&bytes).and_then(|_| self.file.sync_data()) {
            let reopened = Store::open_with_assets(&self.path, &self.asset_dir)?;
            *self = reopened;
            return Err(e.into());
        }
        self.next_seq += 1;
        Ok(seq)
    }

    fn apply(&mut self, entry: Entry, seq: u64) -> StoreResult<()> {
        let t = &mut self.tables;
        match entry {
            Entry::PutAvatar { avatar, family } => {
                avatar.check_invariants()?;
                if let Some(a) = &avatar.base_reference_image {
                    require_asset(t, a)?;
                }
                if let Some(f) = family {
                    t.families.insert(avatar.avatar_id.clone(), f);
                }
                t.avatars.insert(avatar.avatar_id.clone(), avatar);
            }
            Entry::PutFramework { stored } => {
                stored.framework.check_invariants()?;
                require_child(t, &stored.child_id)?;
                t.frameworks.insert(stored.framework.framework_id.clone(), stored);
            }
            Entry::PutEpisode { stored } => {
                stored.episode.check_invariants()?;
                require_child(t, &stored.child_id)?;
                if !t.frameworks.contains_key(&stored.episode.framework_id) {
                    return Err(StoreError::Referential(format!(
                        "episode {} references missing framework {}",
                        stored.episode.episode_id, stored.episode.framework_id
                    )));
                }
                if let Some(s) = &stored.session_id {
                    require_session(t, s)?;
                }
                for (page, asset) in &stored.page_images {
                    if stored.episode.page(page).is_none() {
                        return Err(StoreError::Referential(format!("image for unknown page {page}")));
                    }
                    require_asset(t, asset)?;
                }
                t.episodes.insert(stored.episode.episode_id.clone(), stored);
            }
            Entry::ApproveEpisode { episode_id } => {
                let ep = t
                    .episodes
                    .get_mut(&episode_id)
                    .ok_or_else(|| StoreError::Referential(format!("approval of missing episode {episode_id}")))?;
                if !ep.approved {
                    ep.approved = true;
                    ep.approved_seq = Some(seq);
                }
            }
            Entry::CreateSession { session } => {
                session.check_invariants()?;
                require_child(t, &session.child_id)?;
                if let Some(active) = active_session_in(t, &session.child_id) {
                    return Err(LoopError::SessionAlreadyActive {
                        child: session.child_id.clone(),
                        session: active.session_id.clone(),
                    }
                    .into());
                }
                t.session_origins.insert(session.session_id.clone(), session.clone());
                t.sessions.insert(session.session_id.clone(), session);
            }
            Entry::Transition { record } => {
                let current = require_session(t, &record.session_id)?.clone();
                match &record.event {
                    SessionEvent::EpisodeDrafted { episode_id } | SessionEvent::EndingGenerated { episode_id } => {
                        if !t.episodes.contains_key(episode_id) {
                            return Err(StoreError::Referential(format!("missing episode {episode_id}")));
                        }
                    }
                    SessionEvent::PostMealSubmitted { record_id } => {
                        if !t.records.contains_key(record_id) {
                            return Err(StoreError::Referential(format!("missing record {record_id}")));
                        }
                    }
                    _ => {}
                }
                let (next, applied) = current.apply(record.event.clone(), record.seq, record.timestamp)?;
                if applied.from != record.from || applied.to != record.to {
                    return Err(StoreError::Conflict(format!(
                        "transition {:?}->{:?} disagrees with the session state",
                        record.from, record.to
                    )));
                }
                t.sessions.insert(next.session_id.clone(), next);
                t.transitions.push(record);
            }
            Entry::CloseSession { session_id, at } => {
                let s = t.sessions.get_mut(&session_id).ok_or_else(|| StoreError::not_found("session", &session_id))?;
                s.closed = true;
                s.updated_at = at;
            }
            Entry::SetTaskDone { session_id, done, at } => {
                let s = t.sessions.get_mut(&session_id).ok_or_else(|| StoreError::not_found("session", &session_id))?;
                s.real_world_task_done = done;
                s.updated_at = at;
            }
            Entry::PutRecord { stored } => {
                stored.record.check_invariants()?;
                require_session(t, &stored.session_id)?;
                t.records.insert(stored.record.record_id.clone(), stored);
            }
            Entry::Interaction { event } => {
                require_session(t, &event.session_id)?;
                t.interactions.push(event);
            }
            Entry::Feedback { stored } => {
                stored.message.check_invariants()?;
                require_child(t, &stored.child_id)?;
                require_session(t, &stored.session_id)?;
                if !t.records.contains_key(&stored.message.record_id) {
                    return Err(StoreError::Referential(format!(
                        "feedback references missing record {}",
                        stored.message.record_id
                    )));
                }
                t.feedback.push(stored);
            }
            Entry::PutJob { job } => {
                if let Some(s) = &job.session_id {
                    require_session(t, s)?;
                }
                t.jobs.insert(job.job_id.clone(), job);
            }
            Entry::PutAsset { asset_id, meta } => {
                t.deleted_assets.remove(&asset_id);
                t.assets.insert(asset_id, meta);
            }
            Entry::DeleteAsset { asset_id } => {
                t.assets.remove(&asset_id);
                t.deleted_assets.insert(asset_id);
            }
            Entry::PutToken { token_sha256, family } => {
                t.tokens.insert(token_sha256, family);
            }
            Entry::PutIdempotency { key, response } => {
                t.idempotency.insert(key, response);
            }
        }
        Ok(())
    }

    // ---- ids --------------------------------------------------------------

    pub fn next_avatar_id(&self) -> AvatarId {
        AvatarId::new(format!("child_{:04}", self.tables.avatars.len() + 1))
    }
    pub fn next_episode_id(&self) -> EpisodeId {
        EpisodeId::new(format!("ep_{:04}", self.tables.episodes.len() + 1))
    }
    pub fn next_session_id(&self) -> SessionId {
        SessionId::new(format!("tfo_{:04}", self.tables.sessions.len() + 1))
    }
    pub fn next_record_id(&self) -> RecordId {
        RecordId::new(format!("rec_{:04}", self.tables.records.len() + 1))
    }
    pub fn next_event_id(&self) -> EventId {
        EventId::new(format!("evt_{:06}", self.tables.interactions.len() + 1))
    }
    pub fn next_job_id(&self) -> JobId {
        JobId::new(format!("job_{:04}", self.tables.jobs.len() + 1))
    }

    // ---- writes -----------------------------------------------------------

    /// Stores an avatar. Re-putting identical content is a no-op.
    pub fn put_avatar(&mut self, avatar: ChildAvatar, family: Option<&str>) -> StoreResult<AvatarId> {
        if let Some(existing) = self.tables.avatars.get(&avatar.avatar_id) {
            if existing == &avatar {
                return Ok(avatar.avatar_id);
            }
            return Err(StoreError::Conflict(format!("avatar {} exists with other content", avatar.avatar_id)));
        }
        let id = avatar.avatar_id.clone();
        self.commit(Entry::PutAvatar { avatar, family: family.map(str::to_string) })?;
        Ok(id)
    }

    pub fn put_framework(&mut self, child_id: &ChildId, framework: StoryFramework) -> StoreResult<FrameworkId> {
        let stored = StoredFramework { child_id: child_id.clone(), framework };
        let id = stored.framework.framework_id.clone();
        if let Some(existing) = self.tables.frameworks.get(&id) {
            return same_or_conflict(existing == &stored, "framework", id);
        }
        self.commit(Entry::PutFramework { stored })?;
        Ok(id)
    }

    pub fn put_episode(
        &mut self,
        child_id: &ChildId,
        session_id: Option<&SessionId>,
        episode: Episode,
        page_images: BTreeMap<PageId, AssetId>,
    ) -> StoreResult<EpisodeId> {
        let stored = StoredEpisode {
            child_id: child_id.clone(),
            session_id: session_id.cloned(),
            episode,
            page_images,
            approved: false,
            approved_seq: None,
        };
        let id = stored.episode.episode_id.clone();
        if let Some(existing) = self.tables.episodes.get(&id) {
            let same = existing.episode == stored.episode
                && existing.child_id == stored.child_id
                && existing.session_id == stored.session_id
                && existing.page_images == stored.page_images;
            return same_or_conflict(same, "episode", id);
        }
        self.commit(Entry::PutEpisode { stored })?;
        Ok(id)
    }

    pub fn approve_episode(&mut self, episode_id: &EpisodeId) -> StoreResult<()> {
        match self.tables.episodes.get(episode_id) {
            None => Err(StoreError::not_found("episode", episode_id)),
            Some(e) if e.approved => Ok(()),
            Some(_) => self.commit(Entry::ApproveEpisode { episode_id: episode_id.clone() }).map(|_| ()),
        }
    }

    pub fn create_session(&mut self, session: TfoSession) -> StoreResult<SessionId> {
        let id = session.session_id.clone();
        if let Some(existing) = self.tables.session_origins.get(&id) {
            return same_or_conflict(existing == &session, "session", id);
        }
        if !self.tables.avatars.contains_key(&session.child_id) {
            return Err(StoreError::ChildNotFound(session.child_id.clone()));
        }
        self.commit(Entry::CreateSession { session })?;
        Ok(id)
    }

    /// Applies a loop event to a session and appends it to the log.
    pub fn transition(&mut self, session_id: &SessionId, event: SessionEvent, now: Timestamp) -> StoreResult<TfoSession> {
        let current = self.session(session_id)?;
        let seq = self.tables.transitions.iter().filter(|r| &r.session_id == session_id).count() as u64;
        let (next, record) = current.apply(event, seq, now)?;
        self.commit(Entry::Transition { record })?;
        Ok(next)
    }

    pub fn close_session(&mut self, session_id: &SessionId, now: Timestamp) -> StoreResult<TfoSession> {
        let s = self.session(session_id)?;
        if !s.closed {
            self.commit(Entry::CloseSession { session_id: session_id.clone(), at: now })?;
        }
        self.session(session_id)
    }

    pub fn set_task_done(&mut self, session_id: &SessionId, done: bool, now: Timestamp) -> StoreResult<TfoSession> {
        let s = self.session(session_id)?;
        if s.real_world_task_done != done {
            self.commit(Entry::SetTaskDone { session_id: session_id.clone(), done, at: now })?;
        }
        self.session(session_id)
    }

    pub fn put_record(&mut self, session_id: &SessionId, record: PostMealRecord) -> StoreResult<RecordId> {
        let stored = StoredRecord { session_id: session_id.clone(), record };
        let id = stored.record.record_id.clone();
        if let Some(existing) = self.tables.records.get(&id) {
            return same_or_conflict(existing == &stored, "record", id);
        }
        self.commit(Entry::PutRecord { stored })?;
        Ok(id)
    }

    pub fn append_interaction(&mut self, event: InteractionEvent) -> StoreResult<EventId> {
        if let Some(existing) = self.tables.interactions.iter().find(|e| e.event_id == event.event_id) {
            return same_or_conflict(existing == &event, "event", event.event_id.clone());
        }
        let id = event.event_id.clone();
        self.commit(Entry::Interaction { event })?;
        Ok(id)
    }

    pub fn append_feedback(&mut self, stored: StoredFeedback) -> StoreResult<()> {
        if self.tables.feedback.contains(&stored) {
            return Ok(());
        }
        self.commit(Entry::Feedback { stored }).map(|_| ())
    }

    /// Inserts or updates a job's bookkeeping.
    pub fn put_job(&mut self, job: GenerationJob) -> StoreResult<JobId> {
        let id = job.job_id.clone();
        if self.tables.jobs.get(&id) == Some(&job) {
            return Ok(id);
        }
        self.commit(Entry::PutJob { job })?;
        Ok(id)
    }

    /// Writes a blob under its content hash and registers it.
    pub fn put_blob(&mut self, blob: &MediaBlob) -> StoreResult<AssetId> {
        let id = asset_id_for(&blob.bytes);
        let target = self.asset_dir.join(id.as_str());
        if !target.exists() {
            let tmp = self.asset_dir.join(format!("{}.tmp", id.as_str()));
            {
                let mut f = File::create(&tmp)?;
                f.write_all(&blob.bytes)?;
                f.sync_all()?;
            }
            fs::rename(&tmp, &target)?;
        }
        let meta = AssetMeta { media_type: blob.media_type.clone(), size: blob.bytes.len() as u64 };
        if self.tables.assets.get(&id) != Some(&meta) {
            self.commit(Entry::PutAsset { asset_id: id.clone(), meta })?;
        }
        Ok(id)
    }

    pub fn read_blob(&self, id: &AssetId) -> StoreResult<MediaBlob> {
        let meta = self.tables.assets.get(id).ok_or_else(|| StoreError::not_found("asset", id))?;
        let bytes = fs::read(self.asset_dir.join(id.as_str()))?;
        Ok(MediaBlob { media_type: meta.media_type.clone(), bytes })
    }

    /// Removes a blob. Avatars and episodes must not reference it; interaction
    /// events that do keep their reference and resolve to a deleted asset.
    pub fn delete_asset(&mut self, id: &AssetId) -> StoreResult<()> {
        if !self.tables.assets.contains_key(id) {
            return Err(StoreError::not_found("asset", id));
        }
        let t = &self.tables;
        let pinned = t.avatars.values().any(|a| a.base_reference_image.as_ref() == Some(id))
            || t.episodes.values().any(|e| e.page_images.values().any(|a| a == id));
        if pinned {
            return Err(StoreError::Referential(format!("asset {id} is still referenced")));
        }
        self.commit(Entry::DeleteAsset { asset_id: id.clone() })?;
        let path = self.asset_dir.join(id.as_str());
        if path.exists() {
            fs::remove_file(path)?;
        }
        Ok(())
    }

    pub fn put_token(&mut self, token: &str, family: &str) -> StoreResult<()> {
        let hash = hex::encode(Sha256::digest(token.as_bytes()));
        if self.tables.tokens.get(&hash).map(String::as_str) == Some(family) {
            return Ok(());
        }
        self.commit(Entry::PutToken { token_sha256: hash, family: family.to_string() }).map(|_| ())
    }

    /// The family a bearer token belongs to.
    pub fn token_family(&self, token: &str) -> Option<&str> {
        let hash = hex::encode(Sha256::digest(token.as_bytes()));
        self.tables.tokens.get(&hash).map(String::as_str)
    }

    pub fn put_idempotent(&mut self, key: &str, response: IdempotentResponse) -> StoreResult<()> {
        if self.tables.idempotency.contains_key(key) {
            return Ok(());
        }
        self.commit(Entry::PutIdempotency { key: key.to_string(), response }).map(|_| ())
    }

    pub fn idempotent(&self, key: &str) -> Option<&IdempotentResponse> {
        self.tables.idempotency.get(key)
    }

    // ---- reads ------------------------------------------------------------

    pub fn avatar(&self, id: &AvatarId) -> StoreResult<ChildAvatar> {
        self.tables.avatars.get(id).cloned().ok_or_else(|| StoreError::ChildNotFound(id.clone()))
    }

    pub fn family_of(&self, child: &ChildId) -> Option<&str> {
        self.tables.families.get(child).map(String::as_str)
    }

    pub fn framework(&self, id: &FrameworkId) -> StoreResult<StoredFramework> {
        self.tables.frameworks.get(id).cloned().ok_or_else(|| StoreError::not_found("framework", id))
    }

    pub fn frameworks_for(&self, child: &ChildId) -> Vec<StoredFramework> {
        self.tables.frameworks.values().filter(|f| &f.child_id == child).cloned().collect()
    }

    pub fn episode(&self, id: &EpisodeId) -> StoreResult<StoredEpisode> {
        self.tables.episodes.get(id).cloned().ok_or_else(|| StoreError::not_found("episode", id))
    }

    pub fn session(&self, id: &SessionId) -> StoreResult<TfoSession> {
        self.tables
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| LoopError::SessionNotFound(id.clone()).into())
    }

    pub fn active_session(&self, child: &ChildId) -> Option<&TfoSession> {
        active_session_in(&self.tables, child)
    }

    pub fn transitions_for(&self, session: &SessionId) -> Vec<TransitionRecord> {
        self.tables.transitions.iter().filter(|r| &r.session_id == session).cloned().collect()
    }

    pub fn session_origin(&self, session: &SessionId) -> StoreResult<TfoSession> {
        self.tables
            .session_origins
            .get(session)
            .cloned()
            .ok_or_else(|| LoopError::SessionNotFound(session.clone()).into())
    }

    pub fn record(&self, id: &RecordId) -> StoreResult<StoredRecord> {
        self.tables.records.get(id).cloned().ok_or_else(|| StoreError::not_found("record", id))
    }

    pub fn interactions_for(&self, session: &SessionId) -> Vec<InteractionEvent> {
        self.tables.interactions.iter().filter(|e| &e.session_id == session).cloned().collect()
    }

    pub fn feedback_for_session(&self, session: &SessionId) -> Option<StoredFeedback> {
        self.tables.feedback.iter().rev().find(|f| &f.session_id == session).cloned()
    }

    pub fn job(&self, id: &JobId) -> StoreResult<GenerationJob> {
        self.tables.jobs.get(id).cloned().ok_or_else(|| StoreError::not_found("job", id))
    }

    pub fn jobs_for_session(&self, session: &SessionId) -> Vec<GenerationJob> {
        self.tables.jobs.values().filter(|j| j.session_id.as_ref() == Some(session)).cloned().collect()
    }

    /// The last `limit` delivered feedback texts for a child, newest first.
    pub fn recent_feedback_phrases(&self, child: &ChildId, limit: usize) -> StoreResult<Vec<String>> {
        self.require_child(child)?;
        Ok(self
            .tables
            .feedback
            .iter()
            .rev()
            .filter(|f| &f.child_id == child)
            .take(limit)
            .map(|f| f.message.text_cn.clone())
            .collect())
    }

    /// The most recently approved main episodes, oldest first.
    pub fn latest_episodes(&self, child: &ChildId, limit: usize) -> StoreResult<Vec<Episode>> {
        self.require_child(child)?;
        let mut approved: Vec<&StoredEpisode> = self
            .tables
            .episodes
            .values()
            .filter(|e| &e.child_id == child && e.approved && e.episode.kind == EpisodeKind::Main)
            .collect();
        approved.sort_by_key(|e| e.approved_seq);
        let skip = approved.len().saturating_sub(limit);
        Ok(approved.into_iter().skip(skip).map(|e| e.episode.clone()).collect())
    }

    fn require_child(&self, child: &ChildId) -> StoreResult<()> {
        require_child(&self.tables, child)
    }

    /// Checks that every foreign id resolves and every session matches a
    /// replay of its log.
    pub fn verify(&self) -> StoreResult<()> {
        let t = &self.tables;
        for s in t.sessions.values() {
            require_child(t, &s.child_id)?;
            for ep in [&s.main_episode_id, &s.ending_episode_id].into_iter().flatten() {
                if !t.episodes.contains_key(ep) {
                    return Err(StoreError::Referential(format!("session {} -> episode {ep}", s.session_id)));
                }
            }
            if let Some(r) = &s.record_id {
                if !t.records.contains_key(r) {
                    return Err(StoreError::Referential(format!("session {} -> record {r}", s.session_id)));
                }
            }
            let origin = self.session_origin(&s.session_id)?;
            let mut replayed = TfoSession::replay(&origin, &self.transitions_for(&s.session_id))?;
            replayed.closed = s.closed;
            replayed.real_world_task_done = s.real_world_task_done;
            replayed.updated_at = s.updated_at;
            if &replayed != s {
                return Err(StoreError::Conflict(format!("session {} differs from its log", s.session_id)));
            }
        }
        for e in &t.interactions {
            require_session(t, &e.session_id)?;
            if let Some(a) = &e.payload.audio_asset {
                if !t.assets.contains_key(a) && !t.deleted_assets.contains(a) {
                    return Err(StoreError::Referential(format!("event {} -> asset {a}", e.event_id)));
                }
            }
        }
        for e in t.episodes.values() {
            if !t.frameworks.contains_key(&e.episode.framework_id) {
                return Err(StoreError::Referential(format!("episode {} -> framework", e.episode.episode_id)));
            }
        }
        Ok(())
    }

    // ---- export / import ---------------------------------------------------

    pub fn export(&self, child: &ChildId) -> StoreResult<FamilyArchive> {
        let avatar = self.avatar(child)?;
        let t = &self.tables;
        let sessions: Vec<TfoSession> = t.sessions.values().filter(|s| &s.child_id == child).cloned().collect();
        let ids: BTreeSet<&SessionId> = sessions.iter().map(|s| &s.session_id).collect();
        let episodes: Vec<StoredEpisode> = t.episodes.values().filter(|e| &e.child_id == child).cloned().collect();
        let mut asset_ids: BTreeSet<AssetId> = avatar.base_reference_image.iter().cloned().collect();
        for e in &episodes {
            asset_ids.extend(e.page_images.values().cloned());
        }
        let interactions: Vec<InteractionEvent> =
            t.interactions.iter().filter(|e| ids.contains(&e.session_id)).cloned().collect();
        asset_ids.extend(interactions.iter().filter_map(|e| e.payload.audio_asset.clone()));
        let mut assets = Vec::new();
        for id in asset_ids.into_iter().filter(|a| t.assets.contains_key(a)) {
            let blob = self.read_blob(&id)?;
            assets.push(ArchivedAsset {
                asset_id: id,
                media_type: blob.media_type,
                data_base64: base64::engine::general_purpose::STANDARD.encode(&blob.bytes),
            });
        }
        Ok(FamilyArchive {
            format: ARCHIVE_FORMAT,
            frameworks: self.frameworks_for(child),
            transitions: t.transitions.iter().filter(|r| ids.contains(&r.session_id)).cloned().collect(),
            records: t.records.values().filter(|r| ids.contains(&r.session_id)).cloned().collect(),
            interactions,
            feedback: t.feedback.iter().filter(|f| &f.child_id == child).cloned().collect(),
            jobs: t.jobs.values().filter(|j| j.session_id.as_ref().is_some_and(|s| ids.contains(s))).cloned().collect(),
            sessions,
            episodes,
            assets,
            avatar,
        })
    }

    /// Loads an archive into this store. Values already present with the
    /// same content are skipped.
    pub fn import(&mut self, archive: &FamilyArchive) -> StoreResult<()> {
        if archive.format != ARCHIVE_FORMAT {
            return Err(StoreError::Conflict(format!("unsupported archive format {}", archive.format)));
        }
        for a in &archive.assets {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(&a.data_base64)
                .map_err(|e| StoreError::Conflict(format!("asset {}: {e}", a.asset_id)))?;
            let id = self.put_blob(&MediaBlob { media_type: a.media_type.clone(), bytes })?;
            if id != a.asset_id {
                return Err(StoreError::Conflict(format!("asset {} does not match its content", a.asset_id)));
            }
        }
        self.put_avatar(archive.avatar.clone(), None)?;
        for f in &archive.frameworks {
            self.put_framework(&f.child_id, f.framework.clone())?;
        }
        for e in archive.episodes.iter().filter(|e| e.session_id.is_none()) {
            self.put_episode(&e.child_id, None, e.episode.clone(), e.page_images.clone())?;
        }
        // Each session is rebuilt and closed before the next one opens.
        let mut sessions: Vec<&TfoSession> = archive.sessions.iter().collect();
        sessions.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
        for s in sessions {
            let sid = &s.session_id;
            if !self.tables.sessions.contains_key(sid) {
                let mut origin = s.clone();
                origin.state = crate::session::SessionState::FoodSelected;
                origin.main_episode_id = None;
                origin.ending_episode_id = None;
                origin.record_id = None;
                origin.regeneration_count = 0;
                origin.closed = false;
                origin.real_world_task_done = false;
                origin.updated_at = origin.created_at;
                self.commit(Entry::CreateSession { session: origin })?;
            }
            let mine: Vec<&StoredEpisode> =
                archive.episodes.iter().filter(|e| e.session_id.as_ref() == Some(sid)).collect();
            for e in &mine {
                self.put_episode(&e.child_id, Some(sid), e.episode.clone(), e.page_images.clone())?;
            }
            for r in archive.records.iter().filter(|r| &r.session_id == sid) {
                self.put_record(sid, r.record.clone())?;
            }
            for rec in archive.transitions.iter().filter(|r| &r.session_id == sid) {
                if !self.tables.transitions.contains(rec) {
                    self.commit(Entry::Transition { record: rec.clone() })?;
                }
            }
            if s.closed {
                self.close_session(sid, s.updated_at)?;
            }
            if s.real_world_task_done {
                self.set_task_done(sid, true, s.updated_at)?;
            }
        }
        let mut approvals: Vec<&StoredEpisode> = archive.episodes.iter().filter(|e| e.approved).collect();
        approvals.sort_by_key(|e| e.approved_seq);
        for e in approvals {
            self.approve_episode(&e.episode.episode_id)?;
        }
        for e in &archive.interactions {
            self.append_interaction(e.clone())?;
        }
        for f in &archive.feedback {
            self.append_feedback(f.clone())?;
        }
        for j in &archive.jobs {
            self.put_job(j.clone())?;
        }
        Ok(())
    }
}

fn canonical_serialize_unchecked<T: Serialize>(value: &T) -> StoreResult<Vec<u8>> {
    let v = to_canonical_value(value)?;
    Ok(serde_json::to_vec(&v).map_err(|e| DomainError::Schema(e.to_string()))?)
}

fn same_or_conflict<I: std::fmt::Display>(same: bool, kind: &str, id: I) -> StoreResult<I> {
    if same {
        Ok(id)
    } else {
        Err(StoreError::Conflict(format!("{kind} {id} exists with other content")))
    }
}

fn require_child(t: &Tables, child: &ChildId) -> StoreResult<()> {
    if t.avatars.contains_key(child) {
        Ok(())
    } else {
        Err(StoreError::ChildNotFound(child.clone()))
    }
}

fn require_session<'a>(t: &'a Tables, id: &SessionId) -> StoreResult<&'a TfoSession> {
    t.sessions
        .get(id)
        .ok_or_else(|| StoreError::Referential(format!("missing session {id}")))
}

fn require_asset(t: &Tables, id: &AssetId) -> StoreResult<()> {
    if t.assets.contains_key(id) {
        Ok(())
    } else {
        Err(StoreError::Referential(format!("missing asset {id}")))
    }
}

fn active_session_in<'a>(t: &'a Tables, child: &ChildId) -> Option<&'a TfoSession> {
    t.sessions.values().find(|s| &s.child_id == child && !s.is_terminal())
}
