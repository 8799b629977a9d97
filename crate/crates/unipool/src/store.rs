//! Durable partitioned store: one append-only NDJSON log per partition and
//! an in-memory ordered index rebuilt from the logs on open.
//!
//! Every mutation is a single log line, so a crash can at worst leave a
//! partial final line, which replay discards. Compaction rewrites a log
//! through a temporary file and an atomic rename.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use unipool_core::{KnowledgeEntry, Partition, PoolError, PoolReader, PoolWriter, Receipt, WindowQuery};

pub const DEFAULT_RETENTION_HF_S: f64 = 60.0;
pub const DEFAULT_RETENTION_SF_S: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreOptions {
    pub retention_hf_s: f64,
    pub retention_sf_s: f64,
    /// fsync after every write. Without it writes still reach the OS before
    /// `insert` returns, which survives a process kill but not power loss.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            retention_hf_s: DEFAULT_RETENTION_HF_S,
            retention_sf_s: DEFAULT_RETENTION_SF_S,
            fsync: false,
        }
    }
}

type IndexKey = (String, i64, u64);

#[derive(Default)]
struct Table {
    index: BTreeMap<IndexKey, Arc<KnowledgeEntry>>,
    next_seq: u64,
}

impl Table {
    fn insert(&mut self, seq: u64, entry: Arc<KnowledgeEntry>) {
        let key = (entry.anchor.intersection_id.clone(), entry.timestamp_us, seq);
        self.index.insert(key, entry);
        self.next_seq = self.next_seq.max(seq + 1);
    }

    fn newest_timestamp(&self) -> Option<i64> {
        self.index.keys().map(|k| k.1).max()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogLine {
    Insert {
        seq: u64,
        entry: KnowledgeEntry,
    },
    Refresh {
        intersection_id: String,
        rows: Vec<(u64, KnowledgeEntry)>,
    },
}

struct PartitionState {
    table: RwLock<Table>,
    /// Serializes writers of this partition and owns its log file.
    log: Mutex<Option<File>>,
}

pub struct PoolStore {
    dir: Option<PathBuf>,
    options: StoreOptions,
    parts: [PartitionState; 3],
    ids: Mutex<BTreeSet<u64>>,
}

fn slot(p: Partition) -> usize {
    match p {
        Partition::Static => 0,
        Partition::Hf => 1,
        Partition::Sf => 2,
    }
}

fn file_name(p: Partition) -> &'static str {
    match p {
        Partition::Static => "static.ndjson",
        Partition::Hf => "hf.ndjson",
        Partition::Sf => "sf.ndjson",
    }
}

fn backend(e: impl std::fmt::Display) -> PoolError {
    PoolError::Backend(e.to_string())
}

/// Per-partition row counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    #[serde(rename = "static")]
    pub static_rows: usize,
    pub hf: usize,
    pub sf: usize,
    pub total: usize,
}

impl PoolStore {
    fn empty(dir: Option<PathBuf>, options: StoreOptions) -> Self {
        let part = || PartitionState {
            table: RwLock::new(Table::default()),
            log: Mutex::new(None),
        };
        PoolStore {
            dir,
            options,
            parts: [part(), part(), part()],
            ids: Mutex::new(BTreeSet::new()),
        }
    }

    /// A store with no backing files.
    pub fn in_memory(options: StoreOptions) -> Self {
        Self::empty(None, options)
    }

    /// Opens (or creates) a store directory and replays its logs.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, PoolError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(backend)?;
        let store = Self::empty(Some(dir.clone()), options);
        {
            let mut ids = store.ids.lock();
            for p in Partition::ALL {
                let path = dir.join(file_name(p));
                let mut file = OpenOptions::new()
                    .read(true)
                    .append(true)
                    .create(true)
                    .open(&path)
                    .map_err(backend)?;
                let good_len = replay(&mut file, &mut store.parts[slot(p)].table.write(), &mut ids, p)
                    .map_err(|e| PoolError::Backend(format!("{}: {e}", path.display())))?;
                if good_len < file.metadata().map_err(backend)?.len() {
                    log::warn!("{}: discarding partial trailing record", path.display());
                    file.set_len(good_len).map_err(backend)?;
                }
                *store.parts[slot(p)].log.lock() = Some(file);
            }
        }
        Ok(store)
    }

    pub fn options(&self) -> &StoreOptions {
        &self.options
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn append(&self, log: &mut Option<File>, line: &LogLine) -> Result<(), PoolError> {
        if let Some(file) = log.as_mut() {
            let mut bytes = serde_json::to_vec(line).map_err(backend)?;
            bytes.push(b'\n');
            file.write_all(&bytes).map_err(backend)?;
            if self.options.fsync {
                file.sync_data().map_err(backend)?;
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> StoreStats {
        let n = |p: Partition| self.parts[slot(p)].table.read().index.len();
        let (s, h, f) = (n(Partition::Static), n(Partition::Hf), n(Partition::Sf));
        StoreStats {
            static_rows: s,
            hf: h,
            sf: f,
            total: s + h + f,
        }
    }

    /// All rows of a partition ordered by `(intersection_id, timestamp_us, seq)`.
    pub fn scan(&self, p: Partition) -> Vec<Arc<KnowledgeEntry>> {
        self.parts[slot(p)].table.read().index.values().cloned().collect()
    }

    /// Newest row at or before `t_us` carrying `field_key`.
    pub fn latest(&self, p: Partition, intersection_id: &str, field_key: &str, t_us: i64) -> Option<Arc<KnowledgeEntry>> {
        let table = self.parts[slot(p)].table.read();
        let lo = (intersection_id.to_string(), i64::MIN, 0);
        let hi = (intersection_id.to_string(), t_us, u64::MAX);
        table
            .index
            .range((Bound::Included(lo), Bound::Included(hi)))
            .rev()
            .map(|(_, e)| e)
            .find(|e| e.has_field(field_key))
            .cloned()
    }

    /// Atomically replaces every static row of `intersection_id`.
    pub fn refresh_static(&self, intersection_id: &str, entries: Vec<KnowledgeEntry>) -> Result<Receipt, PoolError> {
        for e in &entries {
            if e.anchor.intersection_id != intersection_id {
                return Err(PoolError::MixedIntersections(intersection_id.to_string()));
            }
            e.anchor.validate()?;
            match e.partition {
                None => return Err(PoolError::Untagged(e.entry_id)),
                Some(Partition::Static) => {}
                Some(found) => {
                    return Err(PoolError::PartitionMismatch {
                        entry_id: e.entry_id,
                        expected: Partition::Static,
                        found,
                    })
                }
            }
        }
        let part = &self.parts[slot(Partition::Static)];
        let mut log = part.log.lock();
        let mut ids = self.ids.lock();
        let old_ids: BTreeSet<u64> = {
            let table = part.table.read();
            range_of(&table, intersection_id).map(|(_, e)| e.entry_id).collect()
        };
        let mut new_ids = BTreeSet::new();
        for e in &entries {
            if !new_ids.insert(e.entry_id) || (ids.contains(&e.entry_id) && !old_ids.contains(&e.entry_id)) {
                return Err(PoolError::DuplicateId(e.entry_id));
            }
        }

        let first_seq = part.table.read().next_seq;
        let rows: Vec<(u64, KnowledgeEntry)> = entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| (first_seq + i as u64, e))
            .collect();
        let line = LogLine::Refresh {
            intersection_id: intersection_id.to_string(),
            rows,
        };
        self.append(&mut log, &line)?;
        let LogLine::Refresh { rows, .. } = line else { unreachable!() };

        let mut table = part.table.write();
        apply_refresh(&mut table, intersection_id, rows, &mut ids, &old_ids);
        Ok(Receipt {
            entry_id: 0,
            partition: Partition::Static,
            seq: table.next_seq.saturating_sub(1),
        })
    }

    /// Drops rows older than the partition's retention relative to `now_us`.
    pub fn compact(&self, p: Partition, now_us: i64) -> Result<usize, PoolError> {
        let retention_s = match p {
            Partition::Static => return Err(PoolError::StaticCompaction),
            Partition::Hf => self.options.retention_hf_s,
            Partition::Sf => self.options.retention_sf_s,
        };
        let cutoff = now_us.saturating_sub((retention_s * 1e6).round() as i64);
        let part = &self.parts[slot(p)];
        let mut log = part.log.lock();
        let stale: Vec<IndexKey> = part
            .table
            .read()
            .index
            .iter()
            .filter(|(k, _)| k.1 < cutoff)
            .map(|(k, _)| k.clone())
            .collect();
        if stale.is_empty() {
            return Ok(0);
        }

        let mut table = part.table.write();
        let mut ids = self.ids.lock();
        let mut removed = Vec::with_capacity(stale.len());
        for k in &stale {
            if let Some(e) = table.index.remove(k) {
                ids.remove(&e.entry_id);
                removed.push((k.clone(), e));
            }
        }
        if let Some(dir) = &self.dir {
            if let Err(e) = rewrite_log(dir, p, &table, self.options.fsync, &mut log) {
                // Keep memory and disk in agreement.
                for (k, e) in removed {
                    ids.insert(e.entry_id);
                    table.index.insert(k, e);
                }
                return Err(e);
            }
        }
        Ok(stale.len())
    }

    /// Compacts both dynamic partitions relative to their newest row.
    pub fn compact_dynamic(&self) -> Result<usize, PoolError> {
        let mut removed = 0;
        for p in [Partition::Hf, Partition::Sf] {
            let newest = self.parts[slot(p)].table.read().newest_timestamp();
            if let Some(now) = newest {
                removed += self.compact(p, now)?;
            }
        }
        Ok(removed)
    }

    /// Forces every log to stable storage.
    pub fn sync(&self) -> Result<(), PoolError> {
        for part in &self.parts {
            if let Some(f) = part.log.lock().as_mut() {
                f.sync_all().map_err(backend)?;
            }
        }
        Ok(())
    }
}

fn range_of<'a>(table: &'a Table, intersection_id: &str) -> impl DoubleEndedIterator<Item = (&'a IndexKey, &'a Arc<KnowledgeEntry>)> {
    let lo = (intersection_id.to_string(), i64::MIN, 0);
    let hi = (intersection_id.to_string(), i64::MAX, u64::MAX);
    table.index.range((Bound::Included(lo), Bound::Included(hi)))
}

fn apply_refresh(
    table: &mut Table,
    intersection_id: &str,
    rows: Vec<(u64, KnowledgeEntry)>,
    ids: &mut BTreeSet<u64>,
    old_ids: &BTreeSet<u64>,
) {
    let old_keys: Vec<IndexKey> = range_of(table, intersection_id).map(|(k, _)| k.clone()).collect();
    for k in old_keys {
        table.index.remove(&k);
    }
    for id in old_ids {
        ids.remove(id);
    }
    for (seq, e) in rows {
        ids.insert(e.entry_id);
        table.insert(seq, Arc::new(e));
    }
}

/// Rebuilds the table from a log; returns the byte length of the valid prefix.
fn replay(file: &mut File, table: &mut Table, ids: &mut BTreeSet<u64>, p: Partition) -> Result<u64, String> {
    file.seek(SeekFrom::Start(0)).map_err(|e| e.to_string())?;
    let mut reader = BufReader::new(&*file);
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            // Torn final write.
            break;
        }
        let parsed: LogLine = serde_json::from_str(line.trim_end()).map_err(|e| format!("corrupt record at byte {good}: {e}"))?;
        match parsed {
            LogLine::Insert { seq, entry } => {
                if entry.partition != Some(p) {
                    return Err(format!("row {} is not tagged {p}", entry.entry_id));
                }
                ids.insert(entry.entry_id);
                table.insert(seq, Arc::new(entry));
            }
            LogLine::Refresh { intersection_id, rows } => {
                let old_ids: BTreeSet<u64> = range_of(table, &intersection_id).map(|(_, e)| e.entry_id).collect();
                apply_refresh(table, &intersection_id, rows, ids, &old_ids);
            }
        }
        good += n as u64;
    }
    Ok(good)
}

fn rewrite_log(dir: &Path, p: Partition, table: &Table, fsync: bool, log: &mut Option<File>) -> Result<(), PoolError> {
    let path = dir.join(file_name(p));
    let tmp = dir.join(format!("{}.tmp", file_name(p)));
    {
        let mut out = std::io::BufWriter::new(File::create(&tmp).map_err(backend)?);
        for ((_, _, seq), e) in &table.index {
            let line = LogLine::Insert {
                seq: *seq,
                entry: (**e).clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(backend)?;
            out.write_all(b"\n").map_err(backend)?;
        }
        let file = out.into_inner().map_err(|e| backend(e.error()))?;
        if fsync {
            file.sync_all().map_err(backend)?;
        }
    }
    fs::rename(&tmp, &path).map_err(backend)?;
    *log = Some(OpenOptions::new().append(true).open(&path).map_err(backend)?);
    Ok(())
}

impl PoolWriter for PoolStore {
    fn insert(&self, entry: KnowledgeEntry) -> Result<Receipt, PoolError> {
        entry.anchor.validate()?;
        let p = entry.partition.ok_or(PoolError::Untagged(entry.entry_id))?;
        let entry_id = entry.entry_id;
        if !self.ids.lock().insert(entry_id) {
            return Err(PoolError::DuplicateId(entry_id));
        }
        let part = &self.parts[slot(p)];
        let mut log = part.log.lock();
        let seq = part.table.read().next_seq;
        let line = LogLine::Insert { seq, entry };
        if let Err(e) = self.append(&mut log, &line) {
            self.ids.lock().remove(&entry_id);
            return Err(e);
        }
        let LogLine::Insert { entry, .. } = line else { unreachable!() };
        part.table.write().insert(seq, Arc::new(entry));
        Ok(Receipt {
            entry_id,
            partition: p,
            seq,
        })
    }
}

impl PoolReader for PoolStore {
    fn query_window(&self, q: &WindowQuery) -> Result<Vec<Arc<KnowledgeEntry>>, PoolError> {
        q.validate()?;
        let table = self.parts[slot(q.partition)].table.read();
        let lo = (q.intersection_id.clone(), q.t0_us, 0);
        let hi = (q.intersection_id.clone(), q.t1_us, u64::MAX);
        Ok(table
            .index
            .range((Bound::Included(lo), Bound::Included(hi)))
            .rev()
            .map(|(_, e)| e)
            .filter(|e| q.matches(e))
            .take(q.limit)
            .cloned()
            .collect())
    }
}
