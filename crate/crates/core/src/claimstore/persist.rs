// On-disk formats. All integers little-endian.
//
// log.bin (append-only, source of truth):
//   LOG     := 'CGL1' + ENTRY*
//   ENTRY   := u32 LEN(PAYLOAD) + u32 CRC32(PAYLOAD) + PAYLOAD
//   PAYLOAD := u32 LEN(JSON) + JSON(LogEvent) + f32*   (descriptor rows of an enroll event)
//
// snapshot.bin (compaction of a log prefix):
//   SNAP    := 'CGS1' + u64 EVENTS + u64 LOG_OFFSET + u32 CRC32(JSON) + u32 LEN(JSON) + JSON(SnapshotBody)
//
// features.f32 (descriptor rows covered by the snapshot, enrollment order):
//   FEAT    := 'CGF1' + u32 BLOCKS + BLOCKS * (u32 DIM + f32 WEIGHT) + ROWS * TOTAL_DIM * f32
//
// A torn final log entry (crash mid-append) is dropped on open. Any other
// inconsistency in the snapshot pair falls back to a full log replay.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{Adjudication, AuditEntry, ClaimRecord, ClaimStatus, TimestampMs};
use super::StoreError;
use crate::features::{BlockWeights, FusionConfig};

pub const LOG_FILE: &str = "log.bin";
pub const SNAPSHOT_FILE: &str = "snapshot.bin";
pub const FEATURES_FILE: &str = "features.f32";

const LOG_MAGIC: &[u8; 4] = b"CGL1";
const SNAPSHOT_MAGIC: &[u8; 4] = b"CGS1";
const FEATURES_MAGIC: &[u8; 4] = b"CGF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub claim_id: String,
    pub vehicle_id: String,
    pub image_id: String,
    pub enrolled_at: TimestampMs,
    pub enrollment_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Init {
        layout: FusionConfig,
    },
    Enroll {
        record: ClaimRecord,
        features: Vec<FeatureMeta>,
        at: TimestampMs,
    },
    Status {
        claim_id: String,
        from: ClaimStatus,
        to: ClaimStatus,
        adjudication: Option<Adjudication>,
        at: TimestampMs,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBody {
    pub layout: FusionConfig,
    pub claims: Vec<ClaimRecord>,
    pub features: Vec<FeatureMeta>,
    pub audit: Vec<AuditEntry>,
    pub next_seq: u64,
}

fn corrupt(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_entry(event: &LogEvent, rows: &[&[f32]]) -> Vec<u8> {
    let json = serde_json::to_vec(event).expect("log events always serialize");
    let mut payload =
        Vec::with_capacity(4 + json.len() + rows.iter().map(|r| r.len() * 4).sum::<usize>());
    payload.extend((json.len() as u32).to_le_bytes());
    payload.extend(&json);
    for row in rows {
        for x in *row {
            payload.extend(x.to_le_bytes());
        }
    }
    let mut entry = Vec::with_capacity(8 + payload.len());
    entry.extend((payload.len() as u32).to_le_bytes());
    entry.extend(crc32fast::hash(&payload).to_le_bytes());
    entry.extend(payload);
    entry
}

/// One decoded log entry: the event and any trailing descriptor values.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub event: LogEvent,
    pub values: Vec<f32>,
}

pub struct LogScan {
    pub entries: Vec<LogEntry>,
    /// Byte offset just past the last intact entry.
    pub valid_len: u64,
    pub torn_tail: bool,
}

/// Reads entries starting at `offset` (which must be an entry boundary).
pub fn scan_log(path: &Path, offset: u64) -> Result<LogScan, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 || &bytes[..4] != LOG_MAGIC {
        return Err(corrupt(path, "missing CGL1 header"));
    }
    let start = offset.max(4) as usize;
    if start > bytes.len() {
        return Err(corrupt(path, format!("offset {start} past end of log")));
    }
    let mut pos = start;
    let mut entries = Vec::new();
    let mut torn_tail = false;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 8 {
            torn_tail = true;
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if rest.len() < 8 + len {
            torn_tail = true;
            break;
        }
        let payload = &rest[8..8 + len];
        if crc32fast::hash(payload) != crc {
            if pos + 8 + len == bytes.len() {
                torn_tail = true;
                break;
            }
            return Err(corrupt(
                path,
                format!("checksum mismatch in entry at byte {pos}"),
            ));
        }
        entries.push(decode_payload(path, pos, payload)?);
        pos += 8 + len;
    }
    Ok(LogScan {
        entries,
        valid_len: pos as u64,
        torn_tail,
    })
}

fn decode_payload(path: &Path, pos: usize, payload: &[u8]) -> Result<LogEntry, StoreError> {
    if payload.len() < 4 {
        return Err(corrupt(path, format!("short payload at byte {pos}")));
    }
    let json_len = u32::from_le_bytes(payload[0..4].try_into().unwrap()) as usize;
    if payload.len() < 4 + json_len || !(payload.len() - 4 - json_len).is_multiple_of(4) {
        return Err(corrupt(path, format!("malformed payload at byte {pos}")));
    }
    let event: LogEvent = serde_json::from_slice(&payload[4..4 + json_len])
        .map_err(|e| corrupt(path, format!("entry at byte {pos}: {e}")))?;
    let values = payload[4 + json_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(LogEntry { event, values })
}

pub struct LogWriter {
    path: PathBuf,
    file: File,
    len: u64,
    sync: bool,
}

impl LogWriter {
    pub fn create(path: &Path, sync: bool) -> Result<Self, StoreError> {
        let mut file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.write_all(LOG_MAGIC).map_err(io_err(path))?;
        if sync {
            file.sync_data().map_err(io_err(path))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            len: LOG_MAGIC.len() as u64,
            sync,
        })
    }

    /// Opens for append, discarding bytes past `valid_len`.
    pub fn open(path: &Path, valid_len: u64, sync: bool) -> Result<Self, StoreError> {
        let mut file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        let actual = file.metadata().map_err(io_err(path))?.len();
        if actual != valid_len {
            log::warn!(
                "{}: dropping {} trailing bytes of a torn entry",
                path.display(),
                actual - valid_len
            );
            file.set_len(valid_len).map_err(io_err(path))?;
        }
        file.seek(SeekFrom::Start(valid_len))
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            len: valid_len,
            sync,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn append(&mut self, entry: &[u8]) -> Result<(), StoreError> {
        let path = self.path.clone();
        let res = self.file.write_all(entry).and_then(|_| {
            if self.sync {
                self.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = res {
            // roll back a partial write so the next append starts on a boundary
            let _ = self.file.set_len(self.len);
            let _ = self.file.seek(SeekFrom::Start(self.len));
            return Err(io_err(&path)(e));
        }
        self.len += entry.len() as u64;
        Ok(())
    }
}

pub fn write_snapshot(
    dir: &Path,
    events: u64,
    log_offset: u64,
    body: &SnapshotBody,
    rows: impl Iterator<Item = impl AsRef<[f32]>>,
) -> Result<(), StoreError> {
    let feat_path = dir.join(FEATURES_FILE);
    let feat_tmp = dir.join(format!("{FEATURES_FILE}.tmp"));
    write_features_file(&feat_tmp, &body.layout, rows)?;

    let snap_path = dir.join(SNAPSHOT_FILE);
    let snap_tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    let json = serde_json::to_vec(body).expect("snapshot body always serializes");
    let mut bytes = Vec::with_capacity(32 + json.len());
    bytes.extend(SNAPSHOT_MAGIC);
    bytes.extend(events.to_le_bytes());
    bytes.extend(log_offset.to_le_bytes());
    bytes.extend(crc32fast::hash(&json).to_le_bytes());
    bytes.extend((json.len() as u32).to_le_bytes());
    bytes.extend(json);
    write_synced(&snap_tmp, &bytes)?;

    fs::rename(&feat_tmp, &feat_path).map_err(io_err(&feat_path))?;
    fs::rename(&snap_tmp, &snap_path).map_err(io_err(&snap_path))?;
    Ok(())
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

pub struct LoadedSnapshot {
    pub events: u64,
    pub log_offset: u64,
    pub body: SnapshotBody,
    pub rows: Vec<f32>,
}

/// Returns `Ok(None)` when no snapshot exists.
pub fn read_snapshot(dir: &Path) -> Result<Option<LoadedSnapshot>, StoreError> {
    let path = dir.join(SNAPSHOT_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&path)(e)),
    };
    if bytes.len() < 28 || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(corrupt(&path, "bad snapshot header"));
    }
    let events = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let log_offset = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let crc = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
    let json = bytes
        .get(28..28 + len)
        .ok_or_else(|| corrupt(&path, "truncated snapshot body"))?;
    if crc32fast::hash(json) != crc {
        return Err(corrupt(&path, "snapshot checksum mismatch"));
    }
    let body: SnapshotBody =
        serde_json::from_slice(json).map_err(|e| corrupt(&path, e.to_string()))?;
    let (layout, rows) = read_features_file(&dir.join(FEATURES_FILE))?;
    if !layout_matches_header(&body.layout, &layout) {
        return Err(corrupt(
            &path,
            "features.f32 header disagrees with snapshot layout",
        ));
    }
    if rows.len() != body.features.len() * body.layout.total_dim() {
        return Err(corrupt(
            &path,
            "features.f32 row count disagrees with snapshot",
        ));
    }
    Ok(Some(LoadedSnapshot {
        events,
        log_offset,
        body,
        rows,
    }))
}

/// Block header as stored in `features.f32`: `(dim, weight)` per block.
pub type BlockHeader = Vec<(u32, f32)>;

pub fn block_header(layout: &FusionConfig) -> BlockHeader {
    let w = layout.block_weights;
    vec![
        (layout.local_dim as u32, w.local as f32),
        (layout.global_dim as u32, w.global as f32),
        (layout.hist_dim() as u32, w.hist as f32),
    ]
}

fn layout_matches_header(layout: &FusionConfig, header: &BlockHeader) -> bool {
    block_header(layout) == *header
}

/// Rebuilds a layout from a `features.f32` header. Weights are widened from
/// f32, so they equal the original only when exactly representable.
pub fn layout_from_header(header: &BlockHeader) -> Option<FusionConfig> {
    match header.as_slice() {
        [(ld, lw), (gd, gw), (hd, hw)] if hd % 3 == 0 => Some(FusionConfig {
            local_dim: *ld as usize,
            global_dim: *gd as usize,
            hist_bins: (*hd / 3) as usize,
            block_weights: BlockWeights {
                local: *lw as f64,
                global: *gw as f64,
                hist: *hw as f64,
            },
        }),
        _ => None,
    }
}

pub fn write_features_file(
    path: &Path,
    layout: &FusionConfig,
    rows: impl Iterator<Item = impl AsRef<[f32]>>,
) -> Result<(), StoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = block_header(layout);
    let mut write = |b: &[u8]| w.write_all(b).map_err(io_err(path));
    write(FEATURES_MAGIC)?;
    write(&(header.len() as u32).to_le_bytes())?;
    for (dim, weight) in &header {
        write(&dim.to_le_bytes())?;
        write(&weight.to_le_bytes())?;
    }
    for row in rows {
        let row = row.as_ref();
        if row.len() != layout.total_dim() {
            return Err(StoreError::LayoutMismatch {
                message: format!(
                    "row of dim {} in a {}-dim store",
                    row.len(),
                    layout.total_dim()
                ),
            });
        }
        for x in row {
            write(&x.to_le_bytes())?;
        }
    }
    let file = w.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    file.sync_all().map_err(io_err(path))
}

/// Returns the block header and the flat row-major values.
pub fn read_features_file(path: &Path) -> Result<(BlockHeader, Vec<f32>), StoreError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() < 8 || &bytes[..4] != FEATURES_MAGIC {
        return Err(corrupt(path, "missing CGF1 header"));
    }
    let blocks = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let data_start = 8 + blocks * 8;
    if bytes.len() < data_start {
        return Err(corrupt(path, "truncated block header"));
    }
    let header: BlockHeader = bytes[8..data_start]
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            )
        })
        .collect();
    let total: usize = header.iter().map(|(d, _)| *d as usize).sum();
    let data = &bytes[data_start..];
    if data.len() % 4 != 0 || (total > 0 && (data.len() / 4) % total != 0) {
        return Err(corrupt(path, "partial descriptor row"));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_file_header_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.f32");
        let layout = FusionConfig {
            local_dim: 1,
            global_dim: 1,
            hist_bins: 1,
            block_weights: BlockWeights {
                local: 1.0,
                global: 0.5,
                hist: 0.0,
            },
        };
        write_features_file(&path, &layout, [vec![1.0f32, 2.0, 3.0, 4.0, 5.0]].iter()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut want = b"CGF1".to_vec();
        want.extend(3u32.to_le_bytes());
        for (d, w) in [(1u32, 1.0f32), (1, 0.5), (3, 0.0)] {
            want.extend(d.to_le_bytes());
            want.extend(w.to_le_bytes());
        }
        for x in [1.0f32, 2.0, 3.0, 4.0, 5.0] {
            want.extend(x.to_le_bytes());
        }
        assert_eq!(bytes, want);
        let (header, rows) = read_features_file(&path).unwrap();
        assert_eq!(layout_from_header(&header), Some(layout));
        assert_eq!(rows, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn torn_tail_is_detected_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let mut w = LogWriter::create(&path, false).unwrap();
        let ev = LogEvent::Init {
            layout: FusionConfig::default(),
        };
        let entry = encode_entry(&ev, &[]);
        w.append(&entry).unwrap();
        w.append(&entry[..entry.len() - 3]).unwrap();
        let scan = scan_log(&path, 0).unwrap();
        assert_eq!(scan.entries.len(), 1);
        assert!(scan.torn_tail);
        assert_eq!(scan.valid_len, 4 + entry.len() as u64);
    }

    #[test]
    fn mid_log_corruption_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LOG_FILE);
        let mut w = LogWriter::create(&path, false).unwrap();
        let entry = encode_entry(
            &LogEvent::Init {
                layout: FusionConfig::default(),
            },
            &[],
        );
        w.append(&entry).unwrap();
        w.append(&entry).unwrap();
        drop(w);
        let mut bytes = fs::read(&path).unwrap();
        bytes[4 + 12] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            scan_log(&path, 0),
            Err(StoreError::Corrupt { .. })
        ));
    }
}
