//! Record framing and log backends.
//!
//! Each record is one line: `<byte length> <crc32 as 8 hex digits> <json>\n`.
//! A record either parses completely with a matching checksum or counts as
//! absent. Only the tail may be torn; damage followed by valid records is
//! reported as corruption.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{Event, StoreError};

pub const LOG_FILE: &str = "events.ndjson.log";

pub fn frame(json: &[u8]) -> Vec<u8> {
    let mut out = format!("{} {:08x} ", json.len(), crc32fast::hash(json)).into_bytes();
    out.extend_from_slice(json);
    out.push(b'\n');
    out
}

/// Decodes one record at the start of `buf`; returns the payload and the
/// number of bytes consumed, or `None` if the record is incomplete or damaged.
fn unframe(buf: &[u8]) -> Option<(&[u8], usize)> {
    let sp1 = buf.iter().position(|b| *b == b' ')?;
    let len: usize = std::str::from_utf8(&buf[..sp1]).ok()?.parse().ok()?;
    let rest = &buf[sp1 + 1..];
    if rest.len() < 9 || rest[8] != b' ' {
        return None;
    }
    let crc = u32::from_str_radix(std::str::from_utf8(&rest[..8]).ok()?, 16).ok()?;
    let body_start = sp1 + 1 + 9;
    let end = body_start.checked_add(len)?;
    if buf.len() <= end || buf[end] != b'\n' {
        return None;
    }
    let body = &buf[body_start..end];
    (crc32fast::hash(body) == crc).then_some((body, end + 1))
}

/// Parsed records plus the byte length of the valid prefix.
#[derive(Debug)]
pub struct Decoded {
    pub events: Vec<Event>,
    pub valid_len: usize,
    pub torn_tail: bool,
}

/// Decodes a whole log. A damaged final record is dropped as a torn write;
/// any other damage, a sequence gap, or an undecodable payload is corruption.
pub fn decode(buf: &[u8]) -> Result<Decoded, StoreError> {
    let mut events = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let expected = events.len() as u64 + 1;
        match unframe(&buf[pos..]) {
            Some((body, used)) => {
                let event: Event = serde_json::from_slice(body).map_err(|e| StoreError::CorruptLog {
                    seq: expected,
                    reason: format!("undecodable record: {e}"),
                })?;
                if event.seq != expected {
                    return Err(StoreError::CorruptLog {
                        seq: expected,
                        reason: format!("found seq {}", event.seq),
                    });
                }
                events.push(event);
                pos += used;
            }
            None => {
                // Torn only if nothing valid follows the damaged bytes.
                let next_line = buf[pos..].iter().position(|b| *b == b'\n').map(|i| pos + i + 1);
                let is_tail = match next_line {
                    None => true,
                    Some(n) => buf[n..].iter().all(|b| b.is_ascii_whitespace()),
                };
                if is_tail {
                    return Ok(Decoded {
                        events,
                        valid_len: pos,
                        torn_tail: true,
                    });
                }
                return Err(StoreError::CorruptLog {
                    seq: expected,
                    reason: "damaged record before end of log".into(),
                });
            }
        }
    }
    Ok(Decoded {
        events,
        valid_len: pos,
        torn_tail: false,
    })
}

/// Append-only storage of framed records.
pub trait EventLog: Send {
    fn append(&mut self, record: &[u8]) -> Result<(), StoreError>;
    fn read_all(&self) -> Result<Vec<Event>, StoreError>;
    fn len_bytes(&self) -> u64;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    bytes: Vec<u8>,
    max_bytes: Option<u64>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_limit(max_bytes: u64) -> Self {
        Self {
            bytes: Vec::new(),
            max_bytes: Some(max_bytes),
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes, max_bytes: None }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

fn check_room(current: u64, add: usize, limit: Option<u64>) -> Result<(), StoreError> {
    match limit {
        Some(max) if current + add as u64 > max => Err(StoreError::StorageFull { limit: max }),
        _ => Ok(()),
    }
}

impl EventLog for MemoryLog {
    fn append(&mut self, record: &[u8]) -> Result<(), StoreError> {
        check_room(self.bytes.len() as u64, record.len(), self.max_bytes)?;
        self.bytes.extend_from_slice(record);
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<Event>, StoreError> {
        Ok(decode(&self.bytes)?.events)
    }

    fn len_bytes(&self) -> u64 {
        self.bytes.len() as u64
    }
}

/// Log file under a data directory. Opening truncates a torn tail.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
    len: u64,
    max_bytes: Option<u64>,
}

impl FileLog {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let decoded = decode(&buf)?;
        if decoded.valid_len < buf.len() {
            file.set_len(decoded.valid_len as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self {
            path,
            file,
            len: decoded.valid_len as u64,
            max_bytes: None,
        })
    }

    pub fn with_capacity_limit(mut self, max_bytes: u64) -> Self {
        self.max_bytes = Some(max_bytes);
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventLog for FileLog {
    fn append(&mut self, record: &[u8]) -> Result<(), StoreError> {
        check_room(self.len, record.len(), self.max_bytes)?;
        if let Err(e) = self.file.write_all(record).and_then(|_| self.file.sync_data()) {
            // Drop whatever part of the record made it to disk.
            let _ = self.file.set_len(self.len);
            return Err(if e.kind() == std::io::ErrorKind::StorageFull {
                StoreError::StorageFull { limit: self.len }
            } else {
                e.into()
            });
        }
        self.len += record.len() as u64;
        Ok(())
    }

    fn read_all(&self) -> Result<Vec<Event>, StoreError> {
        let buf = std::fs::read(&self.path)?;
        Ok(decode(&buf)?.events)
    }

    fn len_bytes(&self) -> u64 {
        self.len
    }
}
