//! Append-only JSON-lines event log and state snapshots.
//!
//! One record per line, sequence numbers gapless from 1. The records for one
//! decided event are written as a group ending with its DECISION record; a
//! group without its DECISION is incomplete and gets truncated on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::ThreatReport;
use crate::policy::Decision;
use crate::resource::{AccessEvent, AppId, DeviceDescriptor};

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyChange {
    pub version: u64,
    pub document: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineChange {
    pub device_id: String,
    pub app_id: AppId,
    pub lifted: bool,
    /// Set when the change came from the mitigation of this event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Record {
    Session(DeviceDescriptor),
    Event(AccessEvent),
    Threat(ThreatReport),
    Quarantine(QuarantineChange),
    Decision(Decision),
    PolicyChange(PolicyChange),
}

impl Record {
    /// Whether this record leaves an event group open.
    fn opens_group(&self) -> bool {
        match self {
            Record::Event(_) | Record::Threat(_) => true,
            Record::Quarantine(q) => q.event_seq.is_some(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLogRecord {
    pub seq: u64,
    /// Server clock at append time.
    pub ts_ms: u64,
    #[serde(flatten)]
    pub record: Record,
}

/// Result of scanning a log file.
#[derive(Debug, Default)]
pub struct LogScan {
    /// Complete records up to the last commit point.
    pub records: Vec<EventLogRecord>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    pub warnings: Vec<String>,
}

pub fn scan_log(path: &Path) -> io::Result<LogScan> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(LogScan::default()),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut scan = LogScan::default();
    let mut pending: Vec<EventLogRecord> = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();

    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        offset += n as u64;
        if !line.ends_with('\n') {
            scan.warnings.push(format!("torn record at byte {}: dropped", offset - n as u64));
            break;
        }
        let rec: EventLogRecord = match serde_json::from_str(line.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                scan.warnings.push(format!("unreadable record at byte {}: {e}; log truncated", offset - n as u64));
                break;
            }
        };
        let expected = scan.records.len() as u64 + pending.len() as u64 + 1;
        if rec.seq != expected {
            scan.warnings.push(format!("sequence gap: expected {expected}, found {}; log truncated", rec.seq));
            break;
        }
        let open = rec.record.opens_group();
        pending.push(rec);
        if !open {
            scan.records.append(&mut pending);
            scan.committed_len = offset;
        }
    }
    if !pending.is_empty() {
        scan.warnings.push(format!("incomplete event group of {} record(s) dropped", pending.len()));
    }
    Ok(scan)
}

/// Writer half of the log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    writer: BufWriter<File>,
    next_seq: u64,
}

impl EventLog {
    /// Open `dir/events.log` for appending, truncating anything past the last
    /// commit point. Returns the committed records.
    pub fn open(dir: &Path) -> io::Result<(EventLog, LogScan)> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let scan = scan_log(&path)?;
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path)?;
        file.set_len(scan.committed_len)?;
        let mut writer = BufWriter::new(file);
        io::Seek::seek(&mut writer, io::SeekFrom::End(0))?;
        let log = EventLog { path, writer, next_seq: scan.records.len() as u64 + 1 };
        Ok((log, scan))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Sequence number of the last appended record.
    pub fn last_seq(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn append(&mut self, ts_ms: u64, record: Record) -> io::Result<u64> {
        let seq = self.next_seq;
        let rec = EventLogRecord { seq, ts_ms, record };
        serde_json::to_writer(&mut self.writer, &rec)?;
        self.writer.write_all(b"\n")?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Write `value` to `dir/snapshot.json` via a temp file and rename.
pub fn write_snapshot<T: Serialize>(dir: &Path, value: &T) -> io::Result<()> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, value)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(tmp, dir.join(SNAPSHOT_FILE))
}

pub fn read_snapshot<T: DeserializeOwned>(dir: &Path) -> io::Result<Option<T>> {
    match File::open(dir.join(SNAPSHOT_FILE)) {
        Ok(f) => Ok(Some(serde_json::from_reader(BufReader::new(f))?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Verdict;
    use crate::resource::{Action, AppState, Resource};

    fn event(seq: u64) -> AccessEvent {
        AccessEvent {
            event_seq: seq,
            device_id: "d".into(),
            app_id: AppId::new("a.b").unwrap(),
            resource: Resource::Gps,
            action: Action::Read,
            app_state: AppState::Foreground,
            at_ms: seq,
            payload_bytes: 0,
            pre_blocked: false,
        }
    }

    fn decision(seq: u64) -> Decision {
        Decision {
            device_id: "d".into(),
            event_seq: seq,
            verdict: Verdict::Allow,
            matched_rule_id: "DEFAULT".into(),
            policy_version: 1,
            constraints_applied: None,
            mitigation: None,
            threat_id: None,
            stale: false,
        }
    }

    #[test]
    fn record_shape() {
        let rec = EventLogRecord {
            seq: 1,
            ts_ms: 5,
            record: Record::PolicyChange(PolicyChange { version: 1, document: "{}".into() }),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert_eq!(line, r#"{"seq":1,"ts_ms":5,"kind":"POLICY_CHANGE","payload":{"version":1,"document":"{}"}}"#);
        assert_eq!(serde_json::from_str::<EventLogRecord>(&line).unwrap(), rec);
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut log, scan) = EventLog::open(dir.path()).unwrap();
            assert!(scan.records.is_empty());
            for seq in 1..=3 {
                log.append(0, Record::Event(event(seq))).unwrap();
                log.append(0, Record::Decision(decision(seq))).unwrap();
            }
            log.flush().unwrap();
        }
        let (log, scan) = EventLog::open(dir.path()).unwrap();
        assert_eq!(scan.records.len(), 6);
        assert!(scan.warnings.is_empty());
        assert_eq!(log.last_seq(), 6);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut log, _) = EventLog::open(dir.path()).unwrap();
            log.append(0, Record::Event(event(1))).unwrap();
            log.append(0, Record::Decision(decision(1))).unwrap();
            log.append(0, Record::Event(event(2))).unwrap();
            log.append(0, Record::Decision(decision(2))).unwrap();
            log.flush().unwrap();
        }
        let path = dir.path().join(LOG_FILE);
        let len = fs::metadata(&path).unwrap().len();
        OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 7).unwrap();

        let (mut log, scan) = EventLog::open(dir.path()).unwrap();
        assert_eq!(scan.records.len(), 2);
        assert_eq!(scan.warnings.len(), 2, "{:?}", scan.warnings);
        assert_eq!(log.last_seq(), 2);

        log.append(0, Record::Event(event(2))).unwrap();
        log.append(0, Record::Decision(decision(2))).unwrap();
        log.flush().unwrap();
        let scan = scan_log(&path).unwrap();
        let seqs: Vec<_> = scan.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, [1, 2, 3, 4]);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_snapshot::<Vec<u32>>(dir.path()).unwrap(), None);
        write_snapshot(dir.path(), &vec![1u32, 2, 3]).unwrap();
        assert_eq!(read_snapshot::<Vec<u32>>(dir.path()).unwrap(), Some(vec![1, 2, 3]));
    }
}
