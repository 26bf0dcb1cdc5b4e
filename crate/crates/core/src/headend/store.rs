use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{detect_anomalies, AnomalyEvent, ReadingRecord, RecordError};
use crate::billing::Bill;

pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// One journal line. The on-disk files are JSON Lines of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum Entry {
    Reading(ReadingRecord),
    Anomaly(AnomalyEvent),
    Bill(Bill),
}

/// Result of offering a reading to the store.
#[derive(Debug, Clone, PartialEq)]
pub enum Recorded {
    Stored {
        anomalies: Vec<AnomalyEvent>,
    },
    /// Same `(address, seq)` and content as the meter's latest record.
    Duplicate,
}

struct Journal {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl Journal {
    fn io(&self, file: &str) -> impl FnOnce(io::Error) -> StoreError {
        let path = self.dir.join(file);
        move |source| StoreError::Io { path, source }
    }

    fn append(&mut self, entry: &Entry) -> Result<(), StoreError> {
        let line = serde_json::to_string(entry).expect("journal entries serialize");
        let err = self.io(LOG_FILE);
        writeln!(self.log, "{line}").map_err(err)
    }
}

/// Append-only reading store with an optional on-disk journal.
///
/// Without a directory everything lives in memory. With one, every change
/// is appended to `log.jsonl`; [`Store::snapshot`] folds the full state into
/// `snapshot.jsonl` and truncates the log. Opening replays the snapshot and
/// then the log.
#[derive(Default)]
pub struct Store {
    by_meter: HashMap<u32, Vec<ReadingRecord>>,
    reading_count: usize,
    anomalies: Vec<AnomalyEvent>,
    bills: Vec<Bill>,
    journal: Option<Journal>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("readings", &self.reading_count)
            .field("anomalies", &self.anomalies.len())
            .field("bills", &self.bills.len())
            .field("dir", &self.journal.as_ref().map(|j| &j.dir))
            .finish()
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and replays it.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let mut store = Self::default();
        for name in [SNAPSHOT_FILE, LOG_FILE] {
            let path = dir.join(name);
            if path.exists() {
                store.replay(&path)?;
            }
        }
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_at(&log_path))?;
        store.journal = Some(Journal {
            dir: dir.to_path_buf(),
            log: BufWriter::new(log),
        });
        Ok(store)
    }

    fn replay(&mut self, path: &Path) -> Result<(), StoreError> {
        let file = File::open(path).map_err(io_at(path))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_at(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let entry: Entry = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            match entry {
                Entry::Reading(r) => {
                    let r = r.normalized().map_err(|e: RecordError| corrupt(e.to_string()))?;
                    self.insert_sorted(r);
                }
                Entry::Anomaly(a) => self.anomalies.push(a),
                Entry::Bill(b) => self.bills.push(b),
            }
        }
        Ok(())
    }

    pub fn dir(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.dir.as_path())
    }

    fn insert_sorted(&mut self, r: ReadingRecord) {
        let list = self.by_meter.entry(r.address).or_insert_with(|| Vec::with_capacity(1));
        let at = list.partition_point(|x| x.sim_time <= r.sim_time);
        list.insert(at, r);
        self.reading_count += 1;
    }

    /// Appends a reading and runs anomaly detection against the meter's
    /// previous record. Detected anomalies are stored too.
    pub fn record_reading(&mut self, rec: ReadingRecord) -> Result<Recorded, StoreError> {
        let prev = self.latest(rec.address);
        if let Some(p) = prev {
            if p.seq == rec.seq && p.register == rec.register && p.status_flags == rec.status_flags {
                return Ok(Recorded::Duplicate);
            }
        }
        let anomalies = detect_anomalies(prev, &rec);
        if let Some(j) = self.journal.as_mut() {
            j.append(&Entry::Reading(rec.clone()))?;
            for a in &anomalies {
                j.append(&Entry::Anomaly(a.clone()))?;
            }
        }
        self.insert_sorted(rec);
        self.anomalies.extend(anomalies.iter().cloned());
        Ok(Recorded::Stored { anomalies })
    }

    /// Stores an anomaly that is not tied to a reading (unreachable meters).
    pub fn record_anomaly(&mut self, a: AnomalyEvent) -> Result<(), StoreError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&Entry::Anomaly(a.clone()))?;
        }
        self.anomalies.push(a);
        Ok(())
    }

    pub fn record_bill(&mut self, b: Bill) -> Result<(), StoreError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&Entry::Bill(b.clone()))?;
        }
        self.bills.push(b);
        Ok(())
    }

    pub fn latest(&self, address: u32) -> Option<&ReadingRecord> {
        self.by_meter.get(&address).and_then(|v| v.last())
    }

    /// Every record of `address`, sorted by `sim_time`.
    pub fn history(&self, address: u32) -> &[ReadingRecord] {
        self.by_meter.get(&address).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Records of `address` with `from <= sim_time <= to`, sorted.
    pub fn query_history(&self, address: u32, from: f64, to: f64) -> &[ReadingRecord] {
        let all = self.history(address);
        let lo = all.partition_point(|r| r.sim_time < from);
        let hi = all.partition_point(|r| r.sim_time <= to);
        &all[lo..hi.max(lo)]
    }

    pub fn reading_count(&self) -> usize {
        self.reading_count
    }

    pub fn addresses(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.by_meter.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn anomalies(&self) -> &[AnomalyEvent] {
        &self.anomalies
    }

    pub fn bills(&self) -> &[Bill] {
        &self.bills
    }

    /// Latest `sim_time` of anything stored; the clock a resumed run
    /// starts from.
    pub fn latest_time(&self) -> f64 {
        let r = self.by_meter.values().filter_map(|v| v.last()).map(|r| r.sim_time);
        let a = self.anomalies.iter().map(|a| a.sim_time);
        r.chain(a).fold(0.0, f64::max)
    }

    /// Pushes buffered journal lines to the OS and syncs the file.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(j) = self.journal.as_mut() {
            let err = j.io(LOG_FILE);
            j.log.flush().map_err(err)?;
            let err = j.io(LOG_FILE);
            j.log.get_ref().sync_data().map_err(err)?;
        }
        Ok(())
    }

    /// Rewrites the whole state to `snapshot.jsonl` and empties the log.
    pub fn snapshot(&mut self) -> Result<(), StoreError> {
        self.flush()?;
        let entries = self.entries();
        let Some(j) = self.journal.as_mut() else {
            return Ok(());
        };
        let tmp = j.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let file = File::create(&tmp).map_err(io_at(&tmp))?;
            let mut w = BufWriter::new(file);
            for e in &entries {
                let line = serde_json::to_string(e).expect("journal entries serialize");
                writeln!(w, "{line}").map_err(io_at(&tmp))?;
            }
            w.flush().map_err(io_at(&tmp))?;
            w.get_ref().sync_all().map_err(io_at(&tmp))?;
        }
        let snap = j.dir.join(SNAPSHOT_FILE);
        fs::rename(&tmp, &snap).map_err(io_at(&snap))?;
        let log_path = j.dir.join(LOG_FILE);
        File::create(&log_path).map_err(io_at(&log_path))?;
        j.log = BufWriter::new(
            OpenOptions::new()
                .append(true)
                .open(&log_path)
                .map_err(io_at(&log_path))?,
        );
        Ok(())
    }

    fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::with_capacity(self.reading_count + self.anomalies.len() + self.bills.len());
        for addr in self.addresses() {
            out.extend(self.history(addr).iter().cloned().map(Entry::Reading));
        }
        out.extend(self.anomalies.iter().cloned().map(Entry::Anomaly));
        out.extend(self.bills.iter().cloned().map(Entry::Bill));
        out
    }

    /// Readings as CSV (`address,sim_time,register,energy_kwh,flags`),
    /// grouped by address and sorted by time. `address` is 8 hex digits,
    /// `flags` the status byte in hex.
    pub fn export_csv<W: Write>(&self, addresses: &[u32], out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ReadingRecord::csv_header().split(','))?;
        for &addr in addresses {
            for r in self.history(addr) {
                w.write_record([
                    format!("{:08x}", r.address),
                    r.sim_time.to_string(),
                    r.register.to_string(),
                    r.energy_kwh.to_string(),
                    format!("{:02x}", r.status_flags.bits()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headend::AnomalyKind;
    use crate::meter::StatusFlags;

    fn rec(addr: u32, register: u32, t: f64, seq: u8) -> ReadingRecord {
        ReadingRecord::new(addr, register, 600, t, StatusFlags::empty(), 1, seq)
    }

    #[test]
    fn query_is_sorted_and_inclusive() {
        let mut s = Store::in_memory();
        s.record_reading(rec(1, 20, 20.0, 2)).unwrap();
        s.record_reading(rec(1, 10, 10.0, 1)).unwrap();
        let got: Vec<f64> = s.query_history(1, 0.0, 30.0).iter().map(|r| r.sim_time).collect();
        assert_eq!(got, [10.0, 20.0]);
        assert_eq!(s.query_history(1, 10.0, 10.0).len(), 1);
        assert!(s.query_history(1, 30.0, 0.0).is_empty());
        assert!(s.query_history(2, 0.0, 30.0).is_empty());
    }

    #[test]
    fn anomalies_detected_on_insert() {
        let mut s = Store::in_memory();
        s.record_reading(rec(1, 0xFFFF_FFF0, 1.0, 1)).unwrap();
        let Recorded::Stored { anomalies } = s.record_reading(rec(1, 0x10, 2.0, 2)).unwrap() else {
            panic!()
        };
        assert!(anomalies.is_empty());
        let Recorded::Stored { anomalies } = s.record_reading(rec(1, 0x8, 3.0, 3)).unwrap() else {
            panic!()
        };
        assert_eq!(anomalies[0].kind, AnomalyKind::ReadingDecreased);
        assert_eq!(s.anomalies().len(), 1);
    }

    #[test]
    fn duplicate_reply_is_dropped() {
        let mut s = Store::in_memory();
        s.record_reading(rec(1, 5, 1.0, 7)).unwrap();
        assert_eq!(s.record_reading(rec(1, 5, 1.1, 7)).unwrap(), Recorded::Duplicate);
        assert_eq!(s.reading_count(), 1);
    }

    #[test]
    fn journal_survives_reopen_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path()).unwrap();
            s.record_reading(rec(1, 5, 1.0, 1)).unwrap();
            s.record_reading(rec(2, 9, 2.0, 1)).unwrap();
            s.snapshot().unwrap();
            s.record_reading(rec(1, 3, 3.0, 2)).unwrap();
        }
        let mut s = Store::open(dir.path()).unwrap();
        assert_eq!(s.reading_count(), 3);
        assert_eq!(s.history(1).len(), 2);
        assert_eq!(s.anomalies().len(), 1);
        assert_eq!(s.latest_time(), 3.0);
        s.snapshot().unwrap();
        drop(s);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert!(log.is_empty());
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.reading_count(), 3);
    }

    #[test]
    fn reopened_times_are_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let times = [0.000009267614237491539, 0.1 + 0.2, 1.0000092676142374];
        {
            let mut s = Store::open(dir.path()).unwrap();
            for (i, t) in times.iter().enumerate() {
                s.record_reading(rec(1, i as u32, *t, i as u8)).unwrap();
            }
        }
        let s = Store::open(dir.path()).unwrap();
        let got: Vec<u64> = s.history(1).iter().map(|r| r.sim_time.to_bits()).collect();
        let want: Vec<u64> = times.iter().map(|t| t.to_bits()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn corrupt_line_is_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOG_FILE), "{\"entry\":\"reading\"}\n").unwrap();
        let err = Store::open(dir.path()).unwrap_err().to_string();
        assert!(err.contains("log.jsonl:1"), "{err}");
    }

    #[test]
    fn csv_export() {
        let mut s = Store::in_memory();
        s.record_reading(rec(0x2a, 900, 1.5, 1)).unwrap();
        let mut out = Vec::new();
        s.export_csv(&[0x2a], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "address,sim_time,register,energy_kwh,flags\n0000002a,1.5,900,1.500,00\n"
        );
    }
}
