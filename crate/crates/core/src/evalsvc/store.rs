use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Append-only JSON-lines log. Each line is `<crc32 hex> <json>`; the CRC
/// covers the JSON bytes.
#[derive(Debug)]
pub struct LogFile<T> {
    path: PathBuf,
    file: File,
    _row: PhantomData<T>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    /// Lines rejected by checksum or parse.
    pub skipped: usize,
    /// Bytes of an unterminated final line removed on open.
    pub truncated: u64,
}

pub fn encode_line<T: Serialize>(row: &T) -> std::io::Result<String> {
    let json = serde_json::to_string(row)?;
    Ok(format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes())))
}

pub fn decode_line<T: DeserializeOwned>(line: &str) -> Option<T> {
    let (crc, json) = line.split_once(' ')?;
    let crc = u32::from_str_radix(crc, 16).ok()?;
    if crc32fast::hash(json.as_bytes()) != crc {
        return None;
    }
    serde_json::from_str(json).ok()
}

impl<T: Serialize + DeserializeOwned> LogFile<T> {
    /// Opens or creates the log, returning every intact row. A final line
    /// without a newline was never acknowledged and is cut off so the next
    /// append starts on a fresh line.
    pub fn open(path: &Path) -> std::io::Result<(Self, Vec<T>, LoadStats)> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut stats = LoadStats::default();
        let mut rows = Vec::new();
        let mut reader = BufReader::new(&file);
        let mut good_end = 0u64;
        let mut pos = 0u64;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            pos += n as u64;
            if buf.last() != Some(&b'\n') {
                break;
            }
            good_end = pos;
            let line = String::from_utf8_lossy(&buf[..buf.len() - 1]);
            if line.trim().is_empty() {
                continue;
            }
            match decode_line(&line) {
                Some(row) => rows.push(row),
                None => stats.skipped += 1,
            }
        }
        drop(reader);
        let len = file.seek(SeekFrom::End(0))?;
        if len > good_end {
            stats.truncated = len - good_end;
            file.set_len(good_end)?;
            file.sync_data()?;
        }
        stats.rows = rows.len();
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                _row: PhantomData,
            },
            rows,
            stats,
        ))
    }

    /// Writes one row and syncs it to disk before returning.
    pub fn append(&mut self, row: &T) -> std::io::Result<()> {
        self.file.write_all(encode_line(row)?.as_bytes())?;
        self.file.sync_data()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_torn_tail() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("log.jsonl");
        let (mut log, rows, _) = LogFile::<Vec<u32>>::open(&p).unwrap();
        assert!(rows.is_empty());
        log.append(&vec![1, 2]).unwrap();
        log.append(&vec![3]).unwrap();
        drop(log);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"deadbeef [4,").unwrap();
        drop(f);
        let (mut log, rows, stats) = LogFile::<Vec<u32>>::open(&p).unwrap();
        assert_eq!(rows, vec![vec![1, 2], vec![3]]);
        assert_eq!(stats.truncated, 12);
        log.append(&vec![5]).unwrap();
        drop(log);
        let (_, rows, stats) = LogFile::<Vec<u32>>::open(&p).unwrap();
        assert_eq!(rows, vec![vec![1, 2], vec![3], vec![5]]);
        assert_eq!(stats, LoadStats { rows: 3, skipped: 0, truncated: 0 });
    }

    #[test]
    fn corrupt_line_is_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("log.jsonl");
        let good = encode_line(&7u32).unwrap();
        let bad = good.replace('7', "8");
        std::fs::write(&p, format!("{good}{bad}{good}")).unwrap();
        let (_, rows, stats) = LogFile::<u32>::open(&p).unwrap();
        assert_eq!(rows, vec![7, 7]);
        assert_eq!(stats.skipped, 1);
    }
}
