//! Time-tag records and their CSV and binary file formats.
//!
//! CSV: header `channel,timestamp_ps`, channels `A`, `B`, `CLK`, LF endings.
//! Binary: little-endian `u64` record count, then per record one `u8`
//! channel code (0 = A, 1 = B, 2 = CLK) and a `u64` timestamp in ps.

use std::fmt;
use std::io::{BufRead, Read, Seek, SeekFrom, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Time-tagger input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
    #[serde(rename = "CLK")]
    Clk,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::A, Channel::B, Channel::Clk];

    pub fn code(self) -> u8 {
        match self {
            Channel::A => 0,
            Channel::B => 1,
            Channel::Clk => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Channel> {
        match code {
            0 => Some(Channel::A),
            1 => Some(Channel::B),
            2 => Some(Channel::Clk),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::A => "A",
            Channel::B => "B",
            Channel::Clk => "CLK",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Channel> {
        match s {
            "A" => Ok(Channel::A),
            "B" => Ok(Channel::B),
            "CLK" => Ok(Channel::Clk),
            other => param(format!("unknown channel {other:?}")),
        }
    }
}

/// One detection or clock event, timestamp in integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTagRecord {
    pub timestamp_ps: u64,
    pub channel: Channel,
}

impl TimeTagRecord {
    pub fn new(channel: Channel, timestamp_ps: u64) -> Self {
        TimeTagRecord { timestamp_ps, channel }
    }
}

/// On-disk encoding of a [`TagStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    #[default]
    Csv,
    Binary,
}

impl FromStr for StreamFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(StreamFormat::Csv),
            "binary" | "bin" => Ok(StreamFormat::Binary),
            other => param(format!("unknown stream format {other:?}")),
        }
    }
}

/// Time-ordered tag list. Equal timestamps are ordered by channel code.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagStream {
    records: Vec<TimeTagRecord>,
}

impl TagStream {
    /// Accepts records already in stream order.
    pub fn new(records: Vec<TimeTagRecord>) -> Result<Self> {
        if let Some(i) = records.windows(2).position(|w| w[1].timestamp_ps < w[0].timestamp_ps) {
            return param(format!("timestamps decrease at record {}", i + 1));
        }
        Ok(TagStream { records })
    }

    pub fn from_unsorted(mut records: Vec<TimeTagRecord>) -> Self {
        records.sort_unstable();
        TagStream { records }
    }

    pub fn records(&self) -> &[TimeTagRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TimeTagRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        self.records.iter().any(|r| r.channel == channel)
    }

    /// Timestamps of one channel in order.
    pub fn timestamps(&self, channel: Channel) -> Vec<u64> {
        self.records.iter().filter(|r| r.channel == channel).map(|r| r.timestamp_ps).collect()
    }

    /// Appends records that do not precede the current last tag.
    pub fn extend_ordered(&mut self, more: &[TimeTagRecord]) -> Result<()> {
        if let (Some(last), Some(first)) = (self.records.last(), more.first()) {
            if first.timestamp_ps < last.timestamp_ps {
                return param("appended records precede the stream end");
            }
        }
        let start = self.records.len();
        self.records.extend_from_slice(more);
        if self.records[start..].windows(2).any(|w| w[1].timestamp_ps < w[0].timestamp_ps) {
            self.records.truncate(start);
            return param("appended records are not ordered");
        }
        Ok(())
    }

    /// Merges streams into one ordered stream.
    pub fn merge(streams: &[TagStream]) -> TagStream {
        let mut all: Vec<TimeTagRecord> = streams.iter().flat_map(|s| s.records.iter().copied()).collect();
        all.sort_unstable();
        TagStream { records: all }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"channel,timestamp_ps\n")?;
        for r in &self.records {
            writeln!(out, "{},{}", r.channel, r.timestamp_ps)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<TagStream> {
        Self::read(input, StreamFormat::Csv)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(9 * 4096);
        for chunk in self.records.chunks(4096) {
            buf.clear();
            for r in chunk {
                buf.push(r.channel.code());
                buf.extend_from_slice(&r.timestamp_ps.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads the binary format. Parse errors report the 1-based record index
    /// as the line.
    pub fn read_binary<R: Read>(input: R) -> Result<TagStream> {
        Self::read(std::io::BufReader::new(input), StreamFormat::Binary)
    }

    pub fn write<W: Write>(&self, out: W, format: StreamFormat) -> Result<()> {
        match format {
            StreamFormat::Csv => self.write_csv(out),
            StreamFormat::Binary => self.write_binary(out),
        }
    }

    pub fn read<R: BufRead>(input: R, format: StreamFormat) -> Result<TagStream> {
        let mut records = Vec::new();
        read_chunks(input, format, |chunk| {
            records.extend_from_slice(chunk);
            Ok(())
        })?;
        Ok(TagStream { records })
    }
}

const CHUNK: usize = 1 << 16;

/// Parses a stream file chunk by chunk without holding it in memory.
/// Returns the number of records read.
pub fn read_chunks<R, F>(input: R, format: StreamFormat, sink: F) -> Result<u64>
where
    R: BufRead,
    F: FnMut(&[TimeTagRecord]) -> Result<()>,
{
    match format {
        StreamFormat::Csv => read_csv_chunks(input, sink),
        StreamFormat::Binary => read_binary_chunks(input, sink),
    }
}

fn read_csv_chunks<R: BufRead, F: FnMut(&[TimeTagRecord]) -> Result<()>>(input: R, mut sink: F) -> Result<u64> {
    let mut buf = Vec::with_capacity(CHUNK);
    let mut last = 0u64;
    let mut total = 0u64;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim_end() != "channel,timestamp_ps" {
                return Err(Error::Parse { line: 1, message: "expected header channel,timestamp_ps".into() });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: lineno, message };
        let (ch, ts) = line.split_once(',').ok_or_else(|| bad(format!("expected two fields in {line:?}")))?;
        let channel: Channel = ch.parse().map_err(|_| bad(format!("unknown channel {ch:?}")))?;
        let timestamp_ps: u64 = ts.trim_end().parse().map_err(|_| bad(format!("bad timestamp {ts:?}")))?;
        if timestamp_ps < last {
            return Err(bad("timestamps decrease".into()));
        }
        last = timestamp_ps;
        buf.push(TimeTagRecord { timestamp_ps, channel });
        if buf.len() == CHUNK {
            total += buf.len() as u64;
            sink(&buf)?;
            buf.clear();
        }
    }
    total += buf.len() as u64;
    if !buf.is_empty() {
        sink(&buf)?;
    }
    Ok(total)
}

fn read_binary_chunks<R: Read, F: FnMut(&[TimeTagRecord]) -> Result<()>>(mut input: R, mut sink: F) -> Result<u64> {
    let mut head = [0u8; 8];
    input.read_exact(&mut head).map_err(|_| Error::Parse { line: 0, message: "missing record count".into() })?;
    let n = u64::from_le_bytes(head);
    let mut buf = Vec::with_capacity(CHUNK);
    let mut rec = [0u8; 9];
    let mut last = 0u64;
    for i in 0..n {
        let line = i as usize + 1;
        input
            .read_exact(&mut rec)
            .map_err(|_| Error::Parse { line, message: format!("truncated: expected {n} records") })?;
        let channel = Channel::from_code(rec[0])
            .ok_or_else(|| Error::Parse { line, message: format!("unknown channel code {}", rec[0]) })?;
        let timestamp_ps = u64::from_le_bytes(rec[1..9].try_into().expect("eight bytes"));
        if timestamp_ps < last {
            return Err(Error::Parse { line, message: "timestamps decrease".into() });
        }
        last = timestamp_ps;
        buf.push(TimeTagRecord { timestamp_ps, channel });
        if buf.len() == CHUNK {
            sink(&buf)?;
            buf.clear();
        }
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::Parse { line: n as usize + 1, message: "trailing bytes after last record".into() });
    }
    if !buf.is_empty() {
        sink(&buf)?;
    }
    Ok(n)
}

/// Incremental stream file writer. The binary record count is patched in by
/// [`TagWriter::finish`], so the target must be seekable.
pub struct TagWriter<W: Write + Seek> {
    out: W,
    format: StreamFormat,
    count: u64,
    last: u64,
    buf: Vec<u8>,
}

impl<W: Write + Seek> TagWriter<W> {
    pub fn new(mut out: W, format: StreamFormat) -> Result<Self> {
        match format {
            StreamFormat::Csv => out.write_all(b"channel,timestamp_ps\n")?,
            StreamFormat::Binary => out.write_all(&0u64.to_le_bytes())?,
        }
        Ok(TagWriter { out, format, count: 0, last: 0, buf: Vec::with_capacity(CHUNK * 9) })
    }

    /// Appends records; they must continue the time order.
    pub fn write(&mut self, records: &[TimeTagRecord]) -> Result<()> {
        self.buf.clear();
        for r in records {
            if r.timestamp_ps < self.last {
                return param(format!("record {} goes back in time", self.count + 1));
            }
            self.last = r.timestamp_ps;
            self.count += 1;
            match self.format {
                StreamFormat::Csv => writeln!(self.buf, "{},{}", r.channel, r.timestamp_ps)?,
                StreamFormat::Binary => {
                    self.buf.push(r.channel.code());
                    self.buf.extend_from_slice(&r.timestamp_ps.to_le_bytes());
                }
            }
        }
        self.out.write_all(&self.buf)?;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Flushes and returns the writer and the number of records.
    pub fn finish(mut self) -> Result<(W, u64)> {
        if self.format == StreamFormat::Binary {
            self.out.seek(SeekFrom::Start(0))?;
            self.out.write_all(&self.count.to_le_bytes())?;
            self.out.seek(SeekFrom::End(0))?;
        }
        self.out.flush()?;
        Ok((self.out, self.count))
    }
}

/// Keeps the records of one channel, preserving order.
pub fn split_stream(stream: &TagStream, channel: &str) -> Result<TagStream> {
    let channel: Channel = channel.parse()?;
    Ok(TagStream { records: stream.records.iter().filter(|r| r.channel == channel).copied().collect() })
}
