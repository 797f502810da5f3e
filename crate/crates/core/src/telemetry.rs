//! Uplink data model, CSV / newline-JSON parsing and the binary record store.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Exact header required by [`parse_uplink_csv`].
pub const CSV_HEADER: &str = "ts,gateway_id,rssi_dbm,snr_db,soil_humidity_pct,soil_temp_c";

pub const STORE_MAGIC: &[u8; 4] = b"SWV1";
pub const STORE_VERSION: u32 = 1;

/// One received LoRa packet.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkRecord {
    /// Seconds since the Unix epoch, UTC.
    pub ts: i64,
    pub gateway_id: String,
    pub rssi: f64,
    pub snr: f64,
    pub soil_humidity: Option<f64>,
    pub soil_temp: Option<f64>,
}

impl UplinkRecord {
    /// Checks the range invariants, reporting the first violated field.
    pub fn validate(&self) -> Result<()> {
        if self.ts <= 0 {
            return Err(Error::invalid("ts", format!("must be positive, got {}", self.ts)));
        }
        if self.gateway_id.is_empty() {
            return Err(Error::invalid("gateway_id", "must not be empty"));
        }
        check_range("rssi", self.rssi, -200.0, 0.0)?;
        check_range("snr", self.snr, -30.0, 30.0)?;
        if let Some(h) = self.soil_humidity {
            check_range("soil_humidity", h, 0.0, 100.0)?;
        }
        if let Some(t) = self.soil_temp {
            if !t.is_finite() {
                return Err(Error::invalid("soil_temp", "must be finite"));
            }
        }
        Ok(())
    }
}

fn check_range(field: &str, v: f64, low: f64, high: f64) -> Result<()> {
    if v.is_finite() && v >= low && v <= high {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} outside [{low}, {high}]")))
    }
}

/// Time-ordered set of uplinks; ties on `ts` are ordered by gateway id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordSet {
    records: Vec<UplinkRecord>,
    gateways: Vec<String>,
}

impl RecordSet {
    /// Validates every record and sorts into canonical order.
    pub fn new(mut records: Vec<UplinkRecord>) -> Result<Self> {
        for r in &records {
            r.validate()?;
        }
        records.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.gateway_id.cmp(&b.gateway_id)));
        let gateways = records.iter().map(|r| r.gateway_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        Ok(RecordSet { records, gateways })
    }

    pub fn records(&self) -> &[UplinkRecord] {
        &self.records
    }

    /// Distinct gateway ids, sorted.
    pub fn gateways(&self) -> &[String] {
        &self.gateways
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn for_gateway<'a>(&'a self, gateway: &'a str) -> impl Iterator<Item = &'a UplinkRecord> + 'a {
        self.records.iter().filter(move |r| r.gateway_id == gateway)
    }

    pub fn into_records(self) -> Vec<UplinkRecord> {
        self.records
    }
}

fn parse_opt(cell: &str, field: &str, line: u64) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse { line, message: format!("field `{field}`: `{cell}` is not a number") })
}

fn parse_req(cell: &str, field: &str, line: u64) -> Result<f64> {
    parse_opt(cell, field, line)?.ok_or_else(|| Error::Parse { line, message: format!("field `{field}` is required") })
}

/// Parses the six-column uplink CSV. Line numbers in errors are 1-based and
/// count the header.
pub fn parse_uplink_csv(text: &str) -> Result<RecordSet> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());

    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| Error::Parse { line: 1, message: e.to_string() })?,
        None => return Err(Error::Parse { line: 1, message: "missing header row".into() }),
    };
    let header_line = header.iter().collect::<Vec<_>>().join(",");
    if header_line.trim() != CSV_HEADER {
        return Err(Error::Parse { line: 1, message: format!("expected header `{CSV_HEADER}`, got `{header_line}`") });
    }

    let mut records = Vec::new();
    for row in rows {
        let row = row
            .map_err(|e| Error::Parse { line: e.position().map(|p| p.line()).unwrap_or(0), message: e.to_string() })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != 6 {
            return Err(Error::Parse { line, message: format!("expected 6 fields, found {}", row.len()) });
        }
        let ts = row[0]
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Parse { line, message: format!("field `ts`: `{}` is not an integer", &row[0]) })?;
        let record = UplinkRecord {
            ts,
            gateway_id: row[1].trim().to_string(),
            rssi: parse_req(&row[2], "rssi_dbm", line)?,
            snr: parse_req(&row[3], "snr_db", line)?,
            soil_humidity: parse_opt(&row[4], "soil_humidity_pct", line)?,
            soil_temp: parse_opt(&row[5], "soil_temp_c", line)?,
        };
        record.validate().map_err(|e| match e {
            Error::Validation { field, message, .. } => Error::Validation { field, line: Some(line), message },
            other => other,
        })?;
        records.push(record);
    }
    RecordSet::new(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the set in the CSV schema accepted by [`parse_uplink_csv`].
/// Floats use the shortest representation that round-trips.
pub fn write_uplink_csv(set: &RecordSet) -> String {
    let mut out = String::with_capacity(64 * (set.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in set.records() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.ts,
            r.gateway_id,
            r.rssi,
            r.snr,
            fmt_opt(r.soil_humidity),
            fmt_opt(r.soil_temp)
        ));
    }
    out
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Decode(format!("missing required key \"{key}\"")))
}

fn number(v: &Value, key: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Decode(format!("key \"{key}\" must be a number, got {v}")))
}

fn optional_number(obj: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => number(v, key).map(Some),
    }
}

/// Decodes one newline-JSON uplink object (`ts`, `gw`, `rssi`, `snr`, optional `hum`, `temp`).
pub fn decode_uplink_json(line: &str) -> Result<UplinkRecord> {
    let value: Value = serde_json::from_str(line.trim()).map_err(|e| Error::Decode(format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| Error::Decode("expected a JSON object".into()))?;

    let ts_value = required(obj, "ts")?;
    let ts =
        ts_value.as_i64().ok_or_else(|| Error::Decode(format!("key \"ts\" must be an integer, got {ts_value}")))?;
    let gw = required(obj, "gw")?;
    let gateway_id =
        gw.as_str().ok_or_else(|| Error::Decode(format!("key \"gw\" must be a string, got {gw}")))?.to_string();
    let record = UplinkRecord {
        ts,
        gateway_id,
        rssi: number(required(obj, "rssi")?, "rssi")?,
        snr: number(required(obj, "snr")?, "snr")?,
        soil_humidity: optional_number(obj, "hum")?,
        soil_temp: optional_number(obj, "temp")?,
    };
    record.validate()?;
    Ok(record)
}

/// Encodes a record as one newline-JSON object (no trailing newline).
pub fn encode_uplink_json(r: &UplinkRecord) -> String {
    let mut obj = Map::new();
    obj.insert("ts".into(), Value::from(r.ts));
    obj.insert("gw".into(), Value::from(r.gateway_id.clone()));
    obj.insert("rssi".into(), Value::from(r.rssi));
    obj.insert("snr".into(), Value::from(r.snr));
    if let Some(h) = r.soil_humidity {
        obj.insert("hum".into(), Value::from(h));
    }
    if let Some(t) = r.soil_temp {
        obj.insert("temp".into(), Value::from(t));
    }
    Value::Object(obj).to_string()
}

/// Reads a newline-JSON stream. Blank lines are skipped; decode errors are
/// reported with their 1-based line number.
pub fn read_uplink_jsonl<R: std::io::BufRead>(reader: R) -> Result<RecordSet> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            decode_uplink_json(&line).map_err(|e| Error::Parse { line: idx as u64 + 1, message: e.to_string() })?;
        records.push(record);
    }
    RecordSet::new(records)
}

// Binary store layout (all integers little-endian):
//   magic "SWV1" | u32 format version | u32 gateway count
//   per gateway: u16 byte length + UTF-8 id
//   u64 record count
//   per record (45 bytes): i64 ts | u32 gateway index | f64 rssi | f64 snr
//                          | u8 presence flags (bit0 humidity, bit1 temp)
//                          | f64 humidity | f64 temp   (0.0 when absent)

const FLAG_HUMIDITY: u8 = 0b01;
const FLAG_TEMP: u8 = 0b10;

pub fn encode_store(set: &RecordSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + 45 * set.len());
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.gateways.len() as u32).to_le_bytes());
    for gw in &set.gateways {
        buf.extend_from_slice(&(gw.len() as u16).to_le_bytes());
        buf.extend_from_slice(gw.as_bytes());
    }
    buf.extend_from_slice(&(set.records.len() as u64).to_le_bytes());
    for r in &set.records {
        let gw_index = set.gateways.binary_search(&r.gateway_id).expect("gateway table covers every record") as u32;
        let mut flags = 0u8;
        if r.soil_humidity.is_some() {
            flags |= FLAG_HUMIDITY;
        }
        if r.soil_temp.is_some() {
            flags |= FLAG_TEMP;
        }
        buf.extend_from_slice(&r.ts.to_le_bytes());
        buf.extend_from_slice(&gw_index.to_le_bytes());
        buf.extend_from_slice(&r.rssi.to_le_bytes());
        buf.extend_from_slice(&r.snr.to_le_bytes());
        buf.push(flags);
        buf.extend_from_slice(&r.soil_humidity.unwrap_or(0.0).to_le_bytes());
        buf.extend_from_slice(&r.soil_temp.unwrap_or(0.0).to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("truncated store: need {n} bytes at offset {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<RecordSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != STORE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"SWV1\"")));
    }
    let version = cur.u32()?;
    if version != STORE_VERSION {
        return Err(Error::Format(format!(
            "unsupported store format version v{version} (this build reads v{STORE_VERSION})"
        )));
    }
    let n_gateways = cur.u32()? as usize;
    let mut gateways = Vec::with_capacity(n_gateways);
    for _ in 0..n_gateways {
        let len = cur.u16()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw).map_err(|_| Error::Format("gateway id is not UTF-8".into()))?;
        gateways.push(id.to_string());
    }
    let count = cur.u64()? as usize;
    let mut records = Vec::with_capacity(count.min(bytes.len() / 45 + 1));
    for _ in 0..count {
        let ts = cur.i64()?;
        let gw_index = cur.u32()? as usize;
        let rssi = cur.f64()?;
        let snr = cur.f64()?;
        let flags = cur.take(1)?[0];
        let hum = cur.f64()?;
        let temp = cur.f64()?;
        let gateway_id = gateways
            .get(gw_index)
            .ok_or_else(|| Error::Format(format!("gateway index {gw_index} out of range")))?
            .clone();
        records.push(UplinkRecord {
            ts,
            gateway_id,
            rssi,
            snr,
            soil_humidity: (flags & FLAG_HUMIDITY != 0).then_some(hum),
            soil_temp: (flags & FLAG_TEMP != 0).then_some(temp),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last record", bytes.len() - cur.pos)));
    }
    RecordSet::new(records)
}

pub fn store_save(set: &RecordSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_store(set))?;
    w.flush()?;
    Ok(())
}

pub fn store_load(path: impl AsRef<Path>) -> Result<RecordSet> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_store(&bytes)
}

/// Loads a record set by sniffing the content: binary store (magic), CSV
/// (header line) or newline-JSON.
pub fn load_any(path: impl AsRef<Path>) -> Result<RecordSet> {
    load_bytes(&std::fs::read(path)?)
}

/// [`load_any`] on an in-memory buffer.
pub fn load_bytes(bytes: &[u8]) -> Result<RecordSet> {
    if bytes.starts_with(STORE_MAGIC) {
        return decode_store(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("input is not UTF-8".into()))?;
    if text.trim_start().starts_with('{') {
        read_uplink_jsonl(text.as_bytes())
    } else {
        parse_uplink_csv(text)
    }
}
