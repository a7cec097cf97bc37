// Trace CSV interchange.
//
// Header row is mandatory. Leading `# key=value` comment lines carry trace
// metadata (id, scenario, band_lock, source). A missing second is a
// two-field `t,GAP` row.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{DataError, FeatureSet, TelemetrySample, Trace, TraceMeta, TraceRow};

/// Canonical column order; the first six are always required.
pub const COLUMNS: [&str; 13] = [
    "t",
    "rsrp_dbm",
    "rsrq_db",
    "sinr_db",
    "ssb_arfcn",
    "thpt_mbps",
    "rb_alloc",
    "sched_count",
    "pucch_tx_dbm",
    "bw_mhz",
    "lat",
    "lon",
    "speed_kmh",
];
const REQUIRED: usize = 6;
const GAP: &str = "GAP";

pub fn parse_trace_csv(path: impl AsRef<Path>, schema: Option<FeatureSet>) -> Result<Trace, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut trace = read_trace(file, schema)?;
    if trace.meta.id.is_empty() {
        trace.meta.id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(trace)
}

fn parse_meta(text: &str) -> TraceMeta {
    let mut meta = TraceMeta::default();
    for line in text.lines().take_while(|l| l.trim_start().starts_with('#')) {
        let body = line.trim_start().trim_start_matches('#').trim();
        let Some((key, value)) = body.split_once('=') else { continue };
        let value = value.trim().to_string();
        match key.trim() {
            "id" => meta.id = value,
            "scenario" => meta.scenario = Some(value),
            "source" => meta.source = Some(value),
            "band_lock" => meta.band_lock = serde_json::from_value(serde_json::Value::String(value)).ok(),
            _ => {}
        }
    }
    meta
}

fn field<T: FromStr>(rec: &csv::StringRecord, idx: Option<usize>, name: &str, line: u64) -> Result<Option<T>, DataError> {
    let Some(i) = idx else { return Ok(None) };
    let raw = rec.get(i).unwrap_or("");
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<T>().map(Some).map_err(|_| DataError::Row {
        line,
        msg: format!("cannot parse {name} value {raw:?}"),
    })
}

/// Reads a trace from CSV text. `schema` names the feature set whose
/// columns must be present and populated.
pub fn read_trace<R: Read>(mut reader: R, schema: Option<FeatureSet>) -> Result<Trace, DataError> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|source| DataError::Io {
        path: "<reader>".into(),
        source,
    })?;
    let meta = parse_meta(&text);

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let mut index: [Option<usize>; 13] = [None; 13];
    for (i, name) in header.iter().enumerate() {
        match COLUMNS.iter().position(|c| *c == name) {
            Some(k) => index[k] = Some(i),
            None => return Err(DataError::UnknownColumn { column: name.to_string() }),
        }
    }
    let mut required: Vec<&str> = COLUMNS[..REQUIRED].to_vec();
    if let Some(fs) = schema {
        required.extend(fs.features().iter().filter_map(|f| f.column()));
    }
    for col in &required {
        let k = COLUMNS.iter().position(|c| c == col).expect("known column");
        if index[k].is_none() {
            return Err(DataError::MissingColumn { column: col.to_string() });
        }
    }

    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |msg: String| DataError::Row { line, msg };
        let t: u32 = field(&rec, index[0], "t", line)?.ok_or_else(|| row_err("missing t".into()))?;

        let row = if rec.len() == 2 && rec.get(1) == Some(GAP) {
            TraceRow::Gap { t }
        } else {
            if rec.len() != header.len() {
                return Err(row_err(format!("expected {} fields, found {}", header.len(), rec.len())));
            }
            let need = |k: usize| -> Result<f64, DataError> {
                field::<f64>(&rec, index[k], COLUMNS[k], line)?
                    .ok_or_else(|| row_err(format!("missing {}", COLUMNS[k])))
            };
            let s = TelemetrySample {
                t,
                rsrp_dbm: need(1)?,
                rsrq_db: need(2)?,
                sinr_db: need(3)?,
                ssb_arfcn: field(&rec, index[4], "ssb_arfcn", line)?
                    .ok_or_else(|| row_err("missing ssb_arfcn".into()))?,
                thpt_mbps: need(5)?,
                rb_alloc: field(&rec, index[6], "rb_alloc", line)?,
                sched_count: field(&rec, index[7], "sched_count", line)?,
                pucch_tx_dbm: field(&rec, index[8], "pucch_tx_dbm", line)?,
                bw_mhz: field(&rec, index[9], "bw_mhz", line)?,
                lat: field(&rec, index[10], "lat", line)?,
                lon: field(&rec, index[11], "lon", line)?,
                speed_kmh: field(&rec, index[12], "speed_kmh", line)?,
            };
            s.validate().map_err(row_err)?;
            if let Some(fs) = schema {
                if let Some(f) = fs.features().iter().find(|f| f.extract(&s).is_none()) {
                    return Err(row_err(format!("{} is empty but required by {fs}", f.name())));
                }
            }
            TraceRow::Sample(s)
        };
        if let Some(prev) = rows.last() {
            let p = prev.t();
            if row.t() <= p {
                return Err(row_err(format!("timestamp {} not after {p}", row.t())));
            }
            if row.t() != p + 1 {
                return Err(row_err(format!("timestamp {} skips from {p}; mark missing seconds with GAP rows", row.t())));
            }
        }
        rows.push(row);
    }
    Trace::new(meta, rows)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

/// Writes the trace; optional columns appear only when some sample has them.
pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> Result<(), DataError> {
    let io = |source| DataError::Io { path: "<writer>".into(), source };
    let m = &trace.meta;
    if !m.id.is_empty() {
        writeln!(out, "# id={}", m.id).map_err(io)?;
    }
    if let Some(s) = &m.scenario {
        writeln!(out, "# scenario={s}").map_err(io)?;
    }
    if let Some(b) = &m.band_lock {
        writeln!(out, "# band_lock={b:?}").map_err(io)?;
    }
    if let Some(s) = &m.source {
        writeln!(out, "# source={s}").map_err(io)?;
    }

    let samples: Vec<&TelemetrySample> = trace.samples().collect();
    let present = |f: fn(&TelemetrySample) -> bool| samples.iter().any(|s| f(s));
    let optional: [bool; 7] = [
        present(|s| s.rb_alloc.is_some()),
        present(|s| s.sched_count.is_some()),
        present(|s| s.pucch_tx_dbm.is_some()),
        present(|s| s.bw_mhz.is_some()),
        present(|s| s.lat.is_some()),
        present(|s| s.lon.is_some()),
        present(|s| s.speed_kmh.is_some()),
    ];
    let cols: Vec<usize> = (0..REQUIRED).chain((0..7).filter(|&i| optional[i]).map(|i| i + REQUIRED)).collect();

    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(cols.iter().map(|&c| COLUMNS[c]))?;
    for row in trace.rows() {
        match row {
            TraceRow::Gap { t } => w.write_record([t.to_string(), GAP.to_string()])?,
            TraceRow::Sample(s) => {
                let cell = |c: usize| -> String {
                    match c {
                        0 => s.t.to_string(),
                        1 => s.rsrp_dbm.to_string(),
                        2 => s.rsrq_db.to_string(),
                        3 => s.sinr_db.to_string(),
                        4 => s.ssb_arfcn.to_string(),
                        5 => s.thpt_mbps.to_string(),
                        6 => opt(&s.rb_alloc),
                        7 => opt(&s.sched_count),
                        8 => opt(&s.pucch_tx_dbm),
                        9 => opt(&s.bw_mhz),
                        10 => opt(&s.lat),
                        11 => opt(&s.lon),
                        _ => opt(&s.speed_kmh),
                    }
                };
                w.write_record(cols.iter().map(|&c| cell(c)))?;
            }
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn write_trace_csv(trace: &Trace, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_trace(trace, std::io::BufWriter::new(file))
}
