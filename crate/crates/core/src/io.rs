//! CSV ingestion with positioned errors, and atomic output files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Shortest fixed-width representation that round-trips an f64 (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Headed table of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// CSV with `# ` comment lines first, written atomically.
pub fn write_table(path: &Path, comments: &[String], table: &Table) -> Result<()> {
    atomic_write(path, |w| {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(&table.header)?;
        for r in &table.rows {
            cw.write_record(r)?;
        }
        cw.flush()
    })
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn parse_err(path: &Path, line: u64, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        column,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let column = match e.kind() {
        csv::ErrorKind::UnequalLengths { len, .. } => *len as usize + 1,
        _ => 0,
    };
    parse_err(path, line, column, e.to_string())
}

fn parse_cell(path: &Path, line: u64, column: usize, cell: &str, allow_missing: bool) -> Result<f64> {
    if allow_missing && (cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")) {
        return Ok(f64::NAN);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, column, format!("not a finite number: {cell:?}"))),
    }
}

/// Reads a headed all-numeric CSV into rows.
pub fn read_numeric_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    read_named_table(path, false).map(|(_, rows)| rows)
}

/// Header and rows of a numeric CSV; with `allow_missing`, empty and `NA`
/// cells read as NaN.
pub fn read_named_table(path: &Path, allow_missing: bool) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| parse_cell(path, line, c + 1, cell, allow_missing))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// The named columns of a CSV (case-insensitive), in the order asked for.
/// Other columns may hold anything; missing cells read as NaN.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let idx = names.iter().map(|n| header_index(path, &headers, n)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push(idx.iter().map(|&c| parse_cell(path, line, c + 1, &rec[c], true)).collect::<Result<Vec<_>>>()?);
    }
    Ok(rows)
}

/// One row of a field CSV. `value` is NaN when missing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub t: i64,
    pub value: f64,
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| parse_err(path, 1, 0, format!("missing column {name:?}")))
}

/// Reads a field CSV with columns `x,y,t,value` (any order). Empty, `NA` or
/// `NaN` values are kept as missing.
pub fn read_field_csv(path: &Path) -> Result<Vec<Observation>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let ix = header_index(path, &headers, "x")?;
    let iy = header_index(path, &headers, "y")?;
    let it = header_index(path, &headers, "t")?;
    let iv = header_index(path, &headers, "value")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let x = parse_cell(path, line, ix + 1, &rec[ix], false)?;
        let y = parse_cell(path, line, iy + 1, &rec[iy], false)?;
        let t = rec[it]
            .parse::<i64>()
            .map_err(|_| parse_err(path, line, it + 1, format!("not an integer day: {:?}", &rec[it])))?;
        let value = parse_cell(path, line, iv + 1, &rec[iv], true)?;
        out.push(Observation { x, y, t, value });
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

/// Groups observations by day, preserving row order within a day.
pub fn group_by_day(obs: &[Observation]) -> BTreeMap<i64, Vec<Observation>> {
    let mut days: BTreeMap<i64, Vec<Observation>> = BTreeMap::new();
    for o in obs {
        days.entry(o.t).or_default().push(*o);
    }
    days
}

/// Days with fewer than `min_obs` non-missing observations borrow the
/// observations of the day before and the day after.
pub fn pool_adjacent_days(
    days: &BTreeMap<i64, Vec<Observation>>,
    min_obs: usize,
) -> BTreeMap<i64, Vec<Observation>> {
    let count = |v: &Vec<Observation>| v.iter().filter(|o| !o.value.is_nan()).count();
    days.iter()
        .map(|(&t, obs)| {
            if count(obs) >= min_obs {
                return (t, obs.clone());
            }
            let mut pooled = Vec::new();
            for d in [t - 1, t, t + 1] {
                if let Some(v) = days.get(&d) {
                    pooled.extend_from_slice(v);
                }
            }
            (t, pooled)
        })
        .collect()
}

/// Covariates keyed by site: columns `x,y,<name>...`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub values: Vec<Vec<f64>>,
}

impl CovariateTable {
    /// Row of covariates at an exact coordinate.
    pub fn lookup(&self, x: f64, y: f64) -> Option<&[f64]> {
        self.coords
            .iter()
            .position(|&(cx, cy)| cx == x && cy == y)
            .map(|i| self.values[i].as_slice())
    }
}

pub fn read_covariate_csv(path: &Path) -> Result<CovariateTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let ix = header_index(path, &headers, "x")?;
    let iy = header_index(path, &headers, "y")?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&c| c != ix && c != iy).collect();
    if cols.is_empty() {
        return Err(parse_err(path, 1, 0, "no covariate columns"));
    }
    let names = cols.iter().map(|&c| headers[c].to_string()).collect();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        coords.push((
            parse_cell(path, line, ix + 1, &rec[ix], false)?,
            parse_cell(path, line, iy + 1, &rec[iy], false)?,
        ));
        values.push(
            cols.iter()
                .map(|&c| parse_cell(path, line, c + 1, &rec[c], false))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(CovariateTable { names, coords, values })
}
