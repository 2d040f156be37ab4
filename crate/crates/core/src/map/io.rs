//! ESRI ASCII grid and CSV grid readers/writers.
//!
//! ESRI ASCII grid: header keys `ncols`, `nrows`, `xllcorner`, `yllcorner`
//! (or `xllcenter`/`yllcenter`), `cellsize` and optional `NODATA_value`,
//! followed by one line per row, northernmost row first. The corner keys are
//! the geodetic longitude and latitude of the grid corner in degrees, and
//! `cellsize` is in metres.
//!
//! CSV grid: an optional name line `lat0,lon0,cell_size,n_rows,n_cols,nodata`,
//! a line holding those six values, then `n_rows` lines of `n_cols`
//! comma-separated values, northernmost row first. `lat0,lon0` is the
//! south-west corner.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MapError, MapGrid};
use crate::geo::LocalFrame;

const DEFAULT_NODATA: f64 = -9999.0;
const CSV_HEADER: &str = "lat0,lon0,cell_size,n_rows,n_cols,nodata";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridFormat {
    AsciiGrid,
    Csv,
}

impl GridFormat {
    /// Guess from the file extension: `.csv` is CSV, anything else ESRI ASCII.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => GridFormat::Csv,
            _ => GridFormat::AsciiGrid,
        }
    }
}

impl FromStr for GridFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascii-grid" | "asc" => Ok(GridFormat::AsciiGrid),
            "csv" => Ok(GridFormat::Csv),
            other => Err(format!("unknown grid format '{other}'")),
        }
    }
}

pub fn load_grid(path: &Path, format: GridFormat) -> Result<MapGrid, MapError> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        GridFormat::AsciiGrid => read_ascii_grid(reader),
        GridFormat::Csv => read_csv_grid(reader),
    }
}

pub fn save_grid(grid: &MapGrid, path: &Path, format: GridFormat) -> Result<(), MapError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        GridFormat::AsciiGrid => write_ascii_grid(grid, &mut w)?,
        GridFormat::Csv => write_csv_grid(grid, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> MapError {
    MapError::Parse { line, message: message.into() }
}

fn parse_num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T, MapError> {
    tok.trim()
        .parse::<T>()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from '{}'", tok.trim())))
}

/// Flip north-first rows into the internal south-first order.
fn flip_rows(rows: Vec<Vec<f64>>) -> Vec<f64> {
    rows.into_iter().rev().flatten().collect()
}

fn check_loaded(grid: &MapGrid) -> Result<(), MapError> {
    if grid.n_rows < 2 || grid.n_cols < 2 {
        return Err(MapError::Invalid(format!(
            "a map needs at least 2x2 cells, got {}x{}",
            grid.n_rows, grid.n_cols
        )));
    }
    Ok(())
}

pub fn read_ascii_grid<R: Read>(reader: BufReader<R>) -> Result<MapGrid, MapError> {
    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut x: Option<(f64, bool)> = None;
    let mut y: Option<(f64, bool)> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata = DEFAULT_NODATA;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or_default();
        if rows.is_empty() && first.chars().next().is_some_and(|ch| ch.is_ascii_alphabetic()) {
            let mut toks = trimmed.split_whitespace();
            let key = toks.next().unwrap_or_default().to_ascii_lowercase();
            let val = toks
                .next()
                .ok_or_else(|| parse_err(line_no, format!("header key '{key}' has no value")))?;
            match key.as_str() {
                "ncols" => ncols = Some(parse_num(val, line_no, "ncols")?),
                "nrows" => nrows = Some(parse_num(val, line_no, "nrows")?),
                "xllcorner" => x = Some((parse_num(val, line_no, "xllcorner")?, false)),
                "yllcorner" => y = Some((parse_num(val, line_no, "yllcorner")?, false)),
                "xllcenter" => x = Some((parse_num(val, line_no, "xllcenter")?, true)),
                "yllcenter" => y = Some((parse_num(val, line_no, "yllcenter")?, true)),
                "cellsize" => cellsize = Some(parse_num(val, line_no, "cellsize")?),
                "nodata_value" => nodata = parse_num(val, line_no, "NODATA_value")?,
                other => return Err(parse_err(line_no, format!("unexpected header key '{other}'"))),
            }
            continue;
        }
        let n = ncols.ok_or_else(|| parse_err(line_no, "data before 'ncols' header"))?;
        let row = trimmed
            .split_whitespace()
            .map(|t| parse_num::<f64>(t, line_no, "cell value"))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != n {
            return Err(parse_err(
                line_no,
                format!("ragged row {}: expected {n} values, found {}", rows.len() + 1, row.len()),
            ));
        }
        rows.push(row);
    }

    let missing = |k: &str| parse_err(0, format!("missing header key '{k}'"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let (xll, x_centre) = x.ok_or_else(|| missing("xllcorner"))?;
    let (yll, y_centre) = y.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    if rows.len() != nrows {
        return Err(parse_err(0, format!("expected {nrows} data rows, found {}", rows.len())));
    }
    let (mut lat0, mut lon0) = (yll, xll);
    if x_centre || y_centre {
        // the corner frame's scales define the cell centres, so iterate
        let h = 0.5 * cellsize;
        for _ in 0..8 {
            let frame = LocalFrame::new(lat0, lon0);
            if y_centre {
                lat0 = yll - h / frame.north_scale;
            }
            if x_centre {
                lon0 = xll - h / frame.east_scale;
            }
        }
    }
    let grid = MapGrid::new(lat0, lon0, cellsize, nrows, ncols, flip_rows(rows), nodata)?;
    check_loaded(&grid)?;
    Ok(grid)
}

pub fn write_ascii_grid<W: Write>(grid: &MapGrid, w: &mut W) -> Result<(), MapError> {
    writeln!(w, "ncols {}", grid.n_cols)?;
    writeln!(w, "nrows {}", grid.n_rows)?;
    writeln!(w, "xllcorner {}", grid.origin_lon)?;
    writeln!(w, "yllcorner {}", grid.origin_lat)?;
    writeln!(w, "cellsize {}", grid.cell_size)?;
    writeln!(w, "NODATA_value {}", grid.nodata)?;
    for r in (0..grid.n_rows).rev() {
        let line: Vec<String> = (0..grid.n_cols).map(|c| grid.raw(r, c).to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_csv_grid<R: Read>(reader: BufReader<R>) -> Result<MapGrid, MapError> {
    let mut meta: Option<(f64, f64, f64, usize, usize, f64)> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if meta.is_none() {
            if trimmed.replace(' ', "") == CSV_HEADER {
                continue;
            }
            let f: Vec<&str> = trimmed.split(',').collect();
            if f.len() != 6 {
                return Err(parse_err(line_no, format!("metadata line needs 6 fields, found {}", f.len())));
            }
            meta = Some((
                parse_num(f[0], line_no, "lat0")?,
                parse_num(f[1], line_no, "lon0")?,
                parse_num(f[2], line_no, "cell_size")?,
                parse_num(f[3], line_no, "n_rows")?,
                parse_num(f[4], line_no, "n_cols")?,
                parse_num(f[5], line_no, "nodata")?,
            ));
            continue;
        }
        let n_cols = meta.map(|m| m.4).unwrap_or_default();
        let row = trimmed
            .split(',')
            .map(|t| parse_num::<f64>(t, line_no, "cell value"))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != n_cols {
            return Err(parse_err(
                line_no,
                format!("ragged row {}: expected {n_cols} values, found {}", rows.len() + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    let (lat0, lon0, cell, n_rows, n_cols, nodata) =
        meta.ok_or_else(|| parse_err(0, "missing metadata line"))?;
    if rows.len() != n_rows {
        return Err(parse_err(0, format!("expected {n_rows} data rows, found {}", rows.len())));
    }
    let grid = MapGrid::new(lat0, lon0, cell, n_rows, n_cols, flip_rows(rows), nodata)?;
    check_loaded(&grid)?;
    Ok(grid)
}

pub fn write_csv_grid<W: Write>(grid: &MapGrid, w: &mut W) -> Result<(), MapError> {
    writeln!(w, "{CSV_HEADER}")?;
    writeln!(
        w,
        "{},{},{},{},{},{}",
        grid.origin_lat, grid.origin_lon, grid.cell_size, grid.n_rows, grid.n_cols, grid.nodata
    )?;
    for r in (0..grid.n_rows).rev() {
        let line: Vec<String> = (0..grid.n_cols).map(|c| grid.raw(r, c).to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
