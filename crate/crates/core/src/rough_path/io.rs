//! CSV layout of a rough path:
//!
//! ```text
//! d_Y,alpha,N
//! t_0,Y_0^1,...,Y_0^d            (N + 1 node rows)
//! ...
//! A_0^{11},A_0^{12},...,A_0^{dd} (N interval rows, row-major 𝕐)
//! ...
//! ```
//!
//! Floats are written in shortest round-trip scientific notation, so reading
//! back gives the same bits.

use std::io::{Read, Write};

use super::RoughPath;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

fn parse(field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a number: `{field}`")))
}

pub fn write_rough_path<W: Write>(rp: &RoughPath, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record([rp.dim().to_string(), fmt(rp.alpha()), rp.steps().to_string()])?;
    for i in 0..=rp.steps() {
        let mut row = vec![fmt(rp.grid().time(i))];
        row.extend(rp.value(i).iter().map(|&x| fmt(x)));
        w.write_record(&row)?;
    }
    for i in 0..rp.steps() {
        w.write_record(rp.area(i).iter().map(|&x| fmt(x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rough_path<R: Read>(input: R) -> Result<RoughPath> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = r.records();
    let header = rows.next().ok_or_else(|| Error::Parse("empty rough path file".into()))??;
    if header.len() != 3 {
        return Err(Error::Parse("header must be `d_Y,alpha,N`".into()));
    }
    let dim: usize = header[0]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad dimension `{}`", &header[0])))?;
    let alpha = parse(&header[1])?;
    let n: usize = header[2]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad step count `{}`", &header[2])))?;
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity((n + 1) * dim);
    for i in 0..=n {
        let row = rows.next().ok_or_else(|| Error::Parse(format!("missing node row {i}")))??;
        if row.len() != dim + 1 {
            return Err(Error::Parse(format!("node row {i} has {} fields, expected {}", row.len(), dim + 1)));
        }
        times.push(parse(&row[0])?);
        for f in row.iter().skip(1) {
            values.push(parse(f)?);
        }
    }
    let mut areas = Vec::with_capacity(n * dim * dim);
    for i in 0..n {
        let row = rows.next().ok_or_else(|| Error::Parse(format!("missing interval row {i}")))??;
        if row.len() != dim * dim {
            return Err(Error::Parse(format!("interval row {i} has {} fields, expected {}", row.len(), dim * dim)));
        }
        for f in row.iter() {
            areas.push(parse(f)?);
        }
    }
    if rows.next().is_some() {
        return Err(Error::Parse("trailing rows after the last interval".into()));
    }
    RoughPath::from_parts(TimeGrid::from_times(times)?, dim, values, areas)?.with_alpha(alpha)
}

/// Reads an observation path given as rows `time,Y^1,...,Y^d` (no header).
/// Returns the grid and the flat node values.
pub fn read_observation_csv<R: Read>(input: R) -> Result<(TimeGrid, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for row in r.records() {
        let row = row?;
        let d = row.len().saturating_sub(1);
        if d == 0 || *dim.get_or_insert(d) != d {
            return Err(Error::Parse(format!("observation row {} has {} fields", times.len(), row.len())));
        }
        times.push(parse(&row[0])?);
        for f in row.iter().skip(1) {
            values.push(parse(f)?);
        }
    }
    Ok((TimeGrid::from_times(times)?, values))
}
