//! Text formats: `.tns` dense tensors and observation CSV files.
//!
//! `.tns`: line 1 is the order `d`, line 2 the space-separated dims, then one
//! value per line in storage order. Observation CSV: header `i1,...,id,value`
//! followed by one row per observation slot with 1-based indices.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::observation::ObservationSet;
use crate::tensor::{DenseTensor, Index, Shape};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_tns<W: Write>(tensor: &DenseTensor, mut out: W) -> Result<()> {
    let dims = tensor.shape().dims();
    let mut buf = String::with_capacity(24 * (tensor.values().len() + 2));
    let _ = writeln!(buf, "{}", dims.len());
    let _ = writeln!(
        buf,
        "{}",
        dims.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
    );
    for &v in tensor.values() {
        buf.push_str(&fmt_f64(v));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn read_tns<R: BufRead>(input: R) -> Result<DenseTensor> {
    let mut lines = input
        .lines()
        .map(|l| l.map_err(Error::from))
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let order: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("missing order line".into()))??
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad order: {e}")))?;
    let dims: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::Parse("missing dims line".into()))??
        .split_whitespace()
        .map(|s| s.parse().map_err(|e| Error::Parse(format!("bad dim {s:?}: {e}"))))
        .collect::<Result<_>>()?;
    if dims.len() != order {
        return Err(Error::Parse(format!("order {order} but {} dims", dims.len())));
    }
    let shape = Shape::new(dims)?;
    let values = lines
        .map(|l| {
            let l = l?;
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad value {l:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    DenseTensor::new(shape, values)
}

pub fn write_observations<W: Write>(obs: &ObservationSet, mut out: W) -> Result<()> {
    let d = obs.shape().order();
    let mut buf = String::new();
    let header: Vec<String> = (1..=d).map(|j| format!("i{j}")).collect();
    let _ = writeln!(buf, "{},value", header.join(","));
    for (ix, &v) in obs.indices().iter().zip(obs.values()) {
        for c in ix.coords() {
            let _ = write!(buf, "{c},");
        }
        buf.push_str(&fmt_f64(v));
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Reads observations for `shape`; `sigma` is metadata only and not stored
/// in the file.
pub fn read_observations<R: BufRead>(input: R, shape: &Shape, sigma: f64) -> Result<ObservationSet> {
    let d = shape.order();
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty observation file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let expected: Vec<String> = (1..=d)
        .map(|j| format!("i{j}"))
        .chain(std::iter::once("value".to_string()))
        .collect();
    if cols != expected {
        return Err(Error::Parse(format!(
            "header {header:?} does not match {:?}",
            expected.join(",")
        )));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                lineno + 2,
                fields.len(),
                d + 1
            )));
        }
        let coords = fields[..d]
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {}: bad index {s:?}: {e}", lineno + 2)))
            })
            .collect::<Result<Vec<_>>>()?;
        let v = fields[d]
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("row {}: bad value: {e}", lineno + 2)))?;
        indices.push(Index(coords));
        values.push(v);
    }
    ObservationSet::new(shape.clone(), indices, values, sigma)
}
