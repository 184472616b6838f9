use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use contobs::audit::HOEFFDING_CONSTANT;
use contobs::Result;
use serde::Serialize;

/// Envelope shared by every JSON report. Nothing here depends on the clock
/// or on scheduling, so identical inputs give identical bytes.
#[derive(Serialize)]
pub struct Report<'a, C, D, R> {
    pub tool: Tool,
    pub command: &'a str,
    pub config: C,
    pub derived: D,
    pub results: R,
}

#[derive(Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

pub const TOOL: Tool = Tool {
    name: "contobs",
    version: env!("CARGO_PKG_VERSION"),
};

/// Constants every report carries alongside its command-specific values.
#[derive(Serialize)]
pub struct Constants {
    /// `c` in `2·exp(−c·α⁴·d)`.
    pub hoeffding_constant: f64,
    pub hoeffding_constant_derivation: &'static str,
}

pub const CONSTANTS: Constants = Constants {
    hoeffding_constant: HOEFFDING_CONSTANT,
    hoeffding_constant_derivation: "Hoeffding at deviation C*sqrt(d) with C = alpha^2*sqrt(d)/100 gives 2*exp(-C^2/2) = 2*exp(-alpha^4*d/20000)",
};

/// Writes pretty JSON to `path`, or to stdout without one.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> contobs::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e.into(),
        other => io::Error::other(format!("{other:?}")).into(),
    }
}
