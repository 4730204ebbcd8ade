//! Deterministic machine-readable output: CSV tables with a header row and a
//! trailing metadata comment block. Floats print with 17 significant digits
//! so files re-parse exactly; nothing time-dependent ever enters a CSV.

use std::io::{self, Write};

/// Run provenance attached to every CSV.
#[derive(Clone, Debug)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl RunMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> RunMeta {
        RunMeta {
            config_hash: config_hash.into(),
            seed,
            version: format!("pqlap {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

/// 17 significant digits; round-trips any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<W: Write>(
    w: &mut W,
    header: &str,
    rows: impl IntoIterator<Item = String>,
    meta: &RunMeta,
) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    append_meta(w, meta)
}

pub fn append_meta<W: Write>(w: &mut W, meta: &RunMeta) -> io::Result<()> {
    writeln!(w, "# config_hash={}", meta.config_hash)?;
    writeln!(w, "# seed={}", meta.seed)?;
    writeln!(w, "# version={}", meta.version)?;
    Ok(())
}
