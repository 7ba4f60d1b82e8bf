//! CSV, JSON and checkpoint files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the same bits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::param::ParamVector;

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    ensure_parent(path)?;
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{}", header.join(",")).map_err(io_err(path))?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Header and raw fields of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty CSV", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(Error::Parse(format!("{} line {}: expected {} fields", path.display(), n + 2, header.len())));
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

pub fn parse_f64(field: &str) -> Result<f64> {
    field.parse().map_err(|e| Error::Parse(format!("'{field}': {e}")))
}

pub fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field).map(Some)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

const MAGIC: &str = "xsam-checkpoint v1";

/// Flat parameter dump: a text header followed by one decimal value per line.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamVector,
    pub layer_widths: Option<Vec<usize>>,
    pub seed: u64,
    pub rule: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let widths = match &self.layer_widths {
            Some(w) => w.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            None => "-".into(),
        };
        let mut s = format!(
            "{MAGIC}\ndim {}\nlayer_widths {widths}\nseed {}\nrule {}\nparams\n",
            self.params.dim(),
            self.seed,
            self.rule
        );
        for v in self.params.iter() {
            s.push_str(&fmt_f64(*v));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("checkpoint: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing header line"));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing '{key}'")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected '{key}', found '{line}'")))
        };
        let dim: usize = field("dim")?.parse().map_err(|_| bad("dim is not an integer"))?;
        let widths = field("layer_widths")?;
        let layer_widths = if widths == "-" {
            None
        } else {
            Some(
                widths
                    .split(',')
                    .map(|w| w.parse::<usize>().map_err(|_| bad("layer_widths")))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed is not an integer"))?;
        let rule = field("rule")?;
        field("params")?;
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(&format!("bad value '{l}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(bad(&format!("header says {dim} values, found {}", values.len())));
        }
        let params = ParamVector::new(values).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { params, layer_widths, seed, rule })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}
