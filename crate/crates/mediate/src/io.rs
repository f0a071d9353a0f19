//! CSV datasets, adjacency matrices and result tables.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mediate_core::dataset::ColumnNames;
use mediate_core::graph::Pdag;
use mediate_core::Dataset;

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Roles {
    pub confounders: Vec<String>,
    pub exposure: String,
    pub mediators: Vec<String>,
    pub outcome: String,
}

impl Roles {
    fn validate(&self) -> Result<()> {
        if self.exposure.is_empty() || self.outcome.is_empty() {
            bail!("exactly one exposure and one outcome column are required");
        }
        if self.mediators.is_empty() {
            bail!("at least one mediator column is required");
        }
        let mut all: Vec<&str> = self.confounders.iter().map(String::as_str).collect();
        all.push(&self.exposure);
        all.extend(self.mediators.iter().map(String::as_str));
        all.push(&self.outcome);
        let mut sorted = all.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            bail!("column `{}` is assigned more than one role", w[0]);
        }
        Ok(())
    }
}

/// A loaded dataset and the number of rows dropped for missing values.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub dropped: usize,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Reads a headed CSV and arranges the named columns into blocks `(C, A, M, Y)`.
/// Rows with a missing value in any used column are dropped.
pub fn read_csv<R: Read>(reader: R, roles: &Roles) -> Result<Loaded> {
    roles.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().context("reading the CSV header")?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("unknown column `{name}`"))
    };
    let ci: Vec<usize> = roles.confounders.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let ai = col(&roles.exposure)?;
    let mi: Vec<usize> = roles.mediators.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let yi = col(&roles.outcome)?;

    let (mut c, mut a, mut m, mut y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("reading data row {}", line + 1))?;
        let used = ci.iter().chain(std::iter::once(&ai)).chain(&mi).chain(std::iter::once(&yi));
        if used.clone().any(|&k| rec.get(k).map_or(true, is_missing)) {
            dropped += 1;
            continue;
        }
        let parse = |k: usize| -> Result<f64> {
            let s = &rec[k];
            let v: f64 = s
                .parse()
                .map_err(|_| anyhow!("row {}: column `{}` is not numeric: `{s}`", line + 1, &header[k]))?;
            if !v.is_finite() {
                bail!("row {}: column `{}` is not finite", line + 1, &header[k]);
            }
            Ok(v)
        };
        let av = parse(ai)?;
        if av != 0.0 && av != 1.0 {
            bail!("non-binary exposure: row {} has {} = {av}", line + 1, roles.exposure);
        }
        for &k in &ci {
            c.push(parse(k)?);
        }
        a.push(av);
        for &k in &mi {
            m.push(parse(k)?);
        }
        y.push(parse(yi)?);
    }
    if y.is_empty() {
        bail!("no complete rows left after dropping {dropped} rows with missing values");
    }
    let names = ColumnNames {
        confounders: roles.confounders.clone(),
        exposure: roles.exposure.clone(),
        mediators: roles.mediators.clone(),
        outcome: roles.outcome.clone(),
    };
    let dataset = Dataset::new(roles.confounders.len(), roles.mediators.len(), c, a, m, y, names)?;
    Ok(Loaded { dataset, dropped })
}

pub fn load_csv(path: &Path, roles: &Roles) -> Result<Loaded> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_csv(f, roles)
}

/// Roles of a file written by [`write_csv`] (or any file using its column names).
pub fn roles_from_header(path: &Path) -> Result<Roles> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    let h = rdr.headers()?.clone();
    let mut r = Roles::default();
    for name in h.iter() {
        if name.starts_with('c') && name[1..].parse::<usize>().is_ok() {
            r.confounders.push(name.to_string());
        } else if name.starts_with('m') && name[1..].parse::<usize>().is_ok() {
            r.mediators.push(name.to_string());
        } else if name == "a" {
            r.exposure = name.to_string();
        } else if name == "y" {
            r.outcome = name.to_string();
        }
    }
    Ok(r)
}

/// Shortest decimal that reads back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:?}")
    }
}

/// Writes the dataset in node order `(C, A, M, Y)` with its column names.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let names = ds.names();
    wr.write_record(names.node_order())?;
    let mut row = Vec::with_capacity(ds.d());
    for i in 0..ds.n() {
        row.clear();
        row.extend(ds.c_row(i).iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(ds.a(i)));
        row.extend(ds.m_row(i).iter().map(|v| fmt_f64(*v)));
        row.push(fmt_f64(ds.y(i)));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(ds, BufWriter::new(f))
}

/// Reads a square 0/1 matrix, one row per source node, with no header.
pub fn read_adjacency<R: Read>(reader: R) -> Result<Vec<Vec<u8>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| match s {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(anyhow!("adjacency entries must be 0 or 1, found `{s}`")),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(row);
    }
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        bail!("adjacency matrix must be square and non-empty");
    }
    Ok(rows)
}

pub fn load_adjacency(path: &Path) -> Result<Vec<Vec<u8>>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_adjacency(f)
}

pub fn write_adjacency<W: Write>(g: &Pdag, mut w: W) -> Result<()> {
    for row in g.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
