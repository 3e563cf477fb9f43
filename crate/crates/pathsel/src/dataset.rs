//! Domain CSV files.
//!
//! Header: `domain_id,role,label[,meta],f0,f1,...`. One row per sample; rows of
//! one domain need not be contiguous. `label` is empty for unlabeled rows.
//! Labels on intermediate or target rows are evaluation labels and are only
//! accepted with [`EvalLabels::Keep`]. The optional `meta` column carries the
//! domain's continuous index (rotation angle for the synthetic generators) and
//! must agree across a domain's rows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use pathsel_core::domains::{DomainDataset, DomainId, DomainRole};
use pathsel_core::Matrix;

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalLabels {
    /// Labels on non-source rows are an error.
    Reject,
    /// Labels on non-source rows become evaluation labels.
    Keep,
}

#[derive(Default)]
struct Pending {
    role: Option<DomainRole>,
    meta: Option<f64>,
    features: Vec<f64>,
    labels: Vec<Option<usize>>,
    first_line: u64,
}

pub fn load_domains_csv(path: &Path, eval: EvalLabels) -> Result<Vec<DomainDataset>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_domains_csv(file, path, eval)
}

pub fn read_domains_csv(reader: impl std::io::Read, name: &Path, eval: EvalLabels) -> Result<Vec<DomainDataset>> {
    let parse = |line: u64, msg: String| Error::Parse {
        file: name.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["domain_id", "role", "label"] {
        return Err(parse(1, "header must start with domain_id,role,label".into()));
    }
    let has_meta = cols[3] == "meta";
    let first_feature = if has_meta { 4 } else { 3 };
    let dim = cols.len() - first_feature;
    for (j, c) in cols[first_feature..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse(1, format!("expected column f{j}, found `{c}`")));
        }
    }
    if dim == 0 {
        return Err(parse(1, "no feature columns".into()));
    }

    let mut domains: BTreeMap<DomainId, Pending> = BTreeMap::new();
    let mut order: Vec<DomainId> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse(line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let id: DomainId = rec[0]
            .parse()
            .map_err(|_| parse(line, format!("bad domain_id `{}`", &rec[0])))?;
        let role = DomainRole::parse(&rec[1]).ok_or_else(|| parse(line, format!("unknown role `{}`", &rec[1])))?;
        let label = match &rec[2] {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| parse(line, format!("bad label `{s}`")))?),
        };
        if label.is_some() && role != DomainRole::Source && eval == EvalLabels::Reject {
            return Err(parse(line, format!("label on {} row without evaluation labels enabled", role.as_str())));
        }
        let meta = if has_meta && !rec[3].is_empty() {
            Some(rec[3].parse::<f64>().map_err(|_| parse(line, format!("bad meta `{}`", &rec[3])))?)
        } else {
            None
        };
        let d = domains.entry(id).or_insert_with(|| {
            order.push(id);
            Pending {
                first_line: line,
                ..Pending::default()
            }
        });
        match d.role {
            None => {
                d.role = Some(role);
                d.meta = meta;
            }
            Some(r) if r != role => {
                return Err(parse(line, format!("domain {id} is {} on line {}", r.as_str(), d.first_line)));
            }
            Some(_) if d.meta.map(f64::to_bits) != meta.map(f64::to_bits) => {
                return Err(parse(line, format!("domain {id} has inconsistent meta")));
            }
            Some(_) => {}
        }
        for (j, v) in rec.iter().skip(first_feature).enumerate() {
            let x: f64 = v.parse().map_err(|_| parse(line, format!("bad value `{v}` in f{j}")))?;
            if !x.is_finite() {
                return Err(parse(line, format!("non-finite value in f{j}")));
            }
            d.features.push(x);
        }
        d.labels.push(label);
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let d = domains.remove(&id).expect("recorded");
        let role = d.role.expect("set on first row");
        let n = d.labels.len();
        let labeled = d.labels.iter().filter(|l| l.is_some()).count();
        let labels = match labeled {
            0 => None,
            k if k == n => Some(d.labels.into_iter().flatten().collect::<Vec<_>>()),
            _ => {
                return Err(parse(d.first_line, format!("domain {id} mixes labeled and unlabeled rows")));
            }
        };
        let (train, eval_labels) = match role {
            DomainRole::Source => (labels, None),
            _ => (None, labels),
        };
        let features = Matrix::new(n, dim, d.features)?;
        out.push(
            DomainDataset::new(id, role, features, train, eval_labels, d.meta)
                .map_err(|e| parse(d.first_line, e.to_string()))?,
        );
    }
    let count = |r| out.iter().filter(|d| d.role == r).count();
    if count(DomainRole::Source) != 1 || count(DomainRole::Target) != 1 {
        return Err(parse(0, "need exactly one source and one target domain".into()));
    }
    Ok(out)
}

/// Writes domains with evaluation labels included and a `meta` column.
pub fn write_domains_csv(path: &Path, domains: &[DomainDataset]) -> Result<()> {
    let mut buf = Vec::new();
    write_domains(&mut buf, domains).map_err(io_err(path))?;
    std::fs::write(path, buf).map_err(io_err(path))
}

pub fn write_domains(w: &mut impl Write, domains: &[DomainDataset]) -> std::io::Result<()> {
    let dim = domains.first().map_or(0, DomainDataset::dim);
    write!(w, "domain_id,role,label,meta")?;
    for j in 0..dim {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for d in domains {
        let labels = d.labels.as_deref().or(d.eval_labels.as_deref());
        let meta = d.meta.map(|m| m.to_string()).unwrap_or_default();
        for (i, row) in d.features.iter_rows().enumerate() {
            let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
            write!(w, "{},{},{},{}", d.domain_id, d.role.as_str(), label, meta)?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
