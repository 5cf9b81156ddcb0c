//! Trial data directories.
//!
//! A directory holds
//! - `timepoints.csv`: `timepoint,day,stage`
//! - `focal.csv`: `plot_id,genotype,replicate,value` (defines plot order)
//! - `secondary.csv`: `plot_id,timepoint,<trait>...`, one row per plot and
//!   timepoint
//! - `markers.csv`: `genotype,<marker>...` with codes 0/1/2, and/or
//! - `kinship.csv`: `genotype,<genotype>...`, a precomputed relationship
//!   matrix used instead of markers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::design::{PlotAssignment, Timepoint, TrialDataset, TrialDesign};
use crate::error::{Error, Result};
use crate::symmat::{MatrixKind, SymMatrix};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}:{line}: expected a number, found {field:?}", path.display())))
}

fn parse_usize(path: &Path, line: usize, field: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}:{line}: expected a non-negative integer, found {field:?}", path.display())))
}

/// Header plus records of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn write_table<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn expect_header(path: &Path, header: &[String], want: &[&str]) -> Result<()> {
    if header.len() < want.len() || header.iter().zip(want).any(|(h, w)| !h.eq_ignore_ascii_case(w)) {
        return Err(Error::Parse(format!("{}: header must start with {}", path.display(), want.join(","))));
    }
    Ok(())
}

/// Genotype-labelled square or rectangular matrix (`genotype,<columns>...`).
fn read_labelled_matrix(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &["genotype"])?;
    let cols = header[1..].to_vec();
    let mut ids = Vec::with_capacity(rows.len());
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse(format!("{}:{}: expected {} fields", path.display(), i + 2, header.len())));
        }
        ids.push(row[0].clone());
        for j in 0..cols.len() {
            m[(i, j)] = parse_f64(path, i + 2, &row[j + 1])?;
        }
    }
    Ok((ids, cols, m))
}

/// Reorder the rows of a genotype-labelled matrix to `order`.
fn reorder(path: &Path, ids: &[String], m: &DMatrix<f64>, order: &[String]) -> Result<DMatrix<f64>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut out = DMatrix::zeros(order.len(), m.ncols());
    for (i, id) in order.iter().enumerate() {
        let &src = index.get(id.as_str()).ok_or_else(|| Error::MissingGenotype(format!("{id} (in {})", path.display())))?;
        out.set_row(i, &m.row(src));
    }
    Ok(out)
}

pub fn read_timepoints(path: &Path) -> Result<Vec<Timepoint>> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &["timepoint", "day", "stage"])?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(Timepoint { label: r[0].clone(), day: parse_f64(path, i + 2, &r[1])?, stage: r[2].parse()? })
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<TrialDataset> {
    let timepoints = read_timepoints(&dir.join("timepoints.csv"))?;
    let tp_index: HashMap<String, usize> = timepoints.iter().enumerate().map(|(i, t)| (t.label.clone(), i)).collect();

    let path = dir.join("focal.csv");
    let (header, rows) = read_table(&path)?;
    expect_header(&path, &header, &["plot_id", "genotype", "replicate", "value"])?;
    let mut genotype_ids: Vec<String> = Vec::new();
    let mut geno_index: HashMap<String, usize> = HashMap::new();
    let mut plot_ids = Vec::with_capacity(rows.len());
    let mut plots = Vec::with_capacity(rows.len());
    let mut focal = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let next = genotype_ids.len();
        let c = *geno_index.entry(r[1].clone()).or_insert_with(|| {
            genotype_ids.push(r[1].clone());
            next
        });
        plot_ids.push(r[0].clone());
        plots.push(PlotAssignment { genotype: c, replicate: parse_usize(&path, i + 2, &r[2])? });
        focal.push(parse_f64(&path, i + 2, &r[3])?);
    }
    let plot_index: HashMap<String, usize> = plot_ids.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    if plot_index.len() != plot_ids.len() {
        return Err(Error::Design(format!("{}: duplicate plot ids", path.display())));
    }
    let design = TrialDesign::new(genotype_ids.clone(), plot_ids, plots, timepoints)?;
    let (n, tau) = (design.n_plots(), design.n_timepoints());

    let path = dir.join("secondary.csv");
    let (header, rows) = read_table(&path)?;
    expect_header(&path, &header, &["plot_id", "timepoint"])?;
    let trait_labels = header[2..].to_vec();
    let s = trait_labels.len();
    let mut secondary = vec![DMatrix::from_element(n, s, f64::NAN); tau];
    let mut seen = vec![vec![false; n]; tau];
    for (i, r) in rows.iter().enumerate() {
        let line = i + 2;
        if r.len() != header.len() {
            return Err(Error::Parse(format!("{}:{line}: expected {} fields", path.display(), header.len())));
        }
        let &p = plot_index
            .get(&r[0])
            .ok_or_else(|| Error::Design(format!("{}:{line}: unknown plot {:?}", path.display(), r[0])))?;
        let &l = tp_index
            .get(&r[1])
            .ok_or_else(|| Error::Design(format!("{}:{line}: unknown timepoint {:?}", path.display(), r[1])))?;
        if std::mem::replace(&mut seen[l][p], true) {
            return Err(Error::Design(format!("{}:{line}: duplicate row for plot {} at {}", path.display(), r[0], r[1])));
        }
        for j in 0..s {
            secondary[l][(p, j)] = parse_f64(&path, line, &r[j + 2])?;
        }
    }
    if let Some((l, p)) = (0..tau).flat_map(|l| (0..n).map(move |p| (l, p))).find(|&(l, p)| !seen[l][p]) {
        return Err(Error::Design(format!(
            "{}: no row for plot {} at timepoint {}",
            path.display(),
            design.plot_ids()[p],
            design.timepoints()[l].label
        )));
    }

    let markers_path = dir.join("markers.csv");
    let markers = if markers_path.exists() {
        let (ids, _, m) = read_labelled_matrix(&markers_path)?;
        reorder(&markers_path, &ids, &m, &genotype_ids)?
    } else {
        DMatrix::zeros(genotype_ids.len(), 0)
    };
    let kinship_path = dir.join("kinship.csv");
    let kinship = if kinship_path.exists() {
        let (ids, cols, m) = read_labelled_matrix(&kinship_path)?;
        let rows = reorder(&kinship_path, &ids, &m, &genotype_ids)?;
        let k = reorder(&kinship_path, &cols, &rows.transpose(), &genotype_ids)?;
        Some(SymMatrix::new(k, MatrixKind::Kinship)?)
    } else {
        None
    };

    let dataset = TrialDataset { design, secondary, focal: DVector::from_vec(focal), trait_labels, markers, kinship };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_dataset(data: &TrialDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let d = &data.design;
    write_table(
        &dir.join("timepoints.csv"),
        &["timepoint", "day", "stage"],
        d.timepoints().iter().map(|t| vec![t.label.clone(), t.day.to_string(), t.stage.to_string()]),
    )?;
    write_table(
        &dir.join("focal.csv"),
        &["plot_id", "genotype", "replicate", "value"],
        d.plots().iter().enumerate().map(|(i, p)| {
            vec![
                d.plot_ids()[i].clone(),
                d.genotype_ids()[p.genotype].clone(),
                p.replicate.to_string(),
                data.focal[i].to_string(),
            ]
        }),
    )?;
    let mut header = vec!["plot_id".to_string(), "timepoint".to_string()];
    header.extend(data.trait_labels.iter().cloned());
    write_table(
        &dir.join("secondary.csv"),
        &header,
        d.timepoints().iter().enumerate().flat_map(|(l, t)| {
            (0..d.n_plots()).map(move |i| {
                let mut row = vec![d.plot_ids()[i].clone(), t.label.clone()];
                row.extend(data.secondary[l].row(i).iter().map(f64::to_string));
                row
            })
        }),
    )?;
    if data.markers.ncols() > 0 {
        let mut header = vec!["genotype".to_string()];
        header.extend((0..data.markers.ncols()).map(|k| format!("M{:05}", k + 1)));
        write_table(
            &dir.join("markers.csv"),
            &header,
            d.genotype_ids().iter().enumerate().map(|(c, id)| {
                let mut row = vec![id.clone()];
                row.extend(data.markers.row(c).iter().map(|v| (*v as u8).to_string()));
                row
            }),
        )?;
    }
    if let Some(k) = &data.kinship {
        let mut header = vec!["genotype".to_string()];
        header.extend(d.genotype_ids().iter().cloned());
        write_table(
            &dir.join("kinship.csv"),
            &header,
            d.genotype_ids().iter().enumerate().map(|(c, id)| {
                let mut row = vec![id.clone()];
                row.extend(k.matrix().row(c).iter().map(f64::to_string));
                row
            }),
        )?;
    }
    Ok(())
}
