//! The curve CSV format.
//!
//! Header `curve_id,component,t,value[,label]`, rows sorted by
//! `(curve_id, component, t)`. Components are numbered from 1; the label
//! column, when present, must be constant within a curve. Every
//! `(curve_id, component)` group needs at least two rows with strictly
//! increasing `t`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fcubt_core::{MultiFunData, RawComponent, RawCurve};

/// Curves read from a CSV file, still irregular.
pub struct LoadedCurves {
    /// Original curve ids, in file order.
    pub ids: Vec<u64>,
    pub curves: Vec<RawCurve>,
    /// Per-curve labels when the file carries a label column.
    pub labels: Option<Vec<usize>>,
}

pub fn write_curves(
    path: &Path,
    data: &MultiFunData,
    labels: Option<&[usize]>,
) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    if labels.is_some() {
        writeln!(out, "curve_id,component,t,value,label")?;
    } else {
        writeln!(out, "curve_id,component,t,value")?;
    }
    for n in 0..data.n_curves() {
        for (p, comp) in data.components().iter().enumerate() {
            for (i, &t) in comp.grid.points().iter().enumerate() {
                let v = comp.values[(n, i)];
                match labels {
                    Some(l) => writeln!(out, "{n},{},{t},{v},{}", p + 1, l[n])?,
                    None => writeln!(out, "{n},{},{t},{v}", p + 1)?,
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<LoadedCurves> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let has_label = match headers.len() {
        4 => false,
        5 => true,
        other => bail!(
            "expected 4 or 5 columns (curve_id,component,t,value[,label]), found {other}"
        ),
    };
    let expected: &[&str] = if has_label {
        &["curve_id", "component", "t", "value", "label"]
    } else {
        &["curve_id", "component", "t", "value"]
    };
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i) != Some(name) {
            bail!("unexpected header {:?}, expected {:?}", headers, expected);
        }
    }

    struct Row {
        id: u64,
        component: usize,
        t: f64,
        value: f64,
        label: Option<usize>,
    }

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse_err = |what: &str| format!("row {}: bad {what}", line + 2);
        rows.push(Row {
            id: record[0].parse().with_context(|| parse_err("curve_id"))?,
            component: record[1].parse().with_context(|| parse_err("component"))?,
            t: record[2].parse().with_context(|| parse_err("t"))?,
            value: record[3].parse().with_context(|| parse_err("value"))?,
            label: if has_label {
                Some(record[4].parse().with_context(|| parse_err("label"))?)
            } else {
                None
            },
        });
    }
    if rows.is_empty() {
        bail!("curve file has no data rows");
    }

    // group rows by curve in file order; enforce the sort contract
    let mut ids = Vec::new();
    let mut curves = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let id = rows[i].id;
        if ids.contains(&id) {
            bail!("curve {id}: rows are not contiguous (file must be sorted)");
        }
        let mut components: Vec<RawComponent> = Vec::new();
        let mut label = rows[i].label;
        let mut expected_component = 1;
        while i < rows.len() && rows[i].id == id {
            let comp = rows[i].component;
            if comp != expected_component {
                bail!(
                    "curve {id}: expected component {expected_component}, found {comp} \
                     (components must be 1..P in order)"
                );
            }
            let mut times = Vec::new();
            let mut values = Vec::new();
            while i < rows.len() && rows[i].id == id && rows[i].component == comp {
                if rows[i].label != label {
                    bail!("curve {id}: label changes within the curve");
                }
                times.push(rows[i].t);
                values.push(rows[i].value);
                i += 1;
            }
            let rc = RawComponent::new(times, values)
                .with_context(|| format!("curve {id}, component {comp}"))?;
            components.push(rc);
            expected_component += 1;
        }
        ids.push(id);
        curves.push(RawCurve::new(components)?);
        if let Some(l) = label.take() {
            labels.push(l);
        }
    }

    let p = curves[0].n_components();
    if curves.iter().any(|c| c.n_components() != p) {
        bail!("curves disagree on the number of components");
    }
    Ok(LoadedCurves {
        ids,
        curves,
        labels: if has_label { Some(labels) } else { None },
    })
}

/// A plain per-curve label file: `curve_id,label`.
pub fn write_labels(path: &Path, ids: &[u64], labels: &[usize]) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "curve_id,label")?;
    for (id, l) in ids.iter().zip(labels.iter()) {
        writeln!(out, "{id},{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Read labels either from a `curve_id,label` file or from a curve file's
/// label column. Returns (ids, labels) in file order.
pub fn read_labels(path: &Path) -> Result<(Vec<u64>, Vec<usize>)> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.contains(&"component") && names.contains(&"t") && names.contains(&"value") {
        let loaded = read_curves(path)?;
        let labels = loaded
            .labels
            .context("curve file has no label column")?;
        return Ok((loaded.ids, labels));
    }
    if headers.is_empty() || &headers[0] != "curve_id" {
        bail!("expected a curve_id,label file or a labeled curve file");
    }
    let label_col = (0..headers.len())
        .find(|&i| &headers[i] == "label")
        .context("no label column")?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        ids.push(record[0].parse::<u64>()?);
        labels.push(record[label_col].parse::<usize>()?);
    }
    if ids.is_empty() {
        bail!("label file has no rows");
    }
    Ok((ids, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fcubt_core::{SamplingGrid, UnivariateSample};
    use fcubt_core::nalgebra::DMatrix;

    fn sample() -> MultiFunData {
        let grid = SamplingGrid::uniform(0.0, 1.0, 3).unwrap();
        let values = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        MultiFunData::new(vec![UnivariateSample::new(grid, values).unwrap()]).unwrap()
    }

    #[test]
    fn curves_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let data = sample();
        write_curves(&path, &data, Some(&[3, 1])).unwrap();
        let loaded = read_curves(&path).unwrap();
        assert_eq!(loaded.ids, vec![0, 1]);
        assert_eq!(loaded.labels, Some(vec![3, 1]));
        assert_eq!(loaded.curves.len(), 2);
        assert_eq!(loaded.curves[0].components[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(loaded.curves[1].components[0].times, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn unsorted_times_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "curve_id,component,t,value\n0,1,0.5,1.0\n0,1,0.2,2.0\n",
        )
        .unwrap();
        assert!(read_curves(&path).is_err());
    }

    #[test]
    fn single_observation_groups_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "curve_id,component,t,value\n0,1,0.5,1.0\n").unwrap();
        assert!(read_curves(&path).is_err());
    }

    #[test]
    fn labels_round_trip_and_curve_files_provide_labels() {
        let dir = tempfile::tempdir().unwrap();
        let labels_path = dir.path().join("labels.csv");
        write_labels(&labels_path, &[0, 1, 2], &[2, 2, 1]).unwrap();
        let (ids, labels) = read_labels(&labels_path).unwrap();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(labels, vec![2, 2, 1]);

        let curves_path = dir.path().join("curves.csv");
        write_curves(&curves_path, &sample(), Some(&[4, 5])).unwrap();
        let (ids, labels) = read_labels(&curves_path).unwrap();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(labels, vec![4, 5]);
    }
}
