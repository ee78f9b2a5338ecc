//! Plain-text checkpoint formats.
//!
//! Every checkpoint starts with a one-line header `<format-id>,v1,<D>,<N>`
//! followed by comma-separated rows of shortest-round-trip floats.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::bellman::{CovMatrix, QFunction};
use crate::consensus::{CovEnsemble, QEnsemble};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "v1";
pub const Q_FUNCTION_ID: &str = "netvi-qfunction";
pub const Q_ENSEMBLE_ID: &str = "netvi-qensemble";
pub const COV_MATRIX_ID: &str = "netvi-covmatrix";
pub const COV_ENSEMBLE_ID: &str = "netvi-covensemble";

pub(crate) fn parse_row(line: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("malformed number `{}`", t.trim()),
            })
        })
        .collect()
}

fn write_header(s: &mut String, id: &str, dim: usize, nodes: usize) {
    writeln!(s, "{id},{FORMAT_VERSION},{dim},{nodes}").unwrap();
}

fn write_rows<'a>(s: &mut String, rows: impl Iterator<Item = Vec<f64>> + 'a) {
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
}

struct Reader<'a> {
    lines: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: Box::new(
                text.lines()
                    .enumerate()
                    .map(|(i, l)| (i + 1, l))
                    .filter(|(_, l)| !l.trim().is_empty()),
            ),
        }
    }

    fn header(&mut self, id: &str) -> Result<(usize, usize)> {
        let (no, line) = self.lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty checkpoint".into(),
        })?;
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |message: String| Error::Parse { line: no, message };
        if parts.len() != 4 || parts[0] != id {
            return Err(bad(format!("expected header `{id},{FORMAT_VERSION},<D>,<N>`")));
        }
        if parts[1] != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version `{}`", parts[1])));
        }
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad(format!("bad count `{t}`")));
        Ok((num(parts[2])?, num(parts[3])?))
    }

    fn row(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (no, line) = self.lines.next().ok_or(Error::Parse {
            line: 0,
            message: "checkpoint truncated".into(),
        })?;
        let vals = parse_row(line, no)?;
        if vals.len() != expected {
            return Err(Error::Parse {
                line: no,
                message: format!("expected {expected} values, found {}", vals.len()),
            });
        }
        Ok(vals)
    }
}

pub fn q_function_to_csv(q: &QFunction) -> String {
    let mut s = String::new();
    write_header(&mut s, Q_FUNCTION_ID, q.dim(), 1);
    write_rows(&mut s, std::iter::once(q.coeffs().iter().copied().collect()));
    s
}

pub fn q_function_from_csv(text: &str) -> Result<QFunction> {
    let mut r = Reader::new(text);
    let (dim, _) = r.header(Q_FUNCTION_ID)?;
    Ok(QFunction::new(DVector::from_vec(r.row(dim)?)))
}

/// One row per node.
pub fn q_ensemble_to_csv(ens: &QEnsemble) -> String {
    let mut s = String::new();
    write_header(&mut s, Q_ENSEMBLE_ID, ens.dim(), ens.node_count());
    write_rows(
        &mut s,
        ens.columns().column_iter().map(|c| c.iter().copied().collect()),
    );
    s
}

pub fn q_ensemble_from_csv(text: &str) -> Result<QEnsemble> {
    let mut r = Reader::new(text);
    let (dim, nodes) = r.header(Q_ENSEMBLE_ID)?;
    let mut cols = DMatrix::zeros(dim, nodes);
    for n in 0..nodes {
        cols.set_column(n, &DVector::from_vec(r.row(dim)?));
    }
    QEnsemble::from_columns(cols)
}

pub fn cov_matrix_to_csv(c: &CovMatrix) -> String {
    let mut s = String::new();
    write_header(&mut s, COV_MATRIX_ID, c.dim(), 1);
    write_rows(&mut s, c.matrix().row_iter().map(|r| r.iter().copied().collect()));
    s
}

pub fn cov_matrix_from_csv(text: &str) -> Result<CovMatrix> {
    let mut r = Reader::new(text);
    let (dim, _) = r.header(COV_MATRIX_ID)?;
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        m.set_row(i, &DVector::from_vec(r.row(dim)?).transpose());
    }
    Ok(CovMatrix::new(m))
}

/// Node blocks stacked vertically: `N·D` rows of `D` values.
pub fn cov_ensemble_to_csv(ens: &CovEnsemble) -> String {
    let mut s = String::new();
    write_header(&mut s, COV_ENSEMBLE_ID, ens.dim(), ens.node_count());
    for block in ens.blocks() {
        write_rows(&mut s, block.row_iter().map(|r| r.iter().copied().collect()));
    }
    s
}

pub fn cov_ensemble_from_csv(text: &str) -> Result<CovEnsemble> {
    let mut r = Reader::new(text);
    let (dim, nodes) = r.header(COV_ENSEMBLE_ID)?;
    let mut blocks = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            m.set_row(i, &DVector::from_vec(r.row(dim)?).transpose());
        }
        blocks.push(m);
    }
    CovEnsemble::from_blocks(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn q_ensemble_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let ens = QEnsemble::from_columns(DMatrix::from_vec(4, 3, vals)).unwrap();
            let back = q_ensemble_from_csv(&q_ensemble_to_csv(&ens)).unwrap();
            prop_assert_eq!(ens, back);
        }

        #[test]
        fn cov_ensemble_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 9)) {
            let m = DMatrix::from_vec(3, 3, vals);
            let sym = (&m + m.transpose()) * 0.5;
            let ens = CovEnsemble::from_blocks(vec![sym.clone(), sym * 2.0]).unwrap();
            let back = cov_ensemble_from_csv(&cov_ensemble_to_csv(&ens)).unwrap();
            prop_assert_eq!(ens, back);
        }
    }

    #[test]
    fn header_is_checked() {
        let q = QFunction::new(DVector::from_vec(vec![1.0, 2.0]));
        let text = q_function_to_csv(&q);
        assert!(text.starts_with("netvi-qfunction,v1,2,1\n"));
        assert_eq!(q_function_from_csv(&text).unwrap(), q);
        assert!(q_function_from_csv("netvi-qfunction,v2,2,1\n1,2\n").is_err());
        assert!(q_ensemble_from_csv(&text).is_err());
        assert!(q_function_from_csv("netvi-qfunction,v1,3,1\n1,2\n").is_err());
        let c = CovMatrix::new(DMatrix::identity(2, 2));
        assert_eq!(cov_matrix_from_csv(&cov_matrix_to_csv(&c)).unwrap(), c);
    }
}
