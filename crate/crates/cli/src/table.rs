//! CSV emission and re-parsing of branches.

use std::path::Path;

use anyhow::Context;
use logistic_harvest::continuation::Branch;
use serde::{Deserialize, Serialize};

pub const BRANCH_HEADER: &str = "index,a,c,t_phi,t_psi,u_max,u_min,morse_index,degenerate,residual_norm,marker";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub index: usize,
    pub a: f64,
    pub c: f64,
    pub t_phi: f64,
    pub t_psi: f64,
    pub u_max: f64,
    pub u_min: f64,
    pub morse_index: usize,
    pub degenerate: bool,
    pub residual_norm: f64,
    pub marker: String,
}

pub fn branch_rows(branch: &Branch) -> Vec<BranchRow> {
    branch
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| BranchRow {
            index,
            a: p.a,
            c: p.c,
            t_phi: p.t_phi,
            t_psi: p.t_psi,
            u_max: p.u.max(),
            u_min: p.u.min(),
            morse_index: p.morse_index(),
            degenerate: p.degenerate(),
            residual_norm: p.residual_norm,
            // A point can carry two markers (a one-point segment); the
            // later one wins, matching traversal order.
            marker: branch
                .markers
                .iter()
                .rfind(|m| m.index == index)
                .map_or("-", |m| m.kind.label())
                .to_string(),
        })
        .collect()
}

/// Writes any serializable rows; floats use shortest round-trip decimals.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_branch_csv(branch: &Branch, path: &Path) -> anyhow::Result<()> {
    write_rows(&branch_rows(branch), path)
}

pub fn read_branch_csv(path: &Path) -> anyhow::Result<Vec<BranchRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    anyhow::ensure!(
        header == BRANCH_HEADER,
        "{}: unexpected header {header:?}",
        path.display()
    );
    r.deserialize()
        .map(|row| row.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use logistic_harvest::continuation::{trace_branch, ContinuationConfig};
    use logistic_harvest::{Problem, SolverConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let p = Problem::standard(63, 1.0).unwrap();
        let b = trace_branch(
            &p,
            p.lambda1 + 0.5 * p.gap(),
            &ContinuationConfig::default(),
            &SolverConfig::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("branch.csv");
        write_branch_csv(&b, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), BRANCH_HEADER);
        let back = read_branch_csv(&path).unwrap();
        let rows = branch_rows(&b);
        assert_eq!(back.len(), rows.len());
        for (x, y) in rows.iter().zip(&back) {
            assert_eq!(x, y);
            assert_eq!(x.c.to_bits(), y.c.to_bits());
            assert_eq!(x.t_psi.to_bits(), y.t_psi.to_bits());
        }
        assert_eq!(rows.iter().filter(|r| r.marker == "fold0").count(), 2);
    }

    #[test]
    fn rejects_foreign_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_branch_csv(&path).is_err());
    }
}
