//! Policy CSV and solution JSON files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::{build_grid, composition_count, BeliefGrid};
use super::kernel::GridPolicy;
use super::pia::PiaReport;
use crate::error::{Error, Result};
use crate::filter::LogBase;

/// Grid points read back from a file must match the rebuilt grid this closely.
const POINT_TOLERANCE: f64 = 1e-9;

/// Summary written next to a solved policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub g: f64,
    pub log_base: LogBase,
    pub resolution: usize,
    pub residual: f64,
    pub iterations: usize,
    pub fallback_used: bool,
}

impl SolutionRecord {
    pub fn from_report(report: &PiaReport, grid: &BeliefGrid, log_base: LogBase) -> Self {
        SolutionRecord {
            g: report.solution.g,
            log_base,
            resolution: grid.resolution(),
            residual: report.solution.residual,
            iterations: report.iterations.len(),
            fallback_used: report.solution.fallback_used,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidPolicy(format!("policy CSV: {e}"))
}

/// Writes `ordinal,belief_0..belief_{M-1},action`, one row per grid point.
pub fn write_policy_csv<W: Write>(grid: &BeliefGrid, policy: &GridPolicy, out: W) -> Result<()> {
    if policy.len() != grid.len() {
        return Err(Error::InvalidPolicy(format!(
            "policy has {} cells, grid has {}",
            policy.len(),
            grid.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["ordinal".to_string()];
    header.extend((0..grid.num_states()).map(|i| format!("belief_{i}")));
    header.push("action".into());
    w.write_record(&header).map_err(csv_err)?;
    for (i, p) in grid.points().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(p.iter().map(|v| v.to_string()));
        row.push(policy.action(i).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn policy_csv_string(grid: &BeliefGrid, policy: &GridPolicy) -> String {
    let mut buf = Vec::new();
    write_policy_csv(grid, policy, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Reads a policy written by [`write_policy_csv`], rebuilding its grid and
/// checking every row against it.
pub fn read_policy_csv<R: Read>(input: R) -> Result<(BeliefGrid, GridPolicy)> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let m = header.len().saturating_sub(2);
    let expected: Vec<String> = std::iter::once("ordinal".to_string())
        .chain((0..m).map(|i| format!("belief_{i}")))
        .chain(std::iter::once("action".to_string()))
        .collect();
    if m == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::InvalidPolicy(format!(
            "policy CSV header must be ordinal,belief_0..belief_{{M-1}},action; got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::InvalidPolicy(format!("policy CSV row {}: bad {what}", line + 1));
        let ordinal = rec[0].trim().parse::<usize>().map_err(|_| bad("ordinal"))?;
        let point = (1..=m)
            .map(|j| rec[j].trim().parse::<f64>().map_err(|_| bad("belief")))
            .collect::<Result<Vec<f64>>>()?;
        let action = rec[m + 1].trim().parse::<usize>().map_err(|_| bad("action"))?;
        rows.push((ordinal, point, action));
    }

    let resolution = (1..)
        .map(|r| (r, composition_count(r, m)))
        .take_while(|&(_, n)| n <= rows.len() as u128)
        .find(|&(_, n)| n == rows.len() as u128)
        .map(|(r, _)| r)
        .ok_or_else(|| {
            Error::InvalidPolicy(format!(
                "{} rows is not the size of any {m}-state belief grid",
                rows.len()
            ))
        })?;
    let grid = build_grid(m, resolution)?;
    let mut table = vec![0; grid.len()];
    for (i, (ordinal, point, action)) in rows.into_iter().enumerate() {
        if ordinal != i {
            return Err(Error::InvalidPolicy(format!("row {} has ordinal {ordinal}", i + 1)));
        }
        let off = grid
            .point(i)
            .iter()
            .zip(&point)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if off > POINT_TOLERANCE {
            return Err(Error::InvalidPolicy(format!(
                "row {ordinal} belief {point:?} is not grid point {:?} of resolution {resolution}",
                grid.point(i)
            )));
        }
        table[i] = action;
    }
    Ok((grid, GridPolicy::new(table)))
}
