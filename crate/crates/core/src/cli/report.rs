use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::commands::{manifest_value, read_manifest};
use super::csv::{number, Table};
use crate::error::{Error, Result};

/// Files merged by `report`: name, x column, metric column, grouping column.
const SOURCES: [(&str, &str, &str, Option<&str>); 2] =
    [("curve.csv", "env_step", "mean_return", None), ("belief_error.csv", "horizon", "mean_L1", Some("method"))];

pub const PLOT_HEADER: &str = "x,mean,lo,hi";

/// `(x, mean, lo, hi)` across runs, where `lo`/`hi` are the extremes.
pub fn band(x: &[String], values: &[Vec<f64>]) -> String {
    let mut s = format!("{PLOT_HEADER}\n");
    for (i, x) in x.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(s, "{x},{mean:.10e},{lo:.10e},{hi:.10e}");
    }
    s
}

fn series(t: &Table, x: usize, y: usize, group: Option<(usize, &str)>) -> Result<Vec<(String, f64)>> {
    t.rows
        .iter()
        .filter(|r| group.is_none_or(|(g, v)| r[g] == v))
        .map(|r| Ok((r[x].clone(), number(&r[y])?)))
        .collect()
}

/// Merges the per-run CSVs of several run directories (typically one per
/// seed) and writes plot-data bands.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if dirs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    let manifests: Vec<_> = dirs.iter().map(|d| read_manifest(d)).collect::<Result<_>>()?;
    let env = manifest_value(&manifests[0], "env")?;
    let command = manifest_value(&manifests[0], "command")?;
    for (d, m) in dirs.iter().zip(&manifests) {
        let e = manifest_value(m, "env")?;
        if e != env {
            return Err(Error::invalid(format!("{} ran on {e}, {} on {env}; refusing to merge", d.display(), dirs[0].display())));
        }
        let c = manifest_value(m, "command")?;
        if c != command {
            return Err(Error::invalid(format!("{} comes from `{c}`, {} from `{command}`", d.display(), dirs[0].display())));
        }
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (file, xcol, ycol, gcol) in SOURCES {
        let present: Vec<bool> = dirs.iter().map(|d| d.join(file).exists()).collect();
        if !present.iter().any(|&p| p) {
            continue;
        }
        if !present.iter().all(|&p| p) {
            return Err(Error::invalid(format!("{file} exists in some run directories but not all")));
        }
        let tables: Vec<Table> = dirs.iter().map(|d| Table::read(&d.join(file))).collect::<Result<_>>()?;
        if tables.iter().any(|t| t.header != tables[0].header) {
            return Err(Error::invalid(format!("{file} headers differ across runs")));
        }
        let mut merged = format!("run,{}\n", tables[0].header.join(","));
        for (k, t) in tables.iter().enumerate() {
            for r in &t.rows {
                let _ = writeln!(merged, "{k},{}", r.join(","));
            }
        }
        let stem = file.trim_end_matches(".csv");
        let path = out.join(format!("merged_{stem}.csv"));
        fs::write(&path, merged)?;
        written.push(path);

        let (x, y) = (tables[0].column(xcol)?, tables[0].column(ycol)?);
        let groups: Vec<Option<String>> = match gcol {
            None => vec![None],
            Some(g) => {
                let gi = tables[0].column(g)?;
                let mut seen: Vec<String> = Vec::new();
                for r in &tables[0].rows {
                    if !seen.contains(&r[gi]) {
                        seen.push(r[gi].clone());
                    }
                }
                seen.into_iter().map(Some).collect()
            }
        };
        for g in groups {
            let sel = match (&g, gcol) {
                (Some(v), Some(name)) => Some((tables[0].column(name)?, v.as_str())),
                _ => None,
            };
            let all: Vec<Vec<(String, f64)>> = tables.iter().map(|t| series(t, x, y, sel)).collect::<Result<_>>()?;
            let xs: Vec<String> = all[0].iter().map(|p| p.0.clone()).collect();
            for (d, s) in dirs.iter().zip(&all) {
                if s.iter().map(|p| &p.0).ne(xs.iter()) {
                    return Err(Error::invalid(format!("{} has different {xcol} values in {file}", d.display())));
                }
            }
            let values: Vec<Vec<f64>> = all.iter().map(|s| s.iter().map(|p| p.1).collect()).collect();
            let name = match &g {
                Some(v) => format!("plot_{ycol}_{v}.csv"),
                None => format!("plot_{ycol}.csv"),
            };
            let path = out.join(name);
            fs::write(&path, band(&xs, &values))?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(Error::invalid("the run directories hold no curve.csv or belief_error.csv"));
    }
    let runs: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
    fs::write(
        out.join(super::config::MANIFEST),
        format!("schema = {}\ncommand = report\nenv = {env}\nruns = {}\n", super::config::SCHEMA, runs.join(",")),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_run_band_is_flat() {
        let s = band(&["1".into(), "2".into()], &[vec![0.5, -3.25]]);
        assert_eq!(s, "x,mean,lo,hi\n1,5.0000000000e-1,5.0000000000e-1,5.0000000000e-1\n2,-3.2500000000e0,-3.2500000000e0,-3.2500000000e0\n");
    }

    #[test]
    fn band_mean_and_extremes() {
        let s = band(&["7".into()], &[vec![1.0], vec![2.0], vec![6.0]]);
        assert_eq!(s.lines().nth(1).unwrap(), "7,3.0000000000e0,1.0000000000e0,6.0000000000e0");
    }
}
