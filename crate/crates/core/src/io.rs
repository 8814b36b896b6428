//! CSV and JSON interchange. Reals are written in shortest round-trip
//! form, so every table reads back bit-exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diagnostics::{Correlogram, MeanDecomposition, NegBinApprox, ResidualSet};
use crate::error::IoError;
use crate::hhh4::{HhhFit, ParameterCurves, SurveillanceSeries};
use crate::model::MparSpec;
use crate::moments::PeriodicMoments;
use crate::simulate::SimulatedSeries;

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|source| IoError::File { path: path.display().to_string(), source })
}

/// Reads and validates a spec.
pub fn read_spec(path: &Path) -> Result<MparSpec, crate::Error> {
    let spec: MparSpec = read_json(path)?;
    Ok(spec.validate()?)
}

/// Column positions by header name; the first matching alias wins.
fn columns(headers: &csv::StringRecord, wanted: &[&[&str]]) -> Result<Vec<usize>, IoError> {
    wanted
        .iter()
        .map(|aliases| {
            headers
                .iter()
                .position(|h| aliases.contains(&h.trim()))
                .ok_or_else(|| IoError::Invalid(format!("missing column `{}`", aliases[0])))
        })
        .collect()
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn parse_count(field: &str, line: usize) -> Result<u64, IoError> {
    let field = field.trim();
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < u64::MAX as f64 => Ok(v as u64),
        _ => Err(IoError::Parse { line, message: format!("count `{field}`: non-negative integer required") }),
    }
}

fn parse_real(field: &str, line: usize, what: &str) -> Result<f64, IoError> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| IoError::Parse { line, message: format!("{what} `{field}` is not a number") })
}

/// Parses long-format counts with columns `time`, `unit`, `count` (aliases
/// `t` and `y` are accepted) and optional unit metadata with columns
/// `unit`, `population`. Units keep their order of first appearance; the
/// first time point has phase `start_phase`. Populations default to 1.
pub fn parse_series<R: Read, M: Read>(
    data: R,
    meta: Option<M>,
    start_phase: usize,
    period: usize,
) -> Result<SurveillanceSeries, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(data);
    let idx = columns(rdr.headers()?, &[&["time", "t"], &["unit"], &["count", "y"]])?;
    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(i64, usize), u64> = HashMap::new();
    let (mut t_min, mut t_max) = (i64::MAX, i64::MIN);
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let time: i64 = rec[idx[0]]
            .trim()
            .parse()
            .map_err(|_| IoError::Parse { line, message: format!("time `{}` is not an integer", &rec[idx[0]]) })?;
        let name = rec[idx[1]].trim().to_string();
        let count = parse_count(&rec[idx[2]], line)?;
        let u = *unit_pos.entry(name.clone()).or_insert_with(|| {
            units.push(name.clone());
            units.len() - 1
        });
        if cells.insert((time, u), count).is_some() {
            return Err(IoError::Parse { line, message: format!("duplicate entry for time {time}, unit {name}") });
        }
        t_min = t_min.min(time);
        t_max = t_max.max(time);
    }
    if units.is_empty() {
        return Err(IoError::Invalid("no observations".into()));
    }
    let len = (t_max - t_min + 1) as usize;
    let mut counts = vec![vec![0u64; units.len()]; len];
    for (i, row) in counts.iter_mut().enumerate() {
        let time = t_min + i as i64;
        for (u, slot) in row.iter_mut().enumerate() {
            *slot = *cells
                .get(&(time, u))
                .ok_or_else(|| IoError::Invalid(format!("gap in time index: no count for time {time}, unit {}", units[u])))?;
        }
    }

    let populations = match meta {
        None => vec![1.0; units.len()],
        Some(m) => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(m);
            let idx = columns(rdr.headers()?, &[&["unit"], &["population", "pop"]])?;
            let mut pop = HashMap::new();
            for rec in rdr.records() {
                let rec = rec?;
                let line = line_of(&rec);
                pop.insert(rec[idx[0]].trim().to_string(), parse_real(&rec[idx[1]], line, "population")?);
            }
            units
                .iter()
                .map(|u| pop.get(u).copied().ok_or_else(|| IoError::Invalid(format!("no population for unit {u}"))))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    SurveillanceSeries::new(counts, units, populations, start_phase, period).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn read_series(
    data: &Path,
    meta: Option<&Path>,
    start_phase: usize,
    period: usize,
) -> Result<SurveillanceSeries, IoError> {
    let m = meta.map(open).transpose()?;
    parse_series(open(data)?, m, start_phase, period)
}

/// Writes `time, unit, count` with times `0..T`.
pub fn write_series<W: Write>(out: W, series: &SurveillanceSeries) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "unit", "count"])?;
    for (t, row) in series.counts.iter().enumerate() {
        for (g, c) in row.iter().enumerate() {
            w.write_record([t.to_string(), series.unit_names[g].clone(), c.to_string()])?;
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn write_meta<W: Write>(out: W, series: &SurveillanceSeries) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "population"])?;
    for (name, pop) in series.unit_names.iter().zip(&series.populations) {
        w.write_record([name.clone(), pop.to_string()])?;
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Writes `t, unit, y, lambda`; units are numbered from 0.
pub fn write_simulation<W: Write>(out: W, sim: &SimulatedSeries) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "unit", "y", "lambda"])?;
    for t in 0..sim.len() {
        for g in 0..sim.units {
            w.write_record([t.to_string(), g.to_string(), sim.value(t, g).to_string(), sim.lambda(t, g).to_string()])?;
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Reads the output of [`write_simulation`]; `seed` and `burn_in` are not
/// part of the table and are set to 0.
pub fn read_simulation<R: Read>(input: R, period: usize) -> Result<SimulatedSeries, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let idx = columns(rdr.headers()?, &[&["t", "time"], &["unit"], &["y", "count"], &["lambda"]])?;
    let mut rows: Vec<(usize, usize, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let t = rec[idx[0]].trim().parse().map_err(|_| IoError::Parse { line, message: "bad time".into() })?;
        let g = rec[idx[1]].trim().parse().map_err(|_| IoError::Parse { line, message: "bad unit index".into() })?;
        rows.push((t, g, parse_real(&rec[idx[2]], line, "y")?, parse_real(&rec[idx[3]], line, "lambda")?));
    }
    let units = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let len = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    if units == 0 || rows.len() != units * len {
        return Err(IoError::Invalid(format!("{} rows do not fill {len} steps x {units} units", rows.len())));
    }
    let mut values = vec![f64::NAN; len * units];
    let mut lambdas = vec![f64::NAN; len * units];
    for (t, g, y, l) in rows {
        values[t * units + g] = y;
        lambdas[t * units + g] = l;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(IoError::Invalid("missing (t, unit) combination".into()));
    }
    Ok(SimulatedSeries { units, period, values, lambdas, seed: 0, burn_in: 0 })
}

/// Per-phase means and variances: `phase, unit, mu, sigma2`.
pub fn write_moment_summary<W: Write>(out: W, pm: &PeriodicMoments) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "unit", "mu", "sigma2", "sd"])?;
    for s in 0..pm.period() {
        for g in 0..pm.units() {
            w.write_record([
                s.to_string(),
                g.to_string(),
                pm.mu[s][g].to_string(),
                pm.sigma2[s][g].to_string(),
                pm.sd(s, g).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// `phase, lag, unit, other, gamma, rho` with `gamma = Cov(Y_unit,phase,
/// Y_other,phase-lag)`.
pub fn write_covariances<W: Write>(out: W, pm: &PeriodicMoments) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "lag", "unit", "other", "gamma", "rho"])?;
    for s in 0..pm.period() {
        for d in 0..=pm.d_max() {
            for i in 0..pm.units() {
                for j in 0..pm.units() {
                    w.write_record([
                        s.to_string(),
                        d.to_string(),
                        i.to_string(),
                        j.to_string(),
                        pm.gamma[s][d][i][j].to_string(),
                        pm.rho[s][d][i][j].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Rebuilds moments from the two tables written above.
pub fn read_moments<R1: Read, R2: Read>(summary: R1, covariances: R2) -> Result<PeriodicMoments, IoError> {
    let mut rdr = csv::Reader::from_reader(summary);
    let idx = columns(rdr.headers()?, &[&["phase"], &["unit"], &["mu"], &["sigma2"]])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let s: usize = rec[idx[0]].parse().map_err(|_| IoError::Parse { line, message: "bad phase".into() })?;
        let g: usize = rec[idx[1]].parse().map_err(|_| IoError::Parse { line, message: "bad unit".into() })?;
        rows.push((s, g, parse_real(&rec[idx[2]], line, "mu")?, parse_real(&rec[idx[3]], line, "sigma2")?));
    }
    let l = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let g_count = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut mu = vec![vec![f64::NAN; g_count]; l];
    let mut sigma2 = mu.clone();
    for (s, g, m, v) in rows {
        mu[s][g] = m;
        sigma2[s][g] = v;
    }

    let mut rdr = csv::Reader::from_reader(covariances);
    let idx = columns(rdr.headers()?, &[&["phase"], &["lag"], &["unit"], &["other"], &["gamma"], &["rho"]])?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let ints = (0..4)
            .map(|k| rec[idx[k]].parse::<usize>().map_err(|_| IoError::Parse { line, message: "bad index".into() }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((ints, parse_real(&rec[idx[4]], line, "gamma")?, parse_real(&rec[idx[5]], line, "rho")?));
    }
    let d_max = rows.iter().map(|r| r.0[1]).max().unwrap_or(0);
    let mut gamma = vec![vec![vec![vec![f64::NAN; g_count]; g_count]; d_max + 1]; l];
    let mut rho = gamma.clone();
    for (k, gm, r) in rows {
        if k[0] >= l || k[2] >= g_count || k[3] >= g_count {
            return Err(IoError::Invalid("covariance table does not match the summary".into()));
        }
        gamma[k[0]][k[1]][k[2]][k[3]] = gm;
        rho[k[0]][k[1]][k[2]][k[3]] = r;
    }
    let pm = PeriodicMoments { mu, sigma2, gamma, rho };
    let complete = pm.mu.iter().chain(&pm.sigma2).flatten().all(|v| !v.is_nan())
        && pm.gamma.iter().flatten().flatten().flatten().all(|v| !v.is_nan());
    if !complete {
        return Err(IoError::Invalid("moment tables are incomplete".into()));
    }
    Ok(pm)
}

/// `name, estimate, se, lower, upper` with Wald intervals.
pub fn write_coefficients<W: Write>(out: W, fit: &HhhFit) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "estimate", "se", "lower", "upper"])?;
    for ((name, est), se) in fit.names.iter().zip(&fit.theta).zip(&fit.se) {
        let half = 1.959963984540054 * se;
        w.write_record([name.clone(), est.to_string(), se.to_string(), (est - half).to_string(), (est + half).to_string()])?;
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// `component, phase, unit, estimate, lower, upper`.
pub fn write_curves<W: Write>(out: W, curves: &ParameterCurves, units: &[String]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["component", "phase", "unit", "estimate", "lower", "upper"])?;
    let parts = [("endemic", Some(&curves.endemic)), ("own", curves.own.as_ref()), ("cross", curves.cross.as_ref())];
    for (label, c) in parts {
        let Some(c) = c else { continue };
        for (s, row) in c.iter().enumerate() {
            for (g, p) in row.iter().enumerate() {
                w.write_record([
                    label.to_string(),
                    s.to_string(),
                    units[g].clone(),
                    p.estimate.to_string(),
                    p.lower.to_string(),
                    p.upper.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// `time, unit, conditional, unconditional`.
pub fn write_residuals<W: Write>(out: W, res: &ResidualSet, units: &[String]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "unit", "conditional", "unconditional"])?;
    for (i, (c, u)) in res.conditional.iter().zip(&res.unconditional).enumerate() {
        for g in 0..c.len() {
            w.write_record([(res.first_time + i).to_string(), units[g].clone(), c[g].to_string(), u[g].to_string()])?;
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// `kind, unit, other, lag, value, bound` for all residual correlograms.
pub fn write_correlograms<W: Write>(
    out: W,
    tables: &[(&str, &Vec<Vec<Correlogram>>)],
    units: &[String],
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "unit", "other", "lag", "value", "bound"])?;
    for (kind, grid) in tables {
        for (i, row) in grid.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                for (d, v) in c.values.iter().enumerate() {
                    w.write_record([
                        kind.to_string(),
                        units[i].clone(),
                        units[j].clone(),
                        d.to_string(),
                        v.to_string(),
                        c.bound.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Tidy shares: `phase, unit, component, source, lag, share`.
pub fn write_decomposition<W: Write>(out: W, dec: &MeanDecomposition, units: &[String]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "unit", "component", "source", "lag", "share"])?;
    for (s, per_unit) in dec.endemic.iter().enumerate() {
        for (g, share) in per_unit.iter().enumerate() {
            w.write_record([s.to_string(), units[g].clone(), "endemic".into(), String::new(), String::new(), share.to_string()])?;
            for (label, table) in [("epidemic", &dec.epidemic), ("lagged_mean", &dec.lagged_mean)] {
                for (src, lags) in table[s][g].iter().enumerate() {
                    for (q, v) in lags.iter().enumerate() {
                        w.write_record([
                            s.to_string(),
                            units[g].clone(),
                            label.to_string(),
                            units[src].clone(),
                            (q + 1).to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// `phase, unit, lambda, psi` (empty `psi` for Poisson).
pub fn write_weekwise<W: Write>(out: W, approx: &[Vec<NegBinApprox>], units: &[String]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phase", "unit", "lambda", "psi"])?;
    for (s, row) in approx.iter().enumerate() {
        for (g, a) in row.iter().enumerate() {
            w.write_record([s.to_string(), units[g].clone(), a.lambda.to_string(), a.psi.map_or(String::new(), |p| p.to_string())])?;
        }
    }
    w.flush().map_err(|e| IoError::Invalid(e.to_string()))
}

/// Creates `dir/name` for writing.
pub fn output_file(dir: &Path, name: &str) -> Result<File, IoError> {
    create(&dir.join(name))
}
