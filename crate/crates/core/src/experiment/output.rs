//! CSV writers and readers for experiment tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::runner::{AggregateRecord, ExperimentOutput};
use crate::error::{Error, Result};

pub const TRIALS_HEADER: &str =
    "experiment,algorithm,batch_size,trial,seed,msve,presentations,converged,unvisited_fraction,wall_time_ms";
pub const AGGREGATES_HEADER: &str = "experiment,algorithm,batch_size,trials,mean_msve,ci_low,ci_high,divergent_count";
pub const SWEEP_HEADER: &str = "experiment,algorithm,batch_size,parameter,value,mean_msve,divergent_count,selected";
pub const RATIOS_HEADER: &str = "experiment,slip_p,numerator,denominator,ratio";

pub const TRIALS_FILE: &str = "trials.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const RATIOS_FILE: &str = "ratios.csv";

/// Shortest round-trip text for `x`, in scientific form outside
/// `[1e-4, 1e6)`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else if x == 0.0 || (1e-4..1e6).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn trials_csv(out: &ExperimentOutput) -> String {
    let mut s = format!("{TRIALS_HEADER}\n");
    for r in &out.trials {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.algorithm,
            r.batch_size,
            r.trial,
            r.seed,
            fmt_f64(r.msve),
            r.presentations,
            r.converged,
            fmt_f64(r.unvisited_fraction),
            fmt_f64(r.wall_time_ms)
        ));
    }
    s
}

pub fn aggregates_csv(rows: &[AggregateRecord]) -> String {
    let mut s = format!("{AGGREGATES_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.algorithm,
            r.batch_size,
            r.trials,
            fmt_f64(r.mean_msve),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            r.divergent_count
        ));
    }
    s
}

pub fn sweep_csv(out: &ExperimentOutput) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in &out.sweep {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.algorithm,
            r.batch_size,
            r.parameter,
            fmt_f64(r.value),
            fmt_f64(r.mean_msve),
            r.divergent_count,
            r.selected
        ));
    }
    s
}

pub fn ratios_csv(out: &ExperimentOutput) -> String {
    let mut s = format!("{RATIOS_HEADER}\n");
    for r in &out.ratios {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.experiment,
            fmt_f64(r.slip_p),
            r.numerator,
            r.denominator,
            fmt_f64(r.ratio)
        ));
    }
    s
}

/// Writes every table into `dir`, returning the paths written.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![
        (TRIALS_FILE, trials_csv(out)),
        (AGGREGATES_FILE, aggregates_csv(&out.aggregates)),
        (SWEEP_FILE, sweep_csv(out)),
    ];
    if !out.ratios.is_empty() {
        files.push((RATIOS_FILE, ratios_csv(out)));
    }
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::File::create(&path)?.write_all(body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn parse_f64(field: &str) -> Result<f64> {
    match field {
        "NaN" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field.parse().map_err(|_| Error::InvalidInput(format!("bad number `{field}`"))),
    }
}

fn parse_usize(field: &str) -> Result<usize> {
    field.parse().map_err(|_| Error::InvalidInput(format!("bad count `{field}`")))
}

pub fn read_aggregates(text: &str) -> Result<Vec<AggregateRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == AGGREGATES_HEADER => {}
        _ => return Err(Error::InvalidInput("aggregate CSV header mismatch".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.trim_end().split(',').collect();
            if f.len() != 8 {
                return Err(Error::InvalidInput(format!("aggregate row has {} fields: `{line}`", f.len())));
            }
            Ok(AggregateRecord {
                experiment: f[0].to_string(),
                algorithm: f[1].to_string(),
                batch_size: parse_usize(f[2])?,
                trials: parse_usize(f[3])?,
                mean_msve: parse_f64(f[4])?,
                ci_low: parse_f64(f[5])?,
                ci_high: parse_f64(f[6])?,
                divergent_count: parse_usize(f[7])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1e-30, 0.25, 123.5, 1e7, -3.75e-9, f64::INFINITY, 0.1 + 0.2] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }

    #[test]
    fn aggregates_round_trip() {
        let rows = vec![AggregateRecord {
            experiment: "e".into(),
            algorithm: "TD".into(),
            batch_size: 5,
            trials: 10,
            mean_msve: 1.5e-9,
            ci_low: 1e-9,
            ci_high: f64::NAN,
            divergent_count: 1,
        }];
        let back = read_aggregates(&aggregates_csv(&rows)).unwrap();
        assert_eq!(back[0].mean_msve, 1.5e-9);
        assert!(back[0].ci_high.is_nan());
        assert!(read_aggregates("wrong\n").is_err());
    }
}
