//! Dataset, draws and report persistence.
//!
//! Tabular data goes to RFC-4180 CSV, configs and reports to JSON. Floats
//! are written in Rust's shortest round-trip form, so write -> read ->
//! write is byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{ElppdResult, FailureCurve, FilteredPathSummary};
use crate::process::{Dataset, SimulateConfig, TimeGrid, UnitSeries};
use crate::sampler::Draws;

/// Generator provenance written alongside a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub seed: u64,
    pub config: SimulateConfig,
}

/// Columns: `unit_id,time,y[,z_true]`; one row per observation, units in
/// order, `t0 = 0` rows omitted.
pub fn write_dataset_csv<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let with_truth = dataset.units.iter().any(|u| u.z_true.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit_id", "time", "y"];
    if with_truth {
        header.push("z_true");
    }
    w.write_record(&header)?;
    for (j, unit) in dataset.units.iter().enumerate() {
        for (i, (&t, &y)) in unit.grid.obs_times().iter().zip(&unit.y).enumerate() {
            let mut record = vec![(j + 1).to_string(), t.to_string(), y.to_string()];
            if with_truth {
                let z = unit
                    .z_true
                    .as_ref()
                    .map(|z| z[i].to_string())
                    .unwrap_or_default();
                record.push(z);
            }
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_csv_string(dataset: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset_csv(&mut buf, dataset)?;
    String::from_utf8(buf).map_err(|e| Error::Structure(format!("non-utf8 csv: {e}")))
}

/// Parses a dataset CSV; `threshold` is attached from the sidecar or
/// caller since the table itself does not carry it.
pub fn read_dataset_csv<R: Read>(reader: R, threshold: Option<f64>) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let unit_col = col("unit_id")
        .ok_or_else(|| Error::Structure("dataset csv lacks a unit_id column".into()))?;
    let time_col =
        col("time").ok_or_else(|| Error::Structure("dataset csv lacks a time column".into()))?;
    let y_col = col("y").ok_or_else(|| Error::Structure("dataset csv lacks a y column".into()))?;
    let z_col = col("z_true");

    struct Acc {
        times: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        has_z: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut units: std::collections::HashMap<String, Acc> = std::collections::HashMap::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |ix: usize, what: &str| -> Result<f64> {
            record
                .get(ix)
                .ok_or_else(|| Error::Structure(format!("row {line}: missing {what}")))?
                .parse::<f64>()
                .map_err(|e| Error::Structure(format!("row {line}: bad {what}: {e}")))
        };
        let unit_id = record
            .get(unit_col)
            .ok_or_else(|| Error::Structure(format!("row {line}: missing unit_id")))?
            .to_string();
        let t = parse(time_col, "time")?;
        let y = parse(y_col, "y")?;
        let entry = units.entry(unit_id.clone()).or_insert_with(|| {
            order.push(unit_id);
            Acc { times: vec![0.0], y: Vec::new(), z: Vec::new(), has_z: false }
        });
        entry.times.push(t);
        entry.y.push(y);
        if let Some(zc) = z_col {
            let field = record.get(zc).unwrap_or_default();
            if !field.is_empty() {
                entry.has_z = true;
                entry.z.push(field.parse::<f64>().map_err(|e| {
                    Error::Structure(format!("row {line}: bad z_true: {e}"))
                })?);
            }
        }
    }
    if order.is_empty() {
        return Err(Error::Structure("dataset csv has no observations".into()));
    }
    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let acc = units.remove(&id).unwrap();
        let z_true = if acc.has_z {
            if acc.z.len() != acc.y.len() {
                return Err(Error::Structure(format!(
                    "unit {id}: z_true present for only some rows"
                )));
            }
            Some(acc.z)
        } else {
            None
        };
        series.push(UnitSeries::new(TimeGrid::new(acc.times)?, acc.y, z_true)?);
    }
    Dataset::new(series, threshold)
}

/// Writes `dataset.csv` plus the `dataset.json` sidecar into `dir`.
pub fn write_dataset_files(dir: &Path, dataset: &Dataset, sidecar: &DatasetSidecar) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv_file = fs::File::create(dir.join("dataset.csv"))?;
    write_dataset_csv(&mut csv_file, dataset)?;
    write_json(&dir.join("dataset.json"), sidecar)
}

/// Loads a dataset CSV; when a `dataset.json` sidecar sits next to it the
/// generator threshold is attached.
pub fn load_dataset(csv_path: &Path) -> Result<Dataset> {
    let sidecar_path = csv_path.with_file_name("dataset.json");
    let threshold = if sidecar_path.exists() {
        let sidecar: DatasetSidecar = read_json(&sidecar_path)?;
        sidecar.config.threshold
    } else {
        None
    };
    let file = fs::File::open(csv_path)?;
    read_dataset_csv(file, threshold)
}

/// Columns: `chain,iteration,divergent,energy` then one per parameter.
pub fn write_draws_csv<W: Write>(writer: W, draws: &Draws) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "chain".to_string(),
        "iteration".to_string(),
        "divergent".to_string(),
        "energy".to_string(),
    ];
    header.extend(draws.names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..draws.n_rows() {
        let mut record = vec![
            draws.chain[r].to_string(),
            (r % draws.n_per_chain).to_string(),
            (draws.divergent[r] as u8).to_string(),
            draws.energy[r].to_string(),
        ];
        record.extend(draws.row(r).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads draws written by [`write_draws_csv`]. Tree depths are not part
/// of the CSV schema and come back as zero.
pub fn read_draws_csv<R: Read>(reader: R) -> Result<Draws> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let fixed = ["chain", "iteration", "divergent", "energy"];
    if headers.len() < 5 || headers.iter().take(4).ne(fixed) {
        return Err(Error::Structure(
            "draws csv must start with chain,iteration,divergent,energy".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
    let dim = names.len();
    let mut data = Vec::new();
    let mut chain = Vec::new();
    let mut divergent = Vec::new();
    let mut energy = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let field = |ix: usize| -> Result<&str> {
            record
                .get(ix)
                .ok_or_else(|| Error::Structure(format!("draws row {line}: short record")))
        };
        chain.push(
            field(0)?
                .parse::<u16>()
                .map_err(|e| Error::Structure(format!("draws row {line}: bad chain: {e}")))?,
        );
        divergent.push(field(2)? == "1");
        energy.push(
            field(3)?
                .parse::<f64>()
                .map_err(|e| Error::Structure(format!("draws row {line}: bad energy: {e}")))?,
        );
        for k in 0..dim {
            data.push(field(4 + k)?.parse::<f64>().map_err(|e| {
                Error::Structure(format!("draws row {line}: bad value: {e}"))
            })?);
        }
    }
    if chain.is_empty() {
        return Err(Error::Structure("draws csv has no rows".into()));
    }
    let n_chains = *chain.iter().max().unwrap() as usize + 1;
    if chain.len() % n_chains != 0 {
        return Err(Error::Structure("draws csv has ragged chains".into()));
    }
    let n_per_chain = chain.len() / n_chains;
    let n_rows = chain.len();
    Ok(Draws::from_parts(
        names,
        n_chains,
        n_per_chain,
        data,
        chain,
        divergent,
        energy,
        vec![0; n_rows],
    ))
}

/// Long-format ensemble table: `draw,time,z`.
pub fn write_paths_csv<W: Write>(writer: W, times: &[f64], paths: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["draw", "time", "z"])?;
    for (d, path) in paths.iter().enumerate() {
        for (t, z) in times.iter().zip(path) {
            w.write_record([(d + 1).to_string(), t.to_string(), z.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide-format curve table: `time` then one column per quantile level.
pub fn write_failure_curve_csv<W: Write>(writer: W, curve: &FailureCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string()];
    header.extend(curve.levels.iter().map(|l| format!("q{}", l * 100.0)));
    w.write_record(&header)?;
    for (t, &time) in curve.times.iter().enumerate() {
        let mut record = vec![time.to_string()];
        record.extend(curve.quantiles.iter().map(|q| q[t].to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format band table: `unit,time,level,z`.
pub fn write_filtered_paths_csv<W: Write>(
    writer: W,
    summary: &FilteredPathSummary,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "time", "level", "z"])?;
    for (j, band) in summary.units.iter().enumerate() {
        for (l, &level) in band.levels.iter().enumerate() {
            for (t, &time) in band.times.iter().enumerate() {
                w.write_record([
                    (j + 1).to_string(),
                    time.to_string(),
                    level.to_string(),
                    band.quantiles[l][t].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Ranked comparison table: `model,method,elppd,rank`; failed models sort
/// last with an empty elppd field.
pub fn write_cv_table_csv<W: Write>(writer: W, rows: &[(String, ElppdResult)]) -> Result<()> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let ta = rows[a].1.total;
        let tb = rows[b].1.total;
        tb.partial_cmp(&ta)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(rows[a].0.cmp(&rows[b].0))
    });
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "method", "elppd", "rank"])?;
    for (rank, &ix) in order.iter().enumerate() {
        let (name, res) = &rows[ix];
        w.write_record([
            name.clone(),
            res.method.to_string(),
            res.total.map(|t| t.to_string()).unwrap_or_default(),
            (rank + 1).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{simulate_study, GridSpec, ParamRecipe};
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn sim_config() -> SimulateConfig {
        SimulateConfig {
            n_units: 3,
            grid: GridSpec::UniformIncrements { n: 4, lower: 0.5, upper: 1.5 },
            mu: ParamRecipe::Fixed { value: 1.0 },
            nu: ParamRecipe::Fixed { value: 0.3 },
            sigma: 0.1,
            threshold: Some(2.0),
        }
    }

    #[test]
    fn dataset_csv_roundtrip_is_byte_identical() {
        let data = simulate_study(&sim_config(), &RngState::from_seed(1)).unwrap();
        let first = dataset_to_csv_string(&data).unwrap();
        let back = read_dataset_csv(first.as_bytes(), data.threshold).unwrap();
        let second = dataset_to_csv_string(&back).unwrap();
        assert_eq!(first, second);
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_csv_without_truth_column() {
        let mut data = simulate_study(&sim_config(), &RngState::from_seed(2)).unwrap();
        for u in &mut data.units {
            u.z_true = None;
        }
        let text = dataset_to_csv_string(&data).unwrap();
        assert!(text.starts_with("unit_id,time,y\n"));
        let back = read_dataset_csv(text.as_bytes(), data.threshold).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_csv_rejects_garbage() {
        assert!(read_dataset_csv("not,a,dataset\n1,2,3\n".as_bytes(), None).is_err());
        assert!(read_dataset_csv("unit_id,time,y\n".as_bytes(), None).is_err());
        assert!(read_dataset_csv("unit_id,time,y\n1,0.5,oops\n".as_bytes(), None).is_err());
        // Non-increasing times within a unit.
        assert!(
            read_dataset_csv("unit_id,time,y\n1,1.0,0.1\n1,0.5,0.2\n".as_bytes(), None).is_err()
        );
    }

    #[test]
    fn draws_csv_roundtrip() {
        use crate::model::presets;
        use crate::sampler::{run, SamplerConfig};
        let data = simulate_study(&sim_config(), &RngState::from_seed(3)).unwrap();
        let config = SamplerConfig {
            n_chains: 2,
            n_warmup: 100,
            n_samples: 50,
            seed: 1,
            ..SamplerConfig::default()
        };
        let draws = run(&presets::complete_pooling(), &data, &config).unwrap();
        let mut buf = Vec::new();
        write_draws_csv(&mut buf, &draws).unwrap();
        let back = read_draws_csv(buf.as_slice()).unwrap();
        assert_eq!(back.names, draws.names);
        assert_eq!(back.n_chains, draws.n_chains);
        assert_eq!(back.n_per_chain, draws.n_per_chain);
        assert_eq!(back.chain, draws.chain);
        assert_eq!(back.divergent, draws.divergent);
        assert_eq!(back.energy, draws.energy);
        for r in 0..draws.n_rows() {
            assert_eq!(back.row(r), draws.row(r));
        }
        // And the second serialization is byte-identical.
        let mut buf2 = Vec::new();
        write_draws_csv(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    proptest! {
        /// Shortest-roundtrip float formatting keeps the dataset CSV
        /// write -> read -> write loop byte-identical for arbitrary
        /// finite observations.
        #[test]
        fn dataset_roundtrip_property(
            raw in proptest::collection::vec(-1.0e6_f64..1.0e6, 1..12),
            dts in proptest::collection::vec(0.01_f64..10.0, 1..12),
        ) {
            let n = raw.len().min(dts.len());
            let grid = TimeGrid::from_increments(&dts[..n]).unwrap();
            let unit = UnitSeries::new(grid, raw[..n].to_vec(), None).unwrap();
            let data = Dataset::new(vec![unit], None).unwrap();
            let a = dataset_to_csv_string(&data).unwrap();
            let back = read_dataset_csv(a.as_bytes(), None).unwrap();
            let b = dataset_to_csv_string(&back).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back, data);
        }
    }
}
