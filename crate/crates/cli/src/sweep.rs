//! Grid sweeps: Cartesian product of parameter lists times seeds.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use sharp_core::eval::summarize;
use sharp_core::fsutil::{read_to_string, write_atomic};
use sharp_core::pipeline::{RunRecord, TrainConfig};
use sharp_core::Error;

use crate::{create_dir, train, CONFIG_FILE, RECORD_FILE};

pub struct Options {
    pub seeds: u64,
    pub parallel: bool,
    pub jobs: Option<usize>,
}

/// Short names accepted in grid files.
fn canonical_key(key: &str) -> &str {
    match key {
        "r" => "unlabelled_fraction",
        other => other,
    }
}

/// Parse a grid file into `(key, values)` pairs, in file order of sorted keys.
pub fn parse_grid(text: &str) -> sharp_core::Result<Vec<(String, Vec<toml::Value>)>> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("grid: {}", e.message())))?;
    let mut axes = Vec::with_capacity(table.len());
    for (key, value) in table {
        let values = match value {
            toml::Value::Array(v) => v,
            other => vec![other],
        };
        if values.is_empty() {
            return Err(Error::Config("empty sweep".into()));
        }
        if canonical_key(&key) == "seed" {
            return Err(Error::Config("grid must not set seed; use --seeds".into()));
        }
        axes.push((key, values));
    }
    if axes.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    Ok(axes)
}

/// All combinations, last axis varying fastest.
pub fn cells(axes: &[(String, Vec<toml::Value>)]) -> Vec<Vec<toml::Value>> {
    let mut out: Vec<Vec<toml::Value>> = vec![Vec::new()];
    for (_, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    out
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct Job {
    cell: usize,
    seed: u64,
    dir: PathBuf,
    config: std::result::Result<TrainConfig, String>,
}

enum Outcome {
    Done(RunRecord),
    Failed(String),
}

fn run_in_process(data: &Path, job: &Job) -> Outcome {
    let cfg = match &job.config {
        Ok(c) => c,
        Err(e) => return Outcome::Failed(e.clone()),
    };
    match train(data, cfg, &job.dir).and_then(|_| read_record(&job.dir)) {
        Ok(r) => Outcome::Done(r),
        Err(e) => Outcome::Failed(format!("{e:#}")),
    }
}

fn run_as_process(exe: &Path, data: &Path, job: &Job) -> Outcome {
    let cfg = match &job.config {
        Ok(c) => c,
        Err(e) => return Outcome::Failed(e.clone()),
    };
    let spawn = || -> Result<Outcome> {
        create_dir(&job.dir)?;
        let cfg_path = job.dir.join("sweep_config.toml");
        write_atomic(&cfg_path, cfg.to_toml_string().as_bytes())?;
        let output = Command::new(exe)
            .arg("train")
            .arg("--data")
            .arg(data)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&job.dir)
            .output()
            .context("spawning train")?;
        if output.status.success() {
            Ok(Outcome::Done(read_record(&job.dir)?))
        } else {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let reason = stderr.lines().last().unwrap_or("train failed").to_string();
            Ok(Outcome::Failed(reason))
        }
    };
    spawn().unwrap_or_else(|e| Outcome::Failed(format!("{e:#}")))
}

fn read_record(dir: &Path) -> Result<RunRecord> {
    let text = read_to_string(&dir.join(RECORD_FILE))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Data(format!("{RECORD_FILE}: {e}")))?)
}

pub fn run(data: &Path, grid: &Path, out: &Path, base: &TrainConfig, opts: &Options) -> Result<()> {
    let axes = parse_grid(&read_to_string(grid)?)?;
    if opts.seeds == 0 {
        return Err(Error::Config("empty sweep".into()).into());
    }
    let names: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
    let combos = cells(&axes);
    let mut jobs = Vec::new();
    for (c, values) in combos.iter().enumerate() {
        for i in 0..opts.seeds {
            let seed = base.seed + i;
            let mut overrides: Vec<(String, toml::Value)> = names
                .iter()
                .zip(values)
                .map(|(k, v)| (canonical_key(k).to_string(), v.clone()))
                .collect();
            overrides.push(("seed".into(), toml::Value::Integer(seed as i64)));
            jobs.push(Job {
                cell: c,
                seed,
                dir: out.join("runs").join(format!("cell_{c:03}")).join(format!("seed_{seed}")),
                config: base.with_overrides(&overrides).map_err(|e| e.to_string()),
            });
        }
    }
    create_dir(out)?;
    write_atomic(&out.join(CONFIG_FILE), base.to_toml_string().as_bytes())?;

    let outcomes: Vec<Outcome> = if opts.parallel {
        let exe = std::env::current_exe().context("locating sharp executable")?;
        let workers = opts
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .clamp(1, jobs.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Outcome>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    *slots[i].lock().expect("slot") = Some(run_as_process(&exe, data, job));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("every job ran"))
            .collect()
    } else {
        jobs.iter().map(|j| run_in_process(data, j)).collect()
    };

    let mut runs = csv::Writer::from_writer(Vec::new());
    let mut header = names.clone();
    header.extend(["seed", "status", "micro_f1", "macro_f1", "error"].map(String::from));
    runs.write_record(&header)?;
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); combos.len()];
    for (job, outcome) in jobs.iter().zip(&outcomes) {
        let mut row: Vec<String> = combos[job.cell].iter().map(show).collect();
        row.push(job.seed.to_string());
        match outcome {
            Outcome::Done(r) => {
                per_cell[job.cell].push(r.test_micro_f1);
                row.extend(["ok".into(), r.test_micro_f1.to_string(), r.test_macro_f1.to_string(), String::new()]);
            }
            Outcome::Failed(e) => {
                row.extend(["failed".into(), String::new(), String::new(), e.replace('\n', " ")]);
            }
        }
        runs.write_record(&row)?;
    }
    write_atomic(&out.join("runs.csv"), &runs.into_inner().context("flushing runs.csv")?)?;

    let mut agg = csv::Writer::from_writer(Vec::new());
    let mut header = names.clone();
    header.extend(["mean_f1", "std_f1"].map(String::from));
    agg.write_record(&header)?;
    for (values, f1s) in combos.iter().zip(&per_cell) {
        let mut row: Vec<String> = values.iter().map(show).collect();
        if f1s.is_empty() {
            row.extend([String::new(), String::new()]);
        } else {
            let s = summarize(f1s);
            row.extend([s.mean.to_string(), s.std.to_string()]);
        }
        agg.write_record(&row)?;
    }
    write_atomic(&out.join("sweep.csv"), &agg.into_inner().context("flushing sweep.csv")?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_axes() {
        let axes = parse_grid("r = [0.0, 0.3]\nalpha = [0.5, 1.0]\n").unwrap();
        let c = cells(&axes);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0].len(), 2);
    }

    #[test]
    fn empty_grids_are_rejected() {
        for text in ["", "alpha = []"] {
            assert!(parse_grid(text).unwrap_err().to_string().contains("empty sweep"));
        }
        assert!(parse_grid("seed = [1, 2]").is_err());
    }
}
