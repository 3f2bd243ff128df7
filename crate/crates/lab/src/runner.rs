//! Replica scheduling, result persistence and resumption.
//!
//! A run directory holds `partial.json` (the config of an unfinished run),
//! `results.csv` and `aux.csv`. Completed replicas are appended as they
//! finish; a restarted run with the same config skips them.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use brownot_core::SeedSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{io_err, LabError, LabResult};
use crate::io::{read_rows, AuxRow, ReplicaRow};
use crate::record::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub grid_index: usize,
    pub grid_value: f64,
    pub replica: u64,
}

impl Job {
    /// Stream for this replica, a pure function of the master seed and the
    /// job's coordinates.
    pub fn seed(&self, master_seed: u64) -> SeedSpec {
        SeedSpec::new(master_seed, 0).child(self.grid_index as u64).child(self.replica)
    }
}

/// What one replica produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaResult {
    pub cost: f64,
    pub mass: f64,
    pub aux: Vec<(String, f64)>,
}

impl ReplicaResult {
    pub fn new(cost: f64, mass: f64) -> Self {
        ReplicaResult {
            cost,
            mass,
            aux: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.aux.push((name.to_string(), value));
        self
    }

    pub fn aux_value(&self, name: &str) -> Option<f64> {
        self.aux.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completed {
    pub job: Job,
    pub result: ReplicaResult,
    pub wall_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct Partial {
    experiment: ExperimentKind,
    config: ExperimentConfig,
}

struct Writers {
    results: csv::Writer<File>,
    aux: csv::Writer<File>,
}

/// Owner of one run directory.
pub struct RunStore {
    dir: PathBuf,
    done: HashMap<(usize, u64), Completed>,
    writers: Option<Mutex<Writers>>,
}

fn resume_key(config: &ExperimentConfig) -> ExperimentConfig {
    // The output location does not change what is computed.
    ExperimentConfig {
        output: None,
        ..config.clone()
    }
}

impl RunStore {
    /// In-memory store that persists nothing.
    pub fn ephemeral() -> Self {
        RunStore {
            dir: PathBuf::new(),
            done: HashMap::new(),
            writers: None,
        }
    }

    /// Opens `dir`, resuming an unfinished run of the same config.
    pub fn open(dir: &Path, kind: ExperimentKind, config: &ExperimentConfig, grid: &[f64]) -> LabResult<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let partial_path = dir.join("partial.json");
        let results_path = dir.join("results.csv");
        let aux_path = dir.join("aux.csv");
        let mut done = HashMap::new();
        if partial_path.exists() {
            let text = std::fs::read_to_string(&partial_path).map_err(io_err(&partial_path))?;
            let partial: Partial = serde_json::from_str(&text)?;
            if partial.experiment != kind || resume_key(&partial.config) != resume_key(config) {
                return Err(LabError::Resume {
                    path: dir.to_path_buf(),
                    reason: "an unfinished run with a different config lives here; pick another --out or delete it".into(),
                });
            }
            if results_path.exists() {
                let rows: Vec<ReplicaRow> = read_rows(&results_path)?;
                let aux: Vec<AuxRow> = if aux_path.exists() { read_rows(&aux_path)? } else { Vec::new() };
                let mut aux_map: HashMap<(u64, u64), Vec<(String, f64)>> = HashMap::new();
                for a in aux {
                    aux_map.entry((a.grid_value.to_bits(), a.replica)).or_default().push((a.name, a.value));
                }
                for row in rows {
                    let Some(gi) = grid.iter().position(|g| g.to_bits() == row.grid_value.to_bits()) else {
                        return Err(LabError::Resume {
                            path: results_path.clone(),
                            reason: format!("grid value {} is not in the config", row.grid_value),
                        });
                    };
                    let job = Job {
                        grid_index: gi,
                        grid_value: row.grid_value,
                        replica: row.replica,
                    };
                    let aux = aux_map.remove(&(row.grid_value.to_bits(), row.replica)).unwrap_or_default();
                    done.insert(
                        (gi, row.replica),
                        Completed {
                            job,
                            result: ReplicaResult {
                                cost: row.cost,
                                mass: row.mass,
                                aux,
                            },
                            wall_ms: row.wall_ms,
                        },
                    );
                }
            }
        } else {
            let partial = Partial {
                experiment: kind,
                config: config.clone(),
            };
            write_atomic(&partial_path, serde_json::to_string_pretty(&partial)?.as_bytes())?;
        }
        // Rewrite both files from what survived, dropping any torn tail.
        // Headers are explicit so that `serialize` never repeats them.
        let mut plain = csv::WriterBuilder::new();
        plain.has_headers(false);
        let mut results = plain.from_path(&results_path)?;
        let mut aux = plain.from_path(&aux_path)?;
        aux.write_record(["grid_value", "replica", "name", "value"])?;
        let mut sorted: Vec<&Completed> = done.values().collect();
        sorted.sort_by_key(|c| (c.job.grid_index, c.job.replica));
        results.write_record(["grid_value", "replica", "cost", "mass", "wall_ms"])?;
        for c in &sorted {
            write_completed(&mut results, &mut aux, c)?;
        }
        results.flush().map_err(io_err(&results_path))?;
        aux.flush().map_err(io_err(&aux_path))?;
        // Reopen in append mode without headers.
        drop(results);
        drop(aux);
        let open = |p: &Path| -> LabResult<csv::Writer<File>> {
            let f = OpenOptions::new().append(true).open(p).map_err(io_err(p))?;
            Ok(csv::WriterBuilder::new().has_headers(false).from_writer(f))
        };
        Ok(RunStore {
            dir: dir.to_path_buf(),
            done,
            writers: Some(Mutex::new(Writers {
                results: open(&results_path)?,
                aux: open(&aux_path)?,
            })),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_persistent(&self) -> bool {
        self.writers.is_some()
    }

    pub fn completed_count(&self) -> usize {
        self.done.len()
    }

    /// Runs every `(grid point, replica)` job not already done, on `jobs`
    /// threads, and returns all results ordered by grid index then replica.
    pub fn run<F>(&mut self, grid: &[f64], replicas: u64, jobs: usize, f: F) -> LabResult<Vec<Completed>>
    where
        F: Fn(&Job) -> LabResult<ReplicaResult> + Sync,
    {
        let todo: Vec<Job> = grid
            .iter()
            .enumerate()
            .flat_map(|(gi, &g)| {
                (0..replicas).map(move |r| Job {
                    grid_index: gi,
                    grid_value: g,
                    replica: r,
                })
            })
            .filter(|j| !self.done.contains_key(&(j.grid_index, j.replica)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
        let writers = &self.writers;
        let fresh: Vec<LabResult<Completed>> = pool.install(|| {
            todo.par_iter()
                .map(|job| {
                    let start = Instant::now();
                    let result = f(job)?;
                    let c = Completed {
                        job: *job,
                        result,
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    };
                    if let Some(w) = writers {
                        let mut w = w.lock().expect("writer lock poisoned");
                        let Writers { results, aux } = &mut *w;
                        write_completed(results, aux, &c)?;
                        results.flush().map_err(io_err("results.csv"))?;
                        aux.flush().map_err(io_err("aux.csv"))?;
                    }
                    Ok(c)
                })
                .collect()
        });
        for c in fresh {
            let c = c?;
            self.done.insert((c.job.grid_index, c.job.replica), c);
        }
        let mut all: Vec<Completed> = self
            .done
            .values()
            .filter(|c| c.job.grid_index < grid.len() && c.job.replica < replicas)
            .cloned()
            .collect();
        all.sort_by_key(|c| (c.job.grid_index, c.job.replica));
        Ok(all)
    }

    /// Marks the run finished.
    pub fn finish(&self) -> LabResult<()> {
        if self.is_persistent() {
            let p = self.dir.join("partial.json");
            if p.exists() {
                std::fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
        Ok(())
    }
}

fn write_completed(results: &mut csv::Writer<File>, aux: &mut csv::Writer<File>, c: &Completed) -> LabResult<()> {
    results.serialize(ReplicaRow {
        grid_value: c.job.grid_value,
        replica: c.job.replica,
        cost: c.result.cost,
        mass: c.result.mass,
        wall_ms: c.wall_ms,
    })?;
    for (name, value) in &c.result.aux {
        aux.serialize(AuxRow {
            grid_value: c.job.grid_value,
            replica: c.job.replica,
            name: name.clone(),
            value: *value,
        })?;
    }
    Ok(())
}

/// Results grouped by grid index.
pub fn by_grid(all: &[Completed], grid_len: usize) -> Vec<Vec<&Completed>> {
    let mut out: Vec<Vec<&Completed>> = vec![Vec::new(); grid_len];
    for c in all {
        out[c.job.grid_index].push(c);
    }
    out
}

/// Named aux values of one grid point, in replica order.
pub fn aux_series(group: &[&Completed]) -> BTreeMap<String, Vec<f64>> {
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in group {
        for (n, v) in &c.result.aux {
            m.entry(n.clone()).or_default().push(*v);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            replicas: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn resumes_and_skips_done_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let grid = [1.0, 2.0];
        let cfg = config();
        let f = |j: &Job| Ok(ReplicaResult::new(j.grid_value * 10.0 + j.replica as f64, 1.0).with("k", j.replica as f64));
        {
            let mut store = RunStore::open(dir.path(), ExperimentKind::Constant, &cfg, &grid).unwrap();
            // Only grid point 0 finishes before the "interruption".
            store.run(&grid[..1], 3, 1, f).unwrap();
        }
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let mut store = RunStore::open(dir.path(), ExperimentKind::Constant, &cfg, &grid).unwrap();
        assert_eq!(store.completed_count(), 3);
        let all = store
            .run(&grid, 3, 2, |j| {
                calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                f(j)
            })
            .unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 3);
        assert_eq!(all.len(), 6);
        assert_eq!(all[4].result.cost, 21.0);
        assert_eq!(all[1].result.aux_value("k"), Some(1.0));
        store.finish().unwrap();
        assert!(!dir.path().join("partial.json").exists());
        let rows: Vec<ReplicaRow> = read_rows(&dir.path().join("results.csv")).unwrap();
        assert_eq!(rows.len(), 6);
    }

    #[test]
    fn refuses_to_mix_configs() {
        let dir = tempfile::tempdir().unwrap();
        let grid = [1.0];
        RunStore::open(dir.path(), ExperimentKind::Constant, &config(), &grid).unwrap();
        let other = ExperimentConfig {
            p: 0.3,
            ..config()
        };
        assert!(matches!(
            RunStore::open(dir.path(), ExperimentKind::Constant, &other, &grid),
            Err(LabError::Resume { .. })
        ));
    }

    #[test]
    fn torn_tail_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let grid = [5.0];
        let cfg = config();
        {
            let mut store = RunStore::open(dir.path(), ExperimentKind::TorusRate, &cfg, &grid).unwrap();
            store.run(&grid, 2, 1, |_| Ok(ReplicaResult::new(1.0, 2.0))).unwrap();
        }
        let path = dir.path().join("results.csv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("5,2,0.");
        std::fs::write(&path, text).unwrap();
        let store = RunStore::open(dir.path(), ExperimentKind::TorusRate, &cfg, &grid).unwrap();
        assert_eq!(store.completed_count(), 2);
    }
}
