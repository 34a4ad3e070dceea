use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{reset, step, EnvSpec};
use crate::error::{Error, Result};
use crate::nnet::{state_policy_input, StatePolicy};
use crate::rng;
use crate::trajectory::Transition;

pub const DATASET_SCHEMA: &str = "dataset.v1";
pub const SHARD_SCHEMA: &str = "traj.v1";

/// How a stored trajectory's observations are rendered on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObsMode {
    /// Synthetic render: the pure rasterization.
    Clean,
    /// Sensor analog: dropout and intensity jitter seeded per step.
    Noisy { noise_seed: u64 },
}

/// Per-step observation noise stream for a noisy trajectory.
pub fn step_noise_seed(noise_seed: u64, step_index: usize) -> u64 {
    rng::derive(noise_seed, "obs-step", step_index as u64, 0)
}

/// One stored successful episode. Observations are reconstructed from
/// (spec, state, mode) on load, bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTrajectory {
    pub episode_seed: u64,
    #[serde(flatten)]
    pub mode: ObsMode,
    pub transitions: Vec<Transition>,
}

impl StoredTrajectory {
    pub fn is_success(&self) -> bool {
        self.transitions
            .last()
            .map(|t| t.done && t.reward == 1.0)
            .unwrap_or(false)
    }
}

/// Manifest entry for one environment shard.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvEntry {
    pub spec: EnvSpec,
    pub total: usize,
    pub clean: usize,
    pub noisy: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    schema: String,
    envs: BTreeMap<String, EnvEntry>,
}

#[derive(Serialize, Deserialize)]
struct ShardHeader {
    schema: String,
    env_id: String,
}

/// On-disk trajectory store: one line-delimited shard file per
/// environment plus a manifest with per-env counts. Only successful
/// trajectories can be stored.
pub struct TrajectoryDataset {
    root: PathBuf,
    envs: BTreeMap<String, EnvEntry>,
    cache: Mutex<BTreeMap<String, Arc<Vec<StoredTrajectory>>>>,
}

impl TrajectoryDataset {
    fn manifest_path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    fn shard_path(&self, env_id: &str) -> PathBuf {
        self.root.join("shards").join(format!("{env_id}.jsonl"))
    }

    /// Create an empty dataset. Fails if a manifest already exists.
    pub fn create(root: &Path) -> Result<Self> {
        if Self::manifest_path(root).exists() {
            return Err(Error::contract(format!(
                "dataset already exists at {}",
                root.display()
            )));
        }
        fs::create_dir_all(root.join("shards"))?;
        let ds = TrajectoryDataset {
            root: root.to_path_buf(),
            envs: BTreeMap::new(),
            cache: Mutex::new(BTreeMap::new()),
        };
        ds.write_manifest()?;
        Ok(ds)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let text = fs::read_to_string(Self::manifest_path(root))?;
        let manifest: ManifestFile = serde_json::from_str(&text)?;
        if manifest.schema != DATASET_SCHEMA {
            return Err(Error::Format {
                path: Self::manifest_path(root).display().to_string(),
                detail: format!("unsupported dataset schema {:?}", manifest.schema),
            });
        }
        Ok(TrajectoryDataset {
            root: root.to_path_buf(),
            envs: manifest.envs,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn open_or_create(root: &Path) -> Result<Self> {
        if Self::manifest_path(root).exists() {
            Self::open(root)
        } else {
            Self::create(root)
        }
    }

    fn write_manifest(&self) -> Result<()> {
        let manifest = ManifestFile {
            schema: DATASET_SCHEMA.into(),
            envs: self.envs.clone(),
        };
        let mut file = fs::File::create(Self::manifest_path(&self.root))?;
        file.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Environment ids in sorted order.
    pub fn env_ids(&self) -> Vec<String> {
        self.envs.keys().cloned().collect()
    }

    pub fn entry(&self, env_id: &str) -> Option<&EnvEntry> {
        self.envs.get(env_id)
    }

    pub fn manifest(&self) -> &BTreeMap<String, EnvEntry> {
        &self.envs
    }

    pub fn total_trajectories(&self) -> usize {
        self.envs.values().map(|e| e.total).sum()
    }

    /// Append successful trajectories for one environment. Rejects any
    /// trajectory whose terminal reward is not 1, and any spec mismatch
    /// with an existing shard.
    pub fn append(&mut self, spec: &EnvSpec, trajectories: &[StoredTrajectory]) -> Result<()> {
        for (i, t) in trajectories.iter().enumerate() {
            if !t.is_success() {
                return Err(Error::contract(format!(
                    "trajectory {i} for {} is not successful; only successes can be stored",
                    spec.env_id
                )));
            }
        }
        if let Some(entry) = self.envs.get(&spec.env_id) {
            if entry.spec != *spec {
                return Err(Error::contract(format!(
                    "spec mismatch for existing shard {}",
                    spec.env_id
                )));
            }
        }
        let path = self.shard_path(&spec.env_id);
        let is_new = !path.exists();
        let mut file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
        if is_new {
            let header = ShardHeader {
                schema: SHARD_SCHEMA.into(),
                env_id: spec.env_id.clone(),
            };
            writeln!(file, "{}", serde_json::to_string(&header)?)?;
        }
        let mut clean = 0;
        let mut noisy = 0;
        for t in trajectories {
            writeln!(file, "{}", serde_json::to_string(t)?)?;
            match t.mode {
                ObsMode::Clean => clean += 1,
                ObsMode::Noisy { .. } => noisy += 1,
            }
        }
        let entry = self.envs.entry(spec.env_id.clone()).or_insert_with(|| EnvEntry {
            spec: spec.clone(),
            total: 0,
            clean: 0,
            noisy: 0,
        });
        entry.total += trajectories.len();
        entry.clean += clean;
        entry.noisy += noisy;
        self.cache.lock().unwrap().remove(&spec.env_id);
        self.write_manifest()
    }

    /// Load (and cache) one environment's shard.
    pub fn load_env(&self, env_id: &str) -> Result<Arc<Vec<StoredTrajectory>>> {
        if let Some(hit) = self.cache.lock().unwrap().get(env_id) {
            return Ok(hit.clone());
        }
        let entry = self.envs.get(env_id).ok_or_else(|| {
            Error::contract(format!("dataset has no environment {env_id}"))
        })?;
        let path = self.shard_path(env_id);
        let file = fs::File::open(&path)?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().transpose()?.ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            detail: "empty shard".into(),
        })?;
        let header: ShardHeader = serde_json::from_str(&header_line)?;
        if header.schema != SHARD_SCHEMA || header.env_id != env_id {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: "shard header mismatch".into(),
            });
        }
        let mut trajectories = Vec::with_capacity(entry.total);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            trajectories.push(serde_json::from_str(&line)?);
        }
        if trajectories.len() != entry.total {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: format!(
                    "shard holds {} trajectories, manifest says {}",
                    trajectories.len(),
                    entry.total
                ),
            });
        }
        let arc = Arc::new(trajectories);
        self.cache.lock().unwrap().insert(env_id.to_string(), arc.clone());
        Ok(arc)
    }
}

/// Roll out the stochastic teacher on each spec until `per_env` successes
/// are collected (capped at `attempt_factor * per_env` attempts per env),
/// split half clean / half noise-augmented, and append to `dataset`.
pub fn generate_distill_dataset(
    teacher: &StatePolicy,
    specs: &[EnvSpec],
    per_env: usize,
    attempt_factor: usize,
    seed: u64,
    dataset: &mut TrajectoryDataset,
) -> Result<()> {
    let results: Vec<Result<Vec<StoredTrajectory>>> = specs
        .par_iter()
        .enumerate()
        .map(|(env_idx, spec)| {
            collect_teacher_trajectories(
                teacher,
                spec,
                per_env,
                attempt_factor,
                rng::derive(seed, "distill-env", env_idx as u64, 0),
            )
        })
        .collect();
    for (spec, result) in specs.iter().zip(results) {
        dataset.append(spec, &result?)?;
    }
    Ok(())
}

/// Success-filtered teacher rollouts for one environment, alternating
/// clean and noise-augmented observation modes.
pub fn collect_teacher_trajectories(
    teacher: &StatePolicy,
    spec: &EnvSpec,
    per_env: usize,
    attempt_factor: usize,
    seed: u64,
) -> Result<Vec<StoredTrajectory>> {
    let cap = per_env * attempt_factor.max(1);
    let mut out = Vec::with_capacity(per_env);
    let mut attempts = 0;
    while out.len() < per_env && attempts < cap {
        let episode_seed = rng::derive(seed, "distill-episode", attempts as u64, 0);
        let mut act_rng = rng::rng(seed, "distill-actions", attempts as u64, 0);
        attempts += 1;
        let mut state = reset(spec, episode_seed);
        let mut transitions = Vec::new();
        loop {
            let input = state_policy_input(spec, &state);
            let (action, _) = teacher.sample_action(&input, &mut act_rng);
            let (next, reward, done) = step(spec, &state, action).expect("valid action");
            transitions.push(Transition {
                state,
                action,
                reward,
                done,
            });
            state = next;
            if done {
                break;
            }
        }
        let success = transitions.last().map(|t| t.reward == 1.0).unwrap_or(false);
        if success {
            let idx = out.len();
            let mode = if idx % 2 == 0 {
                ObsMode::Clean
            } else {
                ObsMode::Noisy {
                    noise_seed: rng::derive(seed, "distill-noise", idx as u64, 0),
                }
            };
            out.push(StoredTrajectory {
                episode_seed,
                mode,
                transitions,
            });
        }
    }
    if out.len() < per_env {
        return Err(Error::TeacherTooWeak {
            env_id: spec.env_id.clone(),
            success_rate: out.len() as f64 / attempts as f64,
            attempts,
        });
    }
    Ok(out)
}
