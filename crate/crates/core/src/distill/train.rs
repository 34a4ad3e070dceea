use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{all_trajectory_refs, epoch_chunk_plans, load_chunk, TrajRef, TrajectoryDataset};
use crate::env::{render_observation, EnvSpec, ObsGrid};
use crate::error::{Error, Result};
use crate::nnet::{adam_step, AdamState, GeneralistPolicy, ParamVector};
use crate::rng;
use crate::trajectory::Trajectory;

const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Successful trajectories per environment, half clean / half noisy.
    pub per_env: usize,
    /// Teacher rollout cap, as a multiple of `per_env`.
    pub teacher_attempt_factor: usize,
    pub chunk_trajs_per_env: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Early-stop patience on held-out log-likelihood.
    pub patience: usize,
    pub min_delta: f64,
    /// Fraction of trajectories held out per environment.
    pub val_fraction: f64,
    pub fewshot_epochs: usize,
    pub fewshot_minibatch: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            per_env: 100,
            teacher_attempt_factor: 20,
            chunk_trajs_per_env: 5,
            minibatch_size: 256,
            learning_rate: 1e-3,
            max_epochs: 50,
            patience: 3,
            min_delta: 1e-3,
            val_fraction: 0.1,
            fewshot_epochs: 50,
            fewshot_minibatch: 32,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_env == 0 || self.chunk_trajs_per_env == 0 || self.minibatch_size == 0 {
            return Err(Error::contract("distill sizes must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::contract("val_fraction must be in [0, 1)"));
        }
        if self.learning_rate <= 0.0 || self.max_epochs == 0 {
            return Err(Error::contract("learning_rate and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Adam state for both generalist nets.
pub struct DistillOptimizer {
    pub encoder: AdamState,
    pub head: AdamState,
}

impl DistillOptimizer {
    pub fn new(policy: &GeneralistPolicy) -> Self {
        DistillOptimizer {
            encoder: AdamState::new(policy.encoder.len()),
            head: AdamState::new(policy.head.len()),
        }
    }
}

/// Sum of per-pair negative log-likelihood gradients (not averaged), the
/// summed loss, and the pair count. Chunked fixed-order reduction keeps
/// the result independent of the parallelism degree.
fn nll_grad_sums(
    policy: &GeneralistPolicy,
    pairs: &[(ObsGrid, usize)],
) -> Result<(f64, ParamVector, ParamVector, usize)> {
    struct Acc {
        loss: f64,
        grad_encoder: ParamVector,
        grad_head: ParamVector,
    }
    let chunks: Vec<Acc> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = Acc {
                loss: 0.0,
                grad_encoder: ParamVector::zeros(policy.encoder.len()),
                grad_head: ParamVector::zeros(policy.head.len()),
            };
            let mut dlogits = vec![0.0; crate::env::ACTION_COUNT];
            for (obs, action) in chunk {
                let (logits, cache) = policy.forward_cached(obs);
                let logps = crate::nnet::log_softmax(&logits);
                acc.loss += -logps[*action];
                for (j, d) in dlogits.iter_mut().enumerate() {
                    let onehot = if j == *action { 1.0 } else { 0.0 };
                    *d = logps[j].exp() - onehot;
                }
                policy.backward(&cache, &dlogits, &mut acc.grad_encoder, &mut acc.grad_head);
            }
            acc
        })
        .collect();
    let mut loss = 0.0;
    let mut grad_encoder = ParamVector::zeros(policy.encoder.len());
    let mut grad_head = ParamVector::zeros(policy.head.len());
    for c in chunks {
        loss += c.loss;
        grad_encoder.axpy(1.0, &c.grad_encoder);
        grad_head.axpy(1.0, &c.grad_head);
    }
    if !loss.is_finite() {
        return Err(Error::numerical(format!("distill loss is not finite: {loss}")));
    }
    Ok((loss, grad_encoder, grad_head, pairs.len()))
}

/// One gradient step on the mean negative log-likelihood of a minibatch.
/// Respects the encoder freeze flag. Returns the minibatch mean loss.
pub fn distill_update(
    policy: &mut GeneralistPolicy,
    optimizer: &mut DistillOptimizer,
    minibatch: &[(ObsGrid, usize)],
    learning_rate: f64,
) -> Result<f64> {
    if minibatch.is_empty() {
        return Err(Error::contract("distill_update needs a non-empty minibatch"));
    }
    let (loss_sum, mut grad_encoder, mut grad_head, n) = nll_grad_sums(policy, minibatch)?;
    let scale = 1.0 / n as f64;
    grad_encoder.scale(scale);
    grad_head.scale(scale);
    adam_step(&mut policy.head, &grad_head, &mut optimizer.head, learning_rate);
    if !policy.encoder_frozen {
        adam_step(&mut policy.encoder, &grad_encoder, &mut optimizer.encoder, learning_rate);
    }
    Ok(loss_sum * scale)
}

/// Mean log-likelihood of a pair set under the policy (no gradients).
pub fn mean_log_likelihood(policy: &GeneralistPolicy, pairs: &[(ObsGrid, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sums: Vec<f64> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|(obs, action)| crate::nnet::log_softmax(&policy.logits(obs))[*action])
                .sum::<f64>()
        })
        .collect();
    sums.iter().sum::<f64>() / pairs.len() as f64
}

#[derive(Debug, Clone)]
pub struct DistillLog {
    pub epochs_run: usize,
    pub initial_val_ll: f64,
    pub best_val_ll: f64,
}

/// Split refs per environment into (train, validation) by whole
/// trajectories.
fn split_refs(refs: &[TrajRef], val_fraction: f64, seed: u64) -> (Vec<TrajRef>, Vec<TrajRef>) {
    use std::collections::BTreeMap;
    let mut by_env: BTreeMap<&str, Vec<&TrajRef>> = BTreeMap::new();
    for r in refs {
        by_env.entry(r.env_id.as_str()).or_default().push(r);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (env_idx, list) in by_env.values_mut().enumerate() {
        let mut r = rng::rng(seed, "val-split", env_idx as u64, 0);
        list.shuffle(&mut r);
        let n_val = ((list.len() as f64) * val_fraction).floor() as usize;
        for (i, tr) in list.iter().enumerate() {
            if i < n_val {
                val.push((*tr).clone());
            } else {
                train.push((*tr).clone());
            }
        }
    }
    (train, val)
}

/// Multi-epoch supervised training over balanced minibatches with
/// per-chunk gradient accumulation, early-stopped on a held-out
/// log-likelihood plateau. `policy` is the warm start; the returned
/// policy is the best-validation snapshot.
pub fn train_generalist(
    policy: &GeneralistPolicy,
    dataset: &TrajectoryDataset,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(GeneralistPolicy, DistillLog)> {
    cfg.validate()?;
    if dataset.env_ids().is_empty() {
        return Err(Error::contract("train_generalist needs a non-empty dataset"));
    }
    let refs = all_trajectory_refs(dataset);
    let (train_refs, val_refs) = split_refs(&refs, cfg.val_fraction, rng::derive(seed, "split", 0, 0));
    let val_pairs = materialize_refs(dataset, &val_refs)?;

    let mut current = policy.clone();
    let mut optimizer = DistillOptimizer::new(&current);
    let initial_val_ll = mean_log_likelihood(&current, &val_pairs);
    let mut best_val_ll = initial_val_ll;
    let mut best = current.clone();
    let mut bad_epochs = 0;
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let plans = epoch_chunk_plans(
            &train_refs,
            cfg.chunk_trajs_per_env,
            rng::derive(seed, "epoch", epoch as u64, 0),
        );
        for (chunk_idx, plan) in plans.iter().enumerate() {
            let minibatches = load_chunk(
                dataset,
                plan,
                cfg.minibatch_size,
                rng::derive(seed, "chunk", epoch as u64, chunk_idx as u64),
            )?;
            // Accumulate gradients across the chunk's minibatches, then
            // take a single optimizer step.
            let mut grad_encoder = ParamVector::zeros(current.encoder.len());
            let mut grad_head = ParamVector::zeros(current.head.len());
            let mut pair_count = 0usize;
            for mb in &minibatches {
                let (_, ge, gh, n) = nll_grad_sums(&current, mb)?;
                grad_encoder.axpy(1.0, &ge);
                grad_head.axpy(1.0, &gh);
                pair_count += n;
            }
            if pair_count == 0 {
                continue;
            }
            let scale = 1.0 / pair_count as f64;
            grad_encoder.scale(scale);
            grad_head.scale(scale);
            adam_step(&mut current.head, &grad_head, &mut optimizer.head, cfg.learning_rate);
            if !current.encoder_frozen {
                adam_step(&mut current.encoder, &grad_encoder, &mut optimizer.encoder, cfg.learning_rate);
            }
        }
        if !val_pairs.is_empty() {
            let val_ll = mean_log_likelihood(&current, &val_pairs);
            if val_ll > best_val_ll + cfg.min_delta {
                best_val_ll = val_ll;
                best = current.clone();
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= cfg.patience {
                    break;
                }
            }
        } else {
            best = current.clone();
        }
    }
    if val_pairs.is_empty() {
        best = current;
        best_val_ll = 0.0;
    }
    Ok((
        best,
        DistillLog {
            epochs_run,
            initial_val_ll,
            best_val_ll,
        },
    ))
}

fn materialize_refs(dataset: &TrajectoryDataset, refs: &[TrajRef]) -> Result<Vec<(ObsGrid, usize)>> {
    use crate::distill::{step_noise_seed, ObsMode};
    let per_traj: Vec<Vec<(ObsGrid, usize)>> = refs
        .par_iter()
        .map(|r| -> Result<Vec<(ObsGrid, usize)>> {
            let shard = dataset.load_env(&r.env_id)?;
            let spec = &dataset.entry(&r.env_id).expect("ref from manifest").spec;
            let traj = &shard[r.index];
            Ok(traj
                .transitions
                .iter()
                .enumerate()
                .map(|(t, tr)| {
                    let noise = match traj.mode {
                        ObsMode::Clean => None,
                        ObsMode::Noisy { noise_seed } => Some(step_noise_seed(noise_seed, t)),
                    };
                    (render_observation(spec, &tr.state, noise), tr.action)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_traj.into_iter().flatten().collect())
}

/// Head-only fine-tuning on a handful of demonstrations from one target
/// environment: the encoder is frozen and the head is trained on the
/// demos' clean observations for a fixed epoch budget.
pub fn finetune_fewshot(
    policy: &GeneralistPolicy,
    spec: &EnvSpec,
    demos: &[Trajectory],
    cfg: &DistillConfig,
    seed: u64,
) -> Result<GeneralistPolicy> {
    if demos.is_empty() {
        return Err(Error::contract("finetune_fewshot needs at least one demo"));
    }
    if demos.iter().any(|d| d.env_id != spec.env_id) {
        return Err(Error::contract(
            "finetune_fewshot demos must all come from the target spec",
        ));
    }
    let mut pairs: Vec<(ObsGrid, usize)> = demos
        .iter()
        .flat_map(|d| {
            d.transitions
                .iter()
                .map(|t| (render_observation(spec, &t.state, None), t.action))
        })
        .collect();

    let mut tuned = policy.clone();
    let was_frozen = tuned.encoder_frozen;
    tuned.encoder_frozen = true;
    let mut optimizer = DistillOptimizer::new(&tuned);
    let mut order_rng = rng::rng(seed, "fewshot", 0, 0);
    for _ in 0..cfg.fewshot_epochs {
        pairs.shuffle(&mut order_rng);
        for mb in pairs.chunks(cfg.fewshot_minibatch.max(1)) {
            distill_update(&mut tuned, &mut optimizer, mb, cfg.learning_rate)?;
        }
    }
    tuned.encoder_frozen = was_frozen;
    Ok(tuned)
}
