//! Learned world models: one delta regressor per state variable plus a
//! reward regressor, trained on a batch of transitions with an 80/10/10
//! train/validation/generalization split.

pub mod nn;

use crate::envs::{Absorbed, Env, StepModel};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub use nn::{
    mse, r_squared, train_regressor, Activation, GradBuf, Normalizer, Optimizer, Regressor,
    SubReport, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub sn: Vec<f64>,
    pub r: f64,
}

/// Where a dataset came from; carried through to the model file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub env: String,
    pub sampler: String,
    pub seed: u64,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct TransitionDataset {
    pub rows: Vec<Transition>,
    pub provenance: Provenance,
}

impl TransitionDataset {
    pub fn new(rows: Vec<Transition>, provenance: Provenance) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("dataset has no rows".into()));
        }
        let (sd, ad) = (rows[0].s.len(), rows[0].a.len());
        for (i, row) in rows.iter().enumerate() {
            if row.s.len() != sd || row.sn.len() != sd || row.a.len() != ad {
                return Err(Error::Data(format!("row {i}: inconsistent dimensions")));
            }
            if row.s.iter().chain(&row.a).chain(&row.sn).any(|v| !v.is_finite())
                || !row.r.is_finite()
            {
                return Err(Error::Data(format!("row {i}: non-finite value")));
            }
        }
        let mut provenance = provenance;
        provenance.size = rows.len();
        Ok(TransitionDataset { rows, provenance })
    }

    pub fn state_dim(&self) -> usize {
        self.rows[0].s.len()
    }

    pub fn action_dim(&self) -> usize {
        self.rows[0].a.len()
    }

    /// JSON-lines: a header object with the provenance, then one row per
    /// transition.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::json!({ "schema_version": 1, "provenance": self.provenance });
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for row in &self.rows {
            let line = serde_json::to_string(row).expect("transition serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty dataset file", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            provenance: Provenance,
        }
        let header: Header = serde_json::from_str(&header_line)
            .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Transition = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            rows.push(row);
        }
        TransitionDataset::new(rows, header.provenance)
    }
}

/// Collects a seeded batch of transitions for world-model training.
/// Mountain car uses uniformly random actions in 200-step episodes; the
/// cart-pole uses a random-walk force, a_{t+1} = clamp(a_t + U[-2, 2]), in
/// 100-step episodes. Goal absorption (rare, and the only source of
/// non-negative rewards) keeps the episode running so the frozen regime is
/// represented in the data; failure absorption (abundant) ends the episode
/// after a few frozen rows.
pub fn collect_transitions(env: &dyn Env, count: usize, seed: u64) -> Result<TransitionDataset> {
    if count == 0 {
        return Err(Error::Usage("transition count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walk = env.name() == "cpb";
    let episode_len = if walk { 100 } else { 200 };
    let (low, high) = (env.action_low(), env.action_high());
    let mut rows = Vec::with_capacity(count);
    'outer: loop {
        let mut s = env.sample_start(&mut rng);
        let mut a = vec![0.0f64; env.action_dim()];
        let mut absorbed_steps = 0;
        for _ in 0..episode_len {
            for i in 0..a.len() {
                a[i] = if walk {
                    (a[i] + rng.random_range(-2.0..=2.0)).clamp(low[i], high[i])
                } else {
                    rng.random_range(low[i]..=high[i])
                };
            }
            let (next, r) = env.step(&s, &a);
            rows.push(Transition {
                s: s.values.clone(),
                a: a.clone(),
                sn: next.values.clone(),
                r,
            });
            if rows.len() >= count {
                break 'outer;
            }
            s = next;
            if s.absorbed == Absorbed::Failure {
                absorbed_steps += 1;
                if absorbed_steps >= 5 {
                    break;
                }
            }
        }
    }
    TransitionDataset::new(
        rows,
        Provenance {
            env: env.name().to_string(),
            sampler: if walk { "random-walk" } else { "random-actions" }.to_string(),
            seed,
            size: 0,
        },
    )
}

/// Seeded shuffle into disjoint 80/10/10 train/validation/generalization
/// blocks; rounding remainders go to train.
pub fn split_dataset(
    d: &TransitionDataset,
    rng: &mut impl Rng,
) -> Result<(Vec<Transition>, Vec<Transition>, Vec<Transition>)> {
    let n = d.rows.len();
    if n < 10 {
        return Err(Error::Usage(format!(
            "dataset has {n} rows; need at least 10 to split 80/10/10"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let n_val = n / 10;
    let n_gen = n / 10;
    let n_train = n - n_val - n_gen;
    let pick = |range: std::ops::Range<usize>| -> Vec<Transition> {
        idx[range].iter().map(|&i| d.rows[i].clone()).collect()
    };
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

/// Per-model training reports: one per state variable, then the reward model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub delta_models: Vec<SubReport>,
    pub reward_model: SubReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldModel {
    pub state_dim: usize,
    pub action_dim: usize,
    /// One regressor per state variable over (s, a), predicting s'_i - s_i.
    pub models: Vec<Regressor>,
    /// Regressor over (s, a, s') predicting the immediate reward.
    pub reward_model: Regressor,
    pub provenance: Provenance,
}

impl WorldModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::json!({ "schema_version": 1, "model": self });
        let text = serde_json::to_string(&json).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct File {
            model: WorldModel,
        }
        let file: File = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: bad model file: {e}", path.display())))?;
        if file.model.models.len() != file.model.state_dim {
            return Err(Error::Data(format!(
                "{}: {} delta models for state_dim {}",
                path.display(),
                file.model.models.len(),
                file.model.state_dim
            )));
        }
        Ok(file.model)
    }
}

impl StepModel for WorldModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn step_vec(&self, s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
        let mut input = Vec::with_capacity(s.len() + a.len());
        input.extend_from_slice(s);
        input.extend_from_slice(a);
        let next: Vec<f64> = self
            .models
            .iter()
            .zip(s)
            .map(|(m, &si)| si + m.forward(&input)[0])
            .collect();
        let mut rin = input;
        rin.extend_from_slice(&next);
        let r = self.reward_model.forward(&rin)[0];
        (next, r)
    }
}

fn column(rows: &[Transition], f: impl Fn(&Transition) -> Vec<f64> + Sync) -> Vec<Vec<f64>> {
    rows.iter().map(f).collect()
}

/// Trains the per-variable delta models and the reward model. Sub-model
/// training is independent, so it runs in parallel; each sub-model derives
/// its own seed from the config seed, keeping results identical either way.
pub fn build_world_model(
    d: &TransitionDataset,
    cfg: &TrainConfig,
) -> Result<(WorldModel, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train, val, gen) = split_dataset(d, &mut rng)?;
    let state_dim = d.state_dim();

    let sa = |t: &Transition| {
        let mut v = t.s.clone();
        v.extend_from_slice(&t.a);
        v
    };
    let sas = |t: &Transition| {
        let mut v = sa(t);
        v.extend_from_slice(&t.sn);
        v
    };

    let train_sa = column(&train, sa);
    let val_sa = column(&val, sa);
    let gen_sa = column(&gen, sa);

    // Jobs 0..state_dim are delta models; job state_dim is the reward model.
    let jobs: Vec<(usize, Result<(Regressor, SubReport)>)> = (0..=state_dim)
        .into_par_iter()
        .map(|job| {
            let mut sub_cfg = cfg.clone();
            sub_cfg.seed = cfg.seed.wrapping_add(1 + job as u64);
            let result = if job < state_dim {
                let ty = |rows: &[Transition]| column(rows, |t| vec![t.sn[job] - t.s[job]]);
                let (t_y, v_y, g_y) = (ty(&train), ty(&val), ty(&gen));
                train_regressor(&train_sa, &t_y, &val_sa, &v_y, &sub_cfg).map(|(net, mut rep)| {
                    rep.generalization_mse = mse(&net, &gen_sa, &g_y);
                    rep.generalization_r2 = r_squared(&net, &gen_sa, &g_y);
                    (net, rep)
                })
            } else {
                let rx = |rows: &[Transition]| column(rows, sas);
                let ry = |rows: &[Transition]| column(rows, |t| vec![t.r]);
                train_regressor(&rx(&train), &ry(&train), &rx(&val), &ry(&val), &sub_cfg).map(
                    |(net, mut rep)| {
                        rep.generalization_mse = mse(&net, &rx(&gen), &ry(&gen));
                        rep.generalization_r2 = r_squared(&net, &rx(&gen), &ry(&gen));
                        (net, rep)
                    },
                )
            };
            (job, result)
        })
        .collect();

    let mut delta_models = Vec::with_capacity(state_dim);
    let mut delta_reports = Vec::with_capacity(state_dim);
    let mut reward = None;
    for (job, result) in jobs {
        let (net, rep) = result.map_err(|e| match e {
            Error::Training(msg) => Error::Training(format!("sub-model {job}: {msg}")),
            other => other,
        })?;
        if job < state_dim {
            delta_models.push(net);
            delta_reports.push(rep);
        } else {
            reward = Some((net, rep));
        }
    }
    let (reward_model, reward_report) = reward.expect("reward job present");

    Ok((
        WorldModel {
            state_dim,
            action_dim: d.action_dim(),
            models: delta_models,
            reward_model,
            provenance: d.provenance.clone(),
        },
        TrainReport {
            delta_models: delta_reports,
            reward_model: reward_report,
        },
    ))
}
