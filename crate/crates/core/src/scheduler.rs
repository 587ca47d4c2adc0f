//! Step-split selection: exhaustive search over the action menu and a
//! tabular double Q-learner over bucketed scenarios.
//!
//! Every episode is a single decision (scenario, split, reward), so the
//! learner is a contextual bandit with discount 0.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::metrics::ResourceScenario;
use crate::rng::{derive_seed, seeded, SimRng};
use crate::scalar::Real;
use crate::schedules::float17;
use crate::transceiver::{Pipeline, PipelineConfig, TranscriptRecord, Variant};

pub const FAILURE_PENALTY: f64 = 1e3;
pub const DEFAULT_LAMBDA_Q: f64 = 10.0;

/// `-L - lambda_q mse`, minus [`FAILURE_PENALTY`] for failed runs.
pub fn reward<T: Real>(tr: &TranscriptRecord<T>, lambda_q: f64) -> f64 {
    reward_from(tr.total_latency(), tr.mse, tr.failed, lambda_q)
}

pub fn reward_from(latency: f64, mse: f64, failed: bool, lambda_q: f64) -> f64 {
    let r = -latency - lambda_q * mse;
    if failed {
        r - FAILURE_PENALTY
    } else {
        r
    }
}

/// Discretized scenario axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub snr_db: Vec<f64>,
    pub rho_edge: Vec<f64>,
    pub rho_local: Vec<f64>,
    #[serde(default = "default_c_edge")]
    pub c_edge: f64,
    #[serde(default = "default_c_local")]
    pub c_local: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_override: Option<f64>,
}

fn default_c_edge() -> f64 {
    0.4
}

fn default_c_local() -> f64 {
    1.6
}

fn default_bandwidth() -> f64 {
    20e6
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            rho_edge: vec![0.25, 0.5, 0.75, 1.0],
            rho_local: vec![0.25, 0.5, 0.75, 1.0],
            c_edge: default_c_edge(),
            c_local: default_c_local(),
            bandwidth_hz: default_bandwidth(),
            rate_override: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioState {
    pub snr_bucket: usize,
    pub rho_edge_bucket: usize,
    pub rho_local_bucket: usize,
}

impl ScenarioGrid {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.rho_edge.is_empty() || self.rho_local.is_empty() {
            return Err(Error::Config("scenario grid axes must be nonempty".into()));
        }
        for s in self.states() {
            self.scenario(s).validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snr_db.len() * self.rho_edge.len() * self.rho_local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// States in canonical order: snr outermost, local compute innermost.
    pub fn states(&self) -> impl Iterator<Item = ScenarioState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    pub fn state(&self, index: usize) -> ScenarioState {
        let nl = self.rho_local.len();
        let ne = self.rho_edge.len();
        ScenarioState {
            snr_bucket: index / (ne * nl),
            rho_edge_bucket: (index / nl) % ne,
            rho_local_bucket: index % nl,
        }
    }

    pub fn index(&self, s: ScenarioState) -> usize {
        (s.snr_bucket * self.rho_edge.len() + s.rho_edge_bucket) * self.rho_local.len() + s.rho_local_bucket
    }

    pub fn scenario(&self, s: ScenarioState) -> ResourceScenario {
        ResourceScenario {
            rho_edge: self.rho_edge[s.rho_edge_bucket],
            rho_local: self.rho_local[s.rho_local_bucket],
            c_edge: self.c_edge,
            c_local: self.c_local,
            snr_db: self.snr_db[s.snr_bucket],
            bandwidth_hz: self.bandwidth_hz,
            rate_override: self.rate_override,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub t_edge: usize,
    pub t_local: usize,
}

/// Splits of a fixed budget, sorted by increasing `t_edge`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMenu {
    total: usize,
    actions: Vec<Action>,
}

impl ActionMenu {
    pub fn new(total: usize, mut t_edges: Vec<usize>) -> Result<Self> {
        t_edges.sort_unstable();
        t_edges.dedup();
        if t_edges.is_empty() {
            return Err(Error::Config("action menu is empty".into()));
        }
        if let Some(&bad) = t_edges.iter().find(|&&t| t > total) {
            return Err(Error::Config(format!("menu split {bad} exceeds total steps {total}")));
        }
        let actions = t_edges
            .into_iter()
            .map(|t_edge| Action { t_edge, t_local: total - t_edge })
            .collect();
        Ok(Self { total, actions })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl Default for ActionMenu {
    fn default() -> Self {
        Self::new(20, vec![0, 4, 8, 12, 16, 20]).expect("static menu")
    }
}

/// Reward of one rollout of `action` in state `state` (flat indices).
pub trait Evaluator: Sync {
    fn evaluate(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(usize, usize, &mut SimRng) -> Result<f64> + Sync,
{
    fn evaluate(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<f64> {
        self(state, action, rng)
    }
}

/// Runs ROUTE with the chosen split on a bucketed scenario; the label is
/// drawn from the source mixture.
pub struct PipelineEvaluator<'a, T> {
    pub pipeline: &'a Pipeline<'a, T>,
    pub grid: &'a ScenarioGrid,
    pub menu: &'a ActionMenu,
    pub channel: ChannelConfig,
    pub lambda_q: f64,
    pub timeout_s: f64,
}

impl<T: Real> PipelineEvaluator<'_, T> {
    pub fn rollout(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<TranscriptRecord<T>> {
        let a = self.menu.actions()[action];
        let mut cfg = PipelineConfig::new(Variant::Route, a.t_edge, self.menu.total(), self.channel.clone());
        cfg.timeout_s = self.timeout_s;
        let label = self.pipeline.source().sample_label(rng);
        let sc = self.grid.scenario(self.grid.state(state));
        self.pipeline.run(&cfg, label, &sc, 0, rng)
    }
}

impl<T: Real> Evaluator for PipelineEvaluator<'_, T> {
    fn evaluate(&self, state: usize, action: usize, rng: &mut SimRng) -> Result<f64> {
        Ok(reward(&self.rollout(state, action, rng)?, self.lambda_q))
    }
}

/// Mean reward of every action over `n_eval` rollouts. Rollout `i` of every
/// action uses the same seed, so actions are compared on paired draws.
pub fn action_values<E: Evaluator + ?Sized>(
    state: usize,
    n_actions: usize,
    evaluator: &E,
    n_eval: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_eval == 0 {
        return Err(Error::param("n_eval", "must be at least 1"));
    }
    (0..n_actions)
        .map(|a| {
            let rewards = (0..n_eval)
                .into_par_iter()
                .map(|i| evaluator.evaluate(state, a, &mut seeded(derive_seed(seed, &[i as u64]))))
                .collect::<Result<Vec<f64>>>()?;
            Ok(rewards.iter().sum::<f64>() / n_eval as f64)
        })
        .collect()
}

/// Index of the largest value; ties go to the larger index, i.e. the larger
/// `t_edge` on a sorted menu.
pub fn argmax_prefer_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive search: the action with the best mean reward, ties toward
/// larger `t_edge`. Returns the action index and its mean reward.
pub fn grid_search_optimal<E: Evaluator + ?Sized>(
    state: usize,
    menu: &ActionMenu,
    evaluator: &E,
    n_eval: usize,
    seed: u64,
) -> Result<(usize, f64)> {
    let values = action_values(state, menu.len(), evaluator, n_eval, seed)?;
    let best = argmax_prefer_last(&values);
    Ok((best, values[best]))
}

/// Two value tables with per-table visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    updates_a: Vec<u64>,
    updates_b: Vec<u64>,
    visits: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    A,
    B,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            n_states,
            n_actions,
            a: vec![0.0; n],
            b: vec![0.0; n],
            updates_a: vec![0; n],
            updates_b: vec![0; n],
            visits: vec![0; n],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn at(&self, s: usize, a: usize) -> usize {
        assert!(s < self.n_states && a < self.n_actions, "state/action out of range");
        s * self.n_actions + a
    }

    pub fn value(&self, table: Table, s: usize, a: usize) -> f64 {
        let i = self.at(s, a);
        match table {
            Table::A => self.a[i],
            Table::B => self.b[i],
        }
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[self.at(s, a)]
    }

    /// Number of updates table `table` has received at `(s, a)`.
    pub fn updates(&self, table: Table, s: usize, a: usize) -> u64 {
        let i = self.at(s, a);
        match table {
            Table::A => self.updates_a[i],
            Table::B => self.updates_b[i],
        }
    }

    /// Average of the two estimators.
    pub fn mean_values(&self, s: usize) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| {
                let i = self.at(s, a);
                0.5 * (self.a[i] + self.b[i])
            })
            .collect()
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax_prefer_last(&self.mean_values(s))
    }

    pub fn policy(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.greedy(s)).collect()
    }

    fn row(&self, table: Table, s: usize) -> &[f64] {
        let range = s * self.n_actions..(s + 1) * self.n_actions;
        match table {
            Table::A => &self.a[range],
            Table::B => &self.b[range],
        }
    }

    /// Applies the update to one table chosen explicitly.
    pub fn update_table(
        &mut self,
        table: Table,
        s: usize,
        a: usize,
        r: f64,
        s_next: Option<usize>,
        step_size: f64,
        discount: f64,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&step_size) {
            return Err(Error::param("step_size", format!("must be in [0, 1] (got {step_size})")));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::param("discount", format!("must be in [0, 1] (got {discount})")));
        }
        let other = match table {
            Table::A => Table::B,
            Table::B => Table::A,
        };
        let bootstrap = match s_next {
            Some(next) if discount > 0.0 => {
                let pick = argmax_prefer_last(self.row(table, next));
                discount * self.value(other, next, pick)
            }
            _ => 0.0,
        };
        let i = self.at(s, a);
        let (values, counts) = match table {
            Table::A => (&mut self.a, &mut self.updates_a),
            Table::B => (&mut self.b, &mut self.updates_b),
        };
        values[i] += step_size * (r + bootstrap - values[i]);
        counts[i] += 1;
        self.visits[i] += 1;
        Ok(())
    }

    /// Double Q-learning update: a fair coin picks the table to update,
    /// which bootstraps from the other table's value at its own argmax.
    /// `s_next = None` marks a terminal transition.
    #[allow(clippy::too_many_arguments)]
    pub fn q_update<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        a: usize,
        r: f64,
        s_next: Option<usize>,
        step_size: f64,
        discount: f64,
        rng: &mut R,
    ) -> Result<()> {
        let table = if rng.random::<bool>() { Table::A } else { Table::B };
        self.update_table(table, s, a, r, s_next, step_size, discount)
    }

    /// CSV with one row per (state, action).
    pub fn write_csv<W: Write>(&self, grid: Option<&ScenarioGrid>, menu: &ActionMenu, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "state",
            "snr_bucket",
            "rho_edge_bucket",
            "rho_local_bucket",
            "t_edge",
            "t_local",
            "value_a",
            "value_b",
            "visits",
        ])?;
        for s in 0..self.n_states {
            let buckets = match grid {
                Some(g) => {
                    let st = g.state(s);
                    [st.snr_bucket, st.rho_edge_bucket, st.rho_local_bucket].map(|b| b.to_string())
                }
                None => [String::new(), String::new(), String::new()],
            };
            for (a, act) in menu.actions().iter().enumerate() {
                let [b0, b1, b2] = buckets.clone();
                w.write_record([
                    s.to_string(),
                    b0,
                    b1,
                    b2,
                    act.t_edge.to_string(),
                    act.t_local.to_string(),
                    float17(self.value(Table::A, s, a)),
                    float17(self.value(Table::B, s, a)),
                    self.visits(s, a).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear decay from `start` to `end` over `decay_episodes`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        Self { start: eps, end: eps, decay_episodes: 1 }
    }

    pub fn at(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            self.end
        } else {
            let f = episode as f64 / self.decay_episodes.max(1) as f64;
            self.start + (self.end - self.start) * f
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub epsilon: EpsilonSchedule,
    /// Any table value beyond this magnitude aborts training.
    pub reward_bound: f64,
}

impl TrainConfig {
    pub fn new(episodes: usize) -> Self {
        Self {
            episodes,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: episodes / 2,
            },
            reward_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyTraining {
    pub q: QTable,
    pub log: Vec<EpisodeLog>,
}

/// Trains on single-step episodes: state uniform over `n_states`, action
/// epsilon-greedy on the averaged tables (ties broken at random), rollout
/// seeded from the episode rng, then a terminal double-Q update with step
/// size `1 / n` where `n` counts the updated table's visits.
pub fn train_policy<E: Evaluator + ?Sized, R: Rng + ?Sized>(
    evaluator: &E,
    n_states: usize,
    n_actions: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PolicyTraining> {
    if cfg.episodes == 0 {
        return Err(Error::param("episodes", "must be at least 1"));
    }
    if n_states == 0 || n_actions == 0 {
        return Err(Error::param("n_states", "state and action sets must be nonempty"));
    }
    let mut q = QTable::new(n_states, n_actions);
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let eps = cfg.epsilon.at(episode);
        let s = rng.random_range(0..n_states);
        let a = if rng.random::<f64>() < eps {
            rng.random_range(0..n_actions)
        } else {
            let values = q.mean_values(s);
            let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ties: Vec<usize> = (0..n_actions).filter(|&i| values[i] == best).collect();
            ties[rng.random_range(0..ties.len())]
        };
        let r = evaluator.evaluate(s, a, &mut seeded(rng.random()))?;
        let table = if rng.random::<bool>() { Table::A } else { Table::B };
        let n = q.updates(table, s, a) + 1;
        q.update_table(table, s, a, r, None, 1.0 / n as f64, 0.0)?;
        let value = q.value(table, s, a);
        if !value.is_finite() || value.abs() > cfg.reward_bound {
            return Err(Error::ValueBound { episode, value, bound: cfg.reward_bound });
        }
        log.push(EpisodeLog { episode, state: s, action: a, reward: r, epsilon: eps });
    }
    Ok(PolicyTraining { q, log })
}

pub fn write_training_log<W: Write>(log: &[EpisodeLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "state", "action", "reward", "epsilon"])?;
    for e in log {
        w.write_record([
            e.episode.to_string(),
            e.state.to_string(),
            e.action.to_string(),
            float17(e.reward),
            float17(e.epsilon),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the policy report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyRow {
    pub state: usize,
    pub policy_action: usize,
    pub policy_reward: f64,
    pub oracle_action: usize,
    pub oracle_reward: f64,
}

impl PolicyRow {
    /// `|R_policy - R_oracle| / |R_oracle|`.
    pub fn relative_gap(&self) -> f64 {
        (self.policy_reward - self.oracle_reward).abs() / self.oracle_reward.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates the greedy policy against the exhaustive-search oracle on
/// every state, with paired rollouts of `n_eval` each.
pub fn policy_report<E: Evaluator + ?Sized>(
    q: &QTable,
    menu: &ActionMenu,
    evaluator: &E,
    n_eval: usize,
    seed: u64,
) -> Result<Vec<PolicyRow>> {
    (0..q.n_states())
        .map(|s| {
            let values = action_values(s, menu.len(), evaluator, n_eval, derive_seed(seed, &[s as u64]))?;
            let oracle_action = argmax_prefer_last(&values);
            let policy_action = q.greedy(s);
            Ok(PolicyRow {
                state: s,
                policy_action,
                policy_reward: values[policy_action],
                oracle_action,
                oracle_reward: values[oracle_action],
            })
        })
        .collect()
}

pub fn write_policy_report<W: Write>(
    rows: &[PolicyRow],
    grid: Option<&ScenarioGrid>,
    menu: &ActionMenu,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "state",
        "snr_db",
        "rho_edge",
        "rho_local",
        "policy_t_edge",
        "policy_t_local",
        "policy_reward",
        "oracle_t_edge",
        "oracle_t_local",
        "oracle_reward",
        "relative_gap",
    ])?;
    for r in rows {
        let axes = match grid {
            Some(g) => {
                let sc = g.scenario(g.state(r.state));
                [sc.snr_db, sc.rho_edge, sc.rho_local].map(float17)
            }
            None => [String::new(), String::new(), String::new()],
        };
        let p = menu.actions()[r.policy_action];
        let o = menu.actions()[r.oracle_action];
        let [a0, a1, a2] = axes;
        w.write_record([
            r.state.to_string(),
            a0,
            a1,
            a2,
            p.t_edge.to_string(),
            p.t_local.to_string(),
            float17(r.policy_reward),
            o.t_edge.to_string(),
            o.t_local.to_string(),
            float17(r.oracle_reward),
            float17(r.relative_gap()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
