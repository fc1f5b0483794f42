//! Population training: roster sampling, parallel episodes and per-agent
//! learners.
//!
//! Episodes run in synchronous rounds. Every episode in a round acts with the
//! parameter snapshot published at the start of the round; trajectories are
//! then delivered to their agents' learners in episode order, so a run is
//! reproducible regardless of how many worker threads execute it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::checkpoint::{self, CheckpointError, NamedTensor};
use crate::agents::features::{encode, net_shape};
use crate::agents::{Learner, LearnerConfig, LstmState, Policy, Trajectory, UpdateStats};
use crate::economy::RoleKind;
use crate::env::{Env, EnvError, EpisodeConfig, RosterEntry};
use crate::metrics::{EpisodeLog, EpisodeRecorder, EpisodeSummary, LogError, SummaryRow};
use crate::rng::{derive_seed, substream};
use crate::world::MapTemplate;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("roster needs {needed} {role:?} agents{} but the population has {available}", region.as_ref().map(|r| format!(" in region `{r}`")).unwrap_or_default())]
    Roster { role: RoleKind, region: Option<String>, needed: usize, available: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no checkpoint found in {0}")]
    NoCheckpoint(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub apple_farmers: usize,
    pub banana_farmers: usize,
    /// Stop once total player-ticks / population size reaches this.
    pub target_agent_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_episodes: Option<u64>,
    /// Worker threads.
    pub workers: usize,
    /// Episodes per parameter publish.
    pub round_size: usize,
    /// Episodes between checkpoints; 0 keeps only the first and last.
    pub checkpoint_every: u64,
    /// Every n-th episode gets a full event log; 0 disables.
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            apple_farmers: 8,
            banana_farmers: 8,
            target_agent_steps: 2_000_000,
            max_episodes: None,
            workers: 4,
            round_size: 4,
            checkpoint_every: 1000,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.workers == 0 {
            return Err(TrainError::Config("train.workers must be at least 1".into()));
        }
        if self.round_size == 0 {
            return Err(TrainError::Config("train.round_size must be at least 1".into()));
        }
        if self.apple_farmers + self.banana_farmers == 0 {
            return Err(TrainError::Config("the population is empty".into()));
        }
        Ok(())
    }

    pub fn population_size(&self) -> usize {
        self.apple_farmers + self.banana_farmers
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AgentSpec {
    pub id: usize,
    pub role: RoleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Population {
    pub agents: Vec<AgentSpec>,
}

impl Population {
    /// Apple farmers first, then banana farmers. When the roster names
    /// regions, each role's agents are dealt round-robin over the regions
    /// that role appears in.
    pub fn new(apple_farmers: usize, banana_farmers: usize, roster: &[RosterEntry]) -> Self {
        let mut agents = Vec::new();
        for (role, count) in [(RoleKind::AppleFarmer, apple_farmers), (RoleKind::BananaFarmer, banana_farmers)] {
            let mut regions: Vec<&str> = Vec::new();
            for e in roster.iter().filter(|e| e.role == role) {
                if let Some(r) = e.region.as_deref() {
                    if !regions.contains(&r) {
                        regions.push(r);
                    }
                }
            }
            for k in 0..count {
                let region = (!regions.is_empty()).then(|| regions[k % regions.len()].to_string());
                agents.push(AgentSpec { id: agents.len(), role, region });
            }
        }
        Self { agents }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Agent ids for each roster slot, sampled without replacement within each
/// (role, region) group.
pub fn sample_roster<R: Rng + ?Sized>(
    population: &Population,
    roster: &[RosterEntry],
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    let mut groups: Vec<(&RosterEntry, Vec<usize>)> = Vec::new();
    for (slot, e) in roster.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g.role == e.role && g.region == e.region) {
            Some((_, slots)) => slots.push(slot),
            None => groups.push((e, vec![slot])),
        }
    }
    let mut out = vec![0; roster.len()];
    for (entry, slots) in groups {
        let candidates: Vec<usize> = population
            .agents
            .iter()
            .filter(|a| a.role == entry.role && (entry.region.is_none() || a.region == entry.region))
            .map(|a| a.id)
            .collect();
        if candidates.len() < slots.len() {
            return Err(TrainError::Roster {
                role: entry.role,
                region: entry.region.clone(),
                needed: slots.len(),
                available: candidates.len(),
            });
        }
        let picks = rand::seq::index::sample(rng, candidates.len(), slots.len());
        for (slot, pick) in slots.into_iter().zip(picks) {
            out[slot] = candidates[pick];
        }
    }
    Ok(out)
}

pub struct EpisodeOutput {
    pub index: u64,
    pub agents: Vec<usize>,
    pub log: EpisodeLog,
    pub trajectories: Vec<Trajectory>,
}

/// Plays one episode with every slot acting through its agent's snapshot.
pub fn run_episode(
    config: &EpisodeConfig,
    population: &Population,
    policies: &[Policy],
    master_seed: u64,
    index: u64,
    segment_len: usize,
) -> Result<EpisodeOutput, TrainError> {
    let seed = derive_seed(master_seed, &format!("episode/{index}"));
    let agents = sample_roster(population, &config.roster, &mut substream(seed, "roster"))?;
    let mut cfg = config.clone();
    cfg.seed = seed;
    let mut env = Env::new(cfg)?;
    let mut recorder = EpisodeRecorder::new(&env, index, agents.clone());
    let mut rng = substream(seed, "policy");
    let actions_n = env.action_count();
    let max_satiation = env.config().constants.max_satiation;
    let players = env.num_players();
    let mut states: Vec<LstmState> = agents.iter().map(|&a| policies[a].net.initial_state()).collect();
    let mut trajectories: Vec<Trajectory> = agents
        .iter()
        .map(|&agent| Trajectory { agent, segment_len, terminal: true, ..Default::default() })
        .collect();
    let mut obs = env.observations();
    let mut actions = vec![0; players];
    while !env.done() {
        for i in 0..players {
            let input = encode(&obs[i], max_satiation, actions_n);
            let traj = &mut trajectories[i];
            if traj.actions.len().is_multiple_of(segment_len) {
                traj.segment_states.push(states[i].clone());
            }
            let (a, logp, value) = policies[agents[i]].act(&input, &mut states[i], &mut rng);
            actions[i] = a;
            traj.inputs.push(input);
            traj.actions.push(a);
            traj.behaviour_logp.push(logp);
            traj.values.push(value);
        }
        let step = env.step(&actions)?;
        recorder.record(&actions, &step);
        for (traj, r) in trajectories.iter_mut().zip(&step.rewards) {
            traj.rewards.push(*r);
        }
        obs = step.observations;
    }
    for (traj, o) in trajectories.iter_mut().zip(&obs) {
        traj.inputs.push(encode(o, max_satiation, actions_n));
    }
    Ok(EpisodeOutput { index, agents, log: recorder.finish(&env), trajectories })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AgentRoundStats {
    /// Episodes completed when the round ended.
    pub episodes: u64,
    pub agent: usize,
    pub updates: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_target: f64,
    pub grad_norm: f64,
}

impl AgentRoundStats {
    fn mean(episodes: u64, agent: usize, stats: &[UpdateStats]) -> Self {
        let n = stats.len() as f64;
        let avg = |f: fn(&UpdateStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        Self {
            episodes,
            agent,
            updates: stats.len(),
            policy_loss: avg(|s| s.policy_loss),
            value_loss: avg(|s| s.value_loss),
            entropy: avg(|s| s.entropy),
            mean_target: avg(|s| s.mean_target),
            grad_norm: avg(|s| s.grad_norm),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoundReport {
    pub summaries: Vec<EpisodeSummary>,
    pub learners: Vec<AgentRoundStats>,
    pub episodes: u64,
    pub agent_steps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub episodes: u64,
    pub player_ticks: u64,
    pub agent_steps: f64,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Serialize)]
struct EpisodeLine<'a> {
    agent_steps: f64,
    #[serde(flatten)]
    summary: &'a EpisodeSummary,
}

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const LEARNER_FILE: &str = "learner.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_DIR: &str = "logs";

pub fn checkpoint_path(run_dir: &Path, episodes: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("episode_{episodes:08}.fmck"))
}

/// The checkpoint with the most episodes in `run_dir`.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf, TrainError> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let mut found: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "fmck"))
            .collect(),
        Err(_) => Vec::new(),
    };
    found.sort();
    found.pop().ok_or(TrainError::NoCheckpoint(dir))
}

pub struct Trainer {
    pub train: TrainConfig,
    pub episode: EpisodeConfig,
    pub population: Population,
    pub learners: Vec<Learner>,
    run_dir: Option<PathBuf>,
    episodes_done: u64,
    player_ticks: u64,
    checkpoints: Vec<PathBuf>,
    pool: rayon::ThreadPool,
}

impl Trainer {
    /// Fresh learners. With a run directory, artifacts are written there.
    pub fn new(
        train: TrainConfig,
        mut episode: EpisodeConfig,
        learner: LearnerConfig,
        run_dir: Option<&Path>,
    ) -> Result<Self, TrainError> {
        train.validate()?;
        learner.validate().map_err(TrainError::Config)?;
        episode.validate()?;
        let template = MapTemplate::for_config(&episode.map).map_err(EnvError::from)?;
        episode.roster = episode.resolved_roster(&template);
        let population = Population::new(train.apple_farmers, train.banana_farmers, &episode.roster);
        // fail early rather than on the first episode
        sample_roster(&population, &episode.roster, &mut substream(0, "probe"))?;
        let actions = crate::env::action_count(episode.mechanism);
        let shape = net_shape(episode.roster.len(), actions);
        let learners = population
            .agents
            .iter()
            .map(|a| Learner::new(learner.clone(), shape, derive_seed(train.seed, &format!("agent/{}", a.id))))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(train.workers)
            .build()
            .map_err(|e| TrainError::Config(format!("cannot start workers: {e}")))?;
        if let Some(dir) = run_dir {
            fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
            if train.log_every > 0 {
                fs::create_dir_all(dir.join(LOG_DIR))?;
            }
        }
        Ok(Self {
            train,
            episode,
            population,
            learners,
            run_dir: run_dir.map(Path::to_path_buf),
            episodes_done: 0,
            player_ticks: 0,
            checkpoints: Vec::new(),
            pool,
        })
    }

    /// Continues a run from `checkpoint` (the latest one when `None`).
    /// Per-episode outputs written after that checkpoint are discarded.
    pub fn resume(
        train: TrainConfig,
        episode: EpisodeConfig,
        learner: LearnerConfig,
        run_dir: &Path,
        checkpoint: Option<&Path>,
    ) -> Result<Self, TrainError> {
        let mut t = Self::new(train, episode, learner, Some(run_dir))?;
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => latest_checkpoint(run_dir)?,
        };
        t.load_checkpoint(&path)?;
        let keep = t.episodes_done as usize;
        truncate_lines(&run_dir.join(EPISODES_FILE), keep)?;
        truncate_lines(&run_dir.join(SUMMARY_FILE), keep + 1)?;
        filter_learner_rows(&run_dir.join(LEARNER_FILE), t.episodes_done)?;
        t.checkpoints.push(path);
        Ok(t)
    }

    pub fn episodes_done(&self) -> u64 {
        self.episodes_done
    }

    pub fn player_ticks(&self) -> u64 {
        self.player_ticks
    }

    /// Total player-ticks divided by population size.
    pub fn agent_steps(&self) -> f64 {
        self.player_ticks as f64 / self.population.len() as f64
    }

    pub fn finished(&self) -> bool {
        let steps_done = self.player_ticks >= self.train.target_agent_steps.saturating_mul(self.population.len() as u64);
        let episodes_done = self.train.max_episodes.is_some_and(|m| self.episodes_done >= m);
        steps_done || episodes_done
    }

    pub fn run_round(&mut self) -> Result<RoundReport, TrainError> {
        let mut count = self.train.round_size as u64;
        if let Some(m) = self.train.max_episodes {
            count = count.min(m.saturating_sub(self.episodes_done));
        }
        let start = self.episodes_done;
        let policies: Vec<Policy> = self.learners.iter().map(Learner::policy).collect();
        let (cfg, pop, seed, n) = (&self.episode, &self.population, self.train.seed, self.learners[0].config.n_step);
        let outputs: Vec<EpisodeOutput> = self.pool.install(|| {
            (start..start + count)
                .into_par_iter()
                .map(|i| run_episode(cfg, pop, &policies, seed, i, n))
                .collect::<Result<_, _>>()
        })?;

        let mut per_agent: Vec<Vec<Trajectory>> = vec![Vec::new(); self.learners.len()];
        let mut summaries = Vec::with_capacity(outputs.len());
        let mut steps_after = Vec::with_capacity(outputs.len());
        for out in outputs {
            let summary = EpisodeSummary::from_log(&out.log);
            self.player_ticks += u64::from(summary.ticks) * summary.players.len() as u64;
            steps_after.push(self.agent_steps());
            if let Some(dir) = &self.run_dir {
                if self.train.log_every > 0 && out.index % self.train.log_every == 0 {
                    out.log.save(&dir.join(LOG_DIR).join(format!("episode_{:06}.jsonl", out.index)))?;
                }
            }
            for t in out.trajectories {
                per_agent[t.agent].push(t);
            }
            summaries.push(summary);
        }
        self.episodes_done += count;

        let stats: Vec<Vec<UpdateStats>> = self.pool.install(|| {
            self.learners
                .par_iter_mut()
                .zip(per_agent)
                .map(|(l, ts)| ts.into_iter().flat_map(|t| l.observe(t)).collect())
                .collect()
        });
        let learners: Vec<AgentRoundStats> = stats
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(agent, s)| AgentRoundStats::mean(self.episodes_done, agent, s))
            .collect();

        if let Some(dir) = self.run_dir.clone() {
            self.append_outputs(&dir, &summaries, &steps_after, &learners)?;
            let every = self.train.checkpoint_every;
            if every > 0 && (start / every) != (self.episodes_done / every) {
                self.save_checkpoint()?;
            }
        }
        Ok(RoundReport { summaries, learners, episodes: self.episodes_done, agent_steps: self.agent_steps() })
    }

    /// Runs rounds until the step or episode target is reached. Checkpoints
    /// before the first round of a fresh run and after the last.
    pub fn run(mut self) -> Result<TrainReport, TrainError> {
        if self.run_dir.is_some() && self.checkpoints.is_empty() {
            self.save_checkpoint()?;
        }
        while !self.finished() {
            self.run_round()?;
        }
        if self.run_dir.is_some() && self.checkpoints.last() != Some(&self.current_checkpoint_path()) {
            self.save_checkpoint()?;
        }
        Ok(TrainReport {
            episodes: self.episodes_done,
            player_ticks: self.player_ticks,
            agent_steps: self.agent_steps(),
            checkpoints: self.checkpoints,
        })
    }

    fn current_checkpoint_path(&self) -> PathBuf {
        checkpoint_path(self.run_dir.as_deref().unwrap_or(Path::new(".")), self.episodes_done)
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![
            NamedTensor::scalar("trainer/episodes", self.episodes_done as f64),
            NamedTensor::scalar("trainer/player_ticks", self.player_ticks as f64),
            NamedTensor::scalar("trainer/population", self.population.len() as f64),
        ];
        for (id, l) in self.learners.iter().enumerate() {
            out.extend(l.to_tensors().into_iter().map(|mut t| {
                t.name = format!("agent/{id}/{}", t.name);
                t
            }));
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<(), TrainError> {
        let pop = checkpoint::take(tensors, "trainer/population", &[1])?[0] as usize;
        if pop != self.population.len() {
            return Err(TrainError::Config(format!(
                "checkpoint holds {pop} agents but the population has {}",
                self.population.len()
            )));
        }
        self.episodes_done = checkpoint::take(tensors, "trainer/episodes", &[1])?[0] as u64;
        self.player_ticks = checkpoint::take(tensors, "trainer/player_ticks", &[1])?[0] as u64;
        for (id, l) in self.learners.iter_mut().enumerate() {
            let prefix = format!("agent/{id}/");
            let own: Vec<NamedTensor> = tensors
                .iter()
                .filter_map(|t| t.name.strip_prefix(&prefix).map(|n| NamedTensor { name: n.to_string(), ..t.clone() }))
                .collect();
            l.load_tensors(&own)?;
        }
        Ok(())
    }

    pub fn save_checkpoint(&mut self) -> Result<PathBuf, TrainError> {
        let path = self.current_checkpoint_path();
        checkpoint::save(&path, &self.to_tensors())?;
        self.checkpoints.push(path.clone());
        Ok(path)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), TrainError> {
        let tensors = checkpoint::load(path)?;
        self.load_tensors(&tensors)
    }

    fn append_outputs(
        &self,
        dir: &Path,
        summaries: &[EpisodeSummary],
        steps_after: &[f64],
        learners: &[AgentRoundStats],
    ) -> Result<(), TrainError> {
        let mut jsonl = BufWriter::new(OpenOptions::new().create(true).append(true).open(dir.join(EPISODES_FILE))?);
        for (s, &agent_steps) in summaries.iter().zip(steps_after) {
            serde_json::to_writer(&mut jsonl, &EpisodeLine { agent_steps, summary: s })?;
            jsonl.write_all(b"\n")?;
        }
        jsonl.flush()?;

        let mut csv = appending_csv(&dir.join(SUMMARY_FILE))?;
        for (s, &agent_steps) in summaries.iter().zip(steps_after) {
            csv.serialize(SummaryRow::new(s, agent_steps))?;
        }
        csv.flush()?;

        let mut csv = appending_csv(&dir.join(LEARNER_FILE))?;
        for stats in learners {
            csv.serialize(stats)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Per-agent mean return over a set of episode summaries.
pub fn agent_returns(summaries: &[EpisodeSummary]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for p in summaries.iter().flat_map(|s| &s.players) {
        if let Some(a) = p.agent {
            let e = acc.entry(a).or_default();
            e.0 += p.total_return;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(a, (sum, n))| (a, sum / n as f64)).collect()
}

fn appending_csv(path: &Path) -> Result<csv::Writer<File>, TrainError> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
}

fn rewrite(path: &Path, keep: impl Fn(usize, &str) -> bool) -> Result<(), TrainError> {
    let Ok(file) = File::open(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if keep(i, &line) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn truncate_lines(path: &Path, keep: usize) -> Result<(), TrainError> {
    rewrite(path, |i, _| i < keep)
}

fn filter_learner_rows(path: &Path, episodes: u64) -> Result<(), TrainError> {
    rewrite(path, |i, line| {
        i == 0 || line.split(',').next().and_then(|f| f.parse::<u64>().ok()).is_some_and(|e| e <= episodes)
    })
}
