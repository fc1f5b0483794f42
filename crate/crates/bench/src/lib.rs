//! Fixtures shared by the criterion benchmarks.

use fruitmarket::agents::{ScriptedKind, ScriptedPolicy};
use fruitmarket::bench::Scenario;
use fruitmarket::env::{Env, EnvError, Observation};
use fruitmarket::rng::derive_seed;

/// An environment driven by random policies, reset automatically at the end
/// of each episode.
pub struct Stepper {
    env: Env,
    policies: Vec<ScriptedPolicy>,
    obs: Vec<Observation>,
    actions: Vec<usize>,
    episode: u64,
    seed: u64,
}

impl Stepper {
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, EnvError> {
        let mut config = scenario.config();
        config.seed = seed;
        let env = Env::new(config)?;
        let policies = (0..env.num_players())
            .map(|i| {
                let role = env.config().role(env.roster()[i].role);
                ScriptedPolicy::new(ScriptedKind::Random, role, env.config().mechanism, derive_seed(seed, &format!("policy/{i}")))
            })
            .collect();
        let obs = env.observations();
        let actions = vec![0; env.num_players()];
        Ok(Self { env, policies, obs, actions, episode: 0, seed })
    }

    pub fn players(&self) -> usize {
        self.env.num_players()
    }

    /// One tick; returns the number of exchanges.
    pub fn tick(&mut self) -> usize {
        if self.env.done() {
            self.episode += 1;
            self.obs = self.env.reset(derive_seed(self.seed, &format!("episode/{}", self.episode))).expect("reset");
        }
        for (a, (p, o)) in self.actions.iter_mut().zip(self.policies.iter_mut().zip(&self.obs)) {
            *a = p.act(o);
        }
        let step = self.env.step(&self.actions).expect("valid actions");
        let n = Env::exchanges(&step.events).count();
        self.obs = step.observations;
        n
    }
}
