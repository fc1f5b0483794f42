use serde::{Deserialize, Serialize};

use crate::economy::{Constants, Role, RoleKind, RoleParams};
use crate::exchange::Mechanism;
use crate::world::{MapConfig, MapTemplate};

use super::EnvError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolesConfig {
    pub apple_farmer: RoleParams,
    pub banana_farmer: RoleParams,
}

impl Default for RolesConfig {
    fn default() -> Self {
        Self {
            apple_farmer: RoleParams::default_for(RoleKind::AppleFarmer),
            banana_farmer: RoleParams::default_for(RoleKind::BananaFarmer),
        }
    }
}

/// Consumption reward multipliers per role, indexed by good.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardMultipliers {
    pub apple_farmer: [f64; 2],
    pub banana_farmer: [f64; 2],
}

impl Default for RewardMultipliers {
    fn default() -> Self {
        Self { apple_farmer: [1.0, 1.0], banana_farmer: [1.0, 1.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub role: RoleKind,
    /// Starting region id, for maps with regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl RosterEntry {
    pub fn new(role: RoleKind) -> Self {
        Self { role, region: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub map: MapConfig,
    pub mechanism: Mechanism,
    pub constants: Constants,
    pub roles: RolesConfig,
    pub reward_multipliers: RewardMultipliers,
    /// Cross-good harvest probability forced to zero.
    pub restricted_production: bool,
    pub trade_radius: f64,
    pub visibility_radius: f64,
    pub episode_length: u32,
    /// Player slots in order. Empty means the template default: five of each
    /// role, or two of each role per region on region maps.
    pub roster: Vec<RosterEntry>,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            mechanism: Mechanism::Standard,
            constants: Constants::default(),
            roles: RolesConfig::default(),
            reward_multipliers: RewardMultipliers::default(),
            restricted_production: false,
            trade_radius: 4.0,
            visibility_radius: 4.0,
            episode_length: 1000,
            roster: Vec::new(),
            seed: 0,
        }
    }
}

fn check_prob(field: &str, p: f64) -> Result<(), EnvError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(EnvError::Config(format!("{field} must be in [0, 1], got {p}")))
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.episode_length == 0 {
            return Err(EnvError::Config("episode_length must be at least 1".into()));
        }
        for (name, r) in [("trade_radius", self.trade_radius), ("visibility_radius", self.visibility_radius)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be a non-negative number, got {r}")));
            }
        }
        for (name, params) in [("apple_farmer", &self.roles.apple_farmer), ("banana_farmer", &self.roles.banana_farmer)]
        {
            for p in params.harvest_prob {
                check_prob(&format!("roles.{name}.harvest_prob"), p)?;
            }
        }
        for m in self.reward_multipliers.apple_farmer.iter().chain(&self.reward_multipliers.banana_farmer) {
            if !m.is_finite() {
                return Err(EnvError::Config(format!("reward multiplier must be finite, got {m}")));
            }
        }
        let map = &self.map;
        let mults = [("map.apple_multiplier", map.apple_multiplier), ("map.banana_multiplier", map.banana_multiplier)];
        for (name, m) in mults.into_iter().chain(map.region_penalties.values().map(|v| ("map.region_penalties", *v))) {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(EnvError::Config(format!("{name} must be a non-negative number, got {m}")));
            }
        }
        if self.constants.max_satiation == 0 {
            return Err(EnvError::Config("constants.max_satiation must be positive".into()));
        }
        Ok(())
    }

    /// Role with restrictions and reward multipliers applied.
    pub fn role(&self, kind: RoleKind) -> Role {
        let (params, mult) = match kind {
            RoleKind::AppleFarmer => (self.roles.apple_farmer, self.reward_multipliers.apple_farmer),
            RoleKind::BananaFarmer => (self.roles.banana_farmer, self.reward_multipliers.banana_farmer),
        };
        let mut role = Role::new(kind, params);
        for g in 0..2 {
            role.consume_reward[g] *= mult[g];
        }
        if self.restricted_production {
            let other = kind.specialty().other().index();
            role.harvest_prob[other] = 0.0;
        }
        role
    }

    /// The roster, filling in the template default when none is configured.
    pub fn resolved_roster(&self, template: &MapTemplate) -> Vec<RosterEntry> {
        if !self.roster.is_empty() {
            return self.roster.clone();
        }
        let regions: Vec<&str> = template.region_ids().collect();
        if regions.len() > 1 {
            regions
                .iter()
                .flat_map(|r| {
                    [RoleKind::AppleFarmer, RoleKind::AppleFarmer, RoleKind::BananaFarmer, RoleKind::BananaFarmer]
                        .map(|role| RosterEntry { role, region: Some(r.to_string()) })
                })
                .collect()
        } else {
            std::iter::repeat_n(RoleKind::AppleFarmer, 5)
                .chain(std::iter::repeat_n(RoleKind::BananaFarmer, 5))
                .map(RosterEntry::new)
                .collect()
        }
    }
}
