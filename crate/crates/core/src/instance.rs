//! Instance files: an MDP plus optional policy and critic features.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{validate_mdp, TabularMdp};
use crate::policy::{FeatureMap, SoftmaxPolicy};

/// On-disk layout of an instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_features: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_features: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

/// A validated MDP with the feature maps used by the actor and the critic.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub policy_features: FeatureMap,
    pub critic_features: FeatureMap,
    pub theta0: DVector<f64>,
}

impl Instance {
    /// Validate every invariant and collect all violations at once.
    pub fn new(mdp: TabularMdp, policy_features: FeatureMap, critic_features: FeatureMap, theta0: DVector<f64>) -> Result<Self> {
        let mut problems = validate_mdp(&mdp).violations;
        for (name, f) in [("policy_features", &policy_features), ("critic_features", &critic_features)] {
            if f.n_states() != mdp.n_states || f.n_actions() != mdp.n_actions {
                problems.push(format!(
                    "{name} cover {}x{} pairs, MDP has {}x{}",
                    f.n_states(),
                    f.n_actions(),
                    mdp.n_states,
                    mdp.n_actions
                ));
            }
        }
        problems.extend(critic_features.critic_violations());
        if theta0.len() != policy_features.dim() {
            problems.push(format!("theta0 has length {}, policy features have dimension {}", theta0.len(), policy_features.dim()));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Self { mdp, policy_features, critic_features, theta0 })
    }

    /// Tabular actor and critic, `theta0 = 0`.
    pub fn tabular(mdp: TabularMdp) -> Result<Self> {
        let pf = FeatureMap::tabular(mdp.n_states, mdp.n_actions);
        let cf = pf.clone();
        let dim = pf.dim();
        Self::new(mdp, pf, cf, DVector::zeros(dim))
    }

    pub fn policy(&self) -> SoftmaxPolicy {
        SoftmaxPolicy::new(self.policy_features.clone(), self.theta0.clone()).expect("validated dimensions")
    }

    pub fn policy_at(&self, theta: DVector<f64>) -> Result<SoftmaxPolicy> {
        SoftmaxPolicy::new(self.policy_features.clone(), theta)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            n_states: self.mdp.n_states,
            n_actions: self.mdp.n_actions,
            gamma: self.mdp.gamma,
            rho0: self.mdp.rho0.clone(),
            rewards: self.mdp.rewards_table(),
            transitions: self.mdp.transitions_table(),
            r_max: Some(self.mdp.r_max),
            policy_features: Some(self.policy_features.to_table()),
            critic_features: Some(self.critic_features.to_table()),
            theta0: Some(self.theta0.iter().copied().collect()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// Instances shipped with the crate: `single_state`, `chain3`, `saddle_bandit`.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name {
            "single_state" => include_str!("../instances/single_state.json"),
            "chain3" => include_str!("../instances/chain3.json"),
            "saddle_bandit" => include_str!("../instances/saddle_bandit.json"),
            other => return Err(Error::InvalidArgument(format!("no bundled instance named {other:?}"))),
        };
        parse_instance(text)
    }
}

pub const BUNDLED: [&str; 3] = ["single_state", "chain3", "saddle_bandit"];

impl TryFrom<InstanceFile> for Instance {
    type Error = Error;

    fn try_from(f: InstanceFile) -> Result<Self> {
        let mut problems = Vec::new();
        if f.transitions.len() != f.n_states {
            problems.push(format!("transitions has {} states, n_states is {}", f.transitions.len(), f.n_states));
        }
        if let Some(row) = f.transitions.iter().find(|r| r.len() != f.n_actions) {
            problems.push(format!("transitions row has {} actions, n_actions is {}", row.len(), f.n_actions));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let mdp = TabularMdp::from_tables(&f.transitions, &f.rewards, f.gamma, f.rho0, f.r_max)?;
        let pf = match &f.policy_features {
            Some(t) => FeatureMap::new(t)?,
            None => FeatureMap::tabular(f.n_states, f.n_actions),
        };
        let cf = match &f.critic_features {
            Some(t) => FeatureMap::new(t)?,
            None => FeatureMap::tabular(f.n_states, f.n_actions),
        };
        let theta0 = match f.theta0 {
            Some(t) => DVector::from_vec(t),
            None => DVector::zeros(pf.dim()),
        };
        Instance::new(mdp, pf, cf, theta0)
    }
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text)?;
    Instance::try_from(file)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(&text)
}
