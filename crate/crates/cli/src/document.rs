//! JSON form of a tabular CMDP and its content hash.

use std::path::Path;

use anyhow::{Context, Result};
use robust_crl::{Kernel, TabularCMDP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// On-disk MDP. `kernel` is nested `[s][a][s']`; `reward` and each utility
/// are `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub utilities: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub rho: Vec<f64>,
    pub thresholds: Vec<f64>,
}

fn nest(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

impl MdpDocument {
    pub fn from_mdp(mdp: &TabularCMDP) -> Self {
        let na = mdp.n_actions();
        Self {
            n_states: mdp.n_states(),
            n_actions: na,
            kernel: mdp.kernel().to_nested(),
            reward: nest(mdp.reward(), na),
            utilities: mdp.utilities().iter().map(|u| nest(u, na)).collect(),
            gamma: mdp.gamma(),
            rho: mdp.rho().to_vec(),
            thresholds: mdp.thresholds().to_vec(),
        }
    }

    /// Validates and converts. Shape errors name the offending field.
    pub fn to_mdp(&self) -> Result<TabularCMDP> {
        let flat = |name: &str, t: &[Vec<f64>]| -> Result<Vec<f64>> {
            if t.len() != self.n_states || t.iter().any(|r| r.len() != self.n_actions) {
                anyhow::bail!("{name} must be {}x{}", self.n_states, self.n_actions);
            }
            Ok(t.concat())
        };
        if self.kernel.len() != self.n_states {
            anyhow::bail!("kernel has {} state rows, expected {}", self.kernel.len(), self.n_states);
        }
        let kernel = Kernel::from_nested(&self.kernel)?;
        if kernel.n_actions() != self.n_actions {
            anyhow::bail!("kernel has {} actions, expected {}", kernel.n_actions(), self.n_actions);
        }
        let utilities = self
            .utilities
            .iter()
            .enumerate()
            .map(|(i, u)| flat(&format!("utilities[{i}]"), u))
            .collect::<Result<Vec<_>>>()?;
        Ok(TabularCMDP::new(
            kernel,
            flat("reward", &self.reward)?,
            utilities,
            self.gamma,
            self.rho.clone(),
            self.thresholds.clone(),
        )?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serialises");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// SHA-256 of the canonical JSON form, hex encoded.
pub fn env_hash(mdp: &TabularCMDP) -> String {
    hex::encode(Sha256::digest(MdpDocument::from_mdp(mdp).to_json().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use robust_crl::envs::garnet;

    #[test]
    fn round_trip() {
        let m = garnet(4, 3, 2).unwrap().with_thresholds(vec![2.5]).unwrap();
        let doc = MdpDocument::from_mdp(&m);
        let back: MdpDocument = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back.to_mdp().unwrap(), m);
        assert_eq!(doc.kernel[1][2], m.kernel().row(1, 2));
    }

    #[test]
    fn shape_errors_name_the_field() {
        let mut doc = MdpDocument::from_mdp(&garnet(3, 2, 0).unwrap());
        doc.reward[1].pop();
        assert!(doc.to_mdp().unwrap_err().to_string().contains("reward"));
    }

    #[test]
    fn hash_depends_on_threshold() {
        let m = garnet(3, 2, 0).unwrap();
        let h = env_hash(&m);
        assert_eq!(h.len(), 64);
        assert_eq!(h, env_hash(&m.clone()));
        assert_ne!(h, env_hash(&m.with_thresholds(vec![1.0]).unwrap()));
    }
}
