//! Train/validation/test datasets: generation from seeded streams and storage.

use std::path::Path;

use jmf_core::scenarios::Scenario;
use jmf_core::ssm::{load_binary, save_binary, Trajectory};
use jmf_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::seeds::substream;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Datasets {
    /// Each split comes from its own stream, so the test split never overlaps training data.
    pub fn generate(scenario: &Scenario, master_seed: u64) -> Result<Self> {
        let sizes = scenario.spec.sizes;
        let split = |name: &str, n: usize| scenario.generate(n, &mut substream(master_seed, &format!("dataset/{name}")));
        Ok(Datasets {
            train: split("train", sizes.train)?,
            val: split("val", sizes.val)?,
            test: split("test", sizes.test)?,
        })
    }

    pub fn split(&self, name: &str) -> &[Trajectory] {
        match name {
            "train" => &self.train,
            "val" => &self.val,
            _ => &self.test,
        }
    }

    /// Writes `<split>.bin` files into `dir` and returns `(file name, sha256 hex)` pairs.
    pub fn save(&self, dir: &Path, num_modes: usize) -> Result<Vec<(String, String)>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for name in SPLITS {
            let file = format!("{name}.bin");
            let path = dir.join(&file);
            save_binary(&path, self.split(name), num_modes)?;
            out.push((file, file_sha256(&path)?));
        }
        Ok(out)
    }

    pub fn load(dir: &Path, scenario: &Scenario) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Trajectory>> {
            let (data, _) = load_binary(&dir.join(format!("{name}.bin")))?;
            if let Some(t) = data.first() {
                if t.state_dim() != scenario.state_dim() || t.obs_dim() != scenario.obs_dim() {
                    return Err(Error::Dimension(format!(
                        "dataset '{name}' has s={}, o={} but the scenario has s={}, o={}",
                        t.state_dim(),
                        t.obs_dim(),
                        scenario.state_dim(),
                        scenario.obs_dim()
                    )));
                }
            }
            Ok(data)
        };
        Ok(Datasets {
            train: read("train")?,
            val: read("val")?,
            test: read("test")?,
        })
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
