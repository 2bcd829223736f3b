//! Per-epoch trajectory store.
//!
//! ```text
//! magic       8 bytes  "ODPOTRAJ"
//! version     u32      = 1
//! config_hash u32 length + UTF-8
//! seed        u64
//! epoch       u32
//! n_records   u32
//! record:
//!   outfit_id   str     (u32 length + UTF-8)
//!   candidate   u32
//!   category    u32
//!   eta         f64
//!   user_id     str
//!   mutual      u32 length + f64s
//!   history     u32 length + f64s
//!   prompt      u32 length + f64s
//!   schedule_id str
//!   n_states    u32, dim u32, then per state: t u32, latent f64 x dim
//!   n_noises    u32, then f64 x dim per noise
//! digest      32 bytes SHA-256
//! ```

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::sampler::{Condition, Trajectory};

pub const MAGIC: &[u8; 8] = b"ODPOTRAJ";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStore {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub records: Vec<Trajectory>,
}

impl TrajectoryStore {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&self.config_hash);
        w.u64(self.seed);
        w.len(self.epoch);
        w.len(self.records.len());
        for tr in &self.records {
            let c = &tr.condition;
            w.str(&c.outfit_id);
            w.len(tr.candidate);
            w.len(c.category);
            w.f64(c.eta);
            w.str(&c.user_id);
            w.vec(&c.mutual);
            w.vec(&c.history);
            w.vec(&c.prompt);
            w.str(&tr.schedule_id);
            let dim = tr.latents.first().map_or(0, Vec::len);
            w.len(tr.latents.len());
            w.len(dim);
            for (t, x) in tr.timesteps.iter().zip(&tr.latents) {
                w.len(*t);
                w.f64s(x);
            }
            w.len(tr.noises.len());
            for z in &tr.noises {
                w.f64s(z);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION, what)?;
        let config_hash = r.str()?;
        let seed = r.u64()?;
        let epoch = r.usize()?;
        let n = r.usize()?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let outfit_id = r.str()?;
            let candidate = r.usize()?;
            let category = r.usize()?;
            let eta = r.f64()?;
            let user_id = r.str()?;
            let mutual = r.vec()?;
            let history = r.vec()?;
            let prompt = r.vec()?;
            let schedule_id = r.str()?;
            let n_states = r.usize()?;
            let dim = r.usize()?;
            let mut timesteps = Vec::with_capacity(n_states);
            let mut latents = Vec::with_capacity(n_states);
            for _ in 0..n_states {
                timesteps.push(r.usize()?);
                latents.push(r.f64s(dim)?);
            }
            let n_noises = r.usize()?;
            if n_states == 0 || n_noises + 1 != n_states {
                return Err(Error::Corrupt(what.to_string()));
            }
            let noises = (0..n_noises).map(|_| r.f64s(dim)).collect::<Result<_>>()?;
            records.push(Trajectory {
                candidate,
                condition: Condition {
                    mutual,
                    history,
                    prompt,
                    eta,
                    category,
                    outfit_id,
                    user_id,
                },
                schedule_id,
                timesteps,
                latents,
                noises,
            });
        }
        r.finish()?;
        Ok(Self {
            config_hash,
            seed,
            epoch,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}
