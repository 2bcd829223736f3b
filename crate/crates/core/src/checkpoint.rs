//! Denoiser checkpoint files.
//!
//! Layout (all integers `u32` little-endian unless noted, floats `f64` LE):
//!
//! ```text
//! magic       8 bytes  "ODPOCKPT"
//! version     u32      = 1
//! config_hash u32 length + UTF-8 bytes
//! seed        u64
//! epochs_done u32      fine-tuning epochs completed (0 for a base network)
//! schedule    t_train u32, beta_min f64, beta_max f64, n_sample u32,
//!             mean_rule u8 (0 literal, 1 consistent)
//! shape       latent_dim, time_dim, prompt_dim, hidden (u32 each)
//! frozen      u8
//! n_layers    u32, then per layer: rows u32, cols u32,
//!             weight f64 x rows*cols (row-major), bias f64 x rows
//! adapter     u8 flag; if 1: rank u32, scale f64, then per layer
//!             A f64 x rank*cols, B f64 x rows*rank
//! digest      32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::denoiser::{Adapter, DenoiserParams, DenoiserShape, Dense, LowRank};
use crate::diffusion::{MeanRule, NoiseSchedule};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ODPOCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub t_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub n_sample: usize,
    pub mean_rule: MeanRule,
    pub seed: u64,
    pub config_hash: String,
    pub epochs_done: usize,
}

impl Checkpoint {
    pub fn new(params: DenoiserParams, sched: &NoiseSchedule, seed: u64, config_hash: &str) -> Self {
        Self {
            params,
            t_train: sched.t_train,
            beta_min: sched.beta_min,
            beta_max: sched.beta_max,
            n_sample: sched.n_sample(),
            mean_rule: sched.mean_rule,
            seed,
            config_hash: config_hash.to_string(),
            epochs_done: 0,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.t_train, self.beta_min, self.beta_max, self.n_sample)?.with_mean_rule(self.mean_rule))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&self.config_hash);
        w.u64(self.seed);
        w.len(self.epochs_done);
        w.len(self.t_train);
        w.f64(self.beta_min);
        w.f64(self.beta_max);
        w.len(self.n_sample);
        w.u8(self.mean_rule.as_u8());
        let p = &self.params;
        for v in [p.shape.latent_dim, p.shape.time_dim, p.shape.prompt_dim, p.shape.hidden] {
            w.len(v);
        }
        w.u8(p.frozen as u8);
        w.len(p.layers.len());
        for l in &p.layers {
            w.len(l.rows);
            w.len(l.cols);
            w.f64s(&l.weight);
            w.f64s(&l.bias);
        }
        match &p.adapter {
            None => w.u8(0),
            Some(ad) => {
                w.u8(1);
                w.len(ad.rank);
                w.f64(ad.scale);
                for l in &ad.layers {
                    w.f64s(&l.a);
                    w.f64s(&l.b);
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION, what)?;
        let config_hash = r.str()?;
        let seed = r.u64()?;
        let epochs_done = r.usize()?;
        let t_train = r.usize()?;
        let beta_min = r.f64()?;
        let beta_max = r.f64()?;
        let n_sample = r.usize()?;
        let mean_rule = MeanRule::from_u8(r.u8()?).ok_or_else(|| Error::Corrupt(what.to_string()))?;
        let shape = DenoiserShape {
            latent_dim: r.usize()?,
            time_dim: r.usize()?,
            prompt_dim: r.usize()?,
            hidden: r.usize()?,
        };
        let frozen = r.u8()? != 0;
        let n_layers = r.usize()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = r.usize()?;
            let cols = r.usize()?;
            let weight = r.f64s(rows * cols)?;
            let bias = r.f64s(rows)?;
            layers.push(Dense { rows, cols, weight, bias });
        }
        let adapter = match r.u8()? {
            0 => None,
            1 => {
                let rank = r.usize()?;
                let scale = r.f64()?;
                let mut lr = Vec::with_capacity(n_layers);
                for l in &layers {
                    let a = r.f64s(rank * l.cols)?;
                    let b = r.f64s(l.rows * rank)?;
                    lr.push(LowRank { a, b });
                }
                Some(Adapter {
                    rank,
                    scale,
                    layers: lr,
                })
            }
            _ => return Err(Error::Corrupt(what.to_string())),
        };
        r.finish()?;
        Ok(Self {
            params: DenoiserParams {
                shape,
                layers,
                adapter,
                frozen,
            },
            t_train,
            beta_min,
            beta_max,
            n_sample,
            mean_rule,
            seed,
            config_hash,
            epochs_done,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let sched = NoiseSchedule::standard();
        let base = DenoiserParams::new(DenoiserShape::default(), 4);
        let ck = Checkpoint::new(base.clone(), &sched, 4, "deadbeef");
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.schedule().unwrap(), sched);

        let mut tuned = base.attach_adapter(4, 1.0, 1).unwrap();
        let mut v = tuned.trainable_params();
        v.iter_mut().enumerate().for_each(|(i, x)| *x += (i as f64).cos() * 1e-3);
        tuned.set_trainable_params(&v).unwrap();
        let ck2 = Checkpoint {
            epochs_done: 3,
            ..Checkpoint::new(tuned, &sched, 4, "deadbeef")
        };
        let back2 = Checkpoint::from_bytes(&ck2.to_bytes(), "mem").unwrap();
        assert_eq!(back2, ck2);
    }

    #[test]
    fn detects_corruption() {
        let ck = Checkpoint::new(
            DenoiserParams::new(DenoiserShape::default(), 0),
            &NoiseSchedule::standard(),
            0,
            "h",
        );
        let mut bytes = ck.to_bytes();
        bytes[100] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes, "x"), Err(Error::Corrupt(_))));
    }
}
