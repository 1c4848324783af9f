//! Run state in the `MSPR1` tensor container.
//!
//! Record names: `repr/<set>/<key>`, `target_repr/...`, `agent/...`,
//! `target_agent/...`, `opt/<set>/{m,v}/<key>` and `opt/<set>/step`, plus
//! `meta/step`, `meta/repr_updates`, `meta/q_scale`, `meta/latent_norm`, `meta/activation/<name>` and
//! `meta/config/<sha256>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AgentParams, TargetAgentParams, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::ndmath::checkpoint::{read_tensors, write_tensors};
use crate::ndmath::{Activation, AdamState, ParamSet, Tensor};
use crate::repr::{ReprParams, TargetReprParams};

/// A saved run: its state and the hash of the config that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(state: TrainState, cfg: &TrainConfig) -> Self {
        Checkpoint { state, config_hash: cfg.hash() }
    }

    /// Errors unless `cfg` matches the config this checkpoint was made with.
    pub fn check_config(&self, cfg: &TrainConfig) -> Result<()> {
        if self.config_hash != cfg.hash() {
            return Err(Error::contract("checkpoint was produced under a different configuration"));
        }
        Ok(())
    }
}

const REPR_SETS: [&str; 7] = ["e_s", "e_sa", "f_dyn", "f_inv", "f_gdyn", "f_gact", "f_rew"];

fn push_set(out: &mut Vec<(String, Tensor)>, prefix: &str, p: &ParamSet) {
    for (k, t) in p.entries() {
        out.push((format!("{prefix}/{}", p.qualified(k)), t.clone()));
    }
}

fn push_opt(out: &mut Vec<(String, Tensor)>, p: &ParamSet, st: &AdamState) {
    let (m, v) = st.moments();
    for (i, (k, _)) in p.entries().iter().enumerate() {
        out.push((format!("opt/{}/m/{k}", p.name()), m[i].clone()));
        out.push((format!("opt/{}/v/{k}", p.name()), v[i].clone()));
    }
    out.push((format!("opt/{}/step", p.name()), Tensor::scalar(st.step() as f64)));
}

pub fn write_checkpoint<W: Write>(w: W, ck: &Checkpoint) -> Result<()> {
    let s = &ck.state;
    let mut out = Vec::new();
    out.push(("meta/step".to_string(), Tensor::scalar(s.step as f64)));
    out.push(("meta/repr_updates".to_string(), Tensor::scalar(s.repr_update_count as f64)));
    out.push((format!("meta/activation/{}", s.repr.activation), Tensor::scalar(0.0)));
    out.push(("meta/q_scale".to_string(), Tensor::scalar(s.agent.q_scale)));
    out.push(("meta/latent_norm".to_string(), Tensor::scalar(if s.repr.latent_norm { 1.0 } else { 0.0 })));
    out.push((format!("meta/config/{}", ck.config_hash), Tensor::scalar(0.0)));
    for p in s.repr.sets() {
        push_set(&mut out, "repr", p);
    }
    push_set(&mut out, "target_repr", &s.target_repr.e_s);
    push_set(&mut out, "target_repr", &s.target_repr.e_sa);
    push_set(&mut out, "agent", &s.agent.actor);
    push_set(&mut out, "agent", &s.agent.critic);
    push_set(&mut out, "target_agent", &s.target_agent.actor);
    push_set(&mut out, "target_agent", &s.target_agent.critic);
    for (p, st) in s.repr.sets().into_iter().zip(&s.repr_opt) {
        push_opt(&mut out, p, st);
    }
    push_opt(&mut out, &s.agent.actor, &s.actor_opt);
    push_opt(&mut out, &s.agent.critic, &s.critic_opt);
    write_tensors(BufWriter::new(w), &out)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(fs::File::create(path)?, ck)
}

struct Records {
    map: BTreeMap<String, Tensor>,
    order: Vec<String>,
}

impl Records {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.map.remove(name).ok_or_else(|| Error::contract(format!("checkpoint lacks `{name}`")))
    }

    fn scalar(&mut self, name: &str) -> Result<u64> {
        let v = self.take(name)?.item();
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::contract(format!("`{name}` is not a count")));
        }
        Ok(v as u64)
    }

    /// Rebuilds set `name` from `prefix/name/<key>` records in file order.
    fn set(&mut self, prefix: &str, name: &str) -> Result<ParamSet> {
        let head = format!("{prefix}/{name}/");
        let keys: Vec<String> = self.order.iter().filter(|k| k.starts_with(&head)).cloned().collect();
        if keys.is_empty() {
            return Err(Error::contract(format!("checkpoint lacks parameter set `{prefix}/{name}`")));
        }
        let mut entries = Vec::with_capacity(keys.len());
        for k in keys {
            let t = self.take(&k)?;
            entries.push((k[head.len()..].to_string(), t));
        }
        ParamSet::new(name, entries)
    }

    fn opt(&mut self, p: &ParamSet) -> Result<AdamState> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (k, t) in p.entries() {
            let mk = self.take(&format!("opt/{}/m/{k}", p.name()))?;
            let vk = self.take(&format!("opt/{}/v/{k}", p.name()))?;
            if mk.shape() != t.shape() || vk.shape() != t.shape() {
                return Err(Error::contract(format!("optimizer moments for `{}` have the wrong shape", p.qualified(k))));
            }
            m.push(mk);
            v.push(vk);
        }
        let step = self.scalar(&format!("opt/{}/step", p.name()))?;
        Ok(AdamState::from_parts(m, v, step))
    }

    fn tagged(&mut self, prefix: &str) -> Result<String> {
        let key = self
            .order
            .iter()
            .find(|k| k.starts_with(prefix))
            .cloned()
            .ok_or_else(|| Error::contract(format!("checkpoint lacks `{prefix}*`")))?;
        self.map.remove(&key);
        Ok(key[prefix.len()..].to_string())
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let list = read_tensors(BufReader::new(r))?;
    let order: Vec<String> = list.iter().map(|(k, _)| k.clone()).collect();
    let mut rec = Records { map: list.into_iter().collect(), order };
    if rec.map.len() != rec.order.len() {
        return Err(Error::contract("checkpoint has duplicate records"));
    }
    let step = rec.scalar("meta/step")?;
    let repr_update_count = rec.scalar("meta/repr_updates")?;
    let activation: Activation = rec.tagged("meta/activation/")?.parse()?;
    let config_hash = rec.tagged("meta/config/")?;
    let q_scale = rec.take("meta/q_scale")?.item();
    let latent_norm = match rec.scalar("meta/latent_norm")? {
        0 => false,
        1 => true,
        _ => return Err(Error::contract("`meta/latent_norm` must be 0 or 1")),
    };

    let mut sets = Vec::with_capacity(7);
    for name in REPR_SETS {
        sets.push(rec.set("repr", name)?);
    }
    let mut it = sets.into_iter();
    let mut next = || it.next().expect("seven sets");
    let repr = ReprParams {
        e_s: next(),
        e_sa: next(),
        f_dyn: next(),
        f_inv: next(),
        f_gdyn: next(),
        f_gact: next(),
        f_rew: next(),
        activation,
        latent_norm,
    };
    repr.validate()?;
    let target_repr = TargetReprParams { e_s: rec.set("target_repr", "e_s")?, e_sa: rec.set("target_repr", "e_sa")? };
    let agent = AgentParams { actor: rec.set("agent", "actor")?, critic: rec.set("agent", "critic")?, activation, q_scale };
    let target_agent =
        TargetAgentParams { actor: rec.set("target_agent", "actor")?, critic: rec.set("target_agent", "critic")? };
    let repr_opt = repr.sets().into_iter().map(|p| rec.opt(p)).collect::<Result<Vec<_>>>()?;
    let actor_opt = rec.opt(&agent.actor)?;
    let critic_opt = rec.opt(&agent.critic)?;
    if let Some(extra) = rec.map.keys().next() {
        return Err(Error::contract(format!("unexpected checkpoint record `{extra}`")));
    }
    Ok(Checkpoint {
        state: TrainState {
            repr,
            target_repr,
            agent,
            target_agent,
            repr_opt,
            actor_opt,
            critic_opt,
            step,
            repr_update_count,
        },
        config_hash,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(fs::File::open(path)?)
}
