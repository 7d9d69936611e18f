//! The three actor families behind one type, plus the on-disk checkpoint.
//!
//! Checkpoint layout is documented in `docs/checkpoint.md`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use thiserror::Error;

use crate::critic::Critic;
use crate::diffusion::{ChainNoise, DiffusionError, DiffusionPolicy, DiffusionSchedule};
use crate::moe::{MoEActor, Routing};
use crate::nn::{next_line, soft_update, Mlp, NnError};
use crate::trainer::ddpg::DdpgActor;

const MAGIC: &str = "moejam-checkpoint 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    MoeGdm,
    Gdm,
    Ddpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::MoeGdm, Algorithm::Gdm, Algorithm::Ddpg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MoeGdm => "moe_gdm",
            Algorithm::Gdm => "gdm",
            Algorithm::Ddpg => "ddpg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown algorithm `{0}` (expected moe_gdm, gdm or ddpg)")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "moe_gdm" => Ok(Algorithm::MoeGdm),
            "gdm" => Ok(Algorithm::Gdm),
            "ddpg" => Ok(Algorithm::Ddpg),
            other => Err(UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Ddpg(DdpgActor),
    Gdm(DiffusionPolicy),
    Moe(MoEActor),
}

impl Policy {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Policy::Ddpg(_) => Algorithm::Ddpg,
            Policy::Gdm(_) => Algorithm::Gdm,
            Policy::Moe(_) => Algorithm::MoeGdm,
        }
    }

    /// Normalized action for one state, plus the routed expert for mixtures.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, Option<usize>), DiffusionError> {
        match self {
            Policy::Ddpg(a) => Ok((a.act(state)?, None)),
            Policy::Gdm(p) => Ok((p.sample_action(state, rng)?, None)),
            Policy::Moe(m) => {
                let (a, k) = m.sample_action(state, rng)?;
                Ok((a, Some(k)))
            }
        }
    }

    /// Batch of actions, as used for bootstrapped targets. Diffusion
    /// policies draw one [`ChainNoise`] for the whole batch.
    pub fn act_batch<R: Rng + ?Sized>(&self, states: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>, DiffusionError> {
        match self {
            Policy::Ddpg(a) => Ok(a.actions(states)?),
            Policy::Gdm(p) => {
                let noise = ChainNoise::sample(states.nrows(), p.action_dim(), p.schedule().steps(), rng);
                p.sample_with(states, &noise)
            }
            Policy::Moe(m) => {
                let e = &m.experts[0];
                let noise = ChainNoise::sample(states.nrows(), e.action_dim(), e.schedule().steps(), rng);
                Ok(m.sample_with(states, &noise)?.0)
            }
        }
    }

    /// Denoiser row evaluations so far (zero for DDPG).
    pub fn denoiser_evaluations(&self) -> u64 {
        match self {
            Policy::Ddpg(_) => 0,
            Policy::Gdm(p) => p.evaluations(),
            Policy::Moe(m) => m.evaluations(),
        }
    }

    /// Named networks in checkpoint order.
    pub fn nets(&self) -> Vec<(String, &Mlp)> {
        match self {
            Policy::Ddpg(a) => vec![("actor".into(), &a.net)],
            Policy::Gdm(p) => vec![("denoiser".into(), &p.denoiser)],
            Policy::Moe(m) => {
                let mut v = vec![("gate".to_string(), &m.gate)];
                v.extend(m.experts.iter().enumerate().map(|(i, e)| (format!("expert{i}"), &e.denoiser)));
                v
            }
        }
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Policy::Ddpg(a) => vec![&mut a.net],
            Policy::Gdm(p) => vec![&mut p.denoiser],
            Policy::Moe(m) => {
                let mut v = vec![&mut m.gate];
                v.extend(m.experts.iter_mut().map(|e| &mut e.denoiser));
                v
            }
        }
    }

    /// Moves every network toward `online` by `tau`.
    pub fn soft_update_from(&mut self, online: &Policy, tau: f64) -> Result<(), NnError> {
        let sources = online.nets();
        let targets = self.nets_mut();
        if sources.len() != targets.len() {
            return Err(NnError::Shape("policies differ in structure".into()));
        }
        for (t, (_, o)) in targets.into_iter().zip(sources) {
            soft_update(t, o, tau)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.nets().iter().all(|(_, n)| n.all_finite())
    }

    fn schedule(&self) -> Option<&DiffusionSchedule> {
        match self {
            Policy::Ddpg(_) => None,
            Policy::Gdm(p) => Some(p.schedule()),
            Policy::Moe(m) => Some(m.experts[0].schedule()),
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained actor and critic, everything needed to act again.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: Policy,
    pub critic: Critic,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "algorithm {}", self.policy.algorithm())?;
        writeln!(out, "state_dim {}", self.critic.state_dim())?;
        writeln!(out, "action_dim {}", self.critic.action_dim())?;
        if let Some(s) = self.policy.schedule() {
            let betas: Vec<String> = s.betas().iter().map(|b| format!("{b:?}")).collect();
            writeln!(out, "betas {}", betas.join(" "))?;
        }
        if let Policy::Moe(m) = &self.policy {
            match m.routing {
                Routing::Gate => writeln!(out, "routing gate")?,
                Routing::Fixed(k) => writeln!(out, "routing fixed {k}")?,
            }
        }
        let mut nets = vec![("critic".to_string(), &self.critic.net)];
        nets.extend(self.policy.nets());
        writeln!(out, "nets {}", nets.len())?;
        for (name, net) in nets {
            writeln!(out, "net {name}")?;
            net.write_text(out)?;
        }
        writeln!(out, "end")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }

    pub fn read<R: BufRead>(input: &mut R) -> Result<Self, CheckpointError> {
        let mut line_no = 0;
        let fail = |line: usize, reason: String| CheckpointError::Format { line, reason };
        let magic = next_line(input, &mut line_no)?;
        if magic != MAGIC {
            return Err(fail(line_no, format!("expected `{MAGIC}`")));
        }
        let algorithm: Algorithm = expect_field(input, &mut line_no, "algorithm")?
            .first()
            .ok_or_else(|| fail(line_no, "missing algorithm".into()))?
            .parse()
            .map_err(|e: UnknownAlgorithm| fail(line_no, e.to_string()))?;
        let parse_usize = |v: Vec<String>, line: usize| -> Result<usize, CheckpointError> {
            v.first().and_then(|s| s.parse().ok()).ok_or_else(|| fail(line, "expected an integer".into()))
        };
        let state_dim = parse_usize(expect_field(input, &mut line_no, "state_dim")?, line_no)?;
        let action_dim = parse_usize(expect_field(input, &mut line_no, "action_dim")?, line_no)?;
        let schedule = if algorithm == Algorithm::Ddpg {
            None
        } else {
            let betas = expect_field(input, &mut line_no, "betas")?
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fail(line_no, e.to_string()))?;
            Some(DiffusionSchedule::from_betas(betas).map_err(|e| fail(line_no, e.to_string()))?)
        };
        let routing = if algorithm == Algorithm::MoeGdm {
            let r = expect_field(input, &mut line_no, "routing")?;
            match r.as_slice() {
                [mode] if mode == "gate" => Routing::Gate,
                [mode, k] if mode == "fixed" => Routing::Fixed(k.parse().map_err(|_| fail(line_no, "bad expert index".into()))?),
                _ => return Err(fail(line_no, "routing must be `gate` or `fixed <k>`".into())),
            }
        } else {
            Routing::Gate
        };
        let n_nets = parse_usize(expect_field(input, &mut line_no, "nets")?, line_no)?;
        let mut nets = Vec::with_capacity(n_nets);
        for _ in 0..n_nets {
            let name = expect_field(input, &mut line_no, "net")?.join(" ");
            nets.push((name, Mlp::read_text(input, &mut line_no)?));
        }
        expect_field(input, &mut line_no, "end")?;

        let mut nets = nets.into_iter();
        let expect = |nets: &mut dyn Iterator<Item = (String, Mlp)>, name: &str, line: usize| -> Result<Mlp, CheckpointError> {
            match nets.next() {
                Some((n, net)) if n == name => Ok(net),
                Some((n, _)) => Err(fail(line, format!("expected net `{name}`, found `{n}`"))),
                None => Err(fail(line, format!("missing net `{name}`"))),
            }
        };
        let critic = Critic::from_net(expect(&mut nets, "critic", line_no)?, state_dim)?;
        let policy = match algorithm {
            Algorithm::Ddpg => Policy::Ddpg(DdpgActor::from_net(expect(&mut nets, "actor", line_no)?)?),
            Algorithm::Gdm => Policy::Gdm(DiffusionPolicy::from_denoiser(
                expect(&mut nets, "denoiser", line_no)?,
                state_dim,
                action_dim,
                schedule.expect("diffusion schedule parsed"),
            )?),
            Algorithm::MoeGdm => {
                let gate = expect(&mut nets, "gate", line_no)?;
                let schedule = schedule.expect("diffusion schedule parsed");
                let mut experts = Vec::new();
                for i in 0..n_nets.saturating_sub(2) {
                    let net = expect(&mut nets, &format!("expert{i}"), line_no)?;
                    experts.push(DiffusionPolicy::from_denoiser(net, state_dim, action_dim, schedule.clone())?);
                }
                Policy::Moe(MoEActor::new(gate, experts, routing)?)
            }
        };
        if nets.next().is_some() {
            return Err(fail(line_no, "unexpected extra networks".into()));
        }
        Ok(Self { policy, critic })
    }
}

fn expect_field<R: BufRead>(input: &mut R, line_no: &mut usize, name: &str) -> Result<Vec<String>, CheckpointError> {
    let line = next_line(input, line_no)?;
    let mut parts = line.split_whitespace().map(str::to_string);
    match parts.next() {
        Some(key) if key == name => Ok(parts.collect()),
        _ => Err(CheckpointError::Format { line: *line_no, reason: format!("expected `{name} ...`, got `{line}`") }),
    }
}
