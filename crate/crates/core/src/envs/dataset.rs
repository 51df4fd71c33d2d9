//! Transition datasets and their on-disk encodings.

use std::fmt::Write as _;

use crate::blob::{Reader, Writer};
use crate::error::{KbbError, Result};
use crate::value::{StateKind, StatePoint, StateRef};

const MAGIC: &[u8; 8] = b"KBBDSET1";

/// How the `x` marginal of a dataset was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrawMode {
    /// Independent draws from the exact stationary law.
    ExactStationary,
    /// Strided states of one trajectory after a burn-in; approximates the
    /// stationary law.
    BurnInTrajectory,
}

impl DrawMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DrawMode::ExactStationary => "exact_stationary",
            DrawMode::BurnInTrajectory => "burn_in_trajectory",
        }
    }

    fn code(&self) -> u8 {
        match self {
            DrawMode::ExactStationary => 0,
            DrawMode::BurnInTrajectory => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(DrawMode::ExactStationary),
            1 => Ok(DrawMode::BurnInTrajectory),
            _ => Err(KbbError::Format(format!("unknown draw mode {c}"))),
        }
    }
}

/// One `(x, r(x), x')` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSample {
    pub state: StatePoint,
    pub reward: f64,
    pub next_state: StatePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum StateColumn {
    Indices(Vec<usize>),
    Points { dim: usize, data: Vec<f64> },
}

impl StateColumn {
    pub(crate) fn len(&self) -> usize {
        match self {
            StateColumn::Indices(ix) => ix.len(),
            StateColumn::Points { dim, data } => data.len() / dim.max(&1),
        }
    }

    pub(crate) fn width(&self) -> usize {
        match self {
            StateColumn::Indices(_) => 1,
            StateColumn::Points { dim, .. } => *dim,
        }
    }

    pub(crate) fn get(&self, i: usize) -> StateRef<'_> {
        match self {
            StateColumn::Indices(ix) => StateRef::Index(ix[i]),
            StateColumn::Points { dim, data } => StateRef::Vector(&data[i * dim..(i + 1) * dim]),
        }
    }

    pub(crate) fn coord(&self, i: usize, c: usize) -> f64 {
        match self {
            StateColumn::Indices(ix) => ix[i] as f64,
            StateColumn::Points { dim, data } => data[i * dim + c],
        }
    }
}

/// An ordered, nonempty list of transition samples from one environment.
///
/// States are stored column-wise; [`Dataset::sample`] materializes a single
/// [`TransitionSample`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    env_id: String,
    seed: u64,
    draw_mode: DrawMode,
    kind: StateKind,
    states: StateColumn,
    rewards: Vec<f64>,
    next_states: StateColumn,
}

impl Dataset {
    pub(crate) fn from_columns(
        env_id: String,
        seed: u64,
        draw_mode: DrawMode,
        states: StateColumn,
        rewards: Vec<f64>,
        next_states: StateColumn,
    ) -> Self {
        let kind = match &states {
            StateColumn::Indices(_) => StateKind::Index,
            StateColumn::Points { dim, .. } => StateKind::Vector(*dim),
        };
        debug_assert!(!rewards.is_empty());
        Self {
            env_id,
            seed,
            draw_mode,
            kind,
            states,
            rewards,
            next_states,
        }
    }

    pub fn from_samples(
        env_id: impl Into<String>,
        seed: u64,
        draw_mode: DrawMode,
        samples: Vec<TransitionSample>,
    ) -> Result<Self> {
        let first = samples.first().ok_or(KbbError::EmptyInput)?;
        let kind = first.state.kind();
        if samples
            .iter()
            .any(|s| s.state.kind() != kind || s.next_state.kind() != kind)
        {
            return Err(KbbError::MixedStateKinds);
        }
        let column = |pick: &dyn Fn(&TransitionSample) -> &StatePoint| match kind {
            StateKind::Index => StateColumn::Indices(
                samples
                    .iter()
                    .map(|s| match pick(s) {
                        StatePoint::Index(i) => *i,
                        StatePoint::Vector(_) => unreachable!(),
                    })
                    .collect(),
            ),
            StateKind::Vector(dim) => StateColumn::Points {
                dim,
                data: samples
                    .iter()
                    .flat_map(|s| match pick(s) {
                        StatePoint::Vector(v) => v.clone(),
                        StatePoint::Index(_) => unreachable!(),
                    })
                    .collect(),
            },
        };
        let states = column(&|s| &s.state);
        let next_states = column(&|s| &s.next_state);
        let rewards = samples.iter().map(|s| s.reward).collect();
        Ok(Self::from_columns(
            env_id.into(),
            seed,
            draw_mode,
            states,
            rewards,
            next_states,
        ))
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub(crate) fn states_column(&self) -> &StateColumn {
        &self.states
    }

    pub(crate) fn next_states_column(&self) -> &StateColumn {
        &self.next_states
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw_mode(&self) -> DrawMode {
        self.draw_mode
    }

    pub fn state_kind(&self) -> StateKind {
        self.kind
    }

    pub fn state(&self, i: usize) -> StateRef<'_> {
        self.states.get(i)
    }

    pub fn next_state(&self, i: usize) -> StateRef<'_> {
        self.next_states.get(i)
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn sample(&self, i: usize) -> TransitionSample {
        TransitionSample {
            state: self.state(i).to_owned(),
            reward: self.rewards[i],
            next_state: self.next_state(i).to_owned(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = TransitionSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Binary columnar encoding: header (magic, env id, seed, n, state
    /// dimension, draw mode, state kind) followed by little-endian `f64`
    /// columns `x_0..x_{d-1}`, `reward`, `xp_0..xp_{d-1}`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let dim = self.kind.width();
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.str(&self.env_id);
        w.u64(self.seed);
        w.u64(n as u64);
        w.u64(dim as u64);
        w.u8(self.draw_mode.code());
        w.u8(match self.kind {
            StateKind::Index => 0,
            StateKind::Vector(_) => 1,
        });
        for c in 0..dim {
            for i in 0..n {
                w.f64(self.states.coord(i, c));
            }
        }
        for &r in &self.rewards {
            w.f64(r);
        }
        for c in 0..dim {
            for i in 0..n {
                w.f64(self.next_states.coord(i, c));
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let env_id = r.str()?;
        let seed = r.u64()?;
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let draw_mode = DrawMode::from_code(r.u8()?)?;
        let kind_code = r.u8()?;
        if n == 0 {
            return Err(KbbError::EmptyInput);
        }
        let expected = n
            .checked_mul(2 * dim + 1)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| KbbError::Format("size overflow".into()))?;
        if bytes.len() < expected {
            return Err(KbbError::Format("truncated dataset".into()));
        }
        let read_block = |r: &mut Reader<'_>| -> Result<Vec<f64>> {
            let mut cols = vec![0.0; n * dim];
            for c in 0..dim {
                for i in 0..n {
                    cols[i * dim + c] = r.f64()?;
                }
            }
            Ok(cols)
        };
        let xs = read_block(&mut r)?;
        let rewards = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let xps = read_block(&mut r)?;
        r.finish()?;
        let to_column = |data: Vec<f64>| -> Result<StateColumn> {
            match kind_code {
                0 if dim == 1 => Ok(StateColumn::Indices(
                    data.into_iter()
                        .map(|v| {
                            if v >= 0.0 && v.fract() == 0.0 {
                                Ok(v as usize)
                            } else {
                                Err(KbbError::Format(format!("bad state index {v}")))
                            }
                        })
                        .collect::<Result<_>>()?,
                )),
                1 => Ok(StateColumn::Points { dim, data }),
                _ => Err(KbbError::Format(format!("bad state kind {kind_code}"))),
            }
        };
        Ok(Self::from_columns(
            env_id,
            seed,
            draw_mode,
            to_column(xs)?,
            rewards,
            to_column(xps)?,
        ))
    }

    /// CSV export with columns `idx, x_0..x_{d-1}, reward, xp_0..xp_{d-1}`.
    pub fn to_csv(&self) -> String {
        let dim = self.kind.width();
        let mut out = String::from("idx");
        for c in 0..dim {
            write!(out, ",x_{c}").unwrap();
        }
        out.push_str(",reward");
        for c in 0..dim {
            write!(out, ",xp_{c}").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            write!(out, "{i}").unwrap();
            for c in 0..dim {
                write!(out, ",{}", self.states.coord(i, c)).unwrap();
            }
            write!(out, ",{}", self.rewards[i]).unwrap();
            for c in 0..dim {
                write!(out, ",{}", self.next_states.coord(i, c)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector_sample(x: f64) -> TransitionSample {
        TransitionSample {
            state: StatePoint::Vector(vec![x, -x]),
            reward: x * 2.0,
            next_state: StatePoint::Vector(vec![x + 1.0, 0.5]),
        }
    }

    #[test]
    fn from_samples_validates() {
        assert!(matches!(
            Dataset::from_samples("e", 0, DrawMode::ExactStationary, vec![]),
            Err(KbbError::EmptyInput)
        ));
        let mixed = vec![
            vector_sample(1.0),
            TransitionSample {
                state: StatePoint::Index(0),
                reward: 0.0,
                next_state: StatePoint::Index(1),
            },
        ];
        assert!(matches!(
            Dataset::from_samples("e", 0, DrawMode::ExactStationary, mixed),
            Err(KbbError::MixedStateKinds)
        ));
    }

    #[test]
    fn binary_round_trip_and_csv() {
        let d = Dataset::from_samples(
            "toy",
            42,
            DrawMode::BurnInTrajectory,
            vec![vector_sample(1.0), vector_sample(0.25)],
        )
        .unwrap();
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let csv = d.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "idx,x_0,x_1,reward,xp_0,xp_1");
        assert_eq!(lines.next().unwrap(), "0,1,-1,2,2,0.5");
    }

    #[test]
    fn index_round_trip() {
        let samples = (0..5)
            .map(|i| TransitionSample {
                state: StatePoint::Index(i),
                reward: i as f64 / 3.0,
                next_state: StatePoint::Index((i + 1) % 5),
            })
            .collect();
        let d = Dataset::from_samples("tab", 1, DrawMode::ExactStationary, samples).unwrap();
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
        assert_eq!(d.sample(4).next_state, StatePoint::Index(0));
    }
}
