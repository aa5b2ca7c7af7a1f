//! The single behaviour-policy sample path: generation, persistence, replay.
//!
//! Text layout:
//!
//! ```text
//! trajectory 1
//! <key> <value>          one line per metadata entry, including `checksum`
//!
//! <s> <a> <r> <s'>       one transition per line
//! ```
//!
//! Vector states and actions are written as their coordinates in order.
//! Reals carry 17 significant digits so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fmt::{Debug, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next_state: S,
}

/// A state or action that can be written as whitespace-separated fields.
pub trait Field: Clone + PartialEq + Debug {
    const KIND: &'static str;
    fn width(&self) -> usize;
    fn push_fields(&self, out: &mut String);
    fn parse_fields(fields: &[&str]) -> Option<Self>;

    /// Tabular index, when the value is one.
    fn label(&self) -> Option<usize> {
        None
    }
}

impl Field for usize {
    const KIND: &'static str = "index";

    fn width(&self) -> usize {
        1
    }

    fn push_fields(&self, out: &mut String) {
        let _ = write!(out, "{self}");
    }

    fn parse_fields(fields: &[&str]) -> Option<Self> {
        match fields {
            [x] => x.parse().ok(),
            _ => None,
        }
    }

    fn label(&self) -> Option<usize> {
        Some(*self)
    }
}

impl Field for Vec<f64> {
    const KIND: &'static str = "vector";

    fn width(&self) -> usize {
        self.len()
    }

    fn push_fields(&self, out: &mut String) {
        for (i, x) in self.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            push_real(out, *x);
        }
    }

    fn parse_fields(fields: &[&str]) -> Option<Self> {
        fields.iter().map(|f| f.parse().ok()).collect()
    }
}

fn push_real(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStore<S, A> {
    meta: BTreeMap<String, String>,
    records: Vec<Transition<S, A>>,
}

const CHECKSUM_KEY: &str = "checksum";

impl<S: Field, A: Field> TrajectoryStore<S, A> {
    pub fn new(meta: BTreeMap<String, String>, records: Vec<Transition<S, A>>) -> Result<Self> {
        check_chain(&records)?;
        if let Some(k) = records.iter().position(|t| !t.reward.is_finite()) {
            return Err(Error::Corrupt {
                record: k,
                detail: "reward is not finite".into(),
            });
        }
        let mut store = Self { meta, records };
        store.refresh_meta();
        Ok(store)
    }

    fn refresh_meta(&mut self) {
        self.meta.insert("length".into(), self.records.len().to_string());
        self.meta.insert("state_kind".into(), S::KIND.into());
        self.meta.insert("action_kind".into(), A::KIND.into());
        if let Some(t) = self.records.first() {
            self.meta.insert("state_width".into(), t.state.width().to_string());
            self.meta.insert("action_width".into(), t.action.width().to_string());
        }
        self.meta.remove(CHECKSUM_KEY);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Transition<S, A>] {
        &self.records
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn insert_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value: String = value.into();
        assert!(
            !key.contains(char::is_whitespace) && !value.contains('\n'),
            "metadata keys are single tokens and values single lines"
        );
        self.meta.insert(key, value);
        self.refresh_meta();
    }

    /// The first `n` transitions, in order.
    pub fn replay(&self, n: usize) -> Result<&[Transition<S, A>]> {
        if n > self.records.len() {
            return Err(Error::InsufficientData {
                available: self.records.len(),
                requested: n,
            });
        }
        Ok(&self.records[..n])
    }

    fn body(&self) -> String {
        let mut out = String::new();
        for t in &self.records {
            t.state.push_fields(&mut out);
            out.push(' ');
            t.action.push_fields(&mut out);
            out.push(' ');
            push_real(&mut out, t.reward);
            out.push(' ');
            t.next_state.push_fields(&mut out);
            out.push('\n');
        }
        out
    }

    fn digest(meta: &BTreeMap<String, String>, body: &str) -> String {
        let mut h = Sha256::new();
        for (k, v) in meta.iter().filter(|(k, _)| k.as_str() != CHECKSUM_KEY) {
            h.update(k.as_bytes());
            h.update(b" ");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_text(&self) -> String {
        let body = self.body();
        let mut out = String::from("trajectory 1\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k} {v}");
        }
        let _ = writeln!(out, "{CHECKSUM_KEY} {}", Self::digest(&self.meta, &body));
        out.push('\n');
        out.push_str(&body);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split_inclusive('\n').enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == "trajectory 1" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    detail: "missing `trajectory 1` header".into(),
                })
            }
        }
        let mut meta = BTreeMap::new();
        for (i, raw) in lines.by_ref() {
            let l = raw.trim_end_matches(['\n', '\r']);
            if l.is_empty() {
                break;
            }
            let (k, v) = l.split_once(' ').ok_or_else(|| Error::Parse {
                line: i + 1,
                detail: "metadata line needs `key value`".into(),
            })?;
            meta.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<usize> {
            meta.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    detail: format!("metadata `{k}` missing or not an integer"),
                })
        };
        let length = get("length")?;
        for (key, kind) in [("state_kind", S::KIND), ("action_kind", A::KIND)] {
            if meta.get(key).map(String::as_str) != Some(kind) {
                return Err(Error::config(format!("trajectory `{key}` is not `{kind}`")));
            }
        }
        let (sw, aw) = if length > 0 {
            (get("state_width")?, get("action_width")?)
        } else {
            (0, 0)
        };
        let width = 2 * sw + aw + 1;
        let mut records = Vec::with_capacity(length);
        let mut body = String::new();
        for (k, (_, raw)) in lines.enumerate() {
            if !raw.ends_with('\n') {
                return Err(Error::Corrupt {
                    record: k,
                    detail: "record is truncated".into(),
                });
            }
            body.push_str(raw);
            let f: Vec<&str> = raw.split_whitespace().collect();
            let bad = |d: &str| Error::Corrupt {
                record: k,
                detail: d.to_string(),
            };
            if f.len() != width {
                return Err(bad(&format!("expected {width} fields, found {}", f.len())));
            }
            let state = S::parse_fields(&f[..sw]).ok_or_else(|| bad("bad state"))?;
            let action = A::parse_fields(&f[sw..sw + aw]).ok_or_else(|| bad("bad action"))?;
            let reward: f64 = f[sw + aw].parse().map_err(|_| bad("bad reward"))?;
            let next_state = S::parse_fields(&f[sw + aw + 1..]).ok_or_else(|| bad("bad next state"))?;
            if let Some(prev) = records.last() {
                let prev: &Transition<S, A> = prev;
                if prev.next_state != state {
                    return Err(bad("state does not continue the previous record"));
                }
            }
            records.push(Transition {
                state,
                action,
                reward,
                next_state,
            });
        }
        if records.len() != length {
            return Err(Error::Corrupt {
                record: records.len(),
                detail: format!("header declares {length} records, file holds {}", records.len()),
            });
        }
        let expected = meta.get(CHECKSUM_KEY).cloned().unwrap_or_default();
        let found = Self::digest(&meta, &body);
        if expected != found {
            return Err(Error::Checksum { expected, found });
        }
        meta.remove(CHECKSUM_KEY);
        Self::new(meta, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn check_chain<S: PartialEq, A>(records: &[Transition<S, A>]) -> Result<()> {
    for (k, w) in records.windows(2).enumerate() {
        if w[0].next_state != w[1].state {
            return Err(Error::Corrupt {
                record: k + 1,
                detail: "state does not continue the previous record".into(),
            });
        }
    }
    Ok(())
}

/// Simulates one path of `length` transitions under `behaviour`.
pub fn generate_trajectory<E, P>(
    env: &E,
    behaviour: &P,
    length: usize,
    seed: u64,
) -> Result<TrajectoryStore<E::State, E::Action>>
where
    E: Environment,
    E::State: Field,
    E::Action: Field,
    P: Policy<E::State, E::Action>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.initial_state(&mut rng);
    let mut records = Vec::with_capacity(length);
    for _ in 0..length {
        let a = behaviour.sample(&s, &mut rng);
        let (t, r) = env.step(&s, &a, &mut rng);
        records.push(Transition {
            state: s,
            action: a,
            reward: r,
            next_state: t.clone(),
        });
        s = t;
    }
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), seed.to_string());
    TrajectoryStore::new(meta, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TrajectoryStore<usize, usize> {
        let recs = vec![
            Transition { state: 0, action: 1, reward: 0.0, next_state: 1 },
            Transition { state: 1, action: 0, reward: 1.0, next_state: 0 },
            Transition { state: 0, action: 1, reward: -0.25, next_state: 1 },
        ];
        TrajectoryStore::new(BTreeMap::new(), recs).unwrap()
    }

    #[test]
    fn round_trip() {
        let s = fixture();
        let back = TrajectoryStore::<usize, usize>::from_text(&s.to_text()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn broken_chain_names_record() {
        let recs = vec![
            Transition { state: 0usize, action: 0usize, reward: 0.0, next_state: 1 },
            Transition { state: 2, action: 0, reward: 0.0, next_state: 1 },
        ];
        match TrajectoryStore::new(BTreeMap::new(), recs) {
            Err(Error::Corrupt { record, .. }) => assert_eq!(record, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replay_beyond_end_fails() {
        let s = fixture();
        assert_eq!(s.replay(2).unwrap().len(), 2);
        assert!(matches!(s.replay(4), Err(Error::InsufficientData { available: 3, requested: 4 })));
    }
}
