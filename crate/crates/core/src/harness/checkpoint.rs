//! Checkpoint files.
//!
//! A checkpoint is a `key = value` text header terminated by a line `end`,
//! followed by little-endian f64 arrays: theta, Adam m, Adam v, and the
//! best-agent theta when one is recorded. Header floats use Rust's
//! shortest round-trip formatting, so every value survives bit-exactly.

use super::HarnessError;
use crate::curriculum::{ConditionStats, SelectorState, WINDOW};
use crate::envs::ConditionId;
use crate::es::{AdamState, EsState};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const MAGIC: &str = "es-curriculum-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct BestAgent {
    pub generation: u64,
    /// Mean fitness on the screening draw.
    pub score: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCheckpoint {
    pub config_hash: String,
    pub replication: usize,
    /// Environment steps consumed so far.
    pub cum_steps: u64,
    /// Index of the next snapshot milestone (1-based).
    pub next_snapshot: u32,
    /// Set once the replication has exhausted its budget.
    pub finished: bool,
    pub state: EsState,
    pub selector: Option<SelectorState>,
    pub best: Option<BestAgent>,
}

impl RunCheckpoint {
    pub fn generation(&self) -> u64 {
        self.state.generation
    }

    /// The controller to post-evaluate: the best screened agent, or the
    /// current parent when nothing was screened.
    pub fn best_theta(&self) -> &[f64] {
        self.best
            .as_ref()
            .map(|b| b.theta.as_slice())
            .unwrap_or(&self.state.theta)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        let _ = writeln!(h, "{MAGIC}");
        let _ = writeln!(h, "tool = {}", crate::TOOL_VERSION);
        let _ = writeln!(h, "config_hash = {}", self.config_hash);
        let _ = writeln!(h, "replication = {}", self.replication);
        let _ = writeln!(h, "seed = {}", self.state.seed);
        let _ = writeln!(h, "generation = {}", self.state.generation);
        let _ = writeln!(h, "cum_steps = {}", self.cum_steps);
        let _ = writeln!(h, "adam_t = {}", self.state.adam.t);
        let _ = writeln!(h, "theta_len = {}", self.state.theta.len());
        let _ = writeln!(h, "next_snapshot = {}", self.next_snapshot);
        let _ = writeln!(h, "finished = {}", self.finished);
        if let Some(best) = &self.best {
            let _ = writeln!(h, "best_generation = {}", best.generation);
            let _ = writeln!(h, "best_score = {:?}", best.score);
        }
        if let Some(sel) = &self.selector {
            let _ = writeln!(h, "selector_iteration = {}", sel.iteration);
            let _ = writeln!(h, "selector_total = {}", sel.total_iterations);
            let _ = writeln!(h, "selector_conditions = {}", sel.n_conditions());
            let observed: Vec<_> = sel.observed().collect();
            let _ = writeln!(h, "selector_rows = {}", observed.len());
            for (id, s) in observed {
                let (values, head, len, n_obs) = s.raw();
                let _ = write!(h, "stats {} {n_obs} {head} {len}", id.0);
                for v in values {
                    let _ = write!(h, " {v:?}");
                }
                h.push('\n');
            }
        }
        h.push_str("end\n");

        let mut out = h.into_bytes();
        let mut push = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        push(&self.state.theta);
        push(&self.state.adam.m);
        push(&self.state.adam.v);
        if let Some(best) = &self.best {
            push(&best.theta);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::format(path, m);
        let mut lines = Vec::new();
        let mut pos = 0;
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("header is not terminated by `end`".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| bad("header is not UTF-8".into()))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(bad(format!("not a checkpoint (expected `{MAGIC}`)")));
        }

        let mut kv: HashMap<&str, &str> = HashMap::new();
        let mut stats_rows = Vec::new();
        for line in &lines[1..] {
            if let Some(row) = line.strip_prefix("stats ") {
                stats_rows.push(row);
            } else if let Some((k, v)) = line.split_once(" = ") {
                kv.insert(k, v);
            } else {
                return Err(bad(format!("malformed header line `{line}`")));
            }
        }
        fn field<T: std::str::FromStr>(
            kv: &HashMap<&str, &str>,
            key: &str,
        ) -> Result<Option<T>, String> {
            kv.get(key)
                .map(|v| v.parse::<T>().map_err(|_| format!("bad value for {key}: `{v}`")))
                .transpose()
        }
        fn req<T: std::str::FromStr>(kv: &HashMap<&str, &str>, key: &str) -> Result<T, String> {
            field(kv, key)?.ok_or_else(|| format!("missing {key}"))
        }

        let parsed = (|| -> Result<_, String> {
            let config_hash: String = req(&kv, "config_hash")?;
            let replication: usize = req(&kv, "replication")?;
            let seed: u64 = req(&kv, "seed")?;
            let generation: u64 = req(&kv, "generation")?;
            let cum_steps: u64 = req(&kv, "cum_steps")?;
            let adam_t: u64 = req(&kv, "adam_t")?;
            let theta_len: usize = req(&kv, "theta_len")?;
            let next_snapshot: u32 = req(&kv, "next_snapshot")?;
            let finished: bool = req(&kv, "finished")?;
            let best_generation: Option<u64> = field(&kv, "best_generation")?;
            let best_score: Option<f64> = field(&kv, "best_score")?;

            let selector = match field::<u64>(&kv, "selector_iteration")? {
                None => None,
                Some(iteration) => {
                    let total: u64 = req(&kv, "selector_total")?;
                    let n: usize = req(&kv, "selector_conditions")?;
                    let rows: usize = req(&kv, "selector_rows")?;
                    if rows != stats_rows.len() {
                        return Err(format!(
                            "selector_rows = {rows} but {} stats lines",
                            stats_rows.len()
                        ));
                    }
                    let mut state = SelectorState::new(n, total);
                    state.iteration = iteration;
                    for row in &stats_rows {
                        let (id, stats) = parse_stats_row(row)?;
                        if id as usize >= n {
                            return Err(format!("stats row for condition {id} out of range"));
                        }
                        state.restore(ConditionId(id), stats);
                    }
                    Some(state)
                }
            };
            Ok((
                config_hash,
                replication,
                seed,
                generation,
                cum_steps,
                adam_t,
                theta_len,
                next_snapshot,
                finished,
                best_generation.zip(best_score),
                selector,
            ))
        })()
        .map_err(bad)?;
        let (
            config_hash,
            replication,
            seed,
            generation,
            cum_steps,
            adam_t,
            theta_len,
            next_snapshot,
            finished,
            best_meta,
            selector,
        ) = parsed;

        let arrays = if best_meta.is_some() { 4 } else { 3 };
        let body = &bytes[pos..];
        if body.len() != arrays * theta_len * 8 {
            return Err(bad(format!(
                "binary section has {} bytes, expected {}",
                body.len(),
                arrays * theta_len * 8
            )));
        }
        let mut chunks = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = || -> Vec<f64> { chunks.by_ref().take(theta_len).collect() };
        let theta = take();
        let m = take();
        let v = take();
        let best = best_meta.map(|(generation, score)| BestAgent {
            generation,
            score,
            theta: take(),
        });
        Ok(RunCheckpoint {
            config_hash,
            replication,
            cum_steps,
            next_snapshot,
            finished,
            state: EsState {
                theta,
                adam: AdamState { m, v, t: adam_t },
                generation,
                seed,
            },
            selector,
            best,
        })
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(HarnessError::io("writing", &tmp))?;
        std::fs::rename(&tmp, path).map_err(HarnessError::io("renaming checkpoint to", path))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(HarnessError::io("reading", path))?;
        Self::from_bytes(&bytes, path)
    }
}

fn parse_stats_row(row: &str) -> Result<(u32, ConditionStats), String> {
    let err = || format!("malformed stats line `{row}`");
    let parts: Vec<&str> = row.split_whitespace().collect();
    if parts.len() != 4 + WINDOW {
        return Err(err());
    }
    let id: u32 = parts[0].parse().map_err(|_| err())?;
    let n_obs: u64 = parts[1].parse().map_err(|_| err())?;
    let head: u8 = parts[2].parse().map_err(|_| err())?;
    let len: u8 = parts[3].parse().map_err(|_| err())?;
    let mut values = [0.0; WINDOW];
    for (slot, text) in values.iter_mut().zip(&parts[4..]) {
        *slot = text.parse().map_err(|_| err())?;
    }
    let stats = ConditionStats::from_raw(values, head, len, n_obs).ok_or_else(err)?;
    Ok((id, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(with_selector: bool, with_best: bool) -> RunCheckpoint {
        let theta = vec![0.1, -2.5e-300, f64::MIN_POSITIVE, 1.0 / 3.0];
        let mut state = EsState::from_theta(theta.clone(), 42);
        state.generation = 17;
        state.adam.t = 17;
        state.adam.m = vec![1e-9, -0.2, 0.0, -0.0];
        state.adam.v = vec![3.0, 1e-12, 7.25, 0.5];
        let selector = with_selector.then(|| {
            let mut s = SelectorState::new(30, 400);
            s.iteration = 17;
            for (i, f) in [0.3, 0.7, 0.11, 5.0, 2.0, 9.0, 1.0 / 7.0].iter().enumerate() {
                s.record_observation(ConditionId(3), *f);
                s.record_observation(ConditionId((i % 4) as u32 + 10), f * 2.0);
            }
            s
        });
        RunCheckpoint {
            config_hash: "0123456789abcdef".into(),
            replication: 3,
            cum_steps: 123_456,
            next_snapshot: 4,
            finished: false,
            state,
            selector,
            best: with_best.then(|| BestAgent {
                generation: 10,
                score: 812.125,
                theta: theta.iter().map(|t| t * 0.5).collect(),
            }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for sel in [false, true] {
            for best in [false, true] {
                let c = sample(sel, best);
                let back = RunCheckpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
                assert_eq!(back, c);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&back.state.adam.m), bits(&c.state.adam.m));
            }
        }
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let c = sample(true, true);
        c.save(&path).unwrap();
        assert_eq!(RunCheckpoint::load(&path).unwrap(), c);
        assert!(!path.with_extension("ckpt.tmp").exists());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(true, true).to_bytes();
        let p = Path::new("x");
        assert!(RunCheckpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(RunCheckpoint::from_bytes(b"hello\nend\n", p).is_err());
        let header_only = String::from_utf8(sample(true, false).to_bytes()).unwrap_or_default();
        let no_end = header_only.replace("end\n", "");
        assert!(RunCheckpoint::from_bytes(no_end.as_bytes(), p).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_floats_survive(xs in prop::collection::vec(any::<f64>(), 1..20), score in -1e300f64..1e300) {
            let mut state = EsState::from_theta(xs.clone(), 1);
            state.adam.m = xs.iter().rev().copied().collect();
            state.adam.v = xs.clone();
            let c = RunCheckpoint {
                config_hash: "h".into(),
                replication: 0,
                cum_steps: 0,
                next_snapshot: 1,
                finished: true,
                state,
                selector: None,
                best: Some(BestAgent { generation: 0, score, theta: xs.clone() }),
            };
            let back = RunCheckpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.state.theta), bits(&xs));
            prop_assert_eq!(back.best.unwrap().score.to_bits(), score.to_bits());
        }
    }
}
