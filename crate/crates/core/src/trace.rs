//! Per-step JSONL episode traces and their human-readable replay.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arena::{AgentKind, Termination, WorldState, MAX_DISTRACTORS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceAgent {
    pub kind: AgentKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action: u8,
    pub reward: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub episode: u64,
    /// Step count after the transition (1-based).
    pub step: usize,
    pub agents: Vec<TraceAgent>,
    pub target_in_view: bool,
    pub done: Termination,
}

impl TraceStep {
    pub fn capture(
        episode: u64,
        world: &WorldState,
        actions: &[crate::arena::Action],
        rewards: &crate::reward::RewardVector,
        collisions: &[bool],
        target_in_view: bool,
        done: Termination,
    ) -> Self {
        TraceStep {
            episode,
            step: world.step,
            agents: world
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| TraceAgent {
                    kind: a.kind,
                    x: a.pose.x,
                    y: a.pose.y,
                    heading: a.pose.heading,
                    action: actions[i].code(),
                    reward: rewards.for_agent(i),
                    collided: collisions[i],
                })
                .collect(),
            target_in_view,
            done,
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.agents.len();
        if !(2..=2 + MAX_DISTRACTORS).contains(&n) {
            return Err(Error::Format(format!("trace step lists {n} agents")));
        }
        let kinds_ok = self.agents[0].kind == AgentKind::Tracker
            && self.agents[1].kind == AgentKind::Target
            && self.agents[2..].iter().all(|a| a.kind == AgentKind::Distractor);
        if !kinds_ok {
            return Err(Error::Format("trace agents out of order".into()));
        }
        for a in &self.agents {
            if a.action as usize >= crate::arena::Action::COUNT {
                return Err(Error::Format(format!("action code {} out of range", a.action)));
            }
            if ![a.x, a.y, a.heading, a.reward].iter().all(|v| v.is_finite()) {
                return Err(Error::Format("non-finite value in trace".into()));
            }
        }
        Ok(())
    }
}

pub fn write_jsonl(steps: &[TraceStep], mut w: impl std::io::Write) -> Result<()> {
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a JSONL trace. Blank lines are skipped; any malformed line is an
/// error naming its line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<TraceStep>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: TraceStep =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("trace line {}: {e}", no + 1)))?;
        s.check().map_err(|e| Error::Format(format!("trace line {}: {e}", no + 1)))?;
        out.push(s);
    }
    Ok(out)
}

fn kind_tag(k: AgentKind) -> &'static str {
    match k {
        AgentKind::Tracker => "tracker",
        AgentKind::Target => "target",
        AgentKind::Distractor => "distr",
    }
}

pub fn render(steps: &[TraceStep]) -> String {
    let mut s = String::new();
    for st in steps {
        let _ = writeln!(
            s,
            "episode {} step {:>3}  target {}  {}",
            st.episode,
            st.step,
            if st.target_in_view { "in view" } else { "out of view" },
            match st.done {
                Termination::Running => "",
                Termination::Lost => "LOST",
                Termination::MaxLen => "MAX LENGTH",
            }
        );
        for (i, a) in st.agents.iter().enumerate() {
            let _ = writeln!(
                s,
                "  [{i}] {:<7} x {:>7.3} y {:>7.3} heading {:>7.3}  action {} ({})  reward {:>8.4}{}",
                kind_tag(a.kind),
                a.x,
                a.y,
                a.heading,
                a.action,
                crate::arena::Action::from_index(a.action as usize),
                a.reward,
                if a.collided { "  collided" } else { "" }
            );
        }
    }
    s
}
