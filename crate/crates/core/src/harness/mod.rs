// SPDX-License-Identifier: Apache-2.0

//! Scripted end-to-end scenarios.
//!
//! A scenario declares named clients and a timeline of steps. The runner
//! drives an in-process [`Session`] on simulated time: every tick it feeds
//! the tracking script's marker poses through the primary's connection,
//! executes the steps that are due, and routes every outbound message into
//! the addressed client's [`ClientReplica`]. Each step may assert on the
//! resulting state via [selectors](selector). All events are recorded so the
//! run can be replayed.
//!
//! Assertion documents have this shape:
//!
//! ```text
//! {
//!   "state":   <authoritative snapshot>,
//!   "views":   { <client>: <latest snapshot that client received> },
//!   "replies": [ <bodies sent to the acting client during the step> ],
//!   "inbox":   { <client>: [ <bodies it received during the step> ] }
//! }
//! ```
//!
//! `{name}` placeholders in actions and selectors expand to client ids or to
//! values captured by earlier steps.

pub mod record;
pub mod selector;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::SessionConfig;
use crate::ids::ClientId;
use crate::protocol::{Body, Message};
use crate::replica::ClientReplica;
use crate::session::{Outbound, Session, SessionEvent};
use crate::snapshot::Role;
use crate::tracking::{load_script_file, TrackingScript, TrackingSim};
use crate::world::World;

use record::Recorder;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientDecl {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Eq,
    Approx,
    Exists,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateAssertion {
    pub path: String,
    pub op: Comparator,
    /// Present-but-null means "expect null", so `null` is kept as `Some`.
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub at: f64,
    pub client: String,
    /// Message body to send; a step without one only asserts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<StateAssertion>,
    /// Variables to bind from the post-step document, name → selector.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub capture: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// World file, relative to the scenario file.
    pub world: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking_script: Option<PathBuf>,
    #[serde(default)]
    pub config: SessionConfig,
    pub clients: Vec<ClientDecl>,
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let mut names = BTreeSet::new();
        for c in &self.clients {
            if !names.insert(c.name.as_str()) {
                return bad(format!("client {:?} declared twice", c.name));
            }
        }
        let mut prev = 0.0;
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.at.is_finite() && s.at >= prev) {
                return bad(format!("steps[{i}].at: times must be finite and non-decreasing"));
            }
            prev = s.at;
            if !names.contains(s.client.as_str()) {
                return bad(format!("steps[{i}].client: {:?} is not declared", s.client));
            }
            for (j, a) in s.expect.iter().enumerate() {
                selector::parse(&a.path).map_err(|e| HarnessError::Config(format!("steps[{i}].expect[{j}]: {e}")))?;
                let needs_value = matches!(a.op, Comparator::Eq | Comparator::Approx);
                if needs_value && a.value.is_none() {
                    return bad(format!("steps[{i}].expect[{j}]: {:?} needs a value", a.op));
                }
                if a.op == Comparator::Approx && !a.tol.is_some_and(|t| t >= 0.0) {
                    return bad(format!("steps[{i}].expect[{j}]: approx needs tol >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        s.validate()?;
        Ok(s)
    }
}

/// Scenario plus the resources it references, ready to run.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub world: World,
    pub script: TrackingScript,
}

pub fn load_scenario_file(path: &Path) -> Result<LoadedScenario, HarnessError> {
    let cfg_err = |what: &str, e: String| HarnessError::Config(format!("{what}: {e}"));
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(&path.display().to_string(), e.to_string()))?;
    let scenario = Scenario::from_json(&text).map_err(|e| cfg_err(&path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let world_path = base.join(&scenario.world);
    let world_text =
        std::fs::read_to_string(&world_path).map_err(|e| cfg_err(&world_path.display().to_string(), e.to_string()))?;
    let world = World::from_json(&world_text).map_err(|e| cfg_err(&world_path.display().to_string(), e.to_string()))?;
    let script = match &scenario.tracking_script {
        Some(p) => {
            let p = base.join(p);
            load_script_file(&p).map_err(|e| cfg_err(&p.display().to_string(), e.to_string()))?
        }
        None => TrackingScript::empty(),
    };
    Ok(LoadedScenario { scenario, world, script })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: usize,
    pub at: f64,
    pub client: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub passed: bool,
    pub steps: usize,
    pub assertions: usize,
    pub failures: Vec<StepFailure>,
    pub simulated_seconds: f64,
    pub ticks: u64,
    pub tags: Vec<String>,
    pub final_hash: String,
}

#[derive(Debug)]
pub struct ScenarioRun {
    pub report: Report,
    pub recorder: Recorder,
    pub replicas: BTreeMap<String, ClientReplica>,
}

struct Runner {
    rec: Recorder,
    ids: BTreeMap<String, ClientId>,
    names: BTreeMap<ClientId, String>,
    seqs: BTreeMap<ClientId, u64>,
    replicas: BTreeMap<String, ClientReplica>,
    vars: BTreeMap<String, Value>,
    tracking: TrackingSim,
}

impl Runner {
    fn deliver(&mut self, out: Vec<Outbound>, inbox: &mut BTreeMap<String, Vec<Value>>) {
        for o in out {
            let Some(name) = self.names.get(&o.to) else { continue };
            if let Some(r) = self.replicas.get_mut(name) {
                r.apply(&o.msg.body);
            }
            inbox.entry(name.clone()).or_default().push(serde_json::to_value(&o.msg.body).expect("body serializes"));
        }
    }

    fn send(&mut self, from: ClientId, body: Body, inbox: &mut BTreeMap<String, Vec<Value>>) {
        let seq = self.seqs.entry(from).or_insert(0);
        *seq += 1;
        let msg = Message { seq: *seq, sender: from, body };
        let out = self.rec.apply(SessionEvent::Message { from, msg });
        self.deliver(out, inbox);
    }

    /// One simulated tick: advance the clock, then feed fresh marker poses.
    fn tick(&mut self, dt: f64) {
        let mut sink = BTreeMap::new();
        let out = self.rec.apply(SessionEvent::Tick);
        self.deliver(out, &mut sink);
        let poses = self.tracking.step(dt);
        if let Some(p) = self.rec.session().state().primary {
            for body in poses {
                self.send(p, body, &mut sink);
            }
        }
    }

    fn substitute(&self, v: &Value) -> Value {
        match v {
            Value::String(s) => {
                if let Some(name) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                    if let Some(id) = self.ids.get(name) {
                        return json!(id.0);
                    }
                    if let Some(val) = self.vars.get(name) {
                        return val.clone();
                    }
                }
                Value::String(self.expand(s))
            }
            Value::Array(a) => Value::Array(a.iter().map(|x| self.substitute(x)).collect()),
            Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), self.substitute(x))).collect()),
            other => other.clone(),
        }
    }

    fn expand(&self, s: &str) -> String {
        let mut out = s.to_string();
        for (name, id) in &self.ids {
            out = out.replace(&format!("{{{name}}}"), &id.0.to_string());
        }
        for (name, v) in &self.vars {
            let text = match v {
                Value::String(t) => t.clone(),
                other => other.to_string(),
            };
            out = out.replace(&format!("{{{name}}}"), &text);
        }
        out
    }

    fn document(&self, replies: Vec<Value>, inbox: BTreeMap<String, Vec<Value>>) -> Value {
        let state = serde_json::to_value(self.rec.session().snapshot()).expect("snapshot serializes");
        let views: serde_json::Map<String, Value> = self
            .replicas
            .iter()
            .filter_map(|(n, r)| r.latest().map(|s| (n.clone(), serde_json::to_value(s).expect("snapshot"))))
            .collect();
        json!({ "state": state, "views": views, "replies": replies, "inbox": inbox })
    }
}

fn check(doc: &Value, a: &StateAssertion, path: &str) -> Result<(), String> {
    let found = selector::select(doc, path)?;
    match (a.op, found) {
        (Comparator::Exists, Some(_)) | (Comparator::Absent, None) => Ok(()),
        (Comparator::Exists, None) => Err(format!("{path}: expected to exist, missing")),
        (Comparator::Absent, Some(v)) => Err(format!("{path}: expected absent, found {v}")),
        (_, None) => Err(format!("{path}: not found")),
        (Comparator::Eq, Some(v)) => {
            let want = a.value.as_ref().expect("validated");
            if selector::json_eq(&v, want) {
                Ok(())
            } else {
                Err(format!("{path}: expected {want}, found {v}"))
            }
        }
        (Comparator::Approx, Some(v)) => {
            let want = a.value.as_ref().expect("validated");
            let tol = a.tol.expect("validated");
            if selector::json_approx(&v, want, tol) {
                Ok(())
            } else {
                Err(format!("{path}: expected {want} ± {tol}, found {v}"))
            }
        }
    }
}

/// Runs a scenario in process on simulated time.
pub fn run_scenario(loaded: &LoadedScenario) -> Result<ScenarioRun, HarnessError> {
    let sc = &loaded.scenario;
    sc.validate()?;
    let session = Session::new(loaded.world.clone(), sc.config.clone())
        .map_err(|e| HarnessError::Config(format!("config: {e}")))?;
    let dt = sc.config.tick_dt();
    let mut runner = Runner {
        rec: Recorder::new(session),
        ids: BTreeMap::new(),
        names: BTreeMap::new(),
        seqs: BTreeMap::new(),
        replicas: BTreeMap::new(),
        vars: BTreeMap::new(),
        tracking: TrackingSim::new(loaded.script.clone()),
    };
    for (i, c) in sc.clients.iter().enumerate() {
        let id = ClientId(i as u32 + 1);
        runner.rec.apply(SessionEvent::Connect { client: id });
        runner.ids.insert(c.name.clone(), id);
        runner.names.insert(id, c.name.clone());
        runner.replicas.insert(c.name.clone(), ClientReplica::new());
    }

    let mut failures = Vec::new();
    let mut assertions = 0;
    let mut tags = BTreeSet::new();
    for (i, step) in sc.steps.iter().enumerate() {
        while runner.rec.session().now() + TIME_EPS < step.at {
            runner.tick(dt);
        }
        let from = runner.ids[&step.client];
        let mut inbox = BTreeMap::new();
        let fail = |message: String| StepFailure {
            step: i,
            at: step.at,
            client: step.client.clone(),
            note: step.note.clone(),
            message,
        };
        if let Some(action) = &step.action {
            let body: Body = match serde_json::from_value(runner.substitute(action)) {
                Ok(b) => b,
                Err(e) => return Err(HarnessError::Config(format!("steps[{i}].action: {e}"))),
            };
            runner.send(from, body, &mut inbox);
        }
        let replies = inbox.get(&step.client).cloned().unwrap_or_default();
        let doc = runner.document(replies.clone(), inbox);

        let mentions_replies = step.expect.iter().any(|a| a.path.starts_with("replies"));
        if !mentions_replies {
            if let Some(err) = replies.iter().find(|b| b["type"] == "Error") {
                failures.push(fail(format!("unexpected error reply: {}", err["reason"])));
            }
        }
        for a in &step.expect {
            assertions += 1;
            let a = StateAssertion { value: a.value.as_ref().map(|v| runner.substitute(v)), ..a.clone() };
            if let Err(m) = check(&doc, &a, &runner.expand(&a.path)) {
                failures.push(fail(m));
            }
        }
        for (name, path) in &step.capture {
            match selector::select(&doc, &runner.expand(path)) {
                Ok(Some(v)) => {
                    runner.vars.insert(name.clone(), v);
                }
                Ok(None) => failures.push(fail(format!("capture {name}: {path} not found"))),
                Err(e) => failures.push(fail(format!("capture {name}: {e}"))),
            }
        }
        tags.extend(step.tags.iter().cloned());
    }
    // drain: one more tick so pending pose updates reach every replica
    runner.tick(dt);

    let session = runner.rec.session();
    let report = Report {
        scenario: sc.name.clone(),
        passed: failures.is_empty(),
        steps: sc.steps.len(),
        assertions,
        failures,
        simulated_seconds: session.now(),
        ticks: session.tick_count(),
        tags: tags.into_iter().collect(),
        final_hash: session.state_hash(),
    };
    Ok(ScenarioRun { report, recorder: runner.rec, replicas: runner.replicas })
}
