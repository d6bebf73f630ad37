//! Streaming serve mode: newline-delimited JSON events in, per-turn value
//! records out.
//!
//! Protocol, one JSON object per line.
//! Input:  {"type":"utterance","dialog_id":str,"speaker":"customer"|"agent"|"bot","text":str}
//!         {"type":"end","dialog_id":str}
//! Output: {"dialog_id":str,"turn":int,"values":{"issue","action","norecon","total"},
//!          "reward":num,"bot_failure":bool}
//!         {"error":str,"dialog_id":str|null}
//!
//! Any malformed input line yields an error record, never a crash. State is
//! per dialog id and bounded: the reference encoder streams incrementally,
//! and only the last four token values are retained for online smoothing.
//! Tokens past `max_len` are ignored, freezing the dialog's values the way
//! offline profiling truncates its window.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;

use anyhow::{Context, Result};
use serde::Serialize;

use valprof_core::analytics::QuantileBand;
use valprof_core::corpus::{tokenize_text, Speaker, Vocab};
use valprof_core::encoder::{IncrementalForward, Predictor};
use valprof_core::value::{value_frame, Prior, ScaleCalibration, ValueOptions, ValueVector};

/// Immutable pieces shared by every session.
pub struct ServeSetup<'a> {
    pub predictor: &'a dyn Predictor,
    pub vocab: &'a Vocab,
    pub prior: &'a Prior,
    pub calib: &'a ScaleCalibration,
    pub band: Option<&'a QuantileBand>,
    pub patience: usize,
    pub max_len: usize,
}

#[derive(Serialize)]
struct WireValues {
    issue: f64,
    action: f64,
    norecon: f64,
    total: f64,
}

#[derive(Serialize)]
struct TurnRecord<'a> {
    dialog_id: &'a str,
    turn: usize,
    values: WireValues,
    reward: f64,
    bot_failure: bool,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: String,
    dialog_id: Option<&'a str>,
}

struct Session<'a> {
    /// Incremental forward state when the predictor supports it; otherwise
    /// the prefix is re-run per utterance.
    inc: Option<Box<dyn IncrementalForward + 'a>>,
    prefix: Vec<u32>,
    tokens_seen: usize,
    /// Last <= 4 token values, the online smoothing window.
    recent: VecDeque<ValueVector>,
    prev_turn_total: f64,
    turn: usize,
    below_run: usize,
}

impl<'a> Session<'a> {
    fn new(predictor: &'a dyn Predictor) -> Self {
        Session {
            inc: predictor.incremental(),
            prefix: Vec::new(),
            tokens_seen: 0,
            recent: VecDeque::with_capacity(4),
            prev_turn_total: 0.0,
            turn: 0,
            below_run: 0,
        }
    }
}

/// All per-process serve state.
pub struct ServeEngine<'a> {
    setup: &'a ServeSetup<'a>,
    p10_idx: Option<usize>,
    sessions: HashMap<String, Session<'a>>,
    ended: HashSet<String>,
}

impl<'a> ServeEngine<'a> {
    pub fn new(setup: &'a ServeSetup<'a>) -> Self {
        ServeEngine {
            setup,
            p10_idx: setup.band.and_then(|b| b.level_index(0.1)),
            sessions: HashMap::new(),
            ended: HashSet::new(),
        }
    }

    /// Process one input line; `None` means nothing to emit (a clean `end`).
    pub fn process_line(&mut self, line: &str) -> Option<String> {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return Some(error_record(format!("malformed JSON: {e}"), None)),
        };
        let dialog_id = value.get("dialog_id").and_then(|d| d.as_str()).map(str::to_owned);
        match value.get("type").and_then(|t| t.as_str()) {
            Some("utterance") => {
                let Some(id) = dialog_id else {
                    return Some(error_record("utterance event needs a dialog_id".into(), None));
                };
                let speaker: Speaker = match value
                    .get("speaker")
                    .cloned()
                    .map(serde_json::from_value)
                {
                    Some(Ok(s)) => s,
                    _ => {
                        return Some(error_record(
                            "utterance event needs a speaker of customer|agent|bot".into(),
                            Some(&id),
                        ))
                    }
                };
                let text = value.get("text").and_then(|t| t.as_str()).unwrap_or("");
                Some(self.utterance(id, speaker, text))
            }
            Some("end") => {
                let Some(id) = dialog_id else {
                    return Some(error_record("end event needs a dialog_id".into(), None));
                };
                self.sessions.remove(&id);
                self.ended.insert(id);
                None
            }
            Some(other) => Some(error_record(
                format!("unknown event type '{other}'"),
                dialog_id.as_deref(),
            )),
            None => Some(error_record("event has no type field".into(), dialog_id.as_deref())),
        }
    }

    fn utterance(&mut self, id: String, speaker: Speaker, text: &str) -> String {
        if self.ended.contains(&id) {
            return error_record(format!("dialog '{id}' already ended"), Some(&id));
        }
        let setup = self.setup;
        let session = self
            .sessions
            .entry(id.clone())
            .or_insert_with(|| Session::new(setup.predictor));

        let mut token_ids = vec![speaker.marker_id()];
        token_ids.extend(tokenize_text(text).iter().map(|w| setup.vocab.id(w)));

        for &token in &token_ids {
            if session.tokens_seen >= setup.max_len {
                break;
            }
            let frame = if let Some(inc) = session.inc.as_mut() {
                inc.push(token)
            } else {
                // Predictor without incremental support: re-run the prefix.
                session.prefix.push(token);
                setup
                    .predictor
                    .forward(&session.prefix)
                    .map(|mut frames| frames.pop().expect("non-empty forward"))
            };
            let frame = match frame {
                Ok(f) => f,
                Err(e) => return error_record(format!("forward failed: {e}"), Some(&id)),
            };
            let v = match value_frame(&frame, setup.prior, setup.calib, ValueOptions::default()) {
                Ok(v) => v,
                Err(e) => return error_record(format!("valuing failed: {e}"), Some(&id)),
            };
            if session.recent.len() == 4 {
                session.recent.pop_front();
            }
            session.recent.push_back(v);
            session.tokens_seen += 1;
        }

        // Mean over the trailing window = online smoothing at the turn's
        // last token.
        let n = session.recent.len().max(1) as f64;
        let smoothed = WireValues {
            issue: session.recent.iter().map(|v| v.issue).sum::<f64>() / n,
            action: session.recent.iter().map(|v| v.action).sum::<f64>() / n,
            norecon: session.recent.iter().map(|v| v.norecon).sum::<f64>() / n,
            total: session.recent.iter().map(|v| v.total).sum::<f64>() / n,
        };
        let reward = smoothed.total - session.prev_turn_total;
        session.prev_turn_total = smoothed.total;

        let mut bot_failure = false;
        if let (Some(band), Some(p10_idx)) = (setup.band, self.p10_idx) {
            match band.value_at(session.turn, p10_idx) {
                Some(p10) if smoothed.total < p10 => {
                    session.below_run += 1;
                    bot_failure = session.below_run >= setup.patience;
                }
                _ => session.below_run = 0,
            }
        }

        let record = TurnRecord {
            dialog_id: &id,
            turn: session.turn,
            values: smoothed,
            reward,
            bot_failure,
        };
        session.turn += 1;
        serde_json::to_string(&record).expect("turn record serializes")
    }
}

fn error_record(error: String, dialog_id: Option<&str>) -> String {
    serde_json::to_string(&ErrorRecord { error, dialog_id }).expect("error record serializes")
}

/// Drive the engine over any line-based transport.
fn pump(setup: &ServeSetup, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let mut engine = ServeEngine::new(setup);
    for line in input.lines() {
        let line = line.context("reading event stream")?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(record) = engine.process_line(&line) {
            output.write_all(record.as_bytes())?;
            output.write_all(b"\n")?;
            output.flush()?;
        }
    }
    Ok(())
}

pub fn run_stdio(setup: &ServeSetup) -> Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    pump(setup, stdin.lock(), stdout.lock())
}

/// Serve the identical protocol on a local TCP listener; each connection
/// gets its own session space. Connections are handled one at a time.
pub fn run_tcp(setup: &ServeSetup, addr: &str) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream.context("accepting connection")?;
        let reader = BufReader::new(stream.try_clone().context("cloning stream")?);
        if let Err(e) = pump(setup, reader, stream) {
            eprintln!("connection error: {e:#}");
        }
    }
    Ok(())
}
