//! Gate-pass detection, race metrics and the run record file.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::json;

use super::{Gate, Track};
use crate::handpose::{Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub position: Vec3,
    pub attitude: Quat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateEvent {
    pub index: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunMetrics {
    pub finished: bool,
    pub gates_passed: usize,
    /// Seconds from the first sample to the last gate (or last sample when
    /// unfinished).
    pub completion_time: f64,
    pub path_length: f64,
    pub average_velocity: f64,
}

impl RunMetrics {
    fn new(finished: bool, gates_passed: usize, completion_time: f64, path_length: f64) -> Self {
        RunMetrics {
            finished,
            gates_passed,
            completion_time,
            path_length,
            average_velocity: if completion_time > 0.0 {
                path_length / completion_time
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub samples: Vec<TrajectorySample>,
    pub gate_events: Vec<GateEvent>,
    pub metrics: RunMetrics,
}

/// Fraction along `p0 -> p1` where the segment crosses the gate disc in the
/// normal direction, if it does. The start must lie strictly behind the
/// plane so a sample resting on the plane is not counted twice.
pub fn check_gate_pass(p0: &Vec3, p1: &Vec3, gate: &Gate) -> Option<f64> {
    let d0 = (p0 - gate.center).dot(&gate.normal);
    let d1 = (p1 - gate.center).dot(&gate.normal);
    if !(d0 < 0.0 && d1 >= 0.0) {
        return None;
    }
    let s = d0 / (d0 - d1);
    let hit = p0 + (p1 - p0) * s;
    ((hit - gate.center).norm() <= gate.radius).then_some(s)
}

/// Incremental scorer: feed samples in time order.
#[derive(Debug, Clone)]
pub struct RaceScorer {
    track: Track,
    start: Option<f64>,
    last: Option<(f64, Vec3)>,
    path: f64,
    events: Vec<GateEvent>,
    finish: Option<(f64, f64)>,
}

impl RaceScorer {
    pub fn new(track: &Track) -> Self {
        RaceScorer {
            track: track.clone(),
            start: None,
            last: None,
            path: 0.0,
            events: Vec::new(),
            finish: if track.gates.is_empty() { Some((0.0, 0.0)) } else { None },
        }
    }

    pub fn events(&self) -> &[GateEvent] {
        &self.events
    }

    pub fn finished(&self) -> bool {
        self.finish.is_some()
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn next_gate(&self) -> Option<&Gate> {
        self.track.gates.get(self.events.len())
    }

    /// Returns how many gates this sample's segment passed.
    pub fn push(&mut self, time: f64, position: Vec3) -> usize {
        let Some((t0, p0)) = self.last.replace((time, position)) else {
            self.start = Some(time);
            return 0;
        };
        if self.finish.is_some() {
            return 0;
        }
        let len = (position - p0).norm();
        let before = self.events.len();
        let mut s_min = 0.0;
        while let Some(gate) = self.next_gate() {
            match check_gate_pass(&p0, &position, gate) {
                Some(s) if s >= s_min => {
                    let t = t0 + s * (time - t0);
                    self.events.push(GateEvent {
                        index: gate.index,
                        time: t,
                    });
                    s_min = s;
                    if self.events.len() == self.track.gates.len() {
                        let start = self.start.unwrap_or(t0);
                        self.finish = Some((t - start, self.path + s * len));
                        break;
                    }
                }
                _ => break,
            }
        }
        if self.finish.is_none() {
            self.path += len;
        }
        self.events.len() - before
    }

    pub fn metrics(&self) -> RunMetrics {
        match self.finish {
            Some((time, path)) => RunMetrics::new(true, self.events.len(), time, path),
            None => {
                let time = match (self.start, self.last) {
                    (Some(s), Some((t, _))) => t - s,
                    _ => 0.0,
                };
                RunMetrics::new(false, self.events.len(), time, self.path)
            }
        }
    }
}

/// Gates count only in index order; a crossing of a later gate before the
/// earlier ones is ignored.
pub fn score_run(samples: Vec<TrajectorySample>, track: &Track) -> RunRecord {
    let mut scorer = RaceScorer::new(track);
    for s in &samples {
        scorer.push(s.time, s.position);
    }
    RunRecord {
        gate_events: scorer.events().to_vec(),
        metrics: scorer.metrics(),
        samples,
    }
}

/// Per-run mean of the finished runs' metrics.
pub fn mean_metrics(runs: &[RunMetrics]) -> Option<RunMetrics> {
    let done: Vec<&RunMetrics> = runs.iter().filter(|m| m.finished).collect();
    if done.is_empty() {
        return None;
    }
    let n = done.len() as f64;
    Some(RunMetrics {
        finished: true,
        gates_passed: done.iter().map(|m| m.gates_passed).sum::<usize>() / done.len(),
        completion_time: done.iter().map(|m| m.completion_time).sum::<f64>() / n,
        path_length: done.iter().map(|m| m.path_length).sum::<f64>() / n,
        average_velocity: done.iter().map(|m| m.average_velocity).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordHeader {
    pub track_sha256: String,
    pub config: serde_json::Value,
}

/// One JSON object per line: header, samples, gate events, metrics.
pub fn write_record<W: Write>(record: &RunRecord, header: &RecordHeader, mut w: W) -> io::Result<()> {
    let mut line = |v: serde_json::Value| -> io::Result<()> {
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")
    };
    line(json!({"type": "header", "v": 1, "track_sha256": header.track_sha256, "config": header.config}))?;
    for s in &record.samples {
        let (p, q) = (s.position, s.attitude);
        line(json!({"type": "sample", "t": s.time, "p": [p.x, p.y, p.z], "q": [q.w, q.x, q.y, q.z]}))?;
    }
    for e in &record.gate_events {
        line(json!({"type": "gate", "index": e.index, "t": e.time}))?;
    }
    line(json!({"type": "metrics", "metrics": record.metrics}))?;
    w.flush()
}
