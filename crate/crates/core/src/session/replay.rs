//! Line-delimited landmark logs and the replay driver.

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use super::{tick_time, EndReason, IngestMessage, Pipeline, SessionError, SessionReport, TelemetryMessage};
use crate::drone_sim::TICK_HZ;

/// Reads a replay log. Blank lines are skipped; anything else must be a
/// valid v1 message.
pub fn read_replay<R: BufRead>(r: R) -> Result<Vec<IngestMessage>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = IngestMessage::parse(&line).map_err(|e| SessionError::ReplayFormat {
            line: i + 1,
            msg: match e {
                SessionError::BadMessage(m) => m,
                other => other.to_string(),
            },
        })?;
        out.push(msg);
    }
    Ok(out)
}

pub struct ReplayWriter<W: Write> {
    w: W,
    count: usize,
}

impl<W: Write> ReplayWriter<W> {
    pub fn new(w: W) -> Self {
        ReplayWriter { w, count: 0 }
    }

    pub fn write(&mut self, msg: &IngestMessage) -> io::Result<()> {
        self.w.write_all(msg.to_line().as_bytes())?;
        self.w.write_all(b"\n")?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> io::Result<usize> {
        self.w.flush()?;
        Ok(self.count)
    }
}

/// Writes every message to `path`, one per line, and returns how many.
pub fn record_stream<I>(source: I, path: &Path) -> io::Result<usize>
where
    I: IntoIterator<Item = IngestMessage>,
{
    let mut w = ReplayWriter::new(BufWriter::new(File::create(path)?));
    for msg in source {
        w.write(&msg)?;
    }
    w.finish()
}

/// Replays as fast as possible.
pub fn replay_session(frames: &[IngestMessage], pipeline: Pipeline) -> Result<SessionReport, SessionError> {
    replay_session_with(frames, pipeline, false, |_| {})
}

/// Drives `pipeline` from a log. Tick `n` fires at `t0 + n / 30` in log time
/// and takes the newest frame stamped at or before it; older ones are
/// dropped. Ticks without a frame still run. After the last frame one more
/// tick runs with no hand, so a flight cut off mid-air ends hovering. With
/// `realtime` the ticks are paced to the wall clock.
pub fn replay_session_with(
    frames: &[IngestMessage],
    mut pipeline: Pipeline,
    realtime: bool,
    mut on_tick: impl FnMut(&TelemetryMessage),
) -> Result<SessionReport, SessionError> {
    let Some(first) = frames.first() else {
        return Ok(pipeline.finish(EndReason::IngestClosed));
    };
    let t0 = first.t;
    let start = Instant::now();
    let period = Duration::from_secs(1) / TICK_HZ;
    let mut i = 0;
    let mut n = 0u64;
    let pace = |n: u64| {
        if realtime {
            let due = start + period * n as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    };
    while i < frames.len() {
        let due = tick_time(t0, n);
        let mut newest = None;
        let mut dropped = 0;
        while i < frames.len() && frames[i].t <= due {
            if newest.replace(&frames[i]).is_some() {
                dropped += 1;
            }
            i += 1;
        }
        pipeline.note_dropped(dropped);
        let frame = newest.map(IngestMessage::to_frame).transpose()?;
        pace(n);
        let received = frame.as_ref().map(|_| Instant::now());
        on_tick(&pipeline.tick(frame.as_ref(), received)?);
        n += 1;
        if pipeline.ended().is_some() {
            return Ok(pipeline.finish(EndReason::IngestClosed));
        }
    }
    pace(n);
    on_tick(&pipeline.tick(None, None)?);
    Ok(pipeline.finish(EndReason::IngestClosed))
}
