//! Live sessions over a websocket.
//!
//! A client connects to `/ws` and streams ingest messages as text frames.
//! A reader task drops each parsed frame into a [`LatestSlot`]; the tick
//! loop takes whatever is newest every 1/30 s, runs the pipeline and sends
//! one telemetry message back. One session runs at a time.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use handpilot::command_fsm::CommandFsm;
use handpilot::drone_sim::TICK_HZ;
use handpilot::handpose::HandFrame;
use handpilot::session::{EndReason, IngestMessage, LatestSlot, Pipeline, ReplayWriter, PROTOCOL_VERSION};
use serde_json::json;
use tokio::sync::Notify;

use crate::cli::{load_pipeline, write_run_record, CliError, Loaded, ServeArgs};

struct Ctx {
    loaded: Loaded,
    args: ServeArgs,
    busy: AtomicBool,
    stop: Notify,
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let loaded = load_pipeline(&args.pipeline)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    rt.block_on(run_server(Arc::new(Ctx {
        loaded,
        args,
        busy: AtomicBool::new(false),
        stop: Notify::new(),
    })))
}

async fn run_server(ctx: Arc<Ctx>) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(&ctx.args.addr)
        .await
        .map_err(|e| CliError::Runtime(format!("bind {}: {e}", ctx.args.addr)))?;
    let addr = listener.local_addr().map_err(CliError::runtime)?;
    println!("listening on {addr}");
    tracing::info!(%addr, "websocket at /ws");

    let app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(|| async { "ok" }))
        .route("/track", get(track_handler))
        .with_state(ctx.clone());
    let stop = ctx.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = stop.stop.notified() => {}
            }
        })
        .await
        .map_err(CliError::runtime)
}

async fn track_handler(State(ctx): State<Arc<Ctx>>) -> Json<serde_json::Value> {
    let t = &ctx.loaded.track;
    let gates: Vec<_> = t
        .gates
        .iter()
        .map(|g| {
            json!({
                "index": g.index,
                "center": [g.center.x, g.center.y, g.center.z],
                "normal": [g.normal.x, g.normal.y, g.normal.z],
                "radius": g.radius,
            })
        })
        .collect();
    Json(json!({
        "v": PROTOCOL_VERSION,
        "start": [t.start.x, t.start.y, t.start.z],
        "start_yaw": t.start_yaw,
        "gates": gates,
        "sha256": t.sha256(),
    }))
}

async fn ws_handler(ws: WebSocketUpgrade, State(ctx): State<Arc<Ctx>>) -> Response {
    if ctx.busy.swap(true, Ordering::SeqCst) {
        return (StatusCode::CONFLICT, "a session is already running").into_response();
    }
    ws.on_upgrade(move |socket| async move {
        if let Err(e) = session(socket, &ctx).await {
            tracing::error!("session failed: {e:?}");
        }
        ctx.busy.store(false, Ordering::SeqCst);
        if ctx.args.once {
            ctx.stop.notify_one();
        }
    })
}

type FrameRecorder = ReplayWriter<BufWriter<std::fs::File>>;

/// A tick with no new frame reuses the last one while it is this fresh, so
/// network jitter around a tick boundary does not read as a vanished hand.
pub const FRAME_HOLD: Duration = Duration::from_millis(50);

async fn session(socket: WebSocket, ctx: &Ctx) -> Result<(), CliError> {
    let l = &ctx.loaded;
    let mut pipeline = Pipeline::new(l.classifier.clone(), CommandFsm::new(l.table.clone()), &l.track, l.cfg);
    let (mut tx, mut rx) = socket.split();
    let slot: Arc<LatestSlot<(HandFrame, Instant)>> = Arc::new(LatestSlot::new());
    let (err_tx, mut err_rx) = tokio::sync::mpsc::channel::<String>(16);

    let mut recorder: Option<FrameRecorder> = match &ctx.args.record_frames {
        Some(p) => {
            let f = OpenOptions::new().create(true).append(true).open(p).map_err(CliError::runtime)?;
            Some(ReplayWriter::new(BufWriter::new(f)))
        }
        None => None,
    };

    let reader_slot = slot.clone();
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = rx.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                _ => continue,
            };
            let received = Instant::now();
            match IngestMessage::parse(&text).and_then(|m| Ok((m.to_frame()?, m))) {
                Ok((frame, m)) => {
                    if let Some(w) = recorder.as_mut() {
                        if let Err(e) = w.write(&m) {
                            tracing::warn!("frame recording stopped: {e}");
                            recorder = None;
                        }
                    }
                    reader_slot.put((frame, received));
                }
                Err(e) => {
                    let _ = err_tx.try_send(e.to_string());
                }
            }
        }
        reader_slot.close();
        if let Some(w) = recorder {
            let _ = w.finish();
        }
    });

    let mut interval = tokio::time::interval(Duration::from_secs(1) / TICK_HZ);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut client_gone = false;
    let mut last: Option<(HandFrame, Instant)> = None;
    loop {
        interval.tick().await;
        while let Ok(e) = err_rx.try_recv() {
            let msg = json!({"v": PROTOCOL_VERSION, "type": "error", "msg": e}).to_string();
            if tx.send(Message::Text(msg.into())).await.is_err() {
                client_gone = true;
            }
        }
        let closed = slot.is_closed();
        let (item, dropped) = slot.take();
        pipeline.note_dropped(dropped);
        let had_frame = item.is_some();
        let item = match item {
            Some(x) => {
                last = Some(x.clone());
                Some(x)
            }
            None => last.take().filter(|(_, at)| !closed && at.elapsed() < FRAME_HOLD),
        };
        let tel = pipeline
            .tick(item.as_ref().map(|(f, _)| f), item.as_ref().map(|(_, t)| *t))
            .map_err(CliError::runtime)?;
        if !client_gone && tx.send(Message::Text(tel.to_line().into())).await.is_err() {
            client_gone = true;
        }
        if pipeline.ended().is_some() || (closed && !had_frame) || client_gone {
            break;
        }
    }

    let report = pipeline.finish(EndReason::IngestClosed);
    tracing::info!(
        end = ?report.end,
        ticks = report.ticks,
        dropped = report.frames_dropped,
        max_latency_ms = report.max_latency.as_secs_f64() * 1e3,
        "session finished"
    );
    if let Some(p) = &ctx.args.record {
        write_run_record(p, &report, l)?;
    }
    if !client_gone {
        let end = json!({
            "v": PROTOCOL_VERSION,
            "type": "end",
            "reason": report.end,
            "metrics": report.record.metrics,
        });
        let _ = tx.send(Message::Text(end.to_string().into())).await;
        let _ = tx.send(Message::Close(None)).await;
    }
    reader.abort();
    let _ = reader.await;
    Ok(())
}
