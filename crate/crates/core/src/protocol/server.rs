use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use super::{codes, parse_request, Connection, Op, Request, Response, MAX_LINE_BYTES};
use crate::session::Engine;

struct Out<W: Write> {
    w: Mutex<W>,
}

impl<W: Write> Out<W> {
    fn line(&self, line: &str) {
        let mut w = self.w.lock().unwrap_or_else(|p| p.into_inner());
        // a vanished client is noticed by the reader at EOF
        let _ = w.write_all(line.as_bytes());
        let _ = w.write_all(b"\n");
        let _ = w.flush();
    }
}

/// Every serialized [`Response`] starts with this.
const RESPONSE_PREFIX: &str = r#"{"kind":"response""#;

enum Line {
    Text(String),
    Invalid(&'static str),
}

/// Reads one `\n`-terminated line of at most [`MAX_LINE_BYTES`]; longer
/// lines are consumed and reported as invalid. `None` at end of input.
fn read_bounded<R: BufRead>(r: &mut R, buf: &mut Vec<u8>) -> io::Result<Option<Line>> {
    buf.clear();
    let n = r.by_ref().take(MAX_LINE_BYTES as u64 + 1).read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') && buf.len() > MAX_LINE_BYTES {
        let mut sink = Vec::new();
        loop {
            sink.clear();
            let m = r.by_ref().take(1 << 16).read_until(b'\n', &mut sink)?;
            if m == 0 || sink.last() == Some(&b'\n') {
                break;
            }
        }
        return Ok(Some(Line::Invalid("line too long")));
    }
    while matches!(buf.last(), Some(b'\n' | b'\r')) {
        buf.pop();
    }
    Ok(Some(match std::str::from_utf8(buf) {
        Ok(s) => Line::Text(s.to_owned()),
        Err(_) => Line::Invalid("line is not valid UTF-8"),
    }))
}

/// Serves one connection until `reader` reaches end of input.
///
/// Requests run in order on a worker thread. While a generation is in
/// flight, `cancel` and `get_status` are answered immediately and every
/// other op is refused with `busy`.
pub fn serve_stream<R, W>(conn: Connection, mut reader: R, writer: W) -> io::Result<()>
where
    R: BufRead,
    W: Write + Send + 'static,
{
    let out = Arc::new(Out { w: Mutex::new(writer) });
    for l in conn.greeting() {
        out.line(&l);
    }
    let control = conn.control();
    let generating = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Request>();
    let worker = {
        let out = Arc::clone(&out);
        let generating = Arc::clone(&generating);
        let worker_control = control.clone();
        let mut conn = conn;
        thread::spawn(move || {
            for req in rx {
                let gen = req.op.is_generation();
                conn.handle_request(req, &mut |l| {
                    // settle before the client can see the response and send
                    // more; a request rejected before generating leaves the
                    // token armed
                    if gen && l.starts_with(RESPONSE_PREFIX) {
                        worker_control.disarm();
                        generating.store(false, Ordering::SeqCst);
                    }
                    out.line(&l)
                });
                if gen {
                    generating.store(false, Ordering::SeqCst);
                }
            }
        })
    };
    let mut buf = Vec::new();
    let result = loop {
        let line = match read_bounded(&mut reader, &mut buf) {
            Ok(Some(Line::Text(t))) => t,
            Ok(Some(Line::Invalid(why))) => {
                out.line(&Response::err(Value::Null, None, codes::PARSE, why).to_line());
                continue;
            }
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        let req = match parse_request(&line) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(resp) => {
                out.line(&resp.to_line());
                continue;
            }
        };
        match req.op {
            Op::Cancel => {
                out.line(&Response::ok(req.id, Op::Cancel, json!({ "cancelled": control.cancel() })).to_line())
            }
            Op::GetStatus => out.line(
                &Response::ok(
                    req.id,
                    Op::GetStatus,
                    serde_json::to_value(control.status()).expect("status serializes"),
                )
                .to_line(),
            ),
            op if generating.load(Ordering::SeqCst) => out.line(
                &Response::err(req.id, Some(op.as_str()), codes::BUSY, "a response is already being generated")
                    .to_line(),
            ),
            op => {
                if op.is_generation() {
                    generating.store(true, Ordering::SeqCst);
                    control.arm();
                }
                if tx.send(req).is_err() {
                    break Ok(());
                }
            }
        }
    };
    // the client is gone; stop any in-flight call before joining
    control.cancel();
    drop(tx);
    let _ = worker.join();
    result
}

/// Serves a single session over stdin and stdout.
pub fn serve_stdio(engine: Arc<Engine>) -> io::Result<()> {
    let conn = Connection::new(engine.new_session("stdio"));
    serve_stream(conn, BufReader::new(io::stdin()), io::stdout())
}

/// Listens on a Unix socket at `path`, one independent session per
/// connection. A stale socket file at `path` is replaced. The socket is
/// made owner-only.
#[cfg(unix)]
pub fn serve_unix(engine: Arc<Engine>, path: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    use std::os::unix::net::UnixListener;

    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let listener = UnixListener::bind(path)?;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))?;
    let counter = AtomicU64::new(1);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let id = format!("s{}", counter.fetch_add(1, Ordering::SeqCst));
        let engine = Arc::clone(&engine);
        thread::spawn(move || {
            let conn = Connection::new(engine.new_session(id));
            let reader = match stream.try_clone() {
                Ok(r) => BufReader::new(r),
                Err(e) => {
                    eprintln!("connection setup failed: {e}");
                    return;
                }
            };
            if let Err(e) = serve_stream(conn, reader, stream) {
                eprintln!("connection ended with error: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(not(unix))]
pub fn serve_unix(_engine: Arc<Engine>, _path: &Path) -> io::Result<()> {
    Err(io::Error::new(io::ErrorKind::Unsupported, "local sockets need a Unix platform"))
}
