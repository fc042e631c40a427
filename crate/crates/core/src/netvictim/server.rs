use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{ErrorCode, Request, Response};
use crate::error::{Error, Result};
use crate::numkit::MlpModel;
use crate::victim::{sample_hash, QueryBudget, QueryRecord};

/// Request ids remembered per connection for retry deduplication.
pub const DEDUP_WINDOW: usize = 1024;

const POLL: Duration = Duration::from_millis(100);

struct Ledger {
    budget: QueryBudget,
    log: Vec<QueryRecord>,
}

struct Shared {
    model: MlpModel,
    ledger: Mutex<Ledger>,
    stop: AtomicBool,
    log_path: Option<PathBuf>,
}

impl Shared {
    fn ledger(&self) -> MutexGuard<'_, Ledger> {
        self.ledger.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn handle(&self, req: Request) -> Response {
        match req {
            Request::Budget { id } => Response::Remaining {
                id,
                remaining: self.ledger().budget.remaining() as u64,
            },
            Request::Predict { id, x } => {
                let label = match self.model.predict_label(&x) {
                    Ok(l) => l,
                    Err(e) => return Response::error(id, ErrorCode::BadInput, e.to_string()),
                };
                let mut ledger = self.ledger();
                if ledger.budget.try_spend(1).is_err() {
                    return Response::error(id, ErrorCode::BudgetExhausted, "budget exhausted");
                }
                ledger.log.push(QueryRecord {
                    sample_hash: sample_hash(&x),
                    label,
                });
                Response::Label {
                    id,
                    label: label as u64,
                }
            }
        }
    }
}

/// Running victim service. Dropping the handle without calling
/// [`shutdown`](Self::shutdown) leaves the listener thread running.
pub struct ServiceHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn remaining(&self) -> usize {
        self.shared.ledger().budget.remaining()
    }

    pub fn spent(&self) -> usize {
        self.shared.ledger().budget.spent()
    }

    pub fn query_log(&self) -> Vec<QueryRecord> {
        self.shared.ledger().log.clone()
    }

    /// Stops accepting connections, joins the listener and writes the query
    /// log (one `"<hash hex> <label>"` line per answered predict).
    pub fn shutdown(mut self) -> Result<()> {
        self.shared.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(500));
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Some(path) = &self.shared.log_path {
            let mut w = BufWriter::new(File::create(path)?);
            for rec in &self.shared.ledger().log {
                writeln!(w, "{:016x} {}", rec.sample_hash, rec.label)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Serves `model` as a hard-label API with a shared budget of `budget` predicts.
pub fn serve(
    model: MlpModel,
    budget: usize,
    bind: impl ToSocketAddrs,
    log_path: Option<PathBuf>,
) -> Result<ServiceHandle> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        model,
        ledger: Mutex::new(Ledger {
            budget: QueryBudget::new(budget),
            log: Vec::new(),
        }),
        stop: AtomicBool::new(false),
        log_path,
    });
    let acceptor = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("victim-accept".into())
            .spawn(move || accept_loop(listener, shared))
            .map_err(Error::Io)?
    };
    log::info!("victim service listening on {addr}");
    Ok(ServiceHandle {
        addr,
        shared,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let shared = Arc::clone(&shared);
        workers.retain(|w| !w.is_finished());
        workers.push(std::thread::spawn(move || {
            if let Err(e) = connection(stream, &shared) {
                log::debug!("connection closed: {e}");
            }
        }));
    }
    for w in workers {
        let _ = w.join();
    }
}

fn connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut reader = BufReader::new(stream);
    let mut seen: HashMap<u64, String> = HashMap::new();
    let mut order: VecDeque<u64> = VecDeque::new();
    let mut buf = Vec::new();

    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.last() != Some(&b'\n') => return Ok(()),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if shared.stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        let line = String::from_utf8_lossy(&buf).trim().to_string();
        buf.clear();
        if line.is_empty() {
            continue;
        }
        let reply = match Request::parse(&line) {
            Err((id, msg)) => Response::error(id, ErrorCode::BadInput, msg).to_line(),
            Ok(req) => {
                let id = req.id();
                if let Some(cached) = seen.get(&id) {
                    cached.clone()
                } else {
                    let out = shared.handle(req).to_line();
                    seen.insert(id, out.clone());
                    order.push_back(id);
                    if order.len() > DEDUP_WINDOW {
                        if let Some(old) = order.pop_front() {
                            seen.remove(&old);
                        }
                    }
                    out
                }
            }
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}
