use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{ErrorCode, Request, Response};
use crate::datapool::{PoolState, SampleStatus};
use crate::error::{Error, Result};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// Client for the victim service. Requests carry increasing ids; a request
/// that hits a transport failure is resent with the same id.
pub struct RemoteVictim {
    endpoint: String,
    conn: Option<Conn>,
    next_id: u64,
    retries: usize,
    timeout: Duration,
}

impl RemoteVictim {
    pub fn connect(endpoint: impl Into<String>) -> Result<Self> {
        let mut c = Self {
            endpoint: endpoint.into(),
            conn: None,
            next_id: 1,
            retries: 3,
            timeout: Duration::from_secs(10),
        };
        c.ensure_conn()?;
        Ok(c)
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn ensure_conn(&mut self) -> Result<&mut Conn> {
        if self.conn.is_none() {
            let addr = self
                .endpoint
                .to_socket_addrs()
                .map_err(|e| Error::RemoteUnavailable(format!("{}: {e}", self.endpoint)))?
                .next()
                .ok_or_else(|| Error::RemoteUnavailable(format!("{}: no address", self.endpoint)))?;
            let stream = TcpStream::connect_timeout(&addr, self.timeout)
                .map_err(|e| Error::RemoteUnavailable(format!("{}: {e}", self.endpoint)))?;
            stream.set_read_timeout(Some(self.timeout))?;
            stream.set_nodelay(true)?;
            self.conn = Some(Conn {
                reader: BufReader::new(stream.try_clone()?),
                writer: BufWriter::new(stream),
            });
        }
        Ok(self.conn.as_mut().expect("connection just established"))
    }

    fn round_trip(&mut self, line: &str) -> std::io::Result<String> {
        let conn = self
            .ensure_conn()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::NotConnected, e.to_string()))?;
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.write_all(b"\n")?;
        conn.writer.flush()?;
        let mut reply = String::new();
        if conn.reader.read_line(&mut reply)? == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        Ok(reply)
    }

    /// Sends one request, retrying transport failures with the same id.
    pub fn call(&mut self, req: &Request) -> Result<Response> {
        let line = req.to_line();
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            match self.round_trip(&line) {
                Ok(reply) => {
                    let resp = Response::parse(reply.trim())
                        .map_err(|e| Error::RemoteInternal(format!("unparseable response: {e}")))?;
                    if resp.id() != req.id() {
                        return Err(Error::RemoteInternal(format!(
                            "response id {} does not echo request id {}",
                            resp.id(),
                            req.id()
                        )));
                    }
                    return Ok(resp);
                }
                Err(e) => {
                    log::debug!("attempt {attempt} to {} failed: {e}", self.endpoint);
                    last_err = e.to_string();
                    self.conn = None;
                }
            }
        }
        Err(Error::RemoteUnavailable(format!(
            "{} after {} attempts: {last_err}",
            self.endpoint,
            self.retries + 1
        )))
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn remaining(&mut self) -> Result<usize> {
        let id = self.fresh_id();
        match self.call(&Request::Budget { id })? {
            Response::Remaining { remaining, .. } => Ok(remaining as usize),
            other => Err(map_unexpected(other)),
        }
    }

    pub fn predict(&mut self, x: &[f64]) -> Result<usize> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature row contains non-finite values"));
        }
        let id = self.fresh_id();
        match self.call(&Request::Predict { id, x: x.to_vec() })? {
            Response::Label { label, .. } => Ok(label as usize),
            other => Err(map_unexpected(other)),
        }
    }

    /// Labels all rows or none: the service's remaining budget is checked
    /// first so an oversized request never spends anything.
    pub fn labels(&mut self, rows: &[&[f64]]) -> Result<Vec<usize>> {
        let remaining = self.remaining()?;
        if rows.len() > remaining {
            return Err(Error::BudgetExhausted {
                requested: rows.len(),
                remaining,
            });
        }
        rows.iter().map(|x| self.predict(x)).collect()
    }
}

fn map_unexpected(resp: Response) -> Error {
    match resp {
        Response::Error { code, error, .. } => match code {
            ErrorCode::BudgetExhausted => Error::BudgetExhausted {
                requested: 1,
                remaining: 0,
            },
            ErrorCode::BadInput => Error::RejectedInput(error),
            ErrorCode::Internal => Error::RemoteInternal(error),
        },
        other => Error::RemoteInternal(format!("unexpected response {}", other.to_line())),
    }
}

/// Remote counterpart of `VictimOracle::query_labels`: labels unlabeled pool
/// samples through the service and marks them queried.
pub fn remote_query(
    client: &mut RemoteVictim,
    indices: &[usize],
    pool: &mut PoolState,
) -> Result<BTreeMap<usize, usize>> {
    pool.check_unlabeled(indices)?;
    let rows: Vec<&[f64]> = indices.iter().map(|&i| pool.dataset().row(i)).collect();
    let labels = client.labels(&rows)?;
    let map: BTreeMap<usize, usize> = indices.iter().copied().zip(labels).collect();
    pool.assign(&map, SampleStatus::Queried)?;
    Ok(map)
}
