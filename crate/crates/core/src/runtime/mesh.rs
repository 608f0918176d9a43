//! Point-to-point TCP mesh between ranks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{read_frame, Message};
use super::RuntimeError;

/// Rank → `host:port` listing (the endpoints file).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankEndpoints(pub BTreeMap<usize, String>);

impl RankEndpoints {
    /// Endpoints on 127.0.0.1 with ports picked by the OS.
    pub fn loopback(ranks: usize) -> Result<RankEndpoints, RuntimeError> {
        let listeners = (0..ranks)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| RuntimeError::Config(format!("cannot allocate loopback port: {e}")))?;
        let mut map = BTreeMap::new();
        for (r, l) in listeners.iter().enumerate() {
            let addr = l.local_addr().map_err(|e| RuntimeError::Config(e.to_string()))?;
            map.insert(r, addr.to_string());
        }
        Ok(RankEndpoints(map))
    }

    pub fn addr(&self, rank: usize) -> Result<SocketAddr, RuntimeError> {
        let s = self
            .0
            .get(&rank)
            .ok_or_else(|| RuntimeError::Config(format!("no endpoint for rank {rank}")))?;
        s.to_socket_addrs()
            .ok()
            .and_then(|mut a| a.next())
            .ok_or_else(|| RuntimeError::Config(format!("rank {rank}: bad endpoint {s:?}")))
    }

    /// Checks that ranks are `0..n` and no address repeats.
    pub fn check(&self) -> Result<(), RuntimeError> {
        if self.0.keys().copied().ne(0..self.0.len()) {
            return Err(RuntimeError::Config("endpoint ranks are not 0..n".into()));
        }
        let unique: BTreeSet<&String> = self.0.values().collect();
        if unique.len() != self.0.len() {
            return Err(RuntimeError::Config("duplicate endpoint address".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RankEndpoints, RuntimeError> {
        let text = fs::read_to_string(path).map_err(|e| RuntimeError::io(path, e))?;
        let eps: RankEndpoints =
            serde_json::from_str(&text).map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?;
        eps.check()?;
        Ok(eps)
    }

    pub fn write(&self, path: &Path) -> Result<(), RuntimeError> {
        fs::write(path, serde_json::to_string_pretty(self).unwrap()).map_err(|e| RuntimeError::io(path, e))
    }
}

#[derive(Default)]
struct MailState {
    frames: HashMap<(u32, u32), Message>,
    /// Peers whose connection ended, with the reason.
    closed: BTreeMap<usize, String>,
    connected: BTreeSet<usize>,
}

/// Inbound frames keyed by `(buffer, seq)`.
#[derive(Default)]
pub(crate) struct Mailbox {
    state: Mutex<MailState>,
    cv: Condvar,
}

impl Mailbox {
    fn park(&self, src: usize, msg: Message) -> Result<(), String> {
        let mut st = self.state.lock().unwrap();
        let key = (msg.buffer, msg.seq);
        if st.frames.contains_key(&key) {
            return Err(format!("duplicate frame Buff{} seq {}", msg.buffer, msg.seq));
        }
        debug_assert_eq!(msg.src as usize, src);
        st.frames.insert(key, msg);
        self.cv.notify_all();
        Ok(())
    }

    fn mark(&self, f: impl FnOnce(&mut MailState)) {
        f(&mut self.state.lock().unwrap());
        self.cv.notify_all();
    }

    /// Blocks until frame `(buffer, seq)` from `src` arrives.
    pub(crate) fn take(&self, rank: usize, buffer: u32, seq: u32, src: usize, deadline: Instant) -> Result<Message, RuntimeError> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(m) = st.frames.remove(&(buffer, seq)) {
                if m.src as usize != src {
                    return Err(RuntimeError::Protocol(format!(
                        "Buff{buffer} seq {seq} came from rank {}, expected rank {src}",
                        m.src
                    )));
                }
                return Ok(m);
            }
            if let Some(reason) = st.closed.get(&src) {
                return Err(RuntimeError::PeerUnreachable {
                    peer: src,
                    reason: format!("{reason} before Buff{buffer} (iteration {seq}) arrived"),
                });
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(RuntimeError::Timeout {
                    rank,
                    what: format!("Buff{buffer} (iteration {seq}) from rank {src}"),
                });
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }

    /// Blocks until every rank in `peers` has said hello. A peer that said
    /// hello and has since hung up still counts: its frames are parked.
    pub(crate) fn wait_connected(&self, rank: usize, peers: &BTreeSet<usize>, deadline: Instant) -> Result<(), RuntimeError> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(p) = peers
                .iter()
                .find(|p| st.closed.contains_key(p) && !st.connected.contains(p))
            {
                return Err(RuntimeError::PeerUnreachable {
                    peer: *p,
                    reason: st.closed[p].clone(),
                });
            }
            if peers.is_subset(&st.connected) {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                let missing: Vec<_> = peers.difference(&st.connected).collect();
                return Err(RuntimeError::Timeout {
                    rank,
                    what: format!("inbound connections from ranks {missing:?}"),
                });
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
    }
}

/// Accepts inbound connections and parks their frames in a mailbox.
pub(crate) struct Inbox {
    pub(crate) mailbox: Arc<Mailbox>,
    stop: Arc<AtomicBool>,
    acceptor: Option<thread::JoinHandle<()>>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
}

impl Inbox {
    pub(crate) fn bind(rank: usize, addr: SocketAddr) -> Result<Inbox, RuntimeError> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| RuntimeError::Config(format!("rank {rank}: cannot listen on {addr}: {e}")))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| RuntimeError::Config(e.to_string()))?;
        let mailbox = Arc::new(Mailbox::default());
        let stop = Arc::new(AtomicBool::new(false));
        let streams = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (mailbox, stop, streams) = (mailbox.clone(), stop.clone(), streams.clone());
            thread::Builder::new()
                .name(format!("accept-{rank}"))
                .spawn(move || accept_loop(rank, listener, mailbox, stop, streams))
                .map_err(|e| RuntimeError::Config(e.to_string()))?
        };
        Ok(Inbox {
            mailbox,
            stop,
            acceptor: Some(acceptor),
            streams,
        })
    }
}

impl Drop for Inbox {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for s in self.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

fn accept_loop(
    rank: usize,
    listener: TcpListener,
    mailbox: Arc<Mailbox>,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(clone) = stream.try_clone() {
                    streams.lock().unwrap().push(clone);
                }
                let mailbox = mailbox.clone();
                let _ = thread::Builder::new()
                    .name(format!("recv-{rank}"))
                    .spawn(move || reader(rank, stream, mailbox));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => {
                log::warn!("rank {rank}: accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn reader(rank: usize, stream: TcpStream, mailbox: Arc<Mailbox>) {
    let mut r = BufReader::with_capacity(1 << 16, stream);
    let src = match read_frame(&mut r) {
        Ok(Some(h)) if h.is_hello() && h.dst as usize == rank => h.src as usize,
        Ok(Some(h)) => {
            log::warn!("rank {rank}: connection opened without a valid hello (src {}, dst {})", h.src, h.dst);
            return;
        }
        Ok(None) => return,
        Err(e) => {
            log::warn!("rank {rank}: bad hello: {e}");
            return;
        }
    };
    mailbox.mark(|st| {
        st.connected.insert(src);
    });
    let reason = loop {
        match read_frame(&mut r) {
            Ok(None) => break "connection closed".to_string(),
            Ok(Some(m)) if m.is_hello() || m.src as usize != src || m.dst as usize != rank => {
                break format!("unexpected frame src {} dst {} Buff{}", m.src, m.dst, m.buffer)
            }
            Ok(Some(m)) => {
                if let Err(e) = mailbox.park(src, m) {
                    break e;
                }
            }
            Err(e) => break e.to_string(),
        }
    };
    mailbox.mark(|st| {
        st.closed.insert(src, reason);
    });
}

#[derive(Default)]
struct Pending {
    count: usize,
    failed: Option<String>,
}

struct Channel {
    tx: Option<mpsc::Sender<Vec<u8>>>,
    pending: Arc<(Mutex<Pending>, Condvar)>,
    writer: Option<thread::JoinHandle<()>>,
}

/// One writer thread per destination rank.
pub(crate) struct Outbox {
    rank: usize,
    channels: BTreeMap<usize, Channel>,
}

impl Outbox {
    /// Connects to every rank in `peers`, retrying until `connect_timeout`.
    pub(crate) fn connect(
        rank: usize,
        peers: &BTreeSet<usize>,
        endpoints: &RankEndpoints,
        connect_timeout: Duration,
    ) -> Result<Outbox, RuntimeError> {
        let mut channels = BTreeMap::new();
        for &peer in peers {
            let addr = endpoints.addr(peer)?;
            let deadline = Instant::now() + connect_timeout;
            let stream = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => {
                        return Err(RuntimeError::PeerUnreachable {
                            peer,
                            reason: format!("connect to {addr}: {e}"),
                        })
                    }
                    Err(_) => thread::sleep(Duration::from_millis(10)),
                }
            };
            let _ = stream.set_nodelay(true);
            let mut w = BufWriter::with_capacity(1 << 16, stream);
            w.write_all(&Message::hello(rank, peer).encode())
                .and_then(|_| w.flush())
                .map_err(|e| RuntimeError::PeerUnreachable {
                    peer,
                    reason: format!("hello: {e}"),
                })?;
            let (tx, rx) = mpsc::channel::<Vec<u8>>();
            let pending: Arc<(Mutex<Pending>, Condvar)> = Arc::default();
            let p = pending.clone();
            let writer = thread::Builder::new()
                .name(format!("send-{rank}-{peer}"))
                .spawn(move || {
                    for frame in rx {
                        let res = w.write_all(&frame).and_then(|_| w.flush());
                        let (lock, cv) = &*p;
                        let mut st = lock.lock().unwrap();
                        st.count -= 1;
                        if let Err(e) = res {
                            st.failed.get_or_insert_with(|| e.to_string());
                        }
                        cv.notify_all();
                    }
                    if let Ok(s) = w.into_inner() {
                        let _ = s.shutdown(Shutdown::Write);
                    }
                })
                .map_err(|e| RuntimeError::Config(e.to_string()))?;
            channels.insert(
                peer,
                Channel {
                    tx: Some(tx),
                    pending,
                    writer: Some(writer),
                },
            );
        }
        Ok(Outbox { rank, channels })
    }

    /// Queues a frame for `peer` and returns immediately.
    pub(crate) fn send(&self, peer: usize, frame: Vec<u8>) -> Result<(), RuntimeError> {
        let ch = self.channels.get(&peer).ok_or_else(|| RuntimeError::PeerUnreachable {
            peer,
            reason: format!("rank {} has no connection to it", self.rank),
        })?;
        {
            let mut st = ch.pending.0.lock().unwrap();
            if let Some(f) = &st.failed {
                return Err(RuntimeError::PeerUnreachable { peer, reason: f.clone() });
            }
            st.count += 1;
        }
        ch.tx
            .as_ref()
            .expect("channel open")
            .send(frame)
            .map_err(|_| RuntimeError::PeerUnreachable {
                peer,
                reason: "writer thread exited".into(),
            })
    }

    /// Blocks until every queued frame has been written to its socket.
    pub(crate) fn flush(&self, deadline: Instant) -> Result<(), RuntimeError> {
        for (&peer, ch) in &self.channels {
            let (lock, cv) = &*ch.pending;
            let mut st = lock.lock().unwrap();
            loop {
                if let Some(f) = &st.failed {
                    return Err(RuntimeError::PeerUnreachable { peer, reason: f.clone() });
                }
                if st.count == 0 {
                    break;
                }
                let now = Instant::now();
                if now >= deadline {
                    return Err(RuntimeError::Timeout {
                        rank: self.rank,
                        what: format!("sends to rank {peer} to flush"),
                    });
                }
                st = cv.wait_timeout(st, deadline - now).unwrap().0;
            }
        }
        Ok(())
    }
}

impl Drop for Outbox {
    fn drop(&mut self) {
        for ch in self.channels.values_mut() {
            ch.tx.take();
        }
        for ch in self.channels.values_mut() {
            if let Some(h) = ch.writer.take() {
                let _ = h.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorSpec;
    use crate::runtime::Tensor;
    use crate::split::BufferId;

    #[test]
    fn endpoints_json() {
        let eps = RankEndpoints::loopback(3).unwrap();
        eps.check().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eps.json");
        eps.write(&p).unwrap();
        assert_eq!(RankEndpoints::read(&p).unwrap(), eps);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"0\": \"127.0.0.1:"));
        let mut dup = eps.clone();
        dup.0.insert(1, eps.0[&0].clone());
        assert!(dup.check().is_err());
    }

    #[test]
    fn frames_arrive_keyed_by_buffer_and_seq() {
        let eps = RankEndpoints::loopback(2).unwrap();
        let inbox = Inbox::bind(1, eps.addr(1).unwrap()).unwrap();
        let out = Outbox::connect(0, &BTreeSet::from([1]), &eps, Duration::from_secs(5)).unwrap();
        let deadline = Instant::now() + Duration::from_secs(5);
        inbox.mailbox.wait_connected(1, &BTreeSet::from([0]), deadline).unwrap();
        for seq in 0..3 {
            let t = Tensor::new(TensorSpec::new([1, 2]), vec![seq as f32, 1.0]).unwrap();
            out.send(1, Message::data(0, 1, BufferId(5), seq, &t).encode()).unwrap();
        }
        out.flush(deadline).unwrap();
        let m2 = inbox.mailbox.take(1, 5, 2, 0, deadline).unwrap();
        assert_eq!(m2.payload, [2.0, 1.0]);
        let m0 = inbox.mailbox.take(1, 5, 0, 0, deadline).unwrap();
        assert_eq!(m0.payload, [0.0, 1.0]);
        drop(out);
        inbox.mailbox.take(1, 5, 1, 0, deadline).unwrap();
        let err = inbox.mailbox.take(1, 5, 3, 0, deadline).unwrap_err();
        assert!(matches!(err, RuntimeError::PeerUnreachable { peer: 0, .. }), "{err}");
    }

    #[test]
    fn early_hangup_after_hello_still_connects() {
        let mb = Mailbox::default();
        {
            let mut st = mb.state.lock().unwrap();
            st.connected.insert(2);
            st.closed.insert(2, "connection closed".into());
        }
        let soon = Instant::now() + Duration::from_millis(50);
        mb.wait_connected(0, &BTreeSet::from([2]), soon).unwrap();
        let err = mb.wait_connected(0, &BTreeSet::from([2, 3]), soon).unwrap_err();
        assert!(matches!(err, RuntimeError::Timeout { .. }), "{err}");
    }

    #[test]
    fn take_times_out() {
        let mb = Mailbox::default();
        let err = mb.take(0, 1, 0, 1, Instant::now() + Duration::from_millis(20)).unwrap_err();
        assert!(matches!(err, RuntimeError::Timeout { .. }));
    }

    #[test]
    fn unreachable_peer() {
        let eps = RankEndpoints::loopback(2).unwrap();
        let err = Outbox::connect(0, &BTreeSet::from([1]), &eps, Duration::from_millis(50)).err().unwrap();
        assert!(matches!(err, RuntimeError::PeerUnreachable { peer: 1, .. }));
    }
}
