//! Rank-to-rank message delivery.
//!
//! [`Endpoint`] owns sequence numbering and validation; the byte movement is
//! delegated to a [`FrameIo`]: crossbeam channels between threads, or TCP on
//! loopback with the master process relaying worker-to-worker frames.

use super::envelope::{Envelope, Message, WireError, FRAME_HEADER};
use crossbeam_channel::{unbounded, Receiver, Sender};
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("rank {0} is gone")]
    PeerGone(u32),
    #[error("no rank {0}")]
    UnknownRank(u32),
    #[error("frame addressed to rank {got} arrived at rank {me}")]
    Misrouted { me: u32, got: u32 },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

/// What a rank's inbox can deliver.
pub enum Inbound {
    /// A frame body (without its length prefix).
    Frame(Vec<u8>),
    Gone(u32),
}

pub trait FrameIo: Send {
    /// Sends a full frame (with length prefix) to `to`.
    fn send_frame(&mut self, to: u32, frame: Vec<u8>) -> Result<(), TransportError>;
    fn recv_inbound(&mut self, timeout: Duration) -> Option<Inbound>;
}

/// One rank's view of the network.
pub struct Endpoint {
    rank: u32,
    size: u32,
    io: Box<dyn FrameIo>,
    next_out: HashMap<u32, u64>,
    last_in: HashMap<u32, u64>,
    bytes_sent: u64,
}

impl Endpoint {
    pub fn new(rank: u32, size: u32, io: Box<dyn FrameIo>) -> Self {
        Endpoint {
            rank,
            size,
            io,
            next_out: HashMap::new(),
            last_in: HashMap::new(),
            bytes_sent: 0,
        }
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    /// Number of ranks, master included.
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn send(&mut self, to: u32, msg: Message) -> Result<(), TransportError> {
        if to >= self.size {
            return Err(TransportError::UnknownRank(to));
        }
        let seq = self.next_out.entry(to).or_insert(1);
        let env = Envelope {
            sender: self.rank,
            receiver: to,
            seq: *seq,
            msg,
        };
        *seq += 1;
        let frame = env.encode();
        self.bytes_sent += frame.len() as u64;
        self.io.send_frame(to, frame)
    }

    /// Next envelope, or `None` once `timeout` passes without traffic.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, TransportError> {
        match self.io.recv_inbound(timeout) {
            None => Ok(None),
            Some(Inbound::Gone(r)) => Err(TransportError::PeerGone(r)),
            Some(Inbound::Frame(body)) => {
                let env = Envelope::decode(&body)?;
                if env.receiver != self.rank {
                    return Err(TransportError::Misrouted {
                        me: self.rank,
                        got: env.receiver,
                    });
                }
                let last = self.last_in.entry(env.sender).or_insert(0);
                if env.seq <= *last {
                    return Err(WireError::Sequence {
                        sender: env.sender,
                        expected: *last + 1,
                        got: env.seq,
                    }
                    .into());
                }
                *last = env.seq;
                Ok(Some(env))
            }
        }
    }
}

struct ChannelIo {
    rank: u32,
    peers: Vec<Sender<Inbound>>,
    inbox: Receiver<Inbound>,
}

impl FrameIo for ChannelIo {
    fn send_frame(&mut self, to: u32, mut frame: Vec<u8>) -> Result<(), TransportError> {
        let tx = self.peers.get(to as usize).ok_or(TransportError::UnknownRank(to))?;
        frame.drain(..4);
        tx.send(Inbound::Frame(frame)).map_err(|_| TransportError::PeerGone(to))
    }

    fn recv_inbound(&mut self, timeout: Duration) -> Option<Inbound> {
        self.inbox.recv_timeout(timeout).ok()
    }
}

impl Drop for ChannelIo {
    fn drop(&mut self) {
        for (r, tx) in self.peers.iter().enumerate() {
            if r as u32 != self.rank {
                let _ = tx.send(Inbound::Gone(self.rank));
            }
        }
    }
}

/// Fully connected in-process network of `size` ranks.
pub fn inproc_network(size: u32) -> Vec<Endpoint> {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..size).map(|_| unbounded()).unzip();
    rxs.into_iter()
        .enumerate()
        .map(|(r, inbox)| {
            let io = ChannelIo {
                rank: r as u32,
                peers: txs.clone(),
                inbox,
            };
            Endpoint::new(r as u32, size, Box::new(io))
        })
        .collect()
}

fn read_frame(s: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    s.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if !(FRAME_HEADER..=MAX_FRAME).contains(&len) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len}"),
        ));
    }
    let mut body = vec![0u8; len];
    s.read_exact(&mut body)?;
    Ok(body)
}

type Streams = Arc<Vec<Mutex<TcpStream>>>;

/// Master side of the socket transport. Worker `r` connects and announces
/// itself with its rank as a `u32`; the master relays frames between workers.
struct HubIo {
    streams: Streams,
    inbox: Receiver<Inbound>,
}

impl FrameIo for HubIo {
    fn send_frame(&mut self, to: u32, frame: Vec<u8>) -> Result<(), TransportError> {
        let s = to
            .checked_sub(1)
            .and_then(|i| self.streams.get(i as usize))
            .ok_or(TransportError::UnknownRank(to))?;
        s.lock()
            .unwrap()
            .write_all(&frame)
            .map_err(|_| TransportError::PeerGone(to))
    }

    fn recv_inbound(&mut self, timeout: Duration) -> Option<Inbound> {
        self.inbox.recv_timeout(timeout).ok()
    }
}

impl Drop for HubIo {
    fn drop(&mut self) {
        for s in self.streams.iter() {
            let _ = s.lock().unwrap().shutdown(Shutdown::Both);
        }
    }
}

pub struct SocketListener {
    listener: TcpListener,
}

impl SocketListener {
    pub fn bind() -> Result<Self, TransportError> {
        Ok(SocketListener {
            listener: TcpListener::bind("127.0.0.1:0")?,
        })
    }

    pub fn addr(&self) -> Result<SocketAddr, TransportError> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits for `workers` connections and returns the master endpoint.
    /// `alive` is polled while waiting; an error from it aborts the wait.
    pub fn accept(
        self,
        workers: u32,
        within: Duration,
        mut alive: impl FnMut() -> Result<(), TransportError>,
    ) -> Result<Endpoint, TransportError> {
        self.listener.set_nonblocking(true)?;
        let deadline = Instant::now() + within;
        let mut slots: Vec<Option<TcpStream>> = (0..workers).map(|_| None).collect();
        let mut connected = 0;
        while connected < workers {
            match self.listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    let mut hello = [0u8; 4];
                    s.set_read_timeout(Some(within))?;
                    s.read_exact(&mut hello)?;
                    s.set_read_timeout(None)?;
                    let r = u32::from_le_bytes(hello);
                    let slot = r
                        .checked_sub(1)
                        .and_then(|i| slots.get_mut(i as usize))
                        .ok_or(TransportError::UnknownRank(r))?;
                    if slot.replace(s).is_some() {
                        return Err(
                            io::Error::new(io::ErrorKind::InvalidData, format!("rank {r} connected twice")).into(),
                        );
                    }
                    connected += 1;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    alive()?;
                    if Instant::now() >= deadline {
                        return Err(TransportError::Timeout(format!(
                            "{} of {workers} workers",
                            workers - connected
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let readers: Vec<TcpStream> = slots
            .iter()
            .map(|s| s.as_ref().unwrap().try_clone())
            .collect::<Result<_, _>>()?;
        let streams: Streams = Arc::new(slots.into_iter().map(|s| Mutex::new(s.unwrap())).collect());
        let (tx, inbox) = unbounded();
        for (i, mut rd) in readers.into_iter().enumerate() {
            let rank = i as u32 + 1;
            let tx = tx.clone();
            let streams = Arc::clone(&streams);
            std::thread::spawn(move || {
                while let Ok(body) = read_frame(&mut rd) {
                    match Envelope::peek_receiver(&body) {
                        Some(0) => {
                            if tx.send(Inbound::Frame(body)).is_err() {
                                return;
                            }
                        }
                        Some(to) if (to as usize) <= streams.len() => {
                            let mut frame = Vec::with_capacity(body.len() + 4);
                            frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
                            frame.extend_from_slice(&body);
                            // a failed relay surfaces as that rank's own disconnect
                            let _ = streams[to as usize - 1].lock().unwrap().write_all(&frame);
                        }
                        _ => break,
                    }
                }
                let _ = tx.send(Inbound::Gone(rank));
            });
        }
        Ok(Endpoint::new(0, workers + 1, Box::new(HubIo { streams, inbox })))
    }
}

struct WorkerSocketIo {
    stream: TcpStream,
    inbox: Receiver<Inbound>,
}

impl FrameIo for WorkerSocketIo {
    fn send_frame(&mut self, _to: u32, frame: Vec<u8>) -> Result<(), TransportError> {
        self.stream.write_all(&frame).map_err(|_| TransportError::PeerGone(0))
    }

    fn recv_inbound(&mut self, timeout: Duration) -> Option<Inbound> {
        self.inbox.recv_timeout(timeout).ok()
    }
}

impl Drop for WorkerSocketIo {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Worker side of the socket transport.
pub fn connect_worker(addr: SocketAddr, rank: u32, size: u32) -> Result<Endpoint, TransportError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    stream.write_all(&rank.to_le_bytes())?;
    let mut rd = stream.try_clone()?;
    let (tx, inbox) = unbounded();
    std::thread::spawn(move || {
        while let Ok(body) = read_frame(&mut rd) {
            if tx.send(Inbound::Frame(body)).is_err() {
                return;
            }
        }
        let _ = tx.send(Inbound::Gone(0));
    });
    Ok(Endpoint::new(rank, size, Box::new(WorkerSocketIo { stream, inbox })))
}

/// Waits up to `timeout` overall for the next envelope, treating silence as an error.
pub fn recv_within(ep: &mut Endpoint, timeout: Duration, what: &str) -> Result<Envelope, TransportError> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(TransportError::Timeout(what.to_string()));
        }
        if let Some(e) = ep.recv(left)? {
            return Ok(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inproc_order_and_timeout() {
        let mut eps = inproc_network(3);
        let mut c = eps.pop().unwrap();
        let mut b = eps.pop().unwrap();
        let mut a = eps.pop().unwrap();
        for i in 0..5 {
            a.send(2, Message::SubmeshRequest { leaves: vec![i] }).unwrap();
            b.send(2, Message::SubmeshRequest { leaves: vec![100 + i] }).unwrap();
        }
        let mut from_a = vec![];
        let mut from_b = vec![];
        for _ in 0..10 {
            let e = c.recv(Duration::from_secs(1)).unwrap().unwrap();
            let Message::SubmeshRequest { leaves } = e.msg else {
                panic!()
            };
            if e.sender == 0 {
                from_a.push(leaves[0])
            } else {
                from_b.push(leaves[0])
            }
        }
        assert_eq!(from_a, vec![0, 1, 2, 3, 4]);
        assert_eq!(from_b, vec![100, 101, 102, 103, 104]);
        let t = Instant::now();
        assert!(c.recv(Duration::from_millis(20)).unwrap().is_none());
        assert!(t.elapsed() >= Duration::from_millis(20));
        drop(a);
        assert!(matches!(
            c.recv(Duration::from_secs(1)),
            Err(TransportError::PeerGone(0))
        ));
    }

    #[test]
    fn replayed_sequence_rejected() {
        let (tx, inbox) = unbounded();
        let io = ChannelIo {
            rank: 1,
            peers: vec![tx.clone(), tx.clone()],
            inbox,
        };
        let mut b = Endpoint::new(1, 2, Box::new(io));
        let env = Envelope {
            sender: 0,
            receiver: 1,
            seq: 1,
            msg: Message::TaskRequest,
        };
        for _ in 0..2 {
            tx.send(Inbound::Frame(env.encode()[4..].to_vec())).unwrap();
        }
        assert!(b.recv(Duration::from_secs(1)).unwrap().is_some());
        assert!(matches!(
            b.recv(Duration::from_secs(1)),
            Err(TransportError::Wire(WireError::Sequence {
                got: 1,
                expected: 2,
                ..
            }))
        ));
    }

    #[test]
    fn socket_relay_between_workers() {
        let l = SocketListener::bind().unwrap();
        let addr = l.addr().unwrap();
        let h = std::thread::spawn(move || {
            let mut w1 = connect_worker(addr, 1, 3).unwrap();
            let mut w2 = connect_worker(addr, 2, 3).unwrap();
            w1.send(2, Message::SubmeshRequest { leaves: vec![9] }).unwrap();
            w1.send(0, Message::TaskRequest).unwrap();
            let e = recv_within(&mut w2, Duration::from_secs(5), "relay").unwrap();
            assert_eq!(e.sender, 1);
            assert_eq!(e.msg, Message::SubmeshRequest { leaves: vec![9] });
            let e = recv_within(&mut w1, Duration::from_secs(5), "terminate").unwrap();
            assert_eq!(e.msg, Message::Terminate);
            (w1, w2)
        });
        let mut m = l.accept(2, Duration::from_secs(5), || Ok(())).unwrap();
        let e = recv_within(&mut m, Duration::from_secs(5), "request").unwrap();
        assert_eq!((e.sender, e.msg), (1, Message::TaskRequest));
        m.send(1, Message::Terminate).unwrap();
        let (w1, w2) = h.join().unwrap();
        drop(w1);
        drop(w2);
        let gone = recv_within(&mut m, Duration::from_secs(5), "gone");
        assert!(matches!(gone, Err(TransportError::PeerGone(_))));
    }
}
