//! Protocol messages and their little-endian, length-prefixed wire form.
//!
//! Frame: `len: u32` (bytes after this field), `version: u8`, `kind: u8`,
//! `sender: u32`, `receiver: u32`, `seq: u64`, then the kind's payload.

use super::pack;
use crate::delaunay::RefineStats;
use crate::metrics::Breakdown;
use thiserror::Error;

pub const WIRE_VERSION: u8 = 1;
/// Bytes between the length prefix and the payload.
pub const FRAME_HEADER: usize = 18;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("unsupported wire version {0}")]
    Version(u8),
    #[error("unknown message kind {0}")]
    Kind(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("{0} trailing bytes in frame")]
    Trailing(usize),
    #[error("embedded pack: {0}")]
    Pack(#[from] pack::PackError),
    #[error("sequence number {got} from rank {sender}, expected {expected}")]
    Sequence { sender: u32, expected: u64, got: u64 },
}

/// Outcome of one leaf task, reported to the master.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskResult {
    pub leaf: u32,
    /// Leaves now held by the sender (the influence region).
    pub region: Vec<u32>,
    /// Region leaves that still hold rule-violating tets.
    pub dirty: Vec<u32>,
    /// Tet count per region leaf, parallel to `region`.
    pub counts: Vec<u64>,
    pub stats: RefineStats,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    TaskRequest,
    /// Leaf to refine and, for each leaf of its influence region, the rank holding it.
    TaskGrant {
        leaf: u32,
        locations: Vec<(u32, u32)>,
    },
    NoWorkYet,
    SubmeshRequest {
        leaves: Vec<u32>,
    },
    /// One pack per leaf.
    SubmeshReply {
        packs: Vec<(u32, Vec<u8>)>,
    },
    ResultSubmit(TaskResult),
    Terminate,
    /// A worker's accounting, sent in answer to `Terminate`.
    FinalReport {
        breakdown: Breakdown,
        stats: RefineStats,
        tasks: u32,
    },
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::TaskRequest => 1,
            Message::TaskGrant { .. } => 2,
            Message::NoWorkYet => 3,
            Message::SubmeshRequest { .. } => 4,
            Message::SubmeshReply { .. } => 5,
            Message::ResultSubmit(_) => 6,
            Message::Terminate => 7,
            Message::FinalReport { .. } => 8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::TaskRequest => "TaskRequest",
            Message::TaskGrant { .. } => "TaskGrant",
            Message::NoWorkYet => "NoWorkYet",
            Message::SubmeshRequest { .. } => "SubmeshRequest",
            Message::SubmeshReply { .. } => "SubmeshReply",
            Message::ResultSubmit(_) => "ResultSubmit",
            Message::Terminate => "Terminate",
            Message::FinalReport { .. } => "FinalReport",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub sender: u32,
    pub receiver: u32,
    pub seq: u64,
    pub msg: Message,
}

struct W(Vec<u8>);

impl W {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32s(&mut self, v: &[u32]) {
        self.u32(v.len() as u32);
        for &x in v {
            self.u32(x);
        }
    }
    fn stats(&mut self, s: &RefineStats) {
        for v in [
            s.insertions,
            s.barycenter_fallbacks,
            s.boundary_splits,
            s.deferred,
            s.duplicates,
            s.rollbacks,
        ] {
            self.u64(v);
        }
        self.f64(s.wall_secs);
    }
}

struct R<'a> {
    b: &'a [u8],
    at: usize,
}

impl R<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        let end = self.at.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.b.get(self.at..end).ok_or(WireError::Truncated)?;
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn len(&mut self) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        // every element takes at least 4 bytes, so bound the count by what is left
        if n > (self.b.len() - self.at) / 4 {
            return Err(WireError::Truncated);
        }
        Ok(n)
    }
    fn u32s(&mut self) -> Result<Vec<u32>, WireError> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn stats(&mut self) -> Result<RefineStats, WireError> {
        Ok(RefineStats {
            insertions: self.u64()?,
            barycenter_fallbacks: self.u64()?,
            boundary_splits: self.u64()?,
            deferred: self.u64()?,
            duplicates: self.u64()?,
            rollbacks: self.u64()?,
            wall_secs: self.f64()?,
        })
    }
}

impl Envelope {
    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = W(Vec::with_capacity(64));
        w.u32(0);
        w.0.push(WIRE_VERSION);
        w.0.push(self.msg.kind());
        w.u32(self.sender);
        w.u32(self.receiver);
        w.u64(self.seq);
        match &self.msg {
            Message::TaskRequest | Message::NoWorkYet | Message::Terminate => {}
            Message::TaskGrant { leaf, locations } => {
                w.u32(*leaf);
                w.u32(locations.len() as u32);
                for &(l, r) in locations {
                    w.u32(l);
                    w.u32(r);
                }
            }
            Message::SubmeshRequest { leaves } => w.u32s(leaves),
            Message::SubmeshReply { packs } => {
                w.u32(packs.len() as u32);
                for (leaf, p) in packs {
                    w.u32(*leaf);
                    w.u64(p.len() as u64);
                    w.0.extend_from_slice(p);
                }
            }
            Message::ResultSubmit(r) => {
                w.u32(r.leaf);
                w.u32s(&r.region);
                w.u32s(&r.dirty);
                w.u32(r.counts.len() as u32);
                for &c in &r.counts {
                    w.u64(c);
                }
                w.stats(&r.stats);
            }
            Message::FinalReport {
                breakdown: b,
                stats,
                tasks,
            } => {
                w.u32(b.rank);
                for v in [b.preprocess, b.mesh, b.pack, b.unpack, b.poll, b.idle, b.wall] {
                    w.f64(v);
                }
                w.stats(stats);
                w.u32(*tasks);
            }
        }
        let len = (w.0.len() - 4) as u32;
        w.0[..4].copy_from_slice(&len.to_le_bytes());
        w.0
    }

    /// Decodes a frame body (everything after the length prefix).
    pub fn decode(body: &[u8]) -> Result<Envelope, WireError> {
        let mut r = R { b: body, at: 0 };
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(WireError::Version(version));
        }
        let kind = r.u8()?;
        let sender = r.u32()?;
        let receiver = r.u32()?;
        let seq = r.u64()?;
        let msg = match kind {
            1 => Message::TaskRequest,
            2 => {
                let leaf = r.u32()?;
                let n = r.len()?;
                let mut locations = Vec::with_capacity(n);
                for _ in 0..n {
                    locations.push((r.u32()?, r.u32()?));
                }
                Message::TaskGrant { leaf, locations }
            }
            3 => Message::NoWorkYet,
            4 => Message::SubmeshRequest { leaves: r.u32s()? },
            5 => {
                let n = r.len()?;
                let mut packs = Vec::with_capacity(n);
                for _ in 0..n {
                    let leaf = r.u32()?;
                    let len = r.u64()? as usize;
                    let p = r.take(len)?.to_vec();
                    let h = pack::read_header(&p)?;
                    if h.payload_len() != len {
                        return Err(pack::PackError::Truncated {
                            needed: h.payload_len(),
                            got: len,
                        }
                        .into());
                    }
                    packs.push((leaf, p));
                }
                Message::SubmeshReply { packs }
            }
            6 => {
                let leaf = r.u32()?;
                let region = r.u32s()?;
                let dirty = r.u32s()?;
                let n = r.len()?;
                let counts = (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?;
                let stats = r.stats()?;
                Message::ResultSubmit(TaskResult {
                    leaf,
                    region,
                    dirty,
                    counts,
                    stats,
                })
            }
            7 => Message::Terminate,
            8 => {
                let rank = r.u32()?;
                let mut v = [0.0; 7];
                for x in &mut v {
                    *x = r.f64()?;
                }
                let breakdown = Breakdown {
                    rank,
                    preprocess: v[0],
                    mesh: v[1],
                    pack: v[2],
                    unpack: v[3],
                    poll: v[4],
                    idle: v[5],
                    wall: v[6],
                };
                let stats = r.stats()?;
                let tasks = r.u32()?;
                Message::FinalReport {
                    breakdown,
                    stats,
                    tasks,
                }
            }
            k => return Err(WireError::Kind(k)),
        };
        if r.at != body.len() {
            return Err(WireError::Trailing(body.len() - r.at));
        }
        Ok(Envelope {
            sender,
            receiver,
            seq,
            msg,
        })
    }

    /// Receiver rank read straight from a frame body, for routing.
    pub fn peek_receiver(body: &[u8]) -> Option<u32> {
        body.get(6..10).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(msg: Message) {
        let e = Envelope {
            sender: 3,
            receiver: 1,
            seq: 42,
            msg,
        };
        let f = e.encode();
        assert_eq!(u32::from_le_bytes(f[..4].try_into().unwrap()) as usize, f.len() - 4);
        assert_eq!(Envelope::peek_receiver(&f[4..]), Some(1));
        assert_eq!(Envelope::decode(&f[4..]).unwrap(), e);
    }

    #[test]
    fn all_kinds_roundtrip() {
        let empty = pack::pack_mesh(
            &crate::delaunay::TetMesh::empty(
                crate::geom::BBox::new(crate::geom::Point3::default(), crate::geom::Point3::new(1.0, 1.0, 1.0)),
                0,
            ),
            1,
        );
        roundtrip(Message::TaskRequest);
        roundtrip(Message::TaskGrant {
            leaf: 7,
            locations: vec![(7, 0), (8, 2)],
        });
        roundtrip(Message::NoWorkYet);
        roundtrip(Message::SubmeshRequest { leaves: vec![1, 2, 3] });
        roundtrip(Message::SubmeshReply {
            packs: vec![(4, empty.clone()), (5, empty)],
        });
        roundtrip(Message::ResultSubmit(TaskResult {
            leaf: 9,
            region: vec![9, 10],
            dirty: vec![10],
            counts: vec![100, 3],
            stats: RefineStats {
                insertions: 5,
                wall_secs: 0.5,
                ..Default::default()
            },
        }));
        roundtrip(Message::Terminate);
        roundtrip(Message::FinalReport {
            breakdown: Breakdown {
                rank: 2,
                mesh: 1.5,
                wall: 2.0,
                ..Default::default()
            },
            stats: RefineStats::default(),
            tasks: 4,
        });
    }

    #[test]
    fn bad_frames_rejected() {
        let f = Envelope {
            sender: 0,
            receiver: 1,
            seq: 1,
            msg: Message::SubmeshRequest { leaves: vec![1, 2] },
        }
        .encode();
        assert_eq!(Envelope::decode(&f[4..f.len() - 1]), Err(WireError::Truncated));
        let mut v = f[4..].to_vec();
        v[0] = 2;
        assert_eq!(Envelope::decode(&v), Err(WireError::Version(2)));
        let mut v = f[4..].to_vec();
        v[1] = 99;
        assert_eq!(Envelope::decode(&v), Err(WireError::Kind(99)));
        let mut v = f[4..].to_vec();
        v.push(0);
        assert_eq!(Envelope::decode(&v), Err(WireError::Trailing(1)));
    }
}
