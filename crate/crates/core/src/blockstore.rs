//! External memory: a table of node-sized slots grouped into blocks of `B`
//! slots, with distinct-block I/O accounting per logical operation.
//!
//! Two backends share the canonical 10-byte slot encoding: [`MemStore`]
//! keeps the image in a byte vector, [`FileStore`] in a flat file behind a
//! 64-byte header.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::hashing::Params;
use crate::key::{ElementKey, Level, SlotIndex};

pub const SLOT_BYTES: usize = 10;
pub const HEADER_BYTES: usize = 64;
pub const MAGIC: &[u8; 4] = b"BSL1";
pub const FORMAT_VERSION: u16 = 1;

const TAG_EMPTY: u8 = 0;
const TAG_NODE: u8 = 1;
const TAG_END: u8 = 2;

pub type Digest = [u8; 32];

pub fn digest_hex(d: &Digest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SlotRecord {
    #[default]
    Empty,
    Node {
        element: ElementKey,
        level: Level,
    },
    End,
}

impl SlotRecord {
    pub fn node(element: ElementKey, level: Level) -> Self {
        SlotRecord::Node { element, level }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, SlotRecord::Empty)
    }

    pub fn encode(&self) -> [u8; SLOT_BYTES] {
        let mut out = [0u8; SLOT_BYTES];
        match *self {
            SlotRecord::Empty => {}
            SlotRecord::Node { element, level } => {
                out[0] = TAG_NODE;
                out[1..9].copy_from_slice(&element.0.to_be_bytes());
                out[9] = level;
            }
            SlotRecord::End => out[0] = TAG_END,
        }
        out
    }

    pub fn decode(bytes: &[u8; SLOT_BYTES]) -> Result<Self> {
        let payload_zero = bytes[1..].iter().all(|&b| b == 0);
        match bytes[0] {
            TAG_EMPTY if payload_zero => Ok(SlotRecord::Empty),
            TAG_END if payload_zero => Ok(SlotRecord::End),
            TAG_NODE => {
                let mut word = [0u8; 8];
                word.copy_from_slice(&bytes[1..9]);
                Ok(SlotRecord::Node {
                    element: ElementKey(u64::from_be_bytes(word)),
                    level: bytes[9],
                })
            }
            tag => Err(Error::Corrupt(format!("undecodable slot (tag {tag})"))),
        }
    }
}

/// Distinct blocks touched during one logical operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
}

impl IoStats {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }
}

impl std::ops::AddAssign for IoStats {
    fn add_assign(&mut self, rhs: Self) {
        self.reads += rhs.reads;
        self.writes += rhs.writes;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockAddress(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub slots: u64,
    pub block_size: u64,
}

impl Geometry {
    pub fn new(slots: u64, block_size: u64) -> Result<Self> {
        if slots == 0 || block_size == 0 {
            return Err(Error::InvalidParams("empty geometry".into()));
        }
        Ok(Geometry { slots, block_size })
    }

    pub fn block_of(&self, i: SlotIndex) -> BlockAddress {
        BlockAddress(i / self.block_size)
    }

    pub fn block_count(&self) -> u64 {
        self.slots.div_ceil(self.block_size)
    }

    fn check(&self, i: SlotIndex) -> Result<()> {
        if i >= self.slots {
            return Err(Error::SlotOutOfRange {
                index: i,
                slots: self.slots,
            });
        }
        Ok(())
    }
}

/// Charges each block at most once per logical operation. Accesses outside
/// an operation are not charged.
#[derive(Debug, Default)]
pub struct IoTracker {
    active: bool,
    read: HashSet<BlockAddress>,
    written: HashSet<BlockAddress>,
}

impl IoTracker {
    pub fn begin(&mut self) -> Result<()> {
        if self.active {
            return Err(Error::UnbalancedOp);
        }
        self.active = true;
        self.read.clear();
        self.written.clear();
        Ok(())
    }

    pub fn end(&mut self) -> Result<IoStats> {
        if !self.active {
            return Err(Error::UnbalancedOp);
        }
        self.active = false;
        Ok(self.current())
    }

    pub fn in_op(&self) -> bool {
        self.active
    }

    pub fn current(&self) -> IoStats {
        IoStats {
            reads: self.read.len() as u64,
            writes: self.written.len() as u64,
        }
    }

    fn charge_read(&mut self, b: BlockAddress) {
        if self.active {
            self.read.insert(b);
        }
    }

    fn charge_write(&mut self, b: BlockAddress) {
        if self.active {
            self.written.insert(b);
        }
    }
}

pub trait BlockStore {
    fn geometry(&self) -> Geometry;
    fn tracker(&self) -> &IoTracker;
    fn tracker_mut(&mut self) -> &mut IoTracker;
    fn load_raw(&self, i: SlotIndex) -> Result<[u8; SLOT_BYTES]>;
    fn store_raw(&mut self, i: SlotIndex, bytes: &[u8; SLOT_BYTES]) -> Result<()>;
    /// SHA-256 of the full `p * 10`-byte slot image.
    fn image_digest(&self) -> Result<Digest>;
    /// True when every slot is EMPTY.
    fn is_blank(&self) -> Result<bool>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    fn slots(&self) -> u64 {
        self.geometry().slots
    }

    fn block_size(&self) -> u64 {
        self.geometry().block_size
    }

    /// Uncharged read, for verification and statistics.
    fn peek(&self, i: SlotIndex) -> Result<SlotRecord> {
        self.geometry().check(i)?;
        SlotRecord::decode(&self.load_raw(i)?)
    }

    fn read_slot(&mut self, i: SlotIndex) -> Result<SlotRecord> {
        let g = self.geometry();
        g.check(i)?;
        self.tracker_mut().charge_read(g.block_of(i));
        SlotRecord::decode(&self.load_raw(i)?)
    }

    fn write_slot(&mut self, i: SlotIndex, r: SlotRecord) -> Result<()> {
        let g = self.geometry();
        g.check(i)?;
        self.tracker_mut().charge_write(g.block_of(i));
        self.store_raw(i, &r.encode())
    }

    fn begin_op(&mut self) -> Result<()> {
        self.tracker_mut().begin()
    }

    fn end_op(&mut self) -> Result<IoStats> {
        self.tracker_mut().end()
    }

    /// Full decoded image, uncharged.
    fn snapshot(&self) -> Result<Vec<SlotRecord>> {
        (0..self.slots()).map(|i| self.peek(i)).collect()
    }
}

/// In-memory simulator.
#[derive(Debug)]
pub struct MemStore {
    geometry: Geometry,
    bytes: Vec<u8>,
    tracker: IoTracker,
}

impl MemStore {
    pub fn new(slots: u64, block_size: u64) -> Result<Self> {
        let geometry = Geometry::new(slots, block_size)?;
        Ok(MemStore {
            geometry,
            bytes: vec![0u8; slots as usize * SLOT_BYTES],
            tracker: IoTracker::default(),
        })
    }

    pub fn for_params(params: &Params) -> Result<Self> {
        Self::new(params.slots, params.block_size)
    }

    pub fn image(&self) -> &[u8] {
        &self.bytes
    }
}

impl BlockStore for MemStore {
    fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn tracker(&self) -> &IoTracker {
        &self.tracker
    }

    fn tracker_mut(&mut self) -> &mut IoTracker {
        &mut self.tracker
    }

    fn load_raw(&self, i: SlotIndex) -> Result<[u8; SLOT_BYTES]> {
        let at = i as usize * SLOT_BYTES;
        let mut out = [0u8; SLOT_BYTES];
        out.copy_from_slice(&self.bytes[at..at + SLOT_BYTES]);
        Ok(out)
    }

    fn store_raw(&mut self, i: SlotIndex, bytes: &[u8; SLOT_BYTES]) -> Result<()> {
        let at = i as usize * SLOT_BYTES;
        self.bytes[at..at + SLOT_BYTES].copy_from_slice(bytes);
        Ok(())
    }

    fn image_digest(&self) -> Result<Digest> {
        Ok(Sha256::digest(&self.bytes).into())
    }

    fn is_blank(&self) -> Result<bool> {
        Ok(self.bytes.iter().all(|&b| b == 0))
    }
}

/// Parameters recorded in a store file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u16,
    pub capacity: u64,
    pub gamma: u64,
    pub beta: u64,
    pub block_size: u64,
    pub slots: u64,
    pub master_seed: u64,
}

impl FileHeader {
    pub fn new(params: &Params, master_seed: u64) -> Self {
        FileHeader {
            version: FORMAT_VERSION,
            capacity: params.capacity,
            gamma: params.gamma,
            beta: params.beta as u64,
            block_size: params.block_size,
            slots: params.slots,
            master_seed,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&self.version.to_be_bytes());
        let fields = [
            self.capacity,
            self.gamma,
            self.beta,
            self.block_size,
            self.slots,
            self.master_seed,
        ];
        for (i, v) in fields.iter().enumerate() {
            out[6 + 8 * i..14 + 8 * i].copy_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8; HEADER_BYTES]) -> Result<Self> {
        if &bytes[..4] != MAGIC {
            return Err(Error::BadHeader("bad magic".into()));
        }
        let version = u16::from_be_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::BadHeader(format!("unsupported version {version}")));
        }
        if bytes[54..].iter().any(|&b| b != 0) {
            return Err(Error::BadHeader("nonzero padding".into()));
        }
        let field = |i: usize| {
            let mut w = [0u8; 8];
            w.copy_from_slice(&bytes[6 + 8 * i..14 + 8 * i]);
            u64::from_be_bytes(w)
        };
        Ok(FileHeader {
            version,
            capacity: field(0),
            gamma: field(1),
            beta: field(2),
            block_size: field(3),
            slots: field(4),
            master_seed: field(5),
        })
    }
}

/// File-backed store: 64-byte header followed by the slot area.
#[derive(Debug)]
pub struct FileStore {
    geometry: Geometry,
    header: FileHeader,
    file: File,
    tracker: IoTracker,
}

impl FileStore {
    /// Creates (or truncates) a file holding an all-EMPTY table.
    pub fn create(path: impl AsRef<Path>, params: &Params, master_seed: u64) -> Result<Self> {
        let header = FileHeader::new(params, master_seed);
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.write_all(&header.encode())?;
        file.set_len(HEADER_BYTES as u64 + params.slots * SLOT_BYTES as u64)?;
        Ok(FileStore {
            geometry: Geometry::new(params.slots, params.block_size)?,
            header,
            file,
            tracker: IoTracker::default(),
        })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut raw = [0u8; HEADER_BYTES];
        file.read_exact(&mut raw)?;
        let header = FileHeader::decode(&raw)?;
        let expected = HEADER_BYTES as u64 + header.slots * SLOT_BYTES as u64;
        let actual = file.metadata()?.len();
        if actual != expected {
            return Err(Error::BadHeader(format!(
                "file is {actual} bytes, header implies {expected}"
            )));
        }
        Ok(FileStore {
            geometry: Geometry::new(header.slots, header.block_size)?,
            header,
            file,
            tracker: IoTracker::default(),
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    fn offset(i: SlotIndex) -> u64 {
        HEADER_BYTES as u64 + i * SLOT_BYTES as u64
    }

    fn for_each_chunk(&self, mut f: impl FnMut(&[u8]) -> bool) -> Result<()> {
        const CHUNK: u64 = 64 * 1024;
        let total = self.geometry.slots * SLOT_BYTES as u64;
        let mut buf = vec![0u8; CHUNK as usize];
        let mut at = 0u64;
        while at < total {
            let len = CHUNK.min(total - at) as usize;
            self.file
                .read_exact_at(&mut buf[..len], HEADER_BYTES as u64 + at)?;
            if !f(&buf[..len]) {
                break;
            }
            at += len as u64;
        }
        Ok(())
    }
}

impl BlockStore for FileStore {
    fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn tracker(&self) -> &IoTracker {
        &self.tracker
    }

    fn tracker_mut(&mut self) -> &mut IoTracker {
        &mut self.tracker
    }

    fn load_raw(&self, i: SlotIndex) -> Result<[u8; SLOT_BYTES]> {
        let mut out = [0u8; SLOT_BYTES];
        self.file.read_exact_at(&mut out, Self::offset(i))?;
        Ok(out)
    }

    fn store_raw(&mut self, i: SlotIndex, bytes: &[u8; SLOT_BYTES]) -> Result<()> {
        self.file.write_all_at(bytes, Self::offset(i))?;
        Ok(())
    }

    fn image_digest(&self) -> Result<Digest> {
        let mut hasher = Sha256::new();
        self.for_each_chunk(|c| {
            hasher.update(c);
            true
        })?;
        Ok(hasher.finalize().into())
    }

    fn is_blank(&self) -> Result<bool> {
        let mut blank = true;
        self.for_each_chunk(|c| {
            blank = c.iter().all(|&b| b == 0);
            blank
        })?;
        Ok(blank)
    }

    fn flush(&mut self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}

impl<S: BlockStore + ?Sized> BlockStore for Box<S> {
    fn geometry(&self) -> Geometry {
        (**self).geometry()
    }

    fn tracker(&self) -> &IoTracker {
        (**self).tracker()
    }

    fn tracker_mut(&mut self) -> &mut IoTracker {
        (**self).tracker_mut()
    }

    fn load_raw(&self, i: SlotIndex) -> Result<[u8; SLOT_BYTES]> {
        (**self).load_raw(i)
    }

    fn store_raw(&mut self, i: SlotIndex, bytes: &[u8; SLOT_BYTES]) -> Result<()> {
        (**self).store_raw(i, bytes)
    }

    fn image_digest(&self) -> Result<Digest> {
        (**self).image_digest()
    }

    fn is_blank(&self) -> Result<bool> {
        (**self).is_blank()
    }

    fn flush(&mut self) -> Result<()> {
        (**self).flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(x: u64, l: Level) -> SlotRecord {
        SlotRecord::node(ElementKey(x), l)
    }

    #[test]
    fn fresh_store_is_empty() {
        let s = MemStore::new(37, 4).unwrap();
        for i in 0..37 {
            assert_eq!(s.peek(i).unwrap(), SlotRecord::Empty);
        }
        assert!(s.is_blank().unwrap());
    }

    #[test]
    fn out_of_range() {
        let mut s = MemStore::new(10, 4).unwrap();
        assert!(matches!(s.read_slot(10), Err(Error::SlotOutOfRange { .. })));
        assert!(s.write_slot(11, SlotRecord::End).is_err());
    }

    #[test]
    fn encoding_is_canonical() {
        assert_eq!(SlotRecord::Empty.encode(), [0; 10]);
        assert_eq!(SlotRecord::End.encode(), [2, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(
            node(0x0102, 3).encode(),
            [1, 0, 0, 0, 0, 0, 0, 1, 2, 3]
        );
        assert!(SlotRecord::decode(&[0, 1, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert!(SlotRecord::decode(&[7, 0, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn distinct_block_rule() {
        let mut s = MemStore::new(64, 8).unwrap();
        s.begin_op().unwrap();
        assert_eq!(s.end_op().unwrap(), IoStats::default());

        s.begin_op().unwrap();
        s.read_slot(3).unwrap();
        assert_eq!(s.end_op().unwrap(), IoStats { reads: 1, writes: 0 });

        s.begin_op().unwrap();
        s.read_slot(8).unwrap();
        s.read_slot(9).unwrap();
        s.read_slot(8).unwrap();
        assert_eq!(s.end_op().unwrap().reads, 1);

        s.begin_op().unwrap();
        for i in 16..24 {
            s.write_slot(i, node(i, 1)).unwrap();
        }
        assert_eq!(s.end_op().unwrap(), IoStats { reads: 0, writes: 1 });
    }

    #[test]
    fn range_reads_touch_expected_blocks() {
        let b = 8u64;
        let mut s = MemStore::new(200, b).unwrap();
        for start in 0..40u64 {
            for len in 1..30u64 {
                s.begin_op().unwrap();
                for i in start..start + len {
                    s.read_slot(i).unwrap();
                }
                let io = s.end_op().unwrap();
                assert_eq!(io.reads, (start + len - 1) / b - start / b + 1);
            }
        }
    }

    #[test]
    fn string_of_block_length_spans_at_most_two_blocks() {
        let b = 16u64;
        let mut s = MemStore::new(100, b).unwrap();
        for offset in 0..b {
            s.begin_op().unwrap();
            for i in offset..offset + b {
                s.read_slot(i).unwrap();
            }
            let io = s.end_op().unwrap();
            assert!(io.reads <= 2);
            assert_eq!(io.reads, if offset == 0 { 1 } else { 2 });
        }
    }

    #[test]
    fn unbalanced_ops() {
        let mut s = MemStore::new(10, 2).unwrap();
        assert!(matches!(s.end_op(), Err(Error::UnbalancedOp)));
        s.begin_op().unwrap();
        assert!(matches!(s.begin_op(), Err(Error::UnbalancedOp)));
    }

    #[test]
    fn digest_tracks_image() {
        let mut a = MemStore::new(50, 4).unwrap();
        let b = MemStore::new(50, 4).unwrap();
        let fresh = a.image_digest().unwrap();
        assert_eq!(fresh, b.image_digest().unwrap());
        a.write_slot(7, node(99, 2)).unwrap();
        assert_eq!(a.read_slot(7).unwrap(), node(99, 2));
        assert_ne!(a.image_digest().unwrap(), fresh);
        a.write_slot(7, SlotRecord::Empty).unwrap();
        assert_eq!(a.image_digest().unwrap(), fresh);
    }

    #[test]
    fn file_backend_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let params = Params::new(100, 4, 4).unwrap();
        let mut f = FileStore::create(dir.path().join("t.bsl"), &params, 9).unwrap();
        let mut m = MemStore::for_params(&params).unwrap();
        assert!(f.is_blank().unwrap());
        assert_eq!(f.image_digest().unwrap(), m.image_digest().unwrap());
        let writes = [(3, node(5, 1)), (4, SlotRecord::End), (params.slots - 1, node(1, 2))];
        f.begin_op().unwrap();
        m.begin_op().unwrap();
        for &(i, r) in &writes {
            f.write_slot(i, r).unwrap();
            m.write_slot(i, r).unwrap();
            assert_eq!(f.read_slot(i).unwrap(), m.read_slot(i).unwrap());
        }
        assert_eq!(f.end_op().unwrap(), m.end_op().unwrap());
        assert_eq!(f.image_digest().unwrap(), m.image_digest().unwrap());
        assert!(!f.is_blank().unwrap());
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let params = Params::new(100, 4, 4).unwrap();
        let h = FileHeader::new(&params, 0x0102_0304_0506_0708);
        let raw = h.encode();
        assert_eq!(&raw[..4], b"BSL1");
        assert_eq!(&raw[4..6], &[0, 1]);
        assert_eq!(&raw[6..14], &100u64.to_be_bytes());
        assert_eq!(&raw[14..22], &4u64.to_be_bytes());
        assert_eq!(&raw[22..30], &(params.beta as u64).to_be_bytes());
        assert_eq!(&raw[30..38], &4u64.to_be_bytes());
        assert_eq!(&raw[38..46], &params.slots.to_be_bytes());
        assert_eq!(&raw[46..54], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(raw[54..].iter().all(|&b| b == 0));
        assert_eq!(FileHeader::decode(&raw).unwrap(), h);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bsl");
        drop(FileStore::create(&path, &params, 1).unwrap());
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 64 + params.slots as usize * 10);
        let reopened = FileStore::open(&path).unwrap();
        assert_eq!(reopened.header().master_seed, 1);
    }
}
