//! EtherCAT telegram encoder/decoder and the on-the-fly datagram processing a
//! slave applies to its mapped process image.
//!
//! Wire layout (little-endian), starting at the EtherCAT header; the Ethernet
//! MAC header and FCS are not part of the codec.
//!
//! ```text
//! frame header   2 bytes   bits 0-10 length, bit 11 reserved, bits 12-15 type (=1)
//! per datagram:
//!   cmd          1 byte
//!   idx          1 byte
//!   address      4 bytes
//!   len/flags    2 bytes   bits 0-10 len, bit 14 circulating, bit 15 more
//!   irq          2 bytes
//!   data         len bytes
//!   wkc          2 bytes
//! ```

use std::fmt;

use thiserror::Error;

/// Frame header size.
pub const FRAME_HEADER_LEN: usize = 2;
/// Datagram header (cmd..irq) size.
pub const DATAGRAM_HEADER_LEN: usize = 10;
/// Working counter size.
pub const WKC_LEN: usize = 2;
/// Largest datagram area that fits one Ethernet payload.
pub const MAX_FRAME_PAYLOAD: usize = 1498;
/// Largest data section of a single datagram.
pub const MAX_DATAGRAM_DATA: usize = MAX_FRAME_PAYLOAD - DATAGRAM_HEADER_LEN - WKC_LEN;

const ECAT_TYPE_DATAGRAMS: u16 = 1;
const LEN_MASK: u16 = 0x07ff;
const CIRCULATING_BIT: u16 = 1 << 14;
const MORE_BIT: u16 = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("datagram area of {0} bytes exceeds {MAX_FRAME_PAYLOAD}")]
    OversizeFrame(usize),
    #[error("frame has no datagrams")]
    EmptyFrame,
    #[error("datagram data of {0} bytes exceeds {MAX_DATAGRAM_DATA}")]
    OversizeDatagram(usize),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    #[error("frame type {0} is not an EtherCAT datagram frame")]
    BadType(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("unknown command 0x{0:02x}")]
    UnknownCommand(u8),
    #[error("command {0} is not handled by the process-data path")]
    UnsupportedCommand(Command),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Command {
    Nop = 0,
    Aprd = 1,
    Apwr = 2,
    Aprw = 3,
    Fprd = 4,
    Fpwr = 5,
    Fprw = 6,
    Brd = 7,
    Bwr = 8,
    Brw = 9,
    Lrd = 10,
    Lwr = 11,
    Lrw = 12,
    Armw = 13,
    Frmw = 14,
}

impl Command {
    pub const ALL: [Command; 15] = [
        Command::Nop,
        Command::Aprd,
        Command::Apwr,
        Command::Aprw,
        Command::Fprd,
        Command::Fpwr,
        Command::Fprw,
        Command::Brd,
        Command::Bwr,
        Command::Brw,
        Command::Lrd,
        Command::Lwr,
        Command::Lrw,
        Command::Armw,
        Command::Frmw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Nop => "NOP",
            Command::Aprd => "APRD",
            Command::Apwr => "APWR",
            Command::Aprw => "APRW",
            Command::Fprd => "FPRD",
            Command::Fpwr => "FPWR",
            Command::Fprw => "FPRW",
            Command::Brd => "BRD",
            Command::Bwr => "BWR",
            Command::Brw => "BRW",
            Command::Lrd => "LRD",
            Command::Lwr => "LWR",
            Command::Lrw => "LRW",
            Command::Armw => "ARMW",
            Command::Frmw => "FRMW",
        }
    }

    pub fn is_logical(self) -> bool {
        matches!(self, Command::Lrd | Command::Lwr | Command::Lrw)
    }
}

impl TryFrom<u8> for Command {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Command::ALL
            .get(v as usize)
            .copied()
            .ok_or(CodecError::UnknownCommand(v))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One datagram. The `more` flag is not stored: it is implied by the
/// datagram's position in its [`EcatFrame`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EcatDatagram {
    pub cmd: Command,
    pub idx: u8,
    /// Logical address for `L*` commands, position/station in the low half
    /// and register offset in the high half otherwise.
    pub address: u32,
    pub circulating: bool,
    pub irq: u16,
    pub data: Vec<u8>,
    pub wkc: u16,
}

impl EcatDatagram {
    pub fn new(cmd: Command, address: u32, data: Vec<u8>) -> Self {
        Self {
            cmd,
            idx: 0,
            address,
            circulating: false,
            irq: 0,
            data,
            wkc: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn wire_len(&self) -> usize {
        DATAGRAM_HEADER_LEN + self.data.len() + WKC_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EcatFrame {
    pub datagrams: Vec<EcatDatagram>,
}

impl EcatFrame {
    pub fn new(datagrams: Vec<EcatDatagram>) -> Self {
        Self { datagrams }
    }

    /// Value of the header length field.
    pub fn payload_len(&self) -> usize {
        self.datagrams.iter().map(EcatDatagram::wire_len).sum()
    }

    /// Compact one-line description, used by the conformance vectors.
    ///
    /// `CMD/idx/address/len/c<circulating>/irq/wkc`, datagrams joined with `|`,
    /// numeric fields in hex.
    pub fn summary(&self) -> String {
        self.datagrams
            .iter()
            .map(|d| {
                format!(
                    "{}/{:02x}/{:08x}/{}/c{}/{:04x}/{:04x}",
                    d.cmd,
                    d.idx,
                    d.address,
                    d.data.len(),
                    d.circulating as u8,
                    d.irq,
                    d.wkc
                )
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

pub fn encode_frame(frame: &EcatFrame) -> Result<Vec<u8>, CodecError> {
    if frame.datagrams.is_empty() {
        return Err(CodecError::EmptyFrame);
    }
    if let Some(d) = frame.datagrams.iter().find(|d| d.data.len() > MAX_DATAGRAM_DATA) {
        return Err(CodecError::OversizeDatagram(d.data.len()));
    }
    let payload = frame.payload_len();
    if payload > MAX_FRAME_PAYLOAD {
        return Err(CodecError::OversizeFrame(payload));
    }

    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload);
    let header = (payload as u16 & LEN_MASK) | (ECAT_TYPE_DATAGRAMS << 12);
    out.extend_from_slice(&header.to_le_bytes());

    let last = frame.datagrams.len() - 1;
    for (i, d) in frame.datagrams.iter().enumerate() {
        out.push(d.cmd as u8);
        out.push(d.idx);
        out.extend_from_slice(&d.address.to_le_bytes());
        let mut len_flags = d.data.len() as u16 & LEN_MASK;
        if d.circulating {
            len_flags |= CIRCULATING_BIT;
        }
        if i != last {
            len_flags |= MORE_BIT;
        }
        out.extend_from_slice(&len_flags.to_le_bytes());
        out.extend_from_slice(&d.irq.to_le_bytes());
        out.extend_from_slice(&d.data);
        out.extend_from_slice(&d.wkc.to_le_bytes());
    }
    Ok(out)
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

pub fn decode_frame(bytes: &[u8]) -> Result<EcatFrame, CodecError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(CodecError::TruncatedFrame {
            needed: FRAME_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let header = read_u16(bytes, 0);
    let ty = (header >> 12) as u8;
    if ty != ECAT_TYPE_DATAGRAMS as u8 {
        return Err(CodecError::BadType(ty));
    }
    let declared = (header & LEN_MASK) as usize;
    let body = &bytes[FRAME_HEADER_LEN..];
    if declared > body.len() {
        return Err(CodecError::TruncatedFrame {
            needed: FRAME_HEADER_LEN + declared,
            available: bytes.len(),
        });
    }
    if declared < body.len() {
        return Err(CodecError::LengthMismatch("trailing bytes after declared length"));
    }

    let mut datagrams = Vec::new();
    let mut pos = 0;
    loop {
        if pos == body.len() {
            return Err(CodecError::LengthMismatch(if datagrams.is_empty() {
                "no datagram in frame"
            } else {
                "more flag set on last datagram"
            }));
        }
        if body.len() - pos < DATAGRAM_HEADER_LEN {
            return Err(CodecError::LengthMismatch("datagram header overruns frame length"));
        }
        let cmd = Command::try_from(body[pos])?;
        let idx = body[pos + 1];
        let address = u32::from_le_bytes([body[pos + 2], body[pos + 3], body[pos + 4], body[pos + 5]]);
        let len_flags = read_u16(body, pos + 6);
        let irq = read_u16(body, pos + 8);
        let len = (len_flags & LEN_MASK) as usize;
        let data_start = pos + DATAGRAM_HEADER_LEN;
        let end = data_start + len + WKC_LEN;
        if end > body.len() {
            return Err(CodecError::LengthMismatch("datagram data overruns frame length"));
        }
        let data = body[data_start..data_start + len].to_vec();
        let wkc = read_u16(body, data_start + len);
        datagrams.push(EcatDatagram {
            cmd,
            idx,
            address,
            circulating: len_flags & CIRCULATING_BIT != 0,
            irq,
            data,
            wkc,
        });
        pos = end;
        if len_flags & MORE_BIT == 0 {
            if pos != body.len() {
                return Err(CodecError::LengthMismatch("bytes after final datagram"));
            }
            break;
        }
    }
    Ok(EcatFrame { datagrams })
}

/// Where a slave's output bytes live in the logical process image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlaveMapping {
    pub logical_start: u32,
    pub byte_len: u16,
}

impl SlaveMapping {
    pub fn new(logical_start: u32, byte_len: u16) -> Self {
        assert!(byte_len >= 1, "a mapping covers at least one byte");
        Self {
            logical_start,
            byte_len,
        }
    }

    /// Overlap of the mapping with `[address, address + len)` as
    /// (offset into the datagram data, offset into the image, length).
    fn overlap(&self, address: u32, len: usize) -> Option<(usize, usize, usize)> {
        let d_start = address as u64;
        let d_end = d_start + len as u64;
        let m_start = self.logical_start as u64;
        let m_end = m_start + self.byte_len as u64;
        let start = d_start.max(m_start);
        let end = d_end.min(m_end);
        (start < end).then(|| {
            (
                (start - d_start) as usize,
                (start - m_start) as usize,
                (end - start) as usize,
            )
        })
    }
}

/// Process a logical datagram against one slave's image, in place.
///
/// `image` holds the slave's mapped bytes and must be `mapping.byte_len` long.
/// Returns the working-counter increment, which is also added to `dgram.wkc`.
pub fn apply_datagram(image: &mut [u8], dgram: &mut EcatDatagram, mapping: &SlaveMapping) -> Result<u16, CodecError> {
    if !dgram.cmd.is_logical() {
        return Err(CodecError::UnsupportedCommand(dgram.cmd));
    }
    debug_assert_eq!(image.len(), mapping.byte_len as usize);
    let Some((d_off, i_off, n)) = mapping.overlap(dgram.address, dgram.data.len()) else {
        return Ok(0);
    };
    let frame = &mut dgram.data[d_off..d_off + n];
    let local = &mut image[i_off..i_off + n];
    let inc = match dgram.cmd {
        Command::Lwr => {
            local.copy_from_slice(frame);
            1
        }
        Command::Lrd => {
            frame.copy_from_slice(local);
            1
        }
        Command::Lrw => {
            // outputs are written from the pre-existing frame bytes, inputs
            // read back from the image prior to the write
            let previous = local.to_vec();
            local.copy_from_slice(frame);
            frame.copy_from_slice(&previous);
            3
        }
        _ => unreachable!(),
    };
    dgram.wkc = dgram.wkc.wrapping_add(inc);
    Ok(inc)
}

/// [`apply_datagram`] for the 16-bit output word of a device. The word is
/// stored little-endian in the process image.
pub fn apply_to_word(word: u16, dgram: &mut EcatDatagram, mapping: &SlaveMapping) -> Result<(u16, u16), CodecError> {
    let mut image = word.to_le_bytes();
    let inc = apply_datagram(&mut image[..mapping.byte_len.min(2) as usize], dgram, mapping)?;
    Ok((u16::from_le_bytes(image), inc))
}

/// Parse a hex string, ignoring whitespace.
pub fn parse_hex(s: &str) -> Option<Vec<u8>> {
    let digits: Vec<u8> = s.bytes().filter(|b| !b.is_ascii_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|pair| u8::from_str_radix(std::str::from_utf8(pair).ok()?, 16).ok())
        .collect()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect()
}

/// Result of checking one conformance vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorOutcome {
    pub line: usize,
    pub expected: String,
    pub actual: String,
    pub reencoded: bool,
}

impl VectorOutcome {
    pub fn passed(&self) -> bool {
        self.expected == self.actual && self.reencoded
    }
}

/// Conformance vectors shipped with the crate.
pub const CONFORMANCE_VECTORS: &str = include_str!("../tests/data/conformance.txt");

/// Run conformance vectors in the `<hex> <summary>` line format. Blank lines
/// and `#` comments are skipped. An expected summary of `ERR:<Variant>`
/// asserts that decoding fails with that error. Successful decodes must
/// re-encode to the original bytes.
pub fn check_vectors(text: &str) -> Result<Vec<VectorOutcome>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (hex, expected) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| format!("line {}: missing summary", n + 1))?;
        let bytes = if hex == "-" {
            Vec::new()
        } else {
            parse_hex(hex).ok_or_else(|| format!("line {}: bad hex", n + 1))?
        };
        let (actual, reencoded) = match decode_frame(&bytes) {
            Ok(frame) => {
                let again = encode_frame(&frame).map(|b| b == bytes).unwrap_or(false);
                (frame.summary(), again)
            }
            Err(e) => (format!("ERR:{}", error_code(&e)), true),
        };
        out.push(VectorOutcome {
            line: n + 1,
            expected: expected.trim().to_string(),
            actual,
            reencoded,
        });
    }
    Ok(out)
}

pub fn error_code(e: &CodecError) -> &'static str {
    match e {
        CodecError::OversizeFrame(_) => "OversizeFrame",
        CodecError::EmptyFrame => "EmptyFrame",
        CodecError::OversizeDatagram(_) => "OversizeDatagram",
        CodecError::TruncatedFrame { .. } => "TruncatedFrame",
        CodecError::BadType(_) => "BadType",
        CodecError::LengthMismatch(_) => "LengthMismatch",
        CodecError::UnknownCommand(_) => "UnknownCommand",
        CodecError::UnsupportedCommand(_) => "UnsupportedCommand",
    }
}
