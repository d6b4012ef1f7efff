//! Binary request dump: fixed 17-byte little-endian records `kind u8, key u64, value u64`.

use std::io::{self, Read, Write};

use crate::index::{Request, RequestKind};

pub const RECORD_LEN: usize = 17;

pub fn write_requests<W: Write>(mut out: W, requests: impl IntoIterator<Item = Request>) -> io::Result<u64> {
    let mut n = 0;
    let mut rec = [0u8; RECORD_LEN];
    for r in requests {
        rec[0] = r.kind().tag();
        rec[1..9].copy_from_slice(&r.key().to_le_bytes());
        rec[9..17].copy_from_slice(&r.value().unwrap_or(0).to_le_bytes());
        out.write_all(&rec)?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn read_requests<R: Read>(mut input: R) -> io::Result<Vec<Request>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_LEN != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("dump length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, format!("record {i}: {msg}"));
            let kind = RequestKind::from_tag(rec[0]).ok_or_else(|| bad("unknown kind tag"))?;
            let key = u64::from_le_bytes(rec[1..9].try_into().expect("8 bytes"));
            let value = u64::from_le_bytes(rec[9..17].try_into().expect("8 bytes"));
            let value = matches!(kind, RequestKind::Update | RequestKind::Insert).then_some(value);
            Ok(Request::from_parts(kind, key, value).expect("value presence matches kind"))
        })
        .collect()
}
