//! 64-bit checksum shared by every on-disk artifact.

use crc::{Crc, Digest, CRC_64_XZ};

pub const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn checksum64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

/// Incremental form for writers that stream their output.
pub fn digest() -> Digest<'static, u64> {
    CRC64.digest()
}
