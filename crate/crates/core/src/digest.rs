//! Stable 64-bit hashing of canonicalized values (FNV-1a).

use std::hash::Hasher;

use fnv::FnvHasher;

use crate::geometry::Vec3;

#[derive(Default)]
pub struct Digest(FnvHasher);

impl Digest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.write(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn vec3(&mut self, v: &Vec3) -> &mut Self {
        self.f64(v.x).f64(v.y).f64(v.z)
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.write(b);
        self
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

/// FNV-1a of a byte string.
pub fn hash_bytes(b: &[u8]) -> u64 {
    Digest::new().bytes(b).finish()
}
