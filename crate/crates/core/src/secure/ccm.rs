//! AES-128 in CCM mode.
//!
//! Frames use a 13-byte nonce (L = 2). The CBC-MAC is always computed with the
//! full 16-byte tag length encoded in the first block and then truncated to the
//! link's tag length, so tags of 1 and 3 bytes are possible. The standard
//! M-parameterized variant is kept for conformance testing.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const BLOCK_LEN: usize = 16;
pub const KEY_LEN: usize = 16;
pub const FRAME_NONCE_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CcmError {
    #[error("nonce must be 7 to 13 bytes, got {0}")]
    NonceLength(usize),
    #[error("tag length {0} is not allowed")]
    TagLength(usize),
    #[error("message too long for the nonce length")]
    MessageTooLong,
    #[error("authentication failed")]
    AuthFailure,
}

#[derive(Clone)]
pub struct AesCcm {
    cipher: Aes128,
}

impl std::fmt::Debug for AesCcm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AesCcm { .. }")
    }
}

impl AesCcm {
    pub fn new(key: &[u8; KEY_LEN]) -> Self {
        AesCcm {
            cipher: Aes128::new(GenericArray::from_slice(key)),
        }
    }

    pub fn encrypt_block(&self, block: &mut [u8; BLOCK_LEN]) {
        self.cipher
            .encrypt_block(GenericArray::from_mut_slice(block));
    }

    pub fn decrypt_block(&self, block: &mut [u8; BLOCK_LEN]) {
        self.cipher
            .decrypt_block(GenericArray::from_mut_slice(block));
    }

    /// Frame encryption: returns the ciphertext and the CCM tag truncated to
    /// `tag_len` bytes (1..=16).
    pub fn seal(
        &self,
        nonce: &[u8; FRAME_NONCE_LEN],
        aad: &[u8],
        plaintext: &[u8],
        tag_len: usize,
    ) -> Result<(Vec<u8>, Vec<u8>), CcmError> {
        if !(1..=BLOCK_LEN).contains(&tag_len) {
            return Err(CcmError::TagLength(tag_len));
        }
        let (ct, tag) = self.encrypt_raw(nonce, aad, plaintext, BLOCK_LEN)?;
        Ok((ct, tag[..tag_len].to_vec()))
    }

    /// Frame decryption with constant-time comparison of the truncated tag.
    pub fn open(
        &self,
        nonce: &[u8; FRAME_NONCE_LEN],
        aad: &[u8],
        ciphertext: &[u8],
        tag: &[u8],
    ) -> Result<Vec<u8>, CcmError> {
        if !(1..=BLOCK_LEN).contains(&tag.len()) {
            return Err(CcmError::TagLength(tag.len()));
        }
        let plaintext = self.ctr_apply(nonce, ciphertext)?;
        let full = self.tag(nonce, aad, &plaintext, BLOCK_LEN)?;
        if bool::from(full[..tag.len()].ct_eq(tag)) {
            Ok(plaintext)
        } else {
            Err(CcmError::AuthFailure)
        }
    }

    /// Standard CCM with an M-byte tag (M even, 4..=16) and any nonce of 7..=13 bytes.
    pub fn encrypt_standard(
        &self,
        nonce: &[u8],
        aad: &[u8],
        plaintext: &[u8],
        m: usize,
    ) -> Result<(Vec<u8>, Vec<u8>), CcmError> {
        if !(4..=16).contains(&m) || m % 2 != 0 {
            return Err(CcmError::TagLength(m));
        }
        self.encrypt_raw(nonce, aad, plaintext, m)
    }

    pub fn decrypt_standard(
        &self,
        nonce: &[u8],
        aad: &[u8],
        ciphertext: &[u8],
        tag: &[u8],
    ) -> Result<Vec<u8>, CcmError> {
        let m = tag.len();
        if !(4..=16).contains(&m) || m % 2 != 0 {
            return Err(CcmError::TagLength(m));
        }
        let plaintext = self.ctr_apply(nonce, ciphertext)?;
        let expected = self.tag(nonce, aad, &plaintext, m)?;
        if bool::from(expected.as_slice().ct_eq(tag)) {
            Ok(plaintext)
        } else {
            Err(CcmError::AuthFailure)
        }
    }

    /// XOR `data` with the CCM keystream blocks S_1, S_2, ... Decryption that
    /// ignores authentication.
    pub fn ctr_apply(&self, nonce: &[u8], data: &[u8]) -> Result<Vec<u8>, CcmError> {
        let l = check_nonce(nonce)?;
        check_length(l, data.len())?;
        let mut out = data.to_vec();
        for (i, chunk) in out.chunks_mut(BLOCK_LEN).enumerate() {
            let s = self.keystream_block(nonce, l, i as u64 + 1);
            for (b, k) in chunk.iter_mut().zip(s) {
                *b ^= k;
            }
        }
        Ok(out)
    }

    fn encrypt_raw(
        &self,
        nonce: &[u8],
        aad: &[u8],
        plaintext: &[u8],
        m: usize,
    ) -> Result<(Vec<u8>, Vec<u8>), CcmError> {
        let tag = self.tag(nonce, aad, plaintext, m)?;
        let ct = self.ctr_apply(nonce, plaintext)?;
        Ok((ct, tag))
    }

    /// Encrypted authentication value U, `m` bytes long.
    fn tag(&self, nonce: &[u8], aad: &[u8], plaintext: &[u8], m: usize) -> Result<Vec<u8>, CcmError> {
        let l = check_nonce(nonce)?;
        check_length(l, plaintext.len())?;

        let mut b0 = [0u8; BLOCK_LEN];
        b0[0] = (if aad.is_empty() { 0 } else { 0x40 }) | ((((m - 2) / 2) as u8) << 3) | (l as u8 - 1);
        b0[1..1 + nonce.len()].copy_from_slice(nonce);
        let len = (plaintext.len() as u64).to_be_bytes();
        b0[BLOCK_LEN - l..].copy_from_slice(&len[8 - l..]);

        let mut x = b0;
        self.encrypt_block(&mut x);

        if !aad.is_empty() {
            let mut encoded = Vec::with_capacity(aad.len() + 6);
            if aad.len() < 0xFF00 {
                encoded.extend_from_slice(&(aad.len() as u16).to_be_bytes());
            } else {
                encoded.extend_from_slice(&[0xFF, 0xFE]);
                encoded.extend_from_slice(&(aad.len() as u32).to_be_bytes());
            }
            encoded.extend_from_slice(aad);
            self.cbc_absorb(&mut x, &encoded);
        }
        self.cbc_absorb(&mut x, plaintext);

        let s0 = self.keystream_block(nonce, l, 0);
        Ok(x.iter().zip(s0).take(m).map(|(a, b)| a ^ b).collect())
    }

    fn cbc_absorb(&self, x: &mut [u8; BLOCK_LEN], data: &[u8]) {
        for chunk in data.chunks(BLOCK_LEN) {
            for (a, b) in x.iter_mut().zip(chunk) {
                *a ^= b;
            }
            self.encrypt_block(x);
        }
    }

    fn keystream_block(&self, nonce: &[u8], l: usize, i: u64) -> [u8; BLOCK_LEN] {
        let mut a = [0u8; BLOCK_LEN];
        a[0] = l as u8 - 1;
        a[1..1 + nonce.len()].copy_from_slice(nonce);
        let ctr = i.to_be_bytes();
        a[BLOCK_LEN - l..].copy_from_slice(&ctr[8 - l..]);
        self.encrypt_block(&mut a);
        a
    }
}

fn check_nonce(nonce: &[u8]) -> Result<usize, CcmError> {
    if (7..=13).contains(&nonce.len()) {
        Ok(15 - nonce.len())
    } else {
        Err(CcmError::NonceLength(nonce.len()))
    }
}

fn check_length(l: usize, len: usize) -> Result<(), CcmError> {
    if l < 8 && (len as u64) >> (8 * l) != 0 {
        Err(CcmError::MessageTooLong)
    } else {
        Ok(())
    }
}
