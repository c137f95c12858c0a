//! Session key derivation.
//!
//! key = HMAC-SHA256(secret, "IOLW-SEC-LINK-v1" || master_id BE32 || device_uid BE64)[..16]

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::ccm::KEY_LEN;
use crate::protocol::{DeviceUid, MasterId};

pub const KDF_LABEL: &[u8] = b"IOLW-SEC-LINK-v1";
pub const MIN_SECRET_LEN: usize = 16;

pub fn derive_session_key(secret: &[u8], master: MasterId, device: DeviceUid) -> [u8; KEY_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(KDF_LABEL);
    mac.update(&master.0.to_be_bytes());
    mac.update(&device.0.to_be_bytes());
    let out = mac.finalize().into_bytes();
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&out[..KEY_LEN]);
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    #[test]
    fn deterministic() {
        let a = derive_session_key(&[1; 16], MasterId(1), DeviceUid(2));
        assert_eq!(a, derive_session_key(&[1; 16], MasterId(1), DeviceUid(2)));
        assert_ne!(a, derive_session_key(&[1; 16], MasterId(2), DeviceUid(2)));
        assert_ne!(a, derive_session_key(&[2; 16], MasterId(1), DeviceUid(2)));
    }

    #[test]
    fn no_collisions_over_random_uids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut seen = HashSet::new();
        let mut uids = HashSet::new();
        for _ in 0..10_000 {
            let uid: u64 = rng.gen();
            if uids.insert(uid) {
                assert!(seen.insert(derive_session_key(&[5; 16], MasterId(9), DeviceUid(uid))));
            }
        }
    }
}
