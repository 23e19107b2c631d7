use std::sync::atomic::{AtomicU64, Ordering};

use rsa::{RsaPrivateKey, RsaPublicKey};

use crate::token::{Jwk, JwkSet};

pub const KEY_BITS: usize = 2048;

static NEXT_KID: AtomicU64 = AtomicU64::new(1);

/// Key ids are unique for the lifetime of the process.
fn next_kid() -> String {
    format!("mcpidg-key-{}", NEXT_KID.fetch_add(1, Ordering::Relaxed))
}

#[derive(Debug, Clone)]
pub struct SigningKey {
    pub kid: String,
    pub private: RsaPrivateKey,
}

impl SigningKey {
    pub fn generate() -> Self {
        let private = RsaPrivateKey::new(&mut rand::thread_rng(), KEY_BITS)
            .expect("RSA key generation");
        SigningKey {
            kid: next_kid(),
            private,
        }
    }

    pub fn public(&self) -> RsaPublicKey {
        self.private.to_public_key()
    }
}

/// Exactly one active key; retired public keys stay published only when
/// retained at rotation time.
#[derive(Debug)]
pub(crate) struct KeyRing {
    pub active: SigningKey,
    pub retained: Vec<(String, RsaPublicKey)>,
}

impl KeyRing {
    pub fn new(active: SigningKey) -> Self {
        KeyRing {
            active,
            retained: Vec::new(),
        }
    }

    pub fn rotate(&mut self, next: SigningKey, retain_old: bool) -> String {
        let old = std::mem::replace(&mut self.active, next);
        if retain_old {
            self.retained.push((old.kid.clone(), old.public()));
        } else {
            self.retained.clear();
        }
        self.active.kid.clone()
    }

    pub fn jwks(&self) -> JwkSet {
        let mut keys = vec![Jwk::from_public_key(&self.active.kid, &self.active.public())];
        keys.extend(
            self.retained
                .iter()
                .map(|(kid, key)| Jwk::from_public_key(kid, key)),
        );
        JwkSet { keys }
    }
}
