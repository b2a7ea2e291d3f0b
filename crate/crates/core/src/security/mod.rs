//! Defense-in-depth layers as plain data plus pure enforcement functions.
//!
//! | layer                         | item                                   |
//! |-------------------------------|----------------------------------------|
//! | security headers              | [`SecurityHeaderSet`], [`apply_security_headers`] |
//! | TLS                           | [`TlsSettings`]                        |
//! | URL / port spoofing           | [`spoof_rewrite`]                      |
//! | IP whitelisting/blacklisting  | [`AccessPolicy`], [`evaluate_access`]  |
//! | read-only cells               | [`crate::notebook::apply_read_only`]   |
//! | password auth + hashing       | [`PasswordRecord`], [`hash_password`], [`verify_password`] |

mod access;
mod headers;
mod password;
mod spoof;
mod tls;

pub use access::{evaluate_access, AccessDecision, AccessPolicy, Cidr, CidrError, DenyReason};
pub use headers::{
    apply_security_headers, default_security_headers, HeaderError, SecurityHeaderSet,
};
pub use password::{
    fresh_salt, hash_password, verify_password, Algorithm, PasswordError, PasswordRecord,
};
pub use spoof::{spoof_rewrite, spoof_rewrite_bytes};
pub use tls::{TlsError, TlsSettings};
