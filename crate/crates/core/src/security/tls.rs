use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustls::pki_types::{CertificateDer, PrivateKeyDer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TlsError {
    #[error("TLS is enabled but `{0}` is not set")]
    MissingPath(&'static str),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} contains no PEM certificates")]
    NoCertificates(PathBuf),
    #[error("{0} contains no PEM private key")]
    NoPrivateKey(PathBuf),
    #[error("rejected TLS material: {0}")]
    Rustls(#[from] rustls::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TlsSettings {
    pub enabled: bool,
    pub certificate_path: Option<PathBuf>,
    pub private_key_path: Option<PathBuf>,
}

impl TlsSettings {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn from_files(certificate: impl Into<PathBuf>, private_key: impl Into<PathBuf>) -> Self {
        TlsSettings {
            enabled: true,
            certificate_path: Some(certificate.into()),
            private_key_path: Some(private_key.into()),
        }
    }

    /// Reads and checks the PEM material. `Ok(None)` when TLS is disabled.
    pub fn server_config(&self) -> Result<Option<Arc<rustls::ServerConfig>>, TlsError> {
        if !self.enabled {
            return Ok(None);
        }
        let cert_path = self
            .certificate_path
            .as_deref()
            .ok_or(TlsError::MissingPath("tls.certificate_path"))?;
        let key_path = self
            .private_key_path
            .as_deref()
            .ok_or(TlsError::MissingPath("tls.private_key_path"))?;

        let certs = load_certs(cert_path)?;
        let key = load_key(key_path)?;
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let mut config = rustls::ServerConfig::builder_with_provider(provider)
            .with_safe_default_protocol_versions()?
            .with_no_client_auth()
            .with_single_cert(certs, key)?;
        config.alpn_protocols = vec![b"http/1.1".to_vec()];
        Ok(Some(Arc::new(config)))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, TlsError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| TlsError::Read {
            path: path.to_path_buf(),
            source,
        })
}

fn load_certs(path: &Path) -> Result<Vec<CertificateDer<'static>>, TlsError> {
    let certs = rustls_pemfile::certs(&mut open(path)?)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| TlsError::Read {
            path: path.to_path_buf(),
            source,
        })?;
    if certs.is_empty() {
        return Err(TlsError::NoCertificates(path.to_path_buf()));
    }
    Ok(certs)
}

fn load_key(path: &Path) -> Result<PrivateKeyDer<'static>, TlsError> {
    rustls_pemfile::private_key(&mut open(path)?)
        .map_err(|source| TlsError::Read {
            path: path.to_path_buf(),
            source,
        })?
        .ok_or_else(|| TlsError::NoPrivateKey(path.to_path_buf()))
}
