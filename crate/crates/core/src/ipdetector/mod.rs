//! Real-time IP registry and question-set assignment.
//!
//! A new address is registered and handed a random set. An address seen
//! before is flagged and always receives a set it has not been issued yet,
//! falling back to the least recently issued one once the pool is exhausted.

mod pool;
mod projection;
mod store;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::NumericsError;

pub use pool::{shuffle_set, BankQuestion, QuestionBank, QuestionSet, QuestionSetPool};
pub use projection::{project_ips, project_points, ProjectedIp};
pub use store::{Decision, DecisionReason, FlagReason, IpEntry, IpStore, SharedIpStore};

#[derive(Debug, Error)]
pub enum IpError {
    #[error("invalid IPv4 address {0:?}")]
    Parse(String),
    #[error("IP {0} is not registered")]
    Unknown(IpAddress),
    #[error("a distinct question set needs a pool of at least 2 sets, this one has {0}")]
    PoolExhausted(usize),
    #[error("question pool is empty")]
    EmptyPool,
    #[error("invalid question bank: {0}")]
    Bank(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// IPv4 address in canonical dotted-quad form.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IpAddress(Ipv4Addr);

impl IpAddress {
    pub fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        Self(Ipv4Addr::new(a, b, c, d))
    }

    pub fn octets(&self) -> [u8; 4] {
        self.0.octets()
    }

    /// The /24 network: first three octets.
    pub fn subnet24(&self) -> [u8; 3] {
        let [a, b, c, _] = self.octets();
        [a, b, c]
    }
}

impl FromStr for IpAddress {
    type Err = IpError;

    fn from_str(s: &str) -> Result<Self, IpError> {
        s.trim()
            .parse::<Ipv4Addr>()
            .map(Self)
            .map_err(|_| IpError::Parse(s.to_string()))
    }
}

impl TryFrom<String> for IpAddress {
    type Error = IpError;

    fn try_from(s: String) -> Result<Self, IpError> {
        s.parse()
    }
}

impl From<IpAddress> for String {
    fn from(ip: IpAddress) -> String {
        ip.to_string()
    }
}

impl fmt::Display for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for IpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IpAddress({})", self.0)
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, IpError> {
    std::fs::read_to_string(path).map_err(|source| IpError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_quads() {
        let ip: IpAddress = "175.116.139.44".parse().unwrap();
        assert_eq!(ip.octets(), [175, 116, 139, 44]);
        assert_eq!(ip.subnet24(), [175, 116, 139]);
        assert_eq!(ip.to_string(), "175.116.139.44");
        for bad in ["256.1.1.1", "1.2.3", "a.b.c.d", "1.2.3.4.5", ""] {
            assert!(bad.parse::<IpAddress>().is_err(), "{bad}");
        }
    }

    #[test]
    fn serde_uses_the_string_form() {
        let ip = IpAddress::new(211, 243, 246, 3);
        assert_eq!(serde_json::to_string(&ip).unwrap(), "\"211.243.246.3\"");
        assert!(serde_json::from_str::<IpAddress>("\"300.0.0.1\"").is_err());
    }
}
