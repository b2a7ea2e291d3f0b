use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CidrError {
    #[error("`{0}` is not an IPv4 or IPv6 address")]
    BadAddress(String),
    #[error("prefix length `{0}` is not a number")]
    BadPrefix(String),
    #[error("prefix length {prefix} exceeds {max} for this address family")]
    PrefixTooLong { prefix: u32, max: u32 },
}

/// An address block in `addr/len` form. A bare address means a host block
/// (`/32` or `/128`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cidr {
    addr: IpAddr,
    prefix: u8,
}

impl Cidr {
    pub fn new(addr: IpAddr, prefix: u8) -> Result<Self, CidrError> {
        let max = max_prefix(addr);
        if u32::from(prefix) > max {
            return Err(CidrError::PrefixTooLong {
                prefix: prefix.into(),
                max,
            });
        }
        Ok(Cidr { addr, prefix })
    }

    pub fn host(addr: IpAddr) -> Self {
        Cidr {
            addr,
            prefix: max_prefix(addr) as u8,
        }
    }

    pub fn addr(&self) -> IpAddr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.prefix
    }

    /// Membership test. IPv4-mapped IPv6 clients are matched as IPv4.
    pub fn contains(&self, ip: IpAddr) -> bool {
        match (self.addr, ip.to_canonical()) {
            (IpAddr::V4(net), IpAddr::V4(ip)) => {
                let mask = u32::MAX
                    .checked_shl(32 - u32::from(self.prefix))
                    .unwrap_or(0);
                (u32::from(net) ^ u32::from(ip)) & mask == 0
            }
            (IpAddr::V6(net), IpAddr::V6(ip)) => {
                let mask = u128::MAX
                    .checked_shl(128 - u32::from(self.prefix))
                    .unwrap_or(0);
                (u128::from(net) ^ u128::from(ip)) & mask == 0
            }
            _ => false,
        }
    }
}

fn max_prefix(addr: IpAddr) -> u32 {
    match addr {
        IpAddr::V4(_) => 32,
        IpAddr::V6(_) => 128,
    }
}

impl FromStr for Cidr {
    type Err = CidrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => (a, Some(p)),
            None => (s, None),
        };
        let addr: IpAddr = addr
            .parse()
            .map_err(|_| CidrError::BadAddress(addr.to_string()))?;
        match prefix {
            None => Ok(Cidr::host(addr)),
            Some(p) => {
                let prefix: u32 = p.parse().map_err(|_| CidrError::BadPrefix(p.to_string()))?;
                let max = max_prefix(addr);
                if prefix > max {
                    return Err(CidrError::PrefixTooLong { prefix, max });
                }
                Ok(Cidr {
                    addr,
                    prefix: prefix as u8,
                })
            }
        }
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessPolicy {
    pub whitelist: Vec<Cidr>,
    pub blacklist: Vec<Cidr>,
}

impl AccessPolicy {
    pub fn new(whitelist: Vec<Cidr>, blacklist: Vec<Cidr>) -> Self {
        AccessPolicy {
            whitelist,
            blacklist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    Blacklisted(Cidr),
    NotWhitelisted,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::Blacklisted(c) => write!(f, "address is blacklisted by {c}"),
            DenyReason::NotWhitelisted => f.write_str("address is not whitelisted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessDecision {
    Allow,
    Deny(DenyReason),
}

impl AccessDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, AccessDecision::Allow)
    }
}

/// Blacklist wins; a non-empty whitelist must then match; otherwise allow.
pub fn evaluate_access(policy: &AccessPolicy, client: IpAddr) -> AccessDecision {
    if let Some(block) = policy.blacklist.iter().find(|b| b.contains(client)) {
        return AccessDecision::Deny(DenyReason::Blacklisted(*block));
    }
    if policy.whitelist.is_empty() || policy.whitelist.iter().any(|w| w.contains(client)) {
        AccessDecision::Allow
    } else {
        AccessDecision::Deny(DenyReason::NotWhitelisted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{Ipv4Addr, Ipv6Addr};

    fn cidrs(list: &[&str]) -> Vec<Cidr> {
        list.iter().map(|s| s.parse().unwrap()).collect()
    }

    /// Compares the leading `prefix` bits one at a time.
    fn oracle_contains(block: &Cidr, ip: IpAddr) -> bool {
        let (a, b): (Vec<u8>, Vec<u8>) = match (block.addr(), ip.to_canonical()) {
            (IpAddr::V4(x), IpAddr::V4(y)) => (x.octets().to_vec(), y.octets().to_vec()),
            (IpAddr::V6(x), IpAddr::V6(y)) => (x.octets().to_vec(), y.octets().to_vec()),
            _ => return false,
        };
        (0..block.prefix_len() as usize).all(|bit| {
            let byte = bit / 8;
            let shift = 7 - (bit % 8);
            (a[byte] >> shift) & 1 == (b[byte] >> shift) & 1
        })
    }

    #[test]
    fn open_by_default() {
        let p = AccessPolicy::default();
        assert_eq!(
            evaluate_access(&p, "10.0.0.1".parse().unwrap()),
            AccessDecision::Allow
        );
    }

    #[test]
    fn blacklist_beats_whitelist() {
        let p = AccessPolicy::new(cidrs(&["192.168.1.7/32"]), cidrs(&["192.168.1.0/24"]));
        assert!(matches!(
            evaluate_access(&p, "192.168.1.7".parse().unwrap()),
            AccessDecision::Deny(DenyReason::Blacklisted(_))
        ));
    }

    #[test]
    fn slash30_sweep() {
        let p = AccessPolicy::new(cidrs(&["10.0.0.0/30"]), vec![]);
        let block: Cidr = "10.0.0.0/30".parse().unwrap();
        let allowed: Vec<u8> = (0..=255u8)
            .filter(|last| {
                let ip = IpAddr::V4(Ipv4Addr::new(10, 0, 0, *last));
                let got = evaluate_access(&p, ip).is_allow();
                assert_eq!(got, oracle_contains(&block, ip));
                got
            })
            .collect();
        assert_eq!(allowed, vec![0, 1, 2, 3]);
    }

    #[test]
    fn parse_bounds_and_forms() {
        assert_eq!(
            "10.0.0.0/33".parse::<Cidr>(),
            Err(CidrError::PrefixTooLong {
                prefix: 33,
                max: 32
            })
        );
        assert!(matches!(
            "300.1.1.1/24".parse::<Cidr>(),
            Err(CidrError::BadAddress(_))
        ));
        assert!(matches!(
            "10.0.0.0/x".parse::<Cidr>(),
            Err(CidrError::BadPrefix(_))
        ));
        assert!("::1/129".parse::<Cidr>().is_err());
        assert_eq!("::1".parse::<Cidr>().unwrap().prefix_len(), 128);
        assert_eq!(
            "2001:db8::/32".parse::<Cidr>().unwrap().to_string(),
            "2001:db8::/32"
        );
        assert_eq!("0.0.0.0/0".parse::<Cidr>().unwrap().prefix_len(), 0);
    }

    #[test]
    fn zero_prefix_matches_family_only() {
        let any4: Cidr = "0.0.0.0/0".parse().unwrap();
        assert!(any4.contains("203.0.113.9".parse().unwrap()));
        assert!(!any4.contains(IpAddr::V6(Ipv6Addr::LOCALHOST)));
        let any6: Cidr = "::/0".parse().unwrap();
        assert!(any6.contains(IpAddr::V6(Ipv6Addr::LOCALHOST)));
    }

    #[test]
    fn mapped_v6_client_matches_v4_block() {
        let block: Cidr = "127.0.0.0/8".parse().unwrap();
        assert!(block.contains("::ffff:127.0.0.1".parse().unwrap()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_ip() -> impl Strategy<Value = IpAddr> {
            prop_oneof![
                any::<u32>().prop_map(|v| IpAddr::V4(Ipv4Addr::from(v))),
                any::<u128>().prop_map(|v| IpAddr::V6(Ipv6Addr::from(v))),
            ]
        }

        fn arb_cidr() -> impl Strategy<Value = Cidr> {
            arb_ip().prop_flat_map(|ip| {
                let max = max_prefix(ip) as u8;
                (Just(ip), 0..=max).prop_map(|(ip, p)| Cidr::new(ip, p).unwrap())
            })
        }

        proptest! {
            #[test]
            fn contains_matches_bitwise_oracle(block in arb_cidr(), ip in arb_ip()) {
                prop_assert_eq!(block.contains(ip), oracle_contains(&block, ip));
            }

            #[test]
            fn blacklisting_the_host_always_denies(
                white in proptest::collection::vec(arb_cidr(), 0..4),
                black in proptest::collection::vec(arb_cidr(), 0..4),
                ip in arb_ip(),
            ) {
                let mut black = black;
                black.push(Cidr::host(ip));
                let p = AccessPolicy::new(white, black);
                prop_assert!(!evaluate_access(&p, ip).is_allow());
            }
        }
    }
}
