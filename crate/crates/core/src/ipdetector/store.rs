use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::{IpAddress, IpError, QuestionSetPool};
use crate::numerics::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// The address checked in more than once.
    RepeatIp,
    /// A known candidate arrived from a different address.
    IpChange,
    /// The behavioural classifier labelled a session from this address suspected.
    BehaviorSuspected,
    Manual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    None,
    RepeatIp,
    PriorFlag,
}

/// Outcome of one check-in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub set_id: String,
    pub flagged: bool,
    pub reason: DecisionReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpEntry {
    /// Logical check-in tick at registration.
    pub first_seen: u64,
    pub check_in_count: u64,
    pub assigned_set_ids: Vec<String>,
    pub flagged: bool,
    pub flag_reason: Option<FlagReason>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

/// Registry of every address that has checked in. Entries are never evicted
/// and a flag, once set, stays set.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<IpAddress, IpEntry>", into = "BTreeMap<IpAddress, IpEntry>")]
pub struct IpStore {
    entries: BTreeMap<IpAddress, IpEntry>,
    clock: u64,
    candidate_home: BTreeMap<String, IpAddress>,
}

impl From<BTreeMap<IpAddress, IpEntry>> for IpStore {
    fn from(entries: BTreeMap<IpAddress, IpEntry>) -> Self {
        let clock = entries.values().map(|e| e.check_in_count).sum();
        let mut by_age: Vec<(&IpAddress, &IpEntry)> = entries.iter().collect();
        by_age.sort_by_key(|(ip, e)| (e.first_seen, **ip));
        let mut candidate_home = BTreeMap::new();
        for (ip, e) in by_age {
            for c in &e.candidates {
                candidate_home.entry(c.clone()).or_insert(*ip);
            }
        }
        Self {
            entries,
            clock,
            candidate_home,
        }
    }
}

impl From<IpStore> for BTreeMap<IpAddress, IpEntry> {
    fn from(store: IpStore) -> Self {
        store.entries
    }
}

impl IpStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, ip: &IpAddress) -> Option<&IpEntry> {
        self.entries.get(ip)
    }

    pub fn contains(&self, ip: &IpAddress) -> bool {
        self.entries.contains_key(ip)
    }

    pub fn is_flagged(&self, ip: &IpAddress) -> bool {
        self.entries.get(ip).is_some_and(|e| e.flagged)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IpAddress, &IpEntry)> {
        self.entries.iter()
    }

    /// Registers a check-in from `ip` and decides which question set it gets.
    pub fn check_in(
        &mut self,
        ip: IpAddress,
        candidate: Option<&str>,
        pool: &QuestionSetPool,
        rng: &mut Prng,
    ) -> Result<Decision, IpError> {
        if pool.is_empty() {
            return Err(IpError::EmptyPool);
        }
        let tick = self.clock;
        let home = candidate
            .and_then(|c| self.candidate_home.get(c))
            .copied()
            .filter(|home| *home != ip);

        let decision = match self.entries.get_mut(&ip) {
            Some(entry) => {
                let set_id = pick_distinct(&entry.assigned_set_ids, pool, rng)?;
                let reason = if entry.flagged {
                    DecisionReason::PriorFlag
                } else {
                    entry.flagged = true;
                    entry.flag_reason = Some(FlagReason::RepeatIp);
                    DecisionReason::RepeatIp
                };
                entry.check_in_count += 1;
                entry.assigned_set_ids.push(set_id.clone());
                Decision {
                    set_id,
                    flagged: true,
                    reason,
                }
            }
            None => {
                let (set_id, flag) = match home {
                    Some(home) => {
                        let issued = &self.entries[&home].assigned_set_ids;
                        (pick_distinct(issued, pool, rng)?, Some(FlagReason::IpChange))
                    }
                    None => (pool.ids().nth(rng.index(pool.len())).unwrap().to_string(), None),
                };
                self.entries.insert(
                    ip,
                    IpEntry {
                        first_seen: tick,
                        check_in_count: 1,
                        assigned_set_ids: vec![set_id.clone()],
                        flagged: flag.is_some(),
                        flag_reason: flag,
                        candidates: Vec::new(),
                    },
                );
                Decision {
                    set_id,
                    flagged: flag.is_some(),
                    reason: if flag.is_some() {
                        DecisionReason::RepeatIp
                    } else {
                        DecisionReason::None
                    },
                }
            }
        };
        if let Some(c) = candidate {
            let entry = self.entries.get_mut(&ip).expect("registered above");
            if !entry.candidates.iter().any(|x| x == c) {
                entry.candidates.push(c.to_string());
            }
            self.candidate_home.entry(c.to_string()).or_insert(ip);
        }
        self.clock += 1;
        Ok(decision)
    }

    /// Marks `ip` suspicious. Flagging twice keeps the first reason.
    pub fn flag_ip(&mut self, ip: &IpAddress, reason: FlagReason) -> Result<(), IpError> {
        let entry = self.entries.get_mut(ip).ok_or(IpError::Unknown(*ip))?;
        if !entry.flagged {
            entry.flagged = true;
            entry.flag_reason = Some(reason);
        }
        Ok(())
    }

    /// Issues `ip` a further set distinct from everything it has received.
    pub fn reissue(&mut self, ip: &IpAddress, pool: &QuestionSetPool, rng: &mut Prng) -> Result<String, IpError> {
        let entry = self.entries.get_mut(ip).ok_or(IpError::Unknown(*ip))?;
        let set_id = pick_distinct(&entry.assigned_set_ids, pool, rng)?;
        entry.assigned_set_ids.push(set_id.clone());
        Ok(set_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IpError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IpError> {
        Self::from_json(&super::read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IpError> {
        crate::io::write_atomic(path.as_ref(), self.to_json().as_bytes()).map_err(|source| IpError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

/// A set not yet issued to this history, uniformly at random; once every set
/// has been issued, the one issued longest ago.
fn pick_distinct(history: &[String], pool: &QuestionSetPool, rng: &mut Prng) -> Result<String, IpError> {
    if pool.len() < 2 {
        return Err(IpError::PoolExhausted(pool.len()));
    }
    let unused: Vec<&str> = pool.ids().filter(|id| !history.iter().any(|h| h == id)).collect();
    if !unused.is_empty() {
        return Ok(unused[rng.index(unused.len())].to_string());
    }
    let oldest = pool
        .ids()
        .min_by_key(|id| history.iter().rposition(|h| h == id))
        .expect("pool is non-empty");
    Ok(oldest.to_string())
}

/// Mutex-guarded store: concurrent check-ins are applied one at a time, each
/// observing every check-in that completed before it.
#[derive(Debug, Default)]
pub struct SharedIpStore(Mutex<IpStore>);

impl SharedIpStore {
    pub fn new(store: IpStore) -> Self {
        Self(Mutex::new(store))
    }

    fn lock(&self) -> MutexGuard<'_, IpStore> {
        self.0.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn check_in(
        &self,
        ip: IpAddress,
        candidate: Option<&str>,
        pool: &QuestionSetPool,
        rng: &mut Prng,
    ) -> Result<Decision, IpError> {
        self.lock().check_in(ip, candidate, pool, rng)
    }

    pub fn flag_ip(&self, ip: &IpAddress, reason: FlagReason) -> Result<(), IpError> {
        self.lock().flag_ip(ip, reason)
    }

    /// Flags `ip` and issues it a fresh set under one lock.
    pub fn flag_and_reissue(
        &self,
        ip: &IpAddress,
        reason: FlagReason,
        pool: &QuestionSetPool,
        rng: &mut Prng,
    ) -> Result<String, IpError> {
        let mut store = self.lock();
        store.flag_ip(ip, reason)?;
        store.reissue(ip, pool, rng)
    }

    pub fn snapshot(&self) -> IpStore {
        self.lock().clone()
    }

    pub fn into_inner(self) -> IpStore {
        self.0.into_inner().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipdetector::QuestionBank;

    fn pool(n: usize) -> QuestionSetPool {
        QuestionSetPool::generate(&QuestionBank::placeholder(20, 4), n, 11).unwrap()
    }

    fn ip(s: &str) -> IpAddress {
        s.parse().unwrap()
    }

    #[test]
    fn fresh_ip_is_registered_unflagged() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(4), Prng::new(1));
        let d = store.check_in(ip("175.116.139.44"), None, &pool, &mut rng).unwrap();
        assert!(!d.flagged);
        assert_eq!(d.reason, DecisionReason::None);
        assert!(pool.ids().any(|id| id == d.set_id));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn repeat_ip_is_flagged_with_a_new_set() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(4), Prng::new(1));
        let shared = ip("211.243.246.3");
        let first = store.check_in(shared, None, &pool, &mut rng).unwrap();
        let second = store.check_in(shared, None, &pool, &mut rng).unwrap();
        assert!(second.flagged);
        assert_eq!(second.reason, DecisionReason::RepeatIp);
        assert_ne!(first.set_id, second.set_id);
        let third = store.check_in(shared, None, &pool, &mut rng).unwrap();
        assert_eq!(third.reason, DecisionReason::PriorFlag);
        assert_eq!(store.get(&shared).unwrap().flag_reason, Some(FlagReason::RepeatIp));
    }

    #[test]
    fn two_set_pool_cycles() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(2), Prng::new(5));
        let a = ip("10.0.0.1");
        let sets: Vec<String> = (0..5)
            .map(|_| store.check_in(a, None, &pool, &mut rng).unwrap().set_id)
            .collect();
        assert_eq!(sets[2], sets[0]);
        assert_eq!(sets[3], sets[1]);
        assert!(sets.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn single_set_pool_cannot_reassign() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(1), Prng::new(5));
        let a = ip("10.0.0.1");
        store.check_in(a, None, &pool, &mut rng).unwrap();
        assert!(matches!(
            store.check_in(a, None, &pool, &mut rng),
            Err(IpError::PoolExhausted(1))
        ));
    }

    #[test]
    fn flagging_is_idempotent_and_chains() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(3), Prng::new(2));
        let a = ip("1.2.3.4");
        assert!(matches!(
            store.flag_ip(&a, FlagReason::Manual),
            Err(IpError::Unknown(_))
        ));
        store.check_in(a, None, &pool, &mut rng).unwrap();
        store.flag_ip(&a, FlagReason::Manual).unwrap();
        store.flag_ip(&a, FlagReason::BehaviorSuspected).unwrap();
        assert_eq!(store.get(&a).unwrap().flag_reason, Some(FlagReason::Manual));
        let d = store.check_in(a, None, &pool, &mut rng).unwrap();
        assert_eq!(d.reason, DecisionReason::PriorFlag);
    }

    #[test]
    fn candidate_changing_address_is_flagged() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(3), Prng::new(2));
        let first = store.check_in(ip("1.1.1.1"), Some("stu-9"), &pool, &mut rng).unwrap();
        let moved = store.check_in(ip("1.1.1.2"), Some("stu-9"), &pool, &mut rng).unwrap();
        assert!(moved.flagged);
        assert_eq!(moved.reason, DecisionReason::RepeatIp);
        assert_ne!(first.set_id, moved.set_id);
        assert_eq!(
            store.get(&ip("1.1.1.2")).unwrap().flag_reason,
            Some(FlagReason::IpChange)
        );
    }

    #[test]
    fn snapshot_round_trips() {
        let (mut store, pool, mut rng) = (IpStore::new(), pool(3), Prng::new(2));
        for s in ["1.1.1.1", "2.2.2.2", "1.1.1.1"] {
            store.check_in(ip(s), Some("x"), &pool, &mut rng).unwrap();
        }
        let json = store.to_json();
        assert!(json.contains("\"1.1.1.1\""));
        assert_eq!(IpStore::from_json(&json).unwrap(), store);
    }
}
