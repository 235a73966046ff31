use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RelayError;
use crate::engine::Shape;
use crate::ids::{DyadId, UserId};

/// An exclusive pairing. `user_a` draws circles, `user_b` diamonds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dyad {
    pub dyad_id: DyadId,
    pub user_a: UserId,
    pub user_b: UserId,
}

impl Dyad {
    pub fn shape_of(&self, user: &UserId) -> Option<Shape> {
        if user == &self.user_a {
            Some(Shape::Circle)
        } else if user == &self.user_b {
            Some(Shape::Diamond)
        } else {
            None
        }
    }

    pub fn partner_of(&self, user: &UserId) -> Option<&UserId> {
        if user == &self.user_a {
            Some(&self.user_b)
        } else if user == &self.user_b {
            Some(&self.user_a)
        } else {
            None
        }
    }

    pub fn contains(&self, user: &UserId) -> bool {
        self.shape_of(user).is_some()
    }
}

/// Who is paired with whom.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    dyads: BTreeMap<DyadId, Dyad>,
    by_user: BTreeMap<UserId, DyadId>,
    next_dyad: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    next_dyad: u64,
    dyads: Vec<Dyad>,
}

impl Registry {
    pub fn new() -> Self {
        Self {
            next_dyad: 1,
            ..Self::default()
        }
    }

    pub fn check_pairable(&self, a: &UserId, b: &UserId) -> Result<(), RelayError> {
        if a == b {
            return Err(RelayError::SelfPair(a.clone()));
        }
        for u in [a, b] {
            if self.by_user.contains_key(u) {
                return Err(RelayError::AlreadyPaired(u.clone()));
            }
        }
        Ok(())
    }

    pub fn next_dyad_id(&self) -> DyadId {
        DyadId::new(format!("d{}", self.next_dyad))
    }

    /// Inserts a dyad after [`Registry::check_pairable`] passed.
    pub(crate) fn insert(&mut self, dyad: Dyad) {
        if let Some(n) = dyad
            .dyad_id
            .as_str()
            .strip_prefix('d')
            .and_then(|n| n.parse::<u64>().ok())
        {
            self.next_dyad = self.next_dyad.max(n + 1);
        }
        self.by_user.insert(dyad.user_a.clone(), dyad.dyad_id.clone());
        self.by_user.insert(dyad.user_b.clone(), dyad.dyad_id.clone());
        self.dyads.insert(dyad.dyad_id.clone(), dyad);
    }

    pub fn dyad_of(&self, user: &UserId) -> Option<&Dyad> {
        self.by_user.get(user).and_then(|id| self.dyads.get(id))
    }

    pub fn get(&self, dyad_id: &DyadId) -> Option<&Dyad> {
        self.dyads.get(dyad_id)
    }

    pub fn contains(&self, dyad_id: &DyadId) -> bool {
        self.dyads.contains_key(dyad_id)
    }

    pub fn dyads(&self) -> impl Iterator<Item = &Dyad> {
        self.dyads.values()
    }

    pub fn len(&self) -> usize {
        self.dyads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dyads.is_empty()
    }

    /// Writes the registry to `path` through a temporary sibling and a rename.
    pub fn save_snapshot(&self, path: &Path) -> io::Result<()> {
        let snap = Snapshot {
            next_dyad: self.next_dyad,
            dyads: self.dyads.values().cloned().collect(),
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let body = serde_json::to_vec_pretty(&snap).map_err(io::Error::other)?;
        fs::write(&tmp, body)?;
        fs::rename(&tmp, path)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, RelayError> {
        let body = fs::read(path).map_err(|e| RelayError::Io(e.to_string()))?;
        let snap: Snapshot = serde_json::from_slice(&body).map_err(|e| RelayError::Io(e.to_string()))?;
        let mut reg = Registry::new();
        for dyad in snap.dyads {
            reg.check_pairable(&dyad.user_a, &dyad.user_b)?;
            if reg.contains(&dyad.dyad_id) {
                return Err(RelayError::Io(format!("duplicate dyad {} in snapshot", dyad.dyad_id)));
            }
            reg.insert(dyad);
        }
        reg.next_dyad = reg.next_dyad.max(snap.next_dyad);
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        let mut reg = Registry::new();
        let (a, b) = (UserId::new("alice"), UserId::new("bob"));
        reg.check_pairable(&a, &b).unwrap();
        reg.insert(Dyad {
            dyad_id: reg.next_dyad_id(),
            user_a: a.clone(),
            user_b: b,
        });
        reg.save_snapshot(&path).unwrap();
        let back = Registry::load_snapshot(&path).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.next_dyad_id().as_str(), "d2");
        assert_eq!(back.dyad_of(&a).unwrap().shape_of(&a), Some(Shape::Circle));
        assert!(!dir.path().join("registry.json.tmp").exists());
    }
}
