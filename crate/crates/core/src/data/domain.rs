use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::records::RatingRecord;
use crate::error::{Error, Result};

/// Bijection between string ids and dense indices, assigned in sorted
/// string order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for IdMap {
    fn from(ids: Vec<String>) -> Self {
        Self::from_ids(ids.iter().map(String::as_str))
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.ids
    }
}

impl IdMap {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = ids.into_iter().collect();
        let ids: Vec<String> = sorted.into_iter().map(str::to_string).collect();
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }
}

/// A rating record with dense user and item indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub records: Vec<RatingRecord>,
    pub users: IdMap,
    pub items: IdMap,
}

impl Domain {
    pub fn new(records: Vec<RatingRecord>) -> Self {
        let users = IdMap::from_ids(records.iter().map(|r| r.user_id.as_str()));
        let items = IdMap::from_ids(records.iter().map(|r| r.item_id.as_str()));
        Self {
            records,
            users,
            items,
        }
    }

    pub fn index(&self, r: &RatingRecord) -> Interaction {
        Interaction {
            user: self.users.index_of(&r.user_id).expect("record user is mapped"),
            item: self.items.index_of(&r.item_id).expect("record item is mapped"),
            rating: r.rating,
            timestamp: r.timestamp,
        }
    }

    pub fn interactions(&self) -> Vec<Interaction> {
        self.records.iter().map(|r| self.index(r)).collect()
    }

    /// Indexed interactions of the records accepted by `keep`.
    pub fn interactions_where(&self, keep: impl Fn(&RatingRecord) -> bool) -> Vec<Interaction> {
        self.records.iter().filter(|r| keep(r)).map(|r| self.index(r)).collect()
    }
}

/// Source and target domains sharing a population of overlapping users.
#[derive(Clone, Debug)]
pub struct DomainPair {
    pub source: Domain,
    pub target: Domain,
    /// Users present in both domains, sorted.
    pub overlap: Vec<String>,
}

impl DomainPair {
    pub fn is_overlap(&self, user_id: &str) -> bool {
        self.overlap.binary_search_by(|u| u.as_str().cmp(user_id)).is_ok()
    }
}

/// Builds dense id maps for both domains and the overlap set. Item ids are
/// expected to be namespaced per domain already, so the catalogs are
/// disjoint.
pub fn build_domain_pair(source: Vec<RatingRecord>, target: Vec<RatingRecord>) -> Result<DomainPair> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("both domains need records".into()));
    }
    let source = Domain::new(source);
    let target = Domain::new(target);
    if let Some(shared) = source.items.ids().iter().find(|i| target.items.contains(i)) {
        return Err(Error::InvalidArgument(format!(
            "item `{shared}` appears in both domains; namespace item ids per domain"
        )));
    }
    let overlap: Vec<String> = source
        .users
        .ids()
        .iter()
        .filter(|u| target.users.contains(u))
        .cloned()
        .collect();
    if overlap.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(DomainPair {
        source,
        target,
        overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(users: &[&str], tag: &str) -> Vec<RatingRecord> {
        users
            .iter()
            .map(|u| RatingRecord {
                user_id: u.to_string(),
                item_id: format!("{tag}:x"),
                rating: 1.0,
                timestamp: 0,
            })
            .collect()
    }

    #[test]
    fn overlap_is_intersection() {
        let p = build_domain_pair(recs(&["a", "b"], "s"), recs(&["b", "c"], "t")).unwrap();
        assert_eq!(p.overlap, vec!["b".to_string()]);
        assert!(p.is_overlap("b") && !p.is_overlap("a"));
    }

    #[test]
    fn identical_user_sets_overlap_fully() {
        let p = build_domain_pair(recs(&["a", "b"], "s"), recs(&["b", "a"], "t")).unwrap();
        assert_eq!(p.overlap, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn disjoint_users_error() {
        let r = build_domain_pair(recs(&["a"], "s"), recs(&["c"], "t"));
        assert!(matches!(r, Err(Error::NoOverlap)));
    }

    #[test]
    fn ids_are_sorted_and_bijective() {
        let m = IdMap::from_ids(["c", "a", "b", "a"]);
        assert_eq!(m.ids(), &["a", "b", "c"]);
        for i in 0..m.len() {
            assert_eq!(m.index_of(m.id_of(i).unwrap()), Some(i));
        }
    }
}
