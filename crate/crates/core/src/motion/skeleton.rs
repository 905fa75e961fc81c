use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint names, parent links and named joint groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    names: Vec<String>,
    parents: Vec<i32>,
    groups: BTreeMap<String, Vec<usize>>,
}

const BODY: [(&str, i32); 9] = [
    ("Spine1", -1),
    ("Spine2", 0),
    ("Spine3", 1),
    ("Neck", 2),
    ("Head", 3),
    ("RightArm", 2),
    ("RightForeArm", 5),
    ("LeftArm", 2),
    ("LeftForeArm", 7),
];

/// Joints of one hand relative to the hand root; parents index into this list
/// (`-1` means the forearm).
const HAND: [(&str, i32); 19] = [
    ("Hand", -1),
    ("HandThumb1", 0),
    ("HandThumb2", 1),
    ("HandThumb3", 2),
    ("InHandIndex", 0),
    ("HandIndex1", 4),
    ("HandIndex2", 5),
    ("HandIndex3", 6),
    ("InHandMiddle", 0),
    ("HandMiddle1", 8),
    ("HandMiddle2", 9),
    ("HandMiddle3", 10),
    ("InHandRing", 0),
    ("HandRing1", 12),
    ("HandRing2", 13),
    ("HandRing3", 14),
    ("HandPinky1", 12),
    ("HandPinky2", 16),
    ("HandPinky3", 17),
];

impl SkeletonSpec {
    pub fn new(names: Vec<String>, parents: Vec<i32>, groups: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        let spec = SkeletonSpec { names, parents, groups };
        spec.validate()?;
        Ok(spec)
    }

    /// The 47-joint upper body: 9 spine/neck/arm joints and 19 joints per hand.
    pub fn upper_body() -> Self {
        let mut names = Vec::with_capacity(47);
        let mut parents = Vec::with_capacity(47);
        for (n, p) in BODY {
            names.push(n.to_string());
            parents.push(p);
        }
        let mut groups = BTreeMap::new();
        groups.insert("body".to_string(), (0..9).collect());
        for (side, forearm) in [("Right", 6), ("Left", 8)] {
            let base = names.len();
            for (n, p) in HAND {
                names.push(format!("{side}{n}"));
                parents.push(if p < 0 { forearm } else { base as i32 + p });
            }
            let key = format!("{}_hand", side.to_lowercase());
            groups.insert(key, (base..base + HAND.len()).collect());
        }
        groups.insert("left_arm".into(), vec![7, 8]);
        groups.insert("right_arm".into(), vec![5, 6]);
        groups.insert("head".into(), vec![3, 4]);
        SkeletonSpec::new(names, parents, groups).expect("built-in skeleton is valid")
    }

    /// A chain of `j` joints named `joint_<k>`, split into `left_hand` (first
    /// half) and `right_hand` (second half) groups. Used for small test rigs.
    pub fn chain(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::argument("skeleton needs at least one joint"));
        }
        let names = (0..j).map(|k| format!("joint_{k}")).collect();
        let parents = (0..j as i32).map(|k| k - 1).collect();
        let mut groups = BTreeMap::new();
        groups.insert("left_hand".into(), (0..j / 2).collect());
        groups.insert("right_hand".into(), (j / 2..j).collect());
        SkeletonSpec::new(names, parents, groups)
    }

    /// Default skeleton for a joint count: the upper body for 47, a chain otherwise.
    pub fn for_joint_count(j: usize) -> Result<Self> {
        if j == 47 {
            Ok(Self::upper_body())
        } else {
            Self::chain(j)
        }
    }

    fn validate(&self) -> Result<()> {
        let j = self.names.len();
        if j == 0 {
            return Err(Error::argument("skeleton needs at least one joint"));
        }
        if self.parents.len() != j {
            return Err(Error::argument(format!("{} names but {} parents", j, self.parents.len())));
        }
        let mut seen = HashSet::new();
        for n in &self.names {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::argument(format!("invalid joint name {n:?}")));
            }
            if !seen.insert(n) {
                return Err(Error::argument(format!("duplicate joint name {n}")));
            }
        }
        for (i, &p) in self.parents.iter().enumerate() {
            if p < -1 || p >= j as i32 || p == i as i32 {
                return Err(Error::argument(format!("joint {i} has invalid parent {p}")));
            }
        }
        // Every chain of parents must reach a root within `j` hops.
        for start in 0..j {
            let mut cur = start as i32;
            let mut hops = 0;
            while cur >= 0 {
                cur = self.parents[cur as usize];
                hops += 1;
                if hops > j {
                    return Err(Error::argument(format!("parent cycle through joint {start}")));
                }
            }
        }
        for (g, members) in &self.groups {
            if let Some(&bad) = members.iter().find(|&&m| m >= j) {
                return Err(Error::argument(format!("group {g} references joint {bad}")));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self) -> &[i32] {
        &self.parents
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Resolves a comma separated list of joint and group names into a
    /// per-joint selection. `none` selects nothing, `all` selects everything.
    pub fn select(&self, spec: &str) -> Result<Vec<bool>> {
        let j = self.joint_count();
        let mut out = vec![false; j];
        for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "none" => {}
                "all" => out.iter_mut().for_each(|m| *m = true),
                _ => {
                    if let Some(members) = self.groups.get(token) {
                        members.iter().for_each(|&m| out[m] = true);
                    } else if let Some(i) = self.index_of(token) {
                        out[i] = true;
                    } else {
                        let mut valid: Vec<&str> = vec!["none", "all"];
                        valid.extend(self.groups.keys().map(String::as_str));
                        valid.extend(self.names.iter().map(String::as_str));
                        return Err(Error::argument(format!(
                            "unknown joint or group {token:?}; valid names: {}",
                            valid.join(", ")
                        )));
                    }
                }
            }
        }
        Ok(out)
    }
}
