use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A rooted tree over body joints.
///
/// Message passing runs in two directions over the same tree: *upward*
/// (children feed their parent, leaves first) and *downward* (the parent
/// feeds its children, root first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointTree {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    upward: Vec<usize>,
    mirror: Vec<usize>,
}

/// Flow direction of one message-passing branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Leaves towards the root; each joint receives from its children.
    Upward,
    /// Root towards the leaves; each joint receives from its parent.
    Downward,
}

impl JointTree {
    /// Builds a tree from joint names and parent indices (`None` for the root).
    ///
    /// Joints named `l_*` and `r_*` are paired as mirror images; all others
    /// mirror onto themselves.
    pub fn new(names: Vec<String>, parent: Vec<Option<usize>>) -> Result<Self> {
        let k = names.len();
        if k == 0 || parent.len() != k {
            return Err(Error::Config(format!(
                "tree needs one parent entry per joint ({} names, {} parents)",
                k,
                parent.len()
            )));
        }
        let roots: Vec<usize> = (0..k).filter(|&j| parent[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Config(format!(
                "tree must have exactly one root, found {}",
                roots.len()
            )));
        }
        let mut children = vec![Vec::new(); k];
        for (j, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= k || p == j {
                    return Err(Error::Config(format!("joint {j} has invalid parent {p}")));
                }
                children[p].push(j);
            }
        }
        // Breadth-first from the root visits each parent before its children;
        // joints it never reaches sit on a cycle.
        let mut downward = Vec::with_capacity(k);
        let mut queue = VecDeque::from([roots[0]]);
        while let Some(j) = queue.pop_front() {
            downward.push(j);
            queue.extend(children[j].iter().copied());
        }
        if downward.len() != k {
            return Err(Error::Config("joint parent map contains a cycle".into()));
        }
        let mut upward = downward;
        upward.reverse();

        let mirror = (0..k)
            .map(|j| {
                let name = &names[j];
                let partner = if let Some(rest) = name.strip_prefix("l_") {
                    format!("r_{rest}")
                } else if let Some(rest) = name.strip_prefix("r_") {
                    format!("l_{rest}")
                } else {
                    return j;
                };
                names.iter().position(|n| *n == partner).unwrap_or(j)
            })
            .collect();

        Ok(JointTree {
            names,
            parent,
            children,
            upward,
            mirror,
        })
    }

    /// The default 14-joint skeleton rooted at the neck: head, two arms
    /// (shoulder, elbow, wrist) and two legs (hip, knee, ankle).
    pub fn desk14() -> Self {
        let spec: [(&str, Option<usize>); 14] = [
            ("head", Some(1)),
            ("neck", None),
            ("r_shoulder", Some(1)),
            ("r_elbow", Some(2)),
            ("r_wrist", Some(3)),
            ("l_shoulder", Some(1)),
            ("l_elbow", Some(5)),
            ("l_wrist", Some(6)),
            ("r_hip", Some(1)),
            ("r_knee", Some(8)),
            ("r_ankle", Some(9)),
            ("l_hip", Some(1)),
            ("l_knee", Some(11)),
            ("l_ankle", Some(12)),
        ];
        Self::new(
            spec.iter().map(|(n, _)| n.to_string()).collect(),
            spec.iter().map(|(_, p)| *p).collect(),
        )
        .expect("built-in tree is valid")
    }

    /// Looks a tree up by its configuration name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk14" => Ok(Self::desk14()),
            "desk26" => Ok(Self::desk14().interpolate_limbs().0),
            "chain2" => Self::chain(2),
            "chain3" => Self::chain(3),
            other => Err(Error::Config(format!("unknown tree {other:?}"))),
        }
    }

    /// A path `j0 <- j1 <- ... <- j(n-1)` rooted at `j0`.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(
            (0..n).map(|j| format!("j{j}")).collect(),
            (0..n).map(|j| j.checked_sub(1)).collect(),
        )
    }

    /// Inserts a midpoint joint on every edge except those ending in a leaf
    /// attached directly to the root (the head), so 14 joints become 26.
    /// Returns the new tree and `(inserted, parent, child)` for each midpoint.
    pub fn interpolate_limbs(&self) -> (JointTree, Vec<(usize, usize, usize)>) {
        let mut names = self.names.clone();
        let mut parent = self.parent.clone();
        let mut inserted = Vec::new();
        for child in 0..self.len() {
            let Some(p) = self.parent[child] else { continue };
            if self.children[child].is_empty() && self.parent[p].is_none() {
                continue;
            }
            let mid = names.len();
            names.push(format!("{}_{}_mid", self.names[p], self.names[child]));
            parent.push(Some(p));
            parent[child] = Some(mid);
            inserted.push((mid, p, child));
        }
        let tree = JointTree::new(names, parent).expect("interpolation preserves tree shape");
        (tree, inserted)
    }

    /// Replaces the upward visiting order (the downward order is its reverse).
    /// Fails unless every child precedes its parent.
    pub fn with_upward_order(mut self, order: Vec<usize>) -> Result<Self> {
        let k = self.len();
        let mut pos = vec![usize::MAX; k];
        for (i, &j) in order.iter().enumerate() {
            if j >= k || pos[j] != usize::MAX {
                return Err(Error::Config(format!("order {order:?} is not a permutation")));
            }
            pos[j] = i;
        }
        if order.len() != k {
            return Err(Error::Config(format!("order {order:?} is not a permutation")));
        }
        for j in 0..k {
            if let Some(p) = self.parent[j] {
                if pos[j] > pos[p] {
                    return Err(Error::Config(format!(
                        "joint {j} must come before its parent {p} in an upward order"
                    )));
                }
            }
        }
        self.upward = order;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, joint: usize) -> &str {
        &self.names[joint]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn children(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    pub fn root(&self) -> usize {
        *self.upward.last().expect("tree is non-empty")
    }

    /// Left/right partner of a joint (itself for central joints).
    pub fn mirror(&self, joint: usize) -> usize {
        self.mirror[joint]
    }

    /// Non-root joints, each identifying the edge to its parent.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).filter_map(|c| self.parent[c].map(|p| (c, p)))
    }

    /// Visiting order for a direction: every sender precedes its receivers.
    pub fn order(&self, direction: Direction) -> Vec<usize> {
        match direction {
            Direction::Upward => self.upward.clone(),
            Direction::Downward => self.upward.iter().rev().copied().collect(),
        }
    }

    /// Joints that send messages to `joint` in the given direction.
    pub fn senders(&self, joint: usize, direction: Direction) -> Vec<usize> {
        match direction {
            Direction::Upward => self.children[joint].clone(),
            Direction::Downward => self.parent[joint].into_iter().collect(),
        }
    }
}
