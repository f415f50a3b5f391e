use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Per-class object counts for a subtile, tile or cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCounts(Vec<u32>);

impl ClassCounts {
    pub fn zeros(classes: usize) -> Self {
        ClassCounts(vec![0; classes])
    }

    pub fn from_vec(counts: Vec<u32>) -> Self {
        ClassCounts(counts)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, class: usize) -> u32 {
        self.0[class]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// L1 distance between two count vectors of equal length.
    pub fn l1_distance(&self, other: &ClassCounts) -> u64 {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| u64::from(a.abs_diff(b)))
            .sum()
    }

    /// Componentwise `self <= other`.
    pub fn dominated_by(&self, other: &ClassCounts) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| f64::from(c)).collect()
    }
}

impl AddAssign<&ClassCounts> for ClassCounts {
    fn add_assign(&mut self, rhs: &ClassCounts) {
        debug_assert_eq!(self.len(), rhs.len());
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += b;
        }
    }
}

impl Add<&ClassCounts> for &ClassCounts {
    type Output = ClassCounts;

    fn add(self, rhs: &ClassCounts) -> ClassCounts {
        let mut out = self.clone();
        out += rhs;
        out
    }
}
