use crate::env::CacheMatrix;
use crate::{Error, Result};

/// Per-satellite action set: every `C`-subset of `F` contents, enumerated in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    num_contents: usize,
    capacity: usize,
    subsets: Vec<Vec<usize>>,
}

impl ActionSpace {
    pub fn new(num_contents: usize, capacity: usize) -> Result<Self> {
        if capacity > num_contents {
            return Err(Error::Domain(format!(
                "capacity {capacity} exceeds {num_contents} contents"
            )));
        }
        let mut subsets = Vec::new();
        let mut cur = Vec::with_capacity(capacity);
        combinations(num_contents, capacity, 0, &mut cur, &mut subsets);
        Ok(Self {
            num_contents,
            capacity,
            subsets,
        })
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn num_contents(&self) -> usize {
        self.num_contents
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn decode(&self, index: usize) -> Result<&[usize]> {
        self.subsets
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Domain(format!("action {index} outside {} actions", self.len())))
    }

    /// Index of a sorted content subset.
    pub fn encode(&self, subset: &[usize]) -> Result<usize> {
        self.subsets
            .binary_search_by(|s| s.as_slice().cmp(subset))
            .map_err(|_| Error::Domain(format!("{subset:?} is not a {}-subset", self.capacity)))
    }

    /// Joint action (one index per satellite) as a cache matrix.
    pub fn to_cache_matrix(&self, actions: &[usize]) -> Result<CacheMatrix> {
        let mut m = CacheMatrix::new(actions.len(), self.num_contents, self.capacity);
        for (n, &a) in actions.iter().enumerate() {
            m.set_row(n, self.decode(a)?)?;
        }
        Ok(m)
    }

    pub fn from_cache_matrix(&self, m: &CacheMatrix) -> Result<Vec<usize>> {
        (0..m.num_sats())
            .map(|n| self.encode(&m.cached_contents(n)))
            .collect()
    }
}

fn combinations(f: usize, c: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == c {
        out.push(cur.clone());
        return;
    }
    for i in start..f {
        cur.push(i);
        combinations(f, c, i + 1, cur, out);
        cur.pop();
    }
}
